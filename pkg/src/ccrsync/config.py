"""Scenario configuration, array/grid geometry and derived link constants.

All quantities are SI (metres, seconds) internally.  The defaults reproduce
the reference 500 m scenario: an 8x8 retroreflector array probed by a 10x10
scan grid at 1550 nm with a 1 GHz pair source.
"""
from __future__ import annotations

import dataclasses
import math
import re
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError

SPEED_OF_LIGHT = 299_792_458.0

# unit suffix -> (dimension, scale to SI)
_UNITS: dict[str, tuple[str, float]] = {
    "km": ("length", 1e3),
    "m": ("length", 1.0),
    "cm": ("length", 1e-2),
    "mm": ("length", 1e-3),
    "um": ("length", 1e-6),
    "µm": ("length", 1e-6),
    "nm": ("length", 1e-9),
    "s": ("time", 1.0),
    "ms": ("time", 1e-3),
    "us": ("time", 1e-6),
    "µs": ("time", 1e-6),
    "ns": ("time", 1e-9),
    "ps": ("time", 1e-12),
    "m2": ("area", 1.0),
    "m^2": ("area", 1.0),
    "cm2": ("area", 1e-4),
    "cm^2": ("area", 1e-4),
    "mm2": ("area", 1e-6),
    "mm^2": ("area", 1e-6),
    "1/m": ("inv_length", 1.0),
    "1/km": ("inv_length", 1e-3),
    "m^-2/3": ("cn2", 1.0),
    "m^(-2/3)": ("cn2", 1.0),
    "m/s": ("speed", 1.0),
}

_NUMBER = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(\S*)\s*$")


def _f(default, dim: str = "none", check: str = "positive"):
    return field(default=default, metadata={"dim": dim, "check": check})


@dataclass(frozen=True)
class SystemConfig:
    """Every physical and protocol parameter of one scenario.

    Field names follow the usual link-budget notation, so a few are not
    snake_case (``L_tar``, ``A_ar``, ``N_arx`` ...).  ``h_La`` may be left
    unset, in which case it is derived from ``sigma_atm`` or falls back to
    the reference value 0.7; ``h_Lc`` defaults to ``0.8 * eta_spad``.
    """

    L_tar: float = _f(500.0, "length")
    wavelength: float = _f(1550e-9, "length")
    w_z: float = _f(0.5, "length")
    r_ap: float = _f(0.05, "length")
    A_ar: float = _f(3e-4, "area")
    N_arx: int = _f(8, check="count")
    N_ary: int = _f(8, check="count")
    d_ar: float = _f(0.04, "length")
    N_grx: int = _f(10, check="count")
    N_gry: int = _f(10, check="count")
    d_gr: float = _f(0.04, "length")
    sigma_p: float = _f(0.3, "length", "nonnegative")
    alpha: float = _f(3.0)
    beta: float = _f(2.0)
    h_La: Optional[float] = _f(None, check="unit_interval_open")
    sigma_atm: Optional[float] = _f(None, "inv_length", "nonnegative")
    h_Lc: Optional[float] = _f(None, check="unit_interval_open")
    eta_spad: float = _f(0.6, check="unit_interval_open")
    sigma_spad: float = _f(50e-12, "time", "nonnegative")
    t_qb: float = _f(1e-9, "time")
    t_aq: float = _f(100e-6, "time")
    t_j: float = _f(1e-6, "time")
    mu_t: float = _f(0.5)
    mu_bg: float = _f(1e-4, check="nonnegative")
    P_pol: float = _f(0.1, check="probability")
    N_s_min: int = _f(10, check="count")
    m: float = _f(3.0, check="nonnegative")
    C_n2: Optional[float] = _f(None, "cn2")
    speed_of_light: float = _f(SPEED_OF_LIGHT, "speed")
    pos_uncertainty: float = _f(1.0, "length")
    n_t_min: Optional[int] = _f(None, check="count")
    t0: float = _f(0.0, "time", "finite")
    fading: bool = _f(True, check="bool")
    fading_static_across_grid: bool = _f(False, check="bool")

    def __post_init__(self):
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            checked = _check_value(f.name, f.metadata["check"], value)
            if checked is not value:
                object.__setattr__(self, f.name, checked)
        if self.h_La is not None and self.sigma_atm is not None:
            raise ConfigError("set either h_La or sigma_atm, not both")
        if not self.d_ar > math.sqrt(self.A_ar):
            raise ConfigError(
                f"d_ar={self.d_ar} m must exceed sqrt(A_ar)={math.sqrt(self.A_ar):.4g} m "
                "(array elements would overlap)"
            )
        if self.C_n2 is not None:
            r0 = coherence_length(self.wavelength, self.C_n2, self.L_tar)
            if not self.d_ar > r0:
                raise ConfigError(
                    f"d_ar={self.d_ar} m must exceed the coherence length r0={r0:.4g} m "
                    "for independent fading across elements"
                )

    @property
    def N_ar(self) -> int:
        return self.N_arx * self.N_ary

    @property
    def N_gr(self) -> int:
        return self.N_grx * self.N_gry

    @property
    def R_qb(self) -> float:
        return 1.0 / self.t_qb

    def replace(self, **changes) -> "SystemConfig":
        return dataclasses.replace(self, **changes)


def _check_value(name: str, check: str, value):
    if value is None:
        return value
    if check == "bool":
        if not isinstance(value, (bool, np.bool_)):
            raise ConfigError(f"{name} must be a boolean, got {value!r}")
        return bool(value)
    if check == "count":
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < 1:
            raise ConfigError(f"{name} must be an integer >= 1, got {value!r}")
        return int(value)
    try:
        x = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a number, got {value!r}") from None
    if not math.isfinite(x):
        raise ConfigError(f"{name} must be finite, got {value!r}")
    if check == "positive" and not x > 0:
        raise ConfigError(f"{name} must be > 0, got {value!r}")
    if check == "nonnegative" and not x >= 0:
        raise ConfigError(f"{name} must be >= 0, got {value!r}")
    if check == "probability" and not 0 <= x <= 1:
        raise ConfigError(f"{name} must lie in [0, 1], got {value!r}")
    if check == "unit_interval_open" and not 0 < x <= 1:
        raise ConfigError(f"{name} must lie in (0, 1], got {value!r}")
    return value


@dataclass(frozen=True)
class DerivedConstants:
    N_ar: int
    N_gr: int
    L_seq: int
    L_sv: int
    lambda_slot: float
    lambda_grid: float
    lambda_total: float
    h_La: float
    h_Lc: float
    P_ap: float
    c0: float
    c_ab: float
    theta_dev: float
    w_z2: float
    r0: Optional[float]
    t_ch_true: float
    delta_N_max: int
    beam_ratio: float


@lru_cache(maxsize=256)
def derive_constants(cfg: SystemConfig) -> DerivedConstants:
    """Compute every deterministic constant of the link from ``cfg``.

    Raises ConfigError when the acquisition timing is inconsistent
    (``t_aq`` differs from ``N_gr * t_j`` by more than one slot) or the
    sequence lengths are not whole numbers of slots.
    """
    N_ar, N_gr = cfg.N_ar, cfg.N_gr
    if abs(cfg.t_aq - N_gr * cfg.t_j) > cfg.t_qb:
        raise ConfigError(
            f"t_aq={cfg.t_aq:g} s does not equal N_gr*t_j={N_gr * cfg.t_j:g} s"
        )
    slots = cfg.t_aq / cfg.t_qb
    L_seq = int(round(slots))
    if L_seq < 1 or abs(slots - L_seq) > 1e-6 * max(1.0, slots):
        raise ConfigError(f"t_aq/t_qb={slots:g} is not a positive integer")
    if L_seq % N_gr:
        raise ConfigError(f"L_seq={L_seq} is not divisible by N_gr={N_gr}")
    L_sv = L_seq // N_gr

    lambda_slot = cfg.mu_t * math.exp(-cfg.mu_t)
    lambda_grid = L_sv * lambda_slot
    lambda_total = N_gr * lambda_grid

    if cfg.h_La is not None:
        h_La = cfg.h_La
    elif cfg.sigma_atm is not None:
        h_La = math.exp(-cfg.sigma_atm * 2.0 * cfg.L_tar)
    else:
        h_La = 0.7
    h_Lc = cfg.h_Lc if cfg.h_Lc is not None else 0.8 * cfg.eta_spad

    P_ap = aperture_capture_probability(cfg.A_ar, cfg.r_ap, cfg.wavelength, cfg.L_tar)
    c0 = 2.0 * cfg.A_ar / (math.pi * cfg.w_z**2) * h_La * h_Lc * P_ap
    c_ab = gamma_gamma_variance(cfg.alpha, cfg.beta) if cfg.fading else 0.0
    theta_dev = cfg.wavelength / math.sqrt(cfg.A_ar)
    r0 = coherence_length(cfg.wavelength, cfg.C_n2, cfg.L_tar) if cfg.C_n2 else None

    return DerivedConstants(
        N_ar=N_ar,
        N_gr=N_gr,
        L_seq=L_seq,
        L_sv=L_sv,
        lambda_slot=lambda_slot,
        lambda_grid=lambda_grid,
        lambda_total=lambda_total,
        h_La=h_La,
        h_Lc=h_Lc,
        P_ap=P_ap,
        c0=c0,
        c_ab=c_ab,
        theta_dev=theta_dev,
        w_z2=cfg.L_tar * theta_dev,
        r0=r0,
        t_ch_true=2.0 * cfg.L_tar / cfg.speed_of_light,
        delta_N_max=math.ceil(2.0 * cfg.pos_uncertainty / cfg.speed_of_light / cfg.t_qb),
        beam_ratio=math.sqrt(cfg.A_ar) / cfg.w_z,
    )


def gamma_gamma_variance(alpha: float, beta: float) -> float:
    return 1.0 / alpha + 1.0 / beta + 1.0 / (alpha * beta)


def aperture_capture_probability(A_ar: float, r_ap: float, wavelength: float, L_tar: float) -> float:
    """Fraction of the diffracted return beam that lands inside the receiver aperture."""
    return -math.expm1(-2.0 * A_ar * r_ap**2 / (wavelength**2 * L_tar**2))


def coherence_length(wavelength: float, C_n2: float, L_tar: float) -> float:
    """Turbulence coherence length r0 = (0.423 k^2 Cn2 L)^(-3/5)."""
    if not (wavelength > 0 and C_n2 > 0 and L_tar > 0):
        raise ValueError("wavelength, C_n2 and L_tar must be positive")
    k = 2.0 * math.pi / wavelength
    return (0.423 * k**2 * C_n2 * L_tar) ** (-3.0 / 5.0)


@dataclass(frozen=True)
class CcrArrayGeometry:
    positions: np.ndarray  # (N_ar, 2), element i = iy * N_arx + ix

    def __len__(self) -> int:
        return len(self.positions)


@dataclass(frozen=True)
class ScanGrid:
    offsets: np.ndarray  # (N_gr, 2), cell j = jy * N_grx + jx
    N_grx: int
    N_gry: int

    def index(self, jx: int, jy: int) -> int:
        """Flat cell index for zero-based column ``jx`` and row ``jy``."""
        if not (0 <= jx < self.N_grx and 0 <= jy < self.N_gry):
            raise IndexError(f"cell ({jx}, {jy}) outside {self.N_grx}x{self.N_gry} grid")
        return jy * self.N_grx + jx

    def __len__(self) -> int:
        return len(self.offsets)


def _centred(n: int, pitch: float) -> np.ndarray:
    # mirror one half so that opposite coordinates are exact negatives
    half = (np.arange(n // 2) + (0.5 if n % 2 == 0 else 1.0)) * pitch
    middle = [0.0] if n % 2 else []
    return np.concatenate([-half[::-1], middle, half])


def _lattice(nx: int, ny: int, pitch: float) -> np.ndarray:
    xs = _centred(nx, pitch)
    ys = _centred(ny, pitch)
    gx, gy = np.meshgrid(xs, ys)  # rows are y, x varies fastest
    return np.column_stack([gx.ravel(), gy.ravel()])


def ccr_positions(cfg: SystemConfig) -> CcrArrayGeometry:
    return CcrArrayGeometry(_lattice(cfg.N_arx, cfg.N_ary, cfg.d_ar))


def grid_offsets(cfg: SystemConfig) -> ScanGrid:
    """Scan-cell centres relative to the grid centre.

    Cell (jx, jy) (one-based in the usual notation) sits at
    ((jx - (N_grx+1)/2) d_gr, (jy - (N_gry+1)/2) d_gr); here indices are
    zero-based, which gives the same lattice.
    """
    return ScanGrid(_lattice(cfg.N_grx, cfg.N_gry, cfg.d_gr), cfg.N_grx, cfg.N_gry)


# --- key = value configuration files -------------------------------------

_ALIASES = {"lambda": "wavelength"}


def _field_table() -> dict[str, dataclasses.Field]:
    return {f.name: f for f in dataclasses.fields(SystemConfig)}


def _parse_value(name: str, f: dataclasses.Field, raw: str, line: int):
    dim, check = f.metadata["dim"], f.metadata["check"]
    text = raw.strip()
    if check == "bool":
        low = text.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ConfigError(f"{name}: expected true/false, got {raw!r}", line)
    if text.lower() in ("none", ""):
        if f.default is not None:
            raise ConfigError(f"{name}: a value is required", line)
        return None
    match = _NUMBER.match(text)
    if not match:
        raise ConfigError(f"{name}: malformed value {raw!r}", line)
    number, unit = match.groups()
    scale = 1.0
    if unit:
        if unit not in _UNITS:
            raise ConfigError(f"{name}: unknown unit {unit!r}", line)
        unit_dim, scale = _UNITS[unit]
        if unit_dim != dim:
            raise ConfigError(f"{name}: unit {unit!r} is a {unit_dim}, expected {dim}", line)
    if check == "count":
        if unit or not re.fullmatch(r"[-+]?\d+", number):
            raise ConfigError(f"{name}: expected an integer, got {raw!r}", line)
        value = int(number)
    else:
        value = float(number) * scale
    try:
        return _check_value(name, check, value)
    except ConfigError as exc:
        raise ConfigError(str(exc), line) from None


def parse_value(name: str, raw: str):
    """Parse a single ``raw`` value (with optional unit suffix) for field ``name``."""
    fields = _field_table()
    key = _ALIASES.get(name, name)
    if key not in fields:
        raise ConfigError(f"unknown key {name!r}")
    return _parse_value(key, fields[key], raw, None)


def parse_config(text: str, base: SystemConfig | None = None) -> SystemConfig:
    """Parse ``key = value`` text into a validated SystemConfig.

    Absent keys keep the values of ``base`` (reference defaults when None).
    Errors carry the offending line number where one exists.
    """
    fields = _field_table()
    values: dict[str, object] = {}
    seen: dict[str, int] = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw_line.strip()!r}", lineno)
        key, raw = (part.strip() for part in line.split("=", 1))
        key = _ALIASES.get(key, key)
        if key not in fields:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in seen:
            raise ConfigError(f"duplicate key {key!r} (first on line {seen[key]})", lineno)
        seen[key] = lineno
        values[key] = _parse_value(key, fields[key], raw, lineno)
    base = base or SystemConfig()
    try:
        cfg = dataclasses.replace(base, **values)
        derive_constants(cfg)
    except ConfigError as exc:
        if exc.line is None and seen:
            # cross-field errors: point at the last line that set a key
            raise ConfigError(str(exc), max(seen.values())) from None
        raise
    return cfg


def load_config(path: str | Path | None) -> SystemConfig:
    if path is None:
        return SystemConfig()
    return parse_config(Path(path).read_text(encoding="utf-8"))


def format_config(cfg: SystemConfig) -> str:
    """Render ``cfg`` as ``key = value`` lines that parse back to ``cfg``."""
    lines = []
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if value is None:
            continue
        if isinstance(value, bool):
            text = "true" if value else "false"
        else:
            text = repr(value)
        lines.append(f"{f.name} = {text}")
    return "\n".join(lines) + "\n"
