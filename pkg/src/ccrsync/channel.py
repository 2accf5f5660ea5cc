"""Single-photon reception model for the retroreflector array.

A photon aimed at scan cell j reaches the receiver through element i with
probability ``c0 * h[i, j] * w[i, j]``, where ``w`` is the Gaussian-beam
intensity factor at the element, ``h`` the turbulence fading and ``c0``
collects beam density, aperture capture and the fixed losses.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .config import SystemConfig, ccr_positions, derive_constants, grid_offsets
from .errors import ModelValidityError, NumericalError
from .variates import _as_generator, gg_sample, sample_r_dev

MAX_BEAM_RATIO = 0.5


def check_beam_validity(cfg: SystemConfig) -> None:
    """Raise ModelValidityError when elements are too large for the point approximation."""
    ratio = math.sqrt(cfg.A_ar) / cfg.w_z
    if ratio > MAX_BEAM_RATIO:
        raise ModelValidityError(
            f"sqrt(A_ar)/w_z = {ratio:.3g} exceeds {MAX_BEAM_RATIO}; the beam is too "
            "narrow to treat each element as a point"
        )


def spatial_weights(cfg: SystemConfig, r_dev=(0.0, 0.0)) -> np.ndarray:
    """Matrix ``w[i, j] = exp(-2 |p_ar,i - p'_j - r_dev|^2 / w_z^2)``, shape (N_ar, N_gr)."""
    p = ccr_positions(cfg).positions
    g = grid_offsets(cfg).offsets + np.asarray(r_dev, dtype=float)
    d2 = ((p[:, None, :] - g[None, :, :]) ** 2).sum(axis=-1)
    return np.exp(-2.0 * d2 / cfg.w_z**2)


def spatial_weight(i: int, j: int, r_dev, cfg: SystemConfig) -> float:
    """Weight coupling element ``i`` to cell ``j`` (both zero-based)."""
    p = ccr_positions(cfg).positions[i]
    g = grid_offsets(cfg).offsets[j]
    d = p - g - np.asarray(r_dev, dtype=float)
    return math.exp(-2.0 * float(d @ d) / cfg.w_z**2)


def _axis_factors(positions_1d, cells_1d, shifts, w_z, scale):
    d = positions_1d[None, :, None] - cells_1d[None, None, :] - shifts[:, None, None]
    return np.exp(-scale * d**2 / w_z**2).sum(axis=(1, 2))


def aggregate_weight_sums(cfg: SystemConfig, offsets) -> tuple[np.ndarray, np.ndarray]:
    """Sum of w and of w^2 over all (element, cell) pairs for each offset.

    ``offsets`` has shape (K, 2).  The Gaussian factorises over x and y and
    both lattices are rectangular, so each double sum is a product of two
    one-dimensional sums.
    """
    offsets = np.atleast_2d(np.asarray(offsets, dtype=float))
    ax = (np.arange(cfg.N_arx) - (cfg.N_arx - 1) / 2.0) * cfg.d_ar
    ay = (np.arange(cfg.N_ary) - (cfg.N_ary - 1) / 2.0) * cfg.d_ar
    gx = (np.arange(cfg.N_grx) - (cfg.N_grx - 1) / 2.0) * cfg.d_gr
    gy = (np.arange(cfg.N_gry) - (cfg.N_gry - 1) / 2.0) * cfg.d_gr
    s1 = _axis_factors(ax, gx, offsets[:, 0], cfg.w_z, 2.0) * _axis_factors(ay, gy, offsets[:, 1], cfg.w_z, 2.0)
    s2 = _axis_factors(ax, gx, offsets[:, 0], cfg.w_z, 4.0) * _axis_factors(ay, gy, offsets[:, 1], cfg.w_z, 4.0)
    return s1, s2


def p_hap(i: int, j: int, cfg: SystemConfig, r_dev=(0.0, 0.0)) -> float:
    """Closed-form probability that a photon hits element ``i`` and returns into the aperture."""
    check_beam_validity(cfg)
    dc = derive_constants(cfg)
    value = 2.0 * cfg.A_ar / (math.pi * cfg.w_z**2) * spatial_weight(i, j, r_dev, cfg) * dc.P_ap
    if value >= 1.0:
        raise ModelValidityError(f"hit-and-capture probability {value:.3g} >= 1")
    return value


def _gauss_square(centre, half_side, beam_centre, w_z, order):
    nodes, weights = np.polynomial.legendre.leggauss(order)
    n_panels = max(1, math.ceil(2.0 * half_side / (0.5 * w_z)))
    edges = np.linspace(-half_side, half_side, n_panels + 1)
    lo, hi = edges[:-1, None], edges[1:, None]
    u = (0.5 * (hi - lo) * nodes + 0.5 * (hi + lo)).ravel()
    wu = (0.5 * (hi - lo) * weights).ravel()
    dx = centre[0] + u - beam_centre[0]
    dy = centre[1] + u - beam_centre[1]
    f = np.exp(-2.0 * (dx[:, None] ** 2 + dy[None, :] ** 2) / w_z**2)
    return 2.0 / (math.pi * w_z**2) * float(wu @ f @ wu)


def p_hit_oracle(i: int, j: int, r_dev, cfg: SystemConfig, quad_order: int = 20,
                 rtol: float = 1e-8) -> float:
    """Beam power on element ``i`` (a square of area A_ar) by tensor Gauss-Legendre.

    Panels are at most ``w_z/2`` wide.  The result is accepted only if
    doubling ``quad_order`` changes it by less than ``rtol``; otherwise a
    NumericalError is raised.
    """
    if quad_order < 2:
        raise ValueError("quad_order must be >= 2")
    centre = ccr_positions(cfg).positions[i]
    beam = grid_offsets(cfg).offsets[j] + np.asarray(r_dev, dtype=float)
    half = 0.5 * math.sqrt(cfg.A_ar)
    coarse = _gauss_square(centre, half, beam, cfg.w_z, quad_order)
    fine = _gauss_square(centre, half, beam, cfg.w_z, 2 * quad_order)
    if abs(fine - coarse) > rtol * abs(fine) + 1e-300:
        raise NumericalError(
            f"quadrature did not converge at order {quad_order}: {coarse!r} vs {fine!r}"
        )
    return fine


@dataclass(frozen=True)
class ChannelRealization:
    r_dev: np.ndarray  # (2,)
    fading: np.ndarray  # (N_ar, N_gr)

    def __post_init__(self):
        r = np.asarray(self.r_dev, dtype=float)
        if r.shape != (2,):
            raise ValueError("r_dev must have shape (2,)")
        h = np.asarray(self.fading, dtype=float)
        if h.ndim != 2 or not np.all(h > 0):
            raise ValueError("fading must be a 2-D array of positive coefficients")
        object.__setattr__(self, "r_dev", r)
        object.__setattr__(self, "fading", h)

    def check_shape(self, cfg: SystemConfig) -> None:
        if self.fading.shape != (cfg.N_ar, cfg.N_gr):
            raise ValueError(
                f"fading shape {self.fading.shape} does not match ({cfg.N_ar}, {cfg.N_gr})"
            )


def draw_channel(cfg: SystemConfig, rng) -> ChannelRealization:
    """Draw the pointing offset and the per-(element, cell) fading matrix."""
    g = _as_generator(rng)
    r_dev = sample_r_dev(g, cfg.sigma_p)
    shape = (cfg.N_ar, cfg.N_gr)
    if not cfg.fading:
        fading = np.ones(shape)
    elif cfg.fading_static_across_grid:
        fading = np.repeat(gg_sample(g, cfg.alpha, cfg.beta, (cfg.N_ar, 1)), cfg.N_gr, axis=1)
    else:
        fading = gg_sample(g, cfg.alpha, cfg.beta, shape)
    return ChannelRealization(r_dev, fading)


def p_rec(realization: ChannelRealization, cfg: SystemConfig) -> np.ndarray:
    """Reception probability for every scan cell, shape (N_gr,)."""
    check_beam_validity(cfg)
    realization.check_shape(cfg)
    dc = derive_constants(cfg)
    w = spatial_weights(cfg, realization.r_dev)
    prob = dc.c0 * (realization.fading * w).sum(axis=0)
    if np.any(prob >= 1.0):
        raise ModelValidityError(f"reception probability {prob.max():.3g} >= 1")
    return prob


def p_rec_slot(j: int, realization: ChannelRealization, cfg: SystemConfig) -> float:
    return float(p_rec(realization, cfg)[j])


def mu_ch(realization: ChannelRealization, cfg: SystemConfig) -> np.ndarray:
    """Mean detected signal photons per slot for every cell."""
    return cfg.eta_spad * p_rec(realization, cfg)


def mu_ch_slot(j: int, realization: ChannelRealization, cfg: SystemConfig) -> float:
    return float(mu_ch(realization, cfg)[j])


def p_rec_conditional_moments(j: int, r_dev, cfg: SystemConfig) -> tuple[float, float]:
    """Mean and variance of P_rec,j given the offset (fading averaged out)."""
    if cfg.N_ar < 8:
        warnings.warn(
            f"N_ar={cfg.N_ar} is small; the Gaussian approximation may be poor",
            stacklevel=2,
        )
    dc = derive_constants(cfg)
    w = spatial_weights(cfg, r_dev)[:, j]
    return dc.c0 * float(w.sum()), dc.c0**2 * dc.c_ab * float(w @ w)


def _gauss(x, mean, var):
    if var <= 0:
        raise ValueError("degenerate distribution (zero variance) has no density")
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * (x - mean) ** 2 / var) / math.sqrt(2.0 * math.pi * var)


def p_rec_conditional_pdf(p, j: int, r_dev, cfg: SystemConfig):
    """Gaussian density of P_rec,j given ``r_dev``."""
    mean, var = p_rec_conditional_moments(j, r_dev, cfg)
    return _gauss(p, mean, var)


def mu_ch_conditional_pdf(mu, j: int, r_dev, cfg: SystemConfig):
    """Density of mu_ch,j = eta_spad * P_rec,j given ``r_dev``."""
    eta = cfg.eta_spad
    return p_rec_conditional_pdf(np.asarray(mu, dtype=float) / eta, j, r_dev, cfg) / eta
