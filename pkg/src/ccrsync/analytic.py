"""Semi-analytic link performance: count distributions, timing variance, outage.

The pointing offset is reduced to a one-axis radial offset ``(r, 0)`` with
``r ~ Rayleigh(sigma_p)``.  Given ``r``, the total signal rate over the scan
is Gaussian; the signal count is Poisson mixed over that rate, evaluated by
nested Gauss-Legendre quadrature (panels in ``r``, fixed nodes in the
standardised rate).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy import special, stats

from .channel import aggregate_weight_sums, check_beam_validity
from .config import SystemConfig, derive_constants
from .errors import NumericalError
from .stats import DistributionTable
from .variates import poisson_logpmf_grid, poisson_pmf

_MAX_PANELS = 20000


@dataclass(frozen=True)
class QuadratureSpec:
    """Ranges and node counts for the nested quadrature.

    Parameters
    ----------
    r_max_sigmas : upper limit of the radial integral in units of sigma_p.
    mu_sigmas : truncation of each conditional Gaussian, in its own std units.
    nodes_r : Gauss-Legendre nodes per radial panel.
    nodes_mu : Gauss-Legendre nodes across the conditional Gaussian.
    n_max_auto : truncate count supports where the tail mass drops below ``tail_tol``.
    panel_tol : radial panels are split until the mean count changes by at
        most ``panel_tol * sqrt(max(mean, 1))`` across each panel.
    n_sig_max, n_bg_max : explicit support caps, used when ``n_max_auto`` is off.
    """

    r_max_sigmas: float = 6.0
    mu_sigmas: float = 8.0
    nodes_r: int = 16
    nodes_mu: int = 24
    n_max_auto: bool = True
    tail_tol: float = 1e-6
    panel_tol: float = 1.0
    n_sig_max: int | None = None
    n_bg_max: int | None = None

    def __post_init__(self):
        if self.nodes_r < 16 or self.nodes_mu < 16:
            raise ValueError("quadrature needs at least 16 nodes per dimension")
        if self.r_max_sigmas < 4 or self.mu_sigmas < 4:
            raise ValueError("truncation must be at least 4 standard deviations")
        if not 0 < self.tail_tol < 1e-2:
            raise ValueError("tail_tol must lie in (0, 0.01)")
        if not self.panel_tol > 0:
            raise ValueError("panel_tol must be positive")
        if not self.n_max_auto and (self.n_sig_max is None or self.n_bg_max is None):
            raise ValueError("n_sig_max and n_bg_max are required when n_max_auto is off")

    def refined(self) -> "QuadratureSpec":
        """The same spec with twice the nodes in both dimensions."""
        return replace(self, nodes_r=2 * self.nodes_r, nodes_mu=2 * self.nodes_mu)


DEFAULT_QUAD = QuadratureSpec()


# --- conditional rate ------------------------------------------------------

def _rate_moments(cfg: SystemConfig, r) -> tuple[np.ndarray, np.ndarray]:
    """Mean and std of the aggregated signal rate for radial offsets ``r``."""
    dc = derive_constants(cfg)
    r = np.atleast_1d(np.asarray(r, dtype=float))
    offsets = np.column_stack([r, np.zeros_like(r)])
    s1, s2 = aggregate_weight_sums(cfg, offsets)
    scale = cfg.eta_spad * dc.lambda_grid * dc.c0
    return scale * s1, scale * np.sqrt(dc.c_ab * s2)


def rate_moments(cfg: SystemConfig, r: float) -> tuple[float, float]:
    """(mean, variance) of the aggregated signal rate at radial offset ``r``."""
    m, s = _rate_moments(cfg, [r])
    return float(m[0]), float(s[0]) ** 2


def mu_ch_total_conditional_pdf(mu, r: float, cfg: SystemConfig):
    """Gaussian density of the scan-aggregated signal rate at offset ``(r, 0)``."""
    if r < 0:
        raise ValueError("radial offset must be non-negative")
    m, s = _rate_moments(cfg, [r])
    m, s = float(m[0]), float(s[0])
    if s <= 0:
        raise ValueError("rate is deterministic (no fading); it has no density")
    return stats.norm.pdf(np.asarray(mu, dtype=float), m, s)


# --- radial quadrature -----------------------------------------------------

def _rayleigh_mass(a, b, sigma):
    return np.exp(-0.5 * (a / sigma) ** 2) - np.exp(-0.5 * (b / sigma) ** 2)


def _radial_panels(cfg: SystemConfig, quad: QuadratureSpec, resolve: str) -> np.ndarray:
    sigma = cfg.sigma_p
    r_max = quad.r_max_sigmas * sigma
    edges = np.linspace(0.0, r_max, 9)
    for _ in range(60):
        a, b = edges[:-1], edges[1:]
        m, s = _rate_moments(cfg, edges)
        dm = np.abs(np.diff(m))
        lo = np.minimum(m[:-1], m[1:])
        if resolve == "count":
            allowed = quad.panel_tol * np.sqrt(np.maximum(lo, 1.0))
        else:
            # resolve the conditional densities themselves: node spacing below their width
            allowed = 0.5 * quad.nodes_r * np.minimum(s[:-1], s[1:])
        split = (dm > allowed) & (_rayleigh_mass(a, b, sigma) > 1e-12)
        if not split.any():
            return edges
        mids = 0.5 * (a[split] + b[split])
        edges = np.sort(np.concatenate([edges, mids]))
        if len(edges) > _MAX_PANELS:
            break
    raise NumericalError("radial quadrature panels did not resolve the signal rate")


@lru_cache(maxsize=128)
def _radial_nodes(cfg: SystemConfig, quad: QuadratureSpec, resolve: str = "count"):
    """Radial nodes and normalised Rayleigh weights."""
    if cfg.sigma_p == 0:
        return np.zeros(1), np.ones(1)
    edges = _radial_panels(cfg, quad, resolve)
    x, w = np.polynomial.legendre.leggauss(quad.nodes_r)
    a, b = edges[:-1, None], edges[1:, None]
    r = (0.5 * (b - a) * x + 0.5 * (b + a)).ravel()
    wr = (0.5 * (b - a) * w).ravel()
    sigma = cfg.sigma_p
    weights = wr * r / sigma**2 * np.exp(-0.5 * (r / sigma) ** 2)
    return r, weights / weights.sum()


def _mixture_nodes(cfg: SystemConfig, quad: QuadratureSpec):
    """Flattened (rate, weight) nodes of the mixing distribution; negative rates clip to 0."""
    check_beam_validity(cfg)
    r, wr = _radial_nodes(cfg, quad)
    m, s = _rate_moments(cfg, r)
    if not np.any(s > 0):
        return np.maximum(m, 0.0), wr
    z, wz = np.polynomial.legendre.leggauss(quad.nodes_mu)
    z = z * quad.mu_sigmas
    wz = wz * np.exp(-0.5 * z**2)
    wz = wz / wz.sum()
    mu = m[:, None] + s[:, None] * z[None, :]
    return np.maximum(mu, 0.0).ravel(), (wr[:, None] * wz[None, :]).ravel()


def _mu_mixture(cfg, quad):
    if not cfg.fading:
        raise ValueError("rate is deterministic given the offset (no fading); it has no density")
    r, wr = _radial_nodes(cfg, quad, "density")
    m, s = _rate_moments(cfg, r)
    if not np.all(s > 0):
        raise ValueError("rate is deterministic (no fading); it has no density")
    kept = special.ndtr(m / s)
    return m, s, wr, float(wr @ kept)


def mu_ch_pdf(mu, cfg: SystemConfig, quad: QuadratureSpec = DEFAULT_QUAD):
    """Marginal density of the aggregated signal rate (truncated at 0, renormalised)."""
    check_beam_validity(cfg)
    m, s, wr, norm = _mu_mixture(cfg, quad)
    mu = np.asarray(mu, dtype=float)
    flat = np.atleast_1d(mu).ravel()
    out = np.empty(flat.shape)
    for k in range(0, flat.size, 256):
        chunk = flat[k:k + 256, None]
        dens = np.exp(-0.5 * ((chunk - m) / s) ** 2) / (s * math.sqrt(2 * math.pi))
        out[k:k + 256] = dens @ wr
    out = np.where(flat < 0, 0.0, out / norm)
    return out.reshape(mu.shape) if mu.ndim else float(out[0])


def mu_ch_cdf(mu, cfg: SystemConfig, quad: QuadratureSpec = DEFAULT_QUAD):
    """CDF matching :func:`mu_ch_pdf`."""
    check_beam_validity(cfg)
    m, s, wr, norm = _mu_mixture(cfg, quad)
    mu = np.asarray(mu, dtype=float)
    flat = np.atleast_1d(mu).ravel()
    out = np.empty(flat.shape)
    base = special.ndtr(-m / s)
    for k in range(0, flat.size, 256):
        chunk = flat[k:k + 256, None]
        out[k:k + 256] = (special.ndtr((chunk - m) / s) - base) @ wr
    out = np.clip(np.where(flat < 0, 0.0, out / norm), 0.0, 1.0)
    return out.reshape(mu.shape) if mu.ndim else float(out[0])


def mu_ch_distribution(cfg: SystemConfig, quad: QuadratureSpec = DEFAULT_QUAD,
                       n_points: int = 401) -> DistributionTable:
    """Rate density tabulated on a uniform grid from 0.

    Each entry is the probability of its grid cell divided by the cell width
    (half cells at both ends), so the trapezoid rule recovers the CDF exactly
    even where the density has an integrable spike at 0.
    """
    check_beam_validity(cfg)
    r, _ = _radial_nodes(cfg, quad, "density")
    m, s = _rate_moments(cfg, r)
    top = float(np.max(m + quad.mu_sigmas * s))
    grid = np.linspace(0.0, top, n_points)
    step = grid[1] - grid[0]
    cuts = np.concatenate([[0.0], grid[:-1] + 0.5 * step, [top]])
    mass = np.diff(mu_ch_cdf(cuts, cfg, quad))
    width = np.full(n_points, step)
    width[0] = width[-1] = 0.5 * step
    return DistributionTable("pdf", grid, np.maximum(mass, 0.0) / width)


# --- count distributions ---------------------------------------------------

def _truncate_tail(values: np.ndarray, tol: float) -> int:
    """Smallest index n with P(N > n) < tol."""
    tail = np.concatenate([np.cumsum(values[::-1])[::-1][1:], [0.0]])
    return int(np.argmax(tail < tol))


@lru_cache(maxsize=128)
def nsig_distribution(cfg: SystemConfig, quad: QuadratureSpec = DEFAULT_QUAD) -> DistributionTable:
    """PMF of the signal count over one acquisition."""
    mu, weights = _mixture_nodes(cfg, quad)
    mu_top = float(mu.max())
    n_hi = int(math.ceil(mu_top + 12.0 * math.sqrt(mu_top) + 30))
    if not quad.n_max_auto:
        n_hi = max(n_hi, quad.n_sig_max)
    n = np.arange(n_hi + 1, dtype=float)[:, None]
    pmf = np.zeros(n_hi + 1)
    for k in range(0, mu.size, 2048):
        pmf += np.exp(poisson_logpmf_grid(n, mu[None, k:k + 2048])) @ weights[k:k + 2048]
    total = pmf.sum()
    if abs(total - 1.0) > 1e-3:
        raise NumericalError(f"signal-count pmf sums to {total:.6g}")
    n_max = _truncate_tail(pmf, quad.tail_tol) if quad.n_max_auto else quad.n_sig_max
    return DistributionTable("pmf", np.arange(n_max + 1), pmf[: n_max + 1])


def p_nsig(n, cfg: SystemConfig, quad: QuadratureSpec = DEFAULT_QUAD):
    """P(N_sig = n); zero beyond the truncated support."""
    if np.any(np.asarray(n) < 0):
        raise ValueError("counts must be non-negative")
    out = nsig_distribution(cfg, quad).pmf_at(n)
    return out if out.ndim else float(out)


def expected_nbg(cfg: SystemConfig) -> float:
    dc = derive_constants(cfg)
    return dc.lambda_total * cfg.mu_bg * math.exp(-cfg.mu_bg)


def p_nbg(n, cfg: SystemConfig):
    """P(N_bg = n): Poisson with mean ``lambda_total * mu_bg * exp(-mu_bg)``."""
    return poisson_pmf(n, expected_nbg(cfg))


def nbg_distribution(cfg: SystemConfig, quad: QuadratureSpec = DEFAULT_QUAD) -> DistributionTable:
    mean = expected_nbg(cfg)
    if mean == 0:
        return DistributionTable("pmf", np.zeros(1, dtype=int), np.ones(1))
    if quad.n_max_auto:
        n_hi = int(math.ceil(mean + 12.0 * math.sqrt(mean) + 30))
        pmf = poisson_pmf(np.arange(n_hi + 1), mean)
        n_max = _truncate_tail(pmf, quad.tail_tol)
    else:
        n_max = quad.n_bg_max
        pmf = poisson_pmf(np.arange(n_max + 1), mean)
    return DistributionTable("pmf", np.arange(n_max + 1), pmf[: n_max + 1])


def n_t_min(cfg: SystemConfig) -> int:
    """Detection threshold: ``max(N_s_min, ceil(m * E[N_bg]))`` unless set explicitly."""
    if cfg.n_t_min is not None:
        return int(cfg.n_t_min)
    # the small slack keeps exact products such as 3 * 3.0 from rounding up
    return max(int(cfg.N_s_min), int(math.ceil(cfg.m * expected_nbg(cfg) - 1e-9)))


# --- timing error and outage -----------------------------------------------

def conditional_sync_variance(n_sig, n_bg, sigma_spad: float, t_qb: float):
    """Variance of the averaged delay estimate given the two counts."""
    n_sig = np.asarray(n_sig, dtype=float)
    n_bg = np.asarray(n_bg, dtype=float)
    n_tot = n_sig + n_bg
    if np.any(n_tot <= 0):
        raise ValueError("at least one detection is required")
    s2 = sigma_spad**2
    return (2.0 * n_sig * s2 + n_bg * (t_qb**2 / 12.0 + s2)) / n_tot**2


@dataclass(frozen=True)
class SyncErrorResult:
    """Timing-error variance, conditioned on reaching the detection threshold.

    ``variance`` is the average of the conditional variance over count pairs
    with ``N_sig + N_bg >= n_t_min``, normalised by the retained mass.
    ``variance_literal`` is the unnormalised sum over ``N_sig >= n_t_min``.
    """

    variance: float
    retained_mass: float
    variance_literal: float
    n_t_min: int
    low_confidence: bool

    @property
    def std(self) -> float:
        return math.sqrt(self.variance) if math.isfinite(self.variance) else math.nan

    @property
    def std_literal(self) -> float:
        return math.sqrt(self.variance_literal)


def sync_error_from_tables(nsig: DistributionTable, nbg: DistributionTable, threshold: int,
                           sigma_spad: float, t_qb: float) -> SyncErrorResult:
    ns = nsig.support.astype(float)[:, None]
    nb = nbg.support.astype(float)[None, :]
    joint = nsig.values[:, None] * nbg.values[None, :]
    n_tot = ns + nb
    with np.errstate(divide="ignore", invalid="ignore"):
        bracket = (2.0 * ns * sigma_spad**2 + nb * (t_qb**2 / 12.0 + sigma_spad**2)) / n_tot**2
    keep = n_tot >= max(threshold, 1)
    mass = float(joint[keep].sum())
    if mass > 0:
        variance = float((bracket * joint)[keep].sum()) / mass
    else:
        variance = math.nan
    literal = (ns >= max(threshold, 1)) & (n_tot > 0)
    variance_literal = float((bracket * joint)[literal].sum())
    low = mass < 0.5
    if low:
        warnings.warn(
            f"only {mass:.3g} of the count mass reaches the threshold; timing variance is unreliable",
            stacklevel=2,
        )
    return SyncErrorResult(variance, mass, variance_literal, int(threshold), low)


def sync_error_variance(cfg: SystemConfig, quad: QuadratureSpec = DEFAULT_QUAD) -> SyncErrorResult:
    """Expected variance of the synchronisation error (s^2) with its retained mass."""
    return sync_error_from_tables(
        nsig_distribution(cfg, quad), nbg_distribution(cfg, quad), n_t_min(cfg),
        cfg.sigma_spad, cfg.t_qb,
    )


def outage_from_tables(nsig: DistributionTable, nbg: DistributionTable, threshold: int) -> float:
    """P(N_sig + N_bg < threshold) for independent counts."""
    cdf_bg = np.cumsum(nbg.values)
    total = 0.0
    for n, p in zip(nsig.support, nsig.values):
        room = threshold - 1 - int(n)
        if room < 0:
            break
        total += p * cdf_bg[min(room, len(cdf_bg) - 1)]
    return min(max(total, 0.0), 1.0)


def outage_probability(cfg: SystemConfig, quad: QuadratureSpec = DEFAULT_QUAD,
                       threshold: int | None = None) -> float:
    """P(N_sig + N_bg < N_t,min).  ``threshold=1`` gives the no-detection probability."""
    if threshold is None:
        threshold = n_t_min(cfg)
    return outage_from_tables(nsig_distribution(cfg, quad), nbg_distribution(cfg, quad), threshold)


def binomial_poisson_tv(L: int, p: float, n_max: int = 30) -> float:
    """Total-variation distance between Binomial(L, p) and Poisson(L p) over 0..n_max."""
    n = np.arange(n_max + 1)
    return 0.5 * float(np.abs(stats.binom.pmf(n, L, p) - stats.poisson.pmf(n, L * p)).sum())


# --- summary ---------------------------------------------------------------

@dataclass(frozen=True)
class AnalyticSummary:
    nsig: DistributionTable
    nbg: DistributionTable
    mean_nsig: float
    mean_nbg: float
    n_t_min: int
    sync: SyncErrorResult
    outage: float
    outage_no_detection: float


def analyze(cfg: SystemConfig, quad: QuadratureSpec = DEFAULT_QUAD) -> AnalyticSummary:
    nsig = nsig_distribution(cfg, quad)
    nbg = nbg_distribution(cfg, quad)
    threshold = n_t_min(cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        sync = sync_error_from_tables(nsig, nbg, threshold, cfg.sigma_spad, cfg.t_qb)
    return AnalyticSummary(
        nsig=nsig,
        nbg=nbg,
        mean_nsig=nsig.mean(),
        mean_nbg=expected_nbg(cfg),
        n_t_min=threshold,
        sync=sync,
        outage=outage_from_tables(nsig, nbg, threshold),
        outage_no_detection=outage_from_tables(nsig, nbg, 1),
    )
