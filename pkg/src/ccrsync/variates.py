"""Probability distributions and the seeding contract.

Every random draw in the package comes from an :class:`RngStream`, a
``(master_seed, stream_id)`` pair mapped through numpy's ``SeedSequence``
hash onto an independent PCG64 generator.  Trials use their index as the
stream id, so a campaign is reproducible regardless of how trials are
scheduled across workers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    master_seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("master_seed", "stream_id"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or not 0 <= value <= _MASK64:
                raise ValueError(f"{name} must be an unsigned 64-bit integer, got {value!r}")

    def seed_sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence(int(self.master_seed), spawn_key=(int(self.stream_id),))

    def generator(self) -> np.random.Generator:
        """A fresh generator positioned at the start of this stream."""
        return np.random.Generator(np.random.PCG64(self.seed_sequence()))


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RngStream or numpy Generator, got {type(rng).__name__}")


# --- Gamma-Gamma fading ----------------------------------------------------

def gg_logpdf(h, alpha: float, beta: float):
    """Log-density of the unit-mean Gamma-Gamma distribution."""
    h = np.asarray(h, dtype=float)
    if not (np.all(np.isfinite(h)) and math.isfinite(alpha) and math.isfinite(beta)):
        raise ValueError("gg_pdf arguments must be finite")
    if alpha <= 0 or beta <= 0:
        raise ValueError("alpha and beta must be positive")
    if np.any(h < 0):
        raise ValueError("h must be non-negative")
    ab = alpha * beta
    nu = alpha - beta
    half = 0.5 * (alpha + beta)
    log_norm = math.log(2.0) + half * math.log(ab) - special.gammaln(alpha) - special.gammaln(beta)

    out = np.empty_like(h)
    pos = h > 0
    hp = h[pos]
    z = 2.0 * np.sqrt(ab * hp)
    # kve(v, z) = kv(v, z) * exp(z) keeps large arguments finite
    out[pos] = log_norm + (half - 1.0) * np.log(hp) + np.log(special.kve(nu, z)) - z
    if np.any(~pos):
        out[~pos] = _gg_logpdf_at_zero(alpha, beta)
    return out if out.ndim else float(out)


def _gg_logpdf_at_zero(alpha: float, beta: float) -> float:
    # near 0 the density behaves like h**(min(alpha, beta) - 1)
    lo = min(alpha, beta)
    nu = abs(alpha - beta)
    if lo > 1:
        return -math.inf
    if lo < 1 or nu == 0:
        return math.inf
    return lo * math.log(alpha * beta) + special.gammaln(nu) - special.gammaln(alpha) - special.gammaln(beta)


def gg_pdf(h, alpha: float, beta: float):
    """Gamma-Gamma density with modified Bessel function of order alpha - beta."""
    return np.exp(gg_logpdf(h, alpha, beta))


def gg_cdf(h, alpha: float, beta: float, n_grid: int = 20001):
    """CDF by cumulative integration of :func:`gg_pdf`.

    The integral runs in ``u = sqrt(h)`` on a uniform grid reaching far into
    the tail, which tames the power-law behaviour of the density at 0.
    """
    h = np.asarray(h, dtype=float)
    if np.any(h < 0):
        raise ValueError("h must be non-negative")
    top = max(float(np.max(h, initial=0.0)), 60.0 / min(alpha, beta))
    u = np.linspace(0.0, math.sqrt(top), n_grid)
    with np.errstate(over="ignore"):
        dens = gg_pdf(u[1:] ** 2, alpha, beta) * 2.0 * u[1:]
    dens = np.concatenate([[0.0], dens])
    if not np.isfinite(dens[1]):
        raise ValueError("density is unbounded near 0; use min(alpha, beta) >= 1")
    step = u[1] - u[0]
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * step)])
    out = np.interp(np.sqrt(h), u, np.clip(cum / cum[-1], 0.0, 1.0))
    return out if out.ndim else float(out)


def gg_sample(rng, alpha: float, beta: float, size=None):
    """Draw unit-mean Gamma-Gamma variates as a product of two unit-mean Gammas."""
    if alpha <= 0 or beta <= 0:
        raise ValueError("alpha and beta must be positive")
    g = _as_generator(rng)
    x = g.gamma(alpha, 1.0 / alpha, size)
    y = g.gamma(beta, 1.0 / beta, size)
    return x * y


# --- pointing offset -------------------------------------------------------

def sample_r_dev(rng, sigma_p: float, size=None) -> np.ndarray:
    """Coarse target-position error (x_dev, y_dev), i.i.d. N(0, sigma_p^2) per axis.

    Returns shape ``(2,)`` for a single draw, ``(size, 2)`` otherwise.
    """
    if sigma_p < 0:
        raise ValueError("sigma_p must be non-negative")
    g = _as_generator(rng)
    shape = (2,) if size is None else (size, 2)
    draw = g.standard_normal(shape)
    return draw * sigma_p


# --- Poisson counts --------------------------------------------------------

def poisson_pmf(n, mu: float):
    """P(N = n) for N ~ Poisson(mu), vectorised over ``n``."""
    if not mu >= 0:
        raise ValueError(f"Poisson mean must be non-negative, got {mu!r}")
    n = np.asarray(n)
    if np.any(n < 0):
        raise ValueError("counts must be non-negative")
    if mu == 0:
        out = np.where(n == 0, 1.0, 0.0)
    else:
        out = np.exp(special.xlogy(n, mu) - mu - special.gammaln(n + 1.0))
    return out if out.ndim else float(out)


def poisson_logpmf_grid(n: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """log P(N=n; mu) for broadcast arrays; mu = 0 handled as the unit mass at 0."""
    n = np.asarray(n, dtype=float)
    mu = np.asarray(mu, dtype=float)
    with np.errstate(divide="ignore"):
        return special.xlogy(n, mu) - mu - special.gammaln(n + 1.0)


def poisson_sample(rng, mu: float, size=None):
    if not mu >= 0:
        raise ValueError(f"Poisson mean must be non-negative, got {mu!r}")
    return _as_generator(rng).poisson(mu, size)


# --- background photon timing ----------------------------------------------

def background_arrival(rng, t_qb: float, size=None):
    """Arrival time of a background photon, uniform over the slot centred on 0."""
    if not t_qb > 0:
        raise ValueError("t_qb must be positive")
    return _as_generator(rng).uniform(-0.5 * t_qb, 0.5 * t_qb, size)
