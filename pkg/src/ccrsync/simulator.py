"""Slot-level Monte Carlo of one acquisition and of trial campaigns.

Times are kept as an integer slot index plus a sub-slot offset so that
differences of nanosecond-scale slot times do not lose the picosecond
jitter to rounding.  A slot's absolute time is ``t0 + slot * t_qb + frac``.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .analytic import n_t_min
from .channel import ChannelRealization, draw_channel, mu_ch
from .config import SystemConfig, derive_constants
from .errors import AlignmentError, NoDetectionError
from .stats import DistributionTable, mean_interval, pmf_from_counts, std_interval, wilson_interval
from .variates import RngStream, _as_generator

NULL = -1


class Provenance(IntEnum):
    NONE = 0
    SIGNAL = 1
    BACKGROUND = 2


@dataclass(frozen=True)
class SlotRecord:
    """One slot of the reference and received streams (``None`` marks a null entry)."""

    global_slot: int
    grid_index: int
    ref_bit: int | None
    ref_time: float | None
    rx_bit: int | None
    rx_time: float | None
    provenance: Provenance


@dataclass(frozen=True)
class Reference:
    """Reference detector output, one entry per generation slot."""

    bits: np.ndarray  # int8, NULL where zero or several pairs were generated
    frac: np.ndarray  # jitter relative to the nominal slot time; nan where null
    t0: float
    t_qb: float

    @property
    def valid(self) -> np.ndarray:
        return self.bits != NULL

    def times(self) -> np.ndarray:
        slots = np.arange(len(self.bits))
        return self.t0 + slots * self.t_qb + self.frac


@dataclass(frozen=True)
class Reception:
    """Receiver output indexed by generation slot.

    A photon from slot ``s`` is recorded by the receiver in its own slot
    ``s + shift_true`` and arrives ``coarse`` whole slots plus ``frac`` later
    than the nominal generation time, with ``coarse + shift_true`` the
    nearest-slot rounding of the true round-trip delay.
    """

    bits: np.ndarray  # int8
    frac: np.ndarray
    provenance: np.ndarray  # int8 Provenance codes
    shift_true: int
    coarse: int
    phase: float  # t_ch_true - (coarse + shift_true) * t_qb

    def frame(self, delta_N_max: int) -> np.ndarray:
        """Received bits as the receiver sees them, in its own slot numbering."""
        out = np.full(len(self.bits) + delta_N_max, NULL, dtype=np.int8)
        out[self.shift_true: self.shift_true + len(self.bits)] = self.bits
        return out


def slot_timing(cfg: SystemConfig) -> tuple[int, int, float]:
    """(shift_true, coarse, phase) for the configured round-trip delay."""
    dc = derive_constants(cfg)
    total = int(round(dc.t_ch_true / cfg.t_qb))
    shift = total % (dc.delta_N_max + 1)
    return shift, total - shift, dc.t_ch_true - total * cfg.t_qb


def generate_reference(cfg: SystemConfig, rng) -> Reference:
    """Pair generation and reference filtering over one acquisition."""
    g = _as_generator(rng)
    dc = derive_constants(cfg)
    # inverse-CDF Poisson draw; only n_t == 1 matters downstream
    u = g.random(dc.L_seq)
    p0 = math.exp(-cfg.mu_t)
    n_t = np.where(u < p0, 0, np.where(u < p0 * (1.0 + cfg.mu_t), 1, 2))
    valid = n_t == 1
    n_valid = int(valid.sum())
    bits = np.full(dc.L_seq, NULL, dtype=np.int8)
    bits[valid] = g.integers(0, 2, n_valid, dtype=np.int8)
    frac = np.full(dc.L_seq, np.nan)
    frac[valid] = cfg.sigma_spad * g.standard_normal(n_valid)
    return Reference(bits, frac, cfg.t0, cfg.t_qb)


def propagate_and_detect(cfg: SystemConfig, realization: ChannelRealization,
                         reference: Reference, rng) -> Reception:
    """Signal and background detections on the valid reference slots."""
    g = _as_generator(rng)
    dc = derive_constants(cfg)
    shift, coarse, phase = slot_timing(cfg)
    rate = mu_ch(realization, cfg)
    slots = np.flatnonzero(reference.valid)
    p_sig = -np.expm1(-rate[slots // dc.L_sv])
    sig = g.random(slots.size) < p_sig
    bg = g.random(slots.size) < cfg.mu_bg * math.exp(-cfg.mu_bg)
    bg &= ~sig  # a slot with both counts as signal

    n = dc.L_seq
    bits = np.full(n, NULL, dtype=np.int8)
    frac = np.full(n, np.nan)
    prov = np.zeros(n, dtype=np.int8)

    s_idx = slots[sig]
    flips = g.random(s_idx.size) < cfg.P_pol
    bits[s_idx] = reference.bits[s_idx] ^ flips.astype(np.int8)
    frac[s_idx] = phase + cfg.sigma_spad * g.standard_normal(s_idx.size)
    prov[s_idx] = Provenance.SIGNAL

    b_idx = slots[bg]
    bits[b_idx] = g.integers(0, 2, b_idx.size, dtype=np.int8)
    frac[b_idx] = phase + g.uniform(-0.5 * cfg.t_qb, 0.5 * cfg.t_qb, b_idx.size)
    prov[b_idx] = Provenance.BACKGROUND
    return Reception(bits, frac, prov, shift, coarse, phase)


def slot_records(cfg: SystemConfig, reference: Reference, reception: Reception):
    """Yield a :class:`SlotRecord` per slot (for inspection; trials use the arrays)."""
    dc = derive_constants(cfg)
    t_ch = dc.t_ch_true
    for s in range(len(reference.bits)):
        ok = reference.bits[s] != NULL
        got = reception.bits[s] != NULL
        nominal = cfg.t0 + s * cfg.t_qb
        yield SlotRecord(
            global_slot=s,
            grid_index=s // dc.L_sv,
            ref_bit=int(reference.bits[s]) if ok else None,
            ref_time=nominal + float(reference.frac[s]) if ok else None,
            rx_bit=int(reception.bits[s]) if got else None,
            rx_time=nominal + t_ch + float(reception.frac[s] - reception.phase) if got else None,
            provenance=Provenance(int(reception.provenance[s])),
        )


def align_sequences(reference_bits, rx_bits, delta_N_max: int, min_overlap: int = 10) -> int:
    """Shift ``k`` in ``[0, delta_N_max]`` maximising bit agreement of ``rx[s + k]`` with ``ref[s]``.

    Both inputs use ``-1`` for null slots.  Only slots non-null on both
    sides count; ties go to the smallest shift.
    """
    ref = np.asarray(reference_bits)
    rx = np.asarray(rx_bits)
    q = np.flatnonzero(rx != NULL)
    rx_vals = rx[q]
    matches = np.zeros(delta_N_max + 1, dtype=np.int64)
    overlap = np.zeros(delta_N_max + 1, dtype=np.int64)
    for k in range(delta_N_max + 1):
        s = q - k
        inside = (s >= 0) & (s < len(ref))
        r = ref[s[inside]]
        both = r != NULL
        overlap[k] = both.sum()
        matches[k] = (r[both] == rx_vals[inside][both]).sum()
    if overlap.max() < min_overlap:
        raise AlignmentError(
            f"at most {overlap.max()} overlapping detections at any shift; need {min_overlap}"
        )
    return int(np.argmax(matches))


def estimate_delay(cfg: SystemConfig, reference: Reference, reception: Reception,
                   shift_est: int) -> tuple[float, float]:
    """(t_ch_hat, n_ch) from the detections paired under ``shift_est``.

    The estimate is the mean of rx_time - ref_time over paired slots,
    accumulated as residuals against the true delay so that a noiseless
    channel gives exactly zero error.
    """
    dc = derive_constants(cfg)
    frame_bits = reception.frame(dc.delta_N_max)
    frame_frac = np.full(frame_bits.size, np.nan)
    frame_frac[reception.shift_true: reception.shift_true + len(reception.frac)] = reception.frac
    q = np.flatnonzero(frame_bits != NULL)
    s = q - shift_est
    inside = (s >= 0) & (s < len(reference.bits))
    q, s = q[inside], s[inside]
    paired = reference.bits[s] != NULL
    q, s = q[paired], s[paired]
    if q.size == 0:
        raise NoDetectionError("no paired detections to estimate the delay")
    slip = shift_est - reception.shift_true  # whole-slot error of the alignment
    resid = slip * cfg.t_qb + (frame_frac[q] - reference.frac[s] - reception.phase)
    n_ch = float(resid.mean())
    return dc.t_ch_true + n_ch, n_ch


@dataclass(frozen=True)
class TrialResult:
    N_sig: int
    N_bg: int
    N_tot: int
    shift_true: int
    shift_est: int | None
    t_ch_hat: float | None
    n_ch: float | None
    outage: bool
    aligned: bool
    alignment_failed: bool = False


@dataclass(frozen=True)
class TrialTrace:
    realization: ChannelRealization
    reference: Reference
    reception: Reception


def simulate_trial(cfg: SystemConfig, rng) -> tuple[TrialResult, TrialTrace]:
    """One acquisition; returns the result and the underlying streams."""
    g = _as_generator(rng)
    dc = derive_constants(cfg)
    realization = draw_channel(cfg, g)
    reference = generate_reference(cfg, g)
    reception = propagate_and_detect(cfg, realization, reference, g)
    n_sig = int((reception.provenance == Provenance.SIGNAL).sum())
    n_bg = int((reception.provenance == Provenance.BACKGROUND).sum())
    n_tot = n_sig + n_bg
    trace = TrialTrace(realization, reference, reception)
    if n_tot < n_t_min(cfg):
        return TrialResult(n_sig, n_bg, n_tot, reception.shift_true, None, None, None,
                           outage=True, aligned=False), trace
    try:
        shift_est = align_sequences(reference.bits, reception.frame(dc.delta_N_max),
                                    dc.delta_N_max, cfg.N_s_min)
    except AlignmentError:
        return TrialResult(n_sig, n_bg, n_tot, reception.shift_true, None, None, None,
                           outage=False, aligned=False, alignment_failed=True), trace
    t_hat, n_ch = estimate_delay(cfg, reference, reception, shift_est)
    return TrialResult(n_sig, n_bg, n_tot, reception.shift_true, shift_est, t_hat, n_ch,
                       outage=False, aligned=shift_est == reception.shift_true), trace


def run_trial(cfg: SystemConfig, rng) -> TrialResult:
    return simulate_trial(cfg, rng)[0]


def nsig_conditional_pmf(cfg: SystemConfig, realization: ChannelRealization,
                         n_max: int) -> np.ndarray:
    """Exact P(N_sig = n | channel) for n = 0..n_max.

    Given the channel, each scan cell contributes Binomial(L_sv, lambda_slot
    * (1 - exp(-mu_ch,j))) independent counts; their sum is evaluated by FFT
    of the product of generating functions.
    """
    dc = derive_constants(cfg)
    q = dc.lambda_slot * -np.expm1(-mu_ch(realization, cfg))
    # wide enough that wrap-around of the tail beyond n_max is negligible
    size = 1 << int(math.ceil(math.log2(4 * (n_max + 1))))
    z = np.exp(2j * np.pi * np.arange(size) / size)
    log_pgf = dc.L_sv * np.log1p(q[:, None] * (z[None, :] - 1.0)).sum(axis=0)
    pmf = np.fft.fft(np.exp(log_pgf)).real / size
    pmf = np.clip(pmf[: n_max + 1], 0.0, None)
    return pmf


# --- campaigns --------------------------------------------------------------

@dataclass(frozen=True)
class CampaignStats:
    """Aggregates over a campaign; timing statistics use non-outage, aligned trials."""

    trials: int
    nsig_histogram: DistributionTable
    empirical_outage: float
    outage_ci: tuple[float, float]
    nch_mean: float
    nch_mean_ci: tuple[float, float]
    nch_std: float
    nch_std_ci: tuple[float, float]
    synced_trials: int
    alignment_success_rate: float
    mean_nsig: float
    mean_nbg: float
    results: tuple[TrialResult, ...] = field(default=(), repr=False)

    def __eq__(self, other):
        if not isinstance(other, CampaignStats):
            return NotImplemented
        return self.results == other.results and self.trials == other.trials

    __hash__ = None


def _trial_chunk(args) -> list[TrialResult]:
    cfg, seed, start, stop = args
    return [run_trial(cfg, RngStream(seed, i)) for i in range(start, stop)]


def run_trials(cfg: SystemConfig, n_trials: int, master_seed: int,
               parallelism: int = 1) -> list[TrialResult]:
    """Trials ``0..n_trials-1`` with stream ``RngStream(master_seed, index)``, in index order."""
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    if parallelism < 1:
        raise ValueError("parallelism must be at least 1")
    derive_constants(cfg)
    if parallelism == 1 or n_trials == 1:
        return _trial_chunk((cfg, master_seed, 0, n_trials))
    n_chunks = min(n_trials, 4 * parallelism)
    bounds = np.linspace(0, n_trials, n_chunks + 1).astype(int)
    jobs = [(cfg, master_seed, int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    with ProcessPoolExecutor(max_workers=parallelism) as pool:
        chunks = list(pool.map(_trial_chunk, jobs))
    return [r for chunk in chunks for r in chunk]


def summarize(results: list[TrialResult]) -> CampaignStats:
    n = len(results)
    if n == 0:
        raise ValueError("no trials to summarise")
    nsig = np.array([r.N_sig for r in results])
    nbg = np.array([r.N_bg for r in results])
    outages = sum(r.outage for r in results)
    attempted = [r for r in results if not r.outage]
    good = np.array([r.n_ch for r in attempted if r.aligned], dtype=float)
    if good.size:
        mean_ci = mean_interval(good)
        std_ci = std_interval(good)
        nch_mean = float(good.mean())
        nch_std = float(good.std(ddof=1)) if good.size > 1 else 0.0
    else:
        nch_mean = nch_std = math.nan
        mean_ci = std_ci = (math.nan, math.nan)
    return CampaignStats(
        trials=n,
        nsig_histogram=pmf_from_counts(nsig),
        empirical_outage=outages / n,
        outage_ci=wilson_interval(outages, n),
        nch_mean=nch_mean,
        nch_mean_ci=mean_ci,
        nch_std=nch_std,
        nch_std_ci=std_ci,
        synced_trials=int(good.size),
        alignment_success_rate=(good.size / len(attempted)) if attempted else math.nan,
        mean_nsig=float(nsig.mean()),
        mean_nbg=float(nbg.mean()),
        results=tuple(results),
    )


def run_campaign(cfg: SystemConfig, n_trials: int, master_seed: int,
                 parallelism: int = 1) -> CampaignStats:
    """Run and aggregate a campaign; the output does not depend on ``parallelism``."""
    return summarize(run_trials(cfg, n_trials, master_seed, parallelism))
