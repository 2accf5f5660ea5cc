import math

import numpy as np
import pytest
from scipy import stats

from ccrsync.analytic import expected_nbg
from ccrsync.channel import draw_channel, mu_ch
from ccrsync.config import SystemConfig, derive_constants
from ccrsync.errors import AlignmentError, NoDetectionError
from ccrsync.simulator import (NULL, Provenance, Reception, Reference, align_sequences,
                               estimate_delay, generate_reference, nsig_conditional_pmf,
                               propagate_and_detect, run_campaign, run_trial, run_trials,
                               simulate_trial, slot_records, slot_timing)
from ccrsync.variates import RngStream

NOISELESS = SystemConfig(sigma_spad=0.0, mu_bg=0.0, P_pol=0.0)


# --- reference generation ----------------------------------------------------

def test_reference_keeps_single_pair_slots():
    cfg = SystemConfig()
    valid = sum(int(generate_reference(cfg, RngStream(30, k)).valid.sum()) for k in range(10))
    assert valid / 1_000_000 == pytest.approx(0.30327, abs=0.002)


def test_reference_bits_fair():
    ref = generate_reference(SystemConfig(), RngStream(31))
    bits = ref.bits[ref.valid]
    assert set(np.unique(bits)) == {0, 1}
    assert abs(bits.mean() - 0.5) < 4 * 0.5 / math.sqrt(bits.size)


def test_reference_times_without_jitter():
    ref = generate_reference(SystemConfig(sigma_spad=0.0, t0=1e-3), RngStream(32))
    slots = np.flatnonzero(ref.valid)
    np.testing.assert_array_equal(ref.frac[slots], 0.0)
    np.testing.assert_array_equal(ref.times()[slots], 1e-3 + slots * 1e-9)
    assert np.all(np.isnan(ref.frac[~ref.valid]))


def test_reference_jitter_spread():
    ref = generate_reference(SystemConfig(), RngStream(33))
    assert np.nanstd(ref.frac) == pytest.approx(50e-12, rel=0.02)


# --- detection ----------------------------------------------------------------

def test_detections_only_on_valid_reference_slots():
    cfg = SystemConfig(mu_bg=1e-3)
    _, trace = simulate_trial(cfg, RngStream(40))
    got = trace.reception.bits != NULL
    assert got.any()
    assert np.all(trace.reference.valid[got])
    assert np.all((trace.reception.provenance != Provenance.NONE) == got)


def test_dead_channel_is_an_outage():
    res = run_trial(SystemConfig(h_La=1e-12, mu_bg=0.0), RngStream(41))
    assert res.outage and res.N_tot == 0 and res.n_ch is None and not res.aligned


def test_far_off_axis_beam_is_an_outage():
    res = run_trial(SystemConfig(sigma_p=10.0, mu_bg=0.0), RngStream(42))
    assert res.N_sig == 0 and res.outage


def test_noiseless_reception_copies_reference():
    _, trace = simulate_trial(NOISELESS, RngStream(43))
    rx = trace.reception
    got = rx.bits != NULL
    assert got.sum() > 20
    np.testing.assert_array_equal(rx.bits[got], trace.reference.bits[got])
    np.testing.assert_array_equal(rx.frac[got], rx.phase)


def test_detection_rate_per_scan_cell():
    # fixed channel, repeated reference/detection draws; per-cell counts against
    # L_sv * lambda_slot * (1 - exp(-mu_ch,j))
    cfg = SystemConfig(mu_bg=0.0, sigma_p=0.05)
    dc = derive_constants(cfg)
    g = RngStream(44).generator()
    realization = draw_channel(cfg, g)
    reps = 30
    counts = np.zeros(cfg.N_gr)
    for _ in range(reps):
        rx = propagate_and_detect(cfg, realization, generate_reference(cfg, g), g)
        sig = rx.provenance == Provenance.SIGNAL
        counts += sig.reshape(cfg.N_gr, dc.L_sv).sum(axis=1)
    expected = reps * dc.L_sv * dc.lambda_slot * -np.expm1(-mu_ch(realization, cfg))
    keep = expected > 5
    assert keep.sum() >= 10
    stat = (((counts - expected) ** 2 / expected)[keep]).sum()
    assert stats.chi2.sf(stat, keep.sum()) > 1e-3
    assert counts[~keep].sum() <= expected[~keep].sum() + 6 * math.sqrt(expected[~keep].sum() + 1)


def test_polarisation_flip_rate():
    cfg = SystemConfig(P_pol=0.2, mu_bg=0.0, sigma_p=0.0)
    flips = total = 0
    for k in range(5):
        _, trace = simulate_trial(cfg, RngStream(45, k))
        got = trace.reception.provenance == Provenance.SIGNAL
        flips += int((trace.reception.bits[got] != trace.reference.bits[got]).sum())
        total += int(got.sum())
    assert flips / total == pytest.approx(0.2, abs=4 * math.sqrt(0.16 / total))


def test_background_time_uniform_within_slot():
    cfg = SystemConfig(mu_bg=5e-2, h_La=1e-12)
    _, trace = simulate_trial(cfg, RngStream(46))
    rx = trace.reception
    offs = rx.frac[rx.provenance == Provenance.BACKGROUND] - rx.phase
    assert offs.size > 1000
    assert stats.kstest(offs, stats.uniform(-0.5e-9, 1e-9).cdf).pvalue > 1e-3


def test_slot_timing_reference_delay():
    cfg = SystemConfig()
    dc = derive_constants(cfg)
    shift, coarse, phase = slot_timing(cfg)
    assert 0 <= shift <= dc.delta_N_max
    assert (coarse + shift) * cfg.t_qb + phase == pytest.approx(dc.t_ch_true, rel=1e-15)
    assert abs(phase) <= cfg.t_qb / 2


def test_slot_records_consistent_with_arrays():
    cfg = SystemConfig()
    dc = derive_constants(cfg)
    _, trace = simulate_trial(cfg, RngStream(47))
    records = slot_records(cfg, trace.reference, trace.reception)
    seen = 0
    for rec in records:
        if rec.global_slot >= 3 * dc.L_sv:
            break
        assert rec.grid_index == rec.global_slot // dc.L_sv
        assert (rec.ref_bit is None) == (trace.reference.bits[rec.global_slot] == NULL)
        if rec.provenance == Provenance.SIGNAL:
            assert abs(rec.rx_time - rec.ref_time - dc.t_ch_true) < 10 * math.sqrt(2) * cfg.sigma_spad
        seen += 1
    assert seen == 3 * dc.L_sv


# --- alignment ------------------------------------------------------------------

def _sparse_bits(rng, n, density):
    bits = rng.integers(0, 2, n).astype(np.int8)
    bits[rng.random(n) > density] = NULL
    return bits


def test_alignment_identity():
    ref = np.array([0, 1, 1, 0, 1, 0, 0, 1, 1, 1, 0, 1], dtype=np.int8)
    assert align_sequences(ref, ref, 7, min_overlap=10) == 0


def test_alignment_recovers_known_shift():
    g = np.random.default_rng(50)
    ref = g.integers(0, 2, 50).astype(np.int8)
    rx = np.full(57, NULL, dtype=np.int8)
    rx[5:55] = ref
    assert align_sequences(ref, rx, 7) == 5


def test_alignment_with_flips_and_sparse_detections():
    g = np.random.default_rng(51)
    hits = 0
    for _ in range(1000):
        ref = _sparse_bits(g, 3000, 0.3)
        shift = int(g.integers(0, 8))
        rx = np.full(ref.size + 7, NULL, dtype=np.int8)
        sent = np.flatnonzero(ref != NULL)
        detected = g.choice(sent, 30, replace=False)
        flips = (g.random(30) < 0.1).astype(np.int8)
        rx[detected + shift] = ref[detected] ^ flips
        hits += align_sequences(ref, rx, 7) == shift
    assert hits / 1000 >= 0.99


def test_alignment_needs_enough_overlap():
    ref = np.array([1, 0, 1, 1, 0], dtype=np.int8)
    with pytest.raises(AlignmentError):
        align_sequences(ref, ref, 3, min_overlap=10)


def test_alignment_ties_pick_smallest_shift():
    ref = np.ones(40, dtype=np.int8)
    assert align_sequences(ref, np.ones(47, dtype=np.int8), 7) == 0


# --- delay estimate ----------------------------------------------------------------

def _single_detection(provenance, frac_offset, shift=3, phase=0.2e-9, n=20):
    ref_bits = np.full(n, NULL, dtype=np.int8)
    ref_bits[4] = 1
    ref_frac = np.full(n, np.nan)
    ref_frac[4] = 0.0
    bits = np.full(n, NULL, dtype=np.int8)
    bits[4] = 0
    frac = np.full(n, np.nan)
    frac[4] = phase + frac_offset
    prov = np.zeros(n, dtype=np.int8)
    prov[4] = provenance
    return Reference(ref_bits, ref_frac, 0.0, 1e-9), Reception(bits, frac, prov, shift, 0, phase)


def test_single_background_detection_error_bounded():
    cfg = SystemConfig()
    for u in (-0.5e-9, -0.1e-9, 0.3e-9, 0.5e-9):
        ref, rx = _single_detection(Provenance.BACKGROUND, u)
        _, n_ch = estimate_delay(cfg, ref, rx, rx.shift_true)
        assert n_ch == pytest.approx(u, abs=1e-21)
        assert abs(n_ch) <= cfg.t_qb / 2


def test_wrong_shift_costs_whole_slots():
    cfg = SystemConfig()
    ref, rx = _single_detection(Provenance.SIGNAL, 0.0)
    t_hat, n_ch = estimate_delay(cfg, ref, rx, rx.shift_true)
    assert n_ch == 0.0 and t_hat == derive_constants(cfg).t_ch_true
    with pytest.raises(NoDetectionError):
        estimate_delay(cfg, ref, rx, rx.shift_true + 1)


def test_noiseless_estimate_exact():
    for k in range(20):
        res = run_trial(NOISELESS, RngStream(52, k))
        if not res.outage:
            assert res.n_ch == 0.0 and res.aligned and res.shift_est == res.shift_true


def test_estimate_has_expected_spread_without_background():
    # signal-only pairs: variance 2 sigma^2 / N_tot
    cfg = SystemConfig(mu_bg=0.0, sigma_p=0.0)
    z = []
    for k in range(200):
        res = run_trial(cfg, RngStream(53, k))
        z.append(res.n_ch / (math.sqrt(2) * cfg.sigma_spad / math.sqrt(res.N_tot)))
    assert np.std(z) == pytest.approx(1.0, abs=0.15)
    assert abs(np.mean(z)) < 4 / math.sqrt(200)


# --- campaigns ------------------------------------------------------------------------

def test_trial_determinism():
    cfg = SystemConfig()
    assert run_trial(cfg, RngStream(60, 5)) == run_trial(cfg, RngStream(60, 5))
    assert run_trial(cfg, RngStream(60, 5)) != run_trial(cfg, RngStream(60, 6))


def test_single_trial_campaign():
    s = run_campaign(SystemConfig(), 1, 61)
    assert s.trials == 1 and len(s.results) == 1
    assert s.nsig_histogram.total() == 1.0


def test_campaign_rejects_bad_sizes():
    with pytest.raises(ValueError):
        run_trials(SystemConfig(), 0, 1)
    with pytest.raises(ValueError):
        run_trials(SystemConfig(), 5, 1, parallelism=0)


def test_parallel_campaign_matches_serial():
    cfg = SystemConfig()
    serial = run_trials(cfg, 24, 62, parallelism=1)
    assert run_trials(cfg, 24, 62, parallelism=8) == serial
    assert run_trials(cfg, 24, 62, parallelism=3) == serial


def test_estimator_unbiased_at_defaults():
    s = run_campaign(SystemConfig(), 1000, 63)
    lo, hi = s.nch_mean_ci
    assert lo <= 0.0 <= hi
    assert s.alignment_success_rate > 0.99


def test_background_count_mean():
    cfg = SystemConfig(h_La=1e-12)
    s = run_campaign(cfg, 1000, 64)
    se = math.sqrt(expected_nbg(cfg) / 1000)
    assert abs(s.mean_nbg - expected_nbg(cfg)) < 4 * se


# --- conditional signal-count pmf ----------------------------------------------------

def test_conditional_pmf_matches_binomial_convolution():
    cfg = SystemConfig(N_grx=2, N_gry=2, t_j=25e-6, t_aq=100e-6)
    dc = derive_constants(cfg)
    realization = draw_channel(cfg, RngStream(70))
    q = dc.lambda_slot * -np.expm1(-mu_ch(realization, cfg))
    pmf = np.array([1.0])
    for qj in q:
        pmf = np.convolve(pmf, stats.binom.pmf(np.arange(dc.L_sv + 1), dc.L_sv, qj))
    fft_pmf = nsig_conditional_pmf(cfg, realization, 400)
    np.testing.assert_allclose(fft_pmf, pmf[:401], atol=1e-13)


def test_conditional_pmf_mean_and_mass():
    cfg = SystemConfig()
    dc = derive_constants(cfg)
    realization = draw_channel(cfg, RngStream(71))
    q = dc.lambda_slot * -np.expm1(-mu_ch(realization, cfg))
    pmf = nsig_conditional_pmf(cfg, realization, 600)
    assert pmf.sum() == pytest.approx(1.0, abs=1e-9)
    assert np.arange(601) @ pmf == pytest.approx(dc.L_sv * q.sum(), rel=1e-9)
