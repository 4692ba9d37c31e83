import numpy as np
import pytest

from crng.channel import PulseTemplate, pulse_edge_offset_samples, pulse_waveform
from crng.cirproc import (
    BELOW_THRESHOLD,
    MPC_AMBIGUOUS,
    ProcParams,
    ToaEstimate,
    chunk,
    find_rearrange_shift,
    noise_std,
    rearrange,
    toa_eta,
    toa_ss,
    toa_threshold,
    upsample,
    upsample_complex,
)
from crng.constants import CIR_LEN
from crng.errors import RearrangeFailed
from crng.radio import Cir
from helpers import make_cir, six_response_positions

PARAMS = ProcParams()
L = PARAMS.upsample_factor


class TestUpsample:
    def test_factor_one_is_identity(self):
        rng = np.random.default_rng(0)
        cir = make_cir([500.0], [1.0], fp_index=500.0, noise_sigma=0.01, rng=rng)
        assert np.array_equal(upsample(cir, 1), cir.amplitudes)

    def test_values_preserved_at_original_points(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal(CIR_LEN) + 1j * rng.standard_normal(CIR_LEN)
        up = upsample_complex(x, 7)
        assert np.allclose(up[::7], x, atol=1e-9)

    def test_bin_aligned_sinusoid_exact(self):
        k = np.arange(CIR_LEN)
        x = np.exp(2j * np.pi * 37 * k / CIR_LEN)  # below Nyquist, periodic
        up = upsample_complex(x, 30)
        dense = np.exp(2j * np.pi * 37 * np.arange(CIR_LEN * 30) / (CIR_LEN * 30))
        assert np.max(np.abs(np.abs(up) - np.abs(dense))) < 1e-3

    def test_rendered_pulse_peak_matches_dense_rendering(self):
        pos = 400.37
        cir = make_cir([pos], [1.0], fp_index=400.0)
        up = upsample(cir, 30)
        peak_up = np.argmax(up) / 30.0
        # oracle: continuous pulse peak sits edge_offset after the position
        expected = pos + pulse_edge_offset_samples(900.0)
        assert peak_up == pytest.approx(expected, abs=1.5 / 30)


def _six_cir(rng, noise=0.0):
    pos, dists = six_response_positions(rng)
    amps = 1.0 / dists
    cir = make_cir(pos, amps, fp_index=pos[int(np.argmax(amps))],
                   noise_sigma=noise, rng=rng)
    return cir, pos


class TestRearrange:
    def test_already_ordered_keeps_shift_small(self):
        lead = PARAMS.guard_offset // L
        pos = lead + np.arange(6) * 127.7955
        cir = make_cir(pos, [1.0] * 6, fp_index=pos[0])
        r = rearrange(cir, PARAMS)
        assert r.shift % CIR_LEN <= 2 or r.shift % CIR_LEN >= CIR_LEN - 2

    def test_wrapped_cir_recovers_order(self):
        rng = np.random.default_rng(2)
        cir, pos = _six_cir(rng, noise=0.002)
        r = rearrange(cir, PARAMS)
        # responder 1's rough first path lands at the guard offset
        first_up = (pos[0] + r.shift) % CIR_LEN * L
        assert abs(first_up - PARAMS.guard_offset) <= 2.5 * L

    def test_inverse_shift_recovers_source(self):
        rng = np.random.default_rng(3)
        cir, _ = _six_cir(rng, noise=0.002)
        r = rearrange(cir, PARAMS)
        shifted = np.roll(cir.samples, r.shift)
        assert np.array_equal(np.roll(shifted, -r.shift), cir.samples)

    def test_exhaustive_preshift_sweep_consistent(self):
        rng = np.random.default_rng(4)
        cir, _ = _six_cir(rng)
        _, ref_first = find_rearrange_shift(cir.amplitudes, PARAMS)
        for s in range(0, CIR_LEN, 97):
            rolled = np.roll(cir.amplitudes, s)
            _, first = find_rearrange_shift(rolled, PARAMS)
            assert (first - s) % CIR_LEN == ref_first

    def test_failure_without_signal(self):
        samples = np.full(CIR_LEN, 3.0 + 0j)  # flat: nothing above xi after norm...
        samples[0] = 30.0
        cir = Cir(samples=samples, fp_index=0.0, fp_ticks=0)
        params = ProcParams(rearrange_threshold=0.9, noise_window=228)
        # only one sample above threshold = the max itself; scanning finds it
        r = rearrange(cir, params)
        assert r.shift >= 0
        with pytest.raises(RearrangeFailed):
            rearrange(Cir(samples=np.zeros(CIR_LEN, dtype=complex), fp_index=0.0, fp_ticks=0), PARAMS)

    def test_fp_follows_shift(self):
        rng = np.random.default_rng(5)
        cir, _ = _six_cir(rng)
        r = rearrange(cir, PARAMS)
        assert r.fp_index_up == pytest.approx(((cir.fp_index + r.shift) % CIR_LEN) * L)


class TestNoiseStd:
    def test_noiseless_is_tiny(self):
        cir = make_cir([480 / L + np.arange(6) * 127.7955], [[1.0] * 6][0], fp_index=16.0)
        r = rearrange(cir, PARAMS)
        assert noise_std(r) < 1e-3

    def test_rayleigh_statistics(self):
        rng = np.random.default_rng(6)
        sigma = 0.01
        vals = []
        for _ in [0] * 40:
            cir = make_cir([200.0], [1.0], fp_index=200.0, noise_sigma=sigma, rng=rng)
            r = rearrange(cir, ProcParams(rearrange_threshold=0.4))
            vals.append(noise_std(r) * r.norm_scale / cir.scale)
        expected = sigma * np.sqrt((4 - np.pi) / 2)
        assert np.mean(vals) == pytest.approx(expected, rel=0.10)

    def test_eta_floor_guards_noiseless(self):
        assert toa_eta(0.0, PARAMS) == PARAMS.eta_floor
        assert toa_eta(0.02, PARAMS) == pytest.approx(0.22)


class TestChunk:
    def _rearranged(self):
        rng = np.random.default_rng(7)
        cir, _ = _six_cir(rng)
        return rearrange(cir, PARAMS)

    def test_single_chunk(self):
        r = self._rearranged()
        (c,) = chunk(r, 128e-9, 1)
        assert c == (0, 3833)

    def test_width_matches_time_shift(self):
        r = self._rearranged()
        chunks = chunk(r, 128e-9, 6)
        assert all(hi - lo == 3833 for lo, hi in chunks)
        assert chunks[1][0] == 3833

    def test_seven_fit_in_span(self):
        r = self._rearranged()
        chunks = chunk(r, 128e-9, 7)
        assert chunks[-1][1] <= CIR_LEN * L

    def test_oversized_rejected(self):
        r = self._rearranged()
        with pytest.raises(ValueError):
            chunk(r, 160e-9, 7)


def _toa_fixture(direct_rel=1.0, mpc=()):
    """One chunk with a direct path at the guard offset plus optional MPC
    (delay_ns, relative amplitude)."""
    lead = PARAMS.guard_offset / L
    pos = [lead] + [lead + d / 1.0016 for d, _ in mpc]
    amps = [direct_rel] + [direct_rel * a for _, a in mpc]
    cir = make_cir(pos, amps, fp_index=pos[0])
    r = rearrange(cir, ProcParams(rearrange_threshold=min(0.14, 0.5 * direct_rel)))
    return r


class TestToaThreshold:
    def test_all_noise_chunk_invalid(self):
        r = _toa_fixture()
        est = toa_threshold(r, chunk(r, 128e-9, 6)[3], eta=0.2, responder_index=4)
        assert not est.valid and est.rejection_reason == BELOW_THRESHOLD

    def test_clean_pulse_crossing_before_peak(self):
        r = _toa_fixture()
        est = toa_threshold(r, chunk(r, 128e-9, 6)[0], eta=0.2, responder_index=1)
        assert est.valid
        peak = np.argmax(r.amplitudes[:3833])
        assert 0 < peak - est.toa_index_up < 2.5 * L

    def test_leaked_mpc_is_returned(self):
        # strong late reflection at the start of the chunk wins: documented
        # failure mode of the threshold algorithm
        pos = [PARAMS.guard_offset / L, 3833 / L + 2.0]  # junk 2 samples into chunk 2
        cir = make_cir(pos, [1.0, 0.5], fp_index=pos[0])
        r = rearrange(cir, PARAMS)
        est = toa_threshold(r, chunk(r, 128e-9, 6)[1], eta=0.1, responder_index=2)
        assert est.valid
        assert est.toa_index_up < 3833 + 4 * L


class TestToaSs:
    def template(self):
        return PulseTemplate.generate()

    def test_single_path_matches_threshold_convention(self):
        r = _toa_fixture()
        crange = chunk(r, 128e-9, 6)[0]
        tpl = self.template()
        ss = toa_ss(r, crange, 0.2, 3, tpl, 1)
        th = toa_threshold(r, crange, 0.5, 1)  # threshold at the half-rise level
        assert ss.valid and th.valid
        assert ss.toa_index_up == pytest.approx(th.toa_index_up, abs=1.5)

    def test_weak_direct_before_strong_mpc(self):
        # direct at 0.4x of a reflection 10 ns later: min delay of top-3 wins
        r = _toa_fixture(direct_rel=0.4, mpc=((10.0, 2.5),))
        est = toa_ss(r, chunk(r, 128e-9, 6)[0], 0.1, 3, self.template(), 1)
        assert est.valid
        peak = PARAMS.guard_offset + pulse_edge_offset_samples(900.0) * L
        assert abs(est.toa_index_up - peak) < 3 * L  # near the direct path, not the MPC

    def test_k1_returns_strongest(self):
        r = _toa_fixture(direct_rel=0.4, mpc=((10.0, 2.5),))
        est = toa_ss(r, chunk(r, 128e-9, 6)[0], 0.1, 1, self.template(), 1)
        assert est.valid
        mpc_pos = PARAMS.guard_offset + 10.0 / 1.0016 * L
        assert abs(est.toa_index_up - mpc_pos) < 3 * L  # the reflection

    def test_below_threshold_invalid(self):
        r = _toa_fixture()
        est = toa_ss(r, chunk(r, 128e-9, 6)[2], 0.5, 3, self.template(), 3)
        assert not est.valid and est.rejection_reason == BELOW_THRESHOLD

    def test_chunk_start_candidate_flagged_ambiguous(self):
        pos = [PARAMS.guard_offset / L, 3833 / L + 0.5]  # junk right at chunk 2's start
        cir = make_cir(pos, [1.0, 0.8], fp_index=pos[0])
        r = rearrange(cir, PARAMS)
        est = toa_ss(r, chunk(r, 128e-9, 6)[1], 0.1, 3, self.template(), 2)
        assert not est.valid and est.rejection_reason == MPC_AMBIGUOUS


class TestToaEstimateInvariant:
    def test_valid_iff_no_reason(self):
        with pytest.raises(ValueError):
            ToaEstimate(1, toa_index_up=5.0, valid=True, rejection_reason=BELOW_THRESHOLD)
        with pytest.raises(ValueError):
            ToaEstimate(1, valid=False, rejection_reason=None)


class TestNoiseFloorComparison:
    def test_rearranged_tail_quieter_than_raw(self):
        # the tail of the re-arranged CIR excludes responses, so its std is
        # below the std of the raw buffer that still contains them
        rng = np.random.default_rng(11)
        cir, _ = _six_cir(rng, noise=0.004)
        r = rearrange(cir, PARAMS)
        raw_norm = cir.amplitudes / cir.amplitudes.max()
        assert noise_std(r) <= float(np.std(raw_norm))
