import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ewsub import sigstream as ss
from ewsub.dataset import ModType
from helpers import qam_grid_min_distance

NEUTRAL = ss.ChannelParams()


def bpsk_symbols(n, seed=0):
    return ss.map_symbols(np.random.default_rng(seed).integers(0, 2, n), ModType.BPSK)


class TestConstellations:
    def test_bpsk_mapping(self):
        np.testing.assert_array_equal(ss.map_symbols([0, 1], ModType.BPSK), [1 + 0j, -1 + 0j])

    @pytest.mark.parametrize("mod, size", [(ModType.BPSK, 2), (ModType.QPSK, 4), (ModType.PSK8, 8),
                                           (ModType.QAM16, 16), (ModType.QAM64, 64), (ModType.PAM4, 4)])
    def test_cardinality_and_power(self, mod, size):
        pts = ss.map_symbols(np.arange(size), mod)
        assert len(np.unique(np.round(pts, 12))) == size
        assert np.mean(np.abs(pts) ** 2) == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("mod, m", [(ModType.QAM16, 16), (ModType.QAM64, 64)])
    def test_min_distance(self, mod, m):
        pts = ss.map_symbols(np.arange(m), mod)
        diff = np.abs(pts[:, None] - pts[None])
        got = diff[~np.eye(m, dtype=bool)].min()
        assert got == pytest.approx(qam_grid_min_distance(m), abs=1e-12)
        if m == 64:
            assert got == pytest.approx(2 / math.sqrt(42), abs=1e-12)

    def test_gray_neighbours_differ_by_one_bit(self):
        pts = ss.map_symbols(np.arange(16), ModType.QAM16)
        dmin = qam_grid_min_distance(16)
        for a in range(16):
            for b in range(a + 1, 16):
                if abs(pts[a] - pts[b]) < dmin * 1.01:
                    assert bin(a ^ b).count("1") == 1

    def test_rejects(self):
        with pytest.raises(ValueError):
            ss.map_symbols([4], ModType.QPSK)
        with pytest.raises(ValueError):
            ss.map_symbols([0], ModType.WBFM)
        with pytest.raises(ValueError):
            ss.map_symbols(np.array([0.5]), ModType.QPSK)


class TestChannel:
    def test_rrc_unit_energy_and_symmetry(self):
        h = ss.rrc_taps(8)
        assert len(h) == 8 * ss.RRC_SPAN + 1
        assert np.sum(h**2) == pytest.approx(1.0)
        np.testing.assert_allclose(h, h[::-1], atol=1e-12)

    def test_identity_channel_is_pulse_shaping(self):
        sym = bpsk_symbols(32)
        up = np.zeros(32 * 8, dtype=complex)
        up[::8] = sym
        np.testing.assert_allclose(ss.shape_and_impair(sym, NEUTRAL, 8), np.convolve(up, ss.rrc_taps(8)), atol=1e-12)

    def test_phase_pi_negates(self):
        sym = bpsk_symbols(16, seed=1)
        out = ss.shape_and_impair(sym, ss.ChannelParams(phase=math.pi), 8)
        np.testing.assert_allclose(out, -ss.shape_and_impair(sym, NEUTRAL, 8), atol=1e-12)

    def test_cfo_phase_ramp(self):
        sym = bpsk_symbols(32, seed=2)
        ref = ss.shape_and_impair(sym, NEUTRAL, 8)[:256]
        out = ss.shape_and_impair(sym, ss.ChannelParams(cfo=0.01), 8)[:256]
        ok = np.abs(ref) > 1e-3
        ang = np.unwrap(np.angle(out[ok] / ref[ok]))
        n = np.flatnonzero(ok)
        slope = np.polyfit(n, ang, 1)[0]
        assert slope == pytest.approx(2 * np.pi * 0.01, rel=1e-9)

    def test_taps_energy_normalized(self):
        p = ss.ChannelParams(taps=(2.0, 1j))
        assert sum(abs(t) ** 2 for t in p.taps) == pytest.approx(1.0)

    @pytest.mark.parametrize("kw", [dict(amplitude=0), dict(timing_offset=1.0), dict(taps=()), dict(taps=(0,))])
    def test_invalid_params(self, kw):
        with pytest.raises(ValueError):
            ss.ChannelParams(**kw)


class TestAnalog:
    def test_rejects_digital(self):
        with pytest.raises(ValueError):
            ss.synth_analog(ModType.BPSK, 100, NEUTRAL)

    def test_amdsb_silence(self):
        src = np.ones(200)
        src[50:120] = 0
        out = ss.synth_analog(ModType.AMDSB, 200, NEUTRAL, source=src)
        assert np.all(out[50:120] == 0)

    def test_wbfm_constant_source(self):
        out = ss.synth_analog(ModType.WBFM, 300, NEUTRAL, source=np.full(300, 0.5))
        inst = np.diff(np.unwrap(np.angle(out))) / (2 * np.pi)
        np.testing.assert_allclose(inst, 0.5 * ss.FM_DEVIATION / 16, atol=1e-12)

    def test_wbfm_two_tone_demod(self):
        n = 8192
        t = np.arange(n)
        f1, f2 = 5 / 1024, 23 / 1024
        src = 0.5 * np.cos(2 * np.pi * f1 * t) + 0.5 * np.cos(2 * np.pi * f2 * t)
        out = ss.synth_analog(ModType.WBFM, n, NEUTRAL, source=src)
        demod = np.diff(np.unwrap(np.angle(out)))
        spec = np.abs(np.fft.rfft(demod - demod.mean(), 4 * n))
        freqs = np.fft.rfftfreq(4 * n)
        top = sorted(freqs[np.argsort(spec)[::-1][:40]])
        peaks = [f for f in (f1, f2) if any(abs(p - f) <= 0.02 * f for p in top)]
        assert peaks == [f1, f2]

    def test_source_band_limited(self):
        src = ss.analog_source(4096, 8, np.random.default_rng(0))
        spec = np.abs(np.fft.rfft(src)) ** 2
        freqs = np.fft.rfftfreq(4096)
        assert spec[freqs > 1 / 16 + 1e-3].sum() / spec.sum() < 0.01


class TestNoise:
    def test_infinite_snr_is_identity(self):
        x = np.exp(1j * np.arange(50))
        np.testing.assert_array_equal(ss.add_noise(x, math.inf), x)

    def test_zero_db_variance(self):
        x = np.ones(100_000, dtype=complex)
        n = ss.add_noise(x, 0.0, np.random.default_rng(0)) - x
        assert np.mean(np.abs(n) ** 2) == pytest.approx(1.0, rel=0.05)

    def test_ten_db_estimate(self):
        rng = np.random.default_rng(1)
        x = ss.shape_and_impair(bpsk_symbols(1300, seed=3), NEUTRAL, 8)[:10_000]
        n = ss.add_noise(x, 10.0, rng) - x
        snr = 10 * np.log10(np.mean(np.abs(x) ** 2) / np.mean(np.abs(n) ** 2))
        assert snr == pytest.approx(10.0, abs=0.5)

    def test_zero_energy_rejected(self):
        with pytest.raises(ValueError):
            ss.add_noise(np.zeros(10), 5)


class TestFrames:
    def test_counts(self):
        assert len(ss.frame_windows(np.zeros(128), 128, 64)) == 1
        f = ss.frame_windows(np.arange(256) + 0j, 128, 64)
        assert len(f) == 3 and list(f[:, 0, 0]) == [0, 64, 128]

    def test_iq_split(self):
        f = ss.frame_windows(np.array([1 + 2j, 3 + 4j]), 2, 1)
        assert f[0, 0, 0] == 1 and f[0, 1, 0] == 2

    def test_short_rejected(self):
        with pytest.raises(ValueError):
            ss.frame_windows(np.zeros(10), 16, 8)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 64), st.data())
    def test_count_formula(self, d, data):
        shift = data.draw(st.integers(1, d))
        n = data.draw(st.integers(d, 400))
        assert len(ss.frame_windows(np.zeros(n), d, shift)) == (n - d) // shift + 1


class TestDataset:
    def cfg(self, **kw):
        base = dict(d=32, shift=16, snr_grid=(-10, 0, 10), frames_per_class_per_snr=12, seed=3)
        base.update(kw)
        return ss.GenConfig(**base)

    def test_balance(self):
        ds = ss.generate_dataset(self.cfg())
        assert len(ds) == 10 * 3 * 12
        for c in range(10):
            for s in (-10, 0, 10):
                assert np.sum((ds.labels == c) & (ds.snr == s)) == 12
        assert np.all(np.isfinite(ds.x))

    def test_deterministic_across_workers(self):
        a = ss.generate_dataset(self.cfg())
        b = ss.generate_dataset(self.cfg(), workers=2)
        assert a.x.tobytes() == b.x.tobytes()
        assert np.array_equal(a.labels, b.labels) and np.array_equal(a.snr, b.snr)

    def test_seed_changes_data(self):
        assert not np.array_equal(ss.generate_dataset(self.cfg()).x, ss.generate_dataset(self.cfg(seed=4)).x)

    def test_metadata(self):
        ds = ss.generate_dataset(self.cfg(frames_per_class_per_snr=1))
        assert ds.meta["sampling_over_nyquist"] == pytest.approx(8 / 1.35 / 1)
        assert ds.meta["gen_config"]["d"] == 32

    @pytest.mark.parametrize("kw", [dict(shift=0), dict(shift=33), dict(snr_grid=()), dict(snr_grid=(0, 0)),
                                    dict(sps=1)])
    def test_invalid_config(self, kw):
        with pytest.raises(ValueError):
            ss.generate_dataset(self.cfg(**kw))
