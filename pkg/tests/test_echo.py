import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from ringpose.chirp import Waveform, generate_chirp
from ringpose.echo import (
    EchoConfig,
    EchoFrame,
    EchoProcessor,
    EchoProfile,
    build_profile,
    correlation_envelope,
    crop_frame,
    cross_correlate,
    distance_to_pixel,
    estimate_t0,
    peak_pixel,
    pixel_to_distance,
    read_profile_csv,
    to_pgm,
    write_profile_csv,
    write_profile_pgm,
)
from ringpose.errors import EmptyInputError, ParameterError, SequencingError
from ringpose.sim import RingPlacement, SimConfig, render_reflectors

TPL = generate_chirp()


class TestConfig:
    def test_pitch_and_ranges(self):
        cfg = EchoConfig()
        assert cfg.pixel_pitch_mm == pytest.approx(3.43)
        assert cfg.crop_range_mm == pytest.approx(185.22)
        assert cfg.frame_period == pytest.approx(0.012)

    def test_invalid(self):
        with pytest.raises(ParameterError):
            EchoConfig(crop_len=601)


class TestCorrelate:
    def test_matches_direct_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            a, b = rng.normal(size=600), rng.normal(size=600)
            fast, slow = cross_correlate(a, b), oracles.correlate_direct(a, b)
            assert np.max(np.abs(fast - slow)) <= 1e-6 * np.max(np.abs(slow))

    def test_self_and_shift(self):
        x = TPL.samples
        c = cross_correlate(x, x)
        assert np.argmax(c) == 0 and c[0] == pytest.approx(np.sum(x ** 2))
        assert np.argmax(cross_correlate(np.roll(x, 25), x)) == 25

    def test_zeros(self):
        assert not np.any(cross_correlate(np.zeros(600), TPL.samples))

    def test_mismatch(self):
        with pytest.raises(ParameterError):
            cross_correlate(np.zeros(599), TPL.samples)
        with pytest.raises(ParameterError):
            cross_correlate(Waveform(np.zeros(600), 48000), TPL)

    def test_processor_equals_bandpassed_correlation(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=600)
        slow = (x @ oracles.bandpass_matrix()) @ oracles.circulant_correlator(TPL.samples)
        assert np.allclose(EchoProcessor(TPL).correlate_frame(x), slow, atol=1e-9)

    def test_envelope_matches_oracle(self):
        c = cross_correlate(np.roll(TPL.samples, 40), TPL.samples)
        assert np.allclose(correlation_envelope(c), oracles.envelope_direct(c)[0], atol=1e-9)

    def test_envelope_peaks_at_fractional_delay(self):
        # a 0.787-sample delay: raw |corr| lands two samples off, the envelope rounds correctly
        spec = np.fft.rfft(TPL.samples)
        w = 2 * np.pi * np.fft.rfftfreq(600, 1 / 50000)
        x = np.fft.irfft(spec * np.exp(-1j * w * 0.787 / 50000), n=600)
        c = cross_correlate(x, TPL.samples)
        assert peak_pixel(c) == 1


class TestT0:
    def test_median_rule(self):
        frames = [np.eye(600)[k] for k in (10, 10, 11)]
        assert estimate_t0(frames) == 10

    def test_constant(self):
        f = np.eye(600)[7] * 3
        assert estimate_t0([f] * 5) == 7

    def test_only_first_frames_count(self):
        frames = [np.eye(600)[4]] * 20 + [np.eye(600)[50]] * 40
        assert estimate_t0(frames) == 4

    def test_empty(self):
        with pytest.raises(EmptyInputError):
            estimate_t0([])

    def test_simulated_direct_path(self):
        # 5.4 mm speaker-mic separation -> 0.787 samples of delay
        p = RingPlacement()
        spk, mic = np.array([p.speaker_offset] * 20), np.array([p.mic_offset] * 20)
        rx = render_reflectors(TPL, spk, mic, np.zeros((20, 0, 3)), SimConfig(noise_std=0.005, seed=3))
        _, t0 = EchoProcessor(TPL).profile(rx)
        assert abs(t0 - round(5.4 / 343000 * 50000)) <= 1


class TestCrop:
    def test_one_hot(self):
        corr = np.zeros(600)
        corr[12 + 25] = 1
        f = crop_frame(corr, 12)
        assert isinstance(f, EchoFrame) and len(f) == 54 and np.argmax(f.values) == 25 and f.t0_offset == 12

    def test_wraps(self):
        corr = np.arange(600.0)
        assert crop_frame(corr, 580).values.tolist() == [*range(580, 600), *range(0, 34)]


class TestPixelMapping:
    def test_examples(self):
        assert pixel_to_distance(1) == pytest.approx(3.43)
        assert pixel_to_distance(0) == 0
        assert distance_to_pixel(85.75) == 25
        assert pixel_to_distance(54) == pytest.approx(185.22)
        assert pixel_to_distance(600) == pytest.approx(2058)

    def test_negative(self):
        with pytest.raises(ParameterError):
            pixel_to_distance(-1)
        with pytest.raises(ParameterError):
            distance_to_pixel(-0.1)

    @given(st.floats(0, 2000))
    def test_compose(self, d):
        assert abs(pixel_to_distance(distance_to_pixel(d)) - d) <= 0.5 * 3.43 + 1e-9


def _frames(arr):
    return [EchoFrame(c, i) for i, c in enumerate(arr)]


class TestProfile:
    def test_single(self):
        p = build_profile(_frames(np.ones((1, 54))))
        assert p.width == 1 and not np.any(p.differential)

    def test_difference(self):
        rng = np.random.default_rng(0)
        f, g = rng.normal(size=(2, 54))
        p = build_profile(_frames([f, g]))
        assert np.array_equal(p.differential[:, 1], g - f)
        assert np.array_equal(p.stacked()[0], p.differential)

    def test_static_is_zero(self):
        p = build_profile(_frames(np.tile(np.arange(54.0), (6, 1))))
        assert not np.any(p.differential)

    def test_sequencing(self):
        with pytest.raises(SequencingError):
            build_profile([EchoFrame(np.zeros(54), 0), EchoFrame(np.zeros(54), 2)])
        with pytest.raises(EmptyInputError):
            build_profile([])

    @given(st.integers(1, 30), st.integers(0, 2**31))
    def test_telescoping(self, w, seed):
        arr = np.random.default_rng(seed).integers(-1000, 1000, size=(w, 54)).astype(float)
        p = build_profile(_frames(arr))
        rebuilt = np.cumsum(p.differential, axis=1)
        assert np.array_equal(rebuilt, p.original - p.original[:, :1])

    def test_column_times(self):
        p = EchoProfile(np.zeros((54, 3)), np.zeros((54, 3)), 0.012, start_frame_index=5)
        assert np.allclose(p.column_times(), [0.06, 0.072, 0.084])


class TestProcessor:
    def test_batch_equals_per_frame(self):
        rng = np.random.default_rng(2)
        rx = Waveform(rng.normal(size=600 * 30), 50000)
        proc = EchoProcessor(TPL)
        prof, t0 = proc.profile(rx)
        cols = [crop_frame(proc.correlate_frame(f), t0).values for f in rx.samples.reshape(30, 600)]
        assert np.array_equal(np.stack(cols, 1), prof.original)

    def test_short_recording(self):
        with pytest.raises(EmptyInputError):
            EchoProcessor(TPL).profile(Waveform(np.zeros(10), 50000))


class TestExport:
    def test_csv_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        p = build_profile(_frames(rng.normal(size=(7, 54))))
        write_profile_csv(p, tmp_path)
        q = read_profile_csv(tmp_path)
        assert np.array_equal(p.original, q.original) and np.array_equal(p.differential, q.differential)

    def test_pgm(self, tmp_path):
        img = np.array([[0.0, 1.0], [2.0, 4.0]])
        assert to_pgm(img).decode().split() == ["P2", "2", "2", "255", "0", "64", "128", "255"]
        p = build_profile(_frames(np.random.default_rng(0).normal(size=(4, 54))))
        paths = write_profile_pgm(p, tmp_path)
        assert [x.name for x in paths] == ["original.pgm", "differential.pgm"]
        assert to_pgm(np.zeros((2, 2))).decode().split()[4:] == ["0"] * 4
