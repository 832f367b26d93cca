import wave

import numpy as np
import pytest
import scipy.signal

from spkrefine.dsp import (
    AudioFormatError,
    FeatureConfig,
    StreamingFeatureExtractor,
    TooShortError,
    assemble_features,
    deltas,
    extract_features,
    frame_and_window,
    hann_periodic,
    mel_center_frequencies,
    mel_filterbank,
    mfcc,
    read_wav,
    write_wav,
)

CFG = FeatureConfig()


# ---------------------------------------------------------------- framing

def test_frame_count_one_second():
    assert frame_and_window(np.zeros(16000)).shape == (98, 400)


def test_zero_waveform_gives_zero_frames():
    assert not frame_and_window(np.zeros(1000)).any()


def test_exactly_one_frame():
    assert frame_and_window(np.ones(400)).shape == (1, 400)


def test_too_short():
    with pytest.raises(TooShortError):
        frame_and_window(np.ones(399))


def test_periodic_hann_matches_scipy():
    np.testing.assert_allclose(hann_periodic(400), scipy.signal.get_window("hann", 400), atol=1e-15)


def test_frames_are_windowed_slices():
    x = np.random.default_rng(0).uniform(-1, 1, 1000)
    frames = frame_and_window(x)
    np.testing.assert_array_equal(frames[2], x[320:720] * hann_periodic(400))


# ---------------------------------------------------------------- mfcc

def test_silence_is_constant_over_time():
    m = mfcc(frame_and_window(np.zeros(8000)))
    assert m.shape == (27, 48)
    assert np.all(m == m[:, :1])


def _dft_power(frame, n_fft):
    n = np.arange(len(frame))
    k = np.arange(n_fft // 2 + 1)
    basis = np.exp(-2j * np.pi * np.outer(k, n) / n_fft)
    spec = basis @ frame
    return np.abs(spec) ** 2


def test_tone_peaks_in_nearest_mel_filter():
    t = np.arange(4000) / 16000
    frames = frame_and_window(0.5 * np.sin(2 * np.pi * 1000 * t))
    fb = mel_filterbank()
    oracle = fb @ _dft_power(frames[3], CFG.fft_size)
    nearest = np.argmin(np.abs(mel_center_frequencies() - 1000))
    assert np.argmax(oracle) == nearest
    ours = fb @ (np.abs(np.fft.rfft(frames[3], CFG.fft_size)) ** 2)
    np.testing.assert_allclose(ours, oracle, rtol=1e-9, atol=1e-9)


def test_white_noise_c0_dominates_and_matches_direct_dct():
    x = np.random.default_rng(1).uniform(-1, 1, 400)
    frame = frame_and_window(x)
    coeffs = mfcc(frame)[:, 0]
    assert np.argmax(np.abs(coeffs)) == 0
    logmel = np.log(np.maximum(mel_filterbank() @ _dft_power(frame[0], CFG.fft_size), CFG.log_floor))
    n = len(logmel)
    direct = np.array([
        np.sqrt((1 if k == 0 else 2) / n) * sum(logmel[i] * np.cos(np.pi * k * (2 * i + 1) / (2 * n))
                                                for i in range(n))
        for k in range(CFG.n_mfcc)
    ])
    np.testing.assert_allclose(coeffs, direct, atol=1e-9)


# ---------------------------------------------------------------- deltas

def test_constant_matrix_has_zero_deltas():
    d, d2 = deltas(np.full((4, 9), 3.7))
    assert not d.any() and not d2.any()


def test_linear_ramp_deltas():
    m = np.tile(np.arange(12.0), (3, 1))
    d, d2 = deltas(m, 2)
    np.testing.assert_allclose(d[:, 2:-2], 1.0)
    np.testing.assert_allclose(d2[:, 4:-4], 0.0, atol=1e-12)


def _delta_oracle(m, w):
    C, T = m.shape
    out = np.zeros_like(m)
    denom = 2 * sum(n * n for n in range(1, w + 1))
    for c in range(C):
        for t in range(T):
            s = 0.0
            for n in range(1, w + 1):
                s += n * (m[c, min(T - 1, t + n)] - m[c, max(0, t - n)])
            out[c, t] = s / denom
    return out


def test_random_deltas_match_formula():
    m = np.random.default_rng(2).standard_normal((3, 5))
    d, d2 = deltas(m, 2)
    np.testing.assert_allclose(d, _delta_oracle(m, 2), atol=1e-12)
    np.testing.assert_allclose(d2, _delta_oracle(_delta_oracle(m, 2), 2), atol=1e-12)


def test_single_frame_deltas():
    d, d2 = deltas(np.ones((2, 1)))
    assert d.shape == (2, 1) and not d.any()


# ---------------------------------------------------------------- assembly

def test_assemble_80_rows():
    m = np.random.default_rng(3).standard_normal((27, 10))
    d, d2 = deltas(m)
    assert assemble_features(m, d, d2).shape == (80, 10)


def test_assemble_two_coefficients():
    m = np.ones((2, 4))
    assert assemble_features(m, m, m).shape == (5, 4)


def test_assemble_drops_c0():
    m = np.zeros((4, 6))
    m[0] = 1234.5
    out = assemble_features(m, np.zeros_like(m), np.zeros_like(m))
    assert not np.any(out[:3] == 1234.5)


def test_assemble_rejects_mismatch():
    with pytest.raises(ValueError):
        assemble_features(np.ones((27, 5)), np.ones((27, 4)), np.ones((27, 5)))


def test_extract_features_deterministic():
    x = np.random.default_rng(4).uniform(-0.5, 0.5, 16000)
    a, b = extract_features(x), extract_features(x.copy())
    assert a.shape == (80, 98)
    assert np.array_equal(a, b)


def test_cmn_flag_zero_means_static_block():
    x = np.random.default_rng(5).uniform(-0.5, 0.5, 8000)
    f = extract_features(x, FeatureConfig(cmn=True))
    np.testing.assert_allclose(f[:26].mean(axis=1), 0.0, atol=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_streaming_matches_offline(seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-0.5, 0.5, int(rng.integers(400, 20000)))
    offline = extract_features(x)
    ext = StreamingFeatureExtractor()
    parts, i = [], 0
    while i < len(x):
        n = int(rng.integers(1, 3000))
        parts.append(ext.push(x[i:i + n]))
        i += n
    parts.append(ext.finish())
    streamed = np.concatenate(parts, axis=1)
    assert np.array_equal(streamed, offline)


def test_single_frame_features_match_batch():
    x = np.random.default_rng(6).uniform(-0.5, 0.5, 3000)
    frames = frame_and_window(x)
    batch = mfcc(frames)
    for t in range(len(frames)):
        assert np.array_equal(mfcc(frames[t:t + 1])[:, 0], batch[:, t])


# ---------------------------------------------------------------- config + wav

@pytest.mark.parametrize("kwargs", [
    dict(n_mfcc=1), dict(frame_len_ms=10, hop_ms=10), dict(fft_size=256), dict(sample_rate=8000),
])
def test_invalid_feature_config(kwargs):
    with pytest.raises(ValueError):
        FeatureConfig(**kwargs)


def test_wav_roundtrip(tmp_path):
    x = np.random.default_rng(7).uniform(-0.9, 0.9, 1234)
    write_wav(tmp_path / "a.wav", x)
    y = read_wav(tmp_path / "a.wav")
    np.testing.assert_allclose(y, x, atol=1 / 32768)


def _write_raw(path, channels=1, width=2, rate=16000):
    with wave.open(str(path), "wb") as f:
        f.setnchannels(channels)
        f.setsampwidth(width)
        f.setframerate(rate)
        f.writeframes(b"\x00" * (channels * width * 100))


@pytest.mark.parametrize("kw", [dict(channels=2), dict(width=1), dict(rate=8000), dict(width=3)])
def test_wav_rejects_other_formats(tmp_path, kw):
    _write_raw(tmp_path / "x.wav", **kw)
    with pytest.raises(AudioFormatError):
        read_wav(tmp_path / "x.wav")


def test_wav_rejects_garbage(tmp_path):
    (tmp_path / "x.wav").write_bytes(b"not a wav file at all")
    with pytest.raises(AudioFormatError):
        read_wav(tmp_path / "x.wav")
