import numpy as np
import pytest

import checks
from ccl_pad.rppg import (
    LightSchedule,
    NyquistError,
    RoiTrace,
    extract_rppg,
    periodicity_score,
    psd,
    synth_trace,
)


def test_schedule_validation():
    with pytest.raises(ValueError):
        LightSchedule("periodic", 5.0, 0.01)
    with pytest.raises(ValueError):
        LightSchedule("constant", base_lux=200.0)
    s = LightSchedule.random(np.random.default_rng(0))
    assert 0.7 <= s.frequency <= 4.0 and 400 <= s.base_lux <= 1600


def test_trace_shape_and_determinism():
    a = synth_trace(True, 1.2, LightSchedule(), rng=np.random.default_rng(1))
    b = synth_trace(True, 1.2, LightSchedule(), rng=np.random.default_rng(1))
    assert a.rgb.shape == (3, 300) and np.array_equal(a.rgb, b.rgb)
    assert (a.rgb >= 0).all() and a.duration == 10.0


def test_nyquist_and_duration_errors():
    with pytest.raises(NyquistError):
        synth_trace(True, 3.0, LightSchedule(), frame_rate=5.0)
    with pytest.raises(ValueError):
        synth_trace(True, 1.2, LightSchedule(), duration=1.0)


def test_trace_examples():
    r = checks.rppg_trial(0)
    bin_width = r["bin_width"][0]
    assert abs(r["live"][0] - 1.2) <= bin_width and r["live"][1] > 100
    assert abs(r["mask_periodic"][0] - 2.0) <= bin_width
    assert r["mask_constant"][1] < r["live"][1]


def test_extract_examples():
    const = RoiTrace(np.full((3, 300), 80.0), 30.0, False, 0.0)
    assert not extract_rppg(const).any()
    t = np.arange(300) / 30.0
    x = np.sin(2 * np.pi * 1.2 * t)
    trace = RoiTrace(np.tile(x + 5.0, (3, 1)), 30.0, True, 1.2)
    d = extract_rppg(trace)
    basis = np.exp(-2j * np.pi * 1.2 * t)
    assert abs((d * basis).sum()) ** 2 >= 0.9 * abs((x * basis).sum()) ** 2
    rng = np.random.default_rng(0)
    ch = rng.random(300) + 2.0
    same = RoiTrace(np.tile(ch, (3, 1)), 30.0, True, 1.2)
    single = RoiTrace(np.tile(ch, (3, 1))[:1].repeat(3, 0), 30.0, True, 1.2)
    assert np.allclose(extract_rppg(same), extract_rppg(single), rtol=0, atol=1e-12)


def test_psd_bin_aligned_sinusoid():
    T, fr = 300, 30.0
    f0 = 12 * fr / T
    x = np.sin(2 * np.pi * f0 * np.arange(T) / fr)
    freqs, power = psd(x, fr)
    k = int(np.argmax(power))
    assert freqs[k] == f0 and freqs[1] == fr / T
    assert power[k - 1 : k + 2].sum() >= 0.99 * power.sum()


def test_psd_parseval():
    rng = np.random.default_rng(3)
    for T in (64, 255, 300):
        x = rng.standard_normal(T) * 3 + 1
        _, power = psd(x, 30.0)
        w = np.hanning(T + 1)[:-1]
        energy = (((x - x.mean()) * w) ** 2).sum() / (w**2).sum()
        assert abs(power.sum() - energy) <= 1e-9 * energy


def test_psd_zero_and_short():
    _, power = psd(np.zeros(32), 30.0)
    assert not power.any()
    with pytest.raises(ValueError):
        psd(np.ones(3), 30.0)


def test_white_noise_has_no_concentrated_peak():
    # Periodogram bins of white noise are ~exponential: P(bin > 5 x median) = 2**-5 each.
    rates, peaked = [], 0
    for seed in range(100):
        _, power = psd(np.random.default_rng(seed).standard_normal(300), 30.0)
        med = np.median(power)
        rates.append((power[1:-1] > 5 * med).mean())
        peaked += (power > 20 * med).any()
    assert 0.02 <= np.mean(rates) <= 0.045
    assert peaked <= 5


@pytest.mark.xfail(strict=True, reason="with ~150 exponential bins some bin exceeds 5x the median in almost every draw")
def test_white_noise_five_times_median_literal():
    passes = 0
    for seed in range(100):
        _, power = psd(np.random.default_rng(seed).standard_normal(300), 30.0)
        passes += not (power > 5 * np.median(power)).any()
    assert passes >= 95


def test_periodicity_errors():
    freqs, power = psd(np.random.default_rng(0).standard_normal(300), 30.0)
    with pytest.raises(ValueError):
        periodicity_score(freqs, power, (0.7, 20.0))
    with pytest.raises(ValueError):
        periodicity_score(freqs, power, (1.01, 1.02))


def test_pseudo_liveness_over_seeds():
    trials = [checks.rppg_trial(s) for s in range(20)]
    live = np.median([t["live"][1] for t in trials])
    mask = np.median([t["mask_periodic"][1] for t in trials])
    assert mask / live >= 0.8
