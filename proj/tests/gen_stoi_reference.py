#!/usr/bin/env python3
"""Generates frozen STOI reference values for the C++ test suite.

Implements the standard short-time objective intelligibility measure with
scipy/numpy primitives (rational resampling to 10 kHz, silent-frame removal,
512-point STFT of 256-sample frames, 15 one-third-octave bands from 150 Hz,
30-frame segments with clipped normalized correlation) and evaluates it on
deterministic trigonometric test signals that tests/test_metrics.cpp
regenerates sample-for-sample. Output goes to tests/stoi_reference.inc.

Run from the repository root:  python3 tests/gen_stoi_reference.py
"""

import numpy as np
from scipy.signal import resample_poly

FS = 10000
FRAME = 256
HOP = 128
NFFT = 512
NUM_BANDS = 15
MIN_FREQ = 150.0
SEG = 30
BETA = -15.0
DYN_RANGE = 40.0
EPS = 1e-16


def thirdoct():
    f = np.linspace(0, FS, NFFT + 1)[: NFFT // 2 + 1]
    k = np.arange(NUM_BANDS, dtype=float)
    freq_low = MIN_FREQ * np.power(2.0, (2 * k - 1) / 6)
    freq_high = MIN_FREQ * np.power(2.0, (2 * k + 1) / 6)
    obm = np.zeros((NUM_BANDS, len(f)))
    for i in range(NUM_BANDS):
        fl = int(np.argmin(np.square(f - freq_low[i])))
        fh = int(np.argmin(np.square(f - freq_high[i])))
        obm[i, fl:fh] = 1
    return obm


def hann(n):
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(1, n + 1) / (n + 1))


def frame_signal(x):
    w = hann(FRAME)
    n = (len(x) - FRAME) // HOP + 1
    if n < 1:
        return np.zeros((0, FRAME))
    idx = np.arange(FRAME) + HOP * np.arange(n)[:, None]
    return x[idx] * w


def remove_silent(x, y):
    w = hann(FRAME)
    n = (len(x) - FRAME) // HOP + 1
    idx = np.arange(FRAME) + HOP * np.arange(n)[:, None]
    xf = x[idx] * w
    yf = y[idx] * w
    energy = 20 * np.log10(np.linalg.norm(xf, axis=1) + EPS)
    keep = energy > np.max(energy) - DYN_RANGE
    xf, yf = xf[keep], yf[keep]
    xs = np.zeros((len(xf) - 1) * HOP + FRAME)
    ys = np.zeros_like(xs)
    for j in range(len(xf)):
        xs[j * HOP : j * HOP + FRAME] += xf[j]
        ys[j * HOP : j * HOP + FRAME] += yf[j]
    return xs, ys


def band_envelopes(x, obm):
    spec = np.fft.rfft(frame_signal(x), NFFT, axis=1)
    return np.sqrt(obm @ (np.abs(spec) ** 2).T)


def stoi(ref, deg, fs):
    if fs != FS:
        ref = resample_poly(ref, FS, fs)
        deg = resample_poly(deg, FS, fs)
    ref, deg = remove_silent(ref, deg)
    obm = thirdoct()
    xb = band_envelopes(ref, obm)
    yb = band_envelopes(deg, obm)
    clip = 10 ** (-BETA / 20)
    vals = []
    for m in range(SEG, xb.shape[1] + 1):
        xs = xb[:, m - SEG : m]
        ys = yb[:, m - SEG : m]
        alpha = np.sqrt(np.sum(xs**2, axis=1, keepdims=True) /
                        (np.sum(ys**2, axis=1, keepdims=True) + EPS))
        ys = np.minimum(alpha * ys, xs * (1 + clip))
        xs = xs - xs.mean(axis=1, keepdims=True)
        ys = ys - ys.mean(axis=1, keepdims=True)
        corr = np.sum(xs * ys, axis=1) / (
            np.linalg.norm(xs, axis=1) * np.linalg.norm(ys, axis=1) + EPS)
        vals.append(corr)
    return float(np.mean(vals))


def test_signals():
    fs = 16000
    i = np.arange(fs, dtype=float)
    clean = (0.6 * np.sin(2 * np.pi * 220.0 * i / fs)
             + 0.3 * np.sin(2 * np.pi * 440.0 * i / fs + 1.0)
             + 0.2 * np.sin(2 * np.pi * 880.0 * i / fs + 2.0))
    noise = np.sin(12345.6789 * (i + 1.0))
    return clean, noise, fs


def main():
    clean, noise, fs = test_signals()
    gains = [0.05, 0.2, 0.6]
    scores = [stoi(clean, clean + g * noise, fs) for g in gains]
    with open("tests/stoi_reference.inc", "w") as f:
        f.write("// generated by tests/gen_stoi_reference.py -- do not edit\n")
        f.write("static constexpr double kStoiRefGains[] = {%s};\n"
                % ", ".join("%r" % g for g in gains))
        f.write("static constexpr double kStoiRefScores[] = {%s};\n"
                % ", ".join("%.10f" % s for s in scores))
    for g, s in zip(gains, scores):
        print(f"gain={g}  stoi={s:.6f}")


if __name__ == "__main__":
    main()
