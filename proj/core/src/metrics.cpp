#include "dpsnn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>

namespace dpsnn {

SiSnrResult si_snr(std::span<const Real> est, std::span<const Real> ref) {
    if (est.size() != ref.size()) throw ShapeError("si_snr: length mismatch");
    const long n = static_cast<long>(est.size());
    if (n == 0) throw ShapeError("si_snr: empty input");
    Real me = 0, mr = 0;
    for (long i = 0; i < n; ++i) {
        me += est[static_cast<size_t>(i)];
        mr += ref[static_cast<size_t>(i)];
    }
    me /= static_cast<Real>(n);
    mr /= static_cast<Real>(n);
    Real er = 0, rr = 0;
    for (long i = 0; i < n; ++i) {
        const Real eh = est[static_cast<size_t>(i)] - me;
        const Real rh = ref[static_cast<size_t>(i)] - mr;
        er += eh * rh;
        rr += rh * rh;
    }
    if (rr < 1e-30) throw NumericError("si_snr: zero-energy reference");
    const Real alpha = er / rr;
    const Real target_energy = alpha * alpha * rr;
    Real err_energy = 0;
    for (long i = 0; i < n; ++i) {
        const Real d = (est[static_cast<size_t>(i)] - me) - alpha * (ref[static_cast<size_t>(i)] - mr);
        err_energy += d * d;
    }
    // Keeping the ratio free of additive floors preserves exact scale
    // invariance; the cap absorbs the zero-error (and zero-projection) cases.
    SiSnrResult r;
    if (err_energy <= 0) {
        r.value_db = kSiSnrCapDb;
        r.capped = true;
        return r;
    }
    r.value_db = 10.0 * std::log10(target_energy / err_energy);
    if (r.value_db > kSiSnrCapDb) {
        r.value_db = kSiSnrCapDb;
        r.capped = true;
    } else if (r.value_db < -kSiSnrCapDb || !std::isfinite(r.value_db)) {
        r.value_db = -kSiSnrCapDb;
    }
    return r;
}

Real si_snri(std::span<const Real> est, std::span<const Real> noisy, std::span<const Real> ref) {
    return si_snr(est, ref).value_db - si_snr(noisy, ref).value_db;
}

// ---------------------------------------------------------------------------
// STOI (Taal et al. style): 10 kHz, 256-sample frames with 50% overlap,
// 512-point DFT, 15 one-third-octave bands from 150 Hz, 30-frame segments,
// clipped normalized correlation averaged over bands and segments.
// ---------------------------------------------------------------------------

namespace {

constexpr long kStoiFs = 10000;
constexpr long kFrame = 256;
constexpr long kHop = 128;
constexpr long kFft = 512;
constexpr long kBands = 15;
constexpr Real kMinFreq = 150.0;
constexpr long kSegment = 30;
constexpr Real kBetaDb = -15.0;
constexpr Real kDynRangeDb = 40.0;
constexpr Real kEps = 1e-16;

Real bessel_i0(Real x) {
    Real sum = 1.0, term = 1.0;
    for (int k = 1; k < 50; ++k) {
        term *= (x / (2.0 * k)) * (x / (2.0 * k));
        sum += term;
        if (term < 1e-18 * sum) break;
    }
    return sum;
}

// windowed-sinc lowpass, Kaiser beta=5, DC gain 1
std::vector<Real> lowpass_kaiser(long numtaps, Real cutoff) {
    std::vector<Real> h(static_cast<size_t>(numtaps));
    const Real beta = 5.0;
    const Real i0b = bessel_i0(beta);
    const Real mid = static_cast<Real>(numtaps - 1) / 2.0;
    Real sum = 0.0;
    for (long i = 0; i < numtaps; ++i) {
        const Real m = static_cast<Real>(i) - mid;
        const Real x = cutoff * m;
        const Real sinc = (x == 0.0) ? 1.0 : std::sin(M_PI * x) / (M_PI * x);
        const Real r = 2.0 * static_cast<Real>(i) / static_cast<Real>(numtaps - 1) - 1.0;
        const Real win = bessel_i0(beta * std::sqrt(std::max(Real(0), 1.0 - r * r))) / i0b;
        h[static_cast<size_t>(i)] = cutoff * sinc * win;
        sum += h[static_cast<size_t>(i)];
    }
    for (Real& v : h) v /= sum;
    return h;
}

std::vector<Real> hann_window(long n) {
    // periodic-ish symmetric hanning without the zero endpoints
    std::vector<Real> w(static_cast<size_t>(n));
    for (long i = 0; i < n; ++i)
        w[static_cast<size_t>(i)] =
            0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<Real>(i + 1) / static_cast<Real>(n + 1));
    return w;
}

// radix-2 FFT, in-place, size must be a power of two
void fft(std::vector<std::complex<Real>>& a) {
    const size_t n = a.size();
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        const Real ang = -2.0 * M_PI / static_cast<Real>(len);
        const std::complex<Real> wl(std::cos(ang), std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            std::complex<Real> w(1.0, 0.0);
            for (size_t j = 0; j < len / 2; ++j) {
                const auto u = a[i + j];
                const auto v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

struct Spectrogram {
    std::vector<Real> power;  // [frames][kFft/2+1]
    long n_frames = 0;
};

Spectrogram stft_power(const std::vector<Real>& x, const std::vector<Real>& win) {
    Spectrogram sp;
    if (static_cast<long>(x.size()) < kFrame) return sp;
    const long n_frames = (static_cast<long>(x.size()) - kFrame) / kHop + 1;
    sp.n_frames = n_frames;
    sp.power.assign(static_cast<size_t>(n_frames * (kFft / 2 + 1)), 0.0);
    std::vector<std::complex<Real>> buf(static_cast<size_t>(kFft));
    for (long f = 0; f < n_frames; ++f) {
        std::fill(buf.begin(), buf.end(), std::complex<Real>(0, 0));
        for (long i = 0; i < kFrame; ++i)
            buf[static_cast<size_t>(i)] =
                x[static_cast<size_t>(f * kHop + i)] * win[static_cast<size_t>(i)];
        fft(buf);
        for (long k = 0; k <= kFft / 2; ++k)
            sp.power[static_cast<size_t>(f * (kFft / 2 + 1) + k)] = std::norm(buf[static_cast<size_t>(k)]);
    }
    return sp;
}

// one-third-octave band -> DFT bin assignment (nearest-bin band edges)
std::vector<std::pair<long, long>> third_octave_bins() {
    std::vector<std::pair<long, long>> bands;
    const long n_bins = kFft / 2 + 1;
    auto bin_freq = [](long k) {
        return static_cast<Real>(k) * static_cast<Real>(kStoiFs) / static_cast<Real>(kFft);
    };
    for (long b = 0; b < kBands; ++b) {
        const Real cf = kMinFreq * std::pow(2.0, static_cast<Real>(b) / 3.0);
        const Real fl = cf * std::pow(2.0, -1.0 / 6.0);
        const Real fh = cf * std::pow(2.0, 1.0 / 6.0);
        long kl = 0, kh = 0;
        Real dl = 1e30, dh = 1e30;
        for (long k = 0; k < n_bins; ++k) {
            if (std::abs(bin_freq(k) - fl) < dl) {
                dl = std::abs(bin_freq(k) - fl);
                kl = k;
            }
            if (std::abs(bin_freq(k) - fh) < dh) {
                dh = std::abs(bin_freq(k) - fh);
                kh = k;
            }
        }
        bands.emplace_back(kl, kh);
    }
    return bands;
}

// drop frames more than 40 dB below the loudest reference frame, then
// overlap-add the kept frames back into time signals
void remove_silent_frames(std::vector<Real>& x, std::vector<Real>& y) {
    const std::vector<Real> w = hann_window(kFrame);
    if (static_cast<long>(x.size()) < kFrame) return;
    const long n_frames = (static_cast<long>(x.size()) - kFrame) / kHop + 1;
    std::vector<Real> energy(static_cast<size_t>(n_frames));
    Real max_e = -1e30;
    for (long f = 0; f < n_frames; ++f) {
        Real acc = 0;
        for (long i = 0; i < kFrame; ++i) {
            const Real v = x[static_cast<size_t>(f * kHop + i)] * w[static_cast<size_t>(i)];
            acc += v * v;
        }
        energy[static_cast<size_t>(f)] = 20.0 * std::log10(std::sqrt(acc) + kEps);
        max_e = std::max(max_e, energy[static_cast<size_t>(f)]);
    }
    std::vector<long> kept;
    for (long f = 0; f < n_frames; ++f)
        if (energy[static_cast<size_t>(f)] > max_e - kDynRangeDb) kept.push_back(f);

    std::vector<Real> xs(static_cast<size_t>((static_cast<long>(kept.size()) - 1) * kHop + kFrame), 0.0);
    std::vector<Real> ys(xs.size(), 0.0);
    for (size_t j = 0; j < kept.size(); ++j) {
        const long f = kept[j];
        for (long i = 0; i < kFrame; ++i) {
            xs[j * static_cast<size_t>(kHop) + static_cast<size_t>(i)] +=
                x[static_cast<size_t>(f * kHop + i)] * w[static_cast<size_t>(i)];
            ys[j * static_cast<size_t>(kHop) + static_cast<size_t>(i)] +=
                y[static_cast<size_t>(f * kHop + i)] * w[static_cast<size_t>(i)];
        }
    }
    x = std::move(xs);
    y = std::move(ys);
}

}  // namespace

std::vector<Real> resample_poly(std::span<const Real> x, long up, long down) {
    if (up == down) return {x.begin(), x.end()};
    const long max_rate = std::max(up, down);
    const long half_len = 10 * max_rate;
    const std::vector<Real> h0 = lowpass_kaiser(2 * half_len + 1, 1.0 / static_cast<Real>(max_rate));
    const long n_in = static_cast<long>(x.size());
    const long n_out = (n_in * up + down - 1) / down;
    std::vector<Real> y(static_cast<size_t>(n_out), 0.0);
    // y[m] = sum_n x[n] * up * h[m*down + half_len - n*up]
    for (long m = 0; m < n_out; ++m) {
        const long center = m * down + half_len;
        Real acc = 0;
        // h index j = center - n*up must lie in [0, 2*half_len]
        long n_lo = (center - 2 * half_len + up - 1) / up;
        if (n_lo < 0) n_lo = 0;
        long n_hi = center / up;
        if (n_hi > n_in - 1) n_hi = n_in - 1;
        for (long n = n_lo; n <= n_hi; ++n) {
            const long j = center - n * up;
            acc += x[static_cast<size_t>(n)] * h0[static_cast<size_t>(j)];
        }
        y[static_cast<size_t>(m)] = acc * static_cast<Real>(up);
    }
    return y;
}

Real stoi(std::span<const Real> est, std::span<const Real> ref, long sample_rate) {
    if (est.size() != ref.size()) throw ShapeError("stoi: length mismatch");
    if (sample_rate <= 0) throw ShapeError("stoi: bad sample rate");
    const Real min_seconds = 0.4;
    if (static_cast<Real>(est.size()) < min_seconds * static_cast<Real>(sample_rate))
        throw ShapeError("stoi: input shorter than analysis minimum (~0.4 s)");

    std::vector<Real> x, y;
    if (sample_rate == kStoiFs) {
        x.assign(ref.begin(), ref.end());
        y.assign(est.begin(), est.end());
    } else {
        // rational resample to 10 kHz
        long up = kStoiFs, down = sample_rate;
        const long g = std::gcd(up, down);
        up /= g;
        down /= g;
        x = resample_poly(ref, up, down);
        y = resample_poly(est, up, down);
    }

    remove_silent_frames(x, y);

    const std::vector<Real> win = hann_window(kFrame);
    const Spectrogram sx = stft_power(x, win);
    const Spectrogram sy = stft_power(y, win);
    const long n_frames = std::min(sx.n_frames, sy.n_frames);
    if (n_frames < kSegment) throw ShapeError("stoi: too few frames after silence removal");

    static const std::vector<std::pair<long, long>> bands = third_octave_bins();
    const long n_bins = kFft / 2 + 1;
    std::vector<Real> xb(static_cast<size_t>(kBands * n_frames)), yb(static_cast<size_t>(kBands * n_frames));
    for (long f = 0; f < n_frames; ++f)
        for (long b = 0; b < kBands; ++b) {
            Real ax = 0, ay = 0;
            for (long k = bands[static_cast<size_t>(b)].first; k < bands[static_cast<size_t>(b)].second; ++k) {
                ax += sx.power[static_cast<size_t>(f * n_bins + k)];
                ay += sy.power[static_cast<size_t>(f * n_bins + k)];
            }
            xb[static_cast<size_t>(b * n_frames + f)] = std::sqrt(ax);
            yb[static_cast<size_t>(b * n_frames + f)] = std::sqrt(ay);
        }

    const Real clip_gain = std::pow(10.0, -kBetaDb / 20.0);
    Real d_sum = 0;
    long count = 0;
    std::vector<Real> xs(static_cast<size_t>(kSegment)), yseg(static_cast<size_t>(kSegment));
    for (long m = kSegment; m <= n_frames; ++m) {
        for (long b = 0; b < kBands; ++b) {
            Real ex = 0, ey = 0;
            for (long i = 0; i < kSegment; ++i) {
                xs[static_cast<size_t>(i)] = xb[static_cast<size_t>(b * n_frames + m - kSegment + i)];
                yseg[static_cast<size_t>(i)] = yb[static_cast<size_t>(b * n_frames + m - kSegment + i)];
                ex += xs[static_cast<size_t>(i)] * xs[static_cast<size_t>(i)];
                ey += yseg[static_cast<size_t>(i)] * yseg[static_cast<size_t>(i)];
            }
            const Real alpha = std::sqrt(ex / (ey + kEps));
            // normalize then clip the degraded band to bound its advantage
            Real mx = 0, my = 0;
            for (long i = 0; i < kSegment; ++i) {
                yseg[static_cast<size_t>(i)] = std::min(alpha * yseg[static_cast<size_t>(i)],
                                                        xs[static_cast<size_t>(i)] * (1.0 + clip_gain));
                mx += xs[static_cast<size_t>(i)];
                my += yseg[static_cast<size_t>(i)];
            }
            mx /= static_cast<Real>(kSegment);
            my /= static_cast<Real>(kSegment);
            Real nx = 0, ny = 0, dot = 0;
            for (long i = 0; i < kSegment; ++i) {
                const Real a = xs[static_cast<size_t>(i)] - mx;
                const Real c = yseg[static_cast<size_t>(i)] - my;
                nx += a * a;
                ny += c * c;
                dot += a * c;
            }
            d_sum += dot / (std::sqrt(nx) * std::sqrt(ny) + kEps);
            ++count;
        }
    }
    Real d = d_sum / static_cast<Real>(count);
    return std::clamp(d, Real(0), Real(1));
}

PowerReport power_proxy(const SpikeStats& stats, const ModelConfig& cfg, double audio_seconds,
                        bool excludes_codec, long sample_rate) {
    if (audio_seconds <= 0) throw ShapeError("power_proxy: zero audio duration");
    const double frames = static_cast<double>(stats.frames) * std::max(1L, stats.batch);
    const double fan_scnn = static_cast<double>(cfg.H / cfg.B) * static_cast<double>(cfg.K_ctx);

    double synops = 0;
    synops += frames * static_cast<double>(cfg.N) * static_cast<double>(cfg.B);  // bottleneck, dense
    synops += stats.bn_spikes * fan_scnn;                                        // SCNN
    synops += stats.scnn_spikes * static_cast<double>(cfg.B);                    // SRNN input
    synops += stats.srnn_spikes * static_cast<double>(cfg.B);                    // SRNN recurrence
    synops += stats.srnn_spikes * static_cast<double>(cfg.B);                    // readout
    synops += stats.ro_nonzeros * static_cast<double>(cfg.N);                    // mask head
    if (!excludes_codec) {
        synops += frames * static_cast<double>(cfg.N) * static_cast<double>(cfg.L);  // encoder
        synops += frames * static_cast<double>(cfg.N) * static_cast<double>(cfg.L);  // decoder
    }

    PowerReport r;
    r.excludes_codec = excludes_codec;
    r.synops_per_s = synops / audio_seconds;
    r.neuron_updates_per_s =
        frames * static_cast<double>(cfg.H + cfg.B + cfg.B) / audio_seconds;
    r.power_proxy = r.synops_per_s;
    r.pdp_proxy = r.power_proxy * (static_cast<double>(cfg.L) / static_cast<double>(sample_rate));
    return r;
}

}  // namespace dpsnn
