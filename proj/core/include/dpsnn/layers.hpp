#pragma once

#include <span>

#include "dpsnn/array.hpp"
#include "dpsnn/neurons.hpp"

namespace dpsnn {

struct EncoderConfig {
    long L = 80;       // filter length in samples
    long stride = 40;  // frame hop in samples (L/2: 50% overlap)
    long N = 512;      // encoder channels

    long frames_for(long t_samples) const {
        if (t_samples < L) throw ShapeError("input shorter than one frame");
        return (t_samples - L) / stride + 1;
    }
    long samples_for(long t_frames) const { return (t_frames - 1) * stride + L; }
};

struct SeparatorConfig {
    long B = 256;    // bottleneck channels
    long H = 512;    // SCNN output channels, divisible by B
    long K_ctx = 4;  // SCNN temporal context steps
};

enum class GateMode { kBinarize, kPassAbove };

struct SuppressionGate {
    Real threshold = 0.0;  // learnable
    GateMode mode = GateMode::kBinarize;
};

// ---------------------------------------------------------------------------
// Frame-level kernels. The streaming runtime and the offline (tape) ops both
// call these, keeping floating-point accumulation order identical so that
// block-based and full-sequence inference agree bit-for-bit.
// ---------------------------------------------------------------------------

// y = W x, W is [rows x cols] row-major, accumulation ascending over cols
inline void matvec(const Real* w, const Real* x, Real* y, long rows, long cols) {
    for (long r = 0; r < rows; ++r) {
        Real acc = 0.0;
        const Real* wr = w + r * cols;
        for (long c = 0; c < cols; ++c) acc += wr[c] * x[c];
        y[r] = acc;
    }
}

// encoder frame: features[n] = relu( sum_k kernel[n,0,k] * frame[k] )
inline void encode_frame(const Real* kernel, const Real* frame, Real* features, long n_channels,
                         long frame_len) {
    for (long n = 0; n < n_channels; ++n) {
        Real acc = 0.0;
        const Real* kr = kernel + n * frame_len;
        for (long k = 0; k < frame_len; ++k) acc += kr[k] * frame[k];
        features[n] = acc > 0.0 ? acc : 0.0;
    }
}

// per-frame channel layer norm: zero mean / unit variance across channels,
// then gain/bias; strictly causal (uses this frame only)
inline void layernorm_frame(const Real* x, Real* y, const Real* gain, const Real* bias, long c,
                            Real eps) {
    Real mean = 0.0;
    for (long i = 0; i < c; ++i) mean += x[i];
    mean /= static_cast<Real>(c);
    Real var = 0.0;
    for (long i = 0; i < c; ++i) {
        const Real d = x[i] - mean;
        var += d * d;
    }
    var /= static_cast<Real>(c);
    const Real inv_sd = 1.0 / std::sqrt(var + eps);
    for (long i = 0; i < c; ++i) y[i] = gain[i] * (x[i] - mean) * inv_sd + bias[i];
}

inline void binarize_frame(const Real* x, Real* y, long n, Real threshold) {
    for (long i = 0; i < n; ++i) y[i] = heaviside(x[i] - threshold);
}

inline void pass_above_frame(const Real* x, Real* y, long n, Real threshold) {
    for (long i = 0; i < n; ++i) y[i] = x[i] * heaviside(x[i] - threshold);
}

// SCNN grouped causal convolution for one time step. ctx holds the last K_ctx
// input frames oldest-first (zero-filled before the stream start); each input
// channel g feeds its own H/B filters. Bias is added after the tap sum.
inline void scnn_conv_frame(const Real* kernel, const Real* bias, const Real* ctx, Real* current,
                            long h_channels, long b_channels, long k_ctx) {
    const long filters_per_group = h_channels / b_channels;
    for (long h = 0; h < h_channels; ++h) {
        const long g = h / filters_per_group;
        Real acc = 0.0;
        const Real* kr = kernel + h * k_ctx;
        for (long k = 0; k < k_ctx; ++k) acc += kr[k] * ctx[k * b_channels + g];
        current[h] = acc + bias[h];
    }
}

// decoder frame: wave[k] = sum_c features[c] * kernel[c,0,k]
inline void decode_frame(const Real* kernel, const Real* features, Real* wave, long n_channels,
                         long frame_len) {
    for (long k = 0; k < frame_len; ++k) {
        Real acc = 0.0;
        for (long c = 0; c < n_channels; ++c) acc += features[c] * kernel[c * frame_len + k];
        wave[k] = acc;
    }
}

inline void sigmoid_frame(const Real* x, Real* y, long n) {
    for (long i = 0; i < n; ++i) y[i] = sigmoid(x[i]);
}

}  // namespace dpsnn
