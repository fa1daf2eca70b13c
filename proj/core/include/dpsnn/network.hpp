#pragma once

#include <functional>
#include <map>
#include <string>

#include "dpsnn/layers.hpp"
#include "dpsnn/tape.hpp"

namespace dpsnn {

struct ModelConfig {
    long N = 512;    // encoder channels
    long B = 256;    // bottleneck channels
    long H = 512;    // SCNN channels (divisible by B)
    long L = 80;     // encoder filter length, samples
    long K_ctx = 4;  // SCNN context steps
    Real alif_b0 = 0.1;
    Real alif_beta = 1.8;
    Real plif_theta = 1.0;
    Real ln_eps = 1e-8;

    long stride() const { return L / 2; }  // 50% overlap
    EncoderConfig encoder() const { return {L, stride(), N}; }
    SeparatorConfig separator() const { return {B, H, K_ctx}; }
    void validate() const;
};

// All learnable parameters, named and shaped. The channel flow is
// N -> B -> H -> B -> N through the separator.
struct DpsnnModel {
    ModelConfig cfg;

    Array enc_kernel;      // [N,1,L]
    Array ln_gain;         // [N]
    Array ln_bias;         // [N]
    Array bn_kernel;       // [B,N] 1x1
    Array gate_bn;         // [1] binarize threshold
    Array scnn_kernel;     // [H,1,K_ctx] grouped, groups=B
    Array scnn_bias;       // [H]
    Array plif_a;          // [1]
    Array srnn_w_in;       // [B,H]
    Array srnn_w_rec;      // [B,B]
    Array srnn_tau_m;      // [B]
    Array srnn_tau_adp;    // [B]
    Array readout_w;       // [B,B]
    Array readout_tau;     // [1]
    Array gate_ro;         // [1] pass-above threshold
    Array mask_kernel;     // [N,B] 1x1
    Array dec_kernel;      // [N,1,L]

    void for_each_param(const std::function<void(const std::string&, Array&)>& fn);
    void for_each_param(const std::function<void(const std::string&, const Array&)>& fn) const;
};

struct ParamCount {
    std::map<std::string, long> per_layer;
    long total = 0;
};

struct SpikeStats {
    long frames = 0;          // separator time steps seen
    long batch = 0;
    double bn_spikes = 0;     // ones after binarizing suppression
    double scnn_spikes = 0;   // PLIF spikes
    double srnn_spikes = 0;   // ALIF spikes
    double ro_nonzeros = 0;   // nonzeros after readout suppression
    long bn_size = 0, scnn_size = 0, srnn_size = 0, ro_size = 0;  // map sizes
};

DpsnnModel init_model(const ModelConfig& cfg, uint64_t seed);
ParamCount count_params(const DpsnnModel& model);

// Parameter leaves bound into a tape for one forward/backward pass.
struct ModelBinding {
    std::map<std::string, int> nodes;
    int node(const std::string& name) const { return nodes.at(name); }
};

ModelBinding bind_model(Tape& tape, const DpsnnModel& model);

struct ForwardOptions {
    SurrogateMode mode = SurrogateMode::kSurrogate;
    bool force_unit_mask = false;  // diagnostic: bypass the separator
};

struct ForwardResult {
    int enhanced = -1;       // [B,1,T_in] node, trimmed/padded to input length
    int enhanced_raw = -1;   // [B,1,(T_f-1)*stride+L] before trimming
    int suppressed_bn = -1;  // binarized bottleneck map node (for L1)
    int suppressed_ro = -1;  // suppressed readout map node (for L1)
    long frames = 0;
    SpikeStats stats;
};

// Full pipeline: encode -> layernorm -> bottleneck -> binarize -> SCNN(PLIF)
// -> SRNN(ALIF) -> readout -> pass-above -> mask head -> mask * features
// -> decode.
ForwardResult forward(Tape& tape, const DpsnnModel& model, const ModelBinding& binding, int wave,
                      const ForwardOptions& opts = {});

}  // namespace dpsnn
