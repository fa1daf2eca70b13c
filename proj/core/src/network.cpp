#include "dpsnn/network.hpp"

#include <random>

namespace dpsnn {

void ModelConfig::validate() const {
    if (N < 1 || B < 1 || H < 1 || L < 1 || K_ctx < 1) throw ShapeError("model dims must be >= 1");
    if (H % B != 0) throw ShapeError("H must be divisible by B");
    if (L % 2 != 0) throw ShapeError("L must be even (stride = L/2)");
}

void DpsnnModel::for_each_param(const std::function<void(const std::string&, Array&)>& fn) {
    fn("enc.kernel", enc_kernel);
    fn("ln.gain", ln_gain);
    fn("ln.bias", ln_bias);
    fn("bn.kernel", bn_kernel);
    fn("gate_bn.threshold", gate_bn);
    fn("scnn.kernel", scnn_kernel);
    fn("scnn.bias", scnn_bias);
    fn("scnn.plif_a", plif_a);
    fn("srnn.w_in", srnn_w_in);
    fn("srnn.w_rec", srnn_w_rec);
    fn("srnn.tau_m", srnn_tau_m);
    fn("srnn.tau_adp", srnn_tau_adp);
    fn("readout.w", readout_w);
    fn("readout.tau", readout_tau);
    fn("gate_ro.threshold", gate_ro);
    fn("mask.kernel", mask_kernel);
    fn("dec.kernel", dec_kernel);
}

void DpsnnModel::for_each_param(
    const std::function<void(const std::string&, const Array&)>& fn) const {
    const_cast<DpsnnModel*>(this)->for_each_param(
        [&fn](const std::string& name, Array& a) { fn(name, a); });
}

namespace {

// uniform Kaiming-style init: U(-sqrt(1/fan_in), sqrt(1/fan_in))
void fill_uniform(Array& a, long fan_in, std::mt19937_64& rng) {
    const Real bound = std::sqrt(1.0 / static_cast<Real>(fan_in));
    std::uniform_real_distribution<Real> dist(-bound, bound);
    for (Real& v : a.data) v = dist(rng);
}

void fill_normal_clamped(Array& a, Real mean, Real sd, Real min_v, std::mt19937_64& rng) {
    std::normal_distribution<Real> dist(mean, sd);
    for (Real& v : a.data) v = std::max(min_v, dist(rng));
}

}  // namespace

DpsnnModel init_model(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    DpsnnModel m;
    m.cfg = cfg;
    const long N = cfg.N, B = cfg.B, H = cfg.H, L = cfg.L, K = cfg.K_ctx;

    m.enc_kernel = Array({N, 1, L});
    fill_uniform(m.enc_kernel, L, rng);
    m.ln_gain = Array::full({N}, 1.0);
    m.ln_bias = Array({N});
    m.bn_kernel = Array({B, N});
    fill_uniform(m.bn_kernel, N, rng);
    m.gate_bn = Array({1});  // threshold starts near-transparent at 0
    m.scnn_kernel = Array({H, 1, K});
    fill_uniform(m.scnn_kernel, K, rng);
    m.scnn_bias = Array({H});
    m.plif_a = Array({1});  // a = 0 -> tau_m = 2
    m.srnn_w_in = Array({B, H});
    fill_uniform(m.srnn_w_in, H, rng);
    m.srnn_w_rec = Array({B, B});
    fill_uniform(m.srnn_w_rec, B, rng);
    m.srnn_tau_m = Array({B});
    fill_normal_clamped(m.srnn_tau_m, 20.0, 5.0, 1.0, rng);
    m.srnn_tau_adp = Array({B});
    fill_normal_clamped(m.srnn_tau_adp, 200.0, 50.0, 1.0, rng);
    m.readout_w = Array({B, B});
    fill_uniform(m.readout_w, B, rng);
    m.readout_tau = Array::full({1}, 2.0);
    m.gate_ro = Array({1});
    m.mask_kernel = Array({N, B});
    fill_uniform(m.mask_kernel, B, rng);
    m.dec_kernel = Array({N, 1, L});
    fill_uniform(m.dec_kernel, L, rng);
    return m;
}

ParamCount count_params(const DpsnnModel& model) {
    ParamCount pc;
    model.for_each_param([&pc](const std::string& name, const Array& a) {
        pc.per_layer[name] = a.numel();
        pc.total += a.numel();
    });
    return pc;
}

ModelBinding bind_model(Tape& tape, const DpsnnModel& model) {
    ModelBinding b;
    model.for_each_param([&](const std::string& name, const Array& a) {
        b.nodes[name] = tape.leaf(a);
    });
    return b;
}

ForwardResult forward(Tape& tape, const DpsnnModel& model, const ModelBinding& bind, int wave,
                      const ForwardOptions& opts) {
    const ModelConfig& cfg = model.cfg;
    const Array& wv = tape.value(wave);
    if (wv.ndim() != 3 || wv.dim(1) != 1) throw ShapeError("forward: wave must be [B,1,T]");
    const long T_in = wv.dim(2);
    const long stride = cfg.stride();
    const EncoderConfig enc = cfg.encoder();
    const long T_f = enc.frames_for(T_in);

    ForwardResult r;
    r.frames = T_f;
    r.stats.frames = T_f;
    r.stats.batch = wv.dim(0);

    // encoder: strided conv + ReLU, no padding
    const int enc_conv = tape.conv1d(wave, bind.node("enc.kernel"), stride, 1, 0);
    const int features = tape.relu(enc_conv);

    int mask;
    if (opts.force_unit_mask) {
        mask = tape.leaf(Array::full(tape.value(features).shape, 1.0));
        r.suppressed_bn = tape.leaf(Array({wv.dim(0), cfg.B, T_f}));
        r.suppressed_ro = tape.leaf(Array({wv.dim(0), cfg.B, T_f}));
    } else {
        const int normed = tape.channel_layernorm(features, bind.node("ln.gain"),
                                                  bind.node("ln.bias"), cfg.ln_eps);
        const int bottleneck = tape.channel_map(normed, bind.node("bn.kernel"));
        const int binarized = tape.binarize(bottleneck, bind.node("gate_bn.threshold"), opts.mode);
        r.suppressed_bn = binarized;

        // SCNN: grouped causal conv over time, then PLIF spiking
        const int scnn_conv =
            tape.conv1d(binarized, bind.node("scnn.kernel"), 1, cfg.B, cfg.K_ctx - 1);
        const int scnn_in = tape.add_channel_bias(scnn_conv, bind.node("scnn.bias"));
        const int scnn_spk = tape.plif_scan(scnn_in, bind.node("scnn.plif_a"), cfg.plif_theta, opts.mode);

        // SRNN: fully-connected recurrent ALIF
        const int srnn_spk =
            tape.srnn_scan(scnn_spk, bind.node("srnn.w_in"), bind.node("srnn.w_rec"),
                           bind.node("srnn.tau_m"), bind.node("srnn.tau_adp"), cfg.alif_b0,
                           cfg.alif_beta, opts.mode);

        // non-spiking leaky readout, then thresholded suppression
        const int readout =
            tape.readout_scan(srnn_spk, bind.node("readout.w"), bind.node("readout.tau"));
        const int suppressed = tape.pass_above(readout, bind.node("gate_ro.threshold"), opts.mode);
        r.suppressed_ro = suppressed;

        // 1x1 conv + sigmoid mask
        const int mask_lin = tape.channel_map(suppressed, bind.node("mask.kernel"));
        mask = tape.sigmoid_op(mask_lin);

        // spike statistics for the power proxy
        auto count_ones = [&](int node) {
            const Array& a = tape.value(node);
            double acc = 0;
            for (Real v : a.data)
                if (v != 0.0) acc += 1;
            return acc;
        };
        r.stats.bn_spikes = count_ones(binarized);
        r.stats.scnn_spikes = count_ones(scnn_spk);
        r.stats.srnn_spikes = count_ones(srnn_spk);
        r.stats.ro_nonzeros = count_ones(suppressed);
        r.stats.bn_size = tape.value(binarized).numel();
        r.stats.scnn_size = tape.value(scnn_spk).numel();
        r.stats.srnn_size = tape.value(srnn_spk).numel();
        r.stats.ro_size = tape.value(suppressed).numel();
    }

    const int masked = tape.mul(mask, features);
    r.enhanced_raw = tape.deconv1d(masked, bind.node("dec.kernel"), stride);
    r.enhanced = tape.slice_pad_time(r.enhanced_raw, T_in);
    return r;
}

}  // namespace dpsnn
