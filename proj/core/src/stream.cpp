#include "dpsnn/stream.hpp"

namespace dpsnn {

LatencyReport latency(const EncoderConfig& cfg, long sample_rate) {
    if (sample_rate <= 0) throw ShapeError("latency: sample rate must be positive");
    LatencyReport r;
    const Real sr = static_cast<Real>(sample_rate);
    r.buffering_ms = 1000.0 * static_cast<Real>(cfg.stride) / sr;
    r.lookahead_ms = 1000.0 * static_cast<Real>(cfg.L - cfg.stride) / sr;
    r.algorithmic_ms = 1000.0 * static_cast<Real>(cfg.L) / sr;
    return r;
}

Stream::Stream(const DpsnnModel& model) : model_(&model) {
    model.cfg.validate();
    reset();
}

void Stream::reset() {
    const ModelConfig& c = model_->cfg;
    window_.assign(static_cast<size_t>(c.L), 0.0);
    pending_.clear();
    ola_.assign(static_cast<size_t>(c.L), 0.0);
    scnn_ctx_.assign(static_cast<size_t>(c.K_ctx * c.B), 0.0);
    plif_u_.assign(static_cast<size_t>(c.H), 0.0);
    alif_ = NeuronState::zeros(c.B, true);
    readout_u_.assign(static_cast<size_t>(c.B), 0.0);
    frames_ = 0;
    flushed_ = false;
    out_accum_.clear();

    feat_.assign(static_cast<size_t>(c.N), 0.0);
    normed_.assign(static_cast<size_t>(c.N), 0.0);
    bottleneck_.assign(static_cast<size_t>(c.B), 0.0);
    scnn_cur_.assign(static_cast<size_t>(c.H), 0.0);
    scnn_spk_.assign(static_cast<size_t>(c.H), 0.0);
    i1_.assign(static_cast<size_t>(c.B), 0.0);
    i2_.assign(static_cast<size_t>(c.B), 0.0);
    srnn_cur_.assign(static_cast<size_t>(c.B), 0.0);
    srnn_spk_.assign(static_cast<size_t>(c.B), 0.0);
    ro_v_.assign(static_cast<size_t>(c.B), 0.0);
    suppressed_.assign(static_cast<size_t>(c.B), 0.0);
    mask_lin_.assign(static_cast<size_t>(c.N), 0.0);
    mask_.assign(static_cast<size_t>(c.N), 0.0);
    masked_.assign(static_cast<size_t>(c.N), 0.0);
    frame_out_.assign(static_cast<size_t>(c.L), 0.0);
}

void Stream::process_frame() {
    const ModelConfig& c = model_->cfg;
    const DpsnnModel& m = *model_;
    const long N = c.N, B = c.B, H = c.H, L = c.L, K = c.K_ctx;
    const long stride = c.stride();

    // encoder (conv + ReLU) and per-frame layer norm
    encode_frame(m.enc_kernel.data.data(), window_.data(), feat_.data(), N, L);
    layernorm_frame(feat_.data(), normed_.data(), m.ln_gain.data.data(), m.ln_bias.data.data(), N,
                    c.ln_eps);

    // bottleneck 1x1 + binarizing suppression
    matvec(m.bn_kernel.data.data(), normed_.data(), bottleneck_.data(), B, N);

    // slide SCNN context and append the new binarized frame
    std::copy(scnn_ctx_.begin() + B, scnn_ctx_.end(), scnn_ctx_.begin());
    binarize_frame(bottleneck_.data(), &scnn_ctx_[static_cast<size_t>((K - 1) * B)], B,
                   m.gate_bn[0]);

    // SCNN grouped conv over the context window, then PLIF
    scnn_conv_frame(m.scnn_kernel.data.data(), m.scnn_bias.data.data(), scnn_ctx_.data(),
                    scnn_cur_.data(), H, B, K);
    PlifParams plif;
    plif.a = m.plif_a[0];
    plif.theta = c.plif_theta;
    plif_step(plif_u_, scnn_cur_, plif, scnn_spk_);

    // SRNN (ALIF): input current from SCNN spikes plus recurrence
    matvec(m.srnn_w_in.data.data(), scnn_spk_.data(), i1_.data(), B, H);
    matvec(m.srnn_w_rec.data.data(), alif_.s_prev.data(), i2_.data(), B, B);
    for (long j = 0; j < B; ++j)
        srnn_cur_[static_cast<size_t>(j)] = i1_[static_cast<size_t>(j)] + i2_[static_cast<size_t>(j)];
    AlifParams alif;
    alif.tau_m = m.srnn_tau_m.data.data();
    alif.tau_adp = m.srnn_tau_adp.data.data();
    alif.n = B;
    alif.b0 = c.alif_b0;
    alif.beta = c.alif_beta;
    alif_step(alif_, srnn_cur_, alif, srnn_spk_);

    // non-spiking readout + pass-above suppression
    matvec(m.readout_w.data.data(), srnn_spk_.data(), ro_v_.data(), B, B);
    leaky_readout_step(readout_u_, ro_v_, m.readout_tau[0]);
    pass_above_frame(readout_u_.data(), suppressed_.data(), B, m.gate_ro[0]);

    // mask head, mask application, decode
    matvec(m.mask_kernel.data.data(), suppressed_.data(), mask_lin_.data(), N, B);
    sigmoid_frame(mask_lin_.data(), mask_.data(), N);
    for (long n = 0; n < N; ++n)
        masked_[static_cast<size_t>(n)] = mask_[static_cast<size_t>(n)] * feat_[static_cast<size_t>(n)];
    decode_frame(m.dec_kernel.data.data(), masked_.data(), frame_out_.data(), N, L);

    // overlap-add emission: the first `stride` samples of the tail become
    // final once the next frame arrives
    if (frames_ > 0) {
        out_accum_.insert(out_accum_.end(), ola_.begin(), ola_.begin() + stride);
        std::copy(ola_.begin() + stride, ola_.end(), ola_.begin());
        std::fill(ola_.end() - stride, ola_.end(), 0.0);
    }
    for (long k = 0; k < L; ++k) ola_[static_cast<size_t>(k)] += frame_out_[static_cast<size_t>(k)];
    ++frames_;
}

std::vector<Real> Stream::push(std::span<const Real> samples) {
    if (flushed_) throw std::logic_error("stream: push after flush; reset() first");
    const ModelConfig& c = model_->cfg;
    const long L = c.L;
    const long stride = c.stride();
    pending_.insert(pending_.end(), samples.begin(), samples.end());

    size_t consumed = 0;
    for (;;) {
        const size_t need = (frames_ == 0) ? static_cast<size_t>(L) : static_cast<size_t>(stride);
        if (pending_.size() - consumed < need) break;
        if (frames_ == 0) {
            std::copy(pending_.begin(), pending_.begin() + L, window_.begin());
        } else {
            std::copy(window_.begin() + stride, window_.end(), window_.begin());
            std::copy(pending_.begin() + static_cast<long>(consumed),
                      pending_.begin() + static_cast<long>(consumed + need),
                      window_.end() - stride);
        }
        consumed += need;
        process_frame();
    }
    pending_.erase(pending_.begin(), pending_.begin() + static_cast<long>(consumed));

    std::vector<Real> out;
    out.swap(out_accum_);
    return out;
}

std::vector<Real> Stream::flush() {
    flushed_ = true;
    std::vector<Real> out;
    out.swap(out_accum_);
    if (frames_ > 0) out.insert(out.end(), ola_.begin(), ola_.end());
    return out;
}

}  // namespace dpsnn
