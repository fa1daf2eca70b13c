#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dpsnn/metrics.hpp"
#include "dpsnn/network.hpp"

namespace dpsnn {

struct LossConfig {
    Real offset = 100.0;   // constant keeping logged losses positive
    Real w_mse = 0.001;
    Real lambda2 = 0.001;  // L1 on the binarized bottleneck map
    Real lambda3 = 0.001;  // L1 on the suppressed readout map
};

struct LossBreakdown {
    int total_node = -1;
    Real total = 0;
    Real si_snr_term = 0;  // -SI-SNR, pre-weighting
    Real mse_term = 0;
    Real l1_bn = 0;
    Real l1_ro = 0;
};

// L = offset - SI-SNR + w_mse * MSE + lambda2 * L1(bn) + lambda3 * L1(ro)
LossBreakdown make_loss(Tape& tape, const ForwardResult& fwd, int clean, const LossConfig& cfg);

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

struct AdamConfig {
    Real lr = 1e-2;
    Real beta1 = 0.9;
    Real beta2 = 0.999;
    Real eps = 1e-8;
};

class Adam {
public:
    explicit Adam(AdamConfig cfg) : cfg_(cfg) {}
    void step(DpsnnModel& model, const std::map<std::string, Array>& grads);
    void set_lr(Real lr) { cfg_.lr = lr; }
    Real lr() const { return cfg_.lr; }

private:
    AdamConfig cfg_;
    long t_ = 0;
    std::map<std::string, Array> m_, v_;
};

// scales gradients in place so their global L2 norm is at most max_norm
Real clip_grad_norm(std::map<std::string, Array>& grads, Real max_norm);

// ---------------------------------------------------------------------------
// synthetic mixtures (desk-scale stand-in for speech corpora)
// ---------------------------------------------------------------------------

enum class NoiseKind { kWhite, kPink, kTexture };

struct SynthSpec {
    long sample_rate = 16000;
    Real clip_seconds = 1.0;
    std::vector<Real> snr_db = {0.0, 5.0, 10.0, 15.0};
    Real f0_min = 100.0, f0_max = 300.0;
    int harmonics_min = 3, harmonics_max = 6;
};

struct MixturePair {
    std::vector<Real> noisy;
    std::vector<Real> clean;
    Real snr_db = 0;
};

// clean = harmonic stack with AM envelope; noise scaled for the exact SNR
MixturePair synth_clip(const SynthSpec& spec, uint64_t seed);
std::vector<MixturePair> synth_batch(const SynthSpec& spec, long count, uint64_t seed);

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

struct TrainConfig {
    long epochs = 10;
    long batch_size = 4;
    long clips_per_epoch = 64;
    long val_clips = 16;
    Real lr = 1e-2;
    Real grad_clip = 5.0;
    long plateau_patience = 3;  // halve lr after this many epochs without improvement
    uint64_t seed = 1;
    std::optional<double> time_budget_s;  // stop early when exceeded
};

struct EpochRecord {
    long epoch = 0;
    Real train_loss = 0;
    Real train_si_snr = 0;
    Real val_si_snr = 0;
    Real val_si_snri = 0;
    Real l1_bn = 0;
    Real l1_ro = 0;
    Real spike_density = 0;  // mean over bn/scnn/srnn maps
    Real lr = 0;

    std::string to_line() const;  // fixed field order, one record per line
};

struct TrainResult {
    std::vector<EpochRecord> history;
    Real best_val_si_snri = -1e30;
};

class TrainAbort : public std::runtime_error {
public:
    explicit TrainAbort(const std::string& msg) : std::runtime_error("train: " + msg) {}
};

TrainResult train(DpsnnModel& model, const SynthSpec& spec, const LossConfig& loss_cfg,
                  const TrainConfig& train_cfg,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

}  // namespace dpsnn
