#pragma once

#include <span>
#include <vector>

#include "dpsnn/network.hpp"

namespace dpsnn {

struct SiSnrResult {
    Real value_db = 0;
    bool capped = false;
};

inline constexpr Real kSiSnrCapDb = 60.0;

// scale-invariant SNR; both signals are mean-subtracted first, the value is
// capped at +60 dB when the error energy vanishes
SiSnrResult si_snr(std::span<const Real> est, std::span<const Real> ref);

// improvement of the estimate over the unprocessed noisy input
Real si_snri(std::span<const Real> est, std::span<const Real> noisy, std::span<const Real> ref);

// short-time objective intelligibility in [0,1]; signals at `sample_rate`
// are resampled to 10 kHz internally
Real stoi(std::span<const Real> est, std::span<const Real> ref, long sample_rate);

struct PowerReport {
    double synops_per_s = 0;
    double neuron_updates_per_s = 0;
    double power_proxy = 0;  // == synops_per_s
    double pdp_proxy = 0;    // power_proxy x algorithmic latency (s)
    bool excludes_codec = true;
};

// Effective synaptic operations per second. Counting rule:
//  - layers fed by spiking/binary maps: spikes x fan-out
//    (SCNN: H/B filters x K_ctx taps; SRNN in/rec and readout: output width)
//  - layers fed by suppressed real maps: nonzeros x fan-out (mask head)
//  - remaining real-valued linear layers: dense MACs (bottleneck; encoder and
//    decoder only when the codec is included)
// Neuron state updates are reported separately and not folded into synops.
PowerReport power_proxy(const SpikeStats& stats, const ModelConfig& cfg, double audio_seconds,
                        bool excludes_codec, long sample_rate = 16000);

// test/bench helper: polyphase resampler used inside stoi
std::vector<Real> resample_poly(std::span<const Real> x, long up, long down);

}  // namespace dpsnn
