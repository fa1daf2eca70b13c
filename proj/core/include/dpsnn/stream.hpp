#pragma once

#include <span>
#include <vector>

#include "dpsnn/network.hpp"

namespace dpsnn {

struct LatencyReport {
    Real buffering_ms = 0;
    Real lookahead_ms = 0;
    Real algorithmic_ms = 0;
};

// buffering = frame hop, look-ahead = the rest of the frame window
LatencyReport latency(const EncoderConfig& cfg, long sample_rate);

// Block-based streaming inference. Carries the sample window, SCNN context,
// all neuron states and the overlap-add tail across push() calls, so that the
// concatenated output over any chunking equals the offline forward pass
// bit-for-bit. State size is fixed by the model config.
class Stream {
public:
    explicit Stream(const DpsnnModel& model);

    // feeds samples and returns every output sample that became final
    std::vector<Real> push(std::span<const Real> samples);

    // emits the overlap-add tail at end of stream; push() is invalid afterwards
    std::vector<Real> flush();

    void reset();
    long frames_processed() const { return frames_; }

private:
    void process_frame();

    const DpsnnModel* model_;
    std::vector<Real> window_;    // last L input samples
    std::vector<Real> pending_;   // received but not yet framed
    std::vector<Real> ola_;       // overlap-add tail, length L
    std::vector<Real> scnn_ctx_;  // K_ctx frames of binarized bottleneck output, oldest first
    std::vector<Real> plif_u_;
    NeuronState alif_;
    std::vector<Real> readout_u_;
    long frames_ = 0;
    bool flushed_ = false;
    std::vector<Real> out_accum_;

    // per-frame scratch
    std::vector<Real> feat_, normed_, bottleneck_, scnn_cur_, scnn_spk_, i1_, i2_, srnn_cur_,
        srnn_spk_, ro_v_, suppressed_, mask_lin_, mask_, masked_, frame_out_;
};

}  // namespace dpsnn
