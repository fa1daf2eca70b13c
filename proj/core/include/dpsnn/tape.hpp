#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "dpsnn/array.hpp"
#include "dpsnn/layers.hpp"

namespace dpsnn {

class TapeError : public std::runtime_error {
public:
    explicit TapeError(const std::string& msg) : std::runtime_error("tape: " + msg) {}
};

// How spike nonlinearities behave in the backward pass.
//   kSurrogate: straight-through with the layer's surrogate derivative (training).
//   kDetach:    zero derivative through the spike, i.e. the true a.e. local
//               gradient; used by finite-difference verification.
enum class SurrogateMode { kSurrogate, kDetach };

// Reverse-mode tape over dense arrays. Node ids are indices into the tape;
// ops record a backward closure visiting inputs in exact reverse order.
// A tape may be walked backward once; reset() clears it for reuse.
class Tape {
public:
    int leaf(Array value);

    // core ops
    int conv1d(int x, int w, long stride, long groups, long left_pad);
    int deconv1d(int x, int w, long stride);
    int channel_map(int x, int w);          // 1x1 conv: w [Cout,Cin] applied per frame
    int add_channel_bias(int x, int bias);  // bias [C] broadcast over time
    int relu(int x);
    int sigmoid_op(int x);
    int mul(int a, int b);
    int add(int a, int b);
    int sub(int a, int b);
    int channel_layernorm(int x, int gain, int bias, Real eps);

    // suppression gates (threshold is a learnable scalar leaf)
    int binarize(int x, int threshold, SurrogateMode mode);
    int pass_above(int x, int threshold, SurrogateMode mode);

    // stateful scans over the time axis; backward is hand-written BPTT
    int plif_scan(int currents, int a, Real theta, SurrogateMode mode);
    int srnn_scan(int x, int w_in, int w_rec, int tau_m, int tau_adp, Real b0, Real beta,
                  SurrogateMode mode);
    int readout_scan(int x, int w, int tau);

    // shape plumbing
    int slice_pad_time(int x, long target_len);  // crop or zero-pad last axis

    // scalar losses
    int si_snr_loss(int est, int ref, Real cap_db = 60.0, Real eps = 1e-8);  // returns -SI-SNR
    int mse_loss(int est, int ref);
    int l1_mean(int x);
    int weighted_sum(const std::vector<std::pair<Real, int>>& terms, Real constant);

    void backward(int loss_node);
    void reset();

    const Array& value(int node) const { return nodes_.at(static_cast<size_t>(node)).value; }
    const Array& grad(int node);
    size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Array value;
        Array grad;
        std::function<void(Tape&)> backprop;  // empty for leaves
    };

    int push(Array value, std::function<void(Tape&)> backprop = {});
    Array& grad_mut(int node);
    void accumulate(int node, const Array& g);

    std::vector<Node> nodes_;
    bool walked_ = false;
};

}  // namespace dpsnn
