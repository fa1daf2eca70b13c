#include "dpsnn/tape.hpp"

#include <array>
#include <cmath>
#include <memory>

namespace dpsnn {

namespace {

void require(bool cond, const char* msg) {
    if (!cond) throw ShapeError(msg);
}

void require3(const Array& a, const char* what) {
    if (a.ndim() != 3)
        throw ShapeError(std::string(what) + ": expected rank-3 array, got " + shape_str(a.shape));
}

void require_same(const Array& a, const Array& b, const char* what) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(what) + ": operand shapes differ, " + shape_str(a.shape) +
                         " vs " + shape_str(b.shape));
}

}  // namespace

int Tape::push(Array value, std::function<void(Tape&)> backprop) {
    Node n;
    n.value = std::move(value);
    n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

int Tape::leaf(Array value) { return push(std::move(value)); }

Array& Tape::grad_mut(int node) {
    Node& n = nodes_[static_cast<size_t>(node)];
    if (n.grad.data.empty()) n.grad = Array::zeros(n.value.shape);
    return n.grad;
}

void Tape::accumulate(int node, const Array& g) {
    Array& dst = grad_mut(node);
    for (long i = 0; i < g.numel(); ++i) dst[i] += g[i];
}

const Array& Tape::grad(int node) { return grad_mut(node); }

void Tape::reset() {
    nodes_.clear();
    walked_ = false;
}

void Tape::backward(int loss_node) {
    if (walked_) throw TapeError("backward already run on this tape; reset() first");
    if (loss_node < 0 || loss_node >= static_cast<int>(nodes_.size()))
        throw TapeError("invalid loss node");
    if (nodes_[static_cast<size_t>(loss_node)].value.numel() != 1)
        throw TapeError("loss node must be scalar");
    walked_ = true;
    grad_mut(loss_node)[0] = 1.0;
    // exact reverse of forward order; nodes the loss does not reach keep
    // empty grads and are skipped
    for (int i = loss_node; i >= 0; --i) {
        Node& n = nodes_[static_cast<size_t>(i)];
        if (!n.grad.data.empty() && n.backprop) n.backprop(*this);
    }
}

// ---------------------------------------------------------------------------
// convolutions
// ---------------------------------------------------------------------------

int Tape::conv1d(int x, int w, long stride, long groups, long left_pad) {
    const Array& xv = value(x);
    const Array& wv = value(w);
    require3(xv, "conv1d input");
    require3(wv, "conv1d kernel");
    const long Bn = xv.dim(0), Cin = xv.dim(1), T = xv.dim(2);
    const long Cout = wv.dim(0), Cinpg = wv.dim(1), K = wv.dim(2);
    require(stride >= 1 && K >= 1, "conv1d: stride and K must be >= 1");
    require(groups >= 1 && Cin % groups == 0 && Cout % groups == 0,
            "conv1d: channels not divisible by groups");
    require(Cinpg == Cin / groups, "conv1d: kernel input-channel extent mismatch");
    require(T + left_pad >= K, "conv1d: input too short for kernel");
    const long To = (T + left_pad - K) / stride + 1;
    const long copg = Cout / groups;

    Array out({Bn, Cout, To});
    for (long b = 0; b < Bn; ++b)
        for (long t = 0; t < To; ++t)
            for (long co = 0; co < Cout; ++co) {
                const long g = co / copg;
                Real acc = 0.0;
                for (long cl = 0; cl < Cinpg; ++cl) {
                    const Real* wr = &wv.data[static_cast<size_t>((co * Cinpg + cl) * K)];
                    const long ci = g * Cinpg + cl;
                    for (long k = 0; k < K; ++k) {
                        const long ti = t * stride + k - left_pad;
                        if (ti >= 0 && ti < T) acc += wr[k] * xv.at3(b, ci, ti);
                    }
                }
                out.at3(b, co, t) = acc;
            }

    const int id = push(std::move(out));
    nodes_[static_cast<size_t>(id)].backprop = [=](Tape& tp) {
        const Array& go = tp.nodes_[static_cast<size_t>(id)].grad;
        const Array& xi = tp.value(x);
        const Array& wi = tp.value(w);
        Array& gx = tp.grad_mut(x);
        Array& gw = tp.grad_mut(w);
        for (long b = 0; b < Bn; ++b)
            for (long t = 0; t < To; ++t)
                for (long co = 0; co < Cout; ++co) {
                    const long g = co / copg;
                    const Real gy = go.at3(b, co, t);
                    if (gy == 0.0) continue;
                    for (long cl = 0; cl < Cinpg; ++cl) {
                        const long ci = g * Cinpg + cl;
                        for (long k = 0; k < K; ++k) {
                            const long ti = t * stride + k - left_pad;
                            if (ti < 0 || ti >= T) continue;
                            gx.at3(b, ci, ti) += wi.at3(co, cl, k) * gy;
                            gw.at3(co, cl, k) += xi.at3(b, ci, ti) * gy;
                        }
                    }
                }
    };
    return id;
}

int Tape::deconv1d(int x, int w, long stride) {
    const Array& xv = value(x);
    const Array& wv = value(w);
    require3(xv, "deconv1d input");
    require3(wv, "deconv1d kernel");
    const long Bn = xv.dim(0), C = xv.dim(1), T = xv.dim(2);
    require(wv.dim(0) == C, "deconv1d: kernel channel mismatch");
    const long Cout = wv.dim(1), K = wv.dim(2);
    require(stride >= 1, "deconv1d: stride must be >= 1");
    const long To = (T - 1) * stride + K;

    // the channel sum for each (frame, tap) is formed first, then added into
    // the output in ascending frame order -- the same accumulation order as
    // the streaming overlap-add
    Array out({Bn, Cout, To});
    for (long b = 0; b < Bn; ++b)
        for (long t = 0; t < T; ++t)
            for (long co = 0; co < Cout; ++co)
                for (long k = 0; k < K; ++k) {
                    Real acc = 0.0;
                    for (long c = 0; c < C; ++c) acc += xv.at3(b, c, t) * wv.at3(c, co, k);
                    out.at3(b, co, t * stride + k) += acc;
                }

    const int id = push(std::move(out));
    nodes_[static_cast<size_t>(id)].backprop = [=](Tape& tp) {
        const Array& go = tp.nodes_[static_cast<size_t>(id)].grad;
        const Array& xi = tp.value(x);
        const Array& wi = tp.value(w);
        Array& gx = tp.grad_mut(x);
        Array& gw = tp.grad_mut(w);
        for (long b = 0; b < Bn; ++b)
            for (long t = 0; t < T; ++t)
                for (long co = 0; co < Cout; ++co)
                    for (long k = 0; k < K; ++k) {
                        const Real gy = go.at3(b, co, t * stride + k);
                        if (gy == 0.0) continue;
                        for (long c = 0; c < C; ++c) {
                            gx.at3(b, c, t) += wi.at3(c, co, k) * gy;
                            gw.at3(c, co, k) += xi.at3(b, c, t) * gy;
                        }
                    }
    };
    return id;
}

int Tape::channel_map(int x, int w) {
    const Array& xv = value(x);
    const Array& wv = value(w);
    require3(xv, "channel_map input");
    require(wv.ndim() == 2, "channel_map: kernel must be rank-2 [Cout,Cin]");
    const long Bn = xv.dim(0), Cin = xv.dim(1), T = xv.dim(2);
    const long Cout = wv.dim(0);
    require(wv.dim(1) == Cin, "channel_map: kernel input-channel mismatch");

    Array out({Bn, Cout, T});
    for (long b = 0; b < Bn; ++b)
        for (long t = 0; t < T; ++t)
            for (long co = 0; co < Cout; ++co) {
                Real acc = 0.0;
                const Real* wr = &wv.data[static_cast<size_t>(co * Cin)];
                for (long ci = 0; ci < Cin; ++ci) acc += wr[ci] * xv.at3(b, ci, t);
                out.at3(b, co, t) = acc;
            }

    const int id = push(std::move(out));
    nodes_[static_cast<size_t>(id)].backprop = [=](Tape& tp) {
        const Array& go = tp.nodes_[static_cast<size_t>(id)].grad;
        const Array& xi = tp.value(x);
        const Array& wi = tp.value(w);
        Array& gx = tp.grad_mut(x);
        Array& gw = tp.grad_mut(w);
        for (long b = 0; b < Bn; ++b)
            for (long t = 0; t < T; ++t)
                for (long co = 0; co < Cout; ++co) {
                    const Real gy = go.at3(b, co, t);
                    if (gy == 0.0) continue;
                    for (long ci = 0; ci < Cin; ++ci) {
                        gx.at3(b, ci, t) += wi.data[static_cast<size_t>(co * Cin + ci)] * gy;
                        gw.data[static_cast<size_t>(co * Cin + ci)] += xi.at3(b, ci, t) * gy;
                    }
                }
    };
    return id;
}

int Tape::add_channel_bias(int x, int bias) {
    const Array& xv = value(x);
    const Array& bv = value(bias);
    require3(xv, "add_channel_bias input");
    require(bv.ndim() == 1 && bv.dim(0) == xv.dim(1), "add_channel_bias: bias extent mismatch");
    const long Bn = xv.dim(0), C = xv.dim(1), T = xv.dim(2);

    Array out(xv.shape);
    for (long b = 0; b < Bn; ++b)
        for (long c = 0; c < C; ++c)
            for (long t = 0; t < T; ++t) out.at3(b, c, t) = xv.at3(b, c, t) + bv[c];

    const int id = push(std::move(out));
    nodes_[static_cast<size_t>(id)].backprop = [=](Tape& tp) {
        const Array& go = tp.nodes_[static_cast<size_t>(id)].grad;
        Array& gx = tp.grad_mut(x);
        Array& gb = tp.grad_mut(bias);
        for (long b = 0; b < Bn; ++b)
            for (long c = 0; c < C; ++c)
                for (long t = 0; t < T; ++t) {
                    const Real gy = go.at3(b, c, t);
                    gx.at3(b, c, t) += gy;
                    gb[c] += gy;
                }
    };
    return id;
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

int Tape::relu(int x) {
    const Array& xv = value(x);
    Array out(xv.shape);
    for (long i = 0; i < xv.numel(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
    const int id = push(std::move(out));
    nodes_[static_cast<size_t>(id)].backprop = [=](Tape& tp) {
        const Array& go = tp.nodes_[static_cast<size_t>(id)].grad;
        const Array& xi = tp.value(x);
        Array& gx = tp.grad_mut(x);
        for (long i = 0; i < xi.numel(); ++i)
            if (xi[i] > 0.0) gx[i] += go[i];
    };
    return id;
}

int Tape::sigmoid_op(int x) {
    const Array& xv = value(x);
    Array out(xv.shape);
    for (long i = 0; i < xv.numel(); ++i) out[i] = sigmoid(xv[i]);
    const int id = push(std::move(out));
    nodes_[static_cast<size_t>(id)].backprop = [=](Tape& tp) {
        const Array& go = tp.nodes_[static_cast<size_t>(id)].grad;
        const Array& y = tp.value(id);
        Array& gx = tp.grad_mut(x);
        for (long i = 0; i < y.numel(); ++i) gx[i] += go[i] * y[i] * (1.0 - y[i]);
    };
    return id;
}

int Tape::mul(int a, int b) {
    const Array& av = value(a);
    const Array& bv = value(b);
    require_same(av, bv, "mul");
    Array out(av.shape);
    for (long i = 0; i < av.numel(); ++i) out[i] = av[i] * bv[i];
    const int id = push(std::move(out));
    nodes_[static_cast<size_t>(id)].backprop = [=](Tape& tp) {
        const Array& go = tp.nodes_[static_cast<size_t>(id)].grad;
        const Array& ai = tp.value(a);
        const Array& bi = tp.value(b);
        Array& ga = tp.grad_mut(a);
        Array& gb = tp.grad_mut(b);
        for (long i = 0; i < ai.numel(); ++i) {
            ga[i] += go[i] * bi[i];
            gb[i] += go[i] * ai[i];
        }
    };
    return id;
}

int Tape::add(int a, int b) {
    const Array& av = value(a);
    const Array& bv = value(b);
    require_same(av, bv, "add");
    Array out(av.shape);
    for (long i = 0; i < av.numel(); ++i) out[i] = av[i] + bv[i];
    const int id = push(std::move(out));
    nodes_[static_cast<size_t>(id)].backprop = [=](Tape& tp) {
        const Array& go = tp.nodes_[static_cast<size_t>(id)].grad;
        Array& ga = tp.grad_mut(a);
        Array& gb = tp.grad_mut(b);
        for (long i = 0; i < go.numel(); ++i) {
            ga[i] += go[i];
            gb[i] += go[i];
        }
    };
    return id;
}

int Tape::sub(int a, int b) {
    const Array& av = value(a);
    const Array& bv = value(b);
    require_same(av, bv, "sub");
    Array out(av.shape);
    for (long i = 0; i < av.numel(); ++i) out[i] = av[i] - bv[i];
    const int id = push(std::move(out));
    nodes_[static_cast<size_t>(id)].backprop = [=](Tape& tp) {
        const Array& go = tp.nodes_[static_cast<size_t>(id)].grad;
        Array& ga = tp.grad_mut(a);
        Array& gb = tp.grad_mut(b);
        for (long i = 0; i < go.numel(); ++i) {
            ga[i] += go[i];
            gb[i] -= go[i];
        }
    };
    return id;
}

// ---------------------------------------------------------------------------
// channel layer norm (per batch and time step, over channels)
// ---------------------------------------------------------------------------

int Tape::channel_layernorm(int x, int gain, int bias, Real eps) {
    const Array& xv = value(x);
    const Array& gv = value(gain);
    const Array& bv = value(bias);
    require3(xv, "channel_layernorm input");
    const long Bn = xv.dim(0), C = xv.dim(1), T = xv.dim(2);
    require(gv.ndim() == 1 && gv.dim(0) == C, "channel_layernorm: gain extent mismatch");
    require(bv.ndim() == 1 && bv.dim(0) == C, "channel_layernorm: bias extent mismatch");

    Array out(xv.shape);
    std::vector<Real> xf(static_cast<size_t>(C)), yf(static_cast<size_t>(C));
    for (long b = 0; b < Bn; ++b)
        for (long t = 0; t < T; ++t) {
            for (long c = 0; c < C; ++c) xf[static_cast<size_t>(c)] = xv.at3(b, c, t);
            layernorm_frame(xf.data(), yf.data(), gv.data.data(), bv.data.data(), C, eps);
            for (long c = 0; c < C; ++c) out.at3(b, c, t) = yf[static_cast<size_t>(c)];
        }

    const int id = push(std::move(out));
    nodes_[static_cast<size_t>(id)].backprop = [=](Tape& tp) {
        const Array& go = tp.nodes_[static_cast<size_t>(id)].grad;
        const Array& xi = tp.value(x);
        const Array& gi = tp.value(gain);
        Array& gx = tp.grad_mut(x);
        Array& gg = tp.grad_mut(gain);
        Array& gb = tp.grad_mut(bias);
        const Real cn = static_cast<Real>(C);
        std::vector<Real> xhat(static_cast<size_t>(C)), gxh(static_cast<size_t>(C));
        for (long b = 0; b < Bn; ++b)
            for (long t = 0; t < T; ++t) {
                Real mean = 0.0;
                for (long c = 0; c < C; ++c) mean += xi.at3(b, c, t);
                mean /= cn;
                Real var = 0.0;
                for (long c = 0; c < C; ++c) {
                    const Real d = xi.at3(b, c, t) - mean;
                    var += d * d;
                }
                var /= cn;
                const Real inv_sd = 1.0 / std::sqrt(var + eps);
                Real m1 = 0.0, m2 = 0.0;
                for (long c = 0; c < C; ++c) {
                    xhat[static_cast<size_t>(c)] = (xi.at3(b, c, t) - mean) * inv_sd;
                    const Real gy = go.at3(b, c, t);
                    gxh[static_cast<size_t>(c)] = gy * gi[c];
                    gg[c] += gy * xhat[static_cast<size_t>(c)];
                    gb[c] += gy;
                    m1 += gxh[static_cast<size_t>(c)];
                    m2 += gxh[static_cast<size_t>(c)] * xhat[static_cast<size_t>(c)];
                }
                m1 /= cn;
                m2 /= cn;
                for (long c = 0; c < C; ++c)
                    gx.at3(b, c, t) +=
                        inv_sd * (gxh[static_cast<size_t>(c)] - m1 - xhat[static_cast<size_t>(c)] * m2);
            }
    };
    return id;
}

// ---------------------------------------------------------------------------
// suppression gates
// ---------------------------------------------------------------------------

int Tape::binarize(int x, int threshold, SurrogateMode mode) {
    const Array& xv = value(x);
    const Array& tv = value(threshold);
    require(tv.numel() == 1, "binarize: threshold must be scalar");
    const Real thr = tv[0];
    Array out(xv.shape);
    for (long i = 0; i < xv.numel(); ++i) out[i] = heaviside(xv[i] - thr);
    const int id = push(std::move(out));
    nodes_[static_cast<size_t>(id)].backprop = [=](Tape& tp) {
        if (mode == SurrogateMode::kDetach) return;
        const Array& go = tp.nodes_[static_cast<size_t>(id)].grad;
        const Array& xi = tp.value(x);
        Array& gx = tp.grad_mut(x);
        Array& gt = tp.grad_mut(threshold);
        for (long i = 0; i < xi.numel(); ++i) {
            const Real gi = go[i] * surrogate_arctan(xi[i] - thr);
            gx[i] += gi;
            gt[0] -= gi;
        }
    };
    return id;
}

int Tape::pass_above(int x, int threshold, SurrogateMode mode) {
    const Array& xv = value(x);
    const Array& tv = value(threshold);
    require(tv.numel() == 1, "pass_above: threshold must be scalar");
    const Real thr = tv[0];
    Array out(xv.shape);
    for (long i = 0; i < xv.numel(); ++i) out[i] = xv[i] * heaviside(xv[i] - thr);
    const int id = push(std::move(out));
    nodes_[static_cast<size_t>(id)].backprop = [=](Tape& tp) {
        const Array& go = tp.nodes_[static_cast<size_t>(id)].grad;
        const Array& xi = tp.value(x);
        Array& gx = tp.grad_mut(x);
        // the gate factor is the exact a.e. derivative for x
        for (long i = 0; i < xi.numel(); ++i)
            if (xi[i] >= thr) gx[i] += go[i];
        if (mode == SurrogateMode::kSurrogate) {
            Array& gt = tp.grad_mut(threshold);
            for (long i = 0; i < xi.numel(); ++i)
                gt[0] -= go[i] * xi[i] * surrogate_arctan(xi[i] - thr);
        }
    };
    return id;
}

// ---------------------------------------------------------------------------
// stateful scans (BPTT written by hand)
// ---------------------------------------------------------------------------

int Tape::plif_scan(int currents, int a, Real theta, SurrogateMode mode) {
    const Array& cv = value(currents);
    const Array& av = value(a);
    require3(cv, "plif_scan input");
    require(av.numel() == 1, "plif_scan: parameter a must be scalar");
    const long Bn = cv.dim(0), H = cv.dim(1), T = cv.dim(2);
    PlifParams p;
    p.a = av[0];
    p.theta = theta;
    const Real d = p.decay();

    auto u_pre = std::make_shared<Array>(cv.shape);  // pre-reset membrane potentials
    Array out(cv.shape);
    std::vector<Real> u(static_cast<size_t>(H)), cf(static_cast<size_t>(H)), sf(static_cast<size_t>(H)),
        upf(static_cast<size_t>(H));
    for (long b = 0; b < Bn; ++b) {
        std::fill(u.begin(), u.end(), 0.0);
        for (long t = 0; t < T; ++t) {
            for (long h = 0; h < H; ++h) cf[static_cast<size_t>(h)] = cv.at3(b, h, t);
            plif_step(u, cf, p, sf, upf.data());
            for (long h = 0; h < H; ++h) {
                out.at3(b, h, t) = sf[static_cast<size_t>(h)];
                u_pre->at3(b, h, t) = upf[static_cast<size_t>(h)];
            }
        }
    }

    const int id = push(std::move(out));
    nodes_[static_cast<size_t>(id)].backprop = [=](Tape& tp) {
        const Array& go = tp.nodes_[static_cast<size_t>(id)].grad;
        const Array& sp = tp.value(id);  // spikes
        const Array& ci = tp.value(currents);
        Array& gc = tp.grad_mut(currents);
        Array& ga = tp.grad_mut(a);
        Real grad_d = 0.0;
        std::vector<Real> carry(static_cast<size_t>(H));  // dL/du_post at step t (from t+1)
        for (long b = 0; b < Bn; ++b) {
            std::fill(carry.begin(), carry.end(), 0.0);
            for (long t = T - 1; t >= 0; --t)
                for (long h = 0; h < H; ++h) {
                    const Real s = sp.at3(b, h, t);
                    const Real sur = (mode == SurrogateMode::kSurrogate)
                                         ? surrogate_arctan(u_pre->at3(b, h, t) - theta)
                                         : 0.0;
                    // lambda = dL/du_pre; reset path detached, so du_post/du_pre = 1-s
                    const Real lam = go.at3(b, h, t) * sur + carry[static_cast<size_t>(h)] * (1.0 - s);
                    gc.at3(b, h, t) += lam * (1.0 - d);
                    const Real u_prev =
                        (t > 0) ? u_pre->at3(b, h, t - 1) * (1.0 - sp.at3(b, h, t - 1)) : 0.0;
                    grad_d += lam * (u_prev - ci.at3(b, h, t));
                    carry[static_cast<size_t>(h)] = lam * d;
                }
        }
        // d = 1 - sigmoid(a)  =>  dd/da = -sigmoid'(a)
        const Real sg = 1.0 - d;
        ga[0] += grad_d * (-sg * (1.0 - sg));
    };
    return id;
}

int Tape::srnn_scan(int x, int w_in, int w_rec, int tau_m, int tau_adp, Real b0, Real beta,
                    SurrogateMode mode) {
    const Array& xv = value(x);
    const Array& wiv = value(w_in);
    const Array& wrv = value(w_rec);
    const Array& tmv = value(tau_m);
    const Array& tav = value(tau_adp);
    require3(xv, "srnn_scan input");
    const long Bn = xv.dim(0), H = xv.dim(1), T = xv.dim(2);
    require(wiv.ndim() == 2 && wiv.dim(1) == H, "srnn_scan: w_in shape mismatch");
    const long C = wiv.dim(0);  // output channels
    require(wrv.ndim() == 2 && wrv.dim(0) == C && wrv.dim(1) == C, "srnn_scan: w_rec shape mismatch");
    require(tmv.numel() == C && tav.numel() == C, "srnn_scan: time-constant extent mismatch");

    AlifParams p;
    p.tau_m = tmv.data.data();
    p.tau_adp = tav.data.data();
    p.n = C;
    p.b0 = b0;
    p.beta = beta;

    // forward, saving everything the adjoint recursion reads
    auto u_hist = std::make_shared<Array>(std::vector<long>{Bn, C, T});
    auto eta_hist = std::make_shared<Array>(std::vector<long>{Bn, C, T});
    auto theta_hist = std::make_shared<Array>(std::vector<long>{Bn, C, T});
    auto cur_hist = std::make_shared<Array>(std::vector<long>{Bn, C, T});
    Array out({Bn, C, T});
    std::vector<Real> xf(static_cast<size_t>(H)), i1(static_cast<size_t>(C)), i2(static_cast<size_t>(C)),
        cur(static_cast<size_t>(C)), sf(static_cast<size_t>(C)), thf(static_cast<size_t>(C));
    for (long b = 0; b < Bn; ++b) {
        NeuronState st = NeuronState::zeros(C, true);
        for (long t = 0; t < T; ++t) {
            for (long h = 0; h < H; ++h) xf[static_cast<size_t>(h)] = xv.at3(b, h, t);
            matvec(wiv.data.data(), xf.data(), i1.data(), C, H);
            matvec(wrv.data.data(), st.s_prev.data(), i2.data(), C, C);
            for (long j = 0; j < C; ++j) cur[static_cast<size_t>(j)] = i1[static_cast<size_t>(j)] + i2[static_cast<size_t>(j)];
            alif_step(st, cur, p, sf, thf.data());
            for (long j = 0; j < C; ++j) {
                const size_t js = static_cast<size_t>(j);
                out.at3(b, j, t) = sf[js];
                u_hist->at3(b, j, t) = st.u[js];
                eta_hist->at3(b, j, t) = st.eta[js];
                theta_hist->at3(b, j, t) = thf[js];
                cur_hist->at3(b, j, t) = cur[js];
            }
        }
    }

    const int id = push(std::move(out));
    nodes_[static_cast<size_t>(id)].backprop = [=](Tape& tp) {
        const Array& go = tp.nodes_[static_cast<size_t>(id)].grad;
        const Array& sp = tp.value(id);
        const Array& xi = tp.value(x);
        const Array& wi = tp.value(w_in);
        const Array& wr = tp.value(w_rec);
        const Array& tm = tp.value(tau_m);
        const Array& ta = tp.value(tau_adp);
        Array& gx = tp.grad_mut(x);
        Array& gwi = tp.grad_mut(w_in);
        Array& gwr = tp.grad_mut(w_rec);
        Array& gtm = tp.grad_mut(tau_m);
        Array& gta = tp.grad_mut(tau_adp);

        std::vector<Real> alpha(static_cast<size_t>(C)), rho(static_cast<size_t>(C));
        for (long j = 0; j < C; ++j) {
            alpha[static_cast<size_t>(j)] = std::exp(-1.0 / tm[j]);
            rho[static_cast<size_t>(j)] = std::exp(-1.0 / ta[j]);
        }
        std::vector<Real> grad_alpha(static_cast<size_t>(C), 0.0), grad_rho(static_cast<size_t>(C), 0.0);
        std::vector<Real> lam_u_next(static_cast<size_t>(C)), lam_eta_next(static_cast<size_t>(C)),
            lam_s(static_cast<size_t>(C)), lam_u(static_cast<size_t>(C)), lam_eta(static_cast<size_t>(C));

        for (long b = 0; b < Bn; ++b) {
            std::fill(lam_u_next.begin(), lam_u_next.end(), 0.0);
            std::fill(lam_eta_next.begin(), lam_eta_next.end(), 0.0);
            for (long t = T - 1; t >= 0; --t) {
                // dL/ds_t: direct output plus, in surrogate mode, the recurrent
                // input at t+1 and the threshold-adaptation trace at t+1
                for (long j = 0; j < C; ++j) {
                    const size_t js = static_cast<size_t>(j);
                    Real ls = go.at3(b, j, t);
                    if (mode == SurrogateMode::kSurrogate) {
                        Real rec = 0.0;
                        for (long jj = 0; jj < C; ++jj) {
                            const size_t jjs = static_cast<size_t>(jj);
                            rec += wr.data[static_cast<size_t>(jj * C + j)] * lam_u_next[jjs] *
                                   (1.0 - alpha[jjs]);
                        }
                        ls += rec + (1.0 - rho[js]) * lam_eta_next[js];
                    }
                    lam_s[js] = ls;
                }
                for (long j = 0; j < C; ++j) {
                    const size_t js = static_cast<size_t>(j);
                    const Real sur = (mode == SurrogateMode::kSurrogate)
                                         ? surrogate_multi_gaussian(u_hist->at3(b, j, t) -
                                                                    theta_hist->at3(b, j, t))
                                         : 0.0;
                    const Real s_prev = (t > 0) ? sp.at3(b, j, t - 1) : 0.0;
                    const Real u_prev = (t > 0) ? u_hist->at3(b, j, t - 1) : 0.0;
                    const Real eta_prev = (t > 0) ? eta_hist->at3(b, j, t - 1) : 0.0;
                    lam_u[js] = lam_s[js] * sur + alpha[js] * lam_u_next[js];
                    const Real dtheta = -lam_s[js] * sur - s_prev * lam_u[js];
                    lam_eta[js] = beta * dtheta + rho[js] * lam_eta_next[js];
                    grad_alpha[js] += lam_u[js] * (u_prev - cur_hist->at3(b, j, t));
                    grad_rho[js] += lam_eta[js] * (eta_prev - s_prev);
                    const Real gcur = lam_u[js] * (1.0 - alpha[js]);
                    for (long h = 0; h < H; ++h) {
                        const Real xh = xi.at3(b, h, t);
                        gwi.data[static_cast<size_t>(j * H + h)] += gcur * xh;
                        gx.at3(b, h, t) += wi.data[static_cast<size_t>(j * H + h)] * gcur;
                    }
                    for (long i = 0; i < C; ++i)
                        gwr.data[static_cast<size_t>(j * C + i)] +=
                            gcur * ((t > 0) ? sp.at3(b, i, t - 1) : 0.0);
                }
                lam_u_next = lam_u;
                lam_eta_next = lam_eta;
            }
        }
        for (long j = 0; j < C; ++j) {
            const size_t js = static_cast<size_t>(j);
            gtm[j] += grad_alpha[js] * alpha[js] / (tm[j] * tm[j]);
            gta[j] += grad_rho[js] * rho[js] / (ta[j] * ta[j]);
        }
    };
    return id;
}

int Tape::readout_scan(int x, int w, int tau) {
    const Array& xv = value(x);
    const Array& wv = value(w);
    const Array& tv = value(tau);
    require3(xv, "readout_scan input");
    const long Bn = xv.dim(0), Cin = xv.dim(1), T = xv.dim(2);
    require(wv.ndim() == 2 && wv.dim(1) == Cin, "readout_scan: weight shape mismatch");
    const long C = wv.dim(0);
    require(tv.numel() == 1, "readout_scan: tau must be scalar");
    const Real d = 1.0 - 1.0 / tv[0];

    auto v_hist = std::make_shared<Array>(std::vector<long>{Bn, C, T});
    Array out({Bn, C, T});
    std::vector<Real> xf(static_cast<size_t>(Cin)), vf(static_cast<size_t>(C)), u(static_cast<size_t>(C));
    for (long b = 0; b < Bn; ++b) {
        std::fill(u.begin(), u.end(), 0.0);
        for (long t = 0; t < T; ++t) {
            for (long c = 0; c < Cin; ++c) xf[static_cast<size_t>(c)] = xv.at3(b, c, t);
            matvec(wv.data.data(), xf.data(), vf.data(), C, Cin);
            leaky_readout_step(u, vf, tv[0]);
            for (long j = 0; j < C; ++j) {
                out.at3(b, j, t) = u[static_cast<size_t>(j)];
                v_hist->at3(b, j, t) = vf[static_cast<size_t>(j)];
            }
        }
    }

    const int id = push(std::move(out));
    nodes_[static_cast<size_t>(id)].backprop = [=](Tape& tp) {
        const Array& go = tp.nodes_[static_cast<size_t>(id)].grad;
        const Array& uo = tp.value(id);
        const Array& xi = tp.value(x);
        const Array& wi = tp.value(w);
        Array& gx = tp.grad_mut(x);
        Array& gw = tp.grad_mut(w);
        Array& gt = tp.grad_mut(tau);
        Real grad_d = 0.0;
        std::vector<Real> lam_next(static_cast<size_t>(C));
        for (long b = 0; b < Bn; ++b) {
            std::fill(lam_next.begin(), lam_next.end(), 0.0);
            for (long t = T - 1; t >= 0; --t)
                for (long j = 0; j < C; ++j) {
                    const size_t js = static_cast<size_t>(j);
                    const Real lam = go.at3(b, j, t) + d * lam_next[js];
                    const Real u_prev = (t > 0) ? uo.at3(b, j, t - 1) : 0.0;
                    grad_d += lam * (u_prev - v_hist->at3(b, j, t));
                    const Real gv = lam * (1.0 - d);
                    for (long c = 0; c < Cin; ++c) {
                        gw.data[static_cast<size_t>(j * Cin + c)] += gv * xi.at3(b, c, t);
                        gx.at3(b, c, t) += wi.data[static_cast<size_t>(j * Cin + c)] * gv;
                    }
                    lam_next[js] = lam;
                }
        }
        // d = 1 - 1/tau  =>  dd/dtau = 1/tau^2
        gt[0] += grad_d / (tp.value(tau)[0] * tp.value(tau)[0]);
    };
    return id;
}

// ---------------------------------------------------------------------------
// shape plumbing and losses
// ---------------------------------------------------------------------------

int Tape::slice_pad_time(int x, long target_len) {
    const Array& xv = value(x);
    require3(xv, "slice_pad_time input");
    const long Bn = xv.dim(0), C = xv.dim(1), T = xv.dim(2);
    const long Tc = std::min(T, target_len);
    Array out({Bn, C, target_len});
    for (long b = 0; b < Bn; ++b)
        for (long c = 0; c < C; ++c)
            for (long t = 0; t < Tc; ++t) out.at3(b, c, t) = xv.at3(b, c, t);
    const int id = push(std::move(out));
    nodes_[static_cast<size_t>(id)].backprop = [=](Tape& tp) {
        const Array& go = tp.nodes_[static_cast<size_t>(id)].grad;
        Array& gx = tp.grad_mut(x);
        for (long b = 0; b < Bn; ++b)
            for (long c = 0; c < C; ++c)
                for (long t = 0; t < Tc; ++t) gx.at3(b, c, t) += go.at3(b, c, t);
    };
    return id;
}

int Tape::si_snr_loss(int est, int ref, Real cap_db, Real eps) {
    const Array& ev = value(est);
    const Array& rv = value(ref);
    require_same(ev, rv, "si_snr_loss");
    require3(ev, "si_snr_loss input");
    const long Bn = ev.dim(0);
    const long n = ev.numel() / Bn;

    // per-item mean-subtracted projection; the loss is the batch mean of -SI-SNR
    auto ctx = std::make_shared<std::vector<std::array<Real, 3>>>();  // alpha, P, E per item
    auto capped = std::make_shared<std::vector<bool>>();
    Real total = 0.0;
    for (long b = 0; b < Bn; ++b) {
        const Real* e = &ev.data[static_cast<size_t>(b * n)];
        const Real* r = &rv.data[static_cast<size_t>(b * n)];
        Real me = 0.0, mr = 0.0;
        for (long i = 0; i < n; ++i) {
            me += e[i];
            mr += r[i];
        }
        me /= static_cast<Real>(n);
        mr /= static_cast<Real>(n);
        Real er = 0.0, rr = 0.0;
        for (long i = 0; i < n; ++i) {
            er += (e[i] - me) * (r[i] - mr);
            rr += (r[i] - mr) * (r[i] - mr);
        }
        if (rr < 1e-30) throw NumericError("si_snr_loss: zero-energy reference");
        const Real alpha = er / rr;
        const Real P = alpha * alpha * rr;
        Real E = eps;
        for (long i = 0; i < n; ++i) {
            const Real d = (e[i] - me) - alpha * (r[i] - mr);
            E += d * d;
        }
        Real v = 10.0 * std::log10(P / E);
        const bool cap = v > cap_db;
        if (cap) v = cap_db;
        capped->push_back(cap);
        ctx->push_back({alpha, P, E});
        total += -v;
    }

    const int id = push(Array::scalar(total / static_cast<Real>(Bn)));
    nodes_[static_cast<size_t>(id)].backprop = [=](Tape& tp) {
        const Real g0 = tp.nodes_[static_cast<size_t>(id)].grad[0];
        const Array& ei = tp.value(est);
        const Array& ri = tp.value(ref);
        Array& ge = tp.grad_mut(est);
        const Real scale = 10.0 / std::log(10.0);
        for (long b = 0; b < Bn; ++b) {
            if ((*capped)[static_cast<size_t>(b)]) continue;  // flat at the cap
            const Real alpha = (*ctx)[static_cast<size_t>(b)][0];
            const Real P = (*ctx)[static_cast<size_t>(b)][1];
            const Real E = (*ctx)[static_cast<size_t>(b)][2];
            const Real* e = &ei.data[static_cast<size_t>(b * n)];
            const Real* r = &ri.data[static_cast<size_t>(b * n)];
            Real me = 0.0, mr = 0.0;
            for (long i = 0; i < n; ++i) {
                me += e[i];
                mr += r[i];
            }
            me /= static_cast<Real>(n);
            mr /= static_cast<Real>(n);
            // dV/de_hat = s * (2 alpha r_hat / P - 2 err / E); loss adds -V
            // then project out the mean (e was mean-subtracted first)
            std::vector<Real> gl(static_cast<size_t>(n));
            Real gmean = 0.0;
            for (long i = 0; i < n; ++i) {
                const Real rh = r[i] - mr;
                const Real err = (e[i] - me) - alpha * rh;
                Real gv = scale * (2.0 * alpha * rh / P - 2.0 * err / E);
                gv = -gv * g0 / static_cast<Real>(Bn);
                gl[static_cast<size_t>(i)] = gv;
                gmean += gv;
            }
            gmean /= static_cast<Real>(n);
            Real* gep = &ge.data[static_cast<size_t>(b * n)];
            for (long i = 0; i < n; ++i) gep[i] += gl[static_cast<size_t>(i)] - gmean;
        }
    };
    return id;
}

int Tape::mse_loss(int est, int ref) {
    const Array& ev = value(est);
    const Array& rv = value(ref);
    require_same(ev, rv, "mse_loss");
    const long n = ev.numel();
    Real acc = 0.0;
    for (long i = 0; i < n; ++i) {
        const Real d = ev[i] - rv[i];
        acc += d * d;
    }
    const int id = push(Array::scalar(acc / static_cast<Real>(n)));
    nodes_[static_cast<size_t>(id)].backprop = [=](Tape& tp) {
        const Real g0 = tp.nodes_[static_cast<size_t>(id)].grad[0];
        const Array& ei = tp.value(est);
        const Array& ri = tp.value(ref);
        Array& ge = tp.grad_mut(est);
        Array& gr = tp.grad_mut(ref);
        for (long i = 0; i < n; ++i) {
            const Real g = g0 * 2.0 * (ei[i] - ri[i]) / static_cast<Real>(n);
            ge[i] += g;
            gr[i] -= g;
        }
    };
    return id;
}

int Tape::l1_mean(int x) {
    const Array& xv = value(x);
    const long n = xv.numel();
    Real acc = 0.0;
    for (long i = 0; i < n; ++i) acc += std::abs(xv[i]);
    const int id = push(Array::scalar(acc / static_cast<Real>(n)));
    nodes_[static_cast<size_t>(id)].backprop = [=](Tape& tp) {
        const Real g0 = tp.nodes_[static_cast<size_t>(id)].grad[0];
        const Array& xi = tp.value(x);
        Array& gx = tp.grad_mut(x);
        for (long i = 0; i < n; ++i) {
            if (xi[i] > 0.0)
                gx[i] += g0 / static_cast<Real>(n);
            else if (xi[i] < 0.0)
                gx[i] -= g0 / static_cast<Real>(n);
        }
    };
    return id;
}

int Tape::weighted_sum(const std::vector<std::pair<Real, int>>& terms, Real constant) {
    Real acc = constant;
    for (const auto& [w, node] : terms) {
        require(value(node).numel() == 1, "weighted_sum: terms must be scalar");
        acc += w * value(node)[0];
    }
    auto terms_copy = terms;
    const int id = push(Array::scalar(acc));
    nodes_[static_cast<size_t>(id)].backprop = [=](Tape& tp) {
        const Real g0 = tp.nodes_[static_cast<size_t>(id)].grad[0];
        for (const auto& [w, node] : terms_copy) tp.grad_mut(node)[0] += w * g0;
    };
    return id;
}

}  // namespace dpsnn
