#pragma once

#include <cmath>
#include <span>

#include "dpsnn/array.hpp"

namespace dpsnn {

// ---------------------------------------------------------------------------
// Spiking neuron dynamics. All time constants are expressed in separator
// time steps (dt = 1, one encoder frame hop). u_rest = 0 and R = 1 throughout.
// ---------------------------------------------------------------------------

struct LifConfig {
    Real u_rest = 0.0;
    Real R = 1.0;
    Real theta = 1.0;   // firing threshold
    Real tau_m = 2.0;   // membrane time constant, > 1
};

struct PlifParams {
    Real a = 0.0;  // learnable; tau_m = 1 / sigmoid(a) > 1 for any finite a
    Real theta = 1.0;
    Real tau_m() const { return 1.0 / sigmoid_a(); }
    Real sigmoid_a() const { return 1.0 / (1.0 + std::exp(-a)); }
    Real decay() const { return 1.0 - sigmoid_a(); }  // 1 - 1/tau_m
};

struct AlifParams {
    // per-neuron learnable time constants; b0 and beta are constants
    const Real* tau_m = nullptr;
    const Real* tau_adp = nullptr;
    long n = 0;
    Real b0 = 0.1;
    Real beta = 1.8;
    Real alpha(long i) const { return std::exp(-1.0 / tau_m[i]); }
    Real rho(long i) const { return std::exp(-1.0 / tau_adp[i]); }
};

// Membrane potentials plus (ALIF) adaptation traces and previous spikes.
struct NeuronState {
    std::vector<Real> u;
    std::vector<Real> eta;
    std::vector<Real> s_prev;

    static NeuronState zeros(long n, bool adaptive) {
        NeuronState st;
        st.u.assign(static_cast<size_t>(n), 0.0);
        if (adaptive) {
            st.eta.assign(static_cast<size_t>(n), 0.0);
            st.s_prev.assign(static_cast<size_t>(n), 0.0);
        }
        return st;
    }
};

inline Real sigmoid(Real x) { return 1.0 / (1.0 + std::exp(-x)); }
inline Real heaviside(Real x) { return x >= 0.0 ? 1.0 : 0.0; }

// Surrogate derivatives for the spike Heaviside.
// arctan: d/dx [ (1/pi) atan(pi x) + 1/2 ] = 1 / (1 + (pi x)^2)
inline Real surrogate_arctan(Real x) {
    const Real pix = M_PI * x;
    return 1.0 / (1.0 + pix * pix);
}

// multi-Gaussian: (1+h) G(x;0,sigma) - h G(x;0,4 sigma), pdf-normalized lobes
struct MultiGaussian {
    Real h = 0.15;
    Real sigma = 0.5;
    Real operator()(Real x) const {
        auto pdf = [](Real y, Real s) {
            return std::exp(-0.5 * (y / s) * (y / s)) / (s * std::sqrt(2.0 * M_PI));
        };
        return (1.0 + h) * pdf(x, sigma) - h * pdf(x, 4.0 * sigma);
    }
};

inline Real surrogate_multi_gaussian(Real x) { return MultiGaussian{}(x); }

// LIF step, Eqs.-style discretization with hard reset to u_rest.
//   u' = (1 - 1/tau) u + (1/tau)(u_rest + R I)
//   s  = Theta(u' - theta)
//   u' = u'(1 - s) + u_rest s
inline void lif_step(std::span<Real> u, std::span<const Real> current, const LifConfig& cfg,
                     std::span<Real> spikes) {
    const Real inv_tau = 1.0 / cfg.tau_m;
    for (size_t i = 0; i < u.size(); ++i) {
        if (!std::isfinite(current[i])) throw NumericError("lif_step: non-finite input current");
        Real up = (1.0 - inv_tau) * u[i] + inv_tau * (cfg.u_rest + cfg.R * current[i]);
        const Real s = heaviside(up - cfg.theta);
        spikes[i] = s;
        u[i] = up * (1.0 - s) + cfg.u_rest * s;
    }
}

// PLIF step: LIF with tau_m = 1/sigmoid(a), layer-shared.
// Also records the pre-reset membrane potential when u_pre is non-null
// (needed by the BPTT backward of the scan op).
inline void plif_step(std::span<Real> u, std::span<const Real> current, const PlifParams& p,
                      std::span<Real> spikes, Real* u_pre = nullptr) {
    const Real d = p.decay();
    for (size_t i = 0; i < u.size(); ++i) {
        if (!std::isfinite(current[i])) throw NumericError("plif_step: non-finite input current");
        Real up = d * u[i] + (1.0 - d) * current[i];
        if (u_pre) u_pre[i] = up;
        const Real s = heaviside(up - p.theta);
        spikes[i] = s;
        u[i] = up * (1.0 - s);
    }
}

// ALIF step with adaptive threshold and subtractive reset:
//   eta' = rho eta + (1 - rho) s_prev
//   theta = b0 + beta eta'
//   u' = alpha u + (1 - alpha) R I - s_prev theta
//   s  = Theta(u' - theta)
// Optionally records theta per neuron for the backward pass.
inline void alif_step(NeuronState& st, std::span<const Real> current, const AlifParams& p,
                      std::span<Real> spikes, Real* theta_out = nullptr) {
    for (long i = 0; i < p.n; ++i) {
        if (!std::isfinite(current[static_cast<size_t>(i)]))
            throw NumericError("alif_step: non-finite input current");
        const Real al = p.alpha(i);
        const Real rh = p.rho(i);
        const size_t ui = static_cast<size_t>(i);
        st.eta[ui] = rh * st.eta[ui] + (1.0 - rh) * st.s_prev[ui];
        const Real theta = p.b0 + p.beta * st.eta[ui];
        if (theta_out) theta_out[i] = theta;
        st.u[ui] = al * st.u[ui] + (1.0 - al) * current[ui] - st.s_prev[ui] * theta;
        const Real s = heaviside(st.u[ui] - theta);
        spikes[ui] = s;
        st.s_prev[ui] = s;
    }
}

// Non-spiking leaky readout integrator: u' = (1 - 1/tau) u + (1/tau) v
inline void leaky_readout_step(std::span<Real> u, std::span<const Real> v, Real tau) {
    const Real inv_tau = 1.0 / tau;
    for (size_t i = 0; i < u.size(); ++i) u[i] = (1.0 - inv_tau) * u[i] + inv_tau * v[i];
}

}  // namespace dpsnn
