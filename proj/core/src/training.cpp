#include "dpsnn/training.hpp"

#include <chrono>
#include <cmath>
#include <random>
#include <sstream>

namespace dpsnn {

LossBreakdown make_loss(Tape& tape, const ForwardResult& fwd, int clean, const LossConfig& cfg) {
    LossBreakdown lb;
    const int sisnr = tape.si_snr_loss(fwd.enhanced, clean);
    const int mse = tape.mse_loss(fwd.enhanced, clean);
    const int l1bn = tape.l1_mean(fwd.suppressed_bn);
    const int l1ro = tape.l1_mean(fwd.suppressed_ro);
    lb.total_node = tape.weighted_sum(
        {{1.0, sisnr}, {cfg.w_mse, mse}, {cfg.lambda2, l1bn}, {cfg.lambda3, l1ro}}, cfg.offset);
    lb.total = tape.value(lb.total_node)[0];
    lb.si_snr_term = tape.value(sisnr)[0];
    lb.mse_term = tape.value(mse)[0];
    lb.l1_bn = tape.value(l1bn)[0];
    lb.l1_ro = tape.value(l1ro)[0];
    if (!std::isfinite(lb.total)) throw TrainAbort("non-finite loss");
    return lb;
}

void Adam::step(DpsnnModel& model, const std::map<std::string, Array>& grads) {
    ++t_;
    const Real bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<Real>(t_));
    const Real bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<Real>(t_));
    model.for_each_param([&](const std::string& name, Array& p) {
        auto it = grads.find(name);
        if (it == grads.end()) return;
        const Array& g = it->second;
        if (!p.same_shape(g)) throw ShapeError("adam: gradient shape mismatch for " + name);
        Array& m = m_.try_emplace(name, Array::zeros(p.shape)).first->second;
        Array& v = v_.try_emplace(name, Array::zeros(p.shape)).first->second;
        for (long i = 0; i < p.numel(); ++i) {
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            const Real mhat = m[i] / bc1;
            const Real vhat = v[i] / bc2;
            p[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    });
    // keep time constants in their valid ranges
    for (Real& v : model.srnn_tau_m.data) v = std::max(Real(1.05), v);
    for (Real& v : model.srnn_tau_adp.data) v = std::max(Real(1.05), v);
    model.readout_tau[0] = std::max(Real(1.0), model.readout_tau[0]);
}

Real clip_grad_norm(std::map<std::string, Array>& grads, Real max_norm) {
    Real sq = 0;
    for (const auto& [name, g] : grads)
        for (Real v : g.data) sq += v * v;
    const Real norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0) {
        const Real scale = max_norm / norm;
        for (auto& [name, g] : grads)
            for (Real& v : g.data) v *= scale;
    }
    return norm;
}

// ---------------------------------------------------------------------------
// synthetic data
// ---------------------------------------------------------------------------

namespace {

std::vector<Real> harmonic_clean(const SynthSpec& spec, std::mt19937_64& rng, long n) {
    std::uniform_real_distribution<Real> uf(0.0, 1.0);
    const Real f0 = spec.f0_min + (spec.f0_max - spec.f0_min) * uf(rng);
    std::uniform_int_distribution<int> uh(spec.harmonics_min, spec.harmonics_max);
    const int nh = uh(rng);
    std::vector<Real> phase(static_cast<size_t>(nh));
    for (Real& p : phase) p = 2.0 * M_PI * uf(rng);
    const Real am_rate = 1.0 + 4.0 * uf(rng);  // slow amplitude modulation, Hz
    const Real am_phase = 2.0 * M_PI * uf(rng);
    const Real onset = 0.02 + 0.05 * uf(rng);  // seconds
    const Real sr = static_cast<Real>(spec.sample_rate);

    std::vector<Real> x(static_cast<size_t>(n), 0.0);
    for (long i = 0; i < n; ++i) {
        const Real t = static_cast<Real>(i) / sr;
        Real v = 0;
        for (int h = 0; h < nh; ++h)
            v += std::sin(2.0 * M_PI * f0 * (h + 1) * t + phase[static_cast<size_t>(h)]) /
                 static_cast<Real>(h + 1);
        const Real am = 0.6 + 0.4 * std::sin(2.0 * M_PI * am_rate * t + am_phase);
        Real env = 1.0;
        const Real secs = static_cast<Real>(n) / sr;
        if (t < onset) env = t / onset;
        if (secs - t < onset) env = (secs - t) / onset;
        x[static_cast<size_t>(i)] = v * am * env;
    }
    // RMS-normalize
    Real p = 0;
    for (Real v : x) p += v * v;
    const Real rms = std::sqrt(p / static_cast<Real>(n));
    for (Real& v : x) v = 0.3 * v / (rms + 1e-12);
    return x;
}

std::vector<Real> make_noise(std::mt19937_64& rng, long n, NoiseKind kind) {
    std::normal_distribution<Real> g(0.0, 1.0);
    std::vector<Real> x(static_cast<size_t>(n));
    switch (kind) {
        case NoiseKind::kWhite:
            for (Real& v : x) v = g(rng);
            break;
        case NoiseKind::kPink: {
            // Voss-ish: sum of octave-spaced first-order lowpassed white sources
            constexpr int rows = 6;
            Real state[rows] = {0};
            for (long i = 0; i < n; ++i) {
                Real acc = 0;
                for (int r = 0; r < rows; ++r) {
                    const Real a = 1.0 / static_cast<Real>(1 << r);
                    state[r] = (1.0 - a) * state[r] + a * g(rng);
                    acc += state[r];
                }
                x[static_cast<size_t>(i)] = acc;
            }
            break;
        }
        case NoiseKind::kTexture: {
            // short looped texture: filtered burst repeated with jitter
            const long loop = n / 4 + 16;
            std::vector<Real> burst(static_cast<size_t>(loop));
            Real lp = 0;
            for (long i = 0; i < loop; ++i) {
                lp = 0.8 * lp + 0.2 * g(rng);
                burst[static_cast<size_t>(i)] = lp;
            }
            for (long i = 0; i < n; ++i) x[static_cast<size_t>(i)] = burst[static_cast<size_t>(i % loop)];
            break;
        }
    }
    return x;
}

}  // namespace

MixturePair synth_clip(const SynthSpec& spec, uint64_t seed) {
    std::mt19937_64 rng(seed);
    const long n = static_cast<long>(spec.clip_seconds * static_cast<Real>(spec.sample_rate));
    MixturePair mp;
    mp.clean = harmonic_clean(spec, rng, n);

    std::uniform_int_distribution<int> kind_d(0, 2);
    std::vector<Real> noise = make_noise(rng, n, static_cast<NoiseKind>(kind_d(rng)));

    std::uniform_int_distribution<size_t> snr_d(0, spec.snr_db.size() - 1);
    mp.snr_db = spec.snr_db[snr_d(rng)];

    Real pc = 0, pn = 0;
    for (long i = 0; i < n; ++i) {
        pc += mp.clean[static_cast<size_t>(i)] * mp.clean[static_cast<size_t>(i)];
        pn += noise[static_cast<size_t>(i)] * noise[static_cast<size_t>(i)];
    }
    const Real scale = std::sqrt(pc / pn) * std::pow(10.0, -mp.snr_db / 20.0);
    mp.noisy.resize(static_cast<size_t>(n));
    for (long i = 0; i < n; ++i)
        mp.noisy[static_cast<size_t>(i)] =
            mp.clean[static_cast<size_t>(i)] + scale * noise[static_cast<size_t>(i)];
    return mp;
}

std::vector<MixturePair> synth_batch(const SynthSpec& spec, long count, uint64_t seed) {
    std::vector<MixturePair> out;
    out.reserve(static_cast<size_t>(count));
    for (long i = 0; i < count; ++i)
        out.push_back(synth_clip(spec, seed * 0x9e3779b97f4a7c15ULL + static_cast<uint64_t>(i)));
    return out;
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

std::string EpochRecord::to_line() const {
    std::ostringstream os;
    os << "epoch=" << epoch << " train_loss=" << train_loss << " train_si_snr=" << train_si_snr
       << " val_si_snr=" << val_si_snr << " val_si_snri=" << val_si_snri << " l1_bn=" << l1_bn
       << " l1_ro=" << l1_ro << " spike_density=" << spike_density << " lr=" << lr;
    return os.str();
}

namespace {

Array stack_waves(const std::vector<MixturePair>& clips, size_t lo, size_t hi, bool clean) {
    const long n = static_cast<long>(clips[lo].noisy.size());
    Array w({static_cast<long>(hi - lo), 1, n});
    for (size_t b = lo; b < hi; ++b) {
        const auto& src = clean ? clips[b].clean : clips[b].noisy;
        for (long i = 0; i < n; ++i) w.at3(static_cast<long>(b - lo), 0, i) = src[static_cast<size_t>(i)];
    }
    return w;
}

}  // namespace

TrainResult train(DpsnnModel& model, const SynthSpec& spec, const LossConfig& loss_cfg,
                  const TrainConfig& cfg,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
    TrainResult result;
    AdamConfig acfg;
    acfg.lr = cfg.lr;
    Adam opt(acfg);

    const auto val_set = synth_batch(spec, cfg.val_clips, cfg.seed ^ 0xdeadbeefULL);
    const auto t_start = std::chrono::steady_clock::now();
    Real best = -1e30;
    long since_improve = 0;

    for (long epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto clips = synth_batch(spec, cfg.clips_per_epoch,
                                       cfg.seed + static_cast<uint64_t>(epoch) * 1315423911ULL);
        EpochRecord rec;
        rec.epoch = epoch;
        long batches = 0;
        double density_acc = 0;
        for (size_t lo = 0; lo + 1 <= clips.size(); lo += static_cast<size_t>(cfg.batch_size)) {
            const size_t hi = std::min(clips.size(), lo + static_cast<size_t>(cfg.batch_size));
            Tape tape;
            const ModelBinding bind = bind_model(tape, model);
            const int wave = tape.leaf(stack_waves(clips, lo, hi, false));
            const int clean = tape.leaf(stack_waves(clips, lo, hi, true));
            const ForwardResult fwd = forward(tape, model, bind, wave);
            const LossBreakdown lb = make_loss(tape, fwd, clean, loss_cfg);
            tape.backward(lb.total_node);

            std::map<std::string, Array> grads;
            for (const auto& [name, node] : bind.nodes) grads[name] = tape.grad(node);
            clip_grad_norm(grads, cfg.grad_clip);
            opt.step(model, grads);

            rec.train_loss += lb.total;
            rec.train_si_snr += -lb.si_snr_term;
            rec.l1_bn += lb.l1_bn;
            rec.l1_ro += lb.l1_ro;
            const auto& st = fwd.stats;
            const double denom = static_cast<double>(st.bn_size + st.scnn_size + st.srnn_size);
            density_acc += (st.bn_spikes + st.scnn_spikes + st.srnn_spikes) / std::max(1.0, denom);
            ++batches;
            if (cfg.time_budget_s) {
                const double el = std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                                                t_start)
                                      .count();
                if (el > *cfg.time_budget_s) break;
            }
        }
        if (batches == 0) break;
        rec.train_loss /= static_cast<Real>(batches);
        rec.train_si_snr /= static_cast<Real>(batches);
        rec.l1_bn /= static_cast<Real>(batches);
        rec.l1_ro /= static_cast<Real>(batches);
        rec.spike_density = static_cast<Real>(density_acc / batches);
        rec.lr = opt.lr();

        // validation (no backward)
        Real vsnr = 0, vsnri = 0;
        for (const auto& clip : val_set) {
            Tape tape;
            const ModelBinding bind = bind_model(tape, model);
            Array w({1, 1, static_cast<long>(clip.noisy.size())});
            for (size_t i = 0; i < clip.noisy.size(); ++i) w.at3(0, 0, static_cast<long>(i)) = clip.noisy[i];
            const int wave = tape.leaf(std::move(w));
            const ForwardResult fwd = forward(tape, model, bind, wave);
            const Array& enh = tape.value(fwd.enhanced);
            const Real s = si_snr(std::span<const Real>(enh.data), clip.clean).value_db;
            vsnr += s;
            vsnri += s - si_snr(clip.noisy, clip.clean).value_db;
        }
        rec.val_si_snr = vsnr / static_cast<Real>(val_set.size());
        rec.val_si_snri = vsnri / static_cast<Real>(val_set.size());

        result.history.push_back(rec);
        if (on_epoch) on_epoch(rec);

        if (rec.val_si_snri > best) {
            best = rec.val_si_snri;
            since_improve = 0;
        } else if (++since_improve >= cfg.plateau_patience) {
            opt.set_lr(opt.lr() * 0.5);
            since_improve = 0;
        }
        if (cfg.time_budget_s) {
            const double el =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
            if (el > *cfg.time_budget_s) break;
        }
    }
    result.best_val_si_snri = best;
    return result;
}

}  // namespace dpsnn
