// dpsnn: train / enhance / eval / bench front end.
//
// Output convention: machine-parseable records go to stdout prefixed with "@",
// human-readable progress goes to stderr. Exit codes: 0 ok, 2 usage/config,
// 3 numeric failure, 4 I/O failure.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dpsnn/audio_io.hpp"
#include "dpsnn/metrics.hpp"
#include "dpsnn/stream.hpp"
#include "dpsnn/training.hpp"

namespace fs = std::filesystem;
using namespace dpsnn;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitIo = 4;

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error("config: " + msg) {}
};

struct RunConfig {
    ModelConfig model;
    LossConfig loss;
    TrainConfig train;
    SynthSpec data;
};

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::vector<Real> parse_real_list(const std::string& v, const std::string& key) {
    std::vector<Real> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        try {
            size_t pos = 0;
            out.push_back(std::stod(item, &pos));
            if (pos != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ConfigError("key '" + key + "': cannot parse number '" + item + "'");
        }
    }
    if (out.empty()) throw ConfigError("key '" + key + "': empty list");
    return out;
}

// one `key = value` per line, '#' starts a comment, unknown keys are errors
RunConfig parse_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config: " + path);
    RunConfig cfg;

    std::map<std::string, std::function<void(const std::string&)>> setters;
    auto long_key = [](long& slot) {
        return [&slot](const std::string& v) { slot = std::stol(v); };
    };
    auto real_key = [](Real& slot) {
        return [&slot](const std::string& v) { slot = std::stod(v); };
    };
    setters["N"] = long_key(cfg.model.N);
    setters["B"] = long_key(cfg.model.B);
    setters["H"] = long_key(cfg.model.H);
    setters["L"] = long_key(cfg.model.L);
    setters["K_ctx"] = long_key(cfg.model.K_ctx);
    setters["lambda2"] = real_key(cfg.loss.lambda2);
    setters["lambda3"] = real_key(cfg.loss.lambda3);
    setters["w_mse"] = real_key(cfg.loss.w_mse);
    setters["lr"] = real_key(cfg.train.lr);
    setters["grad_clip"] = real_key(cfg.train.grad_clip);
    setters["epochs"] = long_key(cfg.train.epochs);
    setters["batch_size"] = long_key(cfg.train.batch_size);
    setters["clips_per_epoch"] = long_key(cfg.train.clips_per_epoch);
    setters["val_clips"] = long_key(cfg.train.val_clips);
    setters["plateau_patience"] = long_key(cfg.train.plateau_patience);
    setters["seed"] = [&cfg](const std::string& v) { cfg.train.seed = std::stoull(v); };
    setters["time_budget_s"] = [&cfg](const std::string& v) { cfg.train.time_budget_s = std::stod(v); };
    setters["clip_seconds"] = real_key(cfg.data.clip_seconds);
    setters["sample_rate"] = long_key(cfg.data.sample_rate);
    setters["snr_db"] = [&cfg](const std::string& v) { cfg.data.snr_db = parse_real_list(v, "snr_db"); };

    std::string line;
    long lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        auto it = setters.find(key);
        if (it == setters.end())
            throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        try {
            it->second(value);
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception&) {
            throw ConfigError("line " + std::to_string(lineno) + ": bad value for '" + key +
                              "': '" + value + "'");
        }
    }
    cfg.model.validate();
    return cfg;
}

struct OfflineRun {
    std::vector<Real> enhanced;
    SpikeStats stats;
};

OfflineRun run_offline(const DpsnnModel& model, const std::vector<Real>& samples) {
    Tape tape;
    Array wave({1, 1, static_cast<long>(samples.size())});
    wave.data = samples;
    const int x = tape.leaf(wave);
    const ModelBinding binding = bind_model(tape, model);
    ForwardOptions opts;
    opts.mode = SurrogateMode::kDetach;
    const ForwardResult fwd = forward(tape, model, binding, x, opts);
    OfflineRun out;
    out.enhanced = tape.value(fwd.enhanced).data;
    out.stats = fwd.stats;
    return out;
}

struct StreamRun {
    std::vector<Real> enhanced;
    double wall_seconds = 0;
};

StreamRun run_streaming(const DpsnnModel& model, const std::vector<Real>& samples, long chunk) {
    Stream stream(model);
    StreamRun out;
    out.enhanced.reserve(samples.size());
    const auto t0 = std::chrono::steady_clock::now();
    for (size_t pos = 0; pos < samples.size(); pos += static_cast<size_t>(chunk)) {
        const size_t n = std::min(static_cast<size_t>(chunk), samples.size() - pos);
        const auto part = stream.push(std::span<const Real>(samples.data() + pos, n));
        out.enhanced.insert(out.enhanced.end(), part.begin(), part.end());
    }
    const auto tail = stream.flush();
    out.enhanced.insert(out.enhanced.end(), tail.begin(), tail.end());
    const auto t1 = std::chrono::steady_clock::now();
    out.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
    // pad/trim to the input length, matching the offline path
    out.enhanced.resize(samples.size(), 0.0);
    return out;
}

int cmd_train(const std::string& config_path, const std::string& out_checkpoint,
              const std::string& history_path) {
    const RunConfig cfg = parse_config(config_path);
    DpsnnModel model = init_model(cfg.model, cfg.train.seed);
    const ParamCount params = count_params(model);
    std::cout << "@train params=" << params.total << " seed=" << cfg.train.seed << "\n";

    std::ofstream history;
    if (!history_path.empty()) {
        history.open(history_path, std::ios::trunc);
        if (!history) throw IoError("cannot open history log: " + history_path);
    }
    train(model, cfg.data, cfg.loss, cfg.train, [&](const EpochRecord& rec) {
        std::cout << "@epoch " << rec.to_line() << "\n" << std::flush;
        std::cerr << rec.to_line() << "\n";
        if (history) history << rec.to_line() << "\n" << std::flush;
    });
    save_checkpoint(model, out_checkpoint);
    std::cout << "@checkpoint path=" << out_checkpoint << "\n";
    return 0;
}

int cmd_enhance(const std::string& checkpoint, const std::string& in_wav,
                const std::string& out_wav, bool streaming, double chunk_ms) {
    const DpsnnModel model = load_checkpoint(checkpoint);
    const AudioClip clip = read_wav(in_wav);
    if (clip.sample_rate != 16000) {
        std::cerr << "error: expected 16000 Hz input, got " << clip.sample_rate << " Hz\n";
        return kExitUsage;
    }
    if (clip.samples.empty()) {
        std::cerr << "error: empty input: " << in_wav << "\n";
        return kExitUsage;
    }

    AudioClip out;
    out.sample_rate = clip.sample_rate;
    if (streaming) {
        const long chunk = std::max<long>(1, std::lround(chunk_ms * 1e-3 * clip.sample_rate));
        const StreamRun run = run_streaming(model, clip.samples, chunk);
        out.samples = run.enhanced;
        const double audio_s = static_cast<double>(clip.samples.size()) / clip.sample_rate;
        const LatencyReport lat = latency(model.cfg.encoder(), clip.sample_rate);
        std::cout << "@enhance mode=streaming chunk_samples=" << chunk
                  << " rtf=" << (run.wall_seconds / audio_s)
                  << " buffering_ms=" << lat.buffering_ms
                  << " lookahead_ms=" << lat.lookahead_ms
                  << " latency_ms=" << lat.algorithmic_ms << "\n";
    } else {
        out.samples = run_offline(model, clip.samples).enhanced;
        std::cout << "@enhance mode=offline\n";
    }
    write_wav(out_wav, out);
    return 0;
}

struct EvalRow {
    std::string file;
    Real si_snr_db = 0, si_snri_db = 0, stoi_v = 0;
    double proxy = 0, pdp = 0, latency_ms = 0;
};

std::string eval_line(const EvalRow& r) {
    std::ostringstream os;
    os << "file=" << r.file << " si_snr=" << r.si_snr_db << " si_snri=" << r.si_snri_db
       << " stoi=" << r.stoi_v << " power_proxy=" << r.proxy << " pdp_proxy=" << r.pdp
       << " latency_ms=" << r.latency_ms;
    return os.str();
}

int cmd_eval(const std::string& checkpoint, const std::string& noisy_dir,
             const std::string& clean_dir, const std::string& report_path) {
    const DpsnnModel model = load_checkpoint(checkpoint);
    if (!fs::is_directory(noisy_dir)) throw IoError("not a directory: " + noisy_dir);
    if (!fs::is_directory(clean_dir)) throw IoError("not a directory: " + clean_dir);

    std::set<std::string> noisy_names, clean_names;
    for (const auto& e : fs::directory_iterator(noisy_dir))
        if (e.path().extension() == ".wav") noisy_names.insert(e.path().filename().string());
    for (const auto& e : fs::directory_iterator(clean_dir))
        if (e.path().extension() == ".wav") clean_names.insert(e.path().filename().string());

    std::vector<std::string> paired, skipped;
    for (const auto& n : noisy_names)
        (clean_names.count(n) ? paired : skipped).push_back(n);
    for (const auto& n : clean_names)
        if (!noisy_names.count(n)) skipped.push_back(n);
    for (const auto& n : skipped) std::cerr << "skipping unpaired file: " << n << "\n";
    if (paired.empty()) {
        std::cerr << "error: no paired files between " << noisy_dir << " and " << clean_dir << "\n";
        return kExitUsage;
    }

    std::ofstream report(report_path, std::ios::trunc);
    if (!report) throw IoError("cannot open report: " + report_path);

    const LatencyReport lat = latency(model.cfg.encoder(), 16000);
    EvalRow agg;
    agg.file = "AGGREGATE";
    for (const auto& name : paired) {
        const AudioClip noisy = read_wav((fs::path(noisy_dir) / name).string());
        const AudioClip clean = read_wav((fs::path(clean_dir) / name).string());
        if (noisy.sample_rate != 16000 || clean.sample_rate != 16000) {
            std::cerr << "error: expected 16000 Hz: " << name << "\n";
            return kExitUsage;
        }
        if (noisy.samples.size() != clean.samples.size()) {
            std::cerr << "skipping length-mismatched pair: " << name << "\n";
            continue;
        }
        const OfflineRun run = run_offline(model, noisy.samples);
        const double audio_s = static_cast<double>(noisy.samples.size()) / 16000.0;
        const PowerReport power = power_proxy(run.stats, model.cfg, audio_s, true);
        EvalRow row;
        row.file = name;
        row.si_snr_db = si_snr(run.enhanced, clean.samples).value_db;
        row.si_snri_db = si_snri(run.enhanced, noisy.samples, clean.samples);
        row.stoi_v = stoi(run.enhanced, clean.samples, 16000);
        row.proxy = power.power_proxy;
        row.pdp = power.pdp_proxy;
        row.latency_ms = lat.algorithmic_ms;
        std::cout << "@eval " << eval_line(row) << "\n";
        report << eval_line(row) << "\n";
        agg.si_snr_db += row.si_snr_db;
        agg.si_snri_db += row.si_snri_db;
        agg.stoi_v += row.stoi_v;
        agg.proxy += row.proxy;
        agg.pdp += row.pdp;
    }
    const double n = static_cast<double>(paired.size());
    agg.si_snr_db /= n;
    agg.si_snri_db /= n;
    agg.stoi_v /= n;
    agg.proxy /= n;
    agg.pdp /= n;
    agg.latency_ms = lat.algorithmic_ms;
    std::cout << "@eval " << eval_line(agg) << "\n";
    report << eval_line(agg) << "\n";
    return 0;
}

int cmd_bench(const std::string& checkpoint, double seconds, uint64_t seed) {
    const DpsnnModel model = load_checkpoint(checkpoint);
    SynthSpec spec;
    spec.clip_seconds = seconds;
    const MixturePair mix = synth_clip(spec, seed);

    const auto t0 = std::chrono::steady_clock::now();
    const OfflineRun run = run_offline(model, mix.noisy);
    const auto t1 = std::chrono::steady_clock::now();
    const double wall = std::chrono::duration<double>(t1 - t0).count();

    const PowerReport with_codec = power_proxy(run.stats, model.cfg, seconds, false);
    const PowerReport no_codec = power_proxy(run.stats, model.cfg, seconds, true);
    std::cout << "@bench scope=separator_only power_proxy=" << no_codec.power_proxy
              << " pdp_proxy=" << no_codec.pdp_proxy
              << " neuron_updates_per_s=" << no_codec.neuron_updates_per_s << "\n";
    std::cout << "@bench scope=with_codec power_proxy=" << with_codec.power_proxy
              << " pdp_proxy=" << with_codec.pdp_proxy
              << " neuron_updates_per_s=" << with_codec.neuron_updates_per_s << "\n";
    std::cout << "@bench rtf=" << (wall / seconds) << " audio_s=" << seconds << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"streaming spiking speech enhancement"};
    app.require_subcommand(1);

    std::string config_path, checkpoint, history_path, in_wav, out_wav, noisy_dir, clean_dir,
        report_path;
    bool streaming = false, offline = false;
    double chunk_ms = 10.0, bench_seconds = 4.0;
    uint64_t bench_seed = 1;

    auto* train_cmd = app.add_subcommand("train", "train a model on synthetic mixtures");
    train_cmd->add_option("--config", config_path, "run configuration file")->required();
    train_cmd->add_option("--out", checkpoint, "output checkpoint path")->required();
    train_cmd->add_option("--history", history_path, "optional per-epoch history log");

    auto* enhance_cmd = app.add_subcommand("enhance", "enhance one wav file");
    enhance_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    enhance_cmd->add_option("--in", in_wav, "input wav (16 kHz mono)")->required();
    enhance_cmd->add_option("--out", out_wav, "output wav")->required();
    auto* sflag = enhance_cmd->add_flag("--streaming", streaming, "block-based streaming inference");
    enhance_cmd->add_flag("--offline", offline, "whole-utterance inference")->excludes(sflag);
    enhance_cmd->add_option("--chunk-ms", chunk_ms, "streaming chunk size, ms");

    auto* eval_cmd = app.add_subcommand("eval", "evaluate on paired noisy/clean directories");
    eval_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    eval_cmd->add_option("--noisy", noisy_dir, "directory of noisy wavs")->required();
    eval_cmd->add_option("--clean", clean_dir, "directory of matching clean wavs")->required();
    eval_cmd->add_option("--report", report_path, "output report file")->required();

    auto* bench_cmd = app.add_subcommand("bench", "report power proxy and real-time factor");
    bench_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    bench_cmd->add_option("--seconds", bench_seconds, "synthetic input length, s");
    bench_cmd->add_option("--seed", bench_seed, "synthetic input seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : kExitUsage;
    }

    try {
        if (train_cmd->parsed()) return cmd_train(config_path, checkpoint, history_path);
        if (enhance_cmd->parsed()) return cmd_enhance(checkpoint, in_wav, out_wav, streaming, chunk_ms);
        if (eval_cmd->parsed()) return cmd_eval(checkpoint, noisy_dir, clean_dir, report_path);
        if (bench_cmd->parsed()) return cmd_bench(checkpoint, bench_seconds, bench_seed);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const TrainAbort& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return kExitUsage;
}
