#include <benchmark/benchmark.h>

#include <random>
#include <span>
#include <vector>

#include "dpsnn/stream.hpp"

using namespace dpsnn;

namespace {

ModelConfig bench_cfg(long scale) {
    ModelConfig c;
    c.N = 64 * scale;
    c.B = 32 * scale;
    c.H = 64 * scale;
    c.L = 80;
    c.K_ctx = 4;
    return c;
}

std::vector<Real> bench_wave(long n) {
    std::vector<Real> w(static_cast<size_t>(n));
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<Real> dist(-0.5, 0.5);
    for (Real& v : w) v = dist(rng);
    return w;
}

void offline_forward(benchmark::State& state) {
    const DpsnnModel m = init_model(bench_cfg(state.range(0)), 2);
    const std::vector<Real> wave = bench_wave(16000);
    for (auto _ : state) {
        Tape tape;
        Array x({1, 1, static_cast<long>(wave.size())});
        x.data = wave;
        const ForwardResult fwd = forward(tape, m, bind_model(tape, m), tape.leaf(x));
        benchmark::DoNotOptimize(tape.value(fwd.enhanced).data.data());
    }
    state.counters["audio_s_per_s"] =
        benchmark::Counter(static_cast<double>(state.iterations()), benchmark::Counter::kIsRate);
}
BENCHMARK(offline_forward)->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond);

void streaming_push(benchmark::State& state) {
    const DpsnnModel m = init_model(bench_cfg(1), 3);
    const std::vector<Real> wave = bench_wave(16000);
    const size_t chunk = static_cast<size_t>(state.range(0));
    for (auto _ : state) {
        Stream s(m);
        for (size_t pos = 0; pos < wave.size(); pos += chunk) {
            const size_t n = std::min(chunk, wave.size() - pos);
            const auto out = s.push(std::span<const Real>(wave.data() + pos, n));
            benchmark::DoNotOptimize(out.data());
        }
        const auto tail = s.flush();
        benchmark::DoNotOptimize(tail.data());
    }
    state.counters["audio_s_per_s"] =
        benchmark::Counter(static_cast<double>(state.iterations()), benchmark::Counter::kIsRate);
}
BENCHMARK(streaming_push)->Arg(40)->Arg(160)->Arg(640)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
