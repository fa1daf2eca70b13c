#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <vector>

#include "doctest.h"
#include "dpsnn/audio_io.hpp"
#include "test_util.hpp"

using namespace dpsnn;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("dpsnn_test_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

ModelConfig tiny_cfg() {
    ModelConfig c;
    c.N = 16;
    c.B = 8;
    c.H = 16;
    c.L = 32;
    c.K_ctx = 4;
    return c;
}

}  // namespace

TEST_CASE("wav round trip is exact to one 16-bit quantization step") {
    TempDir dir;
    AudioClip clip;
    clip.sample_rate = 16000;
    std::mt19937_64 rng(51);
    std::uniform_real_distribution<Real> dist(-0.99, 0.99);
    clip.samples.resize(1000);
    for (Real& v : clip.samples) v = dist(rng);

    write_wav(dir.file("a.wav"), clip);
    const AudioClip back = read_wav(dir.file("a.wav"));
    CHECK(back.sample_rate == 16000);
    REQUIRE(back.samples.size() == clip.samples.size());
    for (size_t i = 0; i < clip.samples.size(); ++i)
        CHECK(std::abs(back.samples[i] - clip.samples[i]) <= 1.0 / 32768.0);

    // quantized values survive a second round trip bit-exactly
    write_wav(dir.file("b.wav"), back);
    const AudioClip again = read_wav(dir.file("b.wav"));
    CHECK(again.samples == back.samples);
}

TEST_CASE("PCM16 edge values map to the documented floats") {
    TempDir dir;
    AudioClip clip;
    clip.sample_rate = 16000;
    clip.samples = {-1.0, 1.5, -2.0, 0.0};  // out-of-range values are clamped
    write_wav(dir.file("edge.wav"), clip);
    const AudioClip back = read_wav(dir.file("edge.wav"));
    CHECK(back.samples[0] == -1.0);                  // -32768 / 32768
    CHECK(back.samples[1] == 32767.0 / 32768.0);     // 1.5 clamps to 32767
    CHECK(back.samples[2] == -1.0);                  // -2.0 clamps to -32768
    CHECK(back.samples[3] == 0.0);
}

TEST_CASE("wav header bytes are a canonical 16-bit mono PCM RIFF") {
    TempDir dir;
    AudioClip clip;
    clip.sample_rate = 16000;
    clip.samples = {0.0, 0.5};
    write_wav(dir.file("h.wav"), clip);

    std::ifstream in(dir.file("h.wav"), std::ios::binary);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    REQUIRE(bytes.size() == 48);  // 44-byte header + 2 samples
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "RIFF");
    CHECK(std::string(bytes.begin() + 8, bytes.begin() + 12) == "WAVE");
    CHECK(std::string(bytes.begin() + 12, bytes.begin() + 16) == "fmt ");
    CHECK(bytes[20] == 1);  // PCM
    CHECK(bytes[22] == 1);  // mono
    const uint32_t rate = bytes[24] | (bytes[25] << 8) | (bytes[26] << 16) |
                          (static_cast<uint32_t>(bytes[27]) << 24);
    CHECK(rate == 16000);
    CHECK(bytes[34] == 16);  // bits per sample
    CHECK(std::string(bytes.begin() + 36, bytes.begin() + 40) == "data");
    // sample 0.5 -> round(0.5 * 32768) = 16384
    const int16_t s1 = static_cast<int16_t>(bytes[46] | (bytes[47] << 8));
    CHECK(s1 == 16384);
}

TEST_CASE("read_wav error handling") {
    TempDir dir;
    CHECK_THROWS_AS(read_wav(dir.file("missing.wav")), IoError);

    std::ofstream bad(dir.file("bad.wav"), std::ios::binary);
    bad << "this is not a riff file at all";
    bad.close();
    CHECK_THROWS_AS(read_wav(dir.file("bad.wav")), IoError);

    // truncated: valid header, data chunk larger than the file
    AudioClip clip;
    clip.sample_rate = 16000;
    clip.samples.assign(100, 0.25);
    write_wav(dir.file("t.wav"), clip);
    {
        std::ifstream in(dir.file("t.wav"), std::ios::binary);
        std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
        std::ofstream out(dir.file("trunc.wav"), std::ios::binary);
        out.write(bytes.data(), static_cast<long>(bytes.size()) - 60);
    }
    CHECK_THROWS_AS(read_wav(dir.file("trunc.wav")), IoError);
}

TEST_CASE("float32 wav files are read back") {
    TempDir dir;
    // hand-assemble a float32 WAVE file
    const std::vector<float> samples{0.25f, -0.5f, 1.0f};
    std::ofstream out(dir.file("f32.wav"), std::ios::binary);
    auto w32 = [&](uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    auto w16 = [&](uint16_t v) { out.write(reinterpret_cast<const char*>(&v), 2); };
    out.write("RIFF", 4);
    w32(36 + 12);
    out.write("WAVE", 4);
    out.write("fmt ", 4);
    w32(16);
    w16(3);  // IEEE float
    w16(1);
    w32(16000);
    w32(16000 * 4);
    w16(4);
    w16(32);
    out.write("data", 4);
    w32(12);
    out.write(reinterpret_cast<const char*>(samples.data()), 12);
    out.close();

    const AudioClip clip = read_wav(dir.file("f32.wav"));
    CHECK(clip.sample_rate == 16000);
    REQUIRE(clip.samples.size() == 3);
    CHECK(clip.samples[0] == 0.25);
    CHECK(clip.samples[1] == -0.5);
    CHECK(clip.samples[2] == 1.0);
}

TEST_CASE("checkpoint round trip restores every tensor bit-exactly") {
    TempDir dir;
    const DpsnnModel m = init_model(tiny_cfg(), 61);
    save_checkpoint(m, dir.file("m.ckpt"));
    const DpsnnModel back = load_checkpoint(dir.file("m.ckpt"));

    CHECK(back.cfg.N == m.cfg.N);
    CHECK(back.cfg.K_ctx == m.cfg.K_ctx);
    long compared = 0;
    m.for_each_param([&](const std::string& name, const Array& p) {
        back.for_each_param([&](const std::string& nb, const Array& pb) {
            if (nb != name) return;
            CHECK(pb.shape == p.shape);
            CHECK(pb.data == p.data);  // bitwise identical via 64-bit storage
            ++compared;
        });
    });
    CHECK(compared == 17);
}

TEST_CASE("checkpoint loader rejects corruption") {
    TempDir dir;
    const DpsnnModel m = init_model(tiny_cfg(), 62);
    save_checkpoint(m, dir.file("m.ckpt"));

    // truncation
    {
        std::ifstream in(dir.file("m.ckpt"), std::ios::binary);
        std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
        std::ofstream out(dir.file("trunc.ckpt"), std::ios::binary);
        out.write(bytes.data(), static_cast<long>(bytes.size()) / 2);
    }
    CHECK_THROWS_AS(load_checkpoint(dir.file("trunc.ckpt")), IoError);

    // bad magic
    {
        std::ifstream in(dir.file("m.ckpt"), std::ios::binary);
        std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
        bytes[0] = 'X';
        std::ofstream out(dir.file("magic.ckpt"), std::ios::binary);
        out.write(bytes.data(), static_cast<long>(bytes.size()));
    }
    CHECK_THROWS_AS(load_checkpoint(dir.file("magic.ckpt")), IoError);

    CHECK_THROWS_AS(load_checkpoint(dir.file("nonexistent.ckpt")), IoError);
}

TEST_CASE("writes are atomic: no stray temp file remains") {
    TempDir dir;
    AudioClip clip;
    clip.sample_rate = 16000;
    clip.samples.assign(32, 0.1);
    write_wav(dir.file("x.wav"), clip);
    const DpsnnModel m = init_model(tiny_cfg(), 63);
    save_checkpoint(m, dir.file("x.ckpt"));
    long entries = 0;
    for (const auto& e : fs::directory_iterator(dir.path)) {
        ++entries;
        CHECK(e.path().extension() != ".tmp");
    }
    CHECK(entries == 2);
}
