#include "dpsnn/audio_io.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>

namespace dpsnn {

namespace {

template <typename T>
T read_le(std::istream& in, const char* what) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw IoError(std::string("truncated file while reading ") + what);
    return v;
}

template <typename T>
void write_le(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

// write to <path>.tmp then rename, so an interrupted save never corrupts
// an existing file
class AtomicFile {
public:
    explicit AtomicFile(const std::string& path)
        : path_(path), tmp_(path + ".tmp"), out_(tmp_, std::ios::binary | std::ios::trunc) {
        if (!out_) throw IoError("cannot open for writing: " + tmp_);
    }
    std::ostream& stream() { return out_; }
    void commit() {
        out_.flush();
        if (!out_) throw IoError("write failed: " + tmp_);
        out_.close();
        std::error_code ec;
        std::filesystem::rename(tmp_, path_, ec);
        if (ec) throw IoError("rename failed: " + path_ + ": " + ec.message());
        committed_ = true;
    }
    ~AtomicFile() {
        if (!committed_) {
            std::error_code ec;
            std::filesystem::remove(tmp_, ec);
        }
    }

private:
    std::string path_, tmp_;
    std::ofstream out_;
    bool committed_ = false;
};

}  // namespace

AudioClip read_wav(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);

    char riff[4], wave[4];
    in.read(riff, 4);
    if (!in || std::memcmp(riff, "RIFF", 4) != 0) throw IoError("not a RIFF file: " + path);
    read_le<uint32_t>(in, "riff size");
    in.read(wave, 4);
    if (!in || std::memcmp(wave, "WAVE", 4) != 0) throw IoError("not a WAVE file: " + path);

    uint16_t format = 0, channels = 0, bits = 0;
    uint32_t rate = 0;
    bool have_fmt = false;
    AudioClip clip;

    while (in) {
        char id[4];
        in.read(id, 4);
        if (!in) break;
        const uint32_t size = read_le<uint32_t>(in, "chunk size");
        if (std::memcmp(id, "fmt ", 4) == 0) {
            format = read_le<uint16_t>(in, "format");
            channels = read_le<uint16_t>(in, "channels");
            rate = read_le<uint32_t>(in, "rate");
            read_le<uint32_t>(in, "byte rate");
            read_le<uint16_t>(in, "block align");
            bits = read_le<uint16_t>(in, "bits");
            if (size > 16) in.seekg(size - 16, std::ios::cur);
            have_fmt = true;
        } else if (std::memcmp(id, "data", 4) == 0) {
            if (!have_fmt) throw IoError("data chunk before fmt chunk: " + path);
            if (channels != 1) throw IoError("only mono supported, got " + std::to_string(channels) + " channels");
            if (format == 1 && bits == 16) {
                const uint32_t n = size / 2;
                clip.samples.resize(n);
                for (uint32_t i = 0; i < n; ++i)
                    clip.samples[i] = static_cast<Real>(read_le<int16_t>(in, "sample")) / 32768.0;
            } else if (format == 3 && bits == 32) {
                const uint32_t n = size / 4;
                clip.samples.resize(n);
                for (uint32_t i = 0; i < n; ++i)
                    clip.samples[i] = static_cast<Real>(read_le<float>(in, "sample"));
            } else {
                throw IoError("unsupported encoding (want PCM16 or float32), format=" +
                              std::to_string(format) + " bits=" + std::to_string(bits));
            }
            clip.sample_rate = static_cast<long>(rate);
            return clip;
        } else {
            in.seekg(size + (size & 1), std::ios::cur);
        }
    }
    throw IoError("no data chunk found: " + path);
}

void write_wav(const std::string& path, const AudioClip& clip) {
    AtomicFile file(path);
    std::ostream& out = file.stream();
    const uint32_t n = static_cast<uint32_t>(clip.samples.size());
    const uint32_t data_bytes = n * 2;
    out.write("RIFF", 4);
    write_le<uint32_t>(out, 36 + data_bytes);
    out.write("WAVE", 4);
    out.write("fmt ", 4);
    write_le<uint32_t>(out, 16);
    write_le<uint16_t>(out, 1);  // PCM
    write_le<uint16_t>(out, 1);  // mono
    write_le<uint32_t>(out, static_cast<uint32_t>(clip.sample_rate));
    write_le<uint32_t>(out, static_cast<uint32_t>(clip.sample_rate) * 2);
    write_le<uint16_t>(out, 2);
    write_le<uint16_t>(out, 16);
    out.write("data", 4);
    write_le<uint32_t>(out, data_bytes);
    for (uint32_t i = 0; i < n; ++i) {
        const Real v = std::clamp(clip.samples[i], Real(-1), Real(1));
        const long q = std::lround(v * 32768.0);
        write_le<int16_t>(out, static_cast<int16_t>(std::clamp(q, -32768L, 32767L)));
    }
    file.commit();
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

namespace {
constexpr char kMagic[8] = {'D', 'P', 'S', 'N', 'N', 'C', 'K', '1'};
constexpr uint32_t kVersion = 1;
}  // namespace

void save_checkpoint(const DpsnnModel& model, const std::string& path) {
    AtomicFile file(path);
    std::ostream& out = file.stream();
    out.write(kMagic, 8);
    write_le<uint32_t>(out, kVersion);
    const ModelConfig& c = model.cfg;
    write_le<int64_t>(out, c.N);
    write_le<int64_t>(out, c.B);
    write_le<int64_t>(out, c.H);
    write_le<int64_t>(out, c.L);
    write_le<int64_t>(out, c.K_ctx);
    write_le<double>(out, c.alif_b0);
    write_le<double>(out, c.alif_beta);
    write_le<double>(out, c.plif_theta);
    write_le<double>(out, c.ln_eps);

    uint32_t count = 0;
    model.for_each_param([&count](const std::string&, const Array&) { ++count; });
    write_le<uint32_t>(out, count);
    model.for_each_param([&out](const std::string& name, const Array& a) {
        write_le<uint32_t>(out, static_cast<uint32_t>(name.size()));
        out.write(name.data(), static_cast<long>(name.size()));
        write_le<uint32_t>(out, static_cast<uint32_t>(a.shape.size()));
        for (long d : a.shape) write_le<int64_t>(out, d);
        // 64-bit values so the in-memory model round-trips bit-exactly
        for (Real v : a.data) write_le<double>(out, v);
    });
    file.commit();
}

DpsnnModel load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0) throw IoError("bad checkpoint magic: " + path);
    const uint32_t version = read_le<uint32_t>(in, "version");
    if (version != kVersion)
        throw IoError("unsupported checkpoint version " + std::to_string(version));

    ModelConfig c;
    c.N = read_le<int64_t>(in, "N");
    c.B = read_le<int64_t>(in, "B");
    c.H = read_le<int64_t>(in, "H");
    c.L = read_le<int64_t>(in, "L");
    c.K_ctx = read_le<int64_t>(in, "K_ctx");
    c.alif_b0 = read_le<double>(in, "alif_b0");
    c.alif_beta = read_le<double>(in, "alif_beta");
    c.plif_theta = read_le<double>(in, "plif_theta");
    c.ln_eps = read_le<double>(in, "ln_eps");
    c.validate();

    DpsnnModel model = init_model(c, 0);  // shapes; values overwritten below
    std::map<std::string, Array*> slots;
    model.for_each_param([&slots](const std::string& name, Array& a) { slots[name] = &a; });

    const uint32_t count = read_le<uint32_t>(in, "tensor count");
    std::map<std::string, bool> seen;
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t name_len = read_le<uint32_t>(in, "tensor name length");
        if (name_len > 4096) throw IoError("corrupt tensor name length");
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (!in) throw IoError("truncated tensor name");
        auto it = slots.find(name);
        if (it == slots.end()) throw IoError("unknown tensor name: " + name);
        const uint32_t ndim = read_le<uint32_t>(in, "tensor rank");
        std::vector<long> shape(ndim);
        for (uint32_t d = 0; d < ndim; ++d) shape[d] = read_le<int64_t>(in, "tensor extent");
        if (shape != it->second->shape)
            throw IoError("tensor shape mismatch for " + name + ": " + shape_str(shape) + " vs " +
                          shape_str(it->second->shape));
        for (Real& v : it->second->data) v = read_le<double>(in, "tensor data");
        seen[name] = true;
    }
    for (const auto& [name, slot] : slots)
        if (!seen.count(name)) throw IoError("checkpoint missing tensor: " + name);
    return model;
}

}  // namespace dpsnn
