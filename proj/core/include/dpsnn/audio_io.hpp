#pragma once

#include <string>
#include <vector>

#include "dpsnn/network.hpp"

namespace dpsnn {

class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error("io: " + msg) {}
};

struct AudioClip {
    std::vector<Real> samples;  // mono, nominally in [-1, 1]
    long sample_rate = 16000;
};

// RIFF/WAVE, mono, PCM 16-bit or IEEE-float 32-bit
AudioClip read_wav(const std::string& path);

// 16-bit PCM little-endian; samples clamped to [-1, 1] before quantization.
// Written atomically (temp file + rename).
void write_wav(const std::string& path, const AudioClip& clip);

// Binary checkpoint: magic, format version, config block, named tensors.
// Round trip is bit-exact; writes are atomic.
void save_checkpoint(const DpsnnModel& model, const std::string& path);
DpsnnModel load_checkpoint(const std::string& path);

}  // namespace dpsnn
