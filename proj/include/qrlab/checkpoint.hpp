#pragma once

#include "qrlab/model.hpp"
#include "qrlab/quantizer.hpp"

#include <cstdint>
#include <map>
#include <string>

namespace qrlab {

// Binary model container. Layout (all integers and 64-bit reals little
// endian): magic "QRCK", u32 version, model spec, provenance (config hash,
// seed, epoch), tensor table (name, shape, f64 payload), optional per-tensor
// quantization schemes. save -> load -> save is byte-identical.
struct Checkpoint {
    static constexpr uint32_t kVersion = 1;

    Model model;
    std::map<std::string, QuantScheme> schemes;  // may be empty
    uint64_t config_hash = 0;
    uint64_t seed = 0;
    uint32_t epoch = 0;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace qrlab
