#pragma once

#include "qrlab/model.hpp"
#include "qrlab/quantizer.hpp"
#include "qrlab/trainer.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace qrlab {

// Flat key-value experiment config with [section] headers; '#' starts a
// comment. Parse errors carry line numbers.
class ConfigFile {
public:
    static ConfigFile parse_file(const std::string& path);
    static ConfigFile parse_text(const std::string& text, const std::string& origin = "<text>");

    bool has(const std::string& section, const std::string& key) const;
    std::string get(const std::string& section, const std::string& key) const;
    std::string get_or(const std::string& section, const std::string& key,
                       const std::string& fallback) const;
    int64_t get_int(const std::string& section, const std::string& key, int64_t fallback) const;
    double get_double(const std::string& section, const std::string& key, double fallback) const;

    const std::string& text() const { return raw_; }
    uint64_t hash() const;

private:
    std::map<std::string, std::map<std::string, std::string>> sections_;
    std::string raw_;
    std::string origin_;
};

struct DatasetSpec {
    std::string kind = "two-moons";  // two-moons | spirals | idx | csv
    int64_t n = 2000;
    double noise_sd = 0.1;
    double turns = 1.5;
    std::string images, labels, csv;  // external sources
    int64_t subset = 0;
    double train_frac = 0.7;
    double val_frac = 0.15;
};

struct ExperimentConfig {
    DatasetSpec dataset;
    ModelSpec model;
    TrainConfig train;
    std::string output_dir = "out";
};

ExperimentConfig experiment_from_config(const ConfigFile& cfg);

// Realizes the dataset spec (root seed comes from the train config).
Dataset build_dataset(const DatasetSpec& spec, uint64_t seed);

// "8:4" or "8,4" -> QuantConfig; comma-separated lists of ':'-pairs allowed.
QuantConfig parse_quant_pair(const std::string& s);
std::vector<QuantConfig> parse_quant_list(const std::string& s);

}  // namespace qrlab
