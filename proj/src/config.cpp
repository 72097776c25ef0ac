#include "qrlab/config.hpp"

#include "qrlab/rng.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace qrlab {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

[[noreturn]] void parse_error(const std::string& origin, int line, const std::string& msg) {
    throw std::runtime_error("config " + origin + ":" + std::to_string(line) + ": " + msg);
}

}  // namespace

ConfigFile ConfigFile::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_text(ss.str(), path);
}

ConfigFile ConfigFile::parse_text(const std::string& text, const std::string& origin) {
    ConfigFile cfg;
    cfg.raw_ = text;
    cfg.origin_ = origin;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') parse_error(origin, lineno, "unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            if (section.empty()) parse_error(origin, lineno, "empty section name");
            continue;
        }
        size_t eq = line.find('=');
        if (eq == std::string::npos) parse_error(origin, lineno, "expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty()) parse_error(origin, lineno, "empty key");
        if (section.empty()) parse_error(origin, lineno, "key outside any [section]");
        if (cfg.sections_[section].count(key))
            parse_error(origin, lineno, "duplicate key '" + key + "' in [" + section + "]");
        cfg.sections_[section][key] = value;
    }
    return cfg;
}

bool ConfigFile::has(const std::string& section, const std::string& key) const {
    auto it = sections_.find(section);
    return it != sections_.end() && it->second.count(key) > 0;
}

std::string ConfigFile::get(const std::string& section, const std::string& key) const {
    if (!has(section, key))
        throw std::runtime_error("config " + origin_ + ": missing [" + section + "] " + key);
    return sections_.at(section).at(key);
}

std::string ConfigFile::get_or(const std::string& section, const std::string& key,
                               const std::string& fallback) const {
    return has(section, key) ? get(section, key) : fallback;
}

int64_t ConfigFile::get_int(const std::string& section, const std::string& key,
                            int64_t fallback) const {
    if (!has(section, key)) return fallback;
    const std::string v = get(section, key);
    try {
        size_t pos = 0;
        int64_t out = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw std::runtime_error("config " + origin_ + ": [" + section + "] " + key +
                                 " is not an integer: '" + v + "'");
    }
}

double ConfigFile::get_double(const std::string& section, const std::string& key,
                              double fallback) const {
    if (!has(section, key)) return fallback;
    const std::string v = get(section, key);
    try {
        size_t pos = 0;
        double out = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw std::runtime_error("config " + origin_ + ": [" + section + "] " + key +
                                 " is not a number: '" + v + "'");
    }
}

uint64_t ConfigFile::hash() const {
    uint64_t h = 1469598103934665603ull;
    for (char c : raw_) {
        h ^= static_cast<uint8_t>(c);
        h *= 1099511628211ull;
    }
    return h;
}

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, sep)) {
        tok = trim(tok);
        if (!tok.empty()) out.push_back(tok);
    }
    return out;
}

}  // namespace

QuantConfig parse_quant_pair(const std::string& s) {
    char sep = s.find(':') != std::string::npos ? ':' : ',';
    auto parts = split(s, sep);
    if (parts.size() != 2)
        throw std::runtime_error("bad quantization pair '" + s + "' (expected W:A)");
    QuantConfig qc;
    qc.weight_bits = std::stoi(parts[0]);
    qc.act_bits = std::stoi(parts[1]);
    qc.validate();
    return qc;
}

std::vector<QuantConfig> parse_quant_list(const std::string& s) {
    std::vector<QuantConfig> out;
    // "8:4,6:4" uses ':' inside pairs; "8,4 6,4" uses spaces between pairs
    char outer = s.find(':') != std::string::npos ? ',' : ' ';
    for (const auto& tok : split(s, outer)) out.push_back(parse_quant_pair(tok));
    return out;
}

ExperimentConfig experiment_from_config(const ConfigFile& cfg) {
    ExperimentConfig ec;

    ec.dataset.kind = cfg.get_or("dataset", "kind", "two-moons");
    ec.dataset.n = cfg.get_int("dataset", "n", 2000);
    ec.dataset.noise_sd = cfg.get_double("dataset", "noise_sd", 0.1);
    ec.dataset.turns = cfg.get_double("dataset", "turns", 1.5);
    ec.dataset.images = cfg.get_or("dataset", "images", "");
    ec.dataset.labels = cfg.get_or("dataset", "labels", "");
    ec.dataset.csv = cfg.get_or("dataset", "csv", "");
    ec.dataset.subset = cfg.get_int("dataset", "subset", 0);
    ec.dataset.train_frac = cfg.get_double("dataset", "train_frac", 0.7);
    ec.dataset.val_frac = cfg.get_double("dataset", "val_frac", 0.15);

    std::string mkind = cfg.get_or("model", "kind", "mlp");
    if (mkind == "mlp")
        ec.model.kind = ModelSpec::Kind::Mlp;
    else if (mkind == "tiny-conv")
        ec.model.kind = ModelSpec::Kind::TinyConv;
    else
        throw std::runtime_error("config: unknown model kind '" + mkind + "'");
    if (cfg.has("model", "hidden")) {
        ec.model.hidden.clear();
        for (const auto& tok : split(cfg.get("model", "hidden"), ','))
            ec.model.hidden.push_back(std::stoll(tok));
    }
    ec.model.input_dim = cfg.get_int("model", "input_dim", 2);
    ec.model.classes = cfg.get_int("model", "classes", 2);
    ec.model.image_side = cfg.get_int("model", "image_side", 0);

    TrainConfig& t = ec.train;
    t.epochs = static_cast<int>(cfg.get_int("train", "epochs", 200));
    t.batch_size = static_cast<int>(cfg.get_int("train", "batch_size", 64));
    t.learning_rate = cfg.get_double("train", "learning_rate", 0.1);
    t.momentum = cfg.get_double("train", "momentum", 0.9);
    t.weight_decay = cfg.get_double("train", "weight_decay", 1e-4);
    t.reg_start_epoch = static_cast<int>(cfg.get_int("train", "reg_start_epoch", 0));
    t.seed = static_cast<uint64_t>(cfg.get_int("train", "seed", 1));
    t.reg.family = reg_family_from_string(cfg.get_or("reg", "family", "none"));
    t.reg.lambda_w = cfg.get_double("reg", "lambda_w", 0.0);
    t.reg.lambda_y = cfg.get_double("reg", "lambda_y", 0.0);
    if (cfg.has("quant", "eval")) t.quant_eval = parse_quant_list(cfg.get("quant", "eval"));

    ec.output_dir = cfg.get_or("output", "dir", "out");
    t.validate();
    return ec;
}

Dataset build_dataset(const DatasetSpec& spec, uint64_t seed) {
    if (spec.kind == "two-moons") return gen_two_moons(spec.n, spec.noise_sd, seed);
    if (spec.kind == "spirals") return gen_spirals(spec.n, spec.turns, spec.noise_sd, seed);
    if (spec.kind == "idx") return load_idx(spec.images, spec.labels, spec.subset);
    if (spec.kind == "csv") return load_dataset_csv(spec.csv);
    throw std::runtime_error("unknown dataset kind '" + spec.kind + "'");
}

}  // namespace qrlab
