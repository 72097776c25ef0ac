#include "qrlab/data.hpp"

#include "qrlab/rng.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace qrlab {

Tensor Dataset::example(int64_t i) const {
    Tensor out = Tensor::zeros({1, dim()});
    for (int64_t j = 0; j < dim(); ++j) out.at(0, j) = features.at(i, j);
    return out;
}

Tensor Dataset::batch_features(const std::vector<int64_t>& ids) const {
    Tensor out = Tensor::zeros({static_cast<int64_t>(ids.size()), dim()});
    for (size_t r = 0; r < ids.size(); ++r)
        for (int64_t j = 0; j < dim(); ++j) out.at(static_cast<int64_t>(r), j) = features.at(ids[r], j);
    return out;
}

Tensor Dataset::batch_onehot(const std::vector<int64_t>& ids) const {
    Tensor out = Tensor::zeros({static_cast<int64_t>(ids.size()), classes});
    for (size_t r = 0; r < ids.size(); ++r)
        out.at(static_cast<int64_t>(r), labels[static_cast<size_t>(ids[r])]) = 1.0;
    return out;
}

DatasetSplits split_dataset(const Dataset& d, double train_frac, double val_frac) {
    int64_t n = d.size();
    int64_t n_train = static_cast<int64_t>(static_cast<double>(n) * train_frac);
    int64_t n_val = static_cast<int64_t>(static_cast<double>(n) * val_frac);
    if (n_train < 1 || n_val < 1 || n_train + n_val >= n)
        throw std::invalid_argument("split_dataset: fractions leave an empty split");
    auto take = [&](int64_t lo, int64_t hi, Split tag) {
        Dataset out;
        out.classes = d.classes;
        out.split = tag;
        out.features = Tensor::zeros({hi - lo, d.dim()});
        out.labels.resize(static_cast<size_t>(hi - lo));
        for (int64_t i = lo; i < hi; ++i) {
            for (int64_t j = 0; j < d.dim(); ++j) out.features.at(i - lo, j) = d.features.at(i, j);
            out.labels[static_cast<size_t>(i - lo)] = d.labels[static_cast<size_t>(i)];
        }
        return out;
    };
    return {take(0, n_train, Split::Train), take(n_train, n_train + n_val, Split::Val),
            take(n_train + n_val, n, Split::Test)};
}

Dataset gen_two_moons(int64_t n, double noise_sd, uint64_t seed) {
    if (n < 2 || n % 2 != 0) throw std::invalid_argument("gen_two_moons: n must be even and >= 2");
    if (noise_sd < 0) throw std::invalid_argument("gen_two_moons: negative noise");
    Rng rng(derive_seed(seed, "two-moons"));
    int64_t half = n / 2;
    Dataset d;
    d.classes = 2;
    d.features = Tensor::zeros({n, 2});
    d.labels.resize(static_cast<size_t>(n));
    const double pi = 3.14159265358979323846;
    (void)half;
    for (int64_t i = 0; i < n; ++i) {
        int cls = static_cast<int>(i % 2);
        // random arc position (not an index sweep), so any contiguous slice of
        // the dataset covers the full arc and order-based splits stay iid
        double t = pi * rng.uniform();
        double x, y;
        if (cls == 0) {
            x = std::cos(t);
            y = std::sin(t);
        } else {
            x = 1.0 - std::cos(t);
            y = 0.5 - std::sin(t);
        }
        d.features.at(i, 0) = x + noise_sd * rng.normal();
        d.features.at(i, 1) = y + noise_sd * rng.normal();
        d.labels[static_cast<size_t>(i)] = cls;
    }
    return d;
}

Dataset gen_spirals(int64_t n, double turns, double noise_sd, uint64_t seed) {
    if (n < 2 || n % 2 != 0) throw std::invalid_argument("gen_spirals: n must be even and >= 2");
    if (noise_sd < 0) throw std::invalid_argument("gen_spirals: negative noise");
    Rng rng(derive_seed(seed, "spirals"));
    int64_t half = n / 2;
    Dataset d;
    d.classes = 2;
    d.features = Tensor::zeros({n, 2});
    d.labels.resize(static_cast<size_t>(n));
    const double pi = 3.14159265358979323846;
    (void)half;
    for (int64_t i = 0; i < n; ++i) {
        int cls = static_cast<int>(i % 2);
        // random arm position, for the same reason as in gen_two_moons
        double frac = rng.uniform();
        double theta = frac * turns * 2.0 * pi + (cls == 1 ? pi : 0.0);
        double r = 0.2 + frac;  // radius grows monotonically along each arm
        d.features.at(i, 0) = r * std::cos(theta) + noise_sd * rng.normal();
        d.features.at(i, 1) = r * std::sin(theta) + noise_sd * rng.normal();
        d.labels[static_cast<size_t>(i)] = cls;
    }
    return d;
}

namespace {

uint32_t read_be32(std::istream& in, const char* what) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw std::runtime_error(std::string("load_idx: truncated ") + what);
    return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) | uint32_t(b[3]);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 int64_t subset_size) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw std::runtime_error("load_idx: cannot open " + images_path);
    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw std::runtime_error("load_idx: cannot open " + labels_path);

    if (read_be32(img, "image magic") != 0x00000803u)
        throw std::runtime_error("load_idx: bad image magic (expected 0x00000803)");
    if (read_be32(lab, "label magic") != 0x00000801u)
        throw std::runtime_error("load_idx: bad label magic (expected 0x00000801)");

    int64_t n_img = read_be32(img, "image count");
    int64_t rows = read_be32(img, "rows");
    int64_t cols = read_be32(img, "cols");
    int64_t n_lab = read_be32(lab, "label count");
    if (n_img != n_lab) throw std::runtime_error("load_idx: image/label count mismatch");

    int64_t n = (subset_size > 0 && subset_size < n_img) ? subset_size : n_img;
    int64_t d = rows * cols;
    Dataset out;
    out.classes = 10;
    out.features = Tensor::zeros({n, d});
    out.labels.resize(static_cast<size_t>(n));

    std::vector<unsigned char> buf(static_cast<size_t>(d));
    for (int64_t i = 0; i < n; ++i) {
        img.read(reinterpret_cast<char*>(buf.data()), d);
        if (!img) throw std::runtime_error("load_idx: truncated image data");
        for (int64_t j = 0; j < d; ++j)
            out.features.at(i, j) = static_cast<double>(buf[static_cast<size_t>(j)]) / 255.0;
        char lb;
        lab.read(&lb, 1);
        if (!lab) throw std::runtime_error("load_idx: truncated label data");
        out.labels[static_cast<size_t>(i)] = static_cast<unsigned char>(lb);
    }
    return out;
}

void save_dataset_csv(const std::string& path, const Dataset& d) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_dataset_csv: cannot open " + path);
    out << "label";
    for (int64_t j = 0; j < d.dim(); ++j) out << ",x" << j;
    out << "\n";
    out.precision(17);
    for (int64_t i = 0; i < d.size(); ++i) {
        out << d.labels[static_cast<size_t>(i)];
        for (int64_t j = 0; j < d.dim(); ++j) out << "," << d.features.at(i, j);
        out << "\n";
    }
}

Dataset load_dataset_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_dataset_csv: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("load_dataset_csv: empty file");
    int64_t dim = -1;
    std::vector<double> feats;
    std::vector<int> labels;
    int max_label = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::getline(ss, cell, ',');
        labels.push_back(std::stoi(cell));
        max_label = std::max(max_label, labels.back());
        int64_t count = 0;
        while (std::getline(ss, cell, ',')) {
            feats.push_back(std::stod(cell));
            ++count;
        }
        if (dim < 0) dim = count;
        if (count != dim) throw std::runtime_error("load_dataset_csv: ragged row");
    }
    if (labels.empty()) throw std::runtime_error("load_dataset_csv: no rows");
    Dataset d;
    d.classes = max_label + 1;
    d.labels = std::move(labels);
    d.features = Tensor({static_cast<int64_t>(d.labels.size()), dim}, std::move(feats));
    return d;
}

}  // namespace qrlab
