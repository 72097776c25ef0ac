// qrlab: train, quantize, and analyze small quantization-robust classifiers.
#include "qrlab/analysis.hpp"
#include "qrlab/checkpoint.hpp"
#include "qrlab/config.hpp"
#include "qrlab/data.hpp"
#include "qrlab/model.hpp"
#include "qrlab/quantizer.hpp"
#include "qrlab/rng.hpp"
#include "qrlab/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace qrlab;

namespace {

constexpr const char* kToolVersion = "1.0.0";

void write_manifest(const fs::path& out_dir, const std::string& command, uint64_t seed,
                    const json& args, const std::string& config_text = "") {
    fs::create_directories(out_dir);
    json m;
    m["tool"] = "qrlab";
    m["version"] = kToolVersion;
    m["checkpoint_format_version"] = Checkpoint::kVersion;
    m["command"] = command;
    m["seed"] = seed;
    m["args"] = args;
    if (!config_text.empty()) m["config"] = config_text;
    std::ofstream out(out_dir / "manifest.json");
    out << m.dump(2) << "\n";
}

struct LoadedExperiment {
    ExperimentConfig cfg;
    std::string config_text;
    uint64_t config_hash = 0;
    DatasetSplits splits;
    Dataset full;
};

LoadedExperiment load_experiment(const std::string& config_path) {
    LoadedExperiment le;
    ConfigFile cf = ConfigFile::parse_file(config_path);
    le.cfg = experiment_from_config(cf);
    le.config_text = cf.text();
    le.config_hash = cf.hash();
    le.full = build_dataset(le.cfg.dataset, le.cfg.train.seed);
    le.splits = split_dataset(le.full, le.cfg.dataset.train_frac, le.cfg.dataset.val_frac);
    return le;
}

void write_metrics_csv(const fs::path& path, const std::vector<MetricsRecord>& metrics,
                       const std::vector<QuantConfig>& quant_eval) {
    std::ofstream out(path);
    out.precision(17);
    out << "epoch,train_loss,penalty,fp_accuracy,mean_grad_l1,mean_grad_l2";
    for (const auto& q : quant_eval) out << ",acc_w" << q.weight_bits << "_a" << q.act_bits;
    out << "\n";
    for (const auto& r : metrics) {
        out << r.epoch << "," << r.train_loss << "," << r.penalty << "," << r.fp_accuracy << ","
            << r.mean_grad_l1 << "," << r.mean_grad_l2;
        for (double a : r.quant_accuracy) out << "," << a;
        out << "\n";
    }
}

Tensor load_matrix_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open matrix file " + path);
    std::vector<double> vals;
    std::string line;
    int64_t rows = 0, cols = -1;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        int64_t c = 0;
        while (std::getline(ss, cell, ',')) {
            vals.push_back(std::stod(cell));
            ++c;
        }
        if (cols < 0) cols = c;
        if (c != cols) throw std::runtime_error("ragged matrix row in " + path);
        ++rows;
    }
    return Tensor({rows, cols}, std::move(vals));
}

int cmd_gen_data(const std::string& kind, int64_t n, double noise_sd, double turns, uint64_t seed,
                 const std::string& out_path, const std::string& out_dir) {
    Dataset d;
    if (kind == "two-moons")
        d = gen_two_moons(n, noise_sd, seed);
    else if (kind == "spirals")
        d = gen_spirals(n, turns, noise_sd, seed);
    else
        throw std::runtime_error("gen-data: unknown kind '" + kind + "'");
    save_dataset_csv(out_path, d);
    write_manifest(out_dir, "gen-data", seed,
                   {{"kind", kind}, {"n", n}, {"noise_sd", noise_sd}, {"turns", turns},
                    {"out", out_path}});
    std::cout << "wrote " << d.size() << " examples to " << out_path << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_dir_override) {
    LoadedExperiment le = load_experiment(config_path);
    fs::path out_dir = out_dir_override.empty() ? le.cfg.output_dir : out_dir_override;
    fs::create_directories(out_dir);

    Model init = build_model(le.cfg.model, le.cfg.train.seed);
    TrainResult res = train(init, le.splits.train, le.splits.val, le.cfg.train);

    Checkpoint ck;
    ck.model = res.model;
    ck.schemes = weight_ranges(res.model, 8);
    ck.config_hash = le.config_hash;
    ck.seed = le.cfg.train.seed;
    ck.epoch = static_cast<uint32_t>(le.cfg.train.epochs);
    save_checkpoint((out_dir / "checkpoint.ckpt").string(), ck);
    write_metrics_csv(out_dir / "metrics.csv", res.metrics, le.cfg.train.quant_eval);
    write_manifest(out_dir, "train", le.cfg.train.seed, {{"config", config_path}}, le.config_text);

    double test_acc = evaluate_accuracy(res.model, le.splits.test);
    std::cout.precision(6);
    std::cout << "trained " << le.cfg.train.epochs << " epochs ("
              << reg_family_name(le.cfg.train.reg.family) << ")\n"
              << "test accuracy: " << test_acc << "\n"
              << "checkpoint: " << (out_dir / "checkpoint.ckpt").string() << "\n";
    return 0;
}

int cmd_quantize_eval(const std::string& ckpt_path, const std::string& config_path,
                      const std::vector<std::string>& bits, const std::string& out_dir) {
    Checkpoint ck = load_checkpoint(ckpt_path);
    LoadedExperiment le = load_experiment(config_path);
    Tensor calib = calibration_batch(le.splits.train);

    fs::create_directories(out_dir);
    std::ofstream csv(fs::path(out_dir) / "quantize_eval.csv");
    csv.precision(17);
    csv << "weight_bits,act_bits,accuracy\n";
    std::cout << "weight_bits,act_bits,accuracy\n";
    std::cout.precision(6);
    for (const std::string& tok : bits) {
        QuantConfig qc = parse_quant_pair(tok);
        double acc = evaluate_quantized(ck.model, le.splits.test, calib, qc);
        csv << qc.weight_bits << "," << qc.act_bits << "," << acc << "\n";
        std::cout << qc.weight_bits << "," << qc.act_bits << "," << acc << "\n";
    }
    write_manifest(out_dir, "quantize-eval", ck.seed,
                   {{"checkpoint", ckpt_path}, {"config", config_path}, {"bits", bits}});
    return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& lambdas,
              const std::string& ckpt_path, const std::string& bits,
              const std::string& out_dir_override) {
    LoadedExperiment le = load_experiment(config_path);
    fs::path out_dir = out_dir_override.empty() ? le.cfg.output_dir : out_dir_override;
    fs::create_directories(out_dir);

    if (!lambdas.empty()) {
        std::vector<double> cand;
        std::stringstream ss(lambdas);
        std::string tok;
        while (std::getline(ss, tok, ',')) cand.push_back(std::stod(tok));
        Model init = build_model(le.cfg.model, le.cfg.train.seed);
        LambdaSearchReport rep =
            lambda_grid_search(init, le.splits.train, le.splits.val, cand, le.cfg.train);
        std::ofstream csv(out_dir / "lambda_sweep.csv");
        csv.precision(17);
        csv << "lambda,fp_val_accuracy,final_penalty,final_ce\n";
        for (const auto& row : rep.rows)
            csv << row.lambda << "," << row.fp_val_accuracy << "," << row.final_penalty << ","
                << row.final_ce << "\n";
        std::cout.precision(6);
        std::cout << "baseline FP accuracy: " << rep.baseline_accuracy << "\n";
        if (rep.all_degraded)
            std::cout << "warning: every candidate degraded FP accuracy; "
                         "falling back to the smallest\n";
        std::cout << "chosen lambda: " << rep.chosen << "\n";
        write_manifest(out_dir, "sweep", le.cfg.train.seed,
                       {{"config", config_path}, {"lambdas", lambdas}}, le.config_text);
        return 0;
    }
    if (!ckpt_path.empty() && !bits.empty()) {
        Checkpoint ck = load_checkpoint(ckpt_path);
        Tensor calib = calibration_batch(le.splits.train);
        std::ofstream csv(out_dir / "bit_sweep.csv");
        csv.precision(17);
        csv << "weight_bits,act_bits,accuracy\n";
        std::cout << "weight_bits,act_bits,accuracy\n";
        std::cout.precision(6);
        for (const auto& qc : parse_quant_list(bits)) {
            double acc = evaluate_quantized(ck.model, le.splits.test, calib, qc);
            csv << qc.weight_bits << "," << qc.act_bits << "," << acc << "\n";
            std::cout << qc.weight_bits << "," << qc.act_bits << "," << acc << "\n";
        }
        write_manifest(out_dir, "sweep", le.cfg.train.seed,
                       {{"config", config_path}, {"checkpoint", ckpt_path}, {"bits", bits}},
                       le.config_text);
        return 0;
    }
    throw CLI::ValidationError("sweep needs either --lambdas or --checkpoint with --bits");
}

int cmd_analyze(const std::string& op, const std::string& config_path,
                const std::string& ckpt_path, int64_t n, double delta, double eps, int64_t trials,
                const std::string& bits, int64_t example_id, double radius, int64_t resolution,
                uint64_t seed, const std::string& hessian_path, double p_norm,
                const std::string& out_dir) {
    fs::create_directories(out_dir);
    json report;
    report["op"] = op;
    std::cout.precision(6);

    if (op == "hoeffding") {
        ConcentrationReport r = hoeffding_interval(n, delta, eps);
        std::cout << std::fixed;
        std::cout.precision(2);
        std::cout << "interval [" << r.expected - r.half_width << ", " << r.expected + r.half_width
                  << "]\n";
        report = {{"op", op},       {"n", r.n},
                  {"delta", r.delta}, {"epsilon", r.epsilon},
                  {"expected", r.expected}, {"half_width", r.half_width}};
    } else if (op == "mc-norm") {
        ConcentrationReport r = monte_carlo_norm_check(n, delta, eps, trials, seed);
        std::cout << "coverage " << r.empirical_coverage << " (target >= " << 1 - eps << ")\n";
        report = {{"op", op},       {"n", r.n},
                  {"delta", r.delta}, {"epsilon", r.epsilon},
                  {"expected", r.expected}, {"half_width", r.half_width},
                  {"trials", trials}, {"coverage", r.empirical_coverage}};
    } else if (op == "noise-hist") {
        Checkpoint ck = load_checkpoint(ckpt_path);
        QuantConfig qc = parse_quant_pair(bits);
        NoiseHistogram h = noise_histogram(ck.model, qc.weight_bits);
        std::ofstream csv(fs::path(out_dir) / "noise_histogram.csv");
        csv.precision(17);
        csv << "bin_lo,bin_hi,mass\n";
        for (size_t i = 0; i < h.density.size(); ++i)
            csv << h.bin_edges[i] << "," << h.bin_edges[i + 1] << "," << h.density[i] << "\n";
        std::cout << "KS distance to U(-0.5, 0.5): " << h.ks_distance_uniform << "\n";
        report["weight_bits"] = qc.weight_bits;
        report["ks_distance"] = h.ks_distance_uniform;
        report["count"] = h.total_count;
    } else if (op == "cross-section") {
        Checkpoint ck = load_checkpoint(ckpt_path);
        LoadedExperiment le = load_experiment(config_path);
        CrossSection cs =
            decision_cross_section(ck.model, le.splits.test, example_id, radius, resolution, seed);
        std::ofstream csv(fs::path(out_dir) / "cross_section.csv");
        csv.precision(17);
        csv << "row,col,class,max_softmax\n";
        for (int64_t r = 0; r < resolution; ++r)
            for (int64_t c = 0; c < resolution; ++c) {
                size_t i = static_cast<size_t>(r * resolution + c);
                csv << r << "," << c << "," << cs.class_grid[i] << "," << cs.max_softmax[i] << "\n";
            }
        int center_class = cs.class_grid[static_cast<size_t>((resolution / 2) * resolution +
                                                             resolution / 2)];
        std::cout << "center class: " << center_class << "\n";
        report["example"] = example_id;
        report["radius"] = radius;
        report["resolution"] = resolution;
    } else if (op == "grad-norms") {
        Checkpoint ck = load_checkpoint(ckpt_path);
        LoadedExperiment le = load_experiment(config_path);
        auto stats = grad_norm_stats(ck.model, le.splits.test, le.cfg.train.batch_size);
        std::ofstream csv(fs::path(out_dir) / "grad_norms.csv");
        csv.precision(17);
        csv << "batch,l1,l2\n";
        double l1_sum = 0;
        for (size_t i = 0; i < stats.size(); ++i) {
            csv << i << "," << stats[i].first << "," << stats[i].second << "\n";
            l1_sum += stats[i].first;
        }
        std::cout << "mean per-batch l1 gradient norm: " << l1_sum / static_cast<double>(stats.size())
                  << "\n";
        report["batches"] = stats.size();
    } else if (op == "first-order") {
        Checkpoint ck = load_checkpoint(ckpt_path);
        LoadedExperiment le = load_experiment(config_path);
        Rng rng(derive_seed(seed, "first-order-noise"));
        std::vector<int64_t> ids;
        int64_t take = std::min<int64_t>(le.splits.test.size(), 64);
        for (int64_t i = 0; i < take; ++i) ids.push_back(i);
        std::map<std::string, Tensor> pert;
        for (const auto& [name, t] : ck.model.params) {
            Tensor d = t;
            for (double& v : d.data) v = rng.uniform(-delta / 2, delta / 2);
            pert.emplace(name, std::move(d));
        }
        FirstOrderReport r = first_order_report(ck.model, le.splits.test.batch_features(ids),
                                                le.splits.test.batch_onehot(ids), pert);
        std::cout << "predicted " << r.predicted << ", actual " << r.actual << ", residual "
                  << r.residual << "\n";
        report = {{"op", op},
                  {"predicted", r.predicted},
                  {"actual", r.actual},
                  {"residual", r.residual},
                  {"delta_inf_norm", r.delta_inf_norm}};
    } else if (op == "kl") {
        Checkpoint ck = load_checkpoint(ckpt_path);
        LoadedExperiment le = load_experiment(config_path);
        QuantConfig qc = parse_quant_pair(bits);
        Tensor calib = calibration_batch(le.splits.train);
        double kl = kl_fp_vs_quantized(ck.model, qc, le.splits.test.features, calib);
        std::cout << "mean KL(fp || quantized) at (" << qc.weight_bits << "," << qc.act_bits
                  << "): " << kl << "\n";
        report["weight_bits"] = qc.weight_bits;
        report["act_bits"] = qc.act_bits;
        report["mean_kl"] = kl;
    } else if (op == "vertex-oracle") {
        Tensor h = load_matrix_csv(hessian_path);
        double v = second_order_vertex_oracle(h, delta);
        std::cout << "worst-case second-order term: " << v << "\n";
        report["delta"] = delta;
        report["value"] = v;
    } else if (op == "lp-ball") {
        Rng rng(derive_seed(seed, "lp-ball"));
        std::vector<Tensor> samples;
        for (int64_t t = 0; t < trials; ++t) {
            Tensor x = Tensor::zeros({n});
            for (double& v : x.data) v = rng.normal();
            double norm_p = 0;
            for (double v : x.data) norm_p += std::pow(std::abs(v), p_norm);
            norm_p = std::pow(norm_p, 1.0 / p_norm);
            for (double& v : x.data) v *= delta / norm_p;  // on the lp sphere of radius delta
            samples.push_back(std::move(x));
        }
        bool ok = lp_ball_inclusion_check(samples, p_norm, delta);
        std::cout << (ok ? "pass" : "fail") << ": lp-ball inclusion in the linf ball\n";
        report["p"] = p_norm;
        report["delta"] = delta;
        report["pass"] = ok;
        if (!ok) {
            std::ofstream(fs::path(out_dir) / "analysis.json") << report.dump(2) << "\n";
            return 1;
        }
    } else {
        throw CLI::ValidationError("unknown analyze op '" + op + "'");
    }

    std::ofstream(fs::path(out_dir) / "analysis.json") << report.dump(2) << "\n";
    write_manifest(out_dir, "analyze", seed, {{"op", op}});
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"qrlab: quantization-robust training laboratory"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset CSV");
    std::string gen_kind = "two-moons", gen_out = "data.csv", gen_dir = "out";
    int64_t gen_n = 2000;
    double gen_noise = 0.1, gen_turns = 1.5;
    uint64_t gen_seed = 1;
    gen->add_option("--kind", gen_kind, "two-moons | spirals");
    gen->add_option("--n", gen_n, "number of examples (even)");
    gen->add_option("--noise-sd", gen_noise, "additive Gaussian noise sd");
    gen->add_option("--turns", gen_turns, "spiral turns");
    gen->add_option("--seed", gen_seed, "generator seed");
    gen->add_option("--out", gen_out, "output CSV path");
    gen->add_option("--out-dir", gen_dir, "manifest directory");

    // train
    auto* tr = app.add_subcommand("train", "train a model from an experiment config");
    std::string tr_config, tr_dir;
    tr->add_option("--config", tr_config, "experiment config file")->required();
    tr->add_option("--out-dir", tr_dir, "override [output] dir");

    // quantize-eval
    auto* qe = app.add_subcommand("quantize-eval", "post-training quantization accuracy grid");
    std::string qe_ckpt, qe_config, qe_dir = "out";
    std::vector<std::string> qe_bits;
    qe->add_option("--checkpoint", qe_ckpt, "model checkpoint")->required();
    qe->add_option("--config", qe_config, "experiment config (dataset source)")->required();
    qe->add_option("--bits", qe_bits, "weight,act pairs, e.g. 8,4 6,4 4,4")->required();
    qe->add_option("--out-dir", qe_dir, "output directory");

    // sweep
    auto* sw = app.add_subcommand("sweep", "lambda grid search or bit-width sweep");
    std::string sw_config, sw_lambdas, sw_ckpt, sw_bits, sw_dir;
    sw->add_option("--config", sw_config, "experiment config file")->required();
    sw->add_option("--lambdas", sw_lambdas, "comma-separated candidates");
    sw->add_option("--checkpoint", sw_ckpt, "checkpoint for bit-width sweep");
    sw->add_option("--bits", sw_bits, "quant configs, e.g. 8:4,6:4,4:4");
    sw->add_option("--out-dir", sw_dir, "override [output] dir");

    // analyze
    auto* an = app.add_subcommand("analyze", "diagnostics and theoretical checks");
    std::string an_op, an_config, an_ckpt, an_bits = "8:8", an_hessian, an_dir = "out";
    int64_t an_n = 1200, an_trials = 100000, an_example = 0, an_resolution = 201;
    double an_delta = 1.0, an_eps = 0.01, an_radius = 0.0, an_p = 2.0;
    uint64_t an_seed = 1;
    an->add_option("--op", an_op,
                   "hoeffding | mc-norm | noise-hist | cross-section | grad-norms | "
                   "first-order | kl | vertex-oracle | lp-ball")
        ->required();
    an->add_option("--config", an_config, "experiment config (dataset source)");
    an->add_option("--checkpoint", an_ckpt, "model checkpoint");
    an->add_option("--n", an_n, "dimension");
    an->add_option("--delta", an_delta, "bin width / perturbation bound");
    an->add_option("--eps", an_eps, "failure probability");
    an->add_option("--trials", an_trials, "Monte Carlo trials");
    an->add_option("--bits", an_bits, "weight:act pair");
    an->add_option("--example", an_example, "center example id");
    an->add_option("--radius", an_radius, "cross-section grid radius (0 = 5x feature sd)");
    an->add_option("--resolution", an_resolution, "cross-section grid resolution");
    an->add_option("--seed", an_seed, "analysis seed");
    an->add_option("--hessian", an_hessian, "square matrix CSV for vertex-oracle");
    an->add_option("--p", an_p, "lp-ball norm order");
    an->add_option("--out-dir", an_dir, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*gen) return cmd_gen_data(gen_kind, gen_n, gen_noise, gen_turns, gen_seed, gen_out, gen_dir);
        if (*tr) return cmd_train(tr_config, tr_dir);
        if (*qe) return cmd_quantize_eval(qe_ckpt, qe_config, qe_bits, qe_dir);
        if (*sw) return cmd_sweep(sw_config, sw_lambdas, sw_ckpt, sw_bits, sw_dir);
        if (*an) {
            if (an_radius == 0.0 && an_op == "cross-section" && !an_config.empty()) {
                // default grid radius: 5x the feature standard deviation
                LoadedExperiment le = load_experiment(an_config);
                const Tensor& f = le.splits.test.features;
                double mean = 0;
                for (double v : f.data) mean += v;
                mean /= static_cast<double>(f.numel());
                double var = 0;
                for (double v : f.data) var += (v - mean) * (v - mean);
                an_radius = 5.0 * std::sqrt(var / static_cast<double>(f.numel()));
            }
            return cmd_analyze(an_op, an_config, an_ckpt, an_n, an_delta, an_eps, an_trials, an_bits,
                               an_example, an_radius, an_resolution, an_seed, an_hessian, an_p,
                               an_dir);
        }
    } catch (const CLI::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
