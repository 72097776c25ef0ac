#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "qrlab/checkpoint.hpp"
#include "qrlab/config.hpp"
#include "qrlab/model.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

using namespace qrlab;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("checkpoint round trip is bit-exact") {
    ModelSpec spec;
    spec.hidden = {5, 3};
    Checkpoint ck;
    ck.model = build_model(spec, 99);
    ck.schemes = weight_ranges(ck.model, 6);
    ck.config_hash = 0xdeadbeefcafef00dull;
    ck.seed = 42;
    ck.epoch = 17;

    save_checkpoint("rt.ckpt", ck);
    Checkpoint back = load_checkpoint("rt.ckpt");
    CHECK(back.seed == 42);
    CHECK(back.epoch == 17);
    CHECK(back.config_hash == ck.config_hash);
    CHECK(back.model.spec.hidden == spec.hidden);
    CHECK(back.model.param_names == ck.model.param_names);
    for (const auto& name : ck.model.param_names)
        CHECK(back.model.params.at(name).data == ck.model.params.at(name).data);
    REQUIRE(back.schemes.size() == ck.schemes.size());
    for (const auto& [name, s] : ck.schemes) {
        CHECK(back.schemes.at(name).bits == s.bits);
        CHECK(back.schemes.at(name).scale == s.scale);
    }

    // save -> load -> save produces identical bytes
    save_checkpoint("rt2.ckpt", back);
    CHECK(slurp("rt.ckpt") == slurp("rt2.ckpt"));
    std::remove("rt.ckpt");
    std::remove("rt2.ckpt");
}

TEST_CASE("checkpoint rejects foreign and damaged files") {
    std::ofstream("bad.ckpt", std::ios::binary) << "not a checkpoint at all";
    CHECK_THROWS_WITH_AS(load_checkpoint("bad.ckpt"),
                         doctest::Contains("bad magic"), std::runtime_error);

    // wrong version
    {
        std::ofstream out("badver.ckpt", std::ios::binary);
        out.write("QRCK", 4);
        uint32_t v = 999;
        out.write(reinterpret_cast<char*>(&v), 4);
    }
    CHECK_THROWS_WITH_AS(load_checkpoint("badver.ckpt"),
                         doctest::Contains("version"), std::runtime_error);

    // truncation mid-tensor
    ModelSpec spec;
    Checkpoint ck;
    ck.model = build_model(spec, 1);
    save_checkpoint("trunc.ckpt", ck);
    std::string bytes = slurp("trunc.ckpt");
    std::ofstream("trunc.ckpt", std::ios::binary)
        .write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    CHECK_THROWS_AS(load_checkpoint("trunc.ckpt"), std::runtime_error);

    CHECK_THROWS(load_checkpoint("does-not-exist.ckpt"));
    std::remove("bad.ckpt");
    std::remove("badver.ckpt");
    std::remove("trunc.ckpt");
}

TEST_CASE("config parsing: sections, comments, types") {
    ConfigFile cfg = ConfigFile::parse_text(
        "# experiment\n"
        "[dataset]\n"
        "kind = spirals  # inline comment\n"
        "n = 500\n"
        "noise_sd = 0.05\n"
        "[train]\n"
        "epochs = 20\n");
    CHECK(cfg.get("dataset", "kind") == "spirals");
    CHECK(cfg.get_int("dataset", "n", 0) == 500);
    CHECK(cfg.get_double("dataset", "noise_sd", 0) == doctest::Approx(0.05));
    CHECK(cfg.get_or("dataset", "missing", "fallback") == "fallback");
    CHECK(cfg.get_int("train", "batch_size", 64) == 64);
    CHECK_THROWS(cfg.get("dataset", "missing"));
    CHECK(cfg.hash() == ConfigFile::parse_text(cfg.text()).hash());
}

TEST_CASE("config parse errors carry line numbers") {
    CHECK_THROWS_WITH_AS(ConfigFile::parse_text("[a]\nx = 1\nx = 2\n"),
                         doctest::Contains(":3"), std::runtime_error);
    CHECK_THROWS_WITH_AS(ConfigFile::parse_text("[a]\nnonsense line\n"),
                         doctest::Contains(":2"), std::runtime_error);
    CHECK_THROWS_WITH_AS(ConfigFile::parse_text("key = before section\n"),
                         doctest::Contains(":1"), std::runtime_error);
    CHECK_THROWS_WITH_AS(ConfigFile::parse_text("[unclosed\n"),
                         doctest::Contains(":1"), std::runtime_error);
    ConfigFile bad_num = ConfigFile::parse_text("[a]\nx = 3.5z\n");
    CHECK_THROWS_WITH_AS(bad_num.get_int("a", "x", 0),
                         doctest::Contains("not an integer"), std::runtime_error);
}

TEST_CASE("experiment config mapping with defaults") {
    ConfigFile cfg = ConfigFile::parse_text(
        "[dataset]\n"
        "kind = two-moons\n"
        "n = 800\n"
        "[model]\n"
        "hidden = 16,16\n"
        "[train]\n"
        "epochs = 50\n"
        "seed = 9\n"
        "[reg]\n"
        "family = l1-grad\n"
        "lambda_w = 0.01\n"
        "lambda_y = 0.01\n"
        "[quant]\n"
        "eval = 8:4,4:4\n"
        "[output]\n"
        "dir = results\n");
    ExperimentConfig ec = experiment_from_config(cfg);
    CHECK(ec.dataset.n == 800);
    CHECK(ec.model.hidden == std::vector<int64_t>{16, 16});
    CHECK(ec.train.epochs == 50);
    CHECK(ec.train.seed == 9);
    CHECK(ec.train.reg.family == RegFamily::L1Grad);
    CHECK(ec.train.reg.lambda_w == doctest::Approx(0.01));
    REQUIRE(ec.train.quant_eval.size() == 2);
    CHECK(ec.train.quant_eval[1].weight_bits == 4);
    CHECK(ec.output_dir == "results");

    CHECK_THROWS(experiment_from_config(
        ConfigFile::parse_text("[model]\nkind = resnet\n")));
}

TEST_CASE("quantization pair parsing accepts both separators") {
    QuantConfig a = parse_quant_pair("8:4");
    CHECK(a.weight_bits == 8);
    CHECK(a.act_bits == 4);
    QuantConfig b = parse_quant_pair("6,2");
    CHECK(b.weight_bits == 6);
    CHECK(b.act_bits == 2);
    auto list1 = parse_quant_list("8:4,6:4,4:4");
    REQUIRE(list1.size() == 3);
    CHECK(list1[2].weight_bits == 4);
    auto list2 = parse_quant_list("8,4 6,4 4,4");
    REQUIRE(list2.size() == 3);
    CHECK(list2[1].weight_bits == 6);
    CHECK_THROWS(parse_quant_pair("8"));
    CHECK_THROWS(parse_quant_pair("99:4"));  // bits out of range
}

TEST_CASE("dataset construction from spec") {
    DatasetSpec ds;
    ds.kind = "spirals";
    ds.n = 120;
    Dataset d = build_dataset(ds, 4);
    CHECK(d.size() == 120);
    ds.kind = "nope";
    CHECK_THROWS(build_dataset(ds, 4));
}
