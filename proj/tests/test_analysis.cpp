#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "sllab/analysis.hpp"
#include "sllab/errors.hpp"
#include "sllab/model.hpp"
#include "sllab/textdata.hpp"

using namespace sllab;

namespace {

Vocab word_vocab(std::size_t n) {
    Vocab v;
    for (std::size_t i = 0; i < n; ++i) v.add("w" + std::to_string(i));
    return v;
}

}  // namespace

TEST_CASE("class patterns average binarized gates") {
    // class 0: dim0 on for half the sentences; class 1: dim0 always off
    TensorData<double> gates(4, 2);
    gates.v = {0.9, 0.8,   // class 0
               0.1, 0.8,   // class 0
               0.2, 0.6,   // class 1
               0.3, 0.7};  // class 1
    const std::vector<int> labels = {0, 0, 1, 1};
    const auto pats = class_patterns_from_gates(gates, labels);
    REQUIRE(pats.size() == 2);
    REQUIRE(pats[0].class_id == 0);
    REQUIRE(pats[0].support == 2);
    REQUIRE(pats[0].gamma_class == std::vector<double>{0.5, 1.0});
    REQUIRE(pats[1].gamma_class == std::vector<double>{0.0, 1.0});
}

TEST_CASE("a gate mean of exactly one half binarizes to on") {
    TensorData<double> gates(1, 2);
    gates.v = {0.5, 0.4999999};
    const auto pats = class_patterns_from_gates(gates, {0});
    REQUIRE(pats[0].gamma_class == std::vector<double>{1.0, 0.0});
}

TEST_CASE("class patterns ignore sentence order") {
    TensorData<double> gates(4, 3);
    for (std::size_t i = 0; i < gates.numel(); ++i) gates.v[i] = double(i % 5) / 5.0;
    TensorData<double> reversed(4, 3);
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t j = 0; j < 3; ++j) reversed.at(3 - i, j) = gates.at(i, j);
    }
    const auto a = class_patterns_from_gates(gates, {0, 1, 0, 1});
    const auto b = class_patterns_from_gates(reversed, {1, 0, 1, 0});
    REQUIRE(a[0].gamma_class == b[0].gamma_class);
    REQUIRE(a[1].gamma_class == b[1].gamma_class);
}

TEST_CASE("class bookkeeping rejects gaps and misalignment") {
    TensorData<double> gates(2, 2, 0.7);
    REQUIRE_THROWS_AS(class_patterns_from_gates(gates, {0, 2}), contract_error);
    REQUIRE_THROWS_AS(class_patterns_from_gates(gates, {0, -1}), contract_error);
    REQUIRE_THROWS_AS(class_patterns_from_gates(gates, {0}), contract_error);
}

TEST_CASE("gamma_class reads the model's gate means") {
    ModelConfig cfg;
    cfg.variant = Variant::HSVAE;
    cfg.vocab_size = 9;
    cfg.latent_dim = 3;
    cfg.hidden_dim = 4;
    cfg.embed_dim = 3;
    ParameterStore store = init_params(cfg, 3);
    pin_posterior_to_prior(store, cfg);  // every gate mean = 8/10 >= 0.5

    LabeledCorpus corpus;
    corpus.vocab = word_vocab(6);
    corpus.sentences = {{4, 5, 1}, {6, 7, 8, 1}, {5, 5, 1}};
    corpus.labels = {0, 1, 0};
    const auto pats = gamma_class(cfg, store, corpus);
    REQUIRE(pats.size() == 2);
    REQUIRE(pats[0].support == 2);
    REQUIRE(pats[1].support == 1);
    for (const auto& p : pats) {
        REQUIRE(p.gamma_class == std::vector<double>{1.0, 1.0, 1.0});
    }

    corpus.labels.clear();
    REQUIRE_THROWS_AS(gamma_class(cfg, store, corpus), contract_error);

    cfg.variant = Variant::VAE;
    const ParameterStore vstore = init_params(cfg, 3);
    corpus.labels = {0, 1, 0};
    REQUIRE_THROWS_AS(gamma_class(cfg, vstore, corpus), contract_error);
}

TEST_CASE("pattern distance is a thresholded hamming distance") {
    ClassPattern a, b;
    a.gamma_class = {0.9, 0.2, 0.7};
    b.gamma_class = {0.9, 0.2, 0.7};
    REQUIRE(pattern_distance(a, b) == 0);
    b.gamma_class = {0.2, 0.2, 0.7};
    REQUIRE(pattern_distance(a, b) == 1);
    b.gamma_class = {0.1, 0.8, 0.3};  // complement after thresholding
    REQUIRE(pattern_distance(a, b) == 3);
    b.gamma_class = {0.1, 0.8};
    REQUIRE_THROWS_AS(pattern_distance(a, b), contract_error);
}

TEST_CASE("class kl matches the hand-smoothed example") {
    LabeledCorpus corpus;
    corpus.vocab = word_vocab(3);  // ids 3,4,5
    corpus.sentences = {{3, 3, 4, 1}, {4, 5, 5, 1}};  // counts (2,1,0) and (0,1,2)
    corpus.labels = {0, 1};
    const ClassKLMatrix m = class_kl_matrix(corpus);
    REQUIRE(m.class_ids == std::vector<int>{0, 1});
    REQUIRE(m.kl.at(0, 0) == 0.0);
    REQUIRE(m.kl.at(1, 1) == 0.0);
    // smoothed: p0=(3,2,1)/6, p1=(1,2,3)/6; KL = (1/3)ln3
    REQUIRE(m.kl.at(0, 1) == Catch::Approx(0.3662).margin(1e-4));
    REQUIRE(m.kl.at(0, 1) == Catch::Approx(std::log(3.0) / 3.0).margin(1e-12));
    REQUIRE(m.kl.at(1, 0) >= 0.0);
}

TEST_CASE("identical class corpora have zero kl everywhere") {
    LabeledCorpus corpus;
    corpus.vocab = word_vocab(4);
    corpus.sentences = {{3, 4, 1}, {5, 6, 3, 1}, {3, 4, 1}, {5, 6, 3, 1}};
    corpus.labels = {0, 0, 1, 1};
    const ClassKLMatrix m = class_kl_matrix(corpus);
    for (std::size_t i = 0; i < 2; ++i) {
        for (std::size_t j = 0; j < 2; ++j) {
            REQUIRE(std::abs(m.kl.at(i, j)) <= 1e-12);
        }
    }
}

TEST_CASE("class kl rejects degenerate corpora") {
    LabeledCorpus corpus;
    corpus.vocab = word_vocab(3);
    corpus.sentences = {{3, 1}, {4, 1}};
    corpus.labels = {0, 0};  // single class
    REQUIRE_THROWS_AS(class_kl_matrix(corpus), contract_error);
    corpus.labels.clear();
    REQUIRE_THROWS_AS(class_kl_matrix(corpus), contract_error);
}

TEST_CASE("more shared vocabulary means smaller class kl") {
    double prev = HUGE_VAL;
    for (double f : {0.0, 0.5, 0.9}) {
        SynthSpec spec;
        spec.num_classes = 2;
        spec.class_vocab = 30;
        spec.shared_vocab = 20;
        spec.sentences_per_class = 200;
        spec.min_len = 5;
        spec.max_len = 12;
        spec.seed = 3;
        spec.shared_fraction = f;
        const double kl = class_kl_matrix(synth_generate(spec)).mean_off_diagonal();
        REQUIRE(kl < prev);
        REQUIRE(kl >= 0.0);
        prev = kl;
    }
}

TEST_CASE("spearman rank correlation") {
    REQUIRE(spearman({1.0, 2.0, 3.0}, {10.0, 20.0, 30.0}) == Catch::Approx(1.0));
    REQUIRE(spearman({1.0, 2.0, 3.0}, {30.0, 20.0, 10.0}) == Catch::Approx(-1.0));
    REQUIRE(spearman({1.0, 1.0, 2.0}, {5.0, 6.0, 7.0}) ==
            Catch::Approx(1.5 / std::sqrt(3.0)).margin(1e-12));
    REQUIRE(spearman({4.0, 4.0, 4.0}, {1.0, 2.0, 3.0}) == 0.0);  // no rank variance
    REQUIRE_THROWS_AS(spearman({1.0}, {2.0}), contract_error);
}

TEST_CASE("analysis artifacts serialize as csv") {
    ClassPattern p0, p1;
    p0.class_id = 0;
    p0.gamma_class = {1.0, 0.5};
    p0.support = 4;
    p1.class_id = 1;
    p1.gamma_class = {0.0, 0.25};
    p1.support = 4;
    const std::string gpath = "/tmp/sllab_gamma_class.csv";
    write_gamma_class_csv(gpath, {p0, p1});
    {
        std::ifstream f(gpath);
        std::string line;
        REQUIRE(std::getline(f, line));
        REQUIRE(line == "class,0,1");
        REQUIRE(std::getline(f, line));
        REQUIRE(line == "0,1,0.5");
        REQUIRE(std::getline(f, line));
        REQUIRE(line == "1,0,0.25");
    }

    ClassKLMatrix m;
    m.class_ids = {0, 1};
    m.kl = TensorData<double>(2, 2, 0.0);
    m.kl.at(0, 1) = 0.5;
    m.kl.at(1, 0) = 0.25;
    const std::string kpath = "/tmp/sllab_class_kl.csv";
    write_class_kl_csv(kpath, m);
    {
        std::ifstream f(kpath);
        std::string line;
        REQUIRE(std::getline(f, line));
        REQUIRE(line == "class,0,1");
        REQUIRE(std::getline(f, line));
        REQUIRE(line == "0,0,0.5");
        REQUIRE(std::getline(f, line));
        REQUIRE(line == "1,0.25,0");
    }
}
