#pragma once

// Flat `key = value` run configuration: one file drives model, training,
// synthesis, and evaluation settings, with every key namespaced by module.
// Unknown keys are rejected by name so typos fail loudly.

#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "sllab/classify.hpp"
#include "sllab/errors.hpp"
#include "sllab/model.hpp"
#include "sllab/textdata.hpp"
#include "sllab/training.hpp"

namespace sllab {

namespace detail {

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

inline double config_num(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        require(used == value.size(), "config: key '" + key + "' has a malformed number '" +
                                          value + "'");
        return v;
    } catch (const contract_error&) {
        throw;
    } catch (const std::exception&) {
        throw contract_error("config: key '" + key + "' has a malformed number '" + value +
                             "'");
    }
}

inline std::uint64_t config_uint(const std::string& key, const std::string& value) {
    const double v = config_num(key, value);
    require(v >= 0.0 && v == double(std::uint64_t(v)),
            "config: key '" + key + "' needs a non-negative integer, got '" + value + "'");
    return std::uint64_t(v);
}

inline bool config_bool(const std::string& key, const std::string& value) {
    if (value == "1" || value == "true") return true;
    if (value == "0" || value == "false") return false;
    throw contract_error("config: key '" + key + "' needs a boolean (0/1/true/false), got '" +
                         value + "'");
}

}  // namespace detail

/// `key = value` lines; '#' starts a comment; blank lines ignored.
inline std::vector<std::pair<std::string, std::string>> parse_config_file(
    const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "config: cannot open '" + path + "'");
    std::vector<std::pair<std::string, std::string>> entries;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        require(eq != std::string::npos, "config: line " + std::to_string(lineno) + " of '" +
                                             path + "' is not 'key = value'");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        require(!key.empty(), "config: empty key at line " + std::to_string(lineno) + " of '" +
                                  path + "'");
        require(!value.empty(), "config: key '" + key + "' has an empty value at line " +
                                    std::to_string(lineno) + " of '" + path + "'");
        entries.emplace_back(key, value);
    }
    return entries;
}

/// Everything a run needs, merged from defaults, an optional config file, and
/// command-line overrides (applied in that order).
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    SynthSpec synth;
    ClassifierConfig classifier;
    CodeMode eval_mode = CodeMode::posterior_mean;
    std::size_t vocab_cap = 20000;
    std::size_t demo_samples = 5;
    std::size_t demo_max_len = 30;

    void set(const std::string& key, const std::string& value) {
        using detail::config_bool;
        using detail::config_num;
        using detail::config_uint;
        // model
        if (key == "model.variant") model.variant = variant_from_name(value);
        else if (key == "model.vocab_size") model.vocab_size = config_uint(key, value);
        else if (key == "model.latent_dim") model.latent_dim = config_uint(key, value);
        else if (key == "model.hidden_dim") model.hidden_dim = config_uint(key, value);
        else if (key == "model.embed_dim") model.embed_dim = config_uint(key, value);
        else if (key == "model.psi") model.psi = config_num(key, value);
        else if (key == "model.lambda") model.lambda = config_num(key, value);
        else if (key == "model.mc_gamma") model.mc_gamma = config_uint(key, value);
        else if (key == "model.mc_z") model.mc_z = config_uint(key, value);
        else if (key == "model.prior_alpha") model.prior_alpha = config_num(key, value);
        else if (key == "model.prior_beta") model.prior_beta = config_num(key, value);
        else if (key == "model.sigma_spike") model.sigma_spike = config_num(key, value);
        else if (key == "model.tau") model.tau = config_num(key, value);
        else if (key == "model.penalty_weight") model.penalty_weight = config_num(key, value);
        else if (key == "model.matvae_prior_weight")
            model.matvae_prior_weight = config_num(key, value);
        else if (key == "model.matvae_kl") {
            if (value == "mc") model.matvae_kl = MatKlSurrogate::mc;
            else if (value == "gaussian") model.matvae_kl = MatKlSurrogate::gaussian;
            else
                throw contract_error("config: key 'model.matvae_kl' must be mc or gaussian, "
                                     "got '" + value + "'");
        } else if (key == "model.hsvae_kl_mc") model.hsvae_kl_mc = config_bool(key, value);
        // training
        else if (key == "train.learning_rate") train.learning_rate = config_num(key, value);
        else if (key == "train.batch_size") train.batch_size = config_uint(key, value);
        else if (key == "train.epochs") train.epochs = config_uint(key, value);
        else if (key == "train.seed") train.seed = config_uint(key, value);
        else if (key == "train.schedule") {
            if (value == "constant") train.schedule = KlSchedule::constant;
            else if (value == "linear") train.schedule = KlSchedule::linear;
            else
                throw contract_error("config: key 'train.schedule' must be constant or "
                                     "linear, got '" + value + "'");
        } else if (key == "train.warmup_steps") train.warmup_steps = config_uint(key, value);
        else if (key == "train.clip_norm") train.clip_norm = config_num(key, value);
        else if (key == "train.checkpoint_every")
            train.checkpoint_every = config_uint(key, value);
        else if (key == "train.beta1") train.beta1 = config_num(key, value);
        else if (key == "train.beta2") train.beta2 = config_num(key, value);
        else if (key == "train.adam_eps") train.adam_eps = config_num(key, value);
        // synthesis
        else if (key == "synth.classes") synth.num_classes = config_uint(key, value);
        else if (key == "synth.class_vocab") synth.class_vocab = config_uint(key, value);
        else if (key == "synth.shared_vocab") synth.shared_vocab = config_uint(key, value);
        else if (key == "synth.shared_fraction")
            synth.shared_fraction = config_num(key, value);
        else if (key == "synth.min_len") synth.min_len = config_uint(key, value);
        else if (key == "synth.max_len") synth.max_len = config_uint(key, value);
        else if (key == "synth.per_class")
            synth.sentences_per_class = config_uint(key, value);
        else if (key == "synth.seed") synth.seed = config_uint(key, value);
        // classifier
        else if (key == "classifier.classes")
            classifier.num_classes = config_uint(key, value);
        else if (key == "classifier.hidden_width")
            classifier.hidden_width = config_uint(key, value);
        else if (key == "classifier.leaky_slope")
            classifier.leaky_slope = config_num(key, value);
        else if (key == "classifier.samples") classifier.mc_samples = config_uint(key, value);
        else if (key == "classifier.holdout_fraction")
            classifier.holdout_fraction = config_num(key, value);
        // evaluation and tooling
        else if (key == "eval.mode") eval_mode = code_mode_from_name(value);
        else if (key == "preprocess.vocab_cap") vocab_cap = config_uint(key, value);
        else if (key == "demo.samples") demo_samples = config_uint(key, value);
        else if (key == "demo.max_len") demo_max_len = config_uint(key, value);
        else throw contract_error("config: unknown key '" + key + "'");
    }

    void apply_file(const std::string& path) {
        for (const auto& [k, v] : parse_config_file(path)) set(k, v);
    }
};

}  // namespace sllab
