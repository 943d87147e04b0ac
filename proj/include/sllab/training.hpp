#pragma once

// Optimization loop: Adam with global-norm clipping, KL-weight scheduling,
// deterministic shuffled batching, per-epoch records, checkpointing, resume.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "sllab/checkpoint.hpp"
#include "sllab/errors.hpp"
#include "sllab/graph.hpp"
#include "sllab/model.hpp"
#include "sllab/rng.hpp"
#include "sllab/tensor.hpp"

namespace sllab {

enum class KlSchedule { constant, linear };

struct TrainConfig {
    double learning_rate = 0.0008;
    std::size_t batch_size = 32;
    std::size_t epochs = 5;          // desk-scale; 30 at paper scale
    std::uint64_t seed = 0;
    KlSchedule schedule = KlSchedule::constant;
    std::size_t warmup_steps = 2000;  // linear schedule: 0 -> target over this many steps
    double clip_norm = 5.0;
    std::size_t checkpoint_every = 1;  // epochs; 0 = only the final checkpoint
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;

    void validate() const {
        require(learning_rate > 0.0, "TrainConfig: learning rate must be positive");
        require(batch_size >= 1, "TrainConfig: batch size must be >= 1");
        require(epochs >= 1, "TrainConfig: epochs must be >= 1");
        require(clip_norm > 0.0, "TrainConfig: clip norm must be positive");
        require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0,
                "TrainConfig: Adam betas must lie in [0,1)");
        require(adam_eps > 0.0, "TrainConfig: Adam epsilon must be positive");
        if (schedule == KlSchedule::linear) {
            require(warmup_steps >= 1, "TrainConfig: warmup must be >= 1 step");
        }
    }
};

/// Scheduled KL weight at a global step: the configured target, or a linear
/// ramp 0 -> target completing at warmup_steps.
inline double kl_weight_at(const TrainConfig& tc, double target, std::uint64_t step) {
    if (tc.schedule == KlSchedule::constant) return target;
    const double frac =
        std::min(1.0, double(step) / double(tc.warmup_steps));
    return target * frac;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
    std::vector<TensorData<double>> m;  // aligned with ParameterStore order
    std::vector<TensorData<double>> v;
    std::uint64_t t = 0;

    static AdamState like(const ParameterStore& store) {
        AdamState s;
        for (const auto& [name, p] : store.params) {
            s.m.emplace_back(p.rows, p.cols, 0.0);
            s.v.emplace_back(p.rows, p.cols, 0.0);
        }
        return s;
    }
};

/// One Adam update. Returns false — with no state or parameter mutated — if
/// any gradient entry is non-finite; the caller logs and skips the step.
inline bool adam_step(ParameterStore& store, const std::vector<TensorData<double>>& grads,
                      AdamState& state, const TrainConfig& tc) {
    require(grads.size() == store.params.size() && state.m.size() == store.params.size(),
            "adam_step: gradient/state not aligned with parameters");
    for (std::size_t i = 0; i < grads.size(); ++i) {
        require(grads[i].same_shape(store.params[i].second),
                "adam_step: gradient shape mismatch at '" + store.params[i].first + "'");
        if (!grads[i].all_finite()) return false;
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(tc.beta1, double(state.t));
    const double bc2 = 1.0 - std::pow(tc.beta2, double(state.t));
    for (std::size_t i = 0; i < grads.size(); ++i) {
        auto& p = store.params[i].second;
        for (std::size_t j = 0; j < p.numel(); ++j) {
            const double gij = grads[i].v[j];
            double& mj = state.m[i].v[j];
            double& vj = state.v[i].v[j];
            mj = tc.beta1 * mj + (1.0 - tc.beta1) * gij;
            vj = tc.beta2 * vj + (1.0 - tc.beta2) * gij * gij;
            p.v[j] -= tc.learning_rate * (mj / bc1) / (std::sqrt(vj / bc2) + tc.adam_eps);
        }
    }
    return true;
}

/// Scale gradients so their global L2 norm is at most max_norm; returns the
/// pre-clip norm.
inline double clip_global_norm(std::vector<TensorData<double>>& grads, double max_norm) {
    require(max_norm > 0.0, "clip_global_norm: max_norm must be positive");
    double sq = 0.0;
    for (const auto& g : grads) {
        for (double v : g.v) sq += v * v;
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const double s = max_norm / norm;
        for (auto& g : grads) {
            for (double& v : g.v) v *= s;
        }
    }
    return norm;
}

// ---------------------------------------------------------------------------
// Fit

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based in logs
    double reconstruction = 0.0;
    double kl_z = 0.0;
    double kl_gamma = 0.0;
    double objective = 0.0;
    double gate_mean = 0.0;
    double psi_t = 0.0;     // scheduled weights at the epoch's last step
    double lambda_t = 0.0;
    std::size_t skipped = 0;

    std::string to_line() const {
        std::ostringstream os;
        os.precision(10);
        os << "epoch=" << epoch << " reconstruction=" << reconstruction
           << " kl_z=" << kl_z << " kl_gamma=" << kl_gamma << " objective=" << objective
           << " gate_mean=" << gate_mean << " psi=" << psi_t << " lambda=" << lambda_t
           << " skipped=" << skipped;
        return os.str();
    }
};

struct FitOptions {
    std::string log_path;         // append per-epoch lines here if non-empty
    std::string checkpoint_path;  // latest checkpoint written here if non-empty
    std::string resume_from;      // checkpoint to continue from
};

struct FitResult {
    ParameterStore store;
    AdamState adam;
    std::vector<EpochRecord> records;
    std::vector<double> step_objectives;  // per applied/attempted step, in order
    std::uint64_t global_step = 0;
    std::size_t skipped_steps = 0;
};

namespace detail {

inline CheckpointData make_train_checkpoint(const ModelConfig& cfg,
                                            const ParameterStore& store,
                                            const AdamState& adam, std::uint64_t global_step,
                                            std::size_t next_epoch) {
    CheckpointData ck;
    append_model_config(ck, cfg);
    ck.manifest.emplace_back("global_step", std::to_string(global_step));
    ck.manifest.emplace_back("next_epoch", std::to_string(next_epoch));
    ck.manifest.emplace_back("adam_t", std::to_string(adam.t));
    for (const auto& [name, t] : store.params) ck.arrays.emplace_back(name, t);
    for (std::size_t i = 0; i < store.params.size(); ++i) {
        ck.arrays.emplace_back("adam.m." + store.params[i].first, adam.m[i]);
        ck.arrays.emplace_back("adam.v." + store.params[i].first, adam.v[i]);
    }
    return ck;
}

}  // namespace detail

/// Restore parameters (and optimizer state if present) from a checkpoint.
/// Returns the training progress so fit can continue where it stopped.
inline void restore_train_checkpoint(const CheckpointData& ck, ParameterStore& store,
                                     AdamState& adam, std::uint64_t& global_step,
                                     std::size_t& next_epoch) {
    const ParameterStore loaded = params_from_checkpoint(ck);
    require(loaded.params.size() == store.params.size(),
            "checkpoint: parameter count does not match the model");
    for (std::size_t i = 0; i < store.params.size(); ++i) {
        const auto& name = store.params[i].first;
        const TensorData<double>* arr = nullptr;
        for (const auto& [n, a] : loaded.params) {
            if (n == name) {
                arr = &a;
                break;
            }
        }
        require(arr != nullptr, "checkpoint: missing parameter '" + name + "'");
        require(arr->same_shape(store.params[i].second),
                "checkpoint: shape mismatch for '" + name + "'");
        store.params[i].second = *arr;
        const TensorData<double>* am = ck.find_array("adam.m." + name);
        const TensorData<double>* av = ck.find_array("adam.v." + name);
        if (am != nullptr && av != nullptr) {
            adam.m[i] = *am;
            adam.v[i] = *av;
        }
    }
    global_step = std::stoull(ck.need("global_step"));
    next_epoch = std::size_t(std::stoull(ck.need("next_epoch")));
    adam.t = std::stoull(ck.need("adam_t"));
}

/// Train a model on encoded sentences. Deterministic for a fixed seed: batch
/// order comes from a per-epoch derived stream and step noise from a
/// per-step derived stream, so resuming needs only the global step counter.
inline FitResult fit(const ModelConfig& cfg, const TrainConfig& tc,
                     const std::vector<std::vector<int>>& sentences,
                     const FitOptions& opts = {}) {
    cfg.validate();
    tc.validate();
    require(!sentences.empty(), "fit: corpus is empty");
    if (cfg.variant == Variant::MATVAE) {
        require(tc.batch_size >= 2, "fit: MATVAE needs batch size >= 2");
    }

    FitResult res;
    res.store = init_params(cfg, tc.seed);
    res.adam = AdamState::like(res.store);
    std::size_t start_epoch = 0;
    if (!opts.resume_from.empty()) {
        const CheckpointData ck = load_checkpoint_file(opts.resume_from);
        restore_train_checkpoint(ck, res.store, res.adam, res.global_step, start_epoch);
    }

    std::ofstream log;
    if (!opts.log_path.empty()) {
        log.open(opts.log_path, std::ios::app);
        require(log.good(), "fit: cannot open log '" + opts.log_path + "'");
    }

    RngStream root(tc.seed, "train");
    std::size_t consecutive_bad = 0;

    for (std::size_t epoch = start_epoch; epoch < tc.epochs; ++epoch) {
        std::vector<std::size_t> order(sentences.size());
        std::iota(order.begin(), order.end(), 0);
        RngStream shuffle_rng = root.derive("shuffle-epoch-" + std::to_string(epoch));
        shuffle_rng.shuffle(order);

        EpochRecord rec;
        rec.epoch = epoch + 1;
        std::size_t applied = 0;

        for (std::size_t lo = 0; lo < order.size(); lo += tc.batch_size) {
            const std::size_t hi = std::min(order.size(), lo + tc.batch_size);
            if (cfg.variant == Variant::MATVAE && hi - lo < 2) break;  // MMD needs >= 2
            std::vector<std::vector<int>> batch;
            batch.reserve(hi - lo);
            for (std::size_t i = lo; i < hi; ++i) batch.push_back(sentences[order[i]]);

            const double psi_t = kl_weight_at(tc, cfg.psi, res.global_step);
            const double lambda_t = kl_weight_at(tc, cfg.lambda, res.global_step);
            rec.psi_t = psi_t;
            rec.lambda_t = lambda_t;

            RngStream step_rng = root.derive("step-" + std::to_string(res.global_step));
            bool stepped = false;
            std::string what;
            try {
                Graph<double> g;
                const GraphParams gp = load_params(g, res.store, true);
                const ObjectiveNodes nodes =
                    build_objective(g, gp, cfg, make_batch(batch), step_rng, psi_t, lambda_t);
                const ElboTerms terms = extract_terms(g, nodes, psi_t, lambda_t);
                res.step_objectives.push_back(terms.objective);
                g.backward(nodes.loss);
                std::vector<TensorData<double>> grads;
                grads.reserve(res.store.params.size());
                for (const auto& [name, t] : res.store.params) {
                    grads.push_back(g.grad(gp.at(name)));
                }
                clip_global_norm(grads, tc.clip_norm);
                if (adam_step(res.store, grads, res.adam, tc)) {
                    stepped = true;
                    consecutive_bad = 0;
                    rec.reconstruction += terms.reconstruction;
                    rec.kl_z += terms.kl_z;
                    rec.kl_gamma += terms.kl_gamma;
                    rec.objective += terms.objective;
                    rec.gate_mean += nodes.gate_mean;
                    ++applied;
                } else {
                    what = "non-finite gradients";
                }
            } catch (const numeric_error& e) {
                what = e.what();
                res.step_objectives.push_back(
                    std::numeric_limits<double>::quiet_NaN());
            }

            if (!stepped) {
                ++res.skipped_steps;
                ++rec.skipped;
                ++consecutive_bad;
                if (log.is_open()) {
                    log << "event=skipped_step step=" << res.global_step << " reason=" << what
                        << '\n';
                }
                if (consecutive_bad >= 2) {
                    throw numeric_error(
                        "fit: objective/gradients non-finite on two consecutive steps "
                        "(last at global step " +
                        std::to_string(res.global_step) + "): " + what);
                }
            }
            ++res.global_step;
        }

        if (applied > 0) {
            rec.reconstruction /= double(applied);
            rec.kl_z /= double(applied);
            rec.kl_gamma /= double(applied);
            rec.objective /= double(applied);
            rec.gate_mean /= double(applied);
        }
        res.records.push_back(rec);
        if (log.is_open()) {
            log << rec.to_line() << '\n';
            log.flush();
        }

        const bool last_epoch = epoch + 1 == tc.epochs;
        const bool due =
            tc.checkpoint_every > 0 && (epoch + 1 - start_epoch) % tc.checkpoint_every == 0;
        if (!opts.checkpoint_path.empty() && (due || last_epoch)) {
            save_checkpoint_file(opts.checkpoint_path,
                                 detail::make_train_checkpoint(cfg, res.store, res.adam,
                                                               res.global_step, epoch + 1));
        }
    }
    return res;
}

}  // namespace sllab
