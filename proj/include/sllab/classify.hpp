#pragma once

// Downstream classification: an MLP probe over frozen-encoder latent samples
// with Monte Carlo marginalization, and a jointly-trained simple classifier.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "sllab/errors.hpp"
#include "sllab/model.hpp"
#include "sllab/rng.hpp"
#include "sllab/tensor.hpp"
#include "sllab/textdata.hpp"
#include "sllab/training.hpp"

namespace sllab {

struct ClassifierConfig {
    std::size_t num_classes = 2;
    std::size_t hidden_width = 32;  // two hidden layers of this width
    double leaky_slope = 0.01;
    std::size_t mc_samples = 5;       // K latent draws averaged per prediction
    bool freeze_encoder = true;       // the probe never updates the encoder
    double holdout_fraction = 0.15;   // per-class share for each of valid/test

    void validate() const {
        require(num_classes >= 1, "ClassifierConfig: need at least one class");
        require(hidden_width >= 1, "ClassifierConfig: hidden width must be positive");
        require(mc_samples >= 1, "ClassifierConfig: K must be >= 1");
        require(leaky_slope >= 0.0 && leaky_slope < 1.0,
                "ClassifierConfig: leaky slope must lie in [0,1)");
        require(holdout_fraction > 0.0 && holdout_fraction < 0.5,
                "ClassifierConfig: holdout fraction must lie in (0, 0.5)");
    }
};

/// MLP head parameters: input -> width -> width -> classes, leaky-rectifier
/// activations on the hidden layers.
inline ParameterStore init_classifier_params(const ClassifierConfig& cc,
                                             std::size_t input_dim, std::uint64_t seed) {
    cc.validate();
    require(input_dim >= 1, "init_classifier_params: input dim must be positive");
    ParameterStore store;
    RngStream root(seed, "clf-init");
    auto dense = [&store, &root](const std::string& name, std::size_t in, std::size_t out) {
        TensorData<double> w(in, out);
        RngStream r = root.derive("init." + name);
        const double bound = 1.0 / std::sqrt(double(in));
        for (auto& v : w.v) v = bound * (2.0 * r.uniform() - 1.0);
        store.add(name + ".w", w);
        store.add(name + ".b", TensorData<double>(1, out, 0.0));
    };
    dense("clf.l1", input_dim, cc.hidden_width);
    dense("clf.l2", cc.hidden_width, cc.hidden_width);
    dense("clf.out", cc.hidden_width, cc.num_classes);
    return store;
}

inline NodeId classifier_logits_nodes(Graph<double>& g, const GraphParams& p,
                                      const ClassifierConfig& cc, NodeId x) {
    NodeId h1 = g.leaky_relu(g.add(g.matmul(x, p.at("clf.l1.w")), p.at("clf.l1.b")),
                             cc.leaky_slope);
    NodeId h2 = g.leaky_relu(g.add(g.matmul(h1, p.at("clf.l2.w")), p.at("clf.l2.b")),
                             cc.leaky_slope);
    return g.add(g.matmul(h2, p.at("clf.out.w")), p.at("clf.out.b"));
}

/// Class probabilities [N, C] for a matrix of latent codes.
inline TensorData<double> predict_probs_from_codes(const ClassifierConfig& cc,
                                                   const ParameterStore& clf,
                                                   const TensorData<double>& codes) {
    Graph<double> g;
    const GraphParams p = load_params(g, clf, false);
    const NodeId probs = g.softmax_row(classifier_logits_nodes(g, p, cc, g.constant(codes)));
    return g.value(probs);
}

/// Average the post-softmax probabilities over a fixed set of latent draws.
inline TensorData<double> marginalized_from_draws(const ClassifierConfig& cc,
                                                  const ParameterStore& clf,
                                                  const std::vector<TensorData<double>>& draws) {
    require(!draws.empty(), "marginalized_from_draws: no draws");
    TensorData<double> avg = predict_probs_from_codes(cc, clf, draws[0]);
    for (std::size_t k = 1; k < draws.size(); ++k) {
        const TensorData<double> pk = predict_probs_from_codes(cc, clf, draws[k]);
        require(pk.same_shape(avg), "marginalized_from_draws: draw shape mismatch");
        for (std::size_t i = 0; i < avg.numel(); ++i) avg.v[i] += pk.v[i];
    }
    for (auto& v : avg.v) v /= double(draws.size());
    return avg;
}

/// Marginalized class probabilities [N, C]: K latent draws per sentence (for
/// the hierarchical model, K gate draws with one slab sample each), averaged
/// after the softmax.
inline TensorData<double> predict_marginalized_probs(
    const ModelConfig& cfg, const ParameterStore& encoder, const ClassifierConfig& cc,
    const ParameterStore& clf, const std::vector<std::vector<int>>& sentences,
    RngStream& rng) {
    return marginalized_from_draws(cc, clf,
                                   latent_draws(cfg, encoder, sentences, cc.mc_samples, rng));
}

/// Single-sentence convenience wrapper; returns one probability vector.
inline std::vector<double> predict_marginalized(const ModelConfig& cfg,
                                                const ParameterStore& encoder,
                                                const ClassifierConfig& cc,
                                                const ParameterStore& clf,
                                                const std::vector<int>& sentence,
                                                RngStream& rng) {
    return predict_marginalized_probs(cfg, encoder, cc, clf, {sentence}, rng).v;
}

struct AccuracyReport {
    std::size_t correct = 0;
    std::size_t total = 0;
    double accuracy = 0.0;
};

/// Argmax accuracy; ties resolve to the lowest class id.
inline AccuracyReport accuracy_of(const TensorData<double>& probs,
                                  const std::vector<int>& labels) {
    require(probs.rows == labels.size(), "accuracy_of: probs/labels misaligned");
    require(probs.rows >= 1, "accuracy_of: empty evaluation set");
    AccuracyReport rep;
    rep.total = probs.rows;
    for (std::size_t i = 0; i < probs.rows; ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < probs.cols; ++c) {
            if (probs.at(i, c) > probs.at(i, best)) best = c;
        }
        if (int(best) == labels[i]) ++rep.correct;
    }
    rep.accuracy = double(rep.correct) / double(rep.total);
    return rep;
}

namespace detail {

inline void check_labels(const LabeledCorpus& corpus, std::size_t num_classes) {
    require(corpus.labeled(), "classifier: corpus is unlabeled");
    for (int l : corpus.labels) {
        require(l >= 0 && std::size_t(l) < num_classes,
                "classifier: label out of range for the configured class count");
    }
}

/// Balanced per-class split sized off the smallest class.
inline SplitResult probe_split(const LabeledCorpus& corpus, double holdout_fraction,
                               std::uint64_t seed) {
    std::unordered_map<int, std::size_t> counts;
    for (int l : corpus.labels) ++counts[l];
    std::size_t min_class = corpus.size();
    for (const auto& [c, n] : counts) min_class = std::min(min_class, n);
    const std::size_t eval_n = std::max<std::size_t>(1, std::size_t(double(min_class) * holdout_fraction));
    require(min_class > 2 * eval_n,
            "classifier: smallest class cannot fund train plus two eval splits");
    return split_per_class(corpus, min_class - 2 * eval_n, eval_n, seed);
}

inline TensorData<double> one_hot_rows(const std::vector<int>& labels, std::size_t C) {
    TensorData<double> t(labels.size(), C, 0.0);
    for (std::size_t i = 0; i < labels.size(); ++i) t.at(i, std::size_t(labels[i])) = 1.0;
    return t;
}

}  // namespace detail

struct ProbeResult {
    ParameterStore clf;
    AccuracyReport train;
    AccuracyReport holdout;
    std::uint64_t encoder_checksum = 0;
    bool degenerate = false;  // single-class corpus: accuracy is trivially 1

    std::string to_line(const std::string& variant, std::size_t K, std::uint64_t seed) const {
        std::ostringstream os;
        os.precision(10);
        os << "variant=" << variant << " split=holdout K=" << K
           << " accuracy=" << holdout.accuracy << " correct=" << holdout.correct
           << " total=" << holdout.total << " seed=" << seed
           << " encoder_checksum=" << encoder_checksum
           << " degenerate=" << (degenerate ? 1 : 0);
        return os.str();
    }
};

/// Train the MLP probe on marginalized predictions from a frozen encoder.
/// The loss is -log of the K-averaged probability at the true label. The
/// encoder parameter checksum is verified unchanged after training.
inline ProbeResult train_classifier(const ModelConfig& cfg, const ParameterStore& encoder,
                                    const LabeledCorpus& corpus, const ClassifierConfig& cc,
                                    const TrainConfig& tc) {
    cfg.validate();
    cc.validate();
    tc.validate();
    require(cc.freeze_encoder, "train_classifier: probe requires the frozen-encoder flag");
    detail::check_labels(corpus, cc.num_classes);

    const std::uint64_t checksum_before = param_checksum(encoder);
    const SplitResult split = detail::probe_split(corpus, cc.holdout_fraction, tc.seed);

    ProbeResult res;
    res.degenerate = cc.num_classes == 1;
    res.clf = init_classifier_params(cc, cfg.latent_dim, tc.seed);
    AdamState adam = AdamState::like(res.clf);
    RngStream root(tc.seed, "probe");
    std::uint64_t step = 0;

    for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
        std::vector<std::size_t> order(split.train.size());
        std::iota(order.begin(), order.end(), 0);
        RngStream shuffle_rng = root.derive("shuffle-epoch-" + std::to_string(epoch));
        shuffle_rng.shuffle(order);
        for (std::size_t lo = 0; lo < order.size(); lo += tc.batch_size) {
            const std::size_t hi = std::min(order.size(), lo + tc.batch_size);
            std::vector<std::vector<int>> sents;
            std::vector<int> labels;
            for (std::size_t i = lo; i < hi; ++i) {
                sents.push_back(split.train.sentences[order[i]]);
                labels.push_back(split.train.labels[order[i]]);
            }
            RngStream step_rng = root.derive("step-" + std::to_string(step));
            const auto draws = latent_draws(cfg, encoder, sents, cc.mc_samples, step_rng);

            Graph<double> g;
            const GraphParams p = load_params(g, res.clf, true);
            NodeId avg = Graph<double>::npos;
            for (const auto& z : draws) {
                const NodeId probs =
                    g.softmax_row(classifier_logits_nodes(g, p, cc, g.constant(z)));
                avg = avg == Graph<double>::npos ? probs : g.add(avg, probs);
            }
            avg = g.scale(avg, 1.0 / double(draws.size()));
            const NodeId picked = g.row_sum(
                g.mul(avg, g.constant(detail::one_hot_rows(labels, cc.num_classes))));
            const NodeId loss = g.scale(g.mean(g.log(picked)), -1.0);
            g.backward(loss);

            std::vector<TensorData<double>> grads;
            grads.reserve(res.clf.params.size());
            for (const auto& [name, t] : res.clf.params) grads.push_back(g.grad(p.at(name)));
            clip_global_norm(grads, tc.clip_norm);
            adam_step(res.clf, grads, adam, tc);
            ++step;
        }
    }

    require(param_checksum(encoder) == checksum_before,
            "train_classifier: encoder parameters changed under the frozen flag");
    res.encoder_checksum = checksum_before;

    RngStream train_rng = root.derive("eval-train");
    res.train = accuracy_of(predict_marginalized_probs(cfg, encoder, cc, res.clf,
                                                       split.train.sentences, train_rng),
                            split.train.labels);
    RngStream hold_rng = root.derive("eval-holdout");
    res.holdout = accuracy_of(predict_marginalized_probs(cfg, encoder, cc, res.clf,
                                                         split.test.sentences, hold_rng),
                              split.test.labels);
    return res;
}

struct SimpleClassifierResult {
    ParameterStore params;  // embeddings + recurrent encoder + MLP head
    AccuracyReport train;
    AccuracyReport holdout;
    bool degenerate = false;
};

/// Text encoder with a classifier on top, trained jointly end to end: the
/// same GRU encoder architecture as the generative models, the same MLP head
/// as the probe, cross-entropy on the encoder's final state.
inline SimpleClassifierResult simple_classifier(const ModelConfig& cfg,
                                                const LabeledCorpus& corpus,
                                                const ClassifierConfig& cc,
                                                const TrainConfig& tc) {
    cfg.validate();
    cc.validate();
    tc.validate();
    detail::check_labels(corpus, cc.num_classes);
    const SplitResult split = detail::probe_split(corpus, cc.holdout_fraction, tc.seed);

    SimpleClassifierResult res;
    res.degenerate = cc.num_classes == 1;
    const ParameterStore full = init_params(cfg, tc.seed);
    for (const auto& [name, t] : full.params) {
        if (name == "embed" || name.rfind("enc.", 0) == 0) res.params.add(name, t);
    }
    const ParameterStore head = init_classifier_params(cc, cfg.hidden_dim, tc.seed);
    for (const auto& [name, t] : head.params) res.params.add(name, t);

    AdamState adam = AdamState::like(res.params);
    RngStream root(tc.seed, "simple-clf");
    for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
        std::vector<std::size_t> order(split.train.size());
        std::iota(order.begin(), order.end(), 0);
        RngStream shuffle_rng = root.derive("shuffle-epoch-" + std::to_string(epoch));
        shuffle_rng.shuffle(order);
        for (std::size_t lo = 0; lo < order.size(); lo += tc.batch_size) {
            const std::size_t hi = std::min(order.size(), lo + tc.batch_size);
            std::vector<std::vector<int>> sents;
            std::vector<int> labels;
            for (std::size_t i = lo; i < hi; ++i) {
                sents.push_back(split.train.sentences[order[i]]);
                labels.push_back(split.train.labels[order[i]]);
            }
            Graph<double> g;
            const GraphParams p = load_params(g, res.params, true);
            const NodeId feature = encode_nodes(g, p, cfg, make_batch(sents));
            const NodeId logits = classifier_logits_nodes(g, p, cc, feature);
            const NodeId loss = g.mean(g.softmax_xent(logits, labels));
            g.backward(loss);
            std::vector<TensorData<double>> grads;
            grads.reserve(res.params.params.size());
            for (const auto& [name, t] : res.params.params) grads.push_back(g.grad(p.at(name)));
            clip_global_norm(grads, tc.clip_norm);
            adam_step(res.params, grads, adam, tc);
        }
    }

    auto evaluate = [&](const LabeledCorpus& part) {
        TensorData<double> probs(part.size(), cc.num_classes);
        for (std::size_t lo = 0; lo < part.size(); lo += detail::kEvalChunk) {
            const std::size_t hi = std::min(part.size(), lo + detail::kEvalChunk);
            const std::vector<std::vector<int>> chunk(part.sentences.begin() + lo,
                                                      part.sentences.begin() + hi);
            const TensorData<double> feature = detail::feature_values(cfg, res.params, chunk);
            const TensorData<double> pr = predict_probs_from_codes(cc, res.params, feature);
            for (std::size_t i = lo; i < hi; ++i) {
                for (std::size_t c = 0; c < cc.num_classes; ++c) {
                    probs.at(i, c) = pr.at(i - lo, c);
                }
            }
        }
        return accuracy_of(probs, part.labels);
    };
    res.train = evaluate(split.train);
    res.holdout = evaluate(split.test);
    return res;
}

}  // namespace sllab
