#pragma once

// Sparsity-pattern analysis: per-class binarized gate signatures, Hamming
// distances between them, and pairwise class KL of smoothed word unigrams.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "sllab/errors.hpp"
#include "sllab/model.hpp"
#include "sllab/tensor.hpp"
#include "sllab/textdata.hpp"

namespace sllab {

struct ClassPattern {
    int class_id = 0;
    std::vector<double> gamma_class;  // per-dim mean of binarized gates, in [0,1]
    std::size_t support = 0;          // sentences contributing to the average
};

namespace detail {

/// Labels must cover 0..max contiguously; returns the class count.
inline std::size_t checked_class_count(const std::vector<int>& labels) {
    require(!labels.empty(), "class analysis: corpus has no labels");
    int max_label = 0;
    for (int l : labels) {
        require(l >= 0, "class analysis: negative label");
        max_label = std::max(max_label, l);
    }
    std::vector<std::size_t> count(std::size_t(max_label) + 1, 0);
    for (int l : labels) ++count[std::size_t(l)];
    for (std::size_t c = 0; c < count.size(); ++c) {
        require(count[c] > 0,
                "class analysis: class " + std::to_string(c) + " has no sentences");
    }
    return count.size();
}

}  // namespace detail

/// Average the binarized gate rows within each class. A gate mean >= 0.5
/// binarizes to 1 (on), below to 0.
inline std::vector<ClassPattern> class_patterns_from_gates(const TensorData<double>& gates,
                                                           const std::vector<int>& labels) {
    require(gates.rows == labels.size(),
            "class_patterns_from_gates: gate rows must align with labels");
    const std::size_t C = detail::checked_class_count(labels);
    const std::size_t D = gates.cols;
    std::vector<ClassPattern> out(C);
    for (std::size_t c = 0; c < C; ++c) {
        out[c].class_id = int(c);
        out[c].gamma_class.assign(D, 0.0);
    }
    for (std::size_t i = 0; i < gates.rows; ++i) {
        ClassPattern& p = out[std::size_t(labels[i])];
        p.support += 1;
        for (std::size_t j = 0; j < D; ++j) {
            p.gamma_class[j] += gates.at(i, j) >= 0.5 ? 1.0 : 0.0;
        }
    }
    for (auto& p : out) {
        for (auto& v : p.gamma_class) v /= double(p.support);
    }
    return out;
}

/// Per-class sparsity signature of a trained model: binarize each sentence's
/// posterior gate means at 0.5 and average within the class.
inline std::vector<ClassPattern> gamma_class(const ModelConfig& cfg,
                                             const ParameterStore& store,
                                             const LabeledCorpus& corpus) {
    require(corpus.labeled(), "gamma_class: corpus is unlabeled");
    return class_patterns_from_gates(gate_means(cfg, store, corpus.sentences),
                                     corpus.labels);
}

/// Hamming distance between two patterns after thresholding at 0.5.
inline std::size_t pattern_distance(const ClassPattern& a, const ClassPattern& b) {
    require(a.gamma_class.size() == b.gamma_class.size(),
            "pattern_distance: dimension mismatch");
    std::size_t d = 0;
    for (std::size_t j = 0; j < a.gamma_class.size(); ++j) {
        if ((a.gamma_class[j] >= 0.5) != (b.gamma_class[j] >= 0.5)) ++d;
    }
    return d;
}

struct ClassKLMatrix {
    std::vector<int> class_ids;
    TensorData<double> kl;  // kl.at(i,j) = KL(class i || class j), natural log
    double smoothing = 1.0;

    double mean_off_diagonal() const {
        const std::size_t C = class_ids.size();
        require(C >= 2, "ClassKLMatrix: need at least 2 classes");
        double total = 0.0;
        for (std::size_t i = 0; i < C; ++i) {
            for (std::size_t j = 0; j < C; ++j) {
                if (i != j) total += kl.at(i, j);
            }
        }
        return total / double(C * (C - 1));
    }
};

/// Pairwise KL between class word distributions: per class, unigram counts of
/// word tokens (specials excluded) with add-1 smoothing over the vocabulary.
inline ClassKLMatrix class_kl_matrix(const LabeledCorpus& corpus) {
    corpus.validate();
    require(corpus.labeled(), "class_kl_matrix: corpus is unlabeled");
    const std::size_t C = detail::checked_class_count(corpus.labels);
    require(C >= 2, "class_kl_matrix: need at least 2 classes");
    require(corpus.vocab.size() > Vocab::kReserved,
            "class_kl_matrix: vocabulary has no word tokens");
    const std::size_t W = corpus.vocab.size() - Vocab::kReserved;

    std::vector<std::vector<double>> prob(C, std::vector<double>(W, 0.0));
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        auto& counts = prob[std::size_t(corpus.labels[i])];
        for (int id : corpus.sentences[i]) {
            if (id >= Vocab::kReserved) counts[std::size_t(id) - Vocab::kReserved] += 1.0;
        }
    }
    for (auto& p : prob) {
        double total = 0.0;
        for (double c : p) total += c + 1.0;
        for (double& c : p) c = (c + 1.0) / total;
    }

    ClassKLMatrix out;
    out.kl = TensorData<double>(C, C, 0.0);
    for (std::size_t c = 0; c < C; ++c) out.class_ids.push_back(int(c));
    for (std::size_t i = 0; i < C; ++i) {
        for (std::size_t j = 0; j < C; ++j) {
            double kl = 0.0;
            for (std::size_t w = 0; w < W; ++w) {
                kl += prob[i][w] * std::log(prob[i][w] / prob[j][w]);
            }
            // smoothed distributions keep KL >= 0; only rounding can dip below
            require(kl > -1e-9, "class_kl_matrix: KL came out negative");
            out.kl.at(i, j) = std::max(kl, 0.0);
        }
    }
    return out;
}

/// Spearman rank correlation with tie-averaged ranks; 0 when either side has
/// no rank variance.
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    require(x.size() == y.size() && x.size() >= 2,
            "spearman: need two aligned series of length >= 2");
    auto ranks = [](const std::vector<double>& v) {
        const std::size_t n = v.size();
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(),
                  [&v](std::size_t a, std::size_t b) { return v[a] < v[b]; });
        std::vector<double> r(n, 0.0);
        std::size_t i = 0;
        while (i < n) {
            std::size_t j = i;
            while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
            const double shared = 0.5 * double(i + j) + 1.0;  // mean of 1-based ranks
            for (std::size_t k = i; k <= j; ++k) r[idx[k]] = shared;
            i = j + 1;
        }
        return r;
    };
    const std::vector<double> rx = ranks(x), ry = ranks(y);
    const double n = double(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

// ---------------------------------------------------------------------------
// CSV artifacts

inline void write_gamma_class_csv(const std::string& path,
                                  const std::vector<ClassPattern>& patterns) {
    require(!patterns.empty(), "write_gamma_class_csv: no patterns");
    std::ofstream f(path);
    require(f.good(), "write_gamma_class_csv: cannot open '" + path + "'");
    f << "class";
    for (std::size_t j = 0; j < patterns[0].gamma_class.size(); ++j) f << ',' << j;
    f << '\n';
    char buf[40];
    for (const auto& p : patterns) {
        f << p.class_id;
        for (double v : p.gamma_class) {
            std::snprintf(buf, sizeof(buf), "%.10g", v);
            f << ',' << buf;
        }
        f << '\n';
    }
    require(f.good(), "write_gamma_class_csv: write failed for '" + path + "'");
}

inline void write_class_kl_csv(const std::string& path, const ClassKLMatrix& m) {
    std::ofstream f(path);
    require(f.good(), "write_class_kl_csv: cannot open '" + path + "'");
    f << "class";
    for (int id : m.class_ids) f << ',' << id;
    f << '\n';
    char buf[40];
    for (std::size_t i = 0; i < m.class_ids.size(); ++i) {
        f << m.class_ids[i];
        for (std::size_t j = 0; j < m.class_ids.size(); ++j) {
            std::snprintf(buf, sizeof(buf), "%.10g", m.kl.at(i, j));
            f << ',' << buf;
        }
        f << '\n';
    }
    require(f.good(), "write_class_kl_csv: write failed for '" + path + "'");
}

}  // namespace sllab
