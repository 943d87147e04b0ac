#pragma once

// Sparsity measurement: Hoyer score per code, Average Hoyer over a corpus
// with per-dimension std normalization, and corpus reconstruction reporting.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "sllab/errors.hpp"
#include "sllab/model.hpp"
#include "sllab/tensor.hpp"

namespace sllab {

/// Normalized sparsity of a vector: (sqrt(d) - |z|_1/|z|_2) / (sqrt(d) - 1),
/// 1 for a one-hot vector, 0 for a constant one. The all-zero vector is 0/0
/// under the formula; we score it 0 (no measured structure) and callers count
/// the event.
inline double hoyer(const std::vector<double>& code) {
    require(code.size() >= 2, "hoyer: need at least 2 dimensions");
    double l1 = 0.0, sq = 0.0;
    for (double v : code) {
        require(std::isfinite(v), "hoyer: code has non-finite entries");
        l1 += std::abs(v);
        sq += v * v;
    }
    if (sq == 0.0) return 0.0;
    const double sd = std::sqrt(double(code.size()));
    return (sd - l1 / std::sqrt(sq)) / (sd - 1.0);
}

struct HoyerReport {
    double average_hoyer = 0.0;
    std::vector<double> dim_std;      // per-dimension population std of the raw codes
    CodeMode mode = CodeMode::posterior_mean;
    std::size_t codes = 0;
    std::size_t zero_codes = 0;       // exactly-zero codes, scored 0 by convention
    std::size_t degenerate_dims = 0;  // std < 1e-8, left unnormalized

    std::string to_line() const {
        std::ostringstream os;
        os.precision(10);
        os << "average_hoyer=" << average_hoyer << " mode=" << code_mode_name(mode)
           << " codes=" << codes << " dims=" << dim_std.size()
           << " zero_codes=" << zero_codes << " degenerate_dims=" << degenerate_dims;
        return os.str();
    }
};

/// Average Hoyer of a code matrix (row per sentence): normalize each dimension
/// by its population std over the corpus (dimensions with std < 1e-8 are left
/// as-is and counted), then average the per-row hoyer scores.
inline HoyerReport average_hoyer_of_codes(const TensorData<double>& codes, CodeMode mode) {
    require(codes.rows >= 1, "average_hoyer: no codes");
    require(codes.cols >= 2, "average_hoyer: need at least 2 dimensions");
    const std::size_t N = codes.rows, D = codes.cols;

    HoyerReport rep;
    rep.mode = mode;
    rep.codes = N;
    rep.dim_std.assign(D, 0.0);
    std::vector<double> mean(D, 0.0);
    for (std::size_t i = 0; i < N; ++i) {
        for (std::size_t j = 0; j < D; ++j) mean[j] += codes.at(i, j);
    }
    for (auto& m : mean) m /= double(N);
    for (std::size_t i = 0; i < N; ++i) {
        for (std::size_t j = 0; j < D; ++j) {
            const double d = codes.at(i, j) - mean[j];
            rep.dim_std[j] += d * d;
        }
    }
    std::vector<double> scale(D);
    for (std::size_t j = 0; j < D; ++j) {
        rep.dim_std[j] = std::sqrt(rep.dim_std[j] / double(N));
        if (rep.dim_std[j] < 1e-8) {
            ++rep.degenerate_dims;
            scale[j] = 1.0;
        } else {
            scale[j] = 1.0 / rep.dim_std[j];
        }
    }

    double total = 0.0;
    std::vector<double> row(D);
    for (std::size_t i = 0; i < N; ++i) {
        bool all_zero = true;
        for (std::size_t j = 0; j < D; ++j) {
            row[j] = codes.at(i, j) * scale[j];
            all_zero = all_zero && codes.at(i, j) == 0.0;
        }
        if (all_zero) ++rep.zero_codes;
        total += hoyer(row);
    }
    rep.average_hoyer = total / double(N);
    return rep;
}

/// Average Hoyer of a trained model over a corpus: one code per sentence
/// (posterior mean, or one posterior sample) and the normalization above.
inline HoyerReport average_hoyer(const ModelConfig& cfg, const ParameterStore& store,
                                 const std::vector<std::vector<int>>& sentences,
                                 CodeMode mode, RngStream& rng) {
    return average_hoyer_of_codes(latent_codes(cfg, store, sentences, mode, rng), mode);
}

/// Mean per-sentence reconstruction log-likelihood of the decoder driven by
/// each sentence's latent code.
inline double mean_reconstruction(const ModelConfig& cfg, const ParameterStore& store,
                                  const std::vector<std::vector<int>>& sentences,
                                  CodeMode mode, RngStream& rng) {
    const TensorData<double> codes = latent_codes(cfg, store, sentences, mode, rng);
    double total = 0.0;
    for (std::size_t lo = 0; lo < sentences.size(); lo += detail::kEvalChunk) {
        const std::size_t hi = std::min(sentences.size(), lo + detail::kEvalChunk);
        const std::vector<std::vector<int>> chunk(sentences.begin() + lo,
                                                  sentences.begin() + hi);
        TensorData<double> z(hi - lo, cfg.latent_dim);
        for (std::size_t i = lo; i < hi; ++i) {
            for (std::size_t j = 0; j < cfg.latent_dim; ++j) {
                z.at(i - lo, j) = codes.at(i, j);
            }
        }
        Graph<double> g;
        const GraphParams p = load_params(g, store, false);
        const NodeId rows = decode_loglik_rows(g, p, cfg, make_batch(chunk), g.constant(z));
        for (double v : g.value(rows).v) total += v;
    }
    return total / double(sentences.size());
}

/// Dump a code matrix as CSV, one row per sentence.
inline void write_code_matrix_csv(const std::string& path, const TensorData<double>& codes) {
    std::ofstream f(path);
    require(f.good(), "write_code_matrix_csv: cannot open '" + path + "'");
    char buf[40];
    for (std::size_t i = 0; i < codes.rows; ++i) {
        for (std::size_t j = 0; j < codes.cols; ++j) {
            std::snprintf(buf, sizeof(buf), "%.10g", codes.at(i, j));
            f << (j ? "," : "") << buf;
        }
        f << '\n';
    }
    require(f.good(), "write_code_matrix_csv: write failed for '" + path + "'");
}

}  // namespace sllab
