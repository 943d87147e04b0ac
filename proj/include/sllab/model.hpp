#pragma once

// The model family: a GRU encoder feeding variant-specific posterior heads,
// a latent draw, and a GRU decoder conditioned on the latent by input
// concatenation (teacher forcing). Variants share the backbone and differ in
// the posterior/prior pair and the regularizer:
//   VAE       Gaussian posterior, N(0,1) prior, closed-form KL
//   VAE_L1/L2 VAE plus a penalty on the posterior-head activations
//   MATVAE    Gaussian posterior, Spike-and-Slab prior, KL surrogate + MMD
//   HSVAE     Beta posterior over the gate, Spike-and-Slab conditional over z

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sllab/distributions.hpp"
#include "sllab/errors.hpp"
#include "sllab/graph.hpp"
#include "sllab/rng.hpp"
#include "sllab/tensor.hpp"
#include "sllab/textdata.hpp"

namespace sllab {

enum class Variant { VAE, VAE_L1, VAE_L2, MATVAE, HSVAE };

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::VAE: return "VAE";
        case Variant::VAE_L1: return "VAE_L1";
        case Variant::VAE_L2: return "VAE_L2";
        case Variant::MATVAE: return "MATVAE";
        case Variant::HSVAE: return "HSVAE";
    }
    return "?";
}

inline Variant variant_from_name(const std::string& s) {
    for (Variant v : {Variant::VAE, Variant::VAE_L1, Variant::VAE_L2, Variant::MATVAE,
                      Variant::HSVAE}) {
        if (s == variant_name(v)) return v;
    }
    throw contract_error("unknown model variant '" + s + "'");
}

enum class MatKlSurrogate { mc, gaussian };

struct ModelConfig {
    Variant variant = Variant::HSVAE;
    std::size_t vocab_size = 0;
    std::size_t latent_dim = 16;   // desk-scale defaults; full-corpus runs
    std::size_t hidden_dim = 64;   // want H=512, E=256, D in {32, 768}
    std::size_t embed_dim = 32;
    double psi = 0.5;              // weight on KL(q(z|.) || p(z|.))
    double lambda = 0.5;           // weight on KL(q(gamma|x) || p(gamma)) / MMD
    std::size_t mc_gamma = 1;      // gate draws per step
    std::size_t mc_z = 1;          // z draws per gate draw
    double prior_alpha = 8.0;      // Beta prior; alpha > beta biases gates on (sparse)
    double prior_beta = 2.0;
    double sigma_spike = 1e-2;
    double tau = 0.5;              // Binary Concrete temperature
    double penalty_weight = 0.01;  // VAE_L1 / VAE_L2
    double matvae_prior_weight = 0.5;  // spike probability of the MAT prior
    MatKlSurrogate matvae_kl = MatKlSurrogate::mc;
    bool hsvae_kl_mc = false;      // single-sample estimate instead of the paired bound

    void validate() const {
        require(vocab_size > Vocab::kReserved, "ModelConfig: vocab_size must exceed reserved ids");
        require(latent_dim > 0 && hidden_dim > 0 && embed_dim > 0,
                "ModelConfig: dimensions must be positive");
        require(psi >= 0.0 && lambda >= 0.0, "ModelConfig: KL weights must be nonnegative");
        require(mc_gamma >= 1 && mc_z >= 1, "ModelConfig: MC counts must be >= 1");
        require(prior_alpha > 0.0 && prior_beta > 0.0,
                "ModelConfig: Beta prior parameters must be positive");
        require(sigma_spike > 0.0 && tau > 0.0,
                "ModelConfig: sigma_spike and tau must be positive");
        require(penalty_weight >= 0.0, "ModelConfig: penalty weight must be nonnegative");
        require(matvae_prior_weight >= 0.0 && matvae_prior_weight <= 1.0,
                "ModelConfig: MAT prior weight must lie in [0,1]");
    }
};

struct ElboTerms {
    double reconstruction = 0.0;  // log-likelihood, maximized
    double kl_z = 0.0;
    double kl_gamma = 0.0;        // carries the MMD term for MATVAE
    double penalty = 0.0;
    double objective = 0.0;

    static ElboTerms assemble(double rec, double klz, double klg, double pen, double psi,
                              double lambda) {
        ElboTerms t;
        t.reconstruction = rec;
        t.kl_z = klz;
        t.kl_gamma = klg;
        t.penalty = pen;
        t.objective = rec - psi * klz - lambda * klg - pen;
        return t;
    }
};

// ---------------------------------------------------------------------------
// Parameters

struct ParameterStore {
    // insertion-ordered, so optimizer state and checkpoints align by position
    std::vector<std::pair<std::string, TensorData<double>>> params;

    bool has(const std::string& name) const {
        for (const auto& [n, t] : params) {
            if (n == name) return true;
        }
        return false;
    }
    TensorData<double>& at(const std::string& name) {
        for (auto& [n, t] : params) {
            if (n == name) return t;
        }
        throw contract_error("ParameterStore: no parameter named '" + name + "'");
    }
    const TensorData<double>& at(const std::string& name) const {
        return const_cast<ParameterStore*>(this)->at(name);
    }
    void add(const std::string& name, TensorData<double> t) {
        require(!has(name), "ParameterStore: duplicate parameter '" + name + "'");
        params.emplace_back(name, std::move(t));
    }
};

/// FNV over the raw bytes of every tensor, in store order. Used to prove an
/// encoder stayed frozen.
inline std::uint64_t param_checksum(const ParameterStore& store) {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 1099511628211ULL;
        }
    };
    for (const auto& [name, t] : store.params) {
        mix(name.data(), name.size());
        mix(t.v.data(), t.v.size() * sizeof(double));
    }
    return h;
}

namespace detail {

inline void init_matrix(ParameterStore& store, const std::string& name, std::size_t r,
                        std::size_t c, RngStream& root) {
    TensorData<double> t(r, c);
    RngStream rng = root.derive("init." + name);
    const double bound = 1.0 / std::sqrt(double(r));
    for (double& v : t.v) v = bound * (2.0 * rng.uniform() - 1.0);
    store.add(name, std::move(t));
}

inline void init_zeros(ParameterStore& store, const std::string& name, std::size_t r,
                       std::size_t c) {
    store.add(name, TensorData<double>(r, c, 0.0));
}

inline void init_gru(ParameterStore& store, const std::string& prefix, std::size_t in_dim,
                     std::size_t hidden, RngStream& root) {
    for (const char* gate : {"wr", "wz", "wn"}) {
        init_matrix(store, prefix + "." + gate, in_dim, hidden, root);
    }
    for (const char* gate : {"ur", "uz", "un"}) {
        init_matrix(store, prefix + "." + gate, hidden, hidden, root);
    }
    for (const char* gate : {"br", "bz", "bn"}) {
        init_zeros(store, prefix + "." + gate, 1, hidden);
    }
}

}  // namespace detail

/// Fresh parameters for a variant: shared word embeddings, encoder GRU,
/// posterior heads, decoder GRU (input = embed + latent), output projection.
inline ParameterStore init_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const std::size_t V = cfg.vocab_size, E = cfg.embed_dim, H = cfg.hidden_dim,
                      D = cfg.latent_dim;
    ParameterStore store;
    RngStream root(seed, "init");
    detail::init_matrix(store, "embed", V, E, root);
    detail::init_gru(store, "enc", E, H, root);
    if (cfg.variant == Variant::HSVAE) {
        detail::init_matrix(store, "gate.h.w", H, H, root);
        detail::init_zeros(store, "gate.h.b", 1, H);
        detail::init_matrix(store, "gate.a.w", H, D, root);
        detail::init_zeros(store, "gate.a.b", 1, D);
        detail::init_matrix(store, "gate.b.w", H, D, root);
        detail::init_zeros(store, "gate.b.b", 1, D);
        detail::init_matrix(store, "slab.h.w", H + D, H, root);
        detail::init_zeros(store, "slab.h.b", 1, H);
        detail::init_matrix(store, "slab.mu.w", H, D, root);
        detail::init_zeros(store, "slab.mu.b", 1, D);
        detail::init_matrix(store, "slab.sig.w", H, D, root);
        detail::init_zeros(store, "slab.sig.b", 1, D);
    } else {
        detail::init_matrix(store, "post.h.w", H, H, root);
        detail::init_zeros(store, "post.h.b", 1, H);
        detail::init_matrix(store, "post.mu.w", H, D, root);
        detail::init_zeros(store, "post.mu.b", 1, D);
        detail::init_matrix(store, "post.sig.w", H, D, root);
        detail::init_zeros(store, "post.sig.b", 1, D);
    }
    detail::init_gru(store, "dec", E + D, H, root);
    detail::init_matrix(store, "out.w", H, V, root);
    detail::init_zeros(store, "out.b", 1, V);
    return store;
}

// ---------------------------------------------------------------------------
// Graph wiring

using NodeId = Graph<double>::NodeId;

struct GraphParams {
    std::unordered_map<std::string, NodeId> ids;

    NodeId at(const std::string& name) const {
        auto it = ids.find(name);
        require(it != ids.end(), "GraphParams: no node for parameter '" + name + "'");
        return it->second;
    }
};

inline GraphParams load_params(Graph<double>& g, const ParameterStore& store,
                               bool trainable = true) {
    GraphParams p;
    for (const auto& [name, t] : store.params) {
        p.ids[name] = g.input(t, trainable);
    }
    return p;
}

inline GruParams<double> gru_param_nodes(const GraphParams& p, const std::string& prefix) {
    GruParams<double> gp;
    gp.wr = p.at(prefix + ".wr");
    gp.wz = p.at(prefix + ".wz");
    gp.wn = p.at(prefix + ".wn");
    gp.ur = p.at(prefix + ".ur");
    gp.uz = p.at(prefix + ".uz");
    gp.un = p.at(prefix + ".un");
    gp.br = p.at(prefix + ".br");
    gp.bz = p.at(prefix + ".bz");
    gp.bn = p.at(prefix + ".bn");
    return gp;
}

// ---------------------------------------------------------------------------
// Batching: pad to the longest sentence, keep targets/decoder inputs as
// per-timestep id columns, masks as [B,1] constants (1 = real token).

struct Batch {
    std::size_t size = 0;                       // B
    std::size_t steps = 0;                      // L, longest sentence incl. <eos>
    std::vector<std::vector<int>> target_cols;  // [L][B]
    std::vector<std::vector<int>> input_cols;   // [L][B], <eos> start, shifted targets
    std::vector<TensorData<double>> mask_cols;  // [L] of [B,1]
};

inline Batch make_batch(const std::vector<std::vector<int>>& sentences) {
    require(!sentences.empty(), "make_batch: batch must be non-empty");
    Batch b;
    b.size = sentences.size();
    for (const auto& s : sentences) {
        require(!s.empty(), "make_batch: empty sentence");
        b.steps = std::max(b.steps, s.size());
    }
    b.target_cols.assign(b.steps, std::vector<int>(b.size, Vocab::kPad));
    b.input_cols.assign(b.steps, std::vector<int>(b.size, Vocab::kPad));
    b.mask_cols.assign(b.steps, TensorData<double>(b.size, 1, 0.0));
    for (std::size_t i = 0; i < b.size; ++i) {
        const auto& s = sentences[i];
        for (std::size_t t = 0; t < s.size(); ++t) {
            b.target_cols[t][i] = s[t];
            b.input_cols[t][i] = t == 0 ? Vocab::kEos : s[t - 1];
            b.mask_cols[t].at(i, 0) = 1.0;
        }
    }
    return b;
}

/// Encoder: GRU over the embedded tokens with a masked state update (padded
/// steps keep the previous state); returns the last hidden state [B,H].
inline NodeId encode_nodes(Graph<double>& g, const GraphParams& p, const ModelConfig& cfg,
                           const Batch& batch) {
    const auto enc = gru_param_nodes(p, "enc");
    const NodeId embed = p.at("embed");
    NodeId h = g.constant(TensorData<double>(batch.size, cfg.hidden_dim, 0.0));
    for (std::size_t t = 0; t < batch.steps; ++t) {
        const NodeId x = g.embedding(embed, batch.target_cols[t]);
        const NodeId h_new = gru_cell(g, x, h, enc);
        const NodeId m = g.constant(batch.mask_cols[t]);
        h = g.add(g.mul(h_new, m), g.mul(h, g.one_minus(m)));
    }
    return h;
}

namespace detail {

inline NodeId dense(Graph<double>& g, NodeId x, NodeId w, NodeId b) {
    return g.add(g.matmul(x, w), b);
}

/// softplus(x) + 1e-4: strictly positive head activation.
inline NodeId positive_head(Graph<double>& g, NodeId raw) {
    return g.add_scalar(g.softplus(raw), 1e-4);
}

/// Smooth cap at kBetaHeadCap: C - softplus(C - x). Exact passthrough for
/// x well below C (softplus(C-x) == C-x in doubles), saturates at C above.
inline constexpr double kBetaHeadCap = 1e3;
inline NodeId capped(Graph<double>& g, NodeId x) {
    const double C = kBetaHeadCap;
    auto c_minus_x = g.add_scalar(g.scale(x, -1.0), C);
    return g.add_scalar(g.scale(g.softplus(c_minus_x), -1.0), C);
}

}  // namespace detail

/// Gaussian posterior head (VAE family): one tanh hidden layer, then
/// mu and a softplus-floored sigma.
inline std::pair<NodeId, NodeId> gauss_head_nodes(Graph<double>& g, const GraphParams& p,
                                                  NodeId feature) {
    const NodeId hid = g.tanh(detail::dense(g, feature, p.at("post.h.w"), p.at("post.h.b")));
    const NodeId mu = detail::dense(g, hid, p.at("post.mu.w"), p.at("post.mu.b"));
    const NodeId sigma =
        detail::positive_head(g, detail::dense(g, hid, p.at("post.sig.w"), p.at("post.sig.b")));
    return {mu, sigma};
}

/// Beta gate head: (alpha, beta), softplus-floored and smoothly capped so the
/// digamma terms in the KL stay bounded.
inline std::pair<NodeId, NodeId> gate_head_nodes(Graph<double>& g, const GraphParams& p,
                                                 NodeId feature) {
    const NodeId hid = g.tanh(detail::dense(g, feature, p.at("gate.h.w"), p.at("gate.h.b")));
    const NodeId alpha = detail::capped(
        g, detail::positive_head(g, detail::dense(g, hid, p.at("gate.a.w"), p.at("gate.a.b"))));
    const NodeId beta = detail::capped(
        g, detail::positive_head(g, detail::dense(g, hid, p.at("gate.b.w"), p.at("gate.b.b"))));
    return {alpha, beta};
}

/// Slab head: consumes concat(feature, gamma) so the slab can adapt to the
/// sampled gate.
inline std::pair<NodeId, NodeId> slab_head_nodes(Graph<double>& g, const GraphParams& p,
                                                 NodeId feature, NodeId gamma) {
    const NodeId joint = g.concat_cols(feature, gamma);
    const NodeId hid = g.tanh(detail::dense(g, joint, p.at("slab.h.w"), p.at("slab.h.b")));
    const NodeId mu = detail::dense(g, hid, p.at("slab.mu.w"), p.at("slab.mu.b"));
    const NodeId sigma =
        detail::positive_head(g, detail::dense(g, hid, p.at("slab.sig.w"), p.at("slab.sig.b")));
    return {mu, sigma};
}

/// Decoder with teacher forcing: step input is concat(embed(prev token), z);
/// returns the per-sentence reconstruction log-likelihood [B,1]. Padded
/// positions are multiplied by an exact 0 and contribute nothing.
inline NodeId decode_loglik_rows(Graph<double>& g, const GraphParams& p, const ModelConfig& cfg,
                                 const Batch& batch, NodeId z) {
    const auto dec = gru_param_nodes(p, "dec");
    const NodeId embed = p.at("embed");
    NodeId h = g.constant(TensorData<double>(batch.size, cfg.hidden_dim, 0.0));
    NodeId nll = g.constant(TensorData<double>(batch.size, 1, 0.0));
    for (std::size_t t = 0; t < batch.steps; ++t) {
        const NodeId x = g.concat_cols(g.embedding(embed, batch.input_cols[t]), z);
        h = gru_cell(g, x, h, dec);
        const NodeId logits = detail::dense(g, h, p.at("out.w"), p.at("out.b"));
        const NodeId xent = g.softmax_xent(logits, batch.target_cols[t]);
        nll = g.add(nll, g.mul(xent, g.constant(batch.mask_cols[t])));
    }
    return g.scale(nll, -1.0);
}

/// Sum over non-pad rows of the log-probability of the target under the
/// row's logits (plain-double oracle-facing version).
inline double reconstruction_loglik(const TensorData<double>& logits,
                                    const std::vector<int>& targets) {
    require(targets.size() == logits.rows, "reconstruction_loglik: one target per row");
    double ll = 0.0;
    for (std::size_t r = 0; r < logits.rows; ++r) {
        if (targets[r] == Vocab::kPad) continue;
        require(targets[r] >= 0 && static_cast<std::size_t>(targets[r]) < logits.cols,
                "reconstruction_loglik: target id out of range");
        const double* row = &logits.v[r * logits.cols];
        double mx = row[0];
        for (std::size_t c = 1; c < logits.cols; ++c) mx = std::max(mx, row[c]);
        double lse = 0.0;
        for (std::size_t c = 0; c < logits.cols; ++c) lse += std::exp(row[c] - mx);
        ll += row[static_cast<std::size_t>(targets[r])] - (mx + std::log(lse));
    }
    return ll;
}

// ---------------------------------------------------------------------------
// Objectives

struct ObjectiveNodes {
    NodeId objective = 0;       // batch-mean ELBO (maximize)
    NodeId loss = 0;            // -objective (the node to differentiate)
    NodeId reconstruction = 0;  // batch means of the individual terms
    NodeId kl_z = 0;
    NodeId kl_gamma = 0;
    NodeId penalty = 0;
    double gate_mean = 0.0;     // HSVAE: mean posterior Beta mean, for logging
};

namespace detail {

/// Per-element Gaussian log-density of z under (mu, sigma), as nodes.
inline NodeId gaussian_logpdf_elem(Graph<double>& g, NodeId z, NodeId mu, NodeId sigma) {
    auto d = g.mul(g.sub(z, mu), g.reciprocal(sigma));
    return g.add_scalar(g.sub(g.scale(g.square(d), -0.5), g.log(sigma)), -kLnSqrt2Pi);
}

/// Per-element spike-slab log-density with gate node gamma, slab (mu, sigma),
/// spike N(0, spike_std): logaddexp(log(1-gamma)+slab, log(gamma)+spike).
inline NodeId spike_slab_logpdf_elem(Graph<double>& g, NodeId z, NodeId gamma, NodeId mu,
                                     NodeId sigma, double spike_std) {
    auto slab = g.add(g.log(g.one_minus(gamma)), gaussian_logpdf_elem(g, z, mu, sigma));
    auto spike_quad = g.scale(g.square(g.scale(z, 1.0 / spike_std)), -0.5);
    auto spike = g.add(g.log(gamma),
                       g.add_scalar(spike_quad, -std::log(spike_std) - kLnSqrt2Pi));
    return g.logaddexp(slab, spike);
}

}  // namespace detail

/// Assemble the training objective for any variant over one batch.
/// psi_t / lambda_t are the scheduled KL weights for this step.
inline ObjectiveNodes build_objective(Graph<double>& g, const GraphParams& p,
                                      const ModelConfig& cfg, const Batch& batch,
                                      RngStream& rng, double psi_t, double lambda_t) {
    cfg.validate();
    if (cfg.variant == Variant::MATVAE) {
        require(batch.size >= 2, "matvae_objective: batch of 1 cannot estimate MMD");
    }
    ObjectiveNodes out;
    const NodeId feature = encode_nodes(g, p, cfg, batch);
    const NodeId zero = g.scalar_const(0.0);
    out.kl_gamma = zero;
    out.penalty = zero;

    if (cfg.variant == Variant::HSVAE) {
        const auto [alpha, beta] = gate_head_nodes(g, p, feature);
        out.kl_gamma = g.mean(beta_kl_rows(g, alpha, beta, cfg.prior_alpha, cfg.prior_beta));
        // posterior gate mean alpha/(alpha+beta), logging only
        {
            const auto& a = g.value(alpha);
            const auto& b = g.value(beta);
            double s = 0.0;
            for (std::size_t i = 0; i < a.numel(); ++i) s += a.v[i] / (a.v[i] + b.v[i]);
            out.gate_mean = s / double(a.numel());
        }
        NodeId rec_sum = zero;
        NodeId klz_sum = zero;
        for (std::size_t n = 0; n < cfg.mc_gamma; ++n) {
            const NodeId gamma = g.beta_sample(alpha, beta, rng);
            const auto [mu, sigma] = slab_head_nodes(g, p, feature, gamma);
            NodeId klz_rows;
            if (cfg.hsvae_kl_mc) {
                // single-sample estimate log q(z) - log p(z); z must come from
                // the exact mixture (hard gate) or the ratio is biased upward
                const TensorData<double>& gv = g.value(gamma);
                TensorData<double> hard(batch.size, cfg.latent_dim);
                TensorData<double> spikes(batch.size, cfg.latent_dim);
                for (std::size_t i = 0; i < hard.numel(); ++i) {
                    hard.v[i] = rng.uniform() < gv.v[i] ? 1.0 : 0.0;
                    spikes.v[i] = cfg.sigma_spike * rng.normal();
                }
                const NodeId bsel = g.constant(std::move(hard));
                const NodeId slab = gaussian_sample_nodes(g, mu, sigma, rng);
                const NodeId zs = g.add(g.mul(slab, g.one_minus(bsel)),
                                        g.mul(g.constant(std::move(spikes)), bsel));
                const NodeId lq = detail::spike_slab_logpdf_elem(g, zs, gamma, mu, sigma,
                                                                 cfg.sigma_spike);
                const NodeId zmat =
                    g.constant(TensorData<double>(batch.size, cfg.latent_dim, 0.0));
                const NodeId lp = detail::spike_slab_logpdf_elem(
                    g, zs, gamma, zmat, g.add_scalar(zmat, 1.0), cfg.sigma_spike);
                klz_rows = g.row_sum(g.sub(lq, lp));
            } else {
                klz_rows = spike_slab_kl_std_rows(g, gamma, mu, sigma);
            }
            klz_sum = g.add(klz_sum, g.mean(klz_rows));
            for (std::size_t m = 0; m < cfg.mc_z; ++m) {
                const NodeId z =
                    spike_slab_sample_nodes(g, gamma, mu, sigma, cfg.sigma_spike, cfg.tau, rng);
                rec_sum = g.add(rec_sum, g.mean(decode_loglik_rows(g, p, cfg, batch, z)));
            }
        }
        out.reconstruction = g.scale(rec_sum, 1.0 / double(cfg.mc_gamma * cfg.mc_z));
        out.kl_z = g.scale(klz_sum, 1.0 / double(cfg.mc_gamma));
    } else {
        const auto [mu, sigma] = gauss_head_nodes(g, p, feature);
        NodeId rec_sum = zero;
        for (std::size_t m = 0; m < cfg.mc_z; ++m) {
            const NodeId z = gaussian_sample_nodes(g, mu, sigma, rng);
            rec_sum = g.add(rec_sum, g.mean(decode_loglik_rows(g, p, cfg, batch, z)));
            if (cfg.variant == Variant::MATVAE && m == 0) {
                // aggregated-posterior MMD against prior draws, first z only
                TensorData<double> prior(batch.size, cfg.latent_dim);
                for (auto& v : prior.v) {
                    const bool spike = rng.uniform() < cfg.matvae_prior_weight;
                    v = (spike ? cfg.sigma_spike : 1.0) * rng.normal();
                }
                const double bw = median_heuristic_bandwidth(g.value(z), prior);
                out.kl_gamma = g.mmd_rbf(z, g.constant(std::move(prior)), bw);
            }
            if (cfg.variant == Variant::MATVAE && m == 0 &&
                cfg.matvae_kl == MatKlSurrogate::mc) {
                // log q(z) - log p_ss(z) per element at the drawn z
                const NodeId lq = detail::gaussian_logpdf_elem(g, z, mu, sigma);
                const NodeId zero_mat =
                    g.constant(TensorData<double>(batch.size, cfg.latent_dim, 0.0));
                NodeId lp;
                if (cfg.matvae_prior_weight == 0.0) {
                    // pure slab: the prior is exactly N(0,1)
                    lp = detail::gaussian_logpdf_elem(g, z, zero_mat,
                                                      g.add_scalar(zero_mat, 1.0));
                } else if (cfg.matvae_prior_weight == 1.0) {
                    // pure spike: N(0, sigma_spike)
                    auto q = g.scale(g.square(g.scale(z, 1.0 / cfg.sigma_spike)), -0.5);
                    lp = g.add_scalar(q, -std::log(cfg.sigma_spike) - kLnSqrt2Pi);
                } else {
                    const NodeId gate_mat = g.constant(TensorData<double>(
                        batch.size, cfg.latent_dim, cfg.matvae_prior_weight));
                    lp = detail::spike_slab_logpdf_elem(g, z, gate_mat, zero_mat,
                                                        g.add_scalar(zero_mat, 1.0),
                                                        cfg.sigma_spike);
                }
                out.kl_z = g.mean(g.row_sum(g.sub(lq, lp)));
            }
        }
        out.reconstruction = g.scale(rec_sum, 1.0 / double(cfg.mc_z));
        if (cfg.variant != Variant::MATVAE || cfg.matvae_kl == MatKlSurrogate::gaussian) {
            out.kl_z = g.mean(gaussian_kl_std_rows(g, mu, sigma));
        }
        if (cfg.variant == Variant::VAE_L1) {
            out.penalty = g.scale(g.mean(g.row_sum(g.add(g.abs(mu), g.abs(sigma)))),
                                  cfg.penalty_weight);
        } else if (cfg.variant == Variant::VAE_L2) {
            out.penalty = g.scale(g.mean(g.row_sum(g.add(g.square(mu), g.square(sigma)))),
                                  cfg.penalty_weight);
        }
    }

    const NodeId weighted = g.add(
        g.add(g.scale(out.kl_z, psi_t), g.scale(out.kl_gamma, lambda_t)), out.penalty);
    out.objective = g.sub(out.reconstruction, weighted);
    out.loss = g.scale(out.objective, -1.0);
    return out;
}

/// Terms from the evaluated graph; the objective identity
/// rec - psi kl_z - lambda kl_gamma - penalty holds exactly by assembly.
inline ElboTerms extract_terms(const Graph<double>& g, const ObjectiveNodes& nodes,
                               double psi_t, double lambda_t) {
    return ElboTerms::assemble(g.value(nodes.reconstruction).v[0], g.value(nodes.kl_z).v[0],
                               g.value(nodes.kl_gamma).v[0], g.value(nodes.penalty).v[0],
                               psi_t, lambda_t);
}

// ---------------------------------------------------------------------------
// Inference: latent codes for evaluation. Forward passes only; parameters
// enter the graph frozen.

enum class CodeMode { posterior_mean, posterior_sample };

inline const char* code_mode_name(CodeMode m) {
    return m == CodeMode::posterior_mean ? "posterior-mean" : "posterior-sample";
}

inline CodeMode code_mode_from_name(const std::string& s) {
    if (s == "posterior-mean") return CodeMode::posterior_mean;
    if (s == "posterior-sample") return CodeMode::posterior_sample;
    throw contract_error("unknown code mode '" + s + "' (posterior-mean | posterior-sample)");
}

namespace detail {

inline constexpr std::size_t kEvalChunk = 64;

inline TensorData<double> feature_values(const ModelConfig& cfg, const ParameterStore& store,
                                         const std::vector<std::vector<int>>& chunk) {
    Graph<double> g;
    const GraphParams p = load_params(g, store, false);
    return g.value(encode_nodes(g, p, cfg, make_batch(chunk)));
}

/// Run one posterior head over precomputed features in a throwaway graph.
template <typename BuildHead>
inline std::pair<TensorData<double>, TensorData<double>> head_values(
    const ParameterStore& store, const TensorData<double>& feature, BuildHead&& build) {
    Graph<double> g;
    const GraphParams p = load_params(g, store, false);
    const NodeId f = g.constant(feature);
    const auto [a, b] = build(g, p, f);
    return {g.value(a), g.value(b)};
}

inline TensorData<double> draw_beta_matrix(const TensorData<double>& alpha,
                                           const TensorData<double>& beta, RngStream& rng) {
    TensorData<double> gamma(alpha.rows, alpha.cols);
    for (std::size_t i = 0; i < gamma.numel(); ++i) {
        const double ga = rng.gamma(alpha.v[i]);
        const double gb = rng.gamma(beta.v[i]);
        gamma.v[i] = std::min(1.0 - 1e-6, std::max(1e-6, ga / (ga + gb)));
    }
    return gamma;
}

}  // namespace detail

/// K latent draws per sentence, each a [N,D] tensor. HSVAE draws K gates with
/// one z per gate; Gaussian variants draw K z from the single posterior.
inline std::vector<TensorData<double>> latent_draws(const ModelConfig& cfg,
                                                    const ParameterStore& store,
                                                    const std::vector<std::vector<int>>& sentences,
                                                    std::size_t K, RngStream& rng) {
    cfg.validate();
    require(!sentences.empty(), "latent_draws: no sentences");
    require(K >= 1, "latent_draws: K must be >= 1");
    const std::size_t N = sentences.size(), D = cfg.latent_dim;
    std::vector<TensorData<double>> draws(K, TensorData<double>(N, D));
    for (std::size_t lo = 0; lo < N; lo += detail::kEvalChunk) {
        const std::size_t hi = std::min(N, lo + detail::kEvalChunk);
        const std::vector<std::vector<int>> chunk(sentences.begin() + lo,
                                                  sentences.begin() + hi);
        const TensorData<double> feature = detail::feature_values(cfg, store, chunk);
        if (cfg.variant == Variant::HSVAE) {
            const auto [alpha, beta] = detail::head_values(
                store, feature,
                [](Graph<double>& g, const GraphParams& p, NodeId f) {
                    return gate_head_nodes(g, p, f);
                });
            for (std::size_t k = 0; k < K; ++k) {
                const TensorData<double> gamma = detail::draw_beta_matrix(alpha, beta, rng);
                const auto [mu, sigma] = detail::head_values(
                    store, feature,
                    [&gamma](Graph<double>& g, const GraphParams& p, NodeId f) {
                        return slab_head_nodes(g, p, f, g.constant(gamma));
                    });
                for (std::size_t r = 0; r < chunk.size(); ++r) {
                    SpikeSlabParams ss;
                    ss.gamma.assign(&gamma.v[r * D], &gamma.v[r * D] + D);
                    ss.slab.mu.assign(&mu.v[r * D], &mu.v[r * D] + D);
                    ss.slab.sigma.assign(&sigma.v[r * D], &sigma.v[r * D] + D);
                    ss.spike_std = cfg.sigma_spike;
                    const std::vector<double> z = spike_slab_sample(ss, cfg.tau, rng);
                    for (std::size_t c = 0; c < D; ++c) draws[k].at(lo + r, c) = z[c];
                }
            }
        } else {
            const auto [mu, sigma] = detail::head_values(
                store, feature,
                [](Graph<double>& g, const GraphParams& p, NodeId f) {
                    return gauss_head_nodes(g, p, f);
                });
            for (std::size_t k = 0; k < K; ++k) {
                for (std::size_t r = 0; r < chunk.size(); ++r) {
                    for (std::size_t c = 0; c < D; ++c) {
                        draws[k].at(lo + r, c) =
                            mu.at(r, c) + sigma.at(r, c) * rng.normal();
                    }
                }
            }
        }
    }
    return draws;
}

/// One code per sentence. posterior_mean is deterministic: Gaussian variants
/// emit mu; HSVAE feeds the Beta-mean gate to the slab head and emits
/// (1 - gamma_bar) * mu (the spike has mean zero).
inline TensorData<double> latent_codes(const ModelConfig& cfg, const ParameterStore& store,
                                       const std::vector<std::vector<int>>& sentences,
                                       CodeMode mode, RngStream& rng) {
    if (mode == CodeMode::posterior_sample) {
        return latent_draws(cfg, store, sentences, 1, rng)[0];
    }
    cfg.validate();
    require(!sentences.empty(), "latent_codes: no sentences");
    const std::size_t N = sentences.size(), D = cfg.latent_dim;
    TensorData<double> codes(N, D);
    for (std::size_t lo = 0; lo < N; lo += detail::kEvalChunk) {
        const std::size_t hi = std::min(N, lo + detail::kEvalChunk);
        const std::vector<std::vector<int>> chunk(sentences.begin() + lo,
                                                  sentences.begin() + hi);
        const TensorData<double> feature = detail::feature_values(cfg, store, chunk);
        if (cfg.variant == Variant::HSVAE) {
            const auto [alpha, beta] = detail::head_values(
                store, feature,
                [](Graph<double>& g, const GraphParams& p, NodeId f) {
                    return gate_head_nodes(g, p, f);
                });
            TensorData<double> gbar(alpha.rows, alpha.cols);
            for (std::size_t i = 0; i < gbar.numel(); ++i) {
                gbar.v[i] = alpha.v[i] / (alpha.v[i] + beta.v[i]);
            }
            const auto [mu, sigma] = detail::head_values(
                store, feature,
                [&gbar](Graph<double>& g, const GraphParams& p, NodeId f) {
                    return slab_head_nodes(g, p, f, g.constant(gbar));
                });
            for (std::size_t r = 0; r < chunk.size(); ++r) {
                for (std::size_t c = 0; c < D; ++c) {
                    codes.at(lo + r, c) = (1.0 - gbar.at(r, c)) * mu.at(r, c);
                }
            }
        } else {
            const auto [mu, sigma] = detail::head_values(
                store, feature,
                [](Graph<double>& g, const GraphParams& p, NodeId f) {
                    return gauss_head_nodes(g, p, f);
                });
            (void)sigma;
            for (std::size_t r = 0; r < chunk.size(); ++r) {
                for (std::size_t c = 0; c < D; ++c) codes.at(lo + r, c) = mu.at(r, c);
            }
        }
    }
    return codes;
}

/// Mean posterior gate per sentence [N,D] (HSVAE only): alpha/(alpha+beta).
inline TensorData<double> gate_means(const ModelConfig& cfg, const ParameterStore& store,
                                     const std::vector<std::vector<int>>& sentences) {
    cfg.validate();
    require(cfg.variant == Variant::HSVAE, "gate_means: only HSVAE has a gate posterior");
    require(!sentences.empty(), "gate_means: no sentences");
    const std::size_t N = sentences.size(), D = cfg.latent_dim;
    TensorData<double> out(N, D);
    for (std::size_t lo = 0; lo < N; lo += detail::kEvalChunk) {
        const std::size_t hi = std::min(N, lo + detail::kEvalChunk);
        const std::vector<std::vector<int>> chunk(sentences.begin() + lo,
                                                  sentences.begin() + hi);
        const TensorData<double> feature = detail::feature_values(cfg, store, chunk);
        const auto [alpha, beta] = detail::head_values(
            store, feature, [](Graph<double>& g, const GraphParams& p, NodeId f) {
                return gate_head_nodes(g, p, f);
            });
        for (std::size_t r = 0; r < chunk.size(); ++r) {
            for (std::size_t c = 0; c < D; ++c) {
                out.at(lo + r, c) = alpha.at(r, c) / (alpha.at(r, c) + beta.at(r, c));
            }
        }
    }
    return out;
}

/// Greedy decode from one latent code: start at <eos>, feed the argmax token
/// back in, stop at <eos> (not emitted) or after max_len tokens. Ties pick
/// the lowest id. Forward-only, so this runs on plain doubles.
inline std::vector<int> greedy_decode(const ModelConfig& cfg, const ParameterStore& store,
                                      const std::vector<double>& z_row,
                                      std::size_t max_len = 30) {
    cfg.validate();
    require(z_row.size() == cfg.latent_dim, "greedy_decode: z has the wrong dimension");
    const std::size_t E = cfg.embed_dim, H = cfg.hidden_dim, V = cfg.vocab_size;
    const auto& embed = store.at("embed");
    const TensorData<double>&wr = store.at("dec.wr"), &wz = store.at("dec.wz"),
                            &wn = store.at("dec.wn"), &ur = store.at("dec.ur"),
                            &uz = store.at("dec.uz"), &un = store.at("dec.un"),
                            &br = store.at("dec.br"), &bz = store.at("dec.bz"),
                            &bn = store.at("dec.bn"), &ow = store.at("out.w"),
                            &ob = store.at("out.b");
    auto matvec = [](const std::vector<double>& x, const TensorData<double>& w,
                     const TensorData<double>& b) {
        std::vector<double> y(w.cols);
        for (std::size_t c = 0; c < w.cols; ++c) {
            double s = b.v[c];
            for (std::size_t r = 0; r < w.rows; ++r) s += x[r] * w.at(r, c);
            y[c] = s;
        }
        return y;
    };
    const auto sigm = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    std::vector<double> h(H, 0.0);
    std::vector<int> out_tokens;
    int prev = Vocab::kEos;
    for (std::size_t t = 0; t < max_len; ++t) {
        std::vector<double> x(E + cfg.latent_dim);
        for (std::size_t c = 0; c < E; ++c) {
            x[c] = embed.at(static_cast<std::size_t>(prev), c);
        }
        for (std::size_t c = 0; c < cfg.latent_dim; ++c) x[E + c] = z_row[c];
        std::vector<double> r = matvec(x, wr, br), zg = matvec(x, wz, bz),
                            n = matvec(x, wn, bn);
        for (std::size_t c = 0; c < H; ++c) {
            double rr = 0.0, zz = 0.0, nn = 0.0;
            for (std::size_t k = 0; k < H; ++k) {
                rr += h[k] * ur.at(k, c);
                zz += h[k] * uz.at(k, c);
                nn += h[k] * un.at(k, c);
            }
            r[c] = sigm(r[c] + rr);
            zg[c] = sigm(zg[c] + zz);
            n[c] = std::tanh(n[c] + r[c] * nn);
        }
        for (std::size_t c = 0; c < H; ++c) h[c] = (1.0 - zg[c]) * n[c] + zg[c] * h[c];
        std::size_t best = 0;
        double best_v = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < V; ++c) {
            double s = ob.v[c];
            for (std::size_t k = 0; k < H; ++k) s += h[k] * ow.at(k, c);
            if (s > best_v) {
                best_v = s;
                best = c;
            }
        }
        if (best == Vocab::kEos) break;
        out_tokens.push_back(static_cast<int>(best));
        prev = static_cast<int>(best);
    }
    return out_tokens;
}

// ---------------------------------------------------------------------------
// Posterior pinning (structural checks): zero the head layers and set biases
// so the posterior emits the prior exactly, making both KL terms vanish.

inline double softplus_inv(double y) {
    require(y > 0.0, "softplus_inv: y must be positive");
    // ln(e^y - 1), stable for large y
    return y > 20.0 ? y + std::log1p(-std::exp(-y)) : std::log(std::expm1(y));
}

inline void pin_posterior_to_prior(ParameterStore& store, const ModelConfig& cfg) {
    auto zero_out = [&](const std::string& name) {
        auto& t = store.at(name);
        std::fill(t.v.begin(), t.v.end(), 0.0);
    };
    auto set_bias = [&](const std::string& name, double raw) {
        auto& t = store.at(name);
        std::fill(t.v.begin(), t.v.end(), raw);
    };
    if (cfg.variant == Variant::HSVAE) {
        for (const char* n : {"gate.h.w", "gate.h.b", "gate.a.w", "gate.b.w", "slab.h.w",
                              "slab.h.b", "slab.mu.w", "slab.mu.b", "slab.sig.w"}) {
            zero_out(n);
        }
        // capped(softplus(raw) + 1e-4) = prior exactly while prior << cap
        set_bias("gate.a.b", softplus_inv(cfg.prior_alpha - 1e-4));
        set_bias("gate.b.b", softplus_inv(cfg.prior_beta - 1e-4));
        set_bias("slab.sig.b", softplus_inv(1.0 - 1e-4));
    } else {
        for (const char* n : {"post.h.w", "post.h.b", "post.mu.w", "post.mu.b", "post.sig.w"}) {
            zero_out(n);
        }
        set_bias("post.sig.b", softplus_inv(1.0 - 1e-4));
    }
}

}  // namespace sllab
