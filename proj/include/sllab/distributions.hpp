#pragma once

// Distribution toolkit: Gaussian, Beta, Binary Concrete, and Spike-and-Slab.
// Each family comes in two forms that share the same formulas:
//   - plain-double functions taking an RngStream (sampling, log-densities,
//     closed-form KLs), used by metrics/analysis and as test subjects;
//   - Graph builders that assemble the differentiable versions for training.
// Samplers record their noise as graph constants, so re-executing a graph
// replays the same draw (see graph.hpp).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "sllab/errors.hpp"
#include "sllab/graph.hpp"
#include "sllab/numerics.hpp"
#include "sllab/rng.hpp"
#include "sllab/tensor.hpp"

namespace sllab {

// ---------------------------------------------------------------------------
// Parameter containers

struct GaussianParams {
    std::vector<double> mu;
    std::vector<double> sigma;

    void validate() const {
        require(!mu.empty() && mu.size() == sigma.size(),
                "GaussianParams: mu/sigma must be non-empty and aligned");
        for (double s : sigma) {
            if (!(s > 0.0) || !std::isfinite(s)) {
                throw contract_error("GaussianParams: sigma must be positive and finite");
            }
        }
        for (double m : mu) {
            if (!std::isfinite(m)) throw contract_error("GaussianParams: mu must be finite");
        }
    }
    std::size_t dim() const { return mu.size(); }
};

struct BetaParams {
    std::vector<double> alpha;
    std::vector<double> beta;

    void validate() const {
        require(!alpha.empty() && alpha.size() == beta.size(),
                "BetaParams: alpha/beta must be non-empty and aligned");
        for (std::size_t i = 0; i < alpha.size(); ++i) {
            if (!(alpha[i] > 0.0) || !(beta[i] > 0.0)) {
                throw contract_error("BetaParams: alpha and beta must be positive");
            }
        }
    }
    std::size_t dim() const { return alpha.size(); }
};

struct BinaryConcreteParams {
    std::vector<double> gamma;  // in (0,1): relaxation needs both logits finite
    double tau = 0.5;

    void validate() const {
        require(!gamma.empty(), "BinaryConcreteParams: gamma must be non-empty");
        require(tau > 0.0, "BinaryConcreteParams: tau must be positive");
        for (double gm : gamma) {
            if (!(gm > 0.0 && gm < 1.0)) {
                throw contract_error("BinaryConcreteParams: gamma must lie in (0,1)");
            }
        }
    }
};

struct SpikeSlabParams {
    std::vector<double> gamma;  // in [0,1]; 1 = spiked (dimension off)
    GaussianParams slab;
    double spike_std = 1e-2;

    void validate() const {
        slab.validate();
        require(gamma.size() == slab.dim(), "SpikeSlabParams: gamma/slab dimension mismatch");
        require(spike_std > 0.0, "SpikeSlabParams: spike_std must be positive");
        for (double gm : gamma) {
            if (!(gm >= 0.0 && gm <= 1.0)) {
                throw contract_error("SpikeSlabParams: gamma must lie in [0,1]");
            }
        }
    }
    std::size_t dim() const { return gamma.size(); }
};

// ---------------------------------------------------------------------------
// Gaussian

/// Deterministic half of the reparameterization: z = mu + sigma .* eps.
inline std::vector<double> gaussian_transform(const GaussianParams& p,
                                              const std::vector<double>& eps) {
    p.validate();
    require(eps.size() == p.dim(), "gaussian_transform: eps dimension mismatch");
    std::vector<double> z(p.dim());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = p.mu[i] + p.sigma[i] * eps[i];
    return z;
}

inline std::vector<double> gaussian_sample(const GaussianParams& p, RngStream& rng) {
    return gaussian_transform(p, rng.normals(p.dim()));
}

inline double gaussian_log_pdf_1d(double z, double mu, double sigma) {
    const double d = (z - mu) / sigma;
    return -0.5 * d * d - std::log(sigma) - kLnSqrt2Pi;
}

/// KL(q||p) summed over dimensions; exactly 0 at q == p.
inline double gaussian_kl(const GaussianParams& q, const GaussianParams& p) {
    q.validate();
    p.validate();
    require(q.dim() == p.dim(), "gaussian_kl: dimension mismatch");
    double kl = 0.0;
    for (std::size_t i = 0; i < q.dim(); ++i) {
        const double vr = q.sigma[i] * q.sigma[i];
        const double dm = q.mu[i] - p.mu[i];
        kl += std::log(p.sigma[i] / q.sigma[i]) +
              (vr + dm * dm) / (2.0 * p.sigma[i] * p.sigma[i]) - 0.5;
    }
    return kl;
}

// ---------------------------------------------------------------------------
// Beta with pathwise (implicit CDF) gradients

struct BetaSampleResult {
    std::vector<double> z;          // clamped to [1e-6, 1-1e-6]
    std::vector<double> u;          // recorded CDF position I_z(alpha, beta)
    std::vector<double> dz_dalpha;  // implicit gradients at the drawn z
    std::vector<double> dz_dbeta;
    std::size_t clamp_count = 0;
};

namespace detail {

/// d/dp of I_z(a,b) in its parameters, by 64-bit central differences.
inline double dIda(double z, double a, double b) {
    const double h = 1e-5 * std::max(1.0, std::fabs(a));
    return (reg_inc_beta(z, a + h, b) - reg_inc_beta(z, a - h, b)) / (2.0 * h);
}
inline double dIdb(double z, double a, double b) {
    const double h = 1e-5 * std::max(1.0, std::fabs(b));
    return (reg_inc_beta(z, a, b + h) - reg_inc_beta(z, a, b - h)) / (2.0 * h);
}

}  // namespace detail

/// Sample z ~ Beta(alpha,beta) via two Gamma variates, with gradients by
/// implicit differentiation of the CDF: dz/da = -(dI_z/da) / beta_pdf(z).
inline BetaSampleResult beta_sample_pathwise(const BetaParams& p, RngStream& rng) {
    p.validate();
    constexpr double kClamp = 1e-6;
    BetaSampleResult r;
    r.z.resize(p.dim());
    r.u.resize(p.dim());
    r.dz_dalpha.resize(p.dim());
    r.dz_dbeta.resize(p.dim());
    for (std::size_t i = 0; i < p.dim(); ++i) {
        const double a = p.alpha[i];
        const double b = p.beta[i];
        const double ga = rng.gamma(a);
        const double gb = rng.gamma(b);
        double z = ga / (ga + gb);
        if (!(z >= kClamp) || !(z <= 1.0 - kClamp)) {
            z = std::min(1.0 - kClamp, std::max(kClamp, z));
            ++r.clamp_count;
        }
        r.z[i] = z;
        r.u[i] = reg_inc_beta(z, a, b);
        const double pdf = std::exp(beta_log_pdf(z, a, b));
        r.dz_dalpha[i] = -detail::dIda(z, a, b) / pdf;
        r.dz_dbeta[i] = -detail::dIdb(z, a, b) / pdf;
    }
    return r;
}

/// KL(q||p) summed over dimensions; exactly 0 at q == p.
inline double beta_kl(const BetaParams& q, const BetaParams& p) {
    q.validate();
    p.validate();
    require(q.dim() == p.dim(), "beta_kl: dimension mismatch");
    double kl = 0.0;
    for (std::size_t i = 0; i < q.dim(); ++i) {
        const double aq = q.alpha[i], bq = q.beta[i];
        const double ap = p.alpha[i], bp = p.beta[i];
        kl += log_beta(ap, bp) - log_beta(aq, bq) + (aq - ap) * digamma(aq) +
              (bq - bp) * digamma(bq) + (ap - aq + bp - bq) * digamma(aq + bq);
    }
    return kl;
}

// ---------------------------------------------------------------------------
// Binary Concrete relaxation of a Bernoulli gate

/// b = sigmoid((logit(gamma) + logit(u)) / tau); u pre-clamped by the caller.
inline double binary_concrete_transform(double gamma, double u, double tau) {
    const double logits = std::log(gamma) - std::log1p(-gamma) +
                          std::log(u) - std::log1p(-u);
    const double x = logits / tau;
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

inline constexpr double kConcreteNoiseClamp = 1e-7;

inline std::vector<double> binary_concrete_sample(const BinaryConcreteParams& p,
                                                  RngStream& rng) {
    p.validate();
    std::vector<double> b(p.gamma.size());
    for (std::size_t i = 0; i < b.size(); ++i) {
        double u = rng.uniform();
        u = std::min(1.0 - kConcreteNoiseClamp, std::max(kConcreteNoiseClamp, u));
        b[i] = binary_concrete_transform(p.gamma[i], u, p.tau);
    }
    return b;
}

// ---------------------------------------------------------------------------
// Spike-and-Slab

/// One draw of z: relaxed gate b mixes slab (mu + sigma eps) against the
/// near-zero spike (spike_std eta). Dimensions whose gamma is exactly 0 or 1
/// take the hard gate and skip the relaxation (no uniform draw consumed).
inline std::vector<double> spike_slab_sample(const SpikeSlabParams& p, double tau,
                                             RngStream& rng) {
    p.validate();
    require(tau > 0.0, "spike_slab_sample: tau must be positive");
    std::vector<double> z(p.dim());
    for (std::size_t i = 0; i < z.size(); ++i) {
        double b = p.gamma[i];
        if (b > 0.0 && b < 1.0) {
            double u = rng.uniform();
            u = std::min(1.0 - kConcreteNoiseClamp, std::max(kConcreteNoiseClamp, u));
            b = binary_concrete_transform(p.gamma[i], u, tau);
        }
        const double slab = p.slab.mu[i] + p.slab.sigma[i] * rng.normal();
        const double spike = p.spike_std * rng.normal();
        z[i] = (1.0 - b) * slab + b * spike;
    }
    return z;
}

/// log p(z) with the Bernoulli index summed out per dimension:
/// sum_i ln[(1-gamma_i) N(z_i; mu_i, sigma_i) + gamma_i N(z_i; 0, spike_std)].
inline double spike_slab_log_prob(const std::vector<double>& z, const SpikeSlabParams& p) {
    p.validate();
    require(z.size() == p.dim(), "spike_slab_log_prob: dimension mismatch");
    double lp = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double g = p.gamma[i];
        const double l_slab = gaussian_log_pdf_1d(z[i], p.slab.mu[i], p.slab.sigma[i]);
        const double l_spike = gaussian_log_pdf_1d(z[i], 0.0, p.spike_std);
        if (g == 0.0) {
            lp += l_slab;
        } else if (g == 1.0) {
            lp += l_spike;
        } else {
            const double a = std::log1p(-g) + l_slab;
            const double b = std::log(g) + l_spike;
            const double m = std::max(a, b);
            lp += m + std::log(std::exp(a - m) + std::exp(b - m));
        }
    }
    return lp;
}

/// Paired-component KL for two Spike-and-Slab distributions sharing the same
/// gate draw and spike: sum_i (1-gamma_i) KL(q.slab_i || p.slab_i). The
/// spike-vs-spike term vanishes; the result upper-bounds the mixture KL.
inline double spike_slab_kl(const SpikeSlabParams& q, const SpikeSlabParams& p) {
    q.validate();
    p.validate();
    require(q.dim() == p.dim(), "spike_slab_kl: dimension mismatch");
    require(q.gamma == p.gamma, "spike_slab_kl: q and p must share the gate");
    require(q.spike_std == p.spike_std, "spike_slab_kl: q and p must share spike_std");
    double kl = 0.0;
    for (std::size_t i = 0; i < q.dim(); ++i) {
        const double vr = q.slab.sigma[i] * q.slab.sigma[i];
        const double dm = q.slab.mu[i] - p.slab.mu[i];
        const double g1 = std::log(p.slab.sigma[i] / q.slab.sigma[i]) +
                          (vr + dm * dm) / (2.0 * p.slab.sigma[i] * p.slab.sigma[i]) - 0.5;
        kl += (1.0 - q.gamma[i]) * g1;
    }
    return kl;
}

/// Single-sample MC estimate log q(z) - log p(z). z is drawn from the exact
/// mixture (hard gate per dimension), not the relaxed sampler: the density
/// ratio is only unbiased for the mixture KL when z follows the mixture.
inline double spike_slab_kl_mc(const SpikeSlabParams& q, const SpikeSlabParams& p,
                               RngStream& rng) {
    q.validate();
    p.validate();
    require(q.gamma == p.gamma, "spike_slab_kl_mc: q and p must share the gate");
    require(q.spike_std == p.spike_std, "spike_slab_kl_mc: q and p must share spike_std");
    std::vector<double> z(q.dim());
    for (std::size_t i = 0; i < z.size(); ++i) {
        const bool spiked = rng.uniform() < q.gamma[i];
        z[i] = spiked ? q.spike_std * rng.normal()
                      : q.slab.mu[i] + q.slab.sigma[i] * rng.normal();
    }
    return spike_slab_log_prob(z, q) - spike_slab_log_prob(z, p);
}

// ---------------------------------------------------------------------------
// Maximum mean discrepancy (biased V-statistic, RBF kernel)

namespace detail {

inline double rbf_k(const double* x, const double* y, std::size_t d, double inv_two_h2) {
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
        const double diff = x[c] - y[c];
        s += diff * diff;
    }
    return std::exp(-s * inv_two_h2);
}

}  // namespace detail

/// MMD^2 between the rows of X and Y. The three kernel sums share one loop
/// order, so mmd(X, X) cancels to exactly zero in IEEE arithmetic.
inline double mmd(const TensorData<double>& X, const TensorData<double>& Y, double bandwidth) {
    require(X.rows > 0 && Y.rows > 0, "mmd: sample sets must be non-empty");
    require(X.cols == Y.cols, "mmd: dimension mismatch");
    require(bandwidth > 0.0, "mmd: bandwidth must be positive");
    const double inv_two_h2 = 1.0 / (2.0 * bandwidth * bandwidth);
    const std::size_t nx = X.rows, ny = Y.rows, d = X.cols;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < nx; ++i)
        for (std::size_t j = 0; j < nx; ++j)
            sxx += detail::rbf_k(&X.v[i * d], &X.v[j * d], d, inv_two_h2);
    for (std::size_t i = 0; i < ny; ++i)
        for (std::size_t j = 0; j < ny; ++j)
            syy += detail::rbf_k(&Y.v[i * d], &Y.v[j * d], d, inv_two_h2);
    for (std::size_t i = 0; i < nx; ++i)
        for (std::size_t j = 0; j < ny; ++j)
            sxy += detail::rbf_k(&X.v[i * d], &Y.v[j * d], d, inv_two_h2);
    return sxx / double(nx * nx) + syy / double(ny * ny) - 2.0 * sxy / double(nx * ny);
}

/// Median of the nonzero pairwise distances over the pooled rows of X and Y;
/// falls back to 1 when every pair coincides.
inline double median_heuristic_bandwidth(const TensorData<double>& X,
                                         const TensorData<double>& Y) {
    require(X.cols == Y.cols, "median_heuristic_bandwidth: dimension mismatch");
    std::vector<const double*> rows;
    for (std::size_t i = 0; i < X.rows; ++i) rows.push_back(&X.v[i * X.cols]);
    for (std::size_t i = 0; i < Y.rows; ++i) rows.push_back(&Y.v[i * Y.cols]);
    std::vector<double> dist;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = i + 1; j < rows.size(); ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < X.cols; ++c) {
                const double diff = rows[i][c] - rows[j][c];
                s += diff * diff;
            }
            if (s > 0.0) dist.push_back(std::sqrt(s));
        }
    }
    if (dist.empty()) return 1.0;
    std::nth_element(dist.begin(), dist.begin() + dist.size() / 2, dist.end());
    return dist[dist.size() / 2];
}

// ---------------------------------------------------------------------------
// Graph builders (differentiable versions of the same formulas)
//
// Shapes are batch-major [B,D]. Priors enter as scalars or recorded
// constants; every sampler stores its noise as graph constants so that
// recompute() replays the identical draw.

/// eps ~ N(0,1) recorded as a constant; z = mu + sigma .* eps.
template <typename T>
typename Graph<T>::NodeId gaussian_sample_nodes(Graph<T>& g, typename Graph<T>::NodeId mu,
                                                typename Graph<T>::NodeId sigma,
                                                RngStream& rng) {
    const auto& shape = g.value(mu);
    TensorData<T> eps(shape.rows, shape.cols);
    for (auto& e : eps.v) e = static_cast<T>(rng.normal());
    return g.add(mu, g.mul(sigma, g.constant(std::move(eps))));
}

/// Per-element KL(N(mu,sigma) || N(0,1)) = -ln sigma + (sigma^2 + mu^2)/2 - 1/2,
/// summed per row -> [B,1].
template <typename T>
typename Graph<T>::NodeId gaussian_kl_std_rows(Graph<T>& g, typename Graph<T>::NodeId mu,
                                               typename Graph<T>::NodeId sigma) {
    auto var_plus_musq = g.add(g.square(sigma), g.square(mu));
    auto elem = g.add_scalar(g.sub(g.scale(var_plus_musq, T(0.5)), g.log(sigma)), T(-0.5));
    return g.row_sum(elem);
}

/// General same-shape Gaussian KL per row.
template <typename T>
typename Graph<T>::NodeId gaussian_kl_rows(Graph<T>& g, typename Graph<T>::NodeId mu_q,
                                           typename Graph<T>::NodeId sigma_q,
                                           typename Graph<T>::NodeId mu_p,
                                           typename Graph<T>::NodeId sigma_p) {
    auto dm = g.sub(mu_q, mu_p);
    auto ratio = g.mul(g.add(g.square(sigma_q), g.square(dm)),
                       g.scale(g.reciprocal(g.square(sigma_p)), T(0.5)));
    auto elem = g.add_scalar(g.add(g.sub(g.log(sigma_p), g.log(sigma_q)), ratio), T(-0.5));
    return g.row_sum(elem);
}

/// KL(Beta(aq,bq) || Beta(ap,bp)) per element with a fixed scalar prior,
/// summed per row -> [B,1].
template <typename T>
typename Graph<T>::NodeId beta_kl_rows(Graph<T>& g, typename Graph<T>::NodeId aq,
                                       typename Graph<T>::NodeId bq, double ap, double bp) {
    require(ap > 0.0 && bp > 0.0, "beta_kl_rows: prior parameters must be positive");
    auto sum_q = g.add(aq, bq);
    auto ln_b_q = g.sub(g.add(g.log_gamma(aq), g.log_gamma(bq)), g.log_gamma(sum_q));
    auto term_a = g.mul(g.add_scalar(aq, T(-ap)), g.digamma(aq));
    auto term_b = g.mul(g.add_scalar(bq, T(-bp)), g.digamma(bq));
    auto term_ab = g.mul(g.add_scalar(g.scale(sum_q, T(-1)), T(ap + bp)), g.digamma(sum_q));
    auto elem = g.add_scalar(g.add(g.add(g.scale(ln_b_q, T(-1)), term_a), g.add(term_b, term_ab)),
                             T(log_beta(ap, bp)));
    return g.row_sum(elem);
}

/// Relaxed gate b = sigmoid((logit(gamma) + logit(u)) / tau) with recorded
/// uniform noise (clamped to [1e-7, 1-1e-7] before the logit).
template <typename T>
typename Graph<T>::NodeId binary_concrete_nodes(Graph<T>& g, typename Graph<T>::NodeId gamma,
                                                double tau, RngStream& rng) {
    require(tau > 0.0, "binary_concrete_nodes: tau must be positive");
    const auto& shape = g.value(gamma);
    TensorData<T> u(shape.rows, shape.cols);
    for (auto& x : u.v) {
        double d = rng.uniform();
        d = std::min(1.0 - kConcreteNoiseClamp, std::max(kConcreteNoiseClamp, d));
        x = static_cast<T>(d);
    }
    auto u_node = g.constant(std::move(u));
    auto logit_g = g.sub(g.log(gamma), g.log(g.one_minus(gamma)));
    auto logit_u = g.sub(g.log(u_node), g.log(g.one_minus(u_node)));
    return g.sigmoid(g.scale(g.add(logit_g, logit_u), T(1.0 / tau)));
}

/// z = (1-b) .* (mu + sigma eps) + b .* (spike_std eta) with b from the
/// Binary Concrete relaxation; eps/eta recorded as constants.
template <typename T>
typename Graph<T>::NodeId spike_slab_sample_nodes(Graph<T>& g, typename Graph<T>::NodeId gamma,
                                                  typename Graph<T>::NodeId mu,
                                                  typename Graph<T>::NodeId sigma,
                                                  double spike_std, double tau, RngStream& rng) {
    require(spike_std > 0.0, "spike_slab_sample_nodes: spike_std must be positive");
    auto b = binary_concrete_nodes(g, gamma, tau, rng);
    auto slab = gaussian_sample_nodes(g, mu, sigma, rng);
    const auto& shape = g.value(mu);
    TensorData<T> eta(shape.rows, shape.cols);
    for (auto& e : eta.v) e = static_cast<T>(spike_std * rng.normal());
    auto spike = g.constant(std::move(eta));
    return g.add(g.mul(g.one_minus(b), slab), g.mul(b, spike));
}

/// Paired-decomposition KL against the standard-normal slab prior sharing the
/// same gate: row_sum((1-gamma) .* KL(N(mu,sigma) || N(0,1))).
template <typename T>
typename Graph<T>::NodeId spike_slab_kl_std_rows(Graph<T>& g, typename Graph<T>::NodeId gamma,
                                                 typename Graph<T>::NodeId mu,
                                                 typename Graph<T>::NodeId sigma) {
    auto var_plus_musq = g.add(g.square(sigma), g.square(mu));
    auto elem = g.add_scalar(g.sub(g.scale(var_plus_musq, T(0.5)), g.log(sigma)), T(-0.5));
    return g.row_sum(g.mul(g.one_minus(gamma), elem));
}

}  // namespace sllab
