#pragma once

// Gradient certification: finite-difference checks over every graph
// primitive, the GRU cell, the samplers (whose recorded noise makes them
// deterministic on replay), and the full training objective.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "sllab/distributions.hpp"
#include "sllab/errors.hpp"
#include "sllab/graph.hpp"
#include "sllab/model.hpp"
#include "sllab/rng.hpp"
#include "sllab/tensor.hpp"

namespace sllab {

struct GradCheckCase {
    std::string name;
    double max_rel_error = 0.0;
    double threshold = 1e-3;
    bool pass = false;
};

namespace detail {

/// Relative error of analytic vs central-difference gradients for every
/// element of every listed node, re-running the recorded tape per probe.
inline double fd_max_rel(Graph<double>& g, NodeId loss, const std::vector<NodeId>& wrt,
                         double h) {
    g.backward(loss);
    double worst = 0.0;
    for (NodeId nid : wrt) {
        const TensorData<double> analytic = g.grad(nid);
        TensorData<double> probe = g.value(nid);
        for (std::size_t i = 0; i < probe.numel(); ++i) {
            const double x0 = probe.v[i];
            auto eval = [&](double x) {
                probe.v[i] = x;
                g.set_value(nid, probe);
                g.recompute();
                return g.value(loss).v[0];
            };
            const double numeric = (eval(x0 + h) - eval(x0 - h)) / (2.0 * h);
            probe.v[i] = x0;
            g.set_value(nid, probe);
            const double denom =
                std::max(std::max(std::abs(analytic.v[i]), std::abs(numeric)), 1e-8);
            worst = std::max(worst, std::abs(analytic.v[i] - numeric) / denom);
        }
    }
    g.recompute();
    return worst;
}

inline TensorData<double> random_tensor(RngStream& rng, std::size_t r, std::size_t c,
                                        double lo, double hi) {
    TensorData<double> t(r, c);
    for (auto& v : t.v) v = lo + (hi - lo) * rng.uniform();
    return t;
}

/// Values bounded away from zero on both sides, for kinked ops.
inline TensorData<double> random_signed_tensor(RngStream& rng, std::size_t r, std::size_t c) {
    TensorData<double> t(r, c);
    for (auto& v : t.v) {
        v = (0.3 + rng.uniform()) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    }
    return t;
}

}  // namespace detail

/// Finite-difference certification of the full training objective: recorded
/// noise makes the loss a smooth deterministic function of the parameters, so
/// central differences apply to every gradient, the implicit Beta-sampler
/// ones included. Central differences of a loss of magnitude |f| carry
/// ~eps*|f|/h of accumulated-rounding noise, so gradients below 1e-5*|f|
/// cannot be certified to 0.1% relative; those are held to absolute agreement
/// at 1e-7*max(1,|f|) instead.
inline GradCheckCase objective_grad_check(const ModelConfig& cfg, const ParameterStore& store,
                                          const std::vector<std::vector<int>>& sentences,
                                          double psi_t, double lambda_t, std::uint64_t seed,
                                          double h = 1e-4) {
    GradCheckCase out;
    out.name = std::string("objective/") + variant_name(cfg.variant);
    Graph<double> g;
    const GraphParams p = load_params(g, store, true);
    RngStream rng(seed, "step");
    const ObjectiveNodes nodes =
        build_objective(g, p, cfg, make_batch(sentences), rng, psi_t, lambda_t);
    g.backward(nodes.loss);
    const double f0 = std::abs(g.value(nodes.loss).v[0]);
    const double small = 1e-5 * std::max(1.0, f0);
    const double abs_tol = 1e-7 * std::max(1.0, f0);

    bool abs_ok = true;
    for (const auto& [name, t] : store.params) {
        const NodeId nid = p.at(name);
        const TensorData<double> analytic = g.grad(nid);
        TensorData<double> probe = t;
        for (std::size_t i = 0; i < t.numel(); ++i) {
            const double x0 = t.v[i];
            auto eval = [&](double x) {
                probe.v[i] = x;
                g.set_value(nid, probe);
                g.recompute();
                return g.value(nodes.loss).v[0];
            };
            const double numeric = (eval(x0 + h) - eval(x0 - h)) / (2.0 * h);
            probe.v[i] = x0;
            g.set_value(nid, probe);
            const double a = analytic.v[i];
            const double scale = std::max(std::abs(a), std::abs(numeric));
            if (scale < small) {
                abs_ok = abs_ok && std::abs(a - numeric) < abs_tol;
            } else {
                out.max_rel_error =
                    std::max(out.max_rel_error, std::abs(a - numeric) / scale);
            }
        }
    }
    g.recompute();
    out.pass = abs_ok && out.max_rel_error < out.threshold;
    return out;
}

/// The complete suite. Every case reports its worst relative error against a
/// 1e-3 threshold.
inline std::vector<GradCheckCase> run_gradient_suite(std::uint64_t seed = 0) {
    std::vector<GradCheckCase> cases;
    RngStream root(seed, "gradcheck");

    auto run = [&cases](const std::string& name,
                        const std::function<double()>& fd_error) {
        GradCheckCase c;
        c.name = name;
        c.max_rel_error = fd_error();
        c.pass = c.max_rel_error < c.threshold;
        cases.push_back(c);
    };
    // two differentiable inputs
    auto binary_case = [&root, &run](const std::string& name, std::size_t ar, std::size_t ac,
                                     std::size_t br, std::size_t bc, auto build) {
        run(name, [&root, ar, ac, br, bc, build]() {
            Graph<double> g;
            RngStream r = root.derive("case-" + std::to_string(ar * 31 + bc));
            const NodeId a = g.input(detail::random_signed_tensor(r, ar, ac));
            const NodeId b = g.input(detail::random_signed_tensor(r, br, bc));
            return detail::fd_max_rel(g, g.mean(build(g, a, b)), {a, b}, 1e-5);
        });
    };
    auto unary_case = [&root, &run](const std::string& name, double lo, double hi,
                                    auto build) {
        run(name, [&root, lo, hi, build]() {
            Graph<double> g;
            RngStream r = root.derive("unary-" + std::to_string(std::size_t(hi * 977)));
            const NodeId a = g.input(detail::random_tensor(r, 2, 3, lo, hi));
            return detail::fd_max_rel(g, g.mean(build(g, a)), {a}, 1e-5);
        });
    };

    using G = Graph<double>;
    binary_case("add", 2, 3, 2, 3, [](G& g, NodeId a, NodeId b) { return g.add(a, b); });
    binary_case("add/broadcast-row", 2, 3, 1, 3,
                [](G& g, NodeId a, NodeId b) { return g.add(a, b); });
    binary_case("add/broadcast-col", 2, 3, 2, 1,
                [](G& g, NodeId a, NodeId b) { return g.add(a, b); });
    binary_case("add/broadcast-scalar", 2, 3, 1, 1,
                [](G& g, NodeId a, NodeId b) { return g.add(a, b); });
    binary_case("mul", 2, 3, 2, 3, [](G& g, NodeId a, NodeId b) { return g.mul(a, b); });
    binary_case("mul/broadcast-row", 2, 3, 1, 3,
                [](G& g, NodeId a, NodeId b) { return g.mul(a, b); });
    binary_case("mul/broadcast-col", 2, 3, 2, 1,
                [](G& g, NodeId a, NodeId b) { return g.mul(a, b); });
    binary_case("matmul", 2, 3, 3, 2,
                [](G& g, NodeId a, NodeId b) { return g.matmul(a, b); });
    binary_case("concat_cols", 2, 3, 2, 2,
                [](G& g, NodeId a, NodeId b) { return g.concat_cols(a, b); });

    unary_case("slice_cols", -1.5, 1.5,
               [](G& g, NodeId a) { return g.slice_cols(a, 1, 3); });
    unary_case("sum", -1.5, 1.5, [](G& g, NodeId a) { return g.sum(a); });
    unary_case("mean", -1.5, 1.5, [](G& g, NodeId a) { return g.mean(a); });
    unary_case("row_sum", -1.5, 1.5, [](G& g, NodeId a) { return g.row_sum(a); });
    unary_case("exp", -1.0, 1.0, [](G& g, NodeId a) { return g.exp(a); });
    unary_case("log", 0.4, 2.5, [](G& g, NodeId a) { return g.log(a); });
    unary_case("sigmoid", -2.0, 2.0, [](G& g, NodeId a) { return g.sigmoid(a); });
    unary_case("tanh", -2.0, 2.0, [](G& g, NodeId a) { return g.tanh(a); });
    unary_case("softplus", -2.0, 2.0, [](G& g, NodeId a) { return g.softplus(a); });
    unary_case("log_gamma", 0.4, 3.0, [](G& g, NodeId a) { return g.log_gamma(a); });
    unary_case("digamma", 0.4, 3.0, [](G& g, NodeId a) { return g.digamma(a); });
    unary_case("softmax_row", -2.0, 2.0, [](G& g, NodeId a) { return g.softmax_row(a); });
    unary_case("softmax_xent", -2.0, 2.0,
               [](G& g, NodeId a) { return g.softmax_xent(a, {2, 0}); });

    // kinked ops: inputs bounded away from the kink
    run("abs", [&root]() {
        Graph<double> g;
        RngStream r = root.derive("abs");
        const NodeId a = g.input(detail::random_signed_tensor(r, 2, 3));
        return detail::fd_max_rel(g, g.mean(g.abs(a)), {a}, 1e-5);
    });
    run("leaky_relu", [&root]() {
        Graph<double> g;
        RngStream r = root.derive("leaky");
        const NodeId a = g.input(detail::random_signed_tensor(r, 2, 3));
        return detail::fd_max_rel(g, g.mean(g.leaky_relu(a, 0.01)), {a}, 1e-5);
    });
    run("embedding", [&root]() {
        Graph<double> g;
        RngStream r = root.derive("embed");
        const NodeId table = g.input(detail::random_signed_tensor(r, 5, 3));
        return detail::fd_max_rel(g, g.mean(g.embedding(table, {0, 3, 3, 1})), {table},
                                  1e-5);
    });

    // samplers: noise recorded on first execution, replayed under perturbation
    run("sampler/gaussian", [&root]() {
        Graph<double> g;
        RngStream r = root.derive("samp-gauss");
        const NodeId mu = g.input(detail::random_tensor(r, 2, 3, -1.0, 1.0));
        const NodeId sigma = g.input(detail::random_tensor(r, 2, 3, 0.5, 1.5));
        RngStream noise = root.derive("samp-gauss-noise");
        return detail::fd_max_rel(g, g.mean(gaussian_sample_nodes(g, mu, sigma, noise)),
                                  {mu, sigma}, 1e-5);
    });
    run("sampler/binary-concrete", [&root]() {
        Graph<double> g;
        RngStream r = root.derive("samp-conc");
        const NodeId gamma = g.input(detail::random_tensor(r, 2, 3, 0.1, 0.9));
        RngStream noise = root.derive("samp-conc-noise");
        return detail::fd_max_rel(g, g.mean(binary_concrete_nodes(g, gamma, 0.5, noise)),
                                  {gamma}, 1e-5);
    });
    run("sampler/beta-implicit", [&root]() {
        Graph<double> g;
        RngStream r = root.derive("samp-beta");
        const NodeId alpha = g.input(detail::random_tensor(r, 2, 3, 0.8, 3.0));
        const NodeId beta = g.input(detail::random_tensor(r, 2, 3, 0.8, 3.0));
        RngStream noise = root.derive("samp-beta-noise");
        return detail::fd_max_rel(g, g.mean(g.beta_sample(alpha, beta, noise)),
                                  {alpha, beta}, 1e-5);
    });
    run("sampler/spike-slab", [&root]() {
        Graph<double> g;
        RngStream r = root.derive("samp-ss");
        const NodeId gamma = g.input(detail::random_tensor(r, 2, 3, 0.1, 0.9));
        const NodeId mu = g.input(detail::random_tensor(r, 2, 3, -1.0, 1.0));
        const NodeId sigma = g.input(detail::random_tensor(r, 2, 3, 0.5, 1.5));
        RngStream noise = root.derive("samp-ss-noise");
        return detail::fd_max_rel(
            g, g.mean(spike_slab_sample_nodes(g, gamma, mu, sigma, 1e-2, 0.5, noise)),
            {gamma, mu, sigma}, 1e-5);
    });

    // recurrent cell, one and five steps
    for (std::size_t steps : {std::size_t(1), std::size_t(5)}) {
        run("gru/" + std::to_string(steps) + "-step", [&root, steps]() {
            constexpr std::size_t B = 2, E = 3, H = 4;
            Graph<double> g;
            RngStream r = root.derive("gru-" + std::to_string(steps));
            GruParams<double> p;
            std::vector<NodeId> wrt;
            auto mk = [&](std::size_t rows, std::size_t cols) {
                const NodeId id = g.input(detail::random_tensor(r, rows, cols, -0.5, 0.5));
                wrt.push_back(id);
                return id;
            };
            p.wr = mk(E, H);
            p.wz = mk(E, H);
            p.wn = mk(E, H);
            p.ur = mk(H, H);
            p.uz = mk(H, H);
            p.un = mk(H, H);
            p.br = mk(1, H);
            p.bz = mk(1, H);
            p.bn = mk(1, H);
            NodeId h = g.constant(TensorData<double>(B, H, 0.0));
            for (std::size_t t = 0; t < steps; ++t) {
                h = gru_cell(g, mk(B, E), h, p);
            }
            return detail::fd_max_rel(g, g.mean(h), wrt, 1e-5);
        });
    }

    // the full objective on a 3-token batch with a D=4 latent
    {
        ModelConfig cfg;
        cfg.variant = Variant::HSVAE;
        cfg.vocab_size = 9;
        cfg.latent_dim = 4;
        cfg.hidden_dim = 5;
        cfg.embed_dim = 3;
        cfg.prior_alpha = 2.0;
        cfg.prior_beta = 1.5;
        const ParameterStore store = init_params(cfg, seed + 101);
        cases.push_back(
            objective_grad_check(cfg, store, {{4, 5, 1}, {6, 7, 8, 1}}, 0.7, 0.9, seed + 3));
    }
    return cases;
}

}  // namespace sllab
