#pragma once

// Special functions and numerical oracles. Everything here runs in 64-bit
// regardless of the training precision: these functions ground the
// closed-form and gradient claims made by the rest of the library, so they
// must out-precision the code they check.

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "sllab/errors.hpp"

namespace sllab {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kLnSqrt2Pi = 0.91893853320467274178;  // ln sqrt(2*pi)

/// ln Gamma(x) for x > 0 via the Lanczos approximation (g=7, 9 terms),
/// reflection below 0.5. Absolute error below 1e-10 on [1e-3, 1e3].
inline double log_gamma(double x) {
    if (!(x > 0.0)) throw contract_error("log_gamma: x must be positive");
    static const double c[9] = {
        0.99999999999980993,      676.5203681218851,     -1259.1392167224028,
        771.32342877765313,      -176.61502916214059,    12.507343278686905,
        -0.13857109526572012,    9.9843695780195716e-6,  1.5056327351493116e-7};
    if (x < 0.5) {
        // ln Gamma(x) = ln(pi / sin(pi x)) - ln Gamma(1 - x)
        return std::log(kPi / std::sin(kPi * x)) - log_gamma(1.0 - x);
    }
    const double z = x - 1.0;
    double a = c[0];
    for (int i = 1; i < 9; ++i) a += c[i] / (z + i);
    const double t = z + 7.5;
    return kLnSqrt2Pi + (z + 0.5) * std::log(t) - t + std::log(a);
}

/// psi(x) = d/dx ln Gamma(x), x > 0. Recurrence up to x >= 10, then the
/// Bernoulli asymptotic series. Absolute error below 1e-10 on [1e-3, 1e3].
inline double digamma(double x) {
    if (!(x > 0.0)) throw contract_error("digamma: x must be positive");
    double result = 0.0;
    while (x < 10.0) {
        result -= 1.0 / x;
        x += 1.0;
    }
    const double inv = 1.0 / x;
    const double inv2 = inv * inv;
    // ln x - 1/(2x) - sum B_{2k} / (2k x^{2k})
    double series = inv2 * (1.0 / 12.0 - inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0 -
                    inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0 - inv2 * 691.0 / 32760.0)))));
    return result + std::log(x) - 0.5 * inv - series;
}

/// psi'(x), x > 0. Same recurrence/asymptotic structure as digamma.
/// Needed as the derivative of digamma in the reverse-mode engine.
inline double trigamma(double x) {
    if (!(x > 0.0)) throw contract_error("trigamma: x must be positive");
    double result = 0.0;
    while (x < 10.0) {
        result += 1.0 / (x * x);
        x += 1.0;
    }
    const double inv = 1.0 / x;
    const double inv2 = inv * inv;
    // 1/x + 1/(2x^2) + sum B_{2k} / x^{2k+1}
    double series = inv * inv2 * (1.0 / 6.0 - inv2 * (1.0 / 30.0 - inv2 * (1.0 / 42.0 -
                    inv2 * (1.0 / 30.0 - inv2 * 5.0 / 66.0))));
    return result + inv + 0.5 * inv2 + series;
}

inline double log_beta(double a, double b) {
    if (!(a > 0.0) || !(b > 0.0)) throw contract_error("log_beta: a,b must be positive");
    return log_gamma(a) + log_gamma(b) - log_gamma(a + b);
}

namespace detail {

// Continued fraction for the incomplete beta function (Lentz's method).
inline double beta_cont_frac(double x, double a, double b) {
    constexpr int kMaxIter = 300;
    constexpr double kEps = 3e-16;
    constexpr double kTiny = 1e-300;
    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < kEps) return h;
    }
    throw numeric_error("reg_inc_beta: continued fraction did not converge");
}

}  // namespace detail

/// Regularized incomplete beta I_x(a,b), monotone nondecreasing in x.
inline double reg_inc_beta(double x, double a, double b) {
    if (!(a > 0.0) || !(b > 0.0)) throw contract_error("reg_inc_beta: a,b must be positive");
    if (!(x >= 0.0 && x <= 1.0)) throw contract_error("reg_inc_beta: x must be in [0,1]");
    if (x == 0.0) return 0.0;
    if (x == 1.0) return 1.0;
    const double ln_front = a * std::log(x) + b * std::log(1.0 - x) - log_beta(a, b);
    const double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) {
        return front * detail::beta_cont_frac(x, a, b) / a;
    }
    return 1.0 - front * detail::beta_cont_frac(1.0 - x, b, a) / b;
}

inline double beta_log_pdf(double z, double a, double b) {
    if (!(z > 0.0 && z < 1.0)) throw contract_error("beta_log_pdf: z must be in (0,1)");
    return (a - 1.0) * std::log(z) + (b - 1.0) * std::log(1.0 - z) - log_beta(a, b);
}

/// Inverse of reg_inc_beta in x: solves I_z(a,b) = p. Newton with a bisection
/// fallback; the bracket keeps z inside (0,1).
inline double inv_reg_inc_beta(double p, double a, double b) {
    if (!(p >= 0.0 && p <= 1.0)) throw contract_error("inv_reg_inc_beta: p must be in [0,1]");
    if (p == 0.0) return 0.0;
    if (p == 1.0) return 1.0;
    double lo = 0.0, hi = 1.0;
    double z = a / (a + b);  // start at the mean
    for (int it = 0; it < 200; ++it) {
        const double f = reg_inc_beta(z, a, b) - p;
        if (f > 0.0) hi = z; else lo = z;
        const double pdf = std::exp(beta_log_pdf(z, a, b));
        double step = pdf > 0.0 ? f / pdf : 0.0;
        double zn = z - step;
        if (!(zn > lo && zn < hi)) zn = 0.5 * (lo + hi);
        if (std::fabs(zn - z) < 1e-15 * (1.0 + std::fabs(z))) return zn;
        z = zn;
    }
    return z;
}

// ---------------------------------------------------------------------------
// Quadrature oracles

struct GridSpec {
    double lower = 0.0;
    double upper = 1.0;
    std::size_t points = 2;

    void validate() const {
        require(lower < upper, "GridSpec: lower must be < upper");
        require(points >= 2, "GridSpec: points must be >= 2");
    }
};

/// Integral of f over the grid: composite Simpson when the point count is
/// odd, trapezoid otherwise.
inline double integrate(const std::function<double(double)>& f, const GridSpec& grid) {
    grid.validate();
    const std::size_t n = grid.points;
    const double h = (grid.upper - grid.lower) / static_cast<double>(n - 1);
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = f(grid.lower + h * static_cast<double>(i));
        if (!std::isfinite(y[i])) throw numeric_error("integrate: non-finite value at grid point");
    }
    if (n % 2 == 1) {
        double s = y.front() + y.back();
        for (std::size_t i = 1; i + 1 < n; ++i) s += (i % 2 == 1 ? 4.0 : 2.0) * y[i];
        return s * h / 3.0;
    }
    double s = 0.5 * (y.front() + y.back());
    for (std::size_t i = 1; i + 1 < n; ++i) s += y[i];
    return s * h;
}

/// KL(p || q) by quadrature of exp(log_p) * (log_p - log_q) on the grid.
/// Points where p underflows to zero contribute nothing.
inline double numeric_kl(const std::function<double(double)>& log_p,
                         const std::function<double(double)>& log_q,
                         const GridSpec& grid) {
    auto integrand = [&](double x) {
        const double lp = log_p(x);
        const double p = std::exp(lp);
        if (p == 0.0) return 0.0;
        const double lq = log_q(x);
        if (!std::isfinite(lp) || !std::isfinite(lq)) {
            throw numeric_error("numeric_kl: non-finite log-density on grid");
        }
        return p * (lp - lq);
    };
    return integrate(integrand, grid);
}

// ---------------------------------------------------------------------------
// Finite differences

/// Central differences (f(x+h e_i) - f(x-h e_i)) / 2h per coordinate.
inline std::vector<double> finite_diff_grad(
    const std::function<double(const std::vector<double>&)>& f,
    std::vector<double> x, double h = 1e-5) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double xi = x[i];
        x[i] = xi + h;
        const double fp = f(x);
        x[i] = xi - h;
        const double fm = f(x);
        x[i] = xi;
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw numeric_error("finite_diff_grad: non-finite function value");
        }
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

struct GradCheckReport {
    std::vector<double> analytic;
    std::vector<double> numeric;
    double max_rel_error = 0.0;
};

/// Relative-error denominator floored at 1e-8 to avoid blowup at true zeros.
inline GradCheckReport grad_check_report(std::vector<double> analytic,
                                         std::vector<double> numeric) {
    require(analytic.size() == numeric.size(), "grad_check_report: length mismatch");
    constexpr double kFloor = 1e-8;
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric[i]), kFloor});
        worst = std::max(worst, std::fabs(analytic[i] - numeric[i]) / denom);
    }
    return GradCheckReport{std::move(analytic), std::move(numeric), worst};
}

}  // namespace sllab
