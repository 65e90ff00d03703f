#pragma once

// Gaussian-identity GEE with independence or exchangeable working correlation.
//
// With identity link and constant variance function, D_i = X_i and
// V_i = phi * R_i(alpha). The dispersion phi cancels from the beta step, the
// sandwich A^-1 M A^-1 and the hat matrices, so everything below works with
// W_i = R_i(alpha)^-1 directly. For the exchangeable structure
//   R^-1 = (I - c 11^T) / (1 - alpha),  c = alpha / (1 + (m - 1) alpha),
// which keeps the per-cluster cost at O(m p^2) without forming m x m blocks.

#include "mwcr/data.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

namespace mwcr {

enum class CorrelationKind { independence, exchangeable };
enum class BiasCorrection { none, mancl_derouen };

struct GeeOptions {
    double tolerance = 1e-8;
    int max_iterations = 50;
};

template <typename Scalar>
struct GeeFit {
    Vector<Scalar> beta;
    Matrix<Scalar> sigma;
    std::optional<Matrix<Scalar>> sigma_bc;
    std::optional<Scalar> alpha_hat;
    Scalar phi_hat{};
    int iterations = 0;
    bool converged = false;

    bool alpha_clamped = false;
    bool alpha_forced_zero = false;
    int bc_fallbacks = 0;  // clusters where (I - H_ii) was too ill-conditioned to invert
};

/// Open interval of alpha keeping R(alpha) positive definite for clusters up to max_m.
template <typename Scalar>
std::pair<Scalar, Scalar> exchangeable_alpha_range(Index max_m) {
    const Scalar lower = max_m > 1 ? Scalar(-1) / Scalar(max_m - 1) : Scalar(-1);
    return {lower, Scalar(1)};
}

/// Explicit R(alpha)^-1 for one exchangeable cluster of size m.
template <typename Scalar>
Matrix<Scalar> exchangeable_inverse(Index m, Scalar alpha) {
    const Scalar c = alpha / (Scalar(1) + Scalar(m - 1) * alpha);
    Matrix<Scalar> w = -c * Matrix<Scalar>::Ones(m, m);
    w.diagonal().array() += Scalar(1);
    return w / (Scalar(1) - alpha);
}

namespace detail {

template <typename Scalar>
struct SpdSolver {
    Eigen::LLT<Matrix<Scalar>> llt;
    Eigen::LDLT<Matrix<Scalar>> ldlt;
    bool use_llt = true;

    void compute(const Matrix<Scalar>& a) {
        constexpr double min_rcond = 1e-13;
        llt.compute(a);
        use_llt = llt.info() == Eigen::Success && static_cast<double>(llt.rcond()) > min_rcond;
        if (use_llt) return;
        ldlt.compute(a);
        // LDLT pseudo-inverts zero pivots, so its rcond() can look healthy on an
        // exactly singular matrix; judge by the pivot spread instead.
        const auto pivots = ldlt.vectorD().cwiseAbs();
        const bool ok = ldlt.info() == Eigen::Success && ldlt.isPositive() && pivots.size() > 0 &&
                        static_cast<double>(pivots.minCoeff()) > min_rcond * static_cast<double>(pivots.maxCoeff());
        if (!ok) throw SingularDesignError("design matrix is rank deficient");
    }

    template <typename Rhs>
    Matrix<Scalar> solve(const Eigen::MatrixBase<Rhs>& b) const {
        return use_llt ? Matrix<Scalar>(llt.solve(b)) : Matrix<Scalar>(ldlt.solve(b));
    }
};

// Accumulates A = sum X'WX and b = sum X'Wy for a given alpha.
template <typename Scalar>
void normal_equations(const Design<Scalar>& d, Scalar alpha, Matrix<Scalar>& a, Vector<Scalar>& b) {
    const Index p = d.p();
    a.setZero(p, p);
    b.setZero(p);
    if (alpha == Scalar(0)) {
        a.template selfadjointView<Eigen::Lower>().rankUpdate(d.x.transpose());
        a = a.template selfadjointView<Eigen::Lower>();
        b.noalias() = d.x.transpose() * d.y;
        return;
    }
    const Scalar w = Scalar(1) / (Scalar(1) - alpha);
    Vector<Scalar> s(p);
    for (Index i = 0; i < d.n_clusters(); ++i) {
        const auto xi = d.cluster_x(i);
        const auto yi = d.cluster_y(i);
        const Index m = xi.rows();
        const Scalar c = alpha / (Scalar(1) + Scalar(m - 1) * alpha);
        s.noalias() = xi.colwise().sum().transpose();
        a.noalias() += w * (xi.transpose() * xi);
        a.noalias() -= (w * c) * (s * s.transpose());
        b.noalias() += w * (xi.transpose() * yi);
        b.noalias() -= (w * c * yi.sum()) * s;
    }
}

// Moment estimate of alpha from residuals e with dispersion phi.
template <typename Scalar>
Scalar exchangeable_moment(const Design<Scalar>& d, const Vector<Scalar>& e, Scalar phi,
                           bool& forced_zero) {
    Scalar cross = 0;
    double pairs = 0;
    for (Index i = 0; i < d.n_clusters(); ++i) {
        const auto ei = e.segment(d.offsets[i], d.cluster_size(i));
        const Scalar sum = ei.sum();
        cross += (sum * sum - ei.squaredNorm()) / Scalar(2);
        const double m = static_cast<double>(ei.size());
        pairs += m * (m - 1) / 2;
    }
    if (pairs == 0) return Scalar(0);
    const double denom = pairs - static_cast<double>(d.p());
    if (denom <= 0 || !(phi > Scalar(0))) {
        forced_zero = true;
        return Scalar(0);
    }
    return cross / (phi * Scalar(denom));
}

}  // namespace detail

/// Robust sandwich A^-1 [sum U_i U_i^T] A^-1 with U_i = X_i^T W_i e_i.
template <typename Scalar>
Matrix<Scalar> sandwich_covariance(const Design<Scalar>& d, const Vector<Scalar>& residuals,
                                   Scalar alpha, const Matrix<Scalar>& a_inv) {
    const Index p = d.p();
    Matrix<Scalar> meat = Matrix<Scalar>::Zero(p, p);
    if (alpha == Scalar(0)) {
        Vector<Scalar> u(p);
        for (Index i = 0; i < d.n_clusters(); ++i) {
            u.noalias() = d.cluster_x(i).transpose() * residuals.segment(d.offsets[i], d.cluster_size(i));
            meat.noalias() += u * u.transpose();
        }
    } else {
        const Scalar w = Scalar(1) / (Scalar(1) - alpha);
        Vector<Scalar> u(p);
        for (Index i = 0; i < d.n_clusters(); ++i) {
            const auto xi = d.cluster_x(i);
            const auto ei = residuals.segment(d.offsets[i], d.cluster_size(i));
            const Scalar c = alpha / (Scalar(1) + Scalar(xi.rows() - 1) * alpha);
            u.noalias() = xi.transpose() * ei;
            u.noalias() -= (c * ei.sum()) * xi.colwise().sum().transpose();
            u *= w;
            meat.noalias() += u * u.transpose();
        }
    }
    Matrix<Scalar> out = a_inv * meat * a_inv;
    symmetrize(out);
    return out;
}

/// Bias-corrected sandwich of Mancl and DeRouen: residuals inflated by
/// (I - H_ii)^-1 with H_ii = X_i A^-1 X_i^T W_i. Clusters where I - H_ii has
/// condition number above 1e12 keep their raw residuals and are counted in
/// `fallbacks`.
template <typename Scalar>
Matrix<Scalar> mancl_derouen_covariance(const Design<Scalar>& d, const Vector<Scalar>& residuals,
                                        Scalar alpha, const Matrix<Scalar>& a_inv,
                                        int* fallbacks = nullptr) {
    const Index p = d.p();
    Matrix<Scalar> meat = Matrix<Scalar>::Zero(p, p);
    Vector<Scalar> u(p);
    int failed = 0;
    for (Index i = 0; i < d.n_clusters(); ++i) {
        const auto xi = d.cluster_x(i);
        const Index m = xi.rows();
        const Vector<Scalar> ei = residuals.segment(d.offsets[i], m);
        const Matrix<Scalar> wi = alpha == Scalar(0) ? Matrix<Scalar>(Matrix<Scalar>::Identity(m, m))
                                                     : exchangeable_inverse<Scalar>(m, alpha);
        Matrix<Scalar> i_minus_h = -(xi * a_inv * xi.transpose() * wi);
        i_minus_h.diagonal().array() += Scalar(1);
        Eigen::PartialPivLU<Matrix<Scalar>> lu(i_minus_h);
        Vector<Scalar> adjusted;
        if (static_cast<double>(lu.rcond()) < 1e-12) {
            ++failed;
            adjusted = ei;
        } else {
            adjusted = lu.solve(ei);
        }
        u.noalias() = xi.transpose() * (wi * adjusted);
        meat.noalias() += u * u.transpose();
    }
    if (fallbacks) *fallbacks += failed;
    Matrix<Scalar> out = a_inv * meat * a_inv;
    symmetrize(out);
    return out;
}

/// Solves sum X_i^T V_i^-1 (Y_i - X_i beta) = 0. Independence is a single
/// pooled least-squares step; exchangeable alternates beta steps with moment
/// updates of phi and alpha until the relative beta change drops below tolerance.
template <typename Scalar>
GeeFit<Scalar> fit_gee(const Design<Scalar>& d, CorrelationKind kind,
                       BiasCorrection bias = BiasCorrection::none, const GeeOptions& opts = {}) {
    const Index n_obs = d.n_obs();
    const Index p = d.p();
    if (n_obs <= p)
        throw SingularDesignError("need more observations (" + std::to_string(n_obs) +
                                  ") than coefficients (" + std::to_string(p) + ")");

    GeeFit<Scalar> fit;
    Matrix<Scalar> a;
    Vector<Scalar> b;
    detail::SpdSolver<Scalar> solver;

    Scalar alpha = 0;
    detail::normal_equations(d, alpha, a, b);
    solver.compute(a);
    fit.beta = solver.solve(b);
    fit.iterations = 1;

    Vector<Scalar> e = d.y - d.x * fit.beta;
    auto dispersion = [&](const Vector<Scalar>& r) { return r.squaredNorm() / Scalar(n_obs - p); };

    if (kind == CorrelationKind::independence) {
        fit.converged = true;
    } else {
        const auto [lo, hi] = exchangeable_alpha_range<Scalar>(d.max_cluster_size());
        const Scalar margin = Scalar(1e-6);
        for (int it = 0; it < opts.max_iterations; ++it) {
            const Scalar phi = dispersion(e);
            bool forced = false;
            Scalar next_alpha = detail::exchangeable_moment(d, e, phi, forced);
            fit.alpha_forced_zero = forced;
            fit.alpha_clamped = false;
            if (next_alpha >= hi) {
                next_alpha = hi - margin;
                fit.alpha_clamped = true;
            } else if (next_alpha <= lo) {
                next_alpha = lo + margin;
                fit.alpha_clamped = true;
            }
            alpha = next_alpha;
            detail::normal_equations(d, alpha, a, b);
            solver.compute(a);
            Vector<Scalar> next = solver.solve(b);
            const Scalar step = (next - fit.beta).template lpNorm<Eigen::Infinity>();
            const Scalar scale = Scalar(1) + fit.beta.template lpNorm<Eigen::Infinity>();
            fit.beta = std::move(next);
            ++fit.iterations;
            e = d.y - d.x * fit.beta;
            if (static_cast<double>(step / scale) < opts.tolerance) {
                fit.converged = true;
                break;
            }
        }
        fit.alpha_hat = alpha;
    }

    fit.phi_hat = dispersion(e);
    const Matrix<Scalar> a_inv = solver.solve(Matrix<Scalar>::Identity(p, p));
    fit.sigma = sandwich_covariance(d, e, alpha, a_inv);
    if (bias == BiasCorrection::mancl_derouen)
        fit.sigma_bc = mancl_derouen_covariance(d, e, alpha, a_inv, &fit.bc_fallbacks);
    return fit;
}

template <typename Scalar>
GeeFit<Scalar> fit_gee(const ClusteredDataset<Scalar>& data, CorrelationKind kind,
                       BiasCorrection bias = BiasCorrection::none, const GeeOptions& opts = {}) {
    return fit_gee(data.design(), kind, bias, opts);
}

}  // namespace mwcr
