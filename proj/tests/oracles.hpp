#pragma once

// Test-only reference computations. Nothing here calls into the engine's
// solvers; they exist to check it.

#include "mwcr/data.hpp"

#include <functional>
#include <random>
#include <vector>

namespace mwcr::testing {

/// Least squares by column-pivoted QR on the stacked rows.
inline VectorXd pooled_ols(const MatrixXd& x, const VectorXd& y) { return x.colPivHouseholderQr().solve(y); }

/// Random clustered dataset: intercept plus p-1 standard normal covariates,
/// random intercepts with sd tau, noise sd 1, cluster sizes in [m_lo, m_hi].
inline Dataset random_dataset(std::mt19937_64& rng, Index n, Index m_lo, Index m_hi, Index p, double tau = 1.0,
                              bool cluster_constant_x = false) {
    std::normal_distribution<double> z;
    std::uniform_int_distribution<Index> msize(m_lo, m_hi);
    std::vector<Observation<double>> rows;
    std::vector<std::string> names{"(Intercept)"};
    for (Index j = 1; j < p; ++j) names.push_back("x" + std::to_string(j));
    for (Index i = 0; i < n; ++i) {
        const Index m = msize(rng);
        const double b = tau * z(rng);
        VectorXd shared(p);
        for (Index j = 1; j < p; ++j) shared(j) = z(rng);
        for (Index r = 0; r < m; ++r) {
            Observation<double> o;
            o.cluster_id = "c" + std::to_string(i);
            o.covariates.resize(p);
            o.covariates(0) = 1.0;
            for (Index j = 1; j < p; ++j) o.covariates(j) = cluster_constant_x ? shared(j) : z(rng);
            o.outcome = 0.5 + b + o.covariates.tail(p - 1).sum() * 0.3 + z(rng);
            rows.push_back(std::move(o));
        }
    }
    return Dataset::from_observations(rows, names, true);
}

/// Balanced deterministic dataset built from trigonometric formulas, so an
/// external script can rebuild it exactly:
///   x_ij = sin(1 + 3i + j),  y_ij = 0.5 + 0.3 x_ij + cos(2i) + 0.8 sin(7i + 5j)
inline Dataset formula_dataset(Index n, Index m) {
    std::vector<Observation<double>> rows;
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < m; ++j) {
            const double x = std::sin(1.0 + 3.0 * double(i) + double(j));
            const double y = 0.5 + 0.3 * x + std::cos(2.0 * double(i)) + 0.8 * std::sin(7.0 * double(i) + 5.0 * double(j));
            rows.push_back({"c" + std::to_string(i), y, (VectorXd(2) << 1.0, x).finished()});
        }
    return Dataset::from_observations(rows, {"(Intercept)", "x"}, true);
}

/// Mean of per-combination OLS estimates over every way of picking one subset
/// per cluster, enumerated recursively. `fit` maps a subsampled (X, y) to beta.
inline VectorXd brute_force_emo(const Dataset& data, Index b,
                                const std::function<VectorXd(const MatrixXd&, const VectorXd&)>& fit,
                                Index* count = nullptr) {
    const auto& d = data.design();
    const Index n = data.n();
    std::vector<std::vector<std::vector<Index>>> choices(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
        const Index m = data.cluster_size(i);
        for (unsigned mask = 0; mask < (1u << m); ++mask) {
            if (__builtin_popcount(mask) != b) continue;
            std::vector<Index> pick;
            for (Index j = 0; j < m; ++j)
                if (mask & (1u << j)) pick.push_back(j);
            choices[static_cast<std::size_t>(i)].push_back(pick);
        }
    }
    VectorXd sum = VectorXd::Zero(data.p());
    Index total = 0;
    std::vector<Index> rows;
    std::function<void(Index)> recurse = [&](Index i) {
        if (i == n) {
            MatrixXd x(static_cast<Index>(rows.size()), data.p());
            VectorXd y(static_cast<Index>(rows.size()));
            for (std::size_t r = 0; r < rows.size(); ++r) {
                x.row(static_cast<Index>(r)) = d.x.row(rows[r]);
                y(static_cast<Index>(r)) = d.y(rows[r]);
            }
            sum += fit(x, y);
            ++total;
            return;
        }
        for (const auto& pick : choices[static_cast<std::size_t>(i)]) {
            for (Index j : pick) rows.push_back(d.offsets[static_cast<std::size_t>(i)] + j);
            recurse(i + 1);
            rows.resize(rows.size() - pick.size());
        }
    };
    recurse(0);
    if (count) *count = total;
    return sum / static_cast<double>(total);
}

/// Exchangeable moment estimate written out as explicit double loops.
inline double alpha_moment_oracle(const Dataset& data, const VectorXd& beta) {
    const auto& d = data.design();
    const VectorXd e = d.y - d.x * beta;
    const double n_obs = static_cast<double>(data.n_obs());
    const double p = static_cast<double>(data.p());
    double ss = 0;
    for (Index r = 0; r < e.size(); ++r) ss += e(r) * e(r);
    const double phi = ss / (n_obs - p);
    double cross = 0, pairs = 0;
    for (Index i = 0; i < data.n(); ++i) {
        const Index o = d.offsets[static_cast<std::size_t>(i)];
        const Index m = data.cluster_size(i);
        for (Index j = 0; j < m; ++j)
            for (Index k = j + 1; k < m; ++k) {
                cross += e(o + j) * e(o + k);
                pairs += 1;
            }
    }
    return cross / (phi * (pairs - p));
}

}  // namespace mwcr::testing
