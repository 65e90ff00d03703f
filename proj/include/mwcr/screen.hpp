#pragma once

#include "mwcr/data.hpp"

#include <limits>
#include <string>
#include <vector>

namespace mwcr {

struct DroppedPredictor {
    std::string column;
    double max_abs_correlation;  // NaN for zero-variance columns
    bool zero_variance = false;
};

struct ScreenReport {
    double threshold = 0.5;
    std::vector<std::string> retained;
    std::vector<DroppedPredictor> dropped;
};

/// Pearson correlation matrix of the columns of x.
template <typename Derived>
Matrix<typename Derived::Scalar> correlation_matrix(const Eigen::MatrixBase<Derived>& x) {
    using Scalar = typename Derived::Scalar;
    const Matrix<Scalar> centered = x.rowwise() - x.colwise().mean();
    Matrix<Scalar> cov = centered.transpose() * centered;
    const Vector<Scalar> sd = cov.diagonal().cwiseSqrt();
    Matrix<Scalar> r = cov.array() / (sd * sd.transpose()).array();
    r.diagonal().setOnes();
    return r;
}

/// Backward elimination until no retained pair has |r| > threshold. Each step drops
/// the predictor with the largest mean |r| to the other remaining predictors, the
/// later column winning ties. Zero-variance predictors go first. The intercept is
/// never a candidate.
template <typename Scalar>
ScreenReport screen_predictors(const ClusteredDataset<Scalar>& data, double threshold = 0.5) {
    if (!(threshold > 0.0 && threshold <= 1.0))
        throw DomainError("screening threshold must lie in (0, 1]");
    const Index first = data.has_intercept() ? 1 : 0;
    if (data.p() - first < 1) throw DomainError("no non-intercept predictors to screen");

    const auto& x = data.design().x;
    const auto& names = data.covariate_names();
    ScreenReport report;
    report.threshold = threshold;

    std::vector<Index> remaining;
    for (Index j = first; j < data.p(); ++j) {
        const Scalar mean = x.col(j).mean();
        const Scalar ss = (x.col(j).array() - mean).square().sum();
        const Scalar scale = std::max<Scalar>(Scalar(1), x.col(j).cwiseAbs().maxCoeff());
        const Scalar eps = std::numeric_limits<Scalar>::epsilon();
        if (ss <= Scalar(x.rows()) * eps * eps * scale * scale)
            report.dropped.push_back({names[static_cast<std::size_t>(j)],
                                      std::numeric_limits<double>::quiet_NaN(), true});
        else
            remaining.push_back(j);
    }

    constexpr double tie_tol = 1e-12;
    while (remaining.size() > 1) {
        Matrix<Scalar> sub(x.rows(), static_cast<Index>(remaining.size()));
        for (std::size_t k = 0; k < remaining.size(); ++k)
            sub.col(static_cast<Index>(k)) = x.col(remaining[k]);
        Matrix<Scalar> r = correlation_matrix(sub).cwiseAbs();
        r.diagonal().setZero();
        if (static_cast<double>(r.maxCoeff()) <= threshold) break;

        const Index q = r.cols();
        Index worst = 0;
        double worst_mean = -1.0;
        for (Index k = 0; k < q; ++k) {
            const double mean_abs = static_cast<double>(r.col(k).sum()) / static_cast<double>(q - 1);
            if (mean_abs >= worst_mean - tie_tol) {
                worst = k;
                worst_mean = std::max(worst_mean, mean_abs);
            }
        }
        report.dropped.push_back({names[static_cast<std::size_t>(remaining[static_cast<std::size_t>(worst)])],
                                  static_cast<double>(r.col(worst).maxCoeff()), false});
        remaining.erase(remaining.begin() + worst);
    }

    if (first == 1) report.retained.push_back(names[0]);
    for (Index j : remaining) report.retained.push_back(names[static_cast<std::size_t>(j)]);
    return report;
}

}  // namespace mwcr
