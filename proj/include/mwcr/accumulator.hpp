#pragma once

#include "mwcr/gee.hpp"

#include <optional>

namespace mwcr {

struct AccumulatorSettings {
    Index p = 0;
    Index b = 1;
    CorrelationKind corr = CorrelationKind::independence;
    BiasCorrection bias = BiasCorrection::none;

    friend bool operator==(const AccumulatorSettings&, const AccumulatorSettings&) = default;
};

/// Streaming mean of beta and Sigma plus the centred comoment of beta across
/// outputations. Absorption is Welford's update; merge uses the pairwise
/// (Chan et al.) combination, so any split of a stream merges back to the
/// sequential result up to rounding.
template <typename Scalar>
class OutputationAccumulator {
public:
    OutputationAccumulator() = default;

    explicit OutputationAccumulator(const AccumulatorSettings& settings) : settings_(settings) {
        const Index p = settings.p;
        mean_beta_.setZero(p);
        comoment_.setZero(p, p);
        mean_sigma_.setZero(p, p);
        if (settings.bias == BiasCorrection::mancl_derouen) mean_sigma_bc_ = Matrix<Scalar>::Zero(p, p);
    }

    void absorb(const GeeFit<Scalar>& fit) {
        absorb(fit.beta, fit.sigma, fit.sigma_bc ? &*fit.sigma_bc : nullptr);
        if (!fit.converged) ++n_nonconverged_;
    }

    void absorb(const Vector<Scalar>& beta, const Matrix<Scalar>& sigma,
                const Matrix<Scalar>* sigma_bc = nullptr) {
        ++count_;
        const Scalar n = Scalar(count_);
        const Vector<Scalar> delta = beta - mean_beta_;
        mean_beta_ += delta / n;
        comoment_.noalias() += ((n - Scalar(1)) / n) * (delta * delta.transpose());
        mean_sigma_ += (sigma - mean_sigma_) / n;
        if (mean_sigma_bc_) {
            if (!sigma_bc) throw MergeError("accumulator expects a bias-corrected covariance");
            *mean_sigma_bc_ += (*sigma_bc - *mean_sigma_bc_) / n;
        }
    }

    void record_failure() { ++n_failed_; }

    OutputationAccumulator& merge(const OutputationAccumulator& other) {
        if (!(settings_ == other.settings_)) throw MergeError("accumulator settings differ");
        n_failed_ += other.n_failed_;
        n_nonconverged_ += other.n_nonconverged_;
        if (other.count_ == 0) return *this;
        if (count_ == 0) {
            count_ = other.count_;
            mean_beta_ = other.mean_beta_;
            comoment_ = other.comoment_;
            mean_sigma_ = other.mean_sigma_;
            mean_sigma_bc_ = other.mean_sigma_bc_;
            return *this;
        }
        const Scalar na = Scalar(count_);
        const Scalar nb = Scalar(other.count_);
        const Scalar n = na + nb;
        const Vector<Scalar> delta = other.mean_beta_ - mean_beta_;
        mean_beta_ += delta * (nb / n);
        comoment_ += other.comoment_;
        comoment_.noalias() += (na * nb / n) * (delta * delta.transpose());
        mean_sigma_ += (other.mean_sigma_ - mean_sigma_) * (nb / n);
        if (mean_sigma_bc_) *mean_sigma_bc_ += (*other.mean_sigma_bc_ - *mean_sigma_bc_) * (nb / n);
        count_ += other.count_;
        return *this;
    }

    const AccumulatorSettings& settings() const { return settings_; }
    Index count() const { return count_; }
    Index n_failed() const { return n_failed_; }
    Index n_nonconverged() const { return n_nonconverged_; }
    /// True when failed outputations exceed 1% of those attempted.
    bool failure_warning() const { return 100 * n_failed_ > count_ + n_failed_; }

    const Vector<Scalar>& mean_beta() const { return mean_beta_; }
    const Matrix<Scalar>& mean_sigma() const { return mean_sigma_; }
    const std::optional<Matrix<Scalar>>& mean_sigma_bc() const { return mean_sigma_bc_; }
    const Matrix<Scalar>& comoment() const { return comoment_; }

    /// Sample covariance of the absorbed betas, divisor count - 1.
    Matrix<Scalar> s2() const {
        if (count_ < 2) throw InsufficientOutputationsError("S^2 needs at least two outputations");
        return comoment_ / Scalar(count_ - 1);
    }

private:
    AccumulatorSettings settings_;
    Index count_ = 0;
    Index n_failed_ = 0;
    Index n_nonconverged_ = 0;
    Vector<Scalar> mean_beta_;
    Matrix<Scalar> comoment_;
    Matrix<Scalar> mean_sigma_;
    std::optional<Matrix<Scalar>> mean_sigma_bc_;
};

template <typename Scalar>
OutputationAccumulator<Scalar> merge(OutputationAccumulator<Scalar> a,
                                     const OutputationAccumulator<Scalar>& b) {
    a.merge(b);
    return a;
}

}  // namespace mwcr
