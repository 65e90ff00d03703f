#pragma once

// Variance of the multiple-outputation estimate beta_bar^M.
//
//   moment:     Sigma_bar - S^2
//   stabilized: Sigma_bar * c,  c = (1/n) sum_i B / m_i
//
// The stabilized form replaces S^2 by its expectation Sigma_bar (1 - c) under
// least squares, which follows from the hypergeometric law of the overlap of two
// independent B-subsets of an m-set.

#include "mwcr/accumulator.hpp"
#include "mwcr/normal.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mwcr {

enum class VarianceMethod { moment, stabilized, moment_bc, stabilized_bc };
enum class NegativeVariancePolicy { undefined, fallback_stabilized };

inline bool is_bias_corrected(VarianceMethod m) {
    return m == VarianceMethod::moment_bc || m == VarianceMethod::stabilized_bc;
}

inline const char* to_string(VarianceMethod m) {
    switch (m) {
        case VarianceMethod::moment: return "moment";
        case VarianceMethod::stabilized: return "stabilized";
        case VarianceMethod::moment_bc: return "moment-bc";
        case VarianceMethod::stabilized_bc: return "stabilized-bc";
    }
    return "?";
}

using Flags = Eigen::Array<bool, Eigen::Dynamic, 1>;

template <typename Scalar>
struct MomentVariance {
    Matrix<Scalar> var;
    Flags negative;  // diagonal <= 0
};

/// (1/n) sum_i B / m_i.
inline double shrink_factor(Index b, std::span<const Index> sizes) {
    if (sizes.empty()) throw DomainError("no clusters");
    double sum = 0;
    for (Index m : sizes) {
        if (b > m) throw DomainError("B exceeds a cluster size");
        sum += static_cast<double>(b) / static_cast<double>(m);
    }
    return sum / static_cast<double>(sizes.size());
}

template <typename Scalar>
MomentVariance<Scalar> moment_variance(const Matrix<Scalar>& sigma_bar, const Matrix<Scalar>& s2) {
    MomentVariance<Scalar> out{sigma_bar - s2, {}};
    out.negative = out.var.diagonal().array() <= Scalar(0);
    return out;
}

template <typename Scalar>
MomentVariance<Scalar> moment_variance(const OutputationAccumulator<Scalar>& acc, bool bias_corrected = false) {
    if (acc.count() < 2)
        throw InsufficientOutputationsError("moment variance needs at least two outputations, have " +
                                            std::to_string(acc.count()));
    if (bias_corrected && !acc.mean_sigma_bc())
        throw DomainError("accumulator holds no bias-corrected covariance");
    return moment_variance<Scalar>(bias_corrected ? *acc.mean_sigma_bc() : acc.mean_sigma(), acc.s2());
}

template <typename Scalar>
Matrix<Scalar> stabilized_variance(const OutputationAccumulator<Scalar>& acc, Index b,
                                   std::span<const Index> sizes, bool bias_corrected = false) {
    if (acc.count() < 1) throw InsufficientOutputationsError("accumulator is empty");
    if (bias_corrected && !acc.mean_sigma_bc())
        throw DomainError("accumulator holds no bias-corrected covariance");
    const Scalar c = Scalar(shrink_factor(b, sizes));
    return (bias_corrected ? *acc.mean_sigma_bc() : acc.mean_sigma()) * c;
}

/// Exact non-negative fraction num/den in lowest terms. Intermediate products
/// are formed in 128 bits and reduced before narrowing.
struct Fraction {
    std::uint64_t num = 0;
    std::uint64_t den = 1;

    using Wide = unsigned __int128;
    static Wide gcd_wide(Wide a, Wide b) {
        while (b != 0) {
            const Wide t = a % b;
            a = b;
            b = t;
        }
        return a;
    }
    static Fraction reduce(Wide n, Wide d) {
        if (d == 0) throw DomainError("fraction with zero denominator");
        const Wide g = gcd_wide(n, d);
        if (g == 0 || n == 0) return {0, 1};
        n /= g;
        d /= g;
        if (n > Wide(UINT64_MAX) || d > Wide(UINT64_MAX)) throw DomainError("fraction overflows 64 bits");
        return {static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(d)};
    }
    static Fraction make(std::uint64_t n, std::uint64_t d) { return reduce(n, d); }
    friend Fraction operator+(Fraction a, Fraction b) {
        return reduce(Wide(a.num) * b.den + Wide(b.num) * a.den, Wide(a.den) * b.den);
    }
    friend Fraction operator*(Fraction a, Fraction b) { return reduce(Wide(a.num) * b.num, Wide(a.den) * b.den); }
    friend bool operator==(const Fraction&, const Fraction&) = default;
    double value() const { return static_cast<double>(num) / static_cast<double>(den); }
};

/// C(n, k) in exact integer arithmetic; callers keep n small enough (n <= 60).
inline std::uint64_t binomial(std::uint64_t n, std::uint64_t k) {
    if (k > n) return 0;
    k = std::min(k, n - k);
    unsigned __int128 r = 1;
    for (std::uint64_t j = 1; j <= k; ++j) r = r * (n - k + j) / j;
    return static_cast<std::uint64_t>(r);
}

/// pr(|J_1 cap J_2| = overlap) for two independent uniform b-subsets of an m-set:
/// C(b, overlap) C(m - b, b - overlap) / C(m, b).
inline Fraction overlap_probability_exact(Index overlap, Index b, Index m) {
    if (overlap < 0 || b < 0 || overlap > b || b > m)
        throw DomainError("overlap probability needs 0 <= overlap <= B <= m");
    const auto ub = static_cast<std::uint64_t>(b);
    const auto um = static_cast<std::uint64_t>(m);
    const auto uo = static_cast<std::uint64_t>(overlap);
    return Fraction::make(binomial(ub, uo) * binomial(um - ub, ub - uo), binomial(um, ub));
}

inline double overlap_probability(Index overlap, Index b, Index m) {
    return overlap_probability_exact(overlap, b, m).value();
}

/// Smallest M with Pr(|Z^M - Z^inf| < delta) = gamma under the normal
/// approximation Var(beta_bar^M - beta_bar^inf) = S^2 / M, per coordinate:
///   M_j = ceil((z_{(1+gamma)/2} / delta)^2 * S2_jj / var_jj)
/// The maximum over coordinates is returned; zero when S^2 vanishes.
template <typename Scalar>
long long required_outputations(const Matrix<Scalar>& s2, const Matrix<Scalar>& variance,
                                double delta = 0.02, double gamma = 0.95) {
    if (!(delta > 0) || !(gamma > 0 && gamma < 1)) throw DomainError("need delta > 0 and 0 < gamma < 1");
    const double z = normal_quantile(0.5 * (1 + gamma));
    const double scale = (z / delta) * (z / delta);
    long long worst = 0;
    for (Index j = 0; j < s2.rows(); ++j) {
        const double s = static_cast<double>(s2(j, j));
        if (s == 0) continue;
        const double v = static_cast<double>(variance(j, j));
        if (!(v > 0))
            throw CannotAssessError("variance of coordinate " + std::to_string(j) + " is not positive", j);
        worst = std::max(worst, static_cast<long long>(std::ceil(scale * s / v)));
    }
    return worst;
}

template <typename Scalar>
long long required_outputations(const OutputationAccumulator<Scalar>& acc, std::span<const Index> sizes,
                                double delta = 0.02, double gamma = 0.95,
                                VarianceMethod method = VarianceMethod::stabilized) {
    const Matrix<Scalar> s2 = acc.s2();
    const bool bc = is_bias_corrected(method);
    const Matrix<Scalar> var = (method == VarianceMethod::moment || method == VarianceMethod::moment_bc)
                                   ? moment_variance(acc, bc).var
                                   : stabilized_variance(acc, acc.settings().b, sizes, bc);
    return required_outputations(s2, var, delta, gamma);
}

template <typename Scalar>
struct WaldResult {
    Vector<Scalar> z, p_value, ci_low, ci_high;
    Flags defined;
};

/// z_j = beta_j / sqrt(var_jj), two-sided normal p-value and CI. Coordinates
/// with non-positive variance come back undefined (NaN, defined = false).
template <typename Scalar>
WaldResult<Scalar> wald_inference(const Vector<Scalar>& beta, const Matrix<Scalar>& variance,
                                  double level = 0.95) {
    if (!(level > 0 && level < 1)) throw DomainError("confidence level must lie in (0, 1)");
    const Index p = beta.size();
    const Scalar nan = std::numeric_limits<Scalar>::quiet_NaN();
    const Scalar q = Scalar(normal_quantile(0.5 * (1 + level)));
    WaldResult<Scalar> out{Vector<Scalar>::Constant(p, nan), Vector<Scalar>::Constant(p, nan),
                           Vector<Scalar>::Constant(p, nan), Vector<Scalar>::Constant(p, nan),
                           Flags::Constant(p, false)};
    for (Index j = 0; j < p; ++j) {
        const Scalar v = variance(j, j);
        if (!(v > Scalar(0))) continue;
        const Scalar se = std::sqrt(v);
        out.z(j) = beta(j) / se;
        out.p_value(j) = Scalar(normal_two_sided_p(static_cast<double>(out.z(j))));
        out.ci_low(j) = beta(j) - q * se;
        out.ci_high(j) = beta(j) + q * se;
        out.defined(j) = true;
    }
    return out;
}

struct InferenceOptions {
    VarianceMethod method = VarianceMethod::stabilized;
    double level = 0.95;
    NegativeVariancePolicy negative_policy = NegativeVariancePolicy::undefined;
};

/// Final multiple-outputation estimate with both variance estimators.
template <typename Scalar>
struct MoInference {
    Index b = 0;
    Index m = 0;
    double shrink_factor = 1;
    Vector<Scalar> beta_bar;
    Matrix<Scalar> sigma_bar;
    Matrix<Scalar> s2;
    Matrix<Scalar> var_moment;
    Matrix<Scalar> var_stabilized;
    Flags moment_negative;
    std::optional<Matrix<Scalar>> sigma_bar_bc;
    std::optional<Matrix<Scalar>> var_moment_bc;
    std::optional<Matrix<Scalar>> var_stabilized_bc;
    std::optional<Flags> moment_bc_negative;

    VarianceMethod method = VarianceMethod::stabilized;
    WaldResult<Scalar> wald;
    Flags fell_back;  // coordinates where a negative moment variance was replaced

    const Matrix<Scalar>& variance(VarianceMethod which) const {
        switch (which) {
            case VarianceMethod::moment: return var_moment;
            case VarianceMethod::stabilized: return var_stabilized;
            case VarianceMethod::moment_bc:
                if (!var_moment_bc) throw DomainError("no bias-corrected variance was computed");
                return *var_moment_bc;
            case VarianceMethod::stabilized_bc:
                if (!var_stabilized_bc) throw DomainError("no bias-corrected variance was computed");
                return *var_stabilized_bc;
        }
        return var_stabilized;
    }
};

/// Assembles both variance estimators from an accumulator and runs Wald
/// inference with the selected one. `sizes` are the cluster sizes of the data
/// the outputations were drawn from.
template <typename Scalar>
MoInference<Scalar> infer(const OutputationAccumulator<Scalar>& acc, std::span<const Index> sizes,
                          const InferenceOptions& opts = {}) {
    MoInference<Scalar> out;
    out.b = acc.settings().b;
    out.m = acc.count();
    out.shrink_factor = shrink_factor(out.b, sizes);
    out.beta_bar = acc.mean_beta();
    out.sigma_bar = acc.mean_sigma();
    out.s2 = acc.s2();
    auto mv = moment_variance<Scalar>(out.sigma_bar, out.s2);
    out.var_moment = std::move(mv.var);
    out.moment_negative = std::move(mv.negative);
    out.var_stabilized = out.sigma_bar * Scalar(out.shrink_factor);
    if (acc.mean_sigma_bc()) {
        out.sigma_bar_bc = *acc.mean_sigma_bc();
        auto bc = moment_variance<Scalar>(*out.sigma_bar_bc, out.s2);
        out.var_moment_bc = std::move(bc.var);
        out.moment_bc_negative = std::move(bc.negative);
        out.var_stabilized_bc = *out.sigma_bar_bc * Scalar(out.shrink_factor);
    }
    out.method = opts.method;
    Matrix<Scalar> chosen = out.variance(opts.method);
    out.fell_back = Flags::Constant(out.beta_bar.size(), false);
    if (opts.negative_policy == NegativeVariancePolicy::fallback_stabilized &&
        (opts.method == VarianceMethod::moment || opts.method == VarianceMethod::moment_bc)) {
        const Matrix<Scalar>& stab = opts.method == VarianceMethod::moment ? out.var_stabilized
                                                                           : *out.var_stabilized_bc;
        for (Index j = 0; j < chosen.rows(); ++j) {
            if (chosen(j, j) > Scalar(0)) continue;
            chosen(j, j) = stab(j, j);
            out.fell_back(j) = true;
        }
    }
    out.wald = wald_inference<Scalar>(out.beta_bar, chosen, opts.level);
    return out;
}

}  // namespace mwcr
