#pragma once

#include "mwcr/accumulator.hpp"
#include "mwcr/parallel.hpp"
#include "mwcr/sampling.hpp"

#include <cmath>
#include <functional>
#include <vector>

namespace mwcr {

struct EngineOptions {
    int workers = 1;                  // 0 = available parallelism
    Index chunk_size = 64;            // outputations per work item; fixed so results ignore `workers`
    GeeOptions gee;
};

/// Gathers the rows selected by `draw` into a balanced design with b rows per cluster.
template <typename Scalar>
void subsample(const Design<Scalar>& full, const IndexDraw& draw, Design<Scalar>& out) {
    const Index n = full.n_clusters();
    const Index b = draw.b;
    out.x.resize(n * b, full.p());
    out.y.resize(n * b);
    out.offsets.resize(static_cast<std::size_t>(n + 1));
    Index row = 0;
    for (Index i = 0; i < n; ++i) {
        out.offsets[static_cast<std::size_t>(i)] = row;
        const Index base = full.offsets[static_cast<std::size_t>(i)];
        for (Index j : draw.cluster(i)) {
            out.x.row(row) = full.x.row(base + j);
            out.y(row) = full.y(base + j);
            ++row;
        }
    }
    out.offsets[static_cast<std::size_t>(n)] = row;
}

/// Working correlation actually used for a plan: a single observation per
/// cluster leaves nothing to correlate.
inline CorrelationKind effective_correlation(Index b, CorrelationKind requested) {
    return b == 1 ? CorrelationKind::independence : requested;
}

/// Runs M outputations and aggregates them. Outputation k draws from streams
/// derived from (master_seed, k, attempt, cluster); a singular fit is retried once
/// with attempt = 1 and then recorded as failed. Work is split into fixed-size
/// chunks merged in chunk order, so the result is identical for any worker count.
template <typename Scalar>
OutputationAccumulator<Scalar> run_outputations(const Design<Scalar>& data, const OutputationPlan& plan,
                                                CorrelationKind corr, BiasCorrection bias,
                                                const EngineOptions& opts = {}) {
    if (plan.b < 1) throw DomainError("B must be at least 1");
    if (plan.m < 2) throw DomainError("M must be at least 2");
    if (plan.b > data.min_cluster_size())
        throw SizeViolationError("B=" + std::to_string(plan.b) + " exceeds the smallest cluster size " +
                                 std::to_string(data.min_cluster_size()));
    const CorrelationKind kind = effective_correlation(plan.b, corr);
    const AccumulatorSettings settings{data.p(), plan.b, kind, bias};
    const std::vector<Index> sizes = data.cluster_sizes();

    const Index chunk = std::max<Index>(1, opts.chunk_size);
    const auto n_chunks = static_cast<std::size_t>((plan.m + chunk - 1) / chunk);
    std::vector<OutputationAccumulator<Scalar>> partial(n_chunks, OutputationAccumulator<Scalar>(settings));

    parallel_for(n_chunks, opts.workers, [&](std::size_t c) {
        OutputationAccumulator<Scalar>& acc = partial[c];
        IndexDraw draw;
        std::vector<Index> scratch;
        Design<Scalar> sub;
        const Index begin = static_cast<Index>(c) * chunk;
        const Index end = std::min(plan.m, begin + chunk);
        for (Index k = begin; k < end; ++k) {
            bool absorbed = false;
            for (Index attempt = 0; attempt < 2 && !absorbed; ++attempt) {
                draw_indices(plan, k, sizes, draw, scratch, attempt);
                subsample(data, draw, sub);
                try {
                    acc.absorb(fit_gee(sub, kind, bias, opts.gee));
                    absorbed = true;
                } catch (const SingularDesignError&) {
                }
            }
            if (!absorbed) acc.record_failure();
        }
    });

    OutputationAccumulator<Scalar> total(settings);
    for (const auto& p : partial) total.merge(p);
    return total;
}

template <typename Scalar>
OutputationAccumulator<Scalar> run_outputations(const ClusteredDataset<Scalar>& data,
                                                const OutputationPlan& plan, CorrelationKind corr,
                                                BiasCorrection bias, const EngineOptions& opts = {}) {
    return run_outputations(data.design(), plan, corr, bias, opts);
}

/// Exact summary over every outputation, each weighted equally.
template <typename Scalar>
struct EmoSummary {
    Index combinations = 0;
    OutputationAccumulator<Scalar> acc;

    const Vector<Scalar>& beta_bar() const { return acc.mean_beta(); }
    const Matrix<Scalar>& sigma_bar() const { return acc.mean_sigma(); }
    /// Covariance of beta over the full population of outputations (divisor = count).
    Matrix<Scalar> s2_population() const { return acc.comoment() / Scalar(acc.count()); }
};

/// prod_i C(m_i, b) as a double.
inline double outputation_count(std::span<const Index> sizes, Index b) {
    double total = 1.0;
    for (Index m : sizes) {
        double c = 1.0;
        for (Index j = 0; j < b; ++j) c = c * static_cast<double>(m - j) / static_cast<double>(j + 1);
        total *= std::round(c);
    }
    return total;
}

/// All b-subsets of {0..m-1} in lexicographic order, flattened.
inline std::vector<Index> all_subsets(Index m, Index b) {
    std::vector<Index> out;
    std::vector<Index> cur(static_cast<std::size_t>(b));
    std::iota(cur.begin(), cur.end(), Index{0});
    for (;;) {
        out.insert(out.end(), cur.begin(), cur.end());
        Index j = b - 1;
        while (j >= 0 && cur[static_cast<std::size_t>(j)] == m - b + j) --j;
        if (j < 0) break;
        ++cur[static_cast<std::size_t>(j)];
        for (Index t = j + 1; t < b; ++t) cur[static_cast<std::size_t>(t)] = cur[static_cast<std::size_t>(t - 1)] + 1;
    }
    return out;
}

/// Enumerates every J combination in mixed-radix order (cluster 0 varies
/// slowest). Refuses when the count exceeds `cap`.
template <typename Scalar>
EmoSummary<Scalar> enumerate_all_outputations(const Design<Scalar>& data, Index b, CorrelationKind corr,
                                               BiasCorrection bias = BiasCorrection::none,
                                               double cap = 1e6, const GeeOptions& gee = {}) {
    if (b < 1) throw DomainError("B must be at least 1");
    const std::vector<Index> sizes = data.cluster_sizes();
    for (Index m : sizes)
        if (b > m) throw SizeViolationError("B exceeds a cluster size");
    const double count = outputation_count(sizes, b);
    if (count > cap)
        throw CapExceededError("exhaustive enumeration needs " + std::to_string(static_cast<long long>(count)) +
                                   " fits, above the cap",
                               count);

    const CorrelationKind kind = effective_correlation(b, corr);
    EmoSummary<Scalar> out{0, OutputationAccumulator<Scalar>({data.p(), b, kind, bias})};

    const Index n = data.n_clusters();
    std::vector<std::vector<Index>> subsets;
    std::vector<Index> radix;
    for (Index m : sizes) {
        subsets.push_back(all_subsets(m, b));
        radix.push_back(static_cast<Index>(subsets.back().size()) / b);
    }
    std::vector<Index> digit(static_cast<std::size_t>(n), 0);
    IndexDraw draw{b, std::vector<Index>(static_cast<std::size_t>(n * b))};
    Design<Scalar> sub;
    for (;;) {
        for (Index i = 0; i < n; ++i) {
            const auto& s = subsets[static_cast<std::size_t>(i)];
            std::copy_n(s.begin() + digit[static_cast<std::size_t>(i)] * b, b, draw.indices.begin() + i * b);
        }
        subsample(data, draw, sub);
        out.acc.absorb(fit_gee(sub, kind, bias, gee));
        ++out.combinations;
        Index i = n - 1;
        while (i >= 0 && ++digit[static_cast<std::size_t>(i)] == radix[static_cast<std::size_t>(i)]) {
            digit[static_cast<std::size_t>(i)] = 0;
            --i;
        }
        if (i < 0) break;
    }
    return out;
}

}  // namespace mwcr
