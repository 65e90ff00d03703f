#pragma once

#include "mwcr/random.hpp"
#include "mwcr/types.hpp"

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

namespace mwcr {

struct OutputationPlan {
    Index b = 1;             // observations drawn per cluster
    Index m = 2;             // number of outputations
    std::uint64_t master_seed = 0;
};

/// Per-cluster B-subsets of one outputation, stored row-major: cluster i owns
/// indices[i * b, (i + 1) * b), sorted ascending, 0-based within the cluster.
struct IndexDraw {
    Index b = 0;
    std::vector<Index> indices;

    Index n_clusters() const { return b == 0 ? 0 : static_cast<Index>(indices.size()) / b; }
    std::span<const Index> cluster(Index i) const {
        return {indices.data() + i * b, static_cast<std::size_t>(b)};
    }
    friend bool operator==(const IndexDraw&, const IndexDraw&) = default;
};

/// Stream key of one outputation attempt: SipHash of (k, attempt) under the master seed.
inline std::uint64_t outputation_seed(std::uint64_t master, Index k, Index attempt) {
    return derive_seed(master, {0x4A, static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(attempt)});
}

/// Per-cluster stream seed: the outputation key folded with the cluster index
/// through the SplitMix64 finalizer.
inline std::uint64_t cluster_stream_seed(std::uint64_t outputation_key, Index cluster) {
    std::uint64_t z = outputation_key ^ (static_cast<std::uint64_t>(cluster + 1) * 0xD1B54A32D192ED03ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Partial Fisher-Yates: first b entries of a shuffled 0..m-1, sorted. `scratch`
/// is reused across calls.
template <typename Rng>
void sample_without_replacement(Rng& rng, Index m, Index b, std::vector<Index>& scratch,
                                std::span<Index> out) {
    scratch.resize(static_cast<std::size_t>(m));
    std::iota(scratch.begin(), scratch.end(), Index{0});
    for (Index j = 0; j < b; ++j) {
        const auto r = j + static_cast<Index>(uniform_below(rng, static_cast<std::uint64_t>(m - j)));
        std::swap(scratch[static_cast<std::size_t>(j)], scratch[static_cast<std::size_t>(r)]);
    }
    std::copy_n(scratch.begin(), b, out.begin());
    std::sort(out.begin(), out.end());
}

/// Indices for outputation k. Depends only on (master_seed, k, attempt, sizes).
inline void draw_indices(const OutputationPlan& plan, Index k, std::span<const Index> sizes,
                         IndexDraw& draw, std::vector<Index>& scratch, Index attempt = 0) {
    const Index n = static_cast<Index>(sizes.size());
    draw.b = plan.b;
    draw.indices.resize(static_cast<std::size_t>(n * plan.b));
    const std::uint64_t key = outputation_seed(plan.master_seed, k, attempt);
    for (Index i = 0; i < n; ++i) {
        const Index mi = sizes[static_cast<std::size_t>(i)];
        if (plan.b > mi)
            throw SizeViolationError("cluster " + std::to_string(i) + " has " + std::to_string(mi) +
                                     " observations, fewer than B=" + std::to_string(plan.b));
        SplitMix64 rng(cluster_stream_seed(key, i));
        sample_without_replacement(rng, mi, plan.b, scratch,
                                   std::span<Index>(draw.indices.data() + i * plan.b,
                                                    static_cast<std::size_t>(plan.b)));
    }
}

inline IndexDraw draw_indices(const OutputationPlan& plan, Index k, std::span<const Index> sizes,
                              Index attempt = 0) {
    if (plan.b < 1) throw DomainError("B must be at least 1");
    if (k < 0 || k >= plan.m) throw DomainError("outputation index out of range");
    IndexDraw draw;
    std::vector<Index> scratch;
    draw_indices(plan, k, sizes, draw, scratch, attempt);
    return draw;
}

}  // namespace mwcr
