#pragma once

#include "mwcr/types.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace mwcr {

/// Stacked long-format design: rows of cluster i occupy [offsets[i], offsets[i+1]).
template <typename Scalar>
struct Design {
    Matrix<Scalar> x;
    Vector<Scalar> y;
    std::vector<Index> offsets{0};

    Index n_clusters() const { return static_cast<Index>(offsets.size()) - 1; }
    Index n_obs() const { return x.rows(); }
    Index p() const { return x.cols(); }
    Index cluster_size(Index i) const { return offsets[i + 1] - offsets[i]; }

    auto cluster_x(Index i) const { return x.middleRows(offsets[i], cluster_size(i)); }
    auto cluster_y(Index i) const { return y.segment(offsets[i], cluster_size(i)); }

    Index min_cluster_size() const {
        Index out = n_obs();
        for (Index i = 0; i < n_clusters(); ++i) out = std::min(out, cluster_size(i));
        return out;
    }
    Index max_cluster_size() const {
        Index out = 0;
        for (Index i = 0; i < n_clusters(); ++i) out = std::max(out, cluster_size(i));
        return out;
    }
    std::vector<Index> cluster_sizes() const {
        std::vector<Index> out(static_cast<std::size_t>(n_clusters()));
        for (Index i = 0; i < n_clusters(); ++i) out[static_cast<std::size_t>(i)] = cluster_size(i);
        return out;
    }
};

/// One row of long-format data.
template <typename Scalar>
struct Observation {
    std::string cluster_id;
    Scalar outcome{};
    Vector<Scalar> covariates;
};

/// Immutable clustered dataset. Clusters are kept in first-appearance order and
/// rows within a cluster keep their input order.
template <typename Scalar>
class ClusteredDataset {
public:
    ClusteredDataset() = default;

    ClusteredDataset(Design<Scalar> design, std::vector<std::string> cluster_ids,
                     std::vector<std::string> covariate_names, bool has_intercept)
        : design_(std::move(design)),
          cluster_ids_(std::move(cluster_ids)),
          covariate_names_(std::move(covariate_names)),
          has_intercept_(has_intercept) {
        check_invariants();
    }

    /// Groups observations by cluster id in first-appearance order.
    static ClusteredDataset from_observations(std::span<const Observation<Scalar>> rows,
                                              std::vector<std::string> covariate_names,
                                              bool has_intercept = false) {
        if (rows.empty()) throw EmptyDataError("dataset has no observations");
        const Index p = rows.front().covariates.size();
        std::vector<std::string> ids;
        std::unordered_map<std::string, std::size_t> slot;
        std::vector<std::vector<std::size_t>> members;
        for (std::size_t r = 0; r < rows.size(); ++r) {
            if (rows[r].covariates.size() != p)
                throw SchemaError("observation " + std::to_string(r) + " has covariate length " +
                                  std::to_string(rows[r].covariates.size()) + ", expected " +
                                  std::to_string(p));
            auto [it, inserted] = slot.try_emplace(rows[r].cluster_id, ids.size());
            if (inserted) {
                ids.push_back(rows[r].cluster_id);
                members.emplace_back();
            }
            members[it->second].push_back(r);
        }
        Design<Scalar> d;
        d.x.resize(static_cast<Index>(rows.size()), p);
        d.y.resize(static_cast<Index>(rows.size()));
        d.offsets.assign(1, 0);
        Index row = 0;
        for (const auto& cluster : members) {
            for (std::size_t r : cluster) {
                d.x.row(row) = rows[r].covariates.transpose();
                d.y(row) = rows[r].outcome;
                ++row;
            }
            d.offsets.push_back(row);
        }
        if (covariate_names.empty())
            for (Index j = 0; j < p; ++j) covariate_names.push_back("x" + std::to_string(j));
        return ClusteredDataset(std::move(d), std::move(ids), std::move(covariate_names),
                                has_intercept);
    }

    const Design<Scalar>& design() const { return design_; }
    const std::vector<std::string>& cluster_ids() const { return cluster_ids_; }
    const std::vector<std::string>& covariate_names() const { return covariate_names_; }
    bool has_intercept() const { return has_intercept_; }

    Index n() const { return design_.n_clusters(); }
    Index p() const { return design_.p(); }
    Index n_obs() const { return design_.n_obs(); }
    Index cluster_size(Index i) const { return design_.cluster_size(i); }
    std::vector<Index> cluster_sizes() const { return design_.cluster_sizes(); }

    /// Keeps the clusters whose indices are listed, in the listed order.
    ClusteredDataset select_clusters(std::span<const Index> keep) const {
        Design<Scalar> d;
        Index rows = 0;
        for (Index i : keep) rows += cluster_size(i);
        d.x.resize(rows, p());
        d.y.resize(rows);
        d.offsets.assign(1, 0);
        std::vector<std::string> ids;
        Index row = 0;
        for (Index i : keep) {
            const Index mi = cluster_size(i);
            d.x.middleRows(row, mi) = design_.cluster_x(i);
            d.y.segment(row, mi) = design_.cluster_y(i);
            row += mi;
            d.offsets.push_back(row);
            ids.push_back(cluster_ids_[static_cast<std::size_t>(i)]);
        }
        return ClusteredDataset(std::move(d), std::move(ids), covariate_names_, has_intercept_);
    }

    /// Keeps the covariate columns listed, in the listed order.
    ClusteredDataset select_covariates(std::span<const Index> cols) const {
        Design<Scalar> d;
        d.x.resize(n_obs(), static_cast<Index>(cols.size()));
        std::vector<std::string> names;
        bool intercept = false;
        for (std::size_t j = 0; j < cols.size(); ++j) {
            d.x.col(static_cast<Index>(j)) = design_.x.col(cols[j]);
            names.push_back(covariate_names_[static_cast<std::size_t>(cols[j])]);
            if (has_intercept_ && cols[j] == 0 && j == 0) intercept = true;
        }
        d.y = design_.y;
        d.offsets = design_.offsets;
        return ClusteredDataset(std::move(d), cluster_ids_, std::move(names), intercept);
    }

    friend bool operator==(const ClusteredDataset& a, const ClusteredDataset& b) {
        return a.cluster_ids_ == b.cluster_ids_ && a.covariate_names_ == b.covariate_names_ &&
               a.has_intercept_ == b.has_intercept_ && a.design_.offsets == b.design_.offsets &&
               a.design_.x == b.design_.x && a.design_.y == b.design_.y;
    }

private:
    void check_invariants() const {
        if (design_.n_clusters() < 1) throw EmptyDataError("dataset has no clusters");
        if (design_.y.size() != design_.x.rows())
            throw SchemaError("outcome length does not match covariate rows");
        if (design_.offsets.front() != 0 || design_.offsets.back() != design_.n_obs())
            throw SchemaError("cluster offsets do not cover the observations");
        for (Index i = 0; i < design_.n_clusters(); ++i)
            if (design_.cluster_size(i) < 1)
                throw SchemaError("cluster " + std::to_string(i) + " is empty");
        if (static_cast<Index>(cluster_ids_.size()) != design_.n_clusters())
            throw SchemaError("cluster id count does not match cluster count");
        if (static_cast<Index>(covariate_names_.size()) != design_.p())
            throw SchemaError("covariate name count does not match p");
        if (!design_.x.allFinite() || !design_.y.allFinite())
            throw SchemaError("dataset contains non-finite values");
    }

    Design<Scalar> design_;
    std::vector<std::string> cluster_ids_;
    std::vector<std::string> covariate_names_;
    bool has_intercept_ = false;
};

enum class SizePolicy { reject, drop };

template <typename Scalar>
struct SizeValidation {
    ClusteredDataset<Scalar> data;
    std::vector<std::string> removed;  // ids of dropped clusters
};

/// Enforces m_i >= b for every cluster, either rejecting or dropping offenders.
template <typename Scalar>
SizeValidation<Scalar> validate_min_cluster_size(const ClusteredDataset<Scalar>& data, Index b,
                                                 SizePolicy policy) {
    if (b < 1) throw DomainError("B must be at least 1");
    std::vector<Index> keep;
    std::vector<std::string> offenders;
    for (Index i = 0; i < data.n(); ++i) {
        if (data.cluster_size(i) >= b)
            keep.push_back(i);
        else
            offenders.push_back(data.cluster_ids()[static_cast<std::size_t>(i)] + " (m=" +
                                std::to_string(data.cluster_size(i)) + ")");
    }
    if (offenders.empty()) return {data, {}};
    if (policy == SizePolicy::reject) {
        std::string msg = "clusters smaller than B=" + std::to_string(b) + ":";
        for (const auto& o : offenders) msg += " " + o;
        throw SizeViolationError(msg);
    }
    if (keep.empty())
        throw EmptyDataError("no clusters left after dropping those smaller than B=" +
                             std::to_string(b));
    std::vector<std::string> removed;
    for (Index i = 0; i < data.n(); ++i)
        if (data.cluster_size(i) < b) removed.push_back(data.cluster_ids()[static_cast<std::size_t>(i)]);
    return {data.select_clusters(keep), std::move(removed)};
}

using Dataset = ClusteredDataset<double>;

}  // namespace mwcr
