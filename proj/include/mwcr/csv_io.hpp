#pragma once

#include "mwcr/data.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace mwcr {

inline constexpr const char* kInterceptName = "(Intercept)";

struct CsvColumns {
    std::string outcome;
    std::string cluster;
    std::vector<std::string> covariates;
    bool add_intercept = true;
};

/// Reads a long-format CSV (header row, one observation per row).
Dataset load_long_csv(const std::filesystem::path& path, const CsvColumns& columns);
Dataset read_long_csv(std::istream& in, const CsvColumns& columns);

/// Writes `data` with columns cluster, outcome, covariates... at full precision.
/// An intercept column, if flagged, is omitted so that reloading with
/// add_intercept=true reproduces the dataset.
void write_long_csv(std::ostream& out, const Dataset& data, const std::string& outcome_name = "y",
                    const std::string& cluster_name = "cluster");

/// Splits one CSV record; supports double-quoted fields.
std::vector<std::string> split_csv_record(const std::string& line);

}  // namespace mwcr
