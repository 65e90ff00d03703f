#pragma once

#include "mwcr/csv_io.hpp"
#include "mwcr/screen.hpp"
#include "mwcr/simulation.hpp"
#include "mwcr/variance.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace mwcr {

struct AnalysisConfig {
    Index b = 2;
    Index outputations = 1000;
    CorrelationKind corr = CorrelationKind::independence;
    BiasCorrection bias = BiasCorrection::none;
    VarianceMethod method = VarianceMethod::stabilized;
    NegativeVariancePolicy negative_policy = NegativeVariancePolicy::undefined;
    double level = 0.95;
    double delta = 0.02;
    double gamma = 0.95;
    std::uint64_t seed = 1;
    int workers = 1;
    bool drop_small_clusters = false;

    void validate() const;
};

struct CoefficientRow {
    std::string name;
    double estimate = 0;
    double var_moment = 0;
    bool moment_negative = false;
    double var_stabilized = 0;
    std::optional<double> var_moment_bc;
    std::optional<double> var_stabilized_bc;
    std::optional<double> z, p, ci_low, ci_high;  // empty when the chosen variance is not positive
    bool fell_back = false;
};

struct BaselineRow {
    std::string name;
    double estimate = 0;
    double var_robust = 0;
    std::optional<double> var_bc;
};

struct AnalysisReport {
    AnalysisConfig config;
    Index n = 0;
    Index n_obs = 0;
    Index m_min = 0, m_max = 0;
    double m_mean = 0;
    Index absorbed = 0;
    Index failed_fits = 0;
    Index nonconverged_fits = 0;
    double shrink_factor = 1;
    std::optional<long long> required_outputations;
    std::vector<std::string> removed_clusters;
    std::vector<CoefficientRow> coefficients;

    std::vector<BaselineRow> baseline;
    std::optional<double> baseline_alpha;
    double baseline_phi = 0;
    int baseline_iterations = 0;
    bool baseline_converged = false;

    std::vector<std::string> warnings;
};

/// Multiple-outputation analysis plus a full-data GEE baseline. Validates
/// cluster sizes against B first (dropping or rejecting per the config).
AnalysisReport run_analysis(const Dataset& data, const AnalysisConfig& config);

nlohmann::json to_json(const AnalysisReport& report);
std::string to_csv(const AnalysisReport& report);
/// Human-readable summary, 3 significant digits in scientific notation.
std::string to_table(const AnalysisReport& report);

nlohmann::json to_json(const ScreenReport& report);
std::string to_csv(const ScreenReport& report);

nlohmann::json to_json(const SimulationSpec& spec);
SimulationSpec spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SimulationReport& report);
std::string to_csv(const std::vector<SimulationReport>& reports);
nlohmann::json to_json(const PowerReport& report);
std::string to_csv(const PowerReport& report);
nlohmann::json to_json(const std::vector<TrajectoryRow>& rows);
std::string to_csv(const std::vector<TrajectoryRow>& rows);

/// Shortest text that parses back to exactly `v`; "NA" for non-finite values.
std::string format_number(double v);

const char* to_string(CorrelationKind k);
const char* to_string(BiasCorrection b);
const char* to_string(NegativeVariancePolicy p);
CorrelationKind parse_correlation(const std::string& s);
BiasCorrection parse_bias_correction(const std::string& s);
VarianceMethod parse_variance_method(const std::string& s);
NegativeVariancePolicy parse_negative_policy(const std::string& s);

}  // namespace mwcr
