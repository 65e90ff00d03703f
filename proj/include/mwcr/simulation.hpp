#pragma once

#include "mwcr/data.hpp"
#include "mwcr/outputation.hpp"
#include "mwcr/variance.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace mwcr {

/// Where the random-intercepts generator draws the covariate.
enum class CovariateMode {
    observation,  // X_ij ~ N(0,1) independently per observation
    cluster,      // X_i ~ N(0,1) shared by every observation of cluster i
};

/// Y_ij = beta0 + b_i + beta1 X + e_ij,  b_i ~ N(0, tau^2),  e_ij ~ N(0, sigma^2).
struct SimulationSpec {
    Index n = 200;
    Index m = 10;
    double beta0 = 0.0;
    double beta1 = 0.0;
    double tau = 1.0;
    double sigma = 1.0;
    CovariateMode covariate = CovariateMode::observation;

    std::vector<Index> b_values{1, 2, 3, 4, 5};
    Index outputations = 300;
    Index n_sims = 500;
    std::vector<double> alphas{0.05, 0.01};
    CorrelationKind corr = CorrelationKind::independence;
    std::vector<VarianceMethod> methods{VarianceMethod::moment, VarianceMethod::stabilized};
    bool bias_correction = false;
    std::uint64_t seed = 20240611;
    int workers = 0;

    double rho() const { return tau * tau / (sigma * sigma + tau * tau); }
    void validate() const;
};

/// Dataset for one replicate; depends only on (spec, replicate).
Dataset gen_random_intercepts(const SimulationSpec& spec, Index replicate);

struct RejectionRow {
    Index b = 0;
    VarianceMethod method = VarianceMethod::stabilized;
    double alpha = 0.05;
    Index rejections = 0;
    Index valid = 0;      // replicates entering the denominator
    Index discarded = 0;  // replicates dropped for a non-positive variance
    double rate = 0;
    double mcse = 0;
};

/// Mean and standard deviation over replicates of the slope's variance terms.
struct TrajectoryRow {
    Index m = 0;
    Index b = 0;
    Index outputations = 0;
    Index replicates = 0;
    double sigma_bar_mean = 0, sigma_bar_sd = 0;
    double s2_mean = 0, s2_sd = 0;
    double moment_mean = 0, moment_sd = 0;
    double stabilized_mean = 0, stabilized_sd = 0;
    double negative_fraction = 0;  // replicates with a non-positive moment variance
};

struct SimulationReport {
    std::string kind;  // "type1" or "alternative"
    SimulationSpec spec;
    std::vector<RejectionRow> rejections;
    std::vector<TrajectoryRow> trajectories;  // one per B
    Index failed_fits = 0;
};

/// Slope test results of one replicate for one B, per method.
struct ReplicateOutcome {
    double beta1 = 0;
    double sigma_bar = 0;
    double s2 = 0;
    std::vector<double> variance;  // aligned with spec.methods; NaN when unavailable
    Index failed_fits = 0;
};

/// outcomes[r][k] is replicate r at spec.b_values[k].
std::vector<std::vector<ReplicateOutcome>> simulate_outcomes(const SimulationSpec& spec);

SimulationReport summarize(const SimulationSpec& spec,
                           const std::vector<std::vector<ReplicateOutcome>>& outcomes,
                           std::string kind);

/// Null experiment. Requires beta1 == 0.
SimulationReport run_type1(const SimulationSpec& spec);

struct PowerPoint {
    double sigma = 1;
    double tau = 1;
};

struct PowerRow {
    double sigma = 0, tau = 0, rho = 0;
    Index b = 0;
    double critical_value = 0;       // calibrated on B = 1 (or nominal when calibration is off)
    double power = 0;                // at the critical value
    std::vector<double> nominal;     // power at each spec.alpha with the normal critical value
    double mcse = 0;
    Index valid = 0;
};

struct PowerReport {
    SimulationSpec spec;
    bool calibrated = true;
    double target_power = 0.25;
    std::vector<PowerRow> rows;
};

/// Alternative experiment over a (sigma, tau) grid using the stabilized variance.
/// With calibration, the critical value at each grid point is set so that B = 1
/// rejects in `target_power` of replicates, then reused for every B.
PowerReport run_power(const SimulationSpec& spec, const std::vector<PowerPoint>& grid,
                      bool calibrate = true, double target_power = 0.25);

/// Variance trajectory over cluster sizes: for each m and each M, the mean and
/// spread of Sigma_bar, S^2 and the two variance estimates of the slope.
std::vector<TrajectoryRow> run_variance_trajectory(const SimulationSpec& base, const std::vector<Index>& m_grid,
                                                   const std::vector<Index>& outputation_grid, Index b,
                                                   Index repeats);

}  // namespace mwcr
