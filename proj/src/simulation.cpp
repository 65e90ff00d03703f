#include "mwcr/simulation.hpp"

#include "mwcr/parallel.hpp"
#include "mwcr/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mwcr {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct MeanSd {
    double mean = 0;
    double sd = 0;
};

MeanSd mean_sd(const std::vector<double>& v) {
    MeanSd out;
    if (v.empty()) return {kNaN, kNaN};
    double mean = 0, m2 = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double d = v[i] - mean;
        mean += d / static_cast<double>(i + 1);
        m2 += d * (v[i] - mean);
    }
    out.mean = mean;
    out.sd = v.size() > 1 ? std::sqrt(m2 / static_cast<double>(v.size() - 1)) : 0.0;
    return out;
}

double slope_variance(const MoInference<double>& inf, VarianceMethod method) {
    constexpr Index j = 1;
    switch (method) {
        case VarianceMethod::moment: return inf.var_moment(j, j);
        case VarianceMethod::stabilized: return inf.var_stabilized(j, j);
        case VarianceMethod::moment_bc: return inf.var_moment_bc ? (*inf.var_moment_bc)(j, j) : kNaN;
        case VarianceMethod::stabilized_bc:
            return inf.var_stabilized_bc ? (*inf.var_stabilized_bc)(j, j) : kNaN;
    }
    return kNaN;
}

}  // namespace

void SimulationSpec::validate() const {
    if (n < 2) throw DomainError("simulation needs n >= 2 clusters");
    if (m < 1) throw DomainError("simulation needs m >= 1");
    if (!(tau >= 0)) throw DomainError("tau must be non-negative");
    if (!(sigma > 0)) throw DomainError("sigma must be positive");
    if (b_values.empty()) throw DomainError("no B values");
    for (Index b : b_values)
        if (b < 1 || b > m) throw DomainError("every B must satisfy 1 <= B <= m");
    if (outputations < 2) throw DomainError("need at least two outputations");
    if (n_sims < 1) throw DomainError("need at least one replicate");
    for (double a : alphas)
        if (!(a > 0 && a <= 1)) throw DomainError("alpha levels must lie in (0, 1]");
    if (methods.empty()) throw DomainError("no variance methods");
    for (VarianceMethod v : methods)
        if (is_bias_corrected(v) && !bias_correction)
            throw DomainError("bias-corrected methods need bias_correction = true");
}

Dataset gen_random_intercepts(const SimulationSpec& spec, Index replicate) {
    spec.validate();
    SplitMix64 rng(derive_seed(spec.seed, {0xDA, static_cast<std::uint64_t>(replicate)}));
    Design<double> d;
    d.x.resize(spec.n * spec.m, 2);
    d.y.resize(spec.n * spec.m);
    d.offsets.assign(1, 0);
    std::vector<std::string> ids;
    Index row = 0;
    for (Index i = 0; i < spec.n; ++i) {
        const double intercept = spec.tau * standard_normal(rng);
        const double shared_x = standard_normal(rng);
        for (Index j = 0; j < spec.m; ++j) {
            const double x = spec.covariate == CovariateMode::cluster ? shared_x : standard_normal(rng);
            const double noise = spec.sigma * standard_normal(rng);
            d.x(row, 0) = 1.0;
            d.x(row, 1) = x;
            d.y(row) = spec.beta0 + intercept + spec.beta1 * x + noise;
            ++row;
        }
        d.offsets.push_back(row);
        ids.push_back("s" + std::to_string(i));
    }
    return Dataset(std::move(d), std::move(ids), {"(Intercept)", "x"}, true);
}

std::vector<std::vector<ReplicateOutcome>> simulate_outcomes(const SimulationSpec& spec) {
    spec.validate();
    const bool any_bc = spec.bias_correction;
    std::vector<std::vector<ReplicateOutcome>> out(static_cast<std::size_t>(spec.n_sims));
    parallel_for(out.size(), spec.workers, [&](std::size_t r) {
        const Dataset data = gen_random_intercepts(spec, static_cast<Index>(r));
        const std::vector<Index> sizes = data.cluster_sizes();
        auto& row = out[r];
        row.resize(spec.b_values.size());
        for (std::size_t k = 0; k < spec.b_values.size(); ++k) {
            const Index b = spec.b_values[k];
            OutputationPlan plan{b, spec.outputations,
                                 derive_seed(spec.seed, {0x0B, r, static_cast<std::uint64_t>(b)})};
            const auto acc = run_outputations(data, plan, spec.corr,
                                              any_bc ? BiasCorrection::mancl_derouen : BiasCorrection::none);
            ReplicateOutcome& o = row[k];
            o.failed_fits = acc.n_failed();
            o.variance.assign(spec.methods.size(), kNaN);
            if (acc.count() < 2) {
                o.beta1 = o.sigma_bar = o.s2 = kNaN;
                continue;
            }
            const auto inf = infer(acc, sizes);
            o.beta1 = inf.beta_bar(1);
            o.sigma_bar = inf.sigma_bar(1, 1);
            o.s2 = inf.s2(1, 1);
            for (std::size_t v = 0; v < spec.methods.size(); ++v)
                o.variance[v] = slope_variance(inf, spec.methods[v]);
        }
    });
    return out;
}

SimulationReport summarize(const SimulationSpec& spec,
                           const std::vector<std::vector<ReplicateOutcome>>& outcomes, std::string kind) {
    SimulationReport report;
    report.kind = std::move(kind);
    report.spec = spec;
    for (const auto& rep : outcomes)
        for (const auto& o : rep) report.failed_fits += o.failed_fits;

    for (std::size_t k = 0; k < spec.b_values.size(); ++k) {
        const Index b = spec.b_values[k];
        for (std::size_t v = 0; v < spec.methods.size(); ++v) {
            for (double alpha : spec.alphas) {
                RejectionRow row{b, spec.methods[v], alpha};
                for (const auto& rep : outcomes) {
                    const ReplicateOutcome& o = rep[k];
                    const double var = o.variance[v];
                    if (!(var > 0) || !std::isfinite(o.beta1)) {
                        ++row.discarded;
                        continue;
                    }
                    ++row.valid;
                    if (normal_two_sided_p(o.beta1 / std::sqrt(var)) <= alpha) ++row.rejections;
                }
                if (row.valid > 0) {
                    row.rate = static_cast<double>(row.rejections) / static_cast<double>(row.valid);
                    row.mcse = std::sqrt(row.rate * (1 - row.rate) / static_cast<double>(row.valid));
                } else {
                    row.rate = row.mcse = kNaN;
                }
                report.rejections.push_back(row);
            }
        }

        std::vector<double> sig, s2, mom, stab;
        Index negative = 0;
        const double c = static_cast<double>(b) / static_cast<double>(spec.m);
        for (const auto& rep : outcomes) {
            const ReplicateOutcome& o = rep[k];
            if (!std::isfinite(o.sigma_bar)) continue;
            sig.push_back(o.sigma_bar);
            s2.push_back(o.s2);
            mom.push_back(o.sigma_bar - o.s2);
            stab.push_back(o.sigma_bar * c);
            if (!(o.sigma_bar - o.s2 > 0)) ++negative;
        }
        TrajectoryRow t;
        t.m = spec.m;
        t.b = b;
        t.outputations = spec.outputations;
        t.replicates = static_cast<Index>(sig.size());
        auto a = mean_sd(sig), bb = mean_sd(s2), cc = mean_sd(mom), dd = mean_sd(stab);
        t.sigma_bar_mean = a.mean, t.sigma_bar_sd = a.sd;
        t.s2_mean = bb.mean, t.s2_sd = bb.sd;
        t.moment_mean = cc.mean, t.moment_sd = cc.sd;
        t.stabilized_mean = dd.mean, t.stabilized_sd = dd.sd;
        t.negative_fraction = sig.empty() ? kNaN : static_cast<double>(negative) / static_cast<double>(sig.size());
        report.trajectories.push_back(t);
    }
    return report;
}

SimulationReport run_type1(const SimulationSpec& spec) {
    if (spec.beta1 != 0.0) throw DomainError("type I error experiment needs beta1 = 0");
    return summarize(spec, simulate_outcomes(spec), "type1");
}

PowerReport run_power(const SimulationSpec& spec, const std::vector<PowerPoint>& grid, bool calibrate,
                      double target_power) {
    if (spec.beta1 == 0.0) throw DomainError("power experiment needs beta1 != 0");
    if (grid.empty()) throw DomainError("empty (sigma, tau) grid");
    if (calibrate && !(target_power > 0 && target_power < 1)) throw DomainError("target power must lie in (0, 1)");
    PowerReport report;
    report.spec = spec;
    report.calibrated = calibrate;
    report.target_power = target_power;

    SimulationSpec s = spec;
    s.methods = {VarianceMethod::stabilized};
    s.bias_correction = false;
    const auto reference = std::find(s.b_values.begin(), s.b_values.end(), Index{1});
    const std::size_t ref_k = reference == s.b_values.end() ? 0 : static_cast<std::size_t>(reference - s.b_values.begin());

    for (std::size_t g = 0; g < grid.size(); ++g) {
        s.sigma = grid[g].sigma;
        s.tau = grid[g].tau;
        s.seed = derive_seed(spec.seed, {0x90, g});
        const auto outcomes = simulate_outcomes(s);

        std::vector<std::vector<double>> abs_z(s.b_values.size());
        for (const auto& rep : outcomes)
            for (std::size_t k = 0; k < s.b_values.size(); ++k) {
                const double v = rep[k].variance[0];
                if (v > 0 && std::isfinite(rep[k].beta1)) abs_z[k].push_back(std::abs(rep[k].beta1) / std::sqrt(v));
            }

        double critical = normal_quantile(1 - s.alphas.front() / 2);
        if (calibrate && !abs_z[ref_k].empty()) {
            std::vector<double> sorted = abs_z[ref_k];
            std::sort(sorted.begin(), sorted.end());
            const auto n = static_cast<double>(sorted.size());
            const auto idx = static_cast<std::size_t>(std::max(0.0, std::ceil((1 - target_power) * n) - 1));
            critical = sorted[std::min(idx, sorted.size() - 1)];
        }

        for (std::size_t k = 0; k < s.b_values.size(); ++k) {
            PowerRow row;
            row.sigma = s.sigma;
            row.tau = s.tau;
            row.rho = s.rho();
            row.b = s.b_values[k];
            row.critical_value = critical;
            row.valid = static_cast<Index>(abs_z[k].size());
            const double nv = std::max<double>(1, static_cast<double>(row.valid));
            const auto count_above = [&](double c) {
                return static_cast<double>(std::count_if(abs_z[k].begin(), abs_z[k].end(), [c](double z) { return z > c; }));
            };
            row.power = count_above(critical) / nv;
            row.mcse = std::sqrt(row.power * (1 - row.power) / nv);
            for (double a : s.alphas) row.nominal.push_back(count_above(normal_quantile(1 - a / 2)) / nv);
            report.rows.push_back(std::move(row));
        }
    }
    return report;
}

std::vector<TrajectoryRow> run_variance_trajectory(const SimulationSpec& base, const std::vector<Index>& m_grid,
                                                   const std::vector<Index>& outputation_grid, Index b,
                                                   Index repeats) {
    if (m_grid.empty() || outputation_grid.empty()) throw DomainError("empty trajectory grid");
    if (repeats < 1) throw DomainError("need at least one repeat");
    const std::size_t n_m = m_grid.size();
    struct Cell {
        double sigma_bar = kNaN, s2 = kNaN, shrink = kNaN;
    };
    std::vector<Cell> cells(n_m * static_cast<std::size_t>(repeats) * outputation_grid.size());

    parallel_for(n_m * static_cast<std::size_t>(repeats), base.workers, [&](std::size_t job) {
        const std::size_t gi = job / static_cast<std::size_t>(repeats);
        const std::size_t r = job % static_cast<std::size_t>(repeats);
        SimulationSpec s = base;
        s.m = m_grid[gi];
        s.b_values = {b};
        s.seed = derive_seed(base.seed, {0x77, static_cast<std::uint64_t>(s.m)});
        const Dataset data = gen_random_intercepts(s, static_cast<Index>(r));
        const auto sizes = data.cluster_sizes();
        for (std::size_t mi = 0; mi < outputation_grid.size(); ++mi) {
            OutputationPlan plan{b, outputation_grid[mi],
                                 derive_seed(s.seed, {0x0C, r, static_cast<std::uint64_t>(outputation_grid[mi])})};
            const auto acc = run_outputations(data, plan, s.corr, BiasCorrection::none);
            Cell& c = cells[job * outputation_grid.size() + mi];
            if (acc.count() < 2) continue;
            c.sigma_bar = acc.mean_sigma()(1, 1);
            c.s2 = acc.s2()(1, 1);
            c.shrink = shrink_factor(b, sizes);
        }
    });

    std::vector<TrajectoryRow> rows;
    for (std::size_t gi = 0; gi < n_m; ++gi) {
        for (std::size_t mi = 0; mi < outputation_grid.size(); ++mi) {
            std::vector<double> sig, s2, mom, stab;
            Index negative = 0;
            for (Index r = 0; r < repeats; ++r) {
                const Cell& c = cells[(gi * static_cast<std::size_t>(repeats) + static_cast<std::size_t>(r)) *
                                          outputation_grid.size() + mi];
                if (!std::isfinite(c.sigma_bar)) continue;
                sig.push_back(c.sigma_bar);
                s2.push_back(c.s2);
                mom.push_back(c.sigma_bar - c.s2);
                stab.push_back(c.sigma_bar * c.shrink);
                if (!(c.sigma_bar - c.s2 > 0)) ++negative;
            }
            TrajectoryRow t;
            t.m = m_grid[gi];
            t.b = b;
            t.outputations = outputation_grid[mi];
            t.replicates = static_cast<Index>(sig.size());
            auto a = mean_sd(sig), bb = mean_sd(s2), cc = mean_sd(mom), dd = mean_sd(stab);
            t.sigma_bar_mean = a.mean, t.sigma_bar_sd = a.sd;
            t.s2_mean = bb.mean, t.s2_sd = bb.sd;
            t.moment_mean = cc.mean, t.moment_sd = cc.sd;
            t.stabilized_mean = dd.mean, t.stabilized_sd = dd.sd;
            t.negative_fraction =
                sig.empty() ? kNaN : static_cast<double>(negative) / static_cast<double>(sig.size());
            rows.push_back(t);
        }
    }
    return rows;
}

}  // namespace mwcr
