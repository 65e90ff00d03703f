#include "mwcr/report.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace mwcr {

using nlohmann::json;

namespace {

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json number_or_null(const std::optional<double>& v) { return v ? number_or_null(*v) : json(nullptr); }

std::string cell(const std::optional<double>& v) { return v ? format_number(*v) : "NA"; }

std::string sci3(double v) {
    if (!std::isfinite(v)) return "--";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2E", v);
    return buf;
}

std::string sci3(const std::optional<double>& v) { return v ? sci3(*v) : "--"; }

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + '"';
}

const char* to_string(CovariateMode c) { return c == CovariateMode::cluster ? "cluster" : "observation"; }

}  // namespace

std::string format_number(double v) {
    if (!std::isfinite(v)) return "NA";
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

const char* to_string(CorrelationKind k) {
    return k == CorrelationKind::exchangeable ? "exchangeable" : "independence";
}
const char* to_string(BiasCorrection b) { return b == BiasCorrection::mancl_derouen ? "mancl-derouen" : "none"; }
const char* to_string(NegativeVariancePolicy p) {
    return p == NegativeVariancePolicy::fallback_stabilized ? "fallback-stabilized" : "undefined";
}

CorrelationKind parse_correlation(const std::string& s) {
    if (s == "independence") return CorrelationKind::independence;
    if (s == "exchangeable") return CorrelationKind::exchangeable;
    throw DomainError("unknown working correlation '" + s + "'");
}
BiasCorrection parse_bias_correction(const std::string& s) {
    if (s == "none") return BiasCorrection::none;
    if (s == "mancl-derouen") return BiasCorrection::mancl_derouen;
    throw DomainError("unknown bias correction '" + s + "'");
}
VarianceMethod parse_variance_method(const std::string& s) {
    for (VarianceMethod m : {VarianceMethod::moment, VarianceMethod::stabilized, VarianceMethod::moment_bc,
                             VarianceMethod::stabilized_bc})
        if (s == to_string(m)) return m;
    throw DomainError("unknown variance method '" + s + "'");
}
NegativeVariancePolicy parse_negative_policy(const std::string& s) {
    if (s == "undefined") return NegativeVariancePolicy::undefined;
    if (s == "fallback-stabilized") return NegativeVariancePolicy::fallback_stabilized;
    throw DomainError("unknown negative-variance policy '" + s + "'");
}

void AnalysisConfig::validate() const {
    if (b < 1) throw DomainError("B must be at least 1");
    if (outputations < 2) throw DomainError("M must be at least 2");
    if (!(level > 0 && level < 1)) throw DomainError("confidence level must lie in (0, 1)");
    if (is_bias_corrected(method) && bias != BiasCorrection::mancl_derouen)
        throw DomainError("a bias-corrected variance method needs --bias-correction mancl-derouen");
}

AnalysisReport run_analysis(const Dataset& input, const AnalysisConfig& config) {
    config.validate();
    AnalysisReport report;
    report.config = config;

    auto checked = validate_min_cluster_size(input, config.b,
                                             config.drop_small_clusters ? SizePolicy::drop : SizePolicy::reject);
    const Dataset& data = checked.data;
    report.removed_clusters = checked.removed;
    for (const auto& id : checked.removed) report.warnings.push_back("dropped cluster '" + id + "' (fewer than B observations)");

    const auto sizes = data.cluster_sizes();
    report.n = data.n();
    report.n_obs = data.n_obs();
    report.m_min = *std::min_element(sizes.begin(), sizes.end());
    report.m_max = *std::max_element(sizes.begin(), sizes.end());
    report.m_mean = static_cast<double>(data.n_obs()) / static_cast<double>(data.n());

    EngineOptions engine;
    engine.workers = config.workers;
    const OutputationPlan plan{config.b, config.outputations, config.seed};
    const auto acc = run_outputations(data, plan, config.corr, config.bias, engine);
    report.absorbed = acc.count();
    report.failed_fits = acc.n_failed();
    report.nonconverged_fits = acc.n_nonconverged();
    if (acc.count() < 2)
        throw NumericalError("fewer than two outputations produced a usable fit");
    if (acc.failure_warning())
        report.warnings.push_back(std::to_string(acc.n_failed()) + " of " + std::to_string(config.outputations) +
                                  " outputations failed (more than 1%)");
    if (acc.n_nonconverged() > 0)
        report.warnings.push_back(std::to_string(acc.n_nonconverged()) + " outputation fits did not converge");

    const auto inf = infer(acc, sizes, {config.method, config.level, config.negative_policy});
    report.shrink_factor = inf.shrink_factor;

    try {
        const bool bc = config.bias == BiasCorrection::mancl_derouen && is_bias_corrected(config.method);
        report.required_outputations = required_outputations(
            acc, sizes, config.delta, config.gamma, bc ? VarianceMethod::stabilized_bc : VarianceMethod::stabilized);
    } catch (const CannotAssessError& e) {
        report.warnings.push_back(std::string("required outputations: ") + e.what());
    }

    const auto& names = data.covariate_names();
    for (Index j = 0; j < data.p(); ++j) {
        CoefficientRow row;
        row.name = names[static_cast<std::size_t>(j)];
        row.estimate = inf.beta_bar(j);
        row.var_moment = inf.var_moment(j, j);
        row.moment_negative = inf.moment_negative(j);
        row.var_stabilized = inf.var_stabilized(j, j);
        if (inf.var_moment_bc) row.var_moment_bc = (*inf.var_moment_bc)(j, j);
        if (inf.var_stabilized_bc) row.var_stabilized_bc = (*inf.var_stabilized_bc)(j, j);
        if (inf.wald.defined(j)) {
            row.z = inf.wald.z(j);
            row.p = inf.wald.p_value(j);
            row.ci_low = inf.wald.ci_low(j);
            row.ci_high = inf.wald.ci_high(j);
        }
        row.fell_back = inf.fell_back(j);
        if (row.moment_negative)
            report.warnings.push_back("moment-based variance of '" + row.name + "' is not positive");
        if (inf.moment_bc_negative && (*inf.moment_bc_negative)(j))
            report.warnings.push_back("bias-corrected moment-based variance of '" + row.name + "' is not positive");
        if (row.fell_back)
            report.warnings.push_back("'" + row.name + "' used the stabilized variance in place of a negative moment variance");
        report.coefficients.push_back(std::move(row));
    }

    const auto base = fit_gee(data, config.corr, config.bias);
    for (Index j = 0; j < data.p(); ++j) {
        BaselineRow row{names[static_cast<std::size_t>(j)], base.beta(j), base.sigma(j, j), {}};
        if (base.sigma_bc) row.var_bc = (*base.sigma_bc)(j, j);
        report.baseline.push_back(std::move(row));
    }
    if (base.alpha_hat) report.baseline_alpha = static_cast<double>(*base.alpha_hat);
    report.baseline_phi = base.phi_hat;
    report.baseline_iterations = base.iterations;
    report.baseline_converged = base.converged;
    if (!base.converged) report.warnings.push_back("full-data GEE fit did not converge");
    return report;
}

json to_json(const AnalysisReport& r) {
    const AnalysisConfig& c = r.config;
    json meta = {
        {"B", c.b},
        {"M", c.outputations},
        {"seed", c.seed},
        {"n", r.n},
        {"n_obs", r.n_obs},
        {"m_min", r.m_min},
        {"m_max", r.m_max},
        {"m_mean", r.m_mean},
        {"corr", to_string(c.corr)},
        {"bias_correction", to_string(c.bias)},
        {"variance_method", to_string(c.method)},
        {"neg_var", to_string(c.negative_policy)},
        {"level", c.level},
        {"shrink_factor", r.shrink_factor},
        {"absorbed", r.absorbed},
        {"failed_fits", r.failed_fits},
        {"nonconverged_fits", r.nonconverged_fits},
        {"required_outputations", r.required_outputations ? json(*r.required_outputations) : json(nullptr)},
        {"required_outputations_delta", c.delta},
        {"required_outputations_gamma", c.gamma},
        {"removed_clusters", r.removed_clusters},
    };
    json coefficients = json::array();
    for (const auto& row : r.coefficients) {
        coefficients.push_back({
            {"name", row.name},
            {"estimate", row.estimate},
            {"var_moment", number_or_null(row.var_moment)},
            {"moment_negative", row.moment_negative},
            {"var_stabilized", number_or_null(row.var_stabilized)},
            {"var_moment_bc", number_or_null(row.var_moment_bc)},
            {"var_stabilized_bc", number_or_null(row.var_stabilized_bc)},
            {"z", number_or_null(row.z)},
            {"p", number_or_null(row.p)},
            {"ci", row.ci_low ? json::array({*row.ci_low, *row.ci_high}) : json(nullptr)},
            {"fell_back_to_stabilized", row.fell_back},
        });
    }
    json baseline = json::array();
    for (const auto& row : r.baseline)
        baseline.push_back({{"name", row.name},
                            {"estimate", row.estimate},
                            {"var_robust", number_or_null(row.var_robust)},
                            {"var_bc", number_or_null(row.var_bc)}});
    json diagnostics = {
        {"warnings", r.warnings},
        {"gee_baseline",
         {{"coefficients", baseline},
          {"alpha_hat", number_or_null(r.baseline_alpha)},
          {"phi_hat", r.baseline_phi},
          {"iterations", r.baseline_iterations},
          {"converged", r.baseline_converged}}},
    };
    return {{"meta", meta}, {"coefficients", coefficients}, {"diagnostics", diagnostics}};
}

std::string to_csv(const AnalysisReport& r) {
    std::ostringstream out;
    out << "row,name,estimate,var_moment,moment_negative,var_stabilized,var_moment_bc,var_stabilized_bc,"
           "var_robust,var_robust_bc,z,p,ci_low,ci_high\n";
    for (const auto& c : r.coefficients) {
        out << "MO-" << r.config.b << ',' << csv_field(c.name) << ',' << format_number(c.estimate) << ','
            << format_number(c.var_moment) << ',' << (c.moment_negative ? "true" : "false") << ','
            << format_number(c.var_stabilized) << ',' << cell(c.var_moment_bc) << ',' << cell(c.var_stabilized_bc)
            << ",NA,NA," << cell(c.z) << ',' << cell(c.p) << ',' << cell(c.ci_low) << ',' << cell(c.ci_high)
            << '\n';
    }
    for (const auto& b : r.baseline) {
        out << "GEE," << csv_field(b.name) << ',' << format_number(b.estimate) << ",NA,NA,NA,NA,NA,"
            << format_number(b.var_robust) << ',' << cell(b.var_bc) << ",NA,NA,NA,NA\n";
    }
    return out.str();
}

std::string to_table(const AnalysisReport& r) {
    std::ostringstream out;
    const bool bc = r.config.bias == BiasCorrection::mancl_derouen;
    char line[256];
    std::snprintf(line, sizeof line, "MO-%lld  M=%lld  n=%lld  m=[%lld,%lld]  corr=%s  method=%s\n",
                  static_cast<long long>(r.config.b), static_cast<long long>(r.config.outputations),
                  static_cast<long long>(r.n), static_cast<long long>(r.m_min), static_cast<long long>(r.m_max),
                  to_string(r.config.corr), to_string(r.config.method));
    out << line;
    std::snprintf(line, sizeof line, "%-16s %10s %10s %10s", "", "estimate", "var_mom", "var_stab");
    out << line;
    if (bc) {
        std::snprintf(line, sizeof line, " %10s %10s", "var_mom_bc", "var_stab_bc");
        out << line;
    }
    std::snprintf(line, sizeof line, " %10s %10s\n", "z", "p");
    out << line;
    for (const auto& c : r.coefficients) {
        std::snprintf(line, sizeof line, "%-16s %10s %10s %10s", c.name.substr(0, 16).c_str(), sci3(c.estimate).c_str(),
                      (sci3(c.var_moment) + (c.moment_negative ? "*" : "")).c_str(), sci3(c.var_stabilized).c_str());
        out << line;
        if (bc) {
            std::snprintf(line, sizeof line, " %10s %10s", sci3(c.var_moment_bc).c_str(), sci3(c.var_stabilized_bc).c_str());
            out << line;
        }
        std::snprintf(line, sizeof line, " %10s %10s\n", sci3(c.z).c_str(), sci3(c.p).c_str());
        out << line;
    }
    out << "GEE (full data)\n";
    for (const auto& b : r.baseline) {
        std::snprintf(line, sizeof line, "%-16s %10s %10s", b.name.substr(0, 16).c_str(), sci3(b.estimate).c_str(),
                      sci3(b.var_robust).c_str());
        out << line;
        if (bc) {
            std::snprintf(line, sizeof line, " %10s", sci3(b.var_bc).c_str());
            out << line;
        }
        out << '\n';
    }
    if (r.required_outputations) out << "required outputations (delta=" << r.config.delta << "): " << *r.required_outputations << '\n';
    for (const auto& w : r.warnings) out << "warning: " << w << '\n';
    return out.str();
}

json to_json(const ScreenReport& r) {
    json dropped = json::array();
    for (const auto& d : r.dropped)
        dropped.push_back({{"column", d.column},
                           {"max_abs_correlation", number_or_null(d.max_abs_correlation)},
                           {"reason", d.zero_variance ? "zero_variance" : "correlation"}});
    return {{"threshold", r.threshold}, {"retained", r.retained}, {"dropped", dropped}};
}

std::string to_csv(const ScreenReport& r) {
    std::ostringstream out;
    out << "column,status,max_abs_correlation,reason\n";
    for (const auto& c : r.retained) out << csv_field(c) << ",retained,NA,\n";
    for (const auto& d : r.dropped)
        out << csv_field(d.column) << ",dropped," << format_number(d.max_abs_correlation) << ','
            << (d.zero_variance ? "zero_variance" : "correlation") << '\n';
    return out.str();
}

json to_json(const SimulationSpec& s) {
    json methods = json::array();
    for (auto m : s.methods) methods.push_back(to_string(m));
    return {{"n", s.n},
            {"m", s.m},
            {"beta0", s.beta0},
            {"beta1", s.beta1},
            {"tau", s.tau},
            {"sigma", s.sigma},
            {"rho", s.rho()},
            {"covariate", to_string(s.covariate)},
            {"b_values", s.b_values},
            {"outputations", s.outputations},
            {"n_sims", s.n_sims},
            {"alphas", s.alphas},
            {"corr", to_string(s.corr)},
            {"methods", methods},
            {"bias_correction", s.bias_correction},
            {"seed", s.seed}};
}

SimulationSpec spec_from_json(const json& j) {
    SimulationSpec s;
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) j.at(key).get_to(field);
    };
    get("n", s.n);
    get("m", s.m);
    get("beta0", s.beta0);
    get("beta1", s.beta1);
    get("tau", s.tau);
    get("sigma", s.sigma);
    get("b_values", s.b_values);
    get("outputations", s.outputations);
    get("n_sims", s.n_sims);
    get("alphas", s.alphas);
    get("bias_correction", s.bias_correction);
    get("seed", s.seed);
    if (j.contains("covariate")) {
        const auto c = j.at("covariate").get<std::string>();
        if (c == "cluster")
            s.covariate = CovariateMode::cluster;
        else if (c == "observation")
            s.covariate = CovariateMode::observation;
        else
            throw DomainError("unknown covariate mode '" + c + "'");
    }
    if (j.contains("corr")) s.corr = parse_correlation(j.at("corr").get<std::string>());
    if (j.contains("methods")) {
        s.methods.clear();
        for (const auto& m : j.at("methods")) s.methods.push_back(parse_variance_method(m.get<std::string>()));
    }
    s.validate();
    return s;
}

json to_json(const SimulationReport& r) {
    json rows = json::array();
    for (const auto& x : r.rejections)
        rows.push_back({{"B", x.b},
                        {"method", to_string(x.method)},
                        {"alpha", x.alpha},
                        {"rejections", x.rejections},
                        {"valid", x.valid},
                        {"discarded", x.discarded},
                        {"rate", number_or_null(x.rate)},
                        {"mcse", number_or_null(x.mcse)}});
    return {{"kind", r.kind},
            {"spec", to_json(r.spec)},
            {"rejections", rows},
            {"trajectories", to_json(r.trajectories)},
            {"failed_fits", r.failed_fits}};
}

std::string to_csv(const std::vector<SimulationReport>& reports) {
    std::ostringstream out;
    out << "kind,n,m,rho,B,method,alpha,rejections,valid,discarded,rate,mcse\n";
    for (const auto& r : reports)
        for (const auto& x : r.rejections)
            out << r.kind << ',' << r.spec.n << ',' << r.spec.m << ',' << format_number(r.spec.rho()) << ',' << x.b
                << ',' << to_string(x.method) << ',' << format_number(x.alpha) << ',' << x.rejections << ','
                << x.valid << ',' << x.discarded << ',' << format_number(x.rate) << ',' << format_number(x.mcse)
                << '\n';
    return out.str();
}

json to_json(const PowerReport& r) {
    json rows = json::array();
    for (const auto& x : r.rows)
        rows.push_back({{"sigma", x.sigma},
                        {"tau", x.tau},
                        {"rho", x.rho},
                        {"B", x.b},
                        {"critical_value", x.critical_value},
                        {"power", x.power},
                        {"mcse", x.mcse},
                        {"power_nominal", x.nominal},
                        {"valid", x.valid}});
    return {{"spec", to_json(r.spec)}, {"calibrated", r.calibrated}, {"target_power", r.target_power}, {"rows", rows}};
}

std::string to_csv(const PowerReport& r) {
    std::ostringstream out;
    out << "sigma,tau,rho,B,critical_value,power,mcse,valid";
    for (double a : r.spec.alphas) out << ",power_alpha_" << format_number(a);
    out << '\n';
    for (const auto& x : r.rows) {
        out << format_number(x.sigma) << ',' << format_number(x.tau) << ',' << format_number(x.rho) << ',' << x.b
            << ',' << format_number(x.critical_value) << ',' << format_number(x.power) << ','
            << format_number(x.mcse) << ',' << x.valid;
        for (double v : x.nominal) out << ',' << format_number(v);
        out << '\n';
    }
    return out.str();
}

json to_json(const std::vector<TrajectoryRow>& rows) {
    json out = json::array();
    for (const auto& t : rows)
        out.push_back({{"m", t.m},
                       {"B", t.b},
                       {"M", t.outputations},
                       {"replicates", t.replicates},
                       {"sigma_bar_mean", number_or_null(t.sigma_bar_mean)},
                       {"sigma_bar_sd", number_or_null(t.sigma_bar_sd)},
                       {"s2_mean", number_or_null(t.s2_mean)},
                       {"s2_sd", number_or_null(t.s2_sd)},
                       {"moment_mean", number_or_null(t.moment_mean)},
                       {"moment_sd", number_or_null(t.moment_sd)},
                       {"stabilized_mean", number_or_null(t.stabilized_mean)},
                       {"stabilized_sd", number_or_null(t.stabilized_sd)},
                       {"negative_fraction", number_or_null(t.negative_fraction)}});
    return out;
}

std::string to_csv(const std::vector<TrajectoryRow>& rows) {
    std::ostringstream out;
    out << "m,B,M,replicates,sigma_bar_mean,sigma_bar_sd,s2_mean,s2_sd,moment_mean,moment_sd,"
           "stabilized_mean,stabilized_sd,negative_fraction\n";
    for (const auto& t : rows)
        out << t.m << ',' << t.b << ',' << t.outputations << ',' << t.replicates << ','
            << format_number(t.sigma_bar_mean) << ',' << format_number(t.sigma_bar_sd) << ','
            << format_number(t.s2_mean) << ',' << format_number(t.s2_sd) << ',' << format_number(t.moment_mean)
            << ',' << format_number(t.moment_sd) << ',' << format_number(t.stabilized_mean) << ','
            << format_number(t.stabilized_sd) << ',' << format_number(t.negative_fraction) << '\n';
    return out.str();
}

}  // namespace mwcr
