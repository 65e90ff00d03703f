#include "mwcr/cli.hpp"

#include "mwcr/report.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

namespace mwcr {

namespace {

struct CsvOptions {
    std::string input;
    std::string outcome = "y";
    std::string cluster = "cluster";
    std::vector<std::string> covariates;
    bool no_intercept = false;

    Dataset load() const {
        return load_long_csv(input, {outcome, cluster, covariates, !no_intercept});
    }
};

void add_csv_options(CLI::App& cmd, CsvOptions& o) {
    cmd.add_option("--input,-i", o.input, "long-format CSV file")->required();
    cmd.add_option("--outcome", o.outcome, "outcome column")->capture_default_str();
    cmd.add_option("--cluster", o.cluster, "cluster id column")->capture_default_str();
    cmd.add_option("--covariates", o.covariates, "covariate columns (comma separated)")->delimiter(',')->required();
    cmd.add_flag("--no-intercept", o.no_intercept, "do not prepend an intercept column");
}

void write_output(const std::string& path, const std::string& text, std::ostream& out) {
    if (path.empty() || path == "-") {
        out << text;
        return;
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw SchemaError("cannot write '" + path + "'");
    f << text;
}

/// One simulation experiment; presets expand to a list of these.
struct Experiment {
    enum class Kind { type1, power, trajectory } kind = Kind::type1;
    SimulationSpec spec;
    std::vector<PowerPoint> grid;
    bool calibrate = true;
    double target_power = 0.25;
    std::vector<Index> m_grid;
    std::vector<Index> outputation_grid{250, 1000};
    Index trajectory_b = 2;
    Index repeats = 20;
};

const std::vector<PowerPoint>& default_power_grid() {
    static const std::vector<PowerPoint> grid{
        {1.0, std::sqrt(0.1)}, {std::sqrt(0.8), std::sqrt(0.5)}, {std::sqrt(0.5), std::sqrt(0.8)}, {std::sqrt(0.1), 1.0}};
    return grid;
}

std::vector<Experiment> preset(const std::string& name) {
    std::vector<Experiment> out;
    if (name == "type1-large" || name == "type1-small") {
        const bool small = name == "type1-small";
        for (Index m : {Index{10}, Index{30}}) {
            Experiment e;
            e.spec.n = small ? 10 : 200;
            e.spec.m = m;
            e.spec.outputations = 300;
            e.spec.n_sims = 500;
            if (small) {
                e.spec.bias_correction = true;
                e.spec.methods = {VarianceMethod::stabilized, VarianceMethod::stabilized_bc, VarianceMethod::moment_bc};
            }
            out.push_back(e);
        }
    } else if (name == "power-curve") {
        Experiment e;
        e.kind = Experiment::Kind::power;
        e.spec.n = 200;
        e.spec.m = 10;
        e.spec.beta1 = 0.03;
        e.spec.corr = CorrelationKind::exchangeable;
        e.spec.outputations = 200;
        e.spec.n_sims = 500;
        e.spec.alphas = {0.05};
        e.spec.methods = {VarianceMethod::stabilized};
        e.grid = default_power_grid();
        out.push_back(e);
    } else if (name == "variance-trajectory") {
        Experiment e;
        e.kind = Experiment::Kind::trajectory;
        e.spec.n = 200;
        for (Index m = 2; m <= 30; ++m) e.m_grid.push_back(m);
        e.spec.m = 30;
        e.spec.b_values = {2};
        out.push_back(e);
    } else {
        throw DomainError("unknown preset '" + name +
                          "' (expected type1-large, type1-small, power-curve or variance-trajectory)");
    }
    return out;
}

Experiment experiment_from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw SchemaError("cannot open spec file '" + path + "'");
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("spec file is not valid JSON: ") + e.what());
    }
    Experiment e;
    try {
        const std::string kind = j.value("experiment", "type1");
        if (kind == "type1")
            e.kind = Experiment::Kind::type1;
        else if (kind == "power")
            e.kind = Experiment::Kind::power;
        else if (kind == "trajectory")
            e.kind = Experiment::Kind::trajectory;
        else
            throw DomainError("unknown experiment '" + kind + "'");
        if (e.kind == Experiment::Kind::trajectory) {
            j.at("m_grid").get_to(e.m_grid);
            if (j.contains("outputation_grid")) j.at("outputation_grid").get_to(e.outputation_grid);
            e.trajectory_b = j.value("b", Index{2});
            e.repeats = j.value("repeats", Index{20});
            if (!j.contains("m")) j["m"] = *std::max_element(e.m_grid.begin(), e.m_grid.end());
            if (!j.contains("b_values")) j["b_values"] = {e.trajectory_b};
        }
        e.spec = spec_from_json(j);
        if (e.kind == Experiment::Kind::power) {
            if (j.contains("grid"))
                for (const auto& g : j.at("grid")) e.grid.push_back({g.at("sigma").get<double>(), g.at("tau").get<double>()});
            else
                e.grid = {{e.spec.sigma, e.spec.tau}};
            e.calibrate = j.value("calibrate", true);
            e.target_power = j.value("target_power", 0.25);
        }
    } catch (const nlohmann::json::exception& ex) {
        throw SchemaError(std::string("bad spec file: ") + ex.what());
    }
    return e;
}

struct SimOverrides {
    std::optional<Index> n, m, sims, outputations;
    std::optional<std::uint64_t> seed;
    std::optional<double> beta1;
    std::vector<Index> b_values;
    int workers = 0;

    void apply(Experiment& e) const {
        SimulationSpec& s = e.spec;
        if (n) s.n = *n;
        if (m) s.m = *m;
        if (sims) s.n_sims = *sims;
        if (outputations) s.outputations = *outputations;
        if (seed) s.seed = *seed;
        if (beta1) s.beta1 = *beta1;
        if (!b_values.empty()) s.b_values = b_values;
        s.workers = workers;
        if (e.kind == Experiment::Kind::trajectory) {
            if (sims) e.repeats = *sims;
            if (outputations) e.outputation_grid = {*outputations};
            if (!b_values.empty()) e.trajectory_b = b_values.front();
            if (m) e.m_grid.erase(std::remove_if(e.m_grid.begin(), e.m_grid.end(), [&](Index x) { return x > *m; }),
                                  e.m_grid.end());
        }
    }
};

int simulate(const std::string& preset_name, const std::string& spec_file, const SimOverrides& over,
             const std::string& output, std::ostream& out) {
    std::vector<Experiment> experiments =
        spec_file.empty() ? preset(preset_name) : std::vector<Experiment>{experiment_from_file(spec_file)};
    for (auto& e : experiments) over.apply(e);

    nlohmann::json report = nlohmann::json::array();
    std::string csv;
    std::vector<SimulationReport> type1;
    for (const auto& e : experiments) {
        switch (e.kind) {
            case Experiment::Kind::type1: {
                type1.push_back(run_type1(e.spec));
                report.push_back(to_json(type1.back()));
                break;
            }
            case Experiment::Kind::power: {
                const auto r = run_power(e.spec, e.grid, e.calibrate, e.target_power);
                report.push_back(to_json(r));
                csv += to_csv(r);
                break;
            }
            case Experiment::Kind::trajectory: {
                for (Index m : e.m_grid)
                    if (e.trajectory_b > m) throw DomainError("trajectory B exceeds a grid value of m");
                const auto rows = run_variance_trajectory(e.spec, e.m_grid, e.outputation_grid, e.trajectory_b, e.repeats);
                report.push_back({{"kind", "trajectory"}, {"spec", to_json(e.spec)}, {"rows", to_json(rows)}});
                csv += to_csv(rows);
                break;
            }
        }
    }
    if (!type1.empty()) csv = to_csv(type1) + csv;

    const std::string json_text = report.dump(2) + "\n";
    if (output.empty()) {
        out << json_text;
    } else {
        write_output(output + ".json", json_text, out);
        write_output(output + ".csv", csv, out);
        out << csv;
    }
    return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Within-cluster resampling inference for clustered continuous outcomes"};
    app.require_subcommand(1);

    // analyze
    CsvOptions analyze_csv;
    AnalysisConfig config;
    std::string corr = "independence", bias = "none", method = "stabilized", neg = "undefined";
    std::string format = "json", output;
    config.workers = 0;
    auto* analyze = app.add_subcommand("analyze", "multiple-outputation analysis of a long-format CSV");
    add_csv_options(*analyze, analyze_csv);
    analyze->add_option("--b", config.b, "observations drawn per cluster")->capture_default_str();
    analyze->add_option("--outputations,-M", config.outputations, "number of outputations")->capture_default_str();
    analyze->add_option("--corr", corr, "working correlation")
        ->check(CLI::IsMember({"independence", "exchangeable"}))->capture_default_str();
    analyze->add_option("--bias-correction", bias, "small-sample covariance correction")
        ->check(CLI::IsMember({"none", "mancl-derouen"}))->capture_default_str();
    analyze->add_option("--variance", method, "variance used for z, p and CI")
        ->check(CLI::IsMember({"stabilized", "moment", "stabilized-bc", "moment-bc"}))->capture_default_str();
    analyze->add_option("--neg-var", neg, "handling of negative moment variances")
        ->check(CLI::IsMember({"undefined", "fallback-stabilized"}))->capture_default_str();
    analyze->add_option("--level", config.level, "confidence level")->capture_default_str();
    analyze->add_option("--delta", config.delta, "tolerance for the required-outputations estimate")->capture_default_str();
    analyze->add_option("--gamma", config.gamma, "probability for the required-outputations estimate")->capture_default_str();
    analyze->add_option("--seed", config.seed, "master seed")->capture_default_str();
    analyze->add_option("--workers", config.workers, "worker threads (0 = all cores)")->capture_default_str();
    analyze->add_option("--format", format, "report format")->check(CLI::IsMember({"json", "csv"}))->capture_default_str();
    analyze->add_option("--output,-o", output, "report path (default stdout)");
    analyze->add_flag("--drop-small-clusters", config.drop_small_clusters, "drop clusters with fewer than B rows");

    // simulate
    std::string preset_name, spec_file, sim_output;
    SimOverrides over;
    std::string b_list;
    auto* sim = app.add_subcommand("simulate", "random-intercepts simulation experiments");
    sim->add_option("preset", preset_name, "type1-large | type1-small | power-curve | variance-trajectory");
    sim->add_option("--spec", spec_file, "JSON experiment file instead of a preset");
    sim->add_option("--n", over.n, "clusters");
    sim->add_option("--m", over.m, "observations per cluster");
    sim->add_option("--sims", over.sims, "replicates");
    sim->add_option("--outputations,-M", over.outputations, "outputations per replicate");
    sim->add_option("--b", over.b_values, "B values (comma separated)")->delimiter(',');
    sim->add_option("--beta1", over.beta1, "slope");
    sim->add_option("--seed", over.seed, "master seed");
    sim->add_option("--workers", over.workers, "worker threads (0 = all cores)");
    sim->add_option("--output,-o", sim_output, "output prefix; writes <prefix>.json and <prefix>.csv");

    // screen
    CsvOptions screen_csv;
    double threshold = 0.5;
    std::string screen_format = "json", screen_output;
    auto* screen = app.add_subcommand("screen", "drop predictors until no pair has |r| above the threshold");
    add_csv_options(*screen, screen_csv);
    screen->add_option("--threshold", threshold, "maximum allowed |Pearson r|")->capture_default_str();
    screen->add_option("--format", screen_format, "report format")->check(CLI::IsMember({"json", "csv"}))->capture_default_str();
    screen->add_option("--output,-o", screen_output, "report path (default stdout)");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        return kExitInput;
    }

    try {
        if (analyze->parsed()) {
            config.corr = parse_correlation(corr);
            config.bias = parse_bias_correction(bias);
            config.method = parse_variance_method(method);
            config.negative_policy = parse_negative_policy(neg);
            const Dataset data = analyze_csv.load();
            const AnalysisReport report = run_analysis(data, config);
            const std::string text = format == "json" ? to_json(report).dump(2) + "\n" : to_csv(report);
            write_output(output, text, out);
            if (!output.empty()) out << to_table(report);
            for (const auto& w : report.warnings) err << "warning: " << w << '\n';
            return kExitOk;
        }
        if (sim->parsed()) {
            if (preset_name.empty() == spec_file.empty()) {
                err << "error: give exactly one of a preset name or --spec\n";
                return kExitInput;
            }
            return simulate(preset_name, spec_file, over, sim_output, out);
        }
        if (screen->parsed()) {
            const Dataset data = screen_csv.load();
            const ScreenReport report = screen_predictors(data, threshold);
            for (const auto& d : report.dropped)
                if (d.zero_variance) err << "warning: '" << d.column << "' has zero variance and was dropped\n";
            write_output(screen_output,
                         screen_format == "json" ? to_json(report).dump(2) + "\n" : to_csv(report), out);
            return kExitOk;
        }
    } catch (const InputError& e) {
        err << "error: " << e.what() << '\n';
        return kExitInput;
    } catch (const NumericalError& e) {
        err << "numerical error: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitFailure;
    }
    return kExitFailure;
}

}  // namespace mwcr
