// Acceptance gate: one PASS/FAIL line per criterion, non-zero exit if any fails.

#include "mwcr/cli.hpp"
#include "mwcr/report.hpp"
#include "oracles.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

using namespace mwcr;

namespace {

struct Verdict {
    bool pass;
    std::string detail;
};

int failures = 0;

void report(const char* id, const char* title, const std::function<Verdict()>& body) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
        v = body();
    } catch (const std::exception& e) {
        v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!v.pass) ++failures;
    std::printf("%s %s: %s (%s) [%.1fs]\n", id, v.pass ? "PASS" : "FAIL", title, v.detail.c_str(), secs);
    std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

const RejectionRow& find_row(const SimulationReport& r, Index b, VarianceMethod m, double alpha) {
    for (const auto& row : r.rejections)
        if (row.b == b && row.method == m && row.alpha == alpha) return row;
    throw std::runtime_error("missing rejection row");
}

Verdict positivity() {
    std::mt19937_64 rng(20240611);
    std::uniform_int_distribution<Index> n_dist(4, 40), m_lo(1, 12), m_span(0, 18), m_out(2, 40), p_dist(1, 3);
    std::uniform_int_distribution<int> coin(0, 1), tau_pick(0, 2);
    int configs = 0, positive = 0, skipped = 0;
    while (configs < 1000) {
        const Index lo = m_lo(rng);
        const Index p = p_dist(rng);
        const Dataset d = testing::random_dataset(rng, n_dist(rng), lo, lo + m_span(rng), p, 0.5 * tau_pick(rng));
        std::uniform_int_distribution<Index> b_dist(1, d.design().min_cluster_size());
        const OutputationPlan plan{b_dist(rng), m_out(rng), rng()};
        const auto corr = coin(rng) ? CorrelationKind::exchangeable : CorrelationKind::independence;
        const auto bias = coin(rng) ? BiasCorrection::mancl_derouen : BiasCorrection::none;
        if (plan.b * d.n() <= p) {  // too few rows per outputation to fit at all
            ++skipped;
            continue;
        }
        const auto acc = run_outputations(d, plan, corr, bias);
        if (acc.count() < 2) {
            ++skipped;
            continue;
        }
        ++configs;
        const auto inf = infer(acc, d.cluster_sizes());
        bool ok = (inf.var_stabilized.diagonal().array() > 0).all();
        if (inf.var_stabilized_bc) ok = ok && (inf.var_stabilized_bc->diagonal().array() > 0).all();
        positive += ok;
    }

    // Constructed pathology: m = 30, B = 1, M = 5 on random-intercepts data.
    SimulationSpec s;
    s.n = 200;
    s.m = 30;
    s.b_values = {1};
    int negative = 0;
    const int tries = 20;
    for (int r = 0; r < tries; ++r) {
        const Dataset d = gen_random_intercepts(s, r);
        const auto acc = run_outputations(d, {1, 5, std::uint64_t(r)}, CorrelationKind::independence,
                                          BiasCorrection::none);
        negative += infer(acc, d.cluster_sizes()).moment_negative(1);
    }
    return {positive == configs && negative >= 1,
            fmt("stabilized diagonal > 0 in %d/%d configs (%d skipped as unfittable); moment slope variance "
                "negative in %d/%d constructed m=30, M=5 runs",
                positive, configs, skipped, negative, tries)};
}

Verdict exhaustive_gap() {
    // Pilot-measured relative gaps on this dataset: -0.2348 and -0.2066.
    constexpr double bound = 0.25;
    const Dataset d = testing::formula_dataset(6, 3);
    const auto emo = enumerate_all_outputations(d.design(), 2, CorrelationKind::independence);
    const VectorXd sigma = emo.sigma_bar().diagonal();
    const VectorXd gap = (emo.s2_population().diagonal() - sigma * (1.0 - 2.0 / 3.0)).cwiseQuotient(sigma);
    const double worst = gap.cwiseAbs().maxCoeff();

    bool identity = true;
    int checked = 0;
    for (Index m = 1; m <= 30; ++m)
        for (Index b = 1; b <= m; ++b) {
            Fraction total{0, 1}, mean{0, 1};
            for (Index o = 0; o <= b; ++o) {
                const Fraction pr = overlap_probability_exact(o, b, m);
                total = total + pr;
                mean = mean + Fraction::make(std::uint64_t(o), std::uint64_t(b)) * pr;
            }
            identity = identity && total == Fraction{1, 1} &&
                       mean == Fraction::make(std::uint64_t(b), std::uint64_t(m));
            ++checked;
        }
    return {emo.combinations == 729 && worst < bound && identity,
            fmt("%lld combinations; |S2 - Sigma_bar(1-B/m)|/Sigma_bar = %.4f, %.4f (bound %.2f); "
                "overlap mean identity exact for %d (B, m) pairs: %s",
                static_cast<long long>(emo.combinations), std::abs(gap(0)), std::abs(gap(1)), bound, checked,
                identity ? "yes" : "no")};
}

Verdict type1_large() {
    SimulationSpec s;
    s.n = 200;
    s.m = 10;
    s.b_values = {1, 2, 3, 4, 5};
    s.outputations = 300;
    s.n_sims = 500;
    s.alphas = {0.05};
    s.methods = {VarianceMethod::moment, VarianceMethod::stabilized};
    const auto r10 = run_type1(s);
    s.m = 30;
    const auto r30 = run_type1(s);

    bool in_band = true;
    std::string rates;
    for (Index b : s.b_values) {
        const auto& row = find_row(r10, b, VarianceMethod::stabilized, 0.05);
        in_band = in_band && std::abs(row.rate - 0.05) <= 0.025;
        rates += fmt("%s%.3f", rates.empty() ? "" : "/", row.rate);
    }
    const auto& mom = find_row(r30, 1, VarianceMethod::moment, 0.05);
    const auto& stab = find_row(r30, 1, VarianceMethod::stabilized, 0.05);
    return {in_band && mom.rate >= stab.rate,
            fmt("m=10 stabilized rate at alpha=.05 for B=1..5: %s (band .025-.075); m=30 B=1 moment %.3f "
                "(%lld discarded) vs stabilized %.3f",
                rates.c_str(), mom.rate, static_cast<long long>(mom.discarded), stab.rate)};
}

Verdict type1_small() {
    SimulationSpec s;
    s.n = 10;
    s.m = 10;
    s.b_values = {1, 2, 3, 4, 5};
    s.outputations = 300;
    s.n_sims = 500;
    s.alphas = {0.05};
    s.bias_correction = true;
    s.methods = {VarianceMethod::stabilized, VarianceMethod::stabilized_bc};
    const auto r = run_type1(s);
    bool ok = true;
    std::string rates, plain;
    for (Index b : s.b_values) {
        const auto& row = find_row(r, b, VarianceMethod::stabilized_bc, 0.05);
        ok = ok && row.rate <= 0.07;
        rates += fmt("%s%.3f", rates.empty() ? "" : "/", row.rate);
        plain += fmt("%s%.3f", plain.empty() ? "" : "/", find_row(r, b, VarianceMethod::stabilized, 0.05).rate);
    }
    return {ok, fmt("n=10, m=10 stabilized-bc rate for B=1..5: %s (limit .07); uncorrected stabilized: %s",
                    rates.c_str(), plain.c_str())};
}

Verdict power_ordering() {
    SimulationSpec s;
    s.n = 200;
    s.m = 10;
    s.beta1 = 0.03;
    s.corr = CorrelationKind::exchangeable;
    s.b_values = {1, 5};
    s.outputations = 200;
    s.n_sims = 500;
    s.alphas = {0.05};
    const auto r = run_power(s, {{std::sqrt(0.1), 1.0}, {1.0, std::sqrt(0.1)}}, true, 0.25);
    auto power = [&](double rho_near, Index b) {
        for (const auto& row : r.rows)
            if (std::abs(row.rho - rho_near) < 0.01 && row.b == b) return row;
        throw std::runtime_error("missing power row");
    };
    const auto hi1 = power(0.909, 1), hi5 = power(0.909, 5), lo1 = power(0.0909, 1), lo5 = power(0.0909, 5);
    const double gap_hi = hi5.power - hi1.power, gap_lo = lo5.power - lo1.power;
    return {gap_hi >= 0.05 && gap_lo < 0.10,
            fmt("rho=.909: power B=1 %.3f, B=5 %.3f, gap %.3f (need >= .05); rho=.091: B=1 %.3f, B=5 %.3f, gap "
                "%.3f (need < .10)",
                hi1.power, hi5.power, gap_hi, lo1.power, lo5.power, gap_lo)};
}

Verdict required_m() {
    const long long m = required_outputations<double>(MatrixXd::Constant(1, 1, 65.1), MatrixXd::Identity(1, 1));
    const double rel = std::abs(double(m) - 625000.0) / 625000.0;
    return {rel < 0.01, fmt("ratio 65.1 -> M* = %lld (%.3f%% from 625,000)", m, 100 * rel)};
}

Verdict determinism() {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> z;
    const AccumulatorSettings settings{3, 2, CorrelationKind::independence, BiasCorrection::none};
    std::vector<std::pair<VectorXd, MatrixXd>> stream;
    for (int k = 0; k < 100; ++k) {
        VectorXd b(3);
        for (auto& v : b) v = 3 + z(rng);
        MatrixXd a = MatrixXd::Random(3, 3);
        stream.emplace_back(b, a * a.transpose());
    }
    auto absorb = [&](std::size_t lo, std::size_t hi) {
        OutputationAccumulator<double> acc(settings);
        for (std::size_t k = lo; k < hi; ++k) acc.absorb(stream[k].first, stream[k].second);
        return acc;
    };
    auto close = [](const OutputationAccumulator<double>& a, const OutputationAccumulator<double>& b) {
        return a.count() == b.count() &&
               (a.mean_beta() - b.mean_beta()).norm() <= 1e-12 * (1 + a.mean_beta().norm()) &&
               (a.comoment() - b.comoment()).norm() <= 1e-12 * (1 + a.comoment().norm()) &&
               (a.mean_sigma() - b.mean_sigma()).norm() <= 1e-12 * (1 + a.mean_sigma().norm());
    };
    const auto whole = absorb(0, 100);
    int good = 0, total = 0;
    for (std::size_t c = 1; c < 100; ++c, ++total) good += close(merge(absorb(0, c), absorb(c, 100)), whole);
    for (std::size_t c1 = 5; c1 < 100; c1 += 10)
        for (std::size_t c2 = c1 + 3; c2 < 100; c2 += 17, ++total) {
            const auto a = absorb(0, c1), b = absorb(c1, c2), c = absorb(c2, 100);
            good += close(merge(merge(a, b), c), merge(a, merge(b, c))) && close(merge(merge(a, b), c), whole);
        }

    SimulationSpec s;
    s.n = 40;
    s.m = 8;
    s.beta1 = 0.1;
    s.b_values = {1};
    const std::string dir = (std::filesystem::temp_directory_path() / "mwcr_acceptance").string();
    std::filesystem::create_directories(dir);
    const std::string input = dir + "/data.csv";
    {
        std::ofstream f(input);
        write_long_csv(f, gen_random_intercepts(s, 0), "y", "cluster");
    }
    std::vector<std::string> reports;
    for (const char* w : {"1", "2", "8"}) {
        const std::string out = dir + "/report_" + w + ".json";
        std::ostringstream o, e;
        const int code = run_cli({"analyze", "--input", input, "--covariates", "x", "--b", "3", "-M", "500", "--corr",
                                  "exchangeable", "--bias-correction", "mancl-derouen", "--seed", "42", "--workers", w,
                                  "--output", out},
                                 o, e);
        if (code != 0) return {false, "analyze failed: " + e.str()};
        std::ifstream f(out, std::ios::binary);
        reports.emplace_back(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
    }
    const bool identical = reports[0] == reports[1] && reports[0] == reports[2] && !reports[0].empty();
    return {good == total && identical,
            fmt("%d/%d split and associativity checks within 1e-12; reports for workers 1/2/8 %s", good, total,
                identical ? "byte-identical" : "DIFFER")};
}

Verdict gee_oracles() {
    std::mt19937_64 rng(101);
    double worst = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const Dataset d = testing::random_dataset(rng, 5 + trial % 20, 1, 6, 2 + trial % 3);
        const auto fit = fit_gee(d, CorrelationKind::independence);
        const VectorXd ols = testing::pooled_ols(d.design().x, d.design().y);
        worst = std::max(worst, (fit.beta - ols).lpNorm<Eigen::Infinity>() / (1 + ols.lpNorm<Eigen::Infinity>()));
    }

    const Dataset big = testing::random_dataset(rng, 500, 4, 4, 2, 1.0);
    const double alpha = *fit_gee(big, CorrelationKind::exchangeable).alpha_hat;

    const Dataset bal = testing::random_dataset(rng, 30, 5, 5, 3, 1.0);
    double degenerate = 0;
    for (auto kind : {CorrelationKind::independence, CorrelationKind::exchangeable}) {
        const auto acc = run_outputations(bal, {5, 50, 3}, kind, BiasCorrection::none);
        degenerate = std::max(degenerate, (acc.mean_beta() - fit_gee(bal, kind).beta).lpNorm<Eigen::Infinity>());
    }
    return {worst < 1e-10 && std::abs(alpha - 0.5) <= 0.05 && degenerate < 1e-8,
            fmt("independence vs pooled OLS max rel diff %.2e over 100 datasets; alpha_hat %.4f at n=500, m=4 "
                "(truth .5); B=m vs full fit %.2e",
                worst, alpha, degenerate)};
}

}  // namespace

int main() {
    report("AC1", "positivity", positivity);
    report("AC2", "exact enumeration oracle", exhaustive_gap);
    report("AC3", "type I error, large n", type1_large);
    report("AC4", "type I error, small n with bias correction", type1_small);
    report("AC5", "power ordering", power_ordering);
    report("AC6", "required outputations", required_m);
    report("AC7", "determinism and merge algebra", determinism);
    report("AC8", "GEE engine oracles", gee_oracles);
    std::printf("%d of 8 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
