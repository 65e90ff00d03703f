#include "mwcr/outputation.hpp"
#include "mwcr/variance.hpp"
#include "oracles.hpp"

#include <doctest.h>

using namespace mwcr;

namespace {

using Acc = OutputationAccumulator<double>;

Acc scalar_stream(std::initializer_list<std::pair<double, double>> beta_sigma, Index b = 1) {
    Acc acc({1, b, CorrelationKind::independence, BiasCorrection::none});
    for (auto [beta, sigma] : beta_sigma) acc.absorb(VectorXd::Constant(1, beta), MatrixXd::Constant(1, 1, sigma));
    return acc;
}

}  // namespace

TEST_SUITE("variance") {

TEST_CASE("moment variance on two-point streams") {
    const auto a = moment_variance(scalar_stream({{0.1, 1}, {0.3, 3}}));
    CHECK(a.var(0, 0) == doctest::Approx(1.98).epsilon(1e-12));
    CHECK_FALSE(a.negative(0));

    const auto b = moment_variance(scalar_stream({{0, 0.01}, {1, 0.01}}));
    CHECK(b.var(0, 0) == doctest::Approx(-0.49).epsilon(1e-12));
    CHECK(b.negative(0));

    CHECK_THROWS_AS(moment_variance(scalar_stream({{0, 1}})), InsufficientOutputationsError);
}

TEST_CASE("stabilized variance examples") {
    const std::vector<Index> balanced(7, 10);
    const Acc one = scalar_stream({{0, 1.0}, {1, 1.0}}, 2);
    CHECK(stabilized_variance(one, 2, balanced)(0, 0) == doctest::Approx(0.2).epsilon(1e-14));

    const std::vector<Index> unbalanced{4, 8};
    CHECK(shrink_factor(2, unbalanced) == doctest::Approx(0.375).epsilon(1e-15));
    const Acc two = scalar_stream({{0, 2.0}, {1, 2.0}}, 2);
    CHECK(stabilized_variance(two, 2, unbalanced)(0, 0) == doctest::Approx(0.75).epsilon(1e-14));

    CHECK_THROWS_AS(stabilized_variance(Acc({1, 1, CorrelationKind::independence, BiasCorrection::none}), 1,
                                        balanced),
                    InsufficientOutputationsError);
}

TEST_CASE("B equal to m: moment and stabilized variances coincide") {
    std::mt19937_64 rng(41);
    const Dataset d = testing::random_dataset(rng, 20, 3, 3, 2);
    const auto acc = run_outputations(d, {3, 10, 9}, CorrelationKind::independence, BiasCorrection::none);
    const auto inf = infer(acc, d.cluster_sizes());
    CHECK(inf.shrink_factor == 1.0);
    CHECK(inf.s2.isZero(1e-24));
    CHECK((inf.var_moment - inf.sigma_bar).norm() < 1e-24);
    CHECK((inf.var_moment - inf.var_stabilized).norm() < 1e-24);
    CHECK(required_outputations(acc, d.cluster_sizes()) == 0);
}

TEST_CASE("shrink factor lies in (0, 1], grows with B and equals B/m when balanced") {
    const std::vector<Index> sizes{3, 5, 9, 4};
    double last = 0;
    for (Index b = 1; b <= 3; ++b) {
        const double c = shrink_factor(b, sizes);
        CHECK(c > last);
        CHECK(c <= 1.0);
        last = c;
    }
    CHECK(shrink_factor(4, std::vector<Index>{4, 4, 4}) == 1.0);
    CHECK(shrink_factor(3, std::vector<Index>(5, 12)) == doctest::Approx(0.25).epsilon(1e-15));
    CHECK_THROWS_AS(shrink_factor(4, sizes), DomainError);
}

TEST_CASE("overlap law of two B-subsets") {
    CHECK(overlap_probability_exact(0, 2, 4) == Fraction{1, 6});
    CHECK(overlap_probability_exact(1, 2, 4) == Fraction{2, 3});
    CHECK(overlap_probability_exact(2, 2, 4) == Fraction{1, 6});
    CHECK_THROWS_AS(overlap_probability(3, 2, 4), DomainError);
    CHECK_THROWS_AS(overlap_probability(0, 5, 4), DomainError);

    for (Index m = 1; m <= 30; ++m)
        for (Index b = 0; b <= m; ++b) {
            Fraction total{0, 1};
            for (Index o = 0; o <= b; ++o) total = total + overlap_probability_exact(o, b, m);
            CHECK(total == Fraction{1, 1});
            if (b == 0) continue;
            Fraction mean{0, 1};
            for (Index o = 0; o <= b; ++o)
                mean = mean + Fraction::make(std::uint64_t(o), std::uint64_t(b)) * overlap_probability_exact(o, b, m);
            CHECK(mean == Fraction::make(std::uint64_t(b), std::uint64_t(m)));
        }
}

TEST_CASE("overlap law agrees with direct counting") {
    // Count pairs (J1, J2) of 3-subsets of a 7-set by overlap size.
    const auto subsets = all_subsets(7, 3);
    const std::size_t k = subsets.size() / 3;
    std::vector<int> counts(4, 0);
    for (std::size_t a = 0; a < k; ++a)
        for (std::size_t b = 0; b < k; ++b) {
            int overlap = 0;
            for (int s = 0; s < 3; ++s)
                for (int t = 0; t < 3; ++t) overlap += subsets[3 * a + s] == subsets[3 * b + t];
            ++counts[static_cast<std::size_t>(overlap)];
        }
    for (Index o = 0; o <= 3; ++o)
        CHECK(overlap_probability_exact(o, 3, 7) == Fraction::make(std::uint64_t(counts[std::size_t(o)]), k * k));
}

TEST_CASE("required outputations") {
    const MatrixXd one = MatrixXd::Identity(1, 1);
    CHECK(required_outputations<double>(one, one) == 9604);
    const long long big = required_outputations<double>(MatrixXd::Constant(1, 1, 65.1), one);
    CHECK(big == 625198);
    CHECK(std::abs(big - 625000) < 6250);
    CHECK(required_outputations<double>(MatrixXd::Zero(2, 2), MatrixXd::Identity(2, 2), 0.001) == 0);

    // Maximum over coordinates.
    MatrixXd s2 = MatrixXd::Zero(2, 2), var = MatrixXd::Identity(2, 2);
    s2(0, 0) = 0.5;
    s2(1, 1) = 2.0;
    CHECK(required_outputations<double>(s2, var) == 19208);

    var(1, 1) = -1;
    try {
        required_outputations<double>(s2, var);
        FAIL("expected cannot-assess");
    } catch (const CannotAssessError& e) {
        CHECK(e.coordinate() == 1);
    }
    CHECK_THROWS_AS(required_outputations<double>(s2, MatrixXd::Identity(2, 2), 0.0), DomainError);
}

TEST_CASE("Wald inference") {
    const auto null = wald_inference<double>(VectorXd::Zero(1), MatrixXd::Constant(1, 1, 4.0));
    CHECK(null.z(0) == 0.0);
    CHECK(null.p_value(0) == doctest::Approx(1.0).epsilon(1e-15));

    const auto edge = wald_inference<double>(VectorXd::Constant(1, 1.96), MatrixXd::Identity(1, 1), 0.95);
    CHECK(edge.p_value(0) == doctest::Approx(0.05).epsilon(1e-3));
    CHECK(edge.ci_low(0) == doctest::Approx(0.0).epsilon(1e-4));
    CHECK(std::abs(edge.ci_low(0)) < 1e-4);
    CHECK(edge.ci_high(0) == doctest::Approx(3.92).epsilon(1e-4));

    VectorXd beta(2);
    beta << 1, 2;
    MatrixXd var = MatrixXd::Identity(2, 2);
    var(1, 1) = -0.3;
    const auto mixed = wald_inference<double>(beta, var);
    CHECK(mixed.defined(0));
    CHECK_FALSE(mixed.defined(1));
    CHECK(std::isnan(mixed.z(1)));
    CHECK(std::isnan(mixed.p_value(1)));
    CHECK(std::isnan(mixed.ci_low(1)));
}

TEST_CASE("normal quantile and cdf") {
    CHECK(normal_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-14));
    CHECK(normal_quantile(0.995) == doctest::Approx(2.5758293035489004).epsilon(1e-14));
    CHECK(normal_quantile(0.5) == doctest::Approx(0.0));
    CHECK(normal_quantile(1e-10) == doctest::Approx(-6.361340902404056).epsilon(1e-12));
    for (double p : {1e-8, 0.01, 0.2, 0.5, 0.7, 0.99, 1 - 1e-9})
        CHECK(normal_cdf(normal_quantile(p)) == doctest::Approx(p).epsilon(1e-12));
    CHECK(normal_two_sided_p(2.5758293035489004) == doctest::Approx(0.01).epsilon(1e-12));
}

TEST_CASE("moment plus S^2 returns Sigma_bar exactly") {
    std::mt19937_64 rng(42);
    for (int trial = 0; trial < 20; ++trial) {
        const Dataset d = testing::random_dataset(rng, 15, 3, 9, 3);
        const auto acc = run_outputations(d, {2, 12, std::uint64_t(trial)}, CorrelationKind::exchangeable,
                                          BiasCorrection::mancl_derouen);
        const auto inf = infer(acc, d.cluster_sizes(), {VarianceMethod::moment_bc});
        CHECK((inf.var_moment + inf.s2 - inf.sigma_bar).cwiseAbs().maxCoeff() <= 1e-15 * (1 + inf.sigma_bar.norm()));
        CHECK((*inf.var_moment_bc + inf.s2 - *inf.sigma_bar_bc).cwiseAbs().maxCoeff() <=
              1e-15 * (1 + inf.sigma_bar_bc->norm()));
        CHECK((inf.var_stabilized - inf.sigma_bar * inf.shrink_factor).norm() == 0.0);
    }
}

TEST_CASE("stabilized diagonal is positive on random runs; moment can go negative") {
    std::mt19937_64 rng(43);
    int negative_moment = 0;
    for (int trial = 0; trial < 60; ++trial) {
        const Index m = 2 + trial % 29;
        const Dataset d = testing::random_dataset(rng, 12, m, m, 2);
        const Index b = 1 + trial % std::min<Index>(m, 3);
        const auto acc = run_outputations(d, {b, 3 + trial % 5, std::uint64_t(100 + trial)},
                                          CorrelationKind::independence, BiasCorrection::none);
        const auto inf = infer(acc, d.cluster_sizes());
        CHECK((inf.var_stabilized.diagonal().array() > 0).all());
        negative_moment += inf.moment_negative.any();
    }
    CHECK(negative_moment > 0);
}

TEST_CASE("negative moment variance: undefined by default, stabilized on request") {
    // With m=30, B=1 and only three outputations the moment estimate is often negative.
    std::mt19937_64 rng(44);
    for (std::uint64_t seed = 0;; ++seed) {
        REQUIRE(seed < 200);
        const Dataset d = testing::random_dataset(rng, 10, 30, 30, 2);
        const auto acc = run_outputations(d, {1, 3, seed}, CorrelationKind::independence, BiasCorrection::none);
        const auto plain = infer(acc, d.cluster_sizes(), {VarianceMethod::moment});
        if (!plain.moment_negative.any()) continue;
        const Index j = plain.moment_negative(0) ? 0 : 1;
        CHECK_FALSE(plain.wald.defined(j));
        CHECK(std::isnan(plain.wald.p_value(j)));
        const auto fb = infer(acc, d.cluster_sizes(),
                              {VarianceMethod::moment, 0.95, NegativeVariancePolicy::fallback_stabilized});
        CHECK(fb.fell_back(j));
        CHECK(fb.wald.defined(j));
        CHECK(fb.wald.z(j) == doctest::Approx(fb.beta_bar(j) / std::sqrt(fb.var_stabilized(j, j))));
        break;
    }
}

TEST_CASE("exhaustive n=6, m=3, B=2 summary matches the external enumeration") {
    // Reference values from an independent numpy enumeration of the same dataset.
    const Dataset d = testing::formula_dataset(6, 3);
    const auto emo = enumerate_all_outputations(d.design(), 2, CorrelationKind::independence);
    REQUIRE(emo.combinations == 729);
    CHECK(emo.beta_bar()(0) == doctest::Approx(0.5628554042888335).epsilon(1e-11));
    CHECK(emo.beta_bar()(1) == doctest::Approx(0.2816761208204759).epsilon(1e-11));
    CHECK(emo.sigma_bar()(0, 0) == doctest::Approx(0.09193658549675886).epsilon(1e-11));
    CHECK(emo.sigma_bar()(1, 1) == doctest::Approx(0.14527587867644678).epsilon(1e-11));
    CHECK(emo.s2_population()(0, 0) == doctest::Approx(0.00906266443470428).epsilon(1e-10));
    CHECK(emo.s2_population()(1, 1) == doctest::Approx(0.01841729834115847).epsilon(1e-10));
    const VectorXd gap = (emo.s2_population().diagonal() - emo.sigma_bar().diagonal() / 3.0)
                             .cwiseQuotient(emo.sigma_bar().diagonal());
    CHECK(gap(0) == doctest::Approx(-0.23475816452826856).epsilon(1e-9));
    CHECK(gap(1) == doctest::Approx(-0.2065586856151336).epsilon(1e-9));
}

TEST_CASE("S^2 tracks Sigma_bar (1 - B/m) at scale") {
    auto relative_gap = [](const Dataset& d) {
        const auto acc = run_outputations(d, {2, 20000, 2718}, CorrelationKind::independence, BiasCorrection::none);
        const VectorXd predicted = acc.mean_sigma().diagonal() * 0.5;
        return VectorXd((acc.s2().diagonal() - predicted).cwiseQuotient(predicted).cwiseAbs());
    };
    std::mt19937_64 rng(45);

    // Independent observations: the relation holds for every coordinate.
    const VectorXd independent = relative_gap(testing::random_dataset(rng, 200, 4, 4, 2, 0.0));
    MESSAGE("relative gap, tau=0: " << independent.transpose());
    CHECK(independent.maxCoeff() < 0.10);

    // Random intercepts: draws from one cluster share b_i whether or not they
    // overlap, so only coordinates driven by within-cluster variation follow it.
    const VectorXd shared = relative_gap(testing::random_dataset(rng, 200, 4, 4, 2, 1.0));
    MESSAGE("relative gap, tau=1: " << shared.transpose());
    CHECK(shared(1) < 0.10);
    CHECK(shared(0) > 0.30);
}

}  // TEST_SUITE
