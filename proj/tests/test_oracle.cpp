#include <gtest/gtest.h>

#include <numeric>

#include "support/testkit.hpp"

using namespace fame;
using testkit::Rng;
using Status = VerifyResult::Status;

namespace {

Vector vec(std::initializer_list<double> v) {
    Vector out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) out(i++) = x;
    return out;
}

// Tiny net and point with a random subset of at most four features free.
struct Instance {
    Network net;
    PerturbationDomain dom;
    MarginSpec spec;
};

Instance random_instance(Rng& rng, double eps) {
    Network net = testkit::tiny_net(rng);
    const Vector x = testkit::random_point(rng, net.input_size());
    const MarginSpec spec(predict(net, x), net.num_classes());
    auto dom = PerturbationDomain::linf_ball(x, eps);
    FeatureSet all = iota_set(dom.size());
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(std::min<std::size_t>(all.size(), testkit::pick(rng, 1, 4)));
    dom.fix(set_difference(iota_set(dom.size()), all));
    return {std::move(net), std::move(dom), spec};
}

// Dense sampling plus every corner of the free box.
bool sampled_violation(Rng& rng, const Instance& in, int samples) {
    const FeatureSet free = in.dom.free_set();
    for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << free.size()); ++mask)
        if (margins(in.net, testkit::corner(in.dom, free, mask), in.spec).minCoeff() <= 0.0) return true;
    for (int s = 0; s < samples; ++s)
        if (margins(in.net, testkit::sample(rng, in.dom), in.spec).minCoeff() <= 0.0) return true;
    return false;
}

}  // namespace

TEST(Oracle, AffineNetDecidedAtTheRoot) {
    Rng rng(40);
    const Network net({3}, {Dense{testkit::gaussian(rng, 3, 3, 1.0), vec({0.5, 0, 0})}});
    for (double eps : {0.01, 0.5}) {
        const Vector x = testkit::random_point(rng, 3);
        const auto r = verify_complete(net, PerturbationDomain::linf_ball(x, eps), MarginSpec(predict(net, x), 3));
        EXPECT_NE(r.status, Status::unknown);
        EXPECT_EQ(r.nodes, 1u);
        EXPECT_EQ(r.max_depth, 0u);
    }
}

TEST(Oracle, CornerCounterexampleFoundShallow) {
    // f0 = 1, f1 = 10 relu(x0 + x1 - 1.5): only the top-right corner region
    // of [0.1, 0.9]^2 violates.
    const Network net({2}, {Dense{(Matrix(1, 2) << 1, 1).finished(), vec({-1.5})}, ReLU{},
                            Dense{vec({0, 10}), vec({1, 0})}});
    const MarginSpec spec(0, 2);
    const auto dom = PerturbationDomain::linf_ball(vec({0.5, 0.5}), 0.4);
    const auto r = verify_complete(net, dom, spec);
    ASSERT_EQ(r.status, Status::sat);
    ASSERT_TRUE(r.counterexample.has_value());
    EXPECT_TRUE(dom.contains(*r.counterexample));
    EXPECT_LE(margins(net, *r.counterexample, spec)(0), 0.0);
    EXPECT_LE(r.max_depth, 2u);
    // A grid over the box agrees that violations exist.
    int bad = 0;
    for (int a = 0; a <= 40; ++a)
        for (int b = 0; b <= 40; ++b) bad += margins(net, vec({0.1 + 0.02 * a, 0.1 + 0.02 * b}), spec)(0) <= 0.0;
    EXPECT_GT(bad, 0);
}

TEST(Oracle, PointDomainIsUnsatAtTheRoot) {
    Rng rng(41);
    const Network net = testkit::tiny_net(rng);
    const Vector x = testkit::random_point(rng, net.input_size());
    auto dom = PerturbationDomain::linf_ball(x, 0.3);
    dom.fix(iota_set(dom.size()));
    const auto r = verify_complete(net, dom, MarginSpec(predict(net, x), net.num_classes()));
    EXPECT_EQ(r.status, Status::unsat);
    EXPECT_EQ(r.nodes, 1u);
}

TEST(Oracle, AgreesWithDenseSampling) {
    Rng rng(42);
    int sat = 0, unsat = 0;
    for (int t = 0; t < 200; ++t) {
        const auto in = random_instance(rng, testkit::uniform(rng, 0.02, 0.4));
        const auto r = verify_complete(in.net, in.dom, in.spec);
        ASSERT_NE(r.status, Status::unknown) << "trial " << t;
        if (r.status == Status::sat) {
            ++sat;
            ASSERT_TRUE(r.counterexample.has_value());
            EXPECT_TRUE(in.dom.contains(*r.counterexample));
            EXPECT_LE(margins(in.net, *r.counterexample, in.spec).minCoeff(), 0.0);
        } else {
            ++unsat;
            EXPECT_FALSE(sampled_violation(rng, in, 2000)) << "trial " << t;
        }
    }
    EXPECT_GT(sat, 10);
    EXPECT_GT(unsat, 10);
}

TEST(Oracle, NodeBudgetGivesUnknown) {
    Rng rng(43);
    // Find an instance that needs splitting, then starve it.
    for (int t = 0; t < 200; ++t) {
        const auto in = random_instance(rng, 0.3);
        const auto full = verify_complete(in.net, in.dom, in.spec);
        if (full.nodes < 3) continue;
        OracleConfig cfg;
        cfg.node_budget = 1;
        const auto r = verify_complete(in.net, in.dom, in.spec, cfg);
        if (full.status == Status::sat && r.status == Status::sat) continue;  // found in the first box
        EXPECT_EQ(r.status, Status::unknown);
        EXPECT_FALSE(r.reason.empty());
        return;
    }
    GTEST_SKIP() << "no instance needed splitting";
}

TEST(Oracle, RejectsL0Budget) {
    const Network net({2}, {Dense{Matrix::Identity(2, 2), Vector::Zero(2)}});
    const auto dom = PerturbationDomain::linf_ball(vec({0.8, 0.2}), 0.1).with_budget(1);
    EXPECT_THROW(verify_complete(net, dom, MarginSpec(0, 2)), std::invalid_argument);
}

TEST(Oracle, CertifiedFreeSetsAreNeverSat) {
    // Phi(A) <= 0 from the abstract certificate means the oracle must not
    // find a counterexample with A free.
    Rng rng(44);
    int checked = 0;
    for (int t = 0; t < 300; ++t) {
        const Network net = testkit::tiny_net(rng);
        const Vector x = testkit::random_point(rng, net.input_size());
        const MarginSpec spec(predict(net, x), net.num_classes());
        const auto dom = PerturbationDomain::linf_ball(x, testkit::uniform(rng, 0.05, 0.3));
        const auto cert = make_certificate(crown_margin_bounds(net, dom, spec), dom);
        for (const auto& sol : {greedy_batch_free(cert), exact_batch_free(cert)}) {
            if (sol.degenerate || sol.selected.empty()) continue;
            ++checked;
            EXPECT_NE(verify_complete(net, dom.restricted_to(sol.selected), spec).status, Status::sat) << "trial " << t;
        }
    }
    EXPECT_GT(checked, 50);
}

TEST(BruteForce, MatchesExactUpToSixteenCandidates) {
    Rng rng(45);
    for (int t = 0; t < 60; ++t) {
        const std::size_t n = testkit::pick(rng, 1, 16);
        auto c = testkit::random_certificate(rng, testkit::pick(rng, 1, 4), n);
        const auto b = brute_force_knapsack(c);
        const auto e = exact_batch_free(c);
        EXPECT_EQ(b.objective(), e.objective());
        EXPECT_LE(phi(c, b.selected), 0.0);
    }
}

TEST(BruteForce, SmallCases) {
    BatchCertificate c;
    c.baseline = vec({-10, -20});
    c.contributions = (Matrix(2, 3) << 2, 7, 3, 8, 4, 3).finished();
    c.candidates = {0, 1, 2};
    const auto b = brute_force_knapsack(c);
    EXPECT_EQ(b.objective(), 2u);
    EXPECT_LE(phi(c, {0, 2}), 0.0);  // the greedy pair is one of three optima
    EXPECT_EQ(b.selected, (FeatureSet{0, 1}));

    c.candidates = {};
    EXPECT_EQ(brute_force_knapsack(c).objective(), 0u);

    BatchCertificate one;
    one.baseline = vec({-1});
    one.contributions = (Matrix(1, 1) << 2).finished();
    one.candidates = {0};
    EXPECT_TRUE(brute_force_knapsack(one).selected.empty());

    Rng rng(1);
    const auto big = testkit::random_certificate(rng, 1, 21);
    EXPECT_THROW(brute_force_knapsack(big), std::invalid_argument);
}

TEST(Deletion, IrrelevantFeatureAlwaysFreed) {
    Rng rng(46);
    for (int t = 0; t < 20; ++t) {
        Network base = testkit::tiny_net(rng, 5);
        // Zero the first layer's column for feature 0.
        auto layers = base.layers();
        std::get<Dense>(layers.front()).weights.col(0).setZero();
        const Network net(base.input_shape(), std::move(layers));
        const Vector x = testkit::random_point(rng, net.input_size());
        const MarginSpec spec(predict(net, x), net.num_classes());
        const auto dom = PerturbationDomain::linf_ball(x, 0.1);
        std::vector<std::size_t> order(dom.size());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        const auto r = sequential_deletion_axp(dom.size(), order, exact_checker(net, dom, spec));
        EXPECT_TRUE(set_contains(r.free, 0)) << "trial " << t;
    }
}

TEST(Deletion, ExactCheckerGivesMinimalExplanations) {
    Rng rng(47);
    for (int t = 0; t < 40; ++t) {
        const Network net = testkit::tiny_net(rng, 6);
        const Vector x = testkit::random_point(rng, net.input_size());
        const MarginSpec spec(predict(net, x), net.num_classes());
        const auto dom = PerturbationDomain::linf_ball(x, testkit::uniform(rng, 0.05, 0.3));
        std::vector<std::size_t> order(dom.size());
        std::iota(order.begin(), order.end(), 0);
        const auto checker = exact_checker(net, dom, spec);
        const auto r = sequential_deletion_axp(dom.size(), order, checker);
        ASSERT_EQ(r.unknowns, 0u);
        EXPECT_EQ(checker(r.free), CheckStatus::holds);
        for (std::size_t j : r.explanation) {
            // Independent witness: some corner of the relaxed box violates
            // or the oracle says SAT with a valid counterexample.
            const auto res = verify_complete(net, dom.restricted_to(set_union(r.free, {j})), spec);
            ASSERT_EQ(res.status, Status::sat) << "trial " << t << " feature " << j;
            EXPECT_LE(margins(net, *res.counterexample, spec).minCoeff(), 0.0);
        }
    }
}

TEST(Deletion, UnknownKeepsFeatureFixed) {
    const auto checker = [](const FeatureSet& free) { return free.back() == 1 ? CheckStatus::unknown : CheckStatus::holds; };
    const auto r = sequential_deletion_axp(3, {0, 1, 2}, checker);
    EXPECT_EQ(r.free, (FeatureSet{0, 2}));
    EXPECT_EQ(r.explanation, (FeatureSet{1}));
    EXPECT_EQ(r.unknowns, 1u);
    EXPECT_THROW(sequential_deletion_axp(3, {0, 5}, checker), std::out_of_range);
}

TEST(Oracle, ResultJson) {
    const Network net({2}, {Dense{Matrix::Identity(2, 2), Vector::Zero(2)}});
    const auto r = verify_complete(net, PerturbationDomain::linf_ball(vec({0.8, 0.2}), 0.5), MarginSpec(0, 2));
    const auto j = to_json(r);
    EXPECT_EQ(j["status"], "SAT");
    EXPECT_EQ(j["counterexample"].size(), 2u);
    EXPECT_TRUE(j["stats"].contains("nodes"));
}
