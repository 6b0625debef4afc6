// Acceptance run: one PASS/FAIL line per criterion. Exit status is the
// number of failing criteria.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

#include "support/testkit.hpp"

using namespace fame;
using testkit::Rng;
using Status = VerifyResult::Status;
namespace fs = std::filesystem;

namespace {

constexpr double kBoundSlack = 1e-9;
constexpr double kGradientRelTol = 1e-4;
constexpr double kFiniteDiffStep = 1e-5;
constexpr double kKinkMargin = 1e-3;
constexpr double kNestingSlack = 1e-9;
constexpr double kWorkedExampleMaxMs = 1.0;

struct Outcome {
    bool pass;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

std::vector<std::size_t> index_order(std::size_t n) {
    std::vector<std::size_t> o(n);
    std::iota(o.begin(), o.end(), 0);
    return o;
}

// Phi computed straight from the definition.
double phi_by_hand(const BatchCertificate& c, const FeatureSet& A) {
    double best = -1e300;
    for (Eigen::Index i = 0; i < c.baseline.size(); ++i) {
        double v = c.baseline(i);
        for (std::size_t j : A) v += c.contributions(i, static_cast<Eigen::Index>(j));
        best = std::max(best, v);
    }
    return best;
}

// Largest feasible cardinality by enumerating every subset of the candidates.
std::size_t enumerate_best(const BatchCertificate& c) {
    std::size_t best = 0;
    const std::size_t n = c.candidates.size();
    for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << n); ++mask) {
        FeatureSet A;
        for (std::size_t b = 0; b < n; ++b)
            if (mask >> b & 1u) A.push_back(c.candidates[b]);
        if (A.size() > best && phi_by_hand(c, A) <= 0.0) best = A.size();
    }
    return best;
}

Outcome worked_example() {
    BatchCertificate c;
    c.baseline = (Vector(2) << -10, -20).finished();
    c.contributions = (Matrix(2, 3) << 2, 7, 3, 8, 4, 3).finished();
    c.candidates = {0, 1, 2};
    const auto t0 = std::chrono::steady_clock::now();
    const auto first = greedy_batch_free(c, 1);
    const auto g = greedy_batch_free(c);
    const auto e = exact_batch_free(c);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    const std::size_t best = enumerate_best(c);
    const bool ok = first.selected == FeatureSet{2} && g.selected == FeatureSet{0, 2} && phi_by_hand(c, g.selected) <= 0.0 &&
                    e.objective() == best && phi_by_hand(c, e.selected) <= 0.0 && e.optimal && best == 2 && ms < kWorkedExampleMaxMs;
    return {ok, fmt("first pick j%zu, greedy size %zu, exact size %zu, enumeration %zu, %.3f ms", first.selected.empty() ? 0 : first.selected[0] + 1,
                    g.objective(), e.objective(), best, ms)};
}

Outcome soundness_suite() {
    Rng rng(1001);
    std::size_t nets = 0, checks = 0, violations = 0, unknown = 0;
    for (int t = 0; t < 240; ++t) {
        const Network net = testkit::tiny_net(rng);
        const Vector x = testkit::random_point(rng, net.input_size());
        const MarginSpec spec(predict(net, x), net.num_classes());
        const double eps = t % 2 ? 0.1 : 0.05;
        const auto dom = PerturbationDomain::linf_ball(x, eps);
        PipelineConfig cfg;
        cfg.solver = t % 4 < 2 ? PipelineConfig::Solver::greedy : PipelineConfig::Solver::exact;
        ++nets;
        for (const auto& e : {single_round(net, dom, spec, cfg), recursive_free(net, dom, spec, cfg)}) {
            ++checks;
            const auto r = verify_complete(net, dom.restricted_to(e.free), spec);
            if (r.status == Status::sat) ++violations;
            if (r.status == Status::unknown) ++unknown;
        }
    }
    return {violations == 0 && unknown == 0, fmt("%zu nets, %zu explanations, %zu SAT, %zu UNKNOWN", nets, checks, violations, unknown)};
}

Outcome bound_soundness() {
    Rng rng(1002);
    std::size_t violations = 0, samples = 0;
    double worst = -1e300;
    for (int t = 0; t < 120; ++t) {
        const Network net = testkit::tiny_net(rng);
        const Vector x = testkit::random_point(rng, net.input_size());
        const MarginSpec spec(predict(net, x), net.num_classes());
        auto dom = PerturbationDomain::linf_ball(x, testkit::uniform(rng, 0.02, 0.3));
        if (t % 3 == 1) dom.fix(testkit::random_subset(rng, dom.size(), 0.3));
        if (t % 3 == 2 && dom.num_free() > 1) dom = dom.with_budget(testkit::pick(rng, 1, dom.num_free() - 1));
        BoundConfig bc;
        if (t % 2) bc.intermediate = BoundConfig::Intermediate::backward;
        const auto lb = crown_margin_bounds(net, dom, spec, bc);
        for (int s = 0; s < 10000; ++s) {
            const Vector p = testkit::sample(rng, dom);
            const Vector d = testkit::reference_margin_diffs(net, p, spec);
            const Vector up = lb.upper_W * p + lb.upper_w, lo = lb.lower_W * p + lb.lower_w;
            const double gap = std::max((d - up).maxCoeff(), (lo - d).maxCoeff());
            worst = std::max(worst, gap);
            violations += gap > kBoundSlack;
            ++samples;
        }
    }
    return {violations == 0, fmt("%zu samples over 120 domains, %zu beyond slack, worst excess %.3g", samples, violations, worst)};
}

Outcome certificate_properties() {
    Rng rng(1003);
    std::size_t negative = 0, nonmonotone = 0, checks = 0;
    for (int t = 0; t < 1000; ++t) {
        const Network net = testkit::tiny_net(rng);
        const Vector x = testkit::random_point(rng, net.input_size());
        const MarginSpec spec(predict(net, x), net.num_classes());
        auto dom = PerturbationDomain::linf_ball(x, testkit::uniform(rng, 0.01, 0.3));
        if (t % 2) dom = dom.with_budget(testkit::pick(rng, 1, dom.size()));
        const auto cert = make_certificate(crown_margin_bounds(net, dom, spec), dom);
        negative += (cert.contributions.array() < 0.0).count();
        const FeatureSet A = testkit::random_subset(rng, dom.size(), 0.5);
        for (std::size_t j = 0; j < dom.size(); ++j, ++checks)
            if (phi(cert, set_union(A, {j})) < phi(cert, A)) ++nonmonotone;
    }
    return {negative == 0 && nonmonotone == 0, fmt("1000 certificates, %zu negative contributions, %zu of %zu monotonicity checks failed", negative, nonmonotone, checks)};
}

Outcome greedy_vs_exact() {
    Rng rng(1004);
    std::size_t worse = 0, unequal_k2 = 0, wrong_exact = 0;
    for (int t = 0; t < 100; ++t) {
        const std::size_t k1 = std::vector<std::size_t>{1, 2, 5}[t % 3];
        const std::size_t n = testkit::pick(rng, 1, 16);
        const auto c = testkit::random_certificate(rng, k1, n);
        const auto g = greedy_batch_free(c);
        const auto e = exact_batch_free(c);
        worse += g.objective() > e.objective() || phi_by_hand(c, g.selected) > 0.0;
        if (k1 == 1) unequal_k2 += g.objective() != e.objective();
        wrong_exact += e.objective() != enumerate_best(c);
    }
    return {worse + unequal_k2 + wrong_exact == 0,
            fmt("100 instances, greedy above exact %zu, k=2 mismatches %zu, exact vs enumeration mismatches %zu", worse, unequal_k2, wrong_exact)};
}

struct FixtureRun {
    std::string name;
    Network net;
    Vector x;
    MarginSpec spec;
    double eps;
    PipelineConfig cfg;
    std::string cfg_name;
};

std::vector<FixtureRun> fixture_runs() {
    std::vector<FixtureRun> runs;
    const std::vector<std::pair<std::string, double>> fixtures{{"tiny", 0.1}, {"digits8", 0.1}, {"mnist_fc", 0.05}, {"mnist_cnn", 0.05}};
    for (const auto& [name, eps] : fixtures) {
        const auto f = testkit::load_fixture(name, eps);
        const bool large = f.net.input_size() > 100;
        for (bool backward : {false, true}) {
            PipelineConfig cfg;
            if (backward) cfg.bounds.intermediate = BoundConfig::Intermediate::backward;
            if (large) cfg.schedule = PipelineConfig::Schedule::geometric;
            const std::string cfg_name = std::string(backward ? "backward" : "interval") + (large ? "/geometric" : "/full");
            for (const auto& [id, x] : f.inputs)
                runs.push_back({name + "/" + id, f.net, x, MarginSpec(predict(f.net, x), f.net.num_classes()), eps, cfg, cfg_name});
        }
    }
    return runs;
}

struct FixtureResults {
    std::vector<FixtureRun> runs;
    std::vector<Explanation> single, recursive;
};

const FixtureResults& fixture_results() {
    static const FixtureResults res = [] {
        FixtureResults r;
        r.runs = fixture_runs();
        for (const auto& run : r.runs) {
            r.single.push_back(single_round(run.net, run.x, run.eps, run.spec, run.cfg));
            r.recursive.push_back(recursive_free(run.net, run.x, run.eps, run.spec, run.cfg));
        }
        return r;
    }();
    return res;
}

Outcome refinement_direction() {
    const auto& r = fixture_results();
    std::size_t violations = 0, strictly = 0;
    std::map<std::string, std::pair<double, double>> totals;
    std::map<std::string, int> counts;
    for (std::size_t k = 0; k < r.runs.size(); ++k) {
        const std::size_t s = r.single[k].explanation.size(), c = r.recursive[k].explanation.size();
        violations += c > s;
        strictly += c < s;
        const std::string key = r.runs[k].name.substr(0, r.runs[k].name.find('/')) + " " + r.runs[k].cfg_name;
        totals[key].first += double(s);
        totals[key].second += double(c);
        ++counts[key];
    }
    std::string detail = fmt("%zu runs, %zu violations, %zu strictly smaller; mean single/recursive:", r.runs.size(), violations, strictly);
    for (const auto& [key, t] : totals) detail += fmt(" %s %.1f/%.1f;", key.c_str(), t.first / counts[key], t.second / counts[key]);
    return {violations == 0, detail};
}

Outcome singleton_maximality() {
    const auto& r = fixture_results();
    std::size_t violations = 0, checks = 0, not_minimal = 0;
    for (std::size_t k = 0; k < r.runs.size(); ++k) {
        const auto& run = r.runs[k];
        const auto& e = r.recursive[k];
        not_minimal += e.kind != Explanation::Kind::abstract_minimal_wAXp;
        const auto dom = PerturbationDomain::linf_ball(run.x, run.eps, run.cfg.bounds.clip);
        for (std::size_t j : e.explanation) {
            ++checks;
            if (recomputed_phi(run.net, dom, run.spec, run.cfg.bounds, set_union(e.free, {j})) <= 0.0) ++violations;
        }
    }
    return {violations == 0 && not_minimal == 0, fmt("%zu runs, %zu singleton checks, %zu passed unexpectedly, %zu not marked minimal", r.runs.size(), checks, violations, not_minimal)};
}

Outcome binary_equivalence() {
    Rng rng(1008);
    std::size_t mismatches = 0, unknown = 0, bs_checks = 0, seq_checks = 0;
    for (int t = 0; t < 50; ++t) {
        const Network net = testkit::tiny_net(rng, 7);
        const Vector x = testkit::random_point(rng, net.input_size());
        const MarginSpec spec(predict(net, x), net.num_classes());
        const auto dom = PerturbationDomain::linf_ball(x, testkit::uniform(rng, 0.05, 0.3));
        const auto checker = exact_checker(net, dom, spec);
        auto order = index_order(dom.size());
        std::shuffle(order.begin(), order.end(), rng);
        const auto b = binary_search_free(order, checker);
        const auto s = sequential_deletion_axp(dom.size(), order, checker);
        mismatches += b.freed != s.free;
        unknown += b.unknowns + s.unknowns;
        bs_checks += b.checks;
        seq_checks += s.checks;
    }
    return {mismatches == 0 && unknown == 0, fmt("50 instances, exact checker, %zu mismatches, %zu unknown; checks binary %zu vs sequential %zu", mismatches, unknown, bs_checks, seq_checks)};
}

Outcome distance_correctness() {
    Rng rng(1009);
    std::size_t wrong = 0, zero = 0, positive = 0, total = 0;
    auto check = [&](const Network& net, const PerturbationDomain& dom, const MarginSpec& spec) {
        PipelineConfig cfg;
        cfg.order = PipelineConfig::Order::index;
        const auto e = recursive_free(net, dom, spec, cfg);
        const auto checker = exact_checker(net, dom, spec);
        const auto rep = distance_to_minimality(net, dom, spec, e, checker, cfg);
        // Oracle: deletion with the complete verifier from the abstract free set.
        const auto ref = sequential_deletion_axp(dom.size(), index_order(dom.size()), checker, e.free);
        const std::size_t expected = set_difference(e.explanation, ref.explanation).size();
        wrong += rep.distance != expected || rep.refined_explanation != ref.explanation || ref.unknowns > 0;
        (expected ? positive : zero) += 1;
        ++total;
    };
    // Affine nets: the relaxation is exact, so d = 0.
    for (int t = 0; t < 20; ++t) {
        const std::size_t n = testkit::pick(rng, 2, 6);
        Vector d(static_cast<Eigen::Index>(n));
        for (Eigen::Index j = 0; j < d.size(); ++j) d(j) = testkit::uniform(rng, -1.0, 1.0);
        const Vector x = testkit::random_point(rng, n);
        Matrix W = Matrix::Zero(2, d.size());
        W.row(1) = d.transpose();
        const Network net({n}, {Dense{W, (Vector(2) << 0.0, -d.dot(x) - testkit::uniform(rng, 0.05, 0.4)).finished()}});
        check(net, PerturbationDomain::linf_ball(x, 0.15), MarginSpec(0, 2));
    }
    for (int t = 0; t < 200; ++t) {
        const Network net = testkit::tiny_net(rng, 6);
        const Vector x = testkit::random_point(rng, net.input_size());
        check(net, PerturbationDomain::linf_ball(x, testkit::uniform(rng, 0.03, 0.25)), MarginSpec(predict(net, x), net.num_classes()));
    }
    return {wrong == 0 && zero > 0 && positive > 0, fmt("%zu instances, %zu with d = 0, %zu with d > 0, %zu mismatches", total, zero, positive, wrong)};
}

double kink_distance(const Network& net, const Vector& x) {
    double d = 1e300;
    Vector h = x;
    for (const auto& s : net.stages()) {
        if (s.kind == Stage::Kind::affine) {
            h = s.weights * h + s.bias;
        } else {
            d = std::min(d, h.cwiseAbs().minCoeff());
            h = h.cwiseMax(0.0);
        }
    }
    return d;
}

Outcome gradient_check() {
    Rng rng(1010);
    std::size_t points = 0, failures = 0;
    double worst = 0.0;
    while (points < 100) {
        const Network net = testkit::tiny_net(rng);
        const Vector x = testkit::random_point(rng, net.input_size());
        if (kink_distance(net, x) < kKinkMargin) continue;
        const MarginSpec spec(testkit::pick(rng, 0, net.num_classes() - 1), net.num_classes());
        const Matrix G = gradient_margins(net, x, spec);
        Matrix fd(G.rows(), G.cols());
        for (Eigen::Index j = 0; j < x.size(); ++j) {
            Vector a = x, b = x;
            a(j) += kFiniteDiffStep;
            b(j) -= kFiniteDiffStep;
            fd.col(j) = (testkit::reference_margin_diffs(net, a, spec) - testkit::reference_margin_diffs(net, b, spec)) / (2 * kFiniteDiffStep);
        }
        const double err = (G - fd).cwiseAbs().maxCoeff() / std::max(1.0, fd.cwiseAbs().maxCoeff());
        worst = std::max(worst, err);
        failures += err > kGradientRelTol;
        ++points;
    }
    return {failures == 0, fmt("%zu points, %zu above tolerance, worst relative error %.3g", points, failures, worst)};
}

Outcome nesting() {
    Rng rng(1011);
    std::size_t violations = 0;
    double worst = -1e300;
    for (int t = 0; t < 100; ++t) {
        const Network net = testkit::tiny_net(rng);
        const Vector x = testkit::random_point(rng, net.input_size());
        const MarginSpec spec(predict(net, x), net.num_classes());
        const auto box = PerturbationDomain::linf_ball(x, testkit::uniform(rng, 0.02, 0.3));
        const std::size_t n = box.size();
        FeatureSet all = iota_set(n);
        std::shuffle(all.begin(), all.end(), rng);
        const FeatureSet A = make_set(FeatureSet(all.begin(), all.begin() + static_cast<long>(testkit::pick(rng, 0, n - 1))));
        const std::size_t m = testkit::pick(rng, 1, n - A.size());
        const auto inner = box.with_budget(m, A);
        const auto outer = box.with_budget(m + A.size());
        const Vector ui = concretize_upper(crown_margin_bounds(net, inner, spec), inner);
        const Vector uo = concretize_upper(crown_margin_bounds(net, outer, spec), outer);
        const double gap = (ui - uo).maxCoeff();
        worst = std::max(worst, gap);
        violations += gap > kNestingSlack;
    }
    return {violations == 0, fmt("100 cases, %zu violations, worst excess %.3g", violations, worst)};
}

int run(const std::string& cmd) {
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Outcome reproducibility() {
    const fs::path dir = fs::temp_directory_path() / "fame_acceptance_eval";
    bool ok = true;
    std::string detail;
    // digits8 with default settings; tiny also runs the exact refinement.
    for (const auto& [name, extra] : std::vector<std::pair<std::string, std::string>>{{"digits8", ""}, {"tiny", " --distance"}}) {
        fs::remove_all(dir);
        const fs::path fixture = fs::path(FAME_FIXTURES) / name;
        const std::string base = std::string(FAME_CLI) + " eval --network " + (fixture / "net.json").string() + " --dataset " +
                                 (fixture / "dataset").string() + " --epsilon 0.1 --seed 7" + extra + " 2>/dev/null --out ";
        const int a = run(base + (dir / "a").string() + " --threads 1");
        const int b = run(base + (dir / "b").string() + " --threads 4");
        const std::string csv_a = slurp(dir / "a" / "eval.csv"), json_a = slurp(dir / "a" / "eval.json");
        const bool same = !csv_a.empty() && csv_a == slurp(dir / "b" / "eval.csv") && json_a == slurp(dir / "b" / "eval.json");
        const auto rows = std::count(csv_a.begin(), csv_a.end(), '\n');
        ok = ok && a == 0 && b == 0 && same;
        detail += fmt("%s: exit %d/%d, %ld CSV lines, %s; ", name.c_str(), a, b, static_cast<long>(rows), same ? "byte-identical" : "differ");
    }
    fs::remove_all(dir);
    if (detail.size() >= 2) detail.resize(detail.size() - 2);
    return {ok, detail};
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"worked example", worked_example},
        {"soundness suite", soundness_suite},
        {"bound soundness", bound_soundness},
        {"certificate monotonicity and nonnegativity", certificate_properties},
        {"greedy vs exact", greedy_vs_exact},
        {"iterative refinement direction", refinement_direction},
        {"singleton maximality", singleton_maximality},
        {"binary search equivalence", binary_equivalence},
        {"distance to minimality", distance_correctness},
        {"gradient check", gradient_check},
        {"refined-domain nesting", nesting},
        {"eval reproducibility", reproducibility},
    };
    int failed = 0;
    for (std::size_t k = 0; k < criteria.size(); ++k) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[k].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        failed += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  " << (k + 1) << ". " << criteria[k].first << " (" << fmt("%.2f s", s) << "): " << o.detail << std::endl;
    }
    std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria passed" << std::endl;
    return failed;
}
