// Command-line front end: explain, eval, verify, oracle-verify, render.

#include <CLI11.hpp>

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <thread>

#include "fame/fame.hpp"

namespace fs = std::filesystem;
using namespace fame;

namespace {

enum Exit { ok = 0, degenerate = 2, misclassified = 3, config_error = 4, io_error = 5 };

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Raw option values shared by the commands.
struct Options {
    std::string network, input, dataset, labels, out, mask, fixed, report;
    std::optional<std::size_t> label;
    double epsilon = 0.0;
    std::string mode = "recursive", solver = "greedy", cardinality = "on", schedule = "full", refine = "singleton";
    std::string attack = "fgs", intermediate = "interval", lower_slope = "adaptive", clip = "on", order = "bounds", checker = "auto";
    bool distance = false;
    std::size_t pgd_steps = 20, restarts = 3, max_rounds = 0, threads = 0, node_budget = 100000;
    double pgd_step_size = 0.0, time_budget = 0.0, exact_time_limit = 10.0, tol = 1e-4;
    std::uint64_t seed = 0;
};

void add_model_options(CLI::App* cmd, Options& o) {
    cmd->add_option("--network", o.network, "network JSON")->required();
    cmd->add_option("--epsilon", o.epsilon, "l-infinity radius")->required();
    cmd->add_option("--intermediate", o.intermediate, "intermediate bounds")->check(CLI::IsMember({"interval", "backward"}));
    cmd->add_option("--lower-slope", o.lower_slope, "ReLU lower relaxation")->check(CLI::IsMember({"adaptive", "zero"}));
    cmd->add_option("--clip", o.clip, "clip the box to [0,1]")->check(CLI::IsMember({"on", "off"}));
    cmd->add_option("--label", o.label, "expected class (default: predicted class)");
}

void add_pipeline_options(CLI::App* cmd, Options& o) {
    cmd->add_option("--mode", o.mode)->check(CLI::IsMember({"single", "recursive"}));
    cmd->add_option("--solver", o.solver)->check(CLI::IsMember({"greedy", "exact"}));
    cmd->add_option("--cardinality", o.cardinality)->check(CLI::IsMember({"on", "off"}));
    cmd->add_option("--schedule", o.schedule)->check(CLI::IsMember({"full", "geometric"}));
    cmd->add_option("--refine", o.refine)->check(CLI::IsMember({"singleton", "binary", "none"}));
    cmd->add_option("--order", o.order, "traversal order for refinement")->check(CLI::IsMember({"bounds", "index", "random"}));
    cmd->add_flag("--distance", o.distance, "run exact refinement and report distance to minimality");
    cmd->add_option("--checker", o.checker, "checker for --distance")->check(CLI::IsMember({"auto", "exact", "abstract"}));
    cmd->add_option("--attack", o.attack)->check(CLI::IsMember({"fgs", "pgd", "none"}));
    cmd->add_option("--pgd-steps", o.pgd_steps);
    cmd->add_option("--pgd-step-size", o.pgd_step_size);
    cmd->add_option("--restarts", o.restarts);
    cmd->add_option("--seed", o.seed);
    cmd->add_option("--max-rounds", o.max_rounds, "0 = unlimited");
    cmd->add_option("--time-budget", o.time_budget, "seconds, 0 = unlimited");
    cmd->add_option("--exact-time-limit", o.exact_time_limit, "seconds per exact knapsack solve");
    cmd->add_option("--node-budget", o.node_budget, "oracle node budget");
}

PipelineConfig pipeline_config(const Options& o) {
    if (!(o.epsilon > 0.0)) throw ConfigError("--epsilon must be > 0");
    if (o.pgd_step_size < 0.0 || o.time_budget < 0.0 || o.exact_time_limit <= 0.0) throw ConfigError("negative step size or time limit");
    PipelineConfig c;
    using P = PipelineConfig;
    c.solver = o.solver == "exact" ? P::Solver::exact : P::Solver::greedy;
    c.cardinality = o.cardinality == "on";
    c.schedule = o.schedule == "geometric" ? P::Schedule::geometric : P::Schedule::full;
    c.refinement = o.refine == "binary" ? P::Refinement::binary : o.refine == "none" ? P::Refinement::none : P::Refinement::singleton;
    c.order = o.order == "index" ? P::Order::index : o.order == "random" ? P::Order::random : P::Order::bounds;
    c.attack_phase = o.attack != "none";
    c.max_rounds = o.max_rounds;
    c.time_budget_s = o.time_budget;
    c.seed = o.seed;
    c.bounds.intermediate = o.intermediate == "backward" ? BoundConfig::Intermediate::backward : BoundConfig::Intermediate::interval;
    c.bounds.lower_slope = o.lower_slope == "zero" ? BoundConfig::LowerSlope::zero : BoundConfig::LowerSlope::adaptive;
    c.bounds.clip = o.clip == "on";
    c.attack.method = o.attack == "pgd" ? AttackConfig::Method::pgd : AttackConfig::Method::fgs;
    c.attack.steps = o.pgd_steps;
    c.attack.step_size = o.pgd_step_size;
    c.attack.restarts = o.restarts;
    c.attack.seed = o.seed;
    c.exact.time_limit_s = o.exact_time_limit;
    try {
        c.attack.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return c;
}

nlohmann::json config_snapshot(const Options& o, const PipelineConfig& c) {
    nlohmann::json j = to_json(c);
    j["mode"] = o.mode;
    j["distance"] = o.distance;
    j["checker"] = o.checker;
    j["node_budget"] = o.node_budget;
    j["attack"]["enabled"] = c.attack_phase;
    return j;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::ios_base::failure("cannot write '" + path + "'");
    f << text;
    if (!f) throw std::ios_base::failure("error writing '" + path + "'");
}

void emit(const std::string& path, const nlohmann::json& j) {
    if (path.empty()) std::cout << j.dump(2) << '\n';
    else write_text(path, j.dump(2) + "\n");
}

std::size_t true_class(const Network& net, const Vector& x, const std::optional<std::size_t>& label) {
    const std::size_t pred = predict(net, x);
    if (label) {
        if (*label >= net.num_classes()) throw ConfigError("--label " + std::to_string(*label) + " out of range");
        if (pred != *label) throw MisclassifiedError("predicted class " + std::to_string(pred) + " differs from label " + std::to_string(*label));
    }
    return pred;
}

struct Outcome {
    Explanation explanation;
    std::optional<RefinementReport> refinement;
};

Outcome run_pipeline(const Network& net, const PerturbationDomain& dom, const MarginSpec& spec, const Options& o, const PipelineConfig& cfg) {
    Outcome out;
    out.explanation = o.mode == "single" ? single_round(net, dom, spec, cfg) : recursive_free(net, dom, spec, cfg);
    if (o.distance) {
        // The complete verifier is only practical on small networks.
        const bool small = net.num_relu_neurons() <= 64 && net.input_size() <= 64;
        const bool exact = o.checker == "exact" || (o.checker == "auto" && small);
        OracleConfig oc;
        oc.node_budget = o.node_budget;
        oc.bounds.clip = cfg.bounds.clip;
        const FreeSetChecker checker = exact ? exact_checker(net, dom, spec, oc) : abstract_checker(net, dom, spec, cfg.bounds);
        out.refinement = distance_to_minimality(net, dom, spec, out.explanation, checker, cfg, !exact);
    }
    return out;
}

int cmd_explain(const Options& o) {
    const PipelineConfig cfg = pipeline_config(o);
    const Network net = load_network(o.network);
    const Vector x = read_input(o.input);
    check_input(net, x);
    const MarginSpec spec(true_class(net, x, o.label), net.num_classes());
    const auto dom = PerturbationDomain::linf_ball(x, o.epsilon, cfg.bounds.clip);
    const Outcome r = run_pipeline(net, dom, spec, o, cfg);
    ReportContext ctx{o.input, o.epsilon, spec.true_class, net.input_shape(), config_snapshot(o, cfg)};
    emit(o.out, explanation_report(r.explanation, ctx, r.refinement));
    if (!o.mask.empty()) write_pnm(o.mask, render_mask(net.input_shape(), r.explanation.explanation));
    return r.explanation.degenerate && r.explanation.free.empty() ? Exit::degenerate : Exit::ok;
}

std::map<std::string, std::size_t> read_labels(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::ios_base::failure("cannot open labels file '" + path + "'");
    std::map<std::string, std::size_t> labels;
    std::string line;
    for (std::size_t n = 0; std::getline(in, line); ++n) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw ParseError(path + ": line " + std::to_string(n + 1) + " is not 'sample,label'");
        const std::string name = line.substr(0, comma), value = line.substr(comma + 1);
        if (n == 0 && name == "sample") continue;
        try {
            labels[name] = std::stoul(value);
        } catch (const std::exception&) {
            throw ParseError(path + ": bad label '" + value + "' on line " + std::to_string(n + 1));
        }
    }
    return labels;
}

std::size_t worker_count(std::size_t flag) {
    if (flag) return flag;
    if (const char* env = std::getenv("FAME_THREADS")) {
        try {
            if (const auto n = std::stoul(env)) return n;
        } catch (const std::exception&) {
            throw ConfigError("FAME_THREADS must be a positive integer");
        }
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

int cmd_eval(const Options& o) {
    const PipelineConfig cfg = pipeline_config(o);
    const Network net = load_network(o.network);
    if (!fs::is_directory(o.dataset)) throw std::ios_base::failure("dataset directory '" + o.dataset + "' not found");
    const std::string labels_path = !o.labels.empty() ? o.labels : (fs::path(o.dataset) / "labels.csv").string();
    std::map<std::string, std::size_t> labels;
    if (!o.labels.empty() || fs::exists(labels_path)) labels = read_labels(labels_path);

    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(o.dataset)) {
        const auto ext = e.path().extension().string();
        if (e.is_regular_file() && fs::path(labels_path).filename() != e.path().filename() &&
            (ext == ".pgm" || ext == ".ppm" || ext == ".pnm" || ext == ".json" || ext == ".csv"))
            files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());

    std::vector<EvalRow> rows(files.size());
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i; (i = next++) < files.size();) {
            EvalRow& row = rows[i];
            row.sample_id = files[i].filename().string();
            const auto t0 = std::chrono::steady_clock::now();
            try {
                if (auto it = labels.find(row.sample_id); it != labels.end()) row.label = it->second;
                const Vector x = read_input(files[i].string());
                check_input(net, x);
                const std::size_t pred = predict(net, x);
                if (row.label && pred != *row.label) {
                    row.status = "misclassified";
                    continue;
                }
                const MarginSpec spec(pred, net.num_classes());
                const auto dom = PerturbationDomain::linf_ball(x, o.epsilon, cfg.bounds.clip);
                const Outcome r = run_pipeline(net, dom, spec, o, cfg);
                row.size = r.explanation.explanation.size();
                row.freed = r.explanation.free.size();
                if (r.refinement) {
                    row.candidate_set_size = r.refinement->candidate_set_size;
                    row.distance = r.refinement->distance;
                }
                row.status = row.size == 0 ? "robust" : (r.explanation.degenerate && r.explanation.free.empty()) ? "degenerate" : "ok";
            } catch (const MisclassifiedError&) {
                row.status = "misclassified";
            } catch (const std::exception& e) {
                row.status = "error";
                row.message = e.what();
            }
            row.time_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        }
    };
    std::vector<std::thread> pool;
    const std::size_t workers = std::min(worker_count(o.threads), std::max<std::size_t>(files.size(), 1));
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();

    nlohmann::json config = config_snapshot(o, cfg);
    config["epsilon"] = o.epsilon;
    fs::create_directories(o.out);
    write_text((fs::path(o.out) / "eval.csv").string(), eval_csv(rows));
    write_text((fs::path(o.out) / "eval.json").string(), eval_json(rows, config).dump(2) + "\n");
    write_text((fs::path(o.out) / "timings.csv").string(), timings_csv(rows));
    const auto a = aggregate(rows);
    std::cerr << a.samples << " samples, " << a.counted << " counted, " << a.robust << " robust, " << a.misclassified << " misclassified, "
              << a.errors << " errors\n";
    return Exit::ok;
}

// Indices from a report's "explanation" or a comma-separated list.
FeatureSet read_fixed(const std::string& spec) {
    if (fs::exists(spec)) {
        std::ifstream in(spec);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError("'" + spec + "': " + e.what());
        }
        if (!j.contains("explanation")) throw ParseError("'" + spec + "' has no 'explanation' field");
        return make_set(j["explanation"].get<FeatureSet>());
    }
    FeatureSet out;
    std::stringstream ss(spec);
    for (std::string cell; std::getline(ss, cell, ',');) {
        if (cell.empty()) continue;
        try {
            out.push_back(std::stoul(cell));
        } catch (const std::exception&) {
            throw ConfigError("--fixed: bad index '" + cell + "'");
        }
    }
    return make_set(std::move(out));
}

struct Problem {
    Network net;
    MarginSpec spec;
    PerturbationDomain dom;  // explanation features fixed
    FeatureSet fixed;
};

Problem load_problem(const Options& o, const PipelineConfig& cfg) {
    Network net = load_network(o.network);
    const Vector x = read_input(o.input);
    check_input(net, x);
    MarginSpec spec(true_class(net, x, o.label), net.num_classes());
    FeatureSet fixed = read_fixed(o.fixed);
    for (std::size_t j : fixed)
        if (j >= x.size()) throw std::out_of_range("fixed feature " + std::to_string(j) + " out of range");
    auto dom = PerturbationDomain::linf_ball(x, o.epsilon, cfg.bounds.clip);
    dom.fix(fixed);
    return {std::move(net), spec, std::move(dom), std::move(fixed)};
}

int cmd_verify(const Options& o) {
    const PipelineConfig cfg = pipeline_config(o);
    const Problem p = load_problem(o, cfg);
    const Vector ub = concretize_upper(crown_margin_bounds(p.net, p.dom, p.spec, cfg.bounds), p.dom);
    const double value = ub.size() ? ub.maxCoeff() : -std::numeric_limits<double>::infinity();
    nlohmann::json j{{"certified", value <= 0.0}, {"phi", value}, {"fixed", p.fixed}, {"true_class", p.spec.true_class}};
    j["margin_upper_bounds"] = std::vector<double>(ub.data(), ub.data() + ub.size());
    emit(o.out, j);
    return Exit::ok;
}

int cmd_oracle_verify(const Options& o) {
    const PipelineConfig cfg = pipeline_config(o);
    const Problem p = load_problem(o, cfg);
    OracleConfig oc;
    oc.node_budget = o.node_budget;
    oc.tol = o.tol;
    oc.attack.seed = o.seed;
    nlohmann::json j = to_json(verify_complete(p.net, p.dom, p.spec, oc));
    j["fixed"] = p.fixed;
    j["true_class"] = p.spec.true_class;
    emit(o.out, j);
    return Exit::ok;
}

int cmd_render(const Options& o) {
    std::ifstream in(o.report);
    if (!in) throw std::ios_base::failure("cannot open report '" + o.report + "'");
    nlohmann::json r;
    try {
        in >> r;
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError("report '" + o.report + "': " + e.what());
    }
    if (!r.contains("explanation") || !r.contains("input_shape")) throw ParseError("report lacks 'explanation' or 'input_shape'");
    const auto shape = r["input_shape"].get<Shape>();
    const auto expl = make_set(r["explanation"].get<FeatureSet>());
    if (fs::path(o.out).extension() == ".ppm") {
        const std::string source = !o.input.empty() ? o.input : r.value("input", std::string());
        if (source.empty()) throw ConfigError("overlay rendering needs --input");
        write_pnm(o.out, render_overlay(shape, read_input(source), expl));
    } else {
        write_pnm(o.out, render_mask(shape, expl));
    }
    return Exit::ok;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Abstract minimal explanations for ReLU classifiers"};
    app.require_subcommand(1);
    Options o;

    auto* explain = app.add_subcommand("explain", "explain one input");
    add_model_options(explain, o);
    add_pipeline_options(explain, o);
    explain->add_option("--input", o.input, "input file (.pgm, .ppm, .json, .csv)")->required();
    explain->add_option("--out", o.out, "report path (default: stdout)");
    explain->add_option("--mask", o.mask, "write a PGM mask of the explanation");

    auto* eval = app.add_subcommand("eval", "explain every sample of a dataset directory");
    add_model_options(eval, o);
    add_pipeline_options(eval, o);
    eval->add_option("--dataset", o.dataset, "directory of inputs")->required();
    eval->add_option("--labels", o.labels, "CSV of sample,label (default: <dataset>/labels.csv)");
    eval->add_option("--out", o.out, "output directory")->required();
    eval->add_option("--threads", o.threads, "worker count (default: FAME_THREADS or all cores)");

    auto* verify = app.add_subcommand("verify", "check a fixed set with the abstract certificate");
    add_model_options(verify, o);
    verify->add_option("--input", o.input)->required();
    verify->add_option("--fixed", o.fixed, "report JSON or comma-separated indices kept fixed")->required();
    verify->add_option("--out", o.out);

    auto* oracle = app.add_subcommand("oracle-verify", "decide a fixed set with the complete verifier");
    add_model_options(oracle, o);
    oracle->add_option("--input", o.input)->required();
    oracle->add_option("--fixed", o.fixed, "report JSON or comma-separated indices kept fixed")->required();
    oracle->add_option("--out", o.out);
    oracle->add_option("--node-budget", o.node_budget);
    oracle->add_option("--tol", o.tol, "smallest box width that is split");
    oracle->add_option("--seed", o.seed);

    auto* render = app.add_subcommand("render", "draw a report as a PGM mask or PPM overlay");
    render->add_option("--report", o.report)->required();
    render->add_option("--input", o.input, "input image for the PPM overlay");
    render->add_option("--out", o.out, "output .pgm or .ppm")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : Exit::config_error;
    }

    try {
        if (*explain) return cmd_explain(o);
        if (*eval) return cmd_eval(o);
        if (*verify) return cmd_verify(o);
        if (*oracle) return cmd_oracle_verify(o);
        if (*render) return cmd_render(o);
    } catch (const MisclassifiedError& e) {
        std::cerr << "fame: " << e.what() << '\n';
        return Exit::misclassified;
    } catch (const ConfigError& e) {
        std::cerr << "fame: " << e.what() << '\n';
        return Exit::config_error;
    } catch (const std::invalid_argument& e) {
        std::cerr << "fame: " << e.what() << '\n';
        return Exit::config_error;
    } catch (const std::exception& e) {
        // Unreadable files, malformed networks or inputs, out-of-range indices.
        std::cerr << "fame: " << e.what() << '\n';
        return Exit::io_error;
    }
    return Exit::ok;
}
