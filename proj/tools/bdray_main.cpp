#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "bdray/checks.hpp"
#include "bdray/io.hpp"
#include "bdray/simulate.hpp"

namespace {

using namespace bdray;

int env_jobs() {
    const char* v = std::getenv("BD_RAY_JOBS");
    if (!v) return 0;
    return std::atoi(v);
}

struct OutputFile {
    std::string path;
    std::ofstream stream;
    explicit OutputFile(const std::string& p) : path(p), stream(p, std::ios::binary) {
        if (!stream) fail(errc::input_error, "cannot write output file: " + p);
    }
};

void write_manifest(const std::string& command, const std::vector<std::string>& inputs,
                    const std::string& config_echo, const std::vector<std::string>& outputs,
                    double wall_ms) {
    if (outputs.empty()) return;
    RunManifest man;
    man.command = command;
    for (const auto& in : inputs) man.inputs.emplace_back(in, fnv1a64_file(in));
    man.config_echo = config_echo;
    man.version = kToolVersion;
    man.wall_ms = wall_ms;
    man.outputs = outputs;
    man.write(outputs.front() + ".manifest.json");
}

ProcessSpec make_spec(const std::string& triple_path, const std::string& pi_path,
                      const std::string& mode_hint) {
    if (!pi_path.empty()) return ProcessSpec::from_pi(load_return_distribution(pi_path));
    if (!triple_path.empty()) {
        BoundaryTriple t = load_triple(triple_path);
        if (t.is_minimal()) return ProcessSpec::minimal();
        return ProcessSpec::from_triple(std::move(t));
    }
    if (mode_hint == "doob")
        fail(errc::input_error, "doob mode needs --pi");
    if (mode_hint == "feller")
        fail(errc::input_error, "feller mode needs --triple");
    return ProcessSpec::minimal();
}

// ----------------------------------------------------------------- classify

int cmd_classify(const std::string& model_path, index_t N, double threshold, index_t window,
                 bool as_json) {
    RateModel model = load_model(model_path);
    ClassifyConfig cfg;
    cfg.N = N;
    cfg.threshold = threshold;
    cfg.window = window;
    BoundaryClassification cls = classify_boundary(model, cfg);

    auto series_text = [](const SeriesVerdict& v) {
        std::ostringstream os;
        switch (v.state) {
            case SeriesVerdict::State::Finite: os << "finite, value " << v.partial; break;
            case SeriesVerdict::State::Diverged:
                os << "diverged at " << v.at << " (partial " << v.partial << ")";
                break;
            case SeriesVerdict::State::Inconclusive:
                os << "inconclusive (partial " << v.partial << ")";
                break;
        }
        os << "; " << v.reason;
        return os.str();
    };

    if (as_json) {
        std::cout << "{\"verdict\":\"" << to_string(cls.kind) << "\",\"N\":" << cls.truncation
                  << ",\"sigma\":{\"state\":\"" << series_text(cls.sigma)
                  << "\",\"partial\":" << format_double(cls.sigma.partial)
                  << "},\"lambda\":{\"state\":\"" << series_text(cls.lambda)
                  << "\",\"partial\":" << format_double(cls.lambda.partial) << "}}\n";
    } else {
        std::cout << "model: " << model.describe() << "\n";
        std::cout << "truncation N = " << cls.truncation << "\n";
        std::cout << "sigma:  " << series_text(cls.sigma) << "\n";
        std::cout << "lambda: " << series_text(cls.lambda) << "\n";
        std::cout << "boundary verdict: " << to_string(cls.kind) << "\n";
    }
    return cls.kind == BoundaryKind::Inconclusive ? 3 : 0;
}

// ----------------------------------------------------------------- resolvent

int cmd_resolvent(const std::string& model_path, const std::string& triple_path,
                  std::vector<double> alphas, index_t N, const std::string& out_path,
                  const std::string& config_echo) {
    auto t0 = std::chrono::steady_clock::now();
    RateModel model = load_model(model_path);
    BoundaryTriple triple =
        triple_path.empty() ? BoundaryTriple::minimal() : load_triple(triple_path);
    if (alphas.empty()) alphas = {1.0};
    ScaleSpeed ss = build_scale_speed(model, N);
    ResolventWorkspace ws(model, ss);

    std::vector<ResolventEvaluation> evals;
    for (double a : alphas) evals.push_back(wang_yang_resolvent(ws, triple, a));

    std::vector<std::string> outputs;
    if (!out_path.empty()) {
        OutputFile out(out_path);
        out.stream << "i,j,alpha,psi\n";
        for (const auto& ev : evals)
            for (index_t i = 0; i <= ev.N; ++i)
                for (index_t j = 0; j <= ev.N; ++j)
                    out.stream << i << ',' << j << ',' << format_double(ev.alpha) << ','
                               << format_double(ev.psi(i, j)) << "\n";
        outputs.push_back(out_path);
    }

    // verification summary
    auto report = [](const std::string& name, double value, double tol, bool invert = false) {
        bool ok = invert ? value > tol : value <= tol;
        std::cout << (ok ? "PASS " : "FAIL ") << name << ": " << value
                  << (invert ? " (must exceed " : " (tolerance ") << tol << ")\n";
    };
    for (size_t m = 1; m < evals.size(); ++m) {
        std::ostringstream name;
        name << "resolvent equation alpha=" << evals[m - 1].alpha << "/" << evals[m].alpha;
        report(name.str(), verify_resolvent_equation(evals[m - 1], evals[m], 20), 1e-5);
    }
    const ResolventEvaluation& e0 = evals.front();
    double worst_neg = -e0.psi.minCoeff();
    report("entries nonnegative", worst_neg, 1e-12);
    double rowsum_excess = (e0.alpha * e0.row_sums).maxCoeff() - 1.0;
    report("alpha row sums <= 1", rowsum_excess, 1e-8);
    if (!triple.is_minimal() && triple.gamma == 0.0) {
        double h = 0.0;
        for (index_t i = 0; i + 20 <= e0.N; ++i)
            h = std::max(h, std::abs(e0.alpha * e0.row_sums(i) - 1.0));
        report("honesty (gamma = 0)", h, 1e-6);
    }
    {
        double defect = 0.0;
        for (index_t i = 0; i <= e0.N; ++i)
            for (index_t j = i + 1; j <= e0.N; ++j)
                defect = std::max(defect,
                                  std::abs(ss.mu(i) * e0.psi(i, j) - ss.mu(j) * e0.psi(j, i)));
        if (triple.nu.empty())
            report("mu-symmetry (nu = 0)", defect, 1e-8);
        else
            report("mu-symmetry violation (nu > 0)", defect, 1e-4, true);
    }
    if (!triple.is_minimal() && triple.beta == 0.0) {
        double total = triple.nu_total() + triple.gamma;
        ReturnDistribution pi;
        for (const auto& [k, w] : triple.nu) pi.atoms[k] = w / total;
        pi.dead = triple.gamma / total;
        ResolventEvaluation doob = doob_resolvent(ws, pi, e0.alpha);
        report("Doob returning-distribution equivalence", (doob.psi - e0.psi).cwiseAbs().maxCoeff(),
               1e-12);
    }

    double wall =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    std::vector<std::string> inputs = {model_path};
    if (!triple_path.empty()) inputs.push_back(triple_path);
    write_manifest("resolvent", inputs, config_echo, outputs, wall);
    return 0;
}

// ----------------------------------------------------------------- transition

int cmd_transition(const std::string& model_path, const std::string& triple_path,
                   const std::string& pi_path, std::vector<double> times, index_t N,
                   const std::string& out_path, const std::string& config_echo) {
    auto t0 = std::chrono::steady_clock::now();
    RateModel model = load_model(model_path);
    ProcessSpec spec = make_spec(triple_path, pi_path, "");
    ScaleSpeed ss = build_scale_speed(model, std::max<index_t>(N + 2, 2 * N));
    TruncatedGenerator gen = TruncatedGenerator::of(model, ss, spec, N);
    if (times.empty()) times = {1.0};

    std::vector<std::string> outputs;
    OutputFile out(out_path.empty() ? "transition.csv" : out_path);
    out.stream << "t,i,j,p\n";
    for (double t : times) {
        TransitionEvaluation ev = uniformized_transition(gen, t);
        for (index_t i = 0; i <= gen.N(); ++i)
            for (index_t j = 0; j <= gen.N(); ++j)
                out.stream << format_double(t) << ',' << i << ',' << j << ','
                           << format_double(ev.p(i, j)) << "\n";
        std::cout << "t=" << t << ": rate bound " << ev.lambda << ", series " << ev.series_terms
                  << " terms, split depth " << ev.split_depth << ", error bound "
                  << ev.error_bound << "\n";
    }
    outputs.push_back(out.path);

    double wall =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    std::vector<std::string> inputs = {model_path};
    if (!triple_path.empty()) inputs.push_back(triple_path);
    if (!pi_path.empty()) inputs.push_back(pi_path);
    write_manifest("transition", inputs, config_echo, outputs, wall);
    return 0;
}

// ----------------------------------------------------------------- simulate

int cmd_simulate(const std::string& model_path, const std::string& mode,
                 const std::string& triple_path, const std::string& pi_path, index_t start,
                 std::uint64_t paths, std::uint64_t seed, std::vector<double> times, index_t cap,
                 index_t ref_N, index_t jmax, int jobs, const std::string& out_path,
                 const std::string& dump_path, const std::string& config_echo) {
    auto t0 = std::chrono::steady_clock::now();
    RateModel model = load_model(model_path);
    if (mode != "minimal" && mode != "doob" && mode != "feller")
        fail(errc::input_error, "mode must be one of minimal|doob|feller");
    ProcessSpec spec = make_spec(mode == "feller" ? triple_path : "",
                                 mode == "doob" ? pi_path : "", mode);
    if (mode == "feller" && spec.kind != ProcessSpec::Kind::Triple)
        fail(errc::input_error, "feller mode needs a non-minimal --triple");

    if (times.empty()) times = {0.5, 1.0};
    double horizon = *std::max_element(times.begin(), times.end());
    ScaleSpeed ss = build_scale_speed(model, cap + 80);

    SimConfig cfg;
    cfg.explosion_cap = cap;
    cfg.horizon = horizon;
    cfg.paths = paths;
    cfg.seed = seed;
    cfg.jobs = jobs;

    EnsembleCounts counts = simulate_ensemble(model, ss, spec, start, cfg, times);

    // co-emitted uniformization reference on the same process
    index_t gen_N = spec.kind == ProcessSpec::Kind::Triple ? cap : ref_N;
    TruncatedGenerator gen = TruncatedGenerator::of(model, ss, spec, gen_N);

    std::vector<std::string> outputs;
    OutputFile out(out_path.empty() ? "estimates.csv" : out_path);
    out.stream << "i,j,t,estimate,stderr,n_paths,reference,verdict\n";
    for (size_t ti = 0; ti < counts.times.size(); ++ti) {
        TransitionEvaluation ev = uniformized_transition(gen, counts.times[ti]);
        for (index_t j = 0; j <= std::min(jmax, cap - 1); ++j) {
            TransitionEstimate est = counts.estimate(ti, j);
            double ref = ev.p(start, j);
            double se_ref = std::sqrt(ref * (1.0 - ref) / static_cast<double>(paths));
            bool ok = std::abs(est.estimate - ref) <= 3.0 * std::max(se_ref, 1e-9);
            out.stream << start << ',' << j << ',' << format_double(counts.times[ti]) << ','
                       << format_double(est.estimate) << ',' << format_double(est.stderr_) << ','
                       << est.n_paths << ',' << format_double(ref) << ','
                       << (ok ? "PASS" : "FAIL") << "\n";
        }
    }
    outputs.push_back(out.path);
    if (counts.bailed_out > 0)
        std::cout << "warning: " << counts.bailed_out
                  << " paths hit the event cap (TruncationBailout) and were kept at their last "
                     "state\n";

    if (!dump_path.empty()) {
        OutputFile dump(dump_path);
        SimConfig one = cfg;
        one.paths = 1;
        PathRecord rec;
        if (spec.kind == ProcessSpec::Kind::Doob)
            rec = simulate_doob(model, ss, spec.pi, start, one, 0);
        else if (spec.kind == ProcessSpec::Kind::Triple && !spec.triple.is_minimal())
            rec = simulate_feller(model, ss, spec.triple, start, one, 0);
        else
            rec = simulate_minimal(model, ss, start, one, 0);
        dump.stream << "0," << start << "\n";
        for (const auto& e : rec.events) {
            dump.stream << format_double(e.time) << ',';
            switch (e.kind) {
                case PathEvent::Kind::Jump: dump.stream << e.state; break;
                case PathEvent::Kind::Fly:
                    dump.stream << "FLY->" << (e.state < 0 ? std::string("KILL")
                                                           : std::to_string(e.state));
                    break;
                case PathEvent::Kind::Kill: dump.stream << "KILL"; break;
            }
            dump.stream << "\n";
        }
        outputs.push_back(dump.path);
    }

    double wall =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    std::vector<std::string> inputs = {model_path};
    if (!triple_path.empty() && mode == "feller") inputs.push_back(triple_path);
    if (!pi_path.empty() && mode == "doob") inputs.push_back(pi_path);
    write_manifest("simulate", inputs, config_echo, outputs, wall);
    return 0;
}

// ----------------------------------------------------------------- converge

int cmd_converge(const std::string& model_path, const std::string& triple_path,
                 std::vector<index_t> schedule, std::vector<double> alphas, index_t N,
                 index_t semigroup_N, index_t j, const std::string& out_path,
                 const std::string& config_echo) {
    auto t0 = std::chrono::steady_clock::now();
    RateModel model = load_model(model_path);
    BoundaryTriple target = load_triple(triple_path);
    ScaleSpeed ss = build_scale_speed(model, N);
    ResolventWorkspace ws(model, ss);

    ConvergenceConfig cfg;
    if (!schedule.empty()) cfg.schedule = schedule;
    if (!alphas.empty()) cfg.alphas = alphas;
    cfg.j = j;
    cfg.semigroup_N = semigroup_N;
    auto rows = convergence_experiment(ws, target, cfg);

    std::vector<std::string> outputs;
    OutputFile out(out_path.empty() ? "convergence.csv" : out_path);
    out.stream << "n,alpha,j,sup_gap_resolvent,sup_gap_transition\n";
    for (const auto& r : rows)
        out.stream << r.n << ',' << format_double(r.alpha) << ',' << r.j << ','
                   << format_double(r.sup_gap_resolvent) << ','
                   << format_double(r.sup_gap_transition) << "\n";
    outputs.push_back(out.path);

    double wall =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    write_manifest("converge", {model_path, triple_path}, config_echo, outputs, wall);
    return 0;
}

// ----------------------------------------------------------------- verify

int cmd_verify(bool skip_mc, std::uint64_t paths, int jobs) {
    CheckOptions opts;
    opts.skip_monte_carlo = skip_mc;
    opts.mc_paths = paths;
    opts.jobs = jobs;
    auto results = run_acceptance_checks(opts);
    bool all = true;
    for (const auto& r : results) {
        std::cout << format_check_line(r) << "\n";
        all = all && r.pass;
    }
    std::cout << (all ? "ALL CHECKS PASSED\n" : "CHECK FAILURES PRESENT\n");
    return all ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"birth-death process calculus: classification, resolvents, semigroups, "
                 "simulation"};
    app.require_subcommand(1);
    int jobs = env_jobs();

    // classify
    auto* classify = app.add_subcommand("classify", "boundary classification of a rate model");
    std::string model_path, triple_path, pi_path, out_path, dump_path, mode = "minimal";
    index_t N = 200, window = 8, cap = 40, ref_N = 18, semigroup_N = 14, start = 0, jmax = 5,
            jcol = 0;
    double threshold = 1e8;
    bool as_json = false;
    classify->add_option("--model", model_path)->required();
    classify->add_option("--N", N);
    classify->add_option("--threshold", threshold);
    classify->add_option("--window", window);
    classify->add_flag("--json", as_json);

    // resolvent
    auto* resolvent = app.add_subcommand("resolvent", "resolvent matrix and verification summary");
    std::vector<double> alphas, times;
    resolvent->add_option("--model", model_path)->required();
    resolvent->add_option("--triple", triple_path);
    resolvent->add_option("--alpha", alphas);
    resolvent->add_option("--N", N);
    resolvent->add_option("--out", out_path);

    // transition
    auto* transition = app.add_subcommand("transition", "uniformized transition matrices");
    transition->add_option("--model", model_path)->required();
    transition->add_option("--triple", triple_path);
    transition->add_option("--pi", pi_path);
    transition->add_option("--t", times);
    transition->add_option("--N", N);
    transition->add_option("--out", out_path);

    // simulate
    auto* simulate = app.add_subcommand("simulate", "Monte Carlo paths with co-emitted references");
    std::uint64_t paths = 10000, seed = 1;
    simulate->add_option("--model", model_path)->required();
    simulate->add_option("--mode", mode)->check(CLI::IsMember({"minimal", "doob", "feller"}));
    simulate->add_option("--triple", triple_path);
    simulate->add_option("--pi", pi_path);
    simulate->add_option("--start", start);
    simulate->add_option("--paths", paths);
    simulate->add_option("--seed", seed);
    simulate->add_option("--t", times);
    simulate->add_option("--cap", cap);
    simulate->add_option("--ref-N", ref_N);
    simulate->add_option("--jmax", jmax);
    simulate->add_option("--jobs", jobs);
    simulate->add_option("--out", out_path);
    simulate->add_option("--dump-path", dump_path);

    // converge
    auto* converge = app.add_subcommand("converge", "approximation-by-truncation experiment");
    std::vector<index_t> schedule;
    converge->add_option("--model", model_path)->required();
    converge->add_option("--triple", triple_path)->required();
    converge->add_option("--schedule", schedule);
    converge->add_option("--alphas", alphas);
    converge->add_option("--N", N);
    converge->add_option("--semigroup-N", semigroup_N);
    converge->add_option("--j", jcol);
    converge->add_option("--out", out_path);

    // verify
    auto* verify = app.add_subcommand("verify", "run the full property suite");
    bool skip_mc = false;
    std::uint64_t verify_paths = 100000;
    verify->add_flag("--skip-mc", skip_mc);
    verify->add_option("--paths", verify_paths);
    verify->add_option("--jobs", jobs);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 2;
    }

    try {
        auto parsed_subs = app.get_subcommands();
        std::string echo =
            parsed_subs.empty() ? std::string() : parsed_subs.front()->config_to_str(true, false);
        if (classify->parsed()) return cmd_classify(model_path, N, threshold, window, as_json);
        if (resolvent->parsed())
            return cmd_resolvent(model_path, triple_path, alphas, N, out_path, echo);
        if (transition->parsed())
            return cmd_transition(model_path, triple_path, pi_path, times, N, out_path, echo);
        if (simulate->parsed())
            return cmd_simulate(model_path, mode, triple_path, pi_path, start, paths, seed, times,
                                cap, ref_N, jmax, jobs, out_path, dump_path, echo);
        if (converge->parsed())
            return cmd_converge(model_path, triple_path, schedule, alphas, N, semigroup_N, jcol,
                                out_path, echo);
        if (verify->parsed()) return cmd_verify(skip_mc, verify_paths, jobs);
    } catch (const bdray::error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(e.code());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
