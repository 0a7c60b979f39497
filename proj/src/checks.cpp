#include "bdray/checks.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "bdray/simulate.hpp"

namespace bdray {

namespace {

using clock_type = std::chrono::steady_clock;

double ms_since(clock_type::time_point t0) {
    return std::chrono::duration<double, std::milli>(clock_type::now() - t0).count();
}

RateModel regular_family() { return RateModel::geometric(1.0, 2.0, 3.0); }
RateModel exit_family() { return RateModel::geometric(0.5, 1.0, 2.0); }
RateModel natural_family() { return RateModel::constant(1.0, 1.0); }

BoundaryTriple geometric_nu_triple(index_t support, double gamma, double beta) {
    BoundaryTriple t;
    t.gamma = gamma;
    t.beta = beta;
    for (index_t k = 0; k <= support; ++k) t.nu[k] = std::exp2(-static_cast<double>(k));
    return t;
}

struct Timer {
    clock_type::time_point t0 = clock_type::now();
    double ms() const { return ms_since(t0); }
};

CheckResult make_result(const char* criterion, const std::string& name, double value,
                        double bound, double ms, std::string detail = {}) {
    CheckResult r;
    r.criterion = criterion;
    r.name = name;
    r.value = value;
    r.bound = bound;
    r.pass = value <= bound;
    r.wall_ms = ms;
    r.detail = std::move(detail);
    return r;
}

// deterministic little generator for random grid functions
double lcg_uniform(std::uint64_t& s) {
    s = s * 6364136223846793005ULL + 1442695040888963407ULL;
    return static_cast<double>(s >> 11) * 0x1.0p-53;
}

std::string brief_number(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

// ---------------------------------------------------------------- criterion 1

void criterion1(std::vector<CheckResult>& out) {
    struct Case {
        const char* name;
        RateModel model;
        BoundaryKind expected;
    };
    const Case cases[] = {
        {"classify regular family", regular_family(), BoundaryKind::Regular},
        {"classify exit family", exit_family(), BoundaryKind::Exit},
        {"classify natural family", natural_family(), BoundaryKind::Natural},
    };
    for (const auto& c : cases) {
        Timer t;
        BoundaryClassification cls = classify_boundary(c.model, {.N = 60});
        double ms = t.ms();
        CheckResult r = make_result("1", c.name, ms, 1.0, ms,
                                    std::string("verdict ") + to_string(cls.kind));
        r.pass = r.pass && cls.kind == c.expected;
        out.push_back(r);
    }
    Timer t;
    BoundaryClassification cls = classify_boundary(exit_family(), {.N = 60});
    double err = std::abs(cls.sigma.partial - 2.0);
    out.push_back(make_result("1", "exit family sigma = 2", err, 1e-10, t.ms(),
                              "sigma partial " + brief_number(cls.sigma.partial)));
}

// ---------------------------------------------------------------- criterion 2

void criterion2(std::vector<CheckResult>& out) {
    Timer t;
    const RateModel models[] = {regular_family(), exit_family(), natural_family()};
    double worst_rel = 0.0;
    std::uint64_t rng = 0x9d2c5680u;
    const index_t N = 50;
    for (const auto& model : models) {
        ScaleSpeed ss = build_scale_speed(model, N);
        for (int rep = 0; rep < 100; ++rep) {
            std::vector<double> v(static_cast<size_t>(N) + 1);
            for (auto& x : v) x = 2.0 * lcg_uniform(rng) - 1.0;
            auto res = second_order_identity_check(model, GridFunction(std::move(v)), ss);
            worst_rel = std::max(worst_rel, res.rel);
        }
    }
    out.push_back(make_result("2", "second-order identity over 300 random grid functions",
                              worst_rel, 1e-12, t.ms()));

    Timer t2;
    double worst = 0.0;
    for (const auto& model : models) {
        ScaleSpeed ss = build_scale_speed(model, N);
        for (index_t k = 0; k <= N; ++k)
            worst = std::max(worst, std::abs(ss.dc(k) * 2.0 * model.b(k) * ss.mu(k) - 1.0));
    }
    out.push_back(make_result("2", "scale-speed product identity", worst, 1e-14, t2.ms()));
}

// ---------------------------------------------------------------- criterion 3

void criterion3(std::vector<CheckResult>& out) {
    Timer t;
    RateModel model = regular_family();
    const index_t N = 200;
    ScaleSpeed ss = build_scale_speed(model, N);
    ResolventWorkspace ws(model, ss);

    struct Named {
        std::string name;
        BoundaryTriple triple;
    };
    std::vector<Named> triples = {
        {"minimal", BoundaryTriple::minimal()},
        {"delta0-doob", BoundaryTriple::delta(0)},
        {"elastic(0,1,1)", [] {
             BoundaryTriple b;
             b.gamma = 1.0;
             b.beta = 1.0;
             return b;
         }()},
        {"geometric-nu(0.5,1)", geometric_nu_triple(60, 0.5, 1.0)},
    };

    double worst_eq = 0.0, worst_pos = 0.0, worst_rowsum = 0.0;
    double honesty = 0.0, sym_zero_nu = 0.0, min_sym_violation = 1e300, doob_equiv = 0.0;
    for (const auto& [name, triple] : triples) {
        ResolventEvaluation e1 = wang_yang_resolvent(ws, triple, 1.0);
        ResolventEvaluation e2 = wang_yang_resolvent(ws, triple, 2.0);
        worst_eq = std::max(worst_eq, verify_resolvent_equation(e1, e2, 20));

        worst_pos = std::max(worst_pos, -e1.psi.minCoeff());
        worst_rowsum = std::max(worst_rowsum, (e1.alpha * e1.row_sums).maxCoeff() - 1.0);

        if (triple.gamma == 0.0 && !triple.is_minimal())
            for (index_t i = 0; i <= N - 20; ++i)
                honesty = std::max(honesty, std::abs(e1.alpha * e1.row_sums(i) - 1.0));

        double defect = 0.0;
        for (index_t i = 0; i <= N; ++i)
            for (index_t j = i + 1; j <= N; ++j)
                defect = std::max(defect,
                                  std::abs(ss.mu(i) * e1.psi(i, j) - ss.mu(j) * e1.psi(j, i)));
        if (triple.nu.empty())
            sym_zero_nu = std::max(sym_zero_nu, defect);
        else
            min_sym_violation = std::min(min_sym_violation, defect);

        if (!triple.is_minimal() && triple.beta == 0.0) {
            // the (B.3)-equivalent returning distribution
            double total = triple.nu_total() + triple.gamma;
            ReturnDistribution pi;
            for (const auto& [k, w] : triple.nu) pi.atoms[k] = w / total;
            pi.dead = triple.gamma / total;
            ResolventEvaluation doob = doob_resolvent(ws, pi, 1.0);
            doob_equiv = std::max(doob_equiv, (doob.psi - e1.psi).cwiseAbs().maxCoeff());
        }
    }
    double ms = t.ms();
    out.push_back(make_result("3", "resolvent equation residual (4 triples)", worst_eq, 1e-5, ms));
    out.push_back(make_result("3", "entries nonnegative", worst_pos, 1e-12, ms));
    out.push_back(make_result("3", "alpha row sums <= 1", worst_rowsum, 1e-8, ms));
    out.push_back(make_result("3", "honesty when gamma = 0", honesty, 1e-6, ms));
    out.push_back(make_result("3", "mu-symmetry when nu = 0", sym_zero_nu, 1e-8, ms));
    {
        CheckResult r = make_result("3", "mu-symmetry violated when nu > 0", 0.0, 0.0, ms);
        r.value = min_sym_violation;
        r.bound = 1e-4;
        r.pass = min_sym_violation > 1e-4;
        r.detail = "violation must exceed the bound";
        out.push_back(r);
    }
    out.push_back(make_result("3", "Doob equivalence of beta = 0 triples", doob_equiv, 1e-12, ms));
    out.push_back(make_result("3", "criterion 3 runtime", ms, 10000.0, ms, "ms"));
}

// ---------------------------------------------------------------- criterion 4

void criterion4(std::vector<CheckResult>& out) {
    Timer t;
    RateModel model = regular_family();
    const index_t N = 200;
    ScaleSpeed ss = build_scale_speed(model, N);
    ResolventWorkspace ws(model, ss);

    std::vector<BoundaryTriple> triples = {
        BoundaryTriple::minimal(),
        [] {
            BoundaryTriple b;
            b.gamma = 1.0;
            b.beta = 1.0;
            return b;
        }(),
        BoundaryTriple::delta(0, 0.0, 1.0),
    };

    std::vector<GridFunction> fs;
    {
        std::vector<double> v(static_cast<size_t>(N) + 1, 0.0);
        v[0] = 1.0;
        fs.emplace_back(v);  // indicator of 0
        std::fill(v.begin(), v.end(), 0.0);
        v[5] = 1.0;
        fs.emplace_back(v);  // indicator of 5
        std::fill(v.begin(), v.end(), 1.0);
        fs.emplace_back(v);  // constant one
        for (index_t k = 0; k <= N; ++k) v[static_cast<size_t>(k)] = 1.0 / (1.0 + k);
        fs.emplace_back(v);
        std::uint64_t rng = 17;
        for (auto& x : v) x = lcg_uniform(rng);
        fs.emplace_back(v);
    }

    double worst_interior = 0.0, worst_boundary = 0.0, worst_gap = 0.0;
    for (const auto& triple : triples)
        for (const auto& f : fs) {
            auto res = verify_generator_boundary(ws, triple, 1.0, f);
            worst_interior = std::max(worst_interior, res.interior);
            worst_boundary = std::max(worst_boundary, res.boundary - res.cauchy_gap_fp);
            worst_gap = std::max(worst_gap, res.cauchy_gap_fp);
        }
    double ms = t.ms();
    out.push_back(make_result("4", "interior resolvent equation (15 cases)", worst_interior,
                              1e-10, ms));
    out.push_back(make_result("4", "boundary condition residual (15 cases)", worst_boundary, 1e-6,
                              ms, "residual minus reported Cauchy gap"));
    out.push_back(make_result("4", "criterion 4 runtime", ms, 5000.0, ms, "ms"));
}

// ---------------------------------------------------------------- criterion 5

void criterion5(std::vector<CheckResult>& out) {
    Timer t;
    RateModel model = regular_family();
    const index_t Nres = 200;
    const index_t Nsemi = 18;
    ScaleSpeed ss = build_scale_speed(model, Nres);
    ResolventWorkspace ws(model, ss);

    TruncatedGenerator gmin = TruncatedGenerator::minimal(model, Nsemi);
    LaplaceCheck cmin = laplace_crosscheck(gmin, ws, ProcessSpec::minimal(), 1.0, 0, 0, 20.0, 0.005);
    out.push_back(make_result("5", "Laplace agreement, minimal", cmin.rel_gap, 1e-3, t.ms(),
                              "resolvent N=200, semigroup N=18"));

    Timer t2;
    ProcessSpec doob = ProcessSpec::from_pi(ReturnDistribution::at_state(0));
    TruncatedGenerator gdoob = TruncatedGenerator::from_pi(model, ss, doob.pi, Nsemi);
    LaplaceCheck cdoob = laplace_crosscheck(gdoob, ws, doob, 1.0, 0, 0, 20.0, 0.005);
    out.push_back(make_result("5", "Laplace agreement, Doob(delta_0)", cdoob.rel_gap, 1e-3,
                              t2.ms(), "resolvent N=200, semigroup N=18"));
    out.push_back(make_result("5", "criterion 5 runtime", t.ms(), 30000.0, t.ms(), "ms"));
}

// ---------------------------------------------------------------- criterion 6

void criterion6(std::vector<CheckResult>& out, const CheckOptions& opts) {
    Timer whole;
    RateModel model = regular_family();
    ScaleSpeed ss = build_scale_speed(model, 130);
    const std::vector<double> times = {0.5, 1.0};
    const index_t istates[] = {0, 1, 2};

    struct Mode {
        std::string name;
        ProcessSpec spec;
        index_t cap;        // simulation truncation
        index_t ref_N;      // uniformization truncation
    };
    BoundaryTriple elastic;
    elastic.gamma = 1.0;
    elastic.beta = 1.0;
    std::vector<Mode> modes = {
        {"minimal", ProcessSpec::minimal(), 40, 18},
        {"doob(delta_0)", ProcessSpec::from_pi(ReturnDistribution::at_state(0)), 40, 18},
        {"elastic(0,1,1)", ProcessSpec::from_triple(elastic), 12, 12},
        {"thm-8.1(delta_0,0,1)", ProcessSpec::from_triple(BoundaryTriple::delta(0, 0.0, 1.0)), 12,
         12},
    };

    for (const auto& mode : modes) {
        Timer t;
        SimConfig cfg;
        cfg.explosion_cap = mode.cap;
        cfg.horizon = 1.0;
        cfg.paths = opts.mc_paths;
        cfg.seed = 20260809;
        cfg.jobs = opts.jobs;

        double worst_z = 0.0;
        std::ostringstream detail;
        for (index_t i : istates) {
            EnsembleCounts counts = simulate_ensemble(model, ss, mode.spec, i, cfg, times);
            TruncatedGenerator gen = TruncatedGenerator::of(model, ss, mode.spec, mode.ref_N);
            for (size_t ti = 0; ti < times.size(); ++ti) {
                TransitionEvaluation ev = uniformized_transition(gen, times[ti]);
                for (index_t j : istates) {
                    double ref = ev.p(i, j);
                    double se = std::sqrt(ref * (1.0 - ref) / static_cast<double>(cfg.paths));
                    double est = counts.estimate(ti, j).estimate;
                    double z = std::abs(est - ref) / std::max(se, 1e-9);
                    worst_z = std::max(worst_z, z);
                }
            }
        }
        out.push_back(make_result("6", "Monte Carlo vs uniformization, " + mode.name,
                                  worst_z, 3.0, t.ms(), "worst |z| over 3x3x2 grid"));
        (void)detail;
    }

    // determinism: identical seeds give identical counts
    {
        Timer t;
        SimConfig cfg;
        cfg.explosion_cap = 40;
        cfg.horizon = 1.0;
        cfg.paths = 2000;
        cfg.seed = 7;
        cfg.jobs = opts.jobs;
        auto c1 = simulate_ensemble(model, ss, modes[1].spec, 0, cfg, times);
        cfg.jobs = 1;
        auto c2 = simulate_ensemble(model, ss, modes[1].spec, 0, cfg, times);
        bool same = c1.counts == c2.counts;
        CheckResult r = make_result("6", "determinism under fixed seed", same ? 0.0 : 1.0, 0.5,
                                    t.ms(), "counts identical across worker layouts");
        out.push_back(r);
    }
    out.push_back(make_result("6", "criterion 6 runtime", whole.ms(), 120000.0, whole.ms(), "ms"));
}

// ---------------------------------------------------------------- criterion 7

void criterion7(std::vector<CheckResult>& out) {
    Timer t;
    RateModel model = regular_family();
    ScaleSpeed ss = build_scale_speed(model, 200);
    ResolventWorkspace ws(model, ss);

    ConvergenceConfig cfg;
    cfg.schedule = {5, 10, 20, 40};
    cfg.alphas = {1.0};
    cfg.j = 0;
    cfg.semigroup_N = 14;
    auto rows = convergence_experiment(ws, geometric_nu_triple(100, 0.0, 1.0), cfg);

    bool decreasing = true, decreasing_p = true;
    for (size_t m = 1; m < rows.size(); ++m) {
        decreasing = decreasing && rows[m].sup_gap_resolvent < rows[m - 1].sup_gap_resolvent;
        decreasing_p = decreasing_p && rows[m].sup_gap_transition <= rows[m - 1].sup_gap_transition;
    }
    double ms = t.ms();
    {
        CheckResult r = make_result("7", "resolvent sup-gaps strictly decreasing",
                                    decreasing ? 0.0 : 1.0, 0.5, ms);
        out.push_back(r);
    }
    out.push_back(make_result("7", "resolvent sup-gap at n = 40", rows.back().sup_gap_resolvent,
                              1e-4, ms));
    {
        CheckResult r = make_result("7", "transition sup-gaps decreasing",
                                    decreasing_p ? 0.0 : 1.0, 0.5, ms);
        out.push_back(r);
    }
    out.push_back(make_result("7", "criterion 7 runtime", ms, 60000.0, ms, "ms"));
}

// ---------------------------------------------------------------- criterion 8

void criterion8(std::vector<CheckResult>& out) {
    Timer t;
    RateModel model = regular_family();
    ScaleSpeed ss = build_scale_speed(model, 200);
    ResolventWorkspace ws(model, ss);
    const std::vector<double> alphas = {1e3, 3e3, 1e4, 3e4, 1e5};

    std::vector<ProcessSpec> specs = {
        ProcessSpec::minimal(),
        ProcessSpec::from_triple(BoundaryTriple::delta(0)),
        ProcessSpec::from_triple([] {
            BoundaryTriple b;
            b.gamma = 1.0;
            b.beta = 1.0;
            return b;
        }()),
    };
    double worst_rel = 0.0, worst_far = 0.0;
    double q_max = 0.0;
    for (index_t k = 0; k <= 4; ++k) q_max = std::max(q_max, model.q(k));
    const std::pair<index_t, index_t> near[] = {{0, 0}, {1, 0}, {0, 1}};
    for (const auto& spec : specs) {
        for (auto [i, j] : near) {
            DensityRecovery rec = recover_density_matrix(ws, spec, alphas, i, j);
            worst_rel = std::max(worst_rel,
                                 std::abs(rec.estimate - rec.target) / std::abs(rec.target));
        }
        DensityRecovery far = recover_density_matrix(ws, spec, alphas, 0, 3);
        worst_far = std::max(worst_far, std::abs(far.estimate));
    }
    double ms = t.ms();
    out.push_back(make_result("8", "density recovery near-diagonal within 1%", worst_rel, 0.01,
                              ms, "3 triples x 3 entries"));
    out.push_back(make_result("8", "density recovery far entries ~ 0", worst_far, 1e-3 * q_max,
                              ms));
}

}  // namespace

std::vector<CheckResult> run_acceptance_checks(const CheckOptions& opts) {
    std::vector<CheckResult> out;
    criterion1(out);
    criterion2(out);
    criterion3(out);
    criterion4(out);
    criterion5(out);
    if (!opts.skip_monte_carlo) criterion6(out, opts);
    criterion7(out);
    criterion8(out);
    return out;
}

std::string format_check_line(const CheckResult& r) {
    std::ostringstream os;
    os << (r.pass ? "PASS" : "FAIL") << " [criterion " << r.criterion << "] " << r.name
       << ": value " << r.value << " vs bound " << r.bound;
    if (!r.detail.empty()) os << " (" << r.detail << ")";
    return os.str();
}

}  // namespace bdray
