#include "bdray/semigroup.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>

namespace bdray {

namespace {

std::pair<std::vector<double>, std::vector<double>> rate_copies(const RateModel& model,
                                                                index_t N) {
    std::vector<double> a(static_cast<size_t>(N) + 1), b(static_cast<size_t>(N) + 1);
    for (index_t k = 0; k <= N; ++k) {
        a[static_cast<size_t>(k)] = model.a(k);
        b[static_cast<size_t>(k)] = model.b(k);
    }
    return {std::move(a), std::move(b)};
}

}  // namespace

TruncatedGenerator TruncatedGenerator::minimal(const RateModel& model, index_t N) {
    if (N < 2) fail(errc::input_error, "generator: need N >= 2");
    TruncatedGenerator g;
    g.model_ = &model;
    g.N_ = N;
    g.mode_ = ClosureMode::Absorbing;
    std::tie(g.a_, g.b_) = rate_copies(model, N);
    return g;
}

TruncatedGenerator TruncatedGenerator::from_triple(const RateModel& model, const ScaleSpeed& ss,
                                                   const BoundaryTriple& triple, index_t N) {
    if (triple.is_minimal()) return minimal(model, N);
    if (N < 2 || ss.N() < N) fail(errc::input_error, "generator: need N >= 2 and scale data to N");
    BoundaryKind kind = classify_boundary(model, {.N = ss.N()}).kind;
    auto rep = check_admissibility(triple, ss, kind);
    if (!rep.admissible) fail(errc::inadmissible_triple, "generator: " + rep.violated);

    TruncatedGenerator g;
    g.model_ = &model;
    g.N_ = N;
    g.mode_ = ClosureMode::BoundaryAugmented;
    std::tie(g.a_, g.b_) = rate_copies(model, N);
    g.jumps_.assign(static_cast<size_t>(N) + 1, 0.0);
    for (const auto& [k, w] : triple.nu) {
        if (k <= N - 1)
            g.jumps_[static_cast<size_t>(k)] += w;
        else
            g.nu_tail_ += w;
    }
    g.kill_ = triple.gamma;
    if (triple.beta > 0) g.reflect_ = 0.5 * triple.beta / ss.dc(N);
    return g;
}

TruncatedGenerator TruncatedGenerator::from_pi(const RateModel& model, const ScaleSpeed& ss,
                                               const ReturnDistribution& pi, index_t N,
                                               double scale) {
    pi.validate();
    if (N < 2 || ss.N() < N) fail(errc::input_error, "generator: need N >= 2 and scale data to N");
    if (scale <= 0) scale = std::max(model.q(N), 1.0);

    TruncatedGenerator g;
    g.model_ = &model;
    g.N_ = N;
    g.mode_ = ClosureMode::BoundaryAugmented;
    std::tie(g.a_, g.b_) = rate_copies(model, N);
    g.jumps_.assign(static_cast<size_t>(N) + 1, 0.0);
    for (const auto& [k, w] : pi.atoms) {
        if (k <= N - 1)
            g.jumps_[static_cast<size_t>(k)] += scale * w;
        else
            g.nu_tail_ += w;
    }
    g.kill_ = scale * pi.dead;
    return g;
}

TruncatedGenerator TruncatedGenerator::of(const RateModel& model, const ScaleSpeed& ss,
                                          const ProcessSpec& spec, index_t N) {
    switch (spec.kind) {
        case ProcessSpec::Kind::Minimal: return minimal(model, N);
        case ProcessSpec::Kind::Triple: return from_triple(model, ss, spec.triple, N);
        case ProcessSpec::Kind::Doob: return from_pi(model, ss, spec.pi, N);
    }
    fail(errc::input_error, "generator: bad spec");
}

double TruncatedGenerator::max_rate() const {
    double m = 0.0;
    for (index_t k = 0; k <= N_; ++k)
        m = std::max(m, a_[static_cast<size_t>(k)] + b_[static_cast<size_t>(k)]);
    if (mode_ == ClosureMode::BoundaryAugmented) {
        double rb = reflect_ + kill_;
        for (double w : jumps_) rb += w;
        m = std::max(m, rb);
    }
    return m;
}

double TruncatedGenerator::rate(index_t from, index_t to) const {
    index_t B = boundary_state();
    if (from == to) return 0.0;
    if (from <= N_) {
        if (to == from - 1) return a_[static_cast<size_t>(from)];
        if (from < N_ && to == from + 1) return b_[static_cast<size_t>(from)];
        if (from == N_ && mode_ == ClosureMode::BoundaryAugmented && to == B)
            return b_[static_cast<size_t>(N_)];
        return 0.0;
    }
    if (from == B && mode_ == ClosureMode::BoundaryAugmented) {
        double r = 0.0;
        if (to <= N_) r = jumps_[static_cast<size_t>(to)];
        if (to == N_) r += reflect_;
        return r;
    }
    return 0.0;
}

Eigen::MatrixXd TruncatedGenerator::dense() const {
    index_t d = dim();
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(d, d);
    for (index_t i = 0; i < d; ++i) {
        double out = (i <= N_) ? a_[static_cast<size_t>(i)] + b_[static_cast<size_t>(i)]
                               : reflect_ + kill_ +
                                     std::accumulate(jumps_.begin(), jumps_.end(), 0.0);
        for (index_t j = 0; j < d; ++j)
            if (i != j) G(i, j) = rate(i, j);
        G(i, i) = -out;
    }
    return G;
}

Eigen::VectorXd TruncatedGenerator::row_deficits() const {
    index_t d = dim();
    Eigen::VectorXd def = Eigen::VectorXd::Zero(d);
    for (index_t i = 0; i <= N_; ++i) {
        if (i == N_ && mode_ == ClosureMode::Absorbing) def(i) = b_[static_cast<size_t>(N_)];
    }
    if (mode_ == ClosureMode::BoundaryAugmented) def(boundary_state()) = kill_;
    return def;
}

namespace {

// Poisson weights around the mode, trimmed to mass 1 - tol; stable for huge
// means (log-domain pmf, no underflowing e^{-mean} start).
struct PoissonWindow {
    index_t lo = 0;
    std::vector<double> w;
    double tail = 0.0;
};

PoissonWindow poisson_window(double mean, double tol) {
    PoissonWindow out;
    if (mean <= 0) {
        out.w = {1.0};
        return out;
    }
    auto log_pmf = [mean](double m) { return m * std::log(mean) - mean - std::lgamma(m + 1.0); };
    index_t mode = static_cast<index_t>(mean);
    index_t lo = mode, hi = mode;
    double floor_log = log_pmf(static_cast<double>(mode)) + std::log(tol) - std::log(8.0 * (std::sqrt(mean) + 4.0));
    while (lo > 0 && log_pmf(static_cast<double>(lo - 1)) > floor_log) --lo;
    while (log_pmf(static_cast<double>(hi + 1)) > floor_log) ++hi;
    out.lo = lo;
    out.w.resize(static_cast<size_t>(hi - lo + 1));
    double mx = log_pmf(static_cast<double>(mode));
    double sum = 0.0;
    for (index_t m = lo; m <= hi; ++m) {
        double v = std::exp(log_pmf(static_cast<double>(m)) - mx);
        out.w[static_cast<size_t>(m - lo)] = v;
        sum += v;
    }
    // normalize to total mass 1: the discarded tail is folded into the bound
    for (double& v : out.w) v /= sum;
    out.tail = tol;
    return out;
}

constexpr index_t kMaxSeriesTerms = 120000;
constexpr int kMaxSplitDepth = 20;
constexpr double kLeafTarget = 512.0;

}  // namespace

TransitionEvaluation uniformized_transition(const TruncatedGenerator& gen, double t, double tol) {
    if (t < 0) fail(errc::input_error, "uniformized_transition: t must be >= 0");
    index_t d = gen.dim();
    TransitionEvaluation ev;
    ev.t = t;
    ev.N = gen.N();
    ev.mode = gen.mode();
    double lambda = gen.max_rate() * (1.0 + 1e-12) + 1e-300;
    ev.lambda = lambda;
    if (t == 0 || lambda * t < 1e-300) {
        ev.p = Eigen::MatrixXd::Identity(d, d);
        return ev;
    }

    int depth = 0;
    while (depth < kMaxSplitDepth && lambda * t / std::exp2(depth) > kLeafTarget) ++depth;
    double leaf_mean = lambda * t / std::exp2(depth);
    if (leaf_mean > static_cast<double>(kMaxSeriesTerms))
        fail(errc::numerical_failure,
             "uniformized_transition: series length exceeds the cap even after time-splitting to "
             "depth 20; reduce the truncation level (rate bound " +
                 std::to_string(lambda) + ")");

    double leaf_tol = tol / std::exp2(depth);
    PoissonWindow win = poisson_window(leaf_mean, leaf_tol);

    Eigen::MatrixXd pu = Eigen::MatrixXd::Identity(d, d) + gen.dense() / lambda;
    Eigen::MatrixXd term = Eigen::MatrixXd::Identity(d, d);
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(d, d);
    index_t hi = win.lo + static_cast<index_t>(win.w.size()) - 1;
    for (index_t m = 0; m <= hi; ++m) {
        if (m > 0) term = term * pu;
        if (m >= win.lo) acc += win.w[static_cast<size_t>(m - win.lo)] * term;
    }
    for (int s = 0; s < depth; ++s) acc = acc * acc;

    ev.p = std::move(acc);
    ev.series_terms = static_cast<int>(hi + 1);
    ev.split_depth = depth;
    ev.error_bound = tol + std::exp2(depth) * 1e-16 * static_cast<double>(d);
    return ev;
}

TransitionStepper::TransitionStepper(const TruncatedGenerator& gen, double dt, double tol)
    : dt_(dt), step_(uniformized_transition(gen, dt, tol)) {}

void TransitionStepper::advance(Eigen::RowVectorXd& row) const { row = row * step_.p; }

LaplaceCheck laplace_crosscheck(const TruncatedGenerator& gen, ResolventWorkspace& ws,
                                const ProcessSpec& spec, double alpha, index_t i, index_t j,
                                double T, double dt) {
    if (!(alpha > 0) || !(T > 0) || !(dt > 0))
        fail(errc::input_error, "laplace_crosscheck: alpha, T, dt must be > 0");
    if (alpha * T < 20.0)
        fail(errc::input_error, "laplace_crosscheck: need alpha*T >= 20 for a negligible tail");
    if (i > gen.N() || j > gen.N())
        fail(errc::input_error, "laplace_crosscheck: indices beyond the generator range");

    // Simpson needs an even number of equal steps; march the row of p with a
    // single precomputed step matrix.
    auto integrate = [&](double h) {
        auto steps = static_cast<index_t>(std::ceil(T / h));
        if (steps % 2) ++steps;
        h = T / static_cast<double>(steps);
        TransitionStepper stepper(gen, h);
        Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(gen.dim());
        row(i) = 1.0;
        double sum = row(j);  // t = 0 endpoint, weight 1
        for (index_t s = 1; s <= steps; ++s) {
            stepper.advance(row);
            double w = (s == steps) ? 1.0 : (s % 2 ? 4.0 : 2.0);
            sum += w * std::exp(-alpha * h * static_cast<double>(s)) * row(j);
        }
        return sum * h / 3.0;
    };

    LaplaceCheck out;
    double coarse = integrate(2.0 * dt);
    out.quadrature = integrate(dt);
    out.quad_error = std::abs(out.quadrature - coarse) / 15.0;
    out.tail_bound = std::exp(-alpha * T) / alpha;

    ResolventEvaluation ev = resolvent_of(ws, spec, alpha);
    out.resolvent = ev.psi(i, j);
    out.rel_gap = std::abs(out.quadrature - out.resolvent) /
                  std::max(std::abs(out.resolvent), 1e-300);
    return out;
}

namespace {

BoundaryTriple truncate_triple(const BoundaryTriple& target, index_t n, double beta_n) {
    BoundaryTriple t;
    t.gamma = target.gamma;
    t.beta = beta_n;
    for (const auto& [k, w] : target.nu)
        if (k <= n) t.nu[k] = w;
    return t;
}

}  // namespace

std::vector<ConvergenceRow> convergence_experiment(ResolventWorkspace& ws,
                                                   const BoundaryTriple& target,
                                                   const ConvergenceConfig& cfg) {
    if (ws.boundary_kind() != BoundaryKind::Regular)
        fail(errc::wrong_boundary_class,
             "convergence_experiment: the approximation scheme needs a regular boundary "
             "(strictly positive reflection parameters); got " +
                 std::string(to_string(ws.boundary_kind())));
    if (cfg.schedule.empty()) fail(errc::input_error, "convergence_experiment: empty schedule");

    const RateModel& model = ws.model();
    const ScaleSpeed& ss = ws.scale();
    index_t N = ss.N();
    index_t top = std::max<index_t>(0, N - cfg.edge_window);

    auto beta_for = [&](index_t n) {
        return target.beta > 0 ? target.beta : 1.0 / static_cast<double>(n);
    };

    // transition-level reference: target triple on the semigroup truncation
    std::vector<Eigen::MatrixXd> ref_p;
    std::vector<double> grid;
    TruncatedGenerator ref_gen = TruncatedGenerator::from_triple(
        model, ss, truncate_triple(target, cfg.semigroup_N - 1, target.beta), cfg.semigroup_N);
    if (cfg.transition_level) {
        TransitionStepper stepper(ref_gen, cfg.time_step);
        Eigen::MatrixXd p = Eigen::MatrixXd::Identity(ref_gen.dim(), ref_gen.dim());
        for (double t = cfg.time_step; t <= cfg.time_horizon + 1e-12; t += cfg.time_step) {
            p = p * stepper.step_matrix();
            ref_p.push_back(p);
            grid.push_back(t);
        }
    }

    std::vector<ConvergenceRow> rows;
    for (index_t n : cfg.schedule) {
        BoundaryTriple tn = truncate_triple(target, n, beta_for(n));
        for (double alpha : cfg.alphas) {
            ConvergenceRow row{n, alpha, cfg.j, 0.0, 0.0};
            ResolventEvaluation approx = wang_yang_resolvent(ws, tn, alpha);
            ResolventEvaluation exact = wang_yang_resolvent(ws, target, alpha);
            for (index_t i = 0; i <= top; ++i)
                row.sup_gap_resolvent = std::max(
                    row.sup_gap_resolvent, std::abs(approx.psi(i, cfg.j) - exact.psi(i, cfg.j)));

            if (cfg.transition_level) {
                TruncatedGenerator gen_n = TruncatedGenerator::from_triple(
                    model, ss, truncate_triple(tn, cfg.semigroup_N - 1, tn.beta), cfg.semigroup_N);
                TransitionStepper stepper(gen_n, cfg.time_step);
                Eigen::MatrixXd p = Eigen::MatrixXd::Identity(gen_n.dim(), gen_n.dim());
                index_t inner = std::max<index_t>(1, cfg.semigroup_N - 2);
                for (size_t g = 0; g < grid.size(); ++g) {
                    p = p * stepper.step_matrix();
                    for (index_t i = 0; i < inner; ++i)
                        row.sup_gap_transition = std::max(
                            row.sup_gap_transition, std::abs(p(i, cfg.j) - ref_p[g](i, cfg.j)));
                }
            }
            rows.push_back(row);
        }
    }
    return rows;
}

}  // namespace bdray
