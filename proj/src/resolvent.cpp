#include "bdray/resolvent.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <sstream>

namespace bdray {

double BoundaryTriple::nu_total() const {
    double s = 0.0;
    for (const auto& [k, w] : nu) s += w;
    return s;
}

BoundaryTriple BoundaryTriple::normalized() const {
    double scale = std::max({std::min(nu_total(), 1.0), gamma, beta});
    if (scale <= 0.0) return *this;
    BoundaryTriple t = *this;
    for (auto& [k, w] : t.nu) w /= scale;
    t.gamma /= scale;
    t.beta /= scale;
    return t;
}

double ReturnDistribution::atom_total() const {
    double s = 0.0;
    for (const auto& [k, w] : atoms) s += w;
    return s;
}

void ReturnDistribution::validate(double tol) const {
    if (dead < 0) fail(errc::input_error, "returning distribution: negative trap mass");
    for (const auto& [k, w] : atoms) {
        if (k < 0) fail(errc::input_error, "returning distribution: negative state index");
        if (w < 0) fail(errc::input_error, "returning distribution: negative atom");
    }
    double total = atom_total() + dead;
    if (std::abs(total - 1.0) > tol) {
        std::ostringstream os;
        os << "returning distribution: total mass " << total << " is not 1";
        fail(errc::input_error, os.str());
    }
}

AdmissibilityReport check_admissibility(const BoundaryTriple& triple, const ScaleSpeed& ss,
                                        BoundaryKind kind) {
    AdmissibilityReport rep;
    for (const auto& [k, w] : triple.nu) {
        if (k < 0) fail(errc::input_error, "triple: negative nu index");
        if (w < 0) fail(errc::input_error, "triple: negative nu weight");
    }
    if (triple.gamma < 0 || triple.beta < 0)
        fail(errc::input_error, "triple: gamma and beta must be >= 0");

    index_t N = ss.N();
    double sigma_total = ss.sigma_partial(N);
    rep.entrance_series = 0.0;
    rep.nu_tail_mass = 0.0;
    for (const auto& [k, w] : triple.nu) {
        if (k > N) {
            rep.nu_tail_mass += w;
            continue;
        }
        double tail = sigma_total - (k == 0 ? 0.0 : ss.sigma_partial(k - 1));
        rep.entrance_series += w * tail;
    }
    double total = triple.nu_total();
    rep.feller = triple.beta > 0;
    rep.doob = triple.beta == 0 && total > 0;

    if (triple.is_minimal()) return rep;  // the (0, gamma, 0) family names the minimal process

    if (total + triple.beta == 0) {
        rep.admissible = false;
        rep.violated = "|nu| + beta must be nonzero for a non-minimal triple";
    } else if (kind == BoundaryKind::Exit && triple.beta > 0) {
        rep.admissible = false;
        rep.violated = "beta must vanish when the boundary is an exit";
    } else if (!std::isfinite(rep.entrance_series)) {
        rep.admissible = false;
        rep.violated = "nu-weighted sigma-tail series diverged at truncation";
    }
    return rep;
}

GridFunction explosion_laplace(const RateModel& model, const ScaleSpeed& ss, double alpha) {
    if (!(alpha > 0)) fail(errc::input_error, "explosion_laplace: alpha must be > 0");
    index_t N = ss.N();
    BoundaryKind kind = classify_boundary(model, {.N = N}).kind;
    if (kind == BoundaryKind::Entrance || kind == BoundaryKind::Natural)
        fail(errc::wrong_boundary_class,
             std::string("explosion_laplace: boundary is ") + to_string(kind) +
                 "; the transform degenerates to 0 (no explosion)");

    std::vector<double> v(static_cast<size_t>(N) + 1);
    v[0] = 1.0;
    v[1] = (alpha + model.q(0)) / model.b(0);
    constexpr double kRescaleAt = 1e150;
    for (index_t k = 1; k < N; ++k) {
        auto i = static_cast<size_t>(k);
        v[i + 1] = ((alpha + model.q(k)) * v[i] - model.a(k) * v[i - 1]) / model.b(k);
        if (!(v[i + 1] > 0) || v[i + 1] < v[i] * (1.0 - 1e-9))
            fail(errc::numerical_failure,
                 "explosion_laplace: recursion lost positivity at index " + std::to_string(k));
        // exact in real arithmetic; clamp the sub-ulp jitter that appears once
        // the increments fall below the double resolution
        if (v[i + 1] < v[i]) v[i + 1] = v[i];
        if (v[i + 1] > kRescaleAt) {
            double f = 1.0 / v[i + 1];
            for (size_t m = 0; m <= i + 1; ++m) v[m] *= f;
        }
    }
    double top = v[static_cast<size_t>(N)];
    std::vector<double> u(v.size());
    for (size_t m = 0; m < v.size(); ++m) u[m] = v[m] / top;
    GridFunction g(std::move(u));
    g.set_boundary(1.0);
    return g;
}

GridFunction minimal_resolvent_apply(const RateModel& model, double alpha, const GridFunction& f) {
    if (!(alpha > 0)) fail(errc::input_error, "minimal_resolvent_apply: alpha must be > 0");
    index_t N = f.top_index();
    auto n = static_cast<size_t>(N);

    // Thomas factorization of (alpha - Q) with Dirichlet closure at N+1.
    // Products a_k * b_{k-1} can overflow double for geometric rate families,
    // so the elimination keeps the bounded ratio b/d instead.
    std::vector<double> diag(n + 1), rhs(n + 1);
    diag[0] = alpha + model.q(0);
    rhs[0] = f[0];
    for (index_t k = 1; k <= N; ++k) {
        auto i = static_cast<size_t>(k);
        double ratio = model.b(k - 1) / diag[i - 1];
        diag[i] = (alpha + model.q(k)) - model.a(k) * ratio;
        rhs[i] = f[k] + model.a(k) * (rhs[i - 1] / diag[i - 1]);
        if (!(diag[i] > 0) || !std::isfinite(diag[i]))
            fail(errc::numerical_failure, "minimal_resolvent_apply: factorization broke down");
    }
    std::vector<double> x(n + 1);
    x[n] = rhs[n] / diag[n];
    for (index_t k = N - 1; k >= 0; --k) {
        auto i = static_cast<size_t>(k);
        x[i] = (rhs[i] + model.b(k) * x[i + 1]) / diag[i];
    }
    return GridFunction(std::move(x));
}

double minimal_resolvent_entry(const RateModel& model, double alpha, index_t i, index_t j,
                               index_t N) {
    if (i < 0 || j < 0 || i > N || j > N)
        fail(errc::input_error, "minimal_resolvent_entry: indices must lie in 0..N");
    std::vector<double> e(static_cast<size_t>(N) + 1, 0.0);
    e[static_cast<size_t>(j)] = 1.0;
    return minimal_resolvent_apply(model, alpha, GridFunction(std::move(e)))[i];
}

ResolventWorkspace::ResolventWorkspace(const RateModel& model, const ScaleSpeed& ss, bool caching)
    : model_(model), ss_(ss), caching_(caching) {
    kind_ = classify_boundary(model, {.N = ss.N()}).kind;
}

const ResolventWorkspace::PerAlpha& ResolventWorkspace::entry(double alpha) {
    if (caching_) {
        std::shared_lock rd(mutex_);
        if (auto it = cache_.find(alpha); it != cache_.end()) return it->second;
    }
    index_t N = ss_.N();
    auto n = static_cast<size_t>(N);
    PerAlpha val;
    // the explosion transform only exists for regular/exit boundaries; the
    // minimal resolvent is fine for every class
    if (kind_ == BoundaryKind::Regular || kind_ == BoundaryKind::Exit ||
        kind_ == BoundaryKind::Inconclusive)
        val.u = explosion_laplace(model_, ss_, alpha);
    val.phi.resize(N + 1, N + 1);
    std::vector<double> e(n + 1, 0.0);
    for (index_t j = 0; j <= N; ++j) {
        e[static_cast<size_t>(j)] = 1.0;
        GridFunction col = minimal_resolvent_apply(model_, alpha, GridFunction(e));
        for (index_t i = 0; i <= N; ++i) val.phi(i, j) = col[i];
        e[static_cast<size_t>(j)] = 0.0;
    }
    if (!caching_) {
        scratch_ = std::move(val);
        return scratch_;
    }
    std::unique_lock wr(mutex_);
    return cache_.emplace(alpha, std::move(val)).first->second;
}

const Eigen::MatrixXd& ResolventWorkspace::phi(double alpha) { return entry(alpha).phi; }

const GridFunction& ResolventWorkspace::u(double alpha) {
    const GridFunction& u = entry(alpha).u;
    if (u.size() == 0)
        fail(errc::wrong_boundary_class,
             std::string("explosion transform unavailable: boundary is ") + to_string(kind_));
    return u;
}

namespace {

ResolventEvaluation finish_evaluation(ResolventEvaluation ev) {
    ev.row_sums = ev.psi.rowwise().sum();
    return ev;
}

}  // namespace

ResolventEvaluation wang_yang_resolvent(ResolventWorkspace& ws, const BoundaryTriple& triple,
                                        double alpha) {
    ResolventEvaluation ev;
    ev.alpha = alpha;
    ev.N = ws.scale().N();
    ev.admissibility = check_admissibility(triple, ws.scale(), ws.boundary_kind());
    if (!ev.admissibility.admissible)
        fail(errc::inadmissible_triple, "wang_yang_resolvent: " + ev.admissibility.violated);

    if (triple.is_minimal()) {
        // (0, gamma, 0) determines the minimal resolvent for every gamma.
        ev.psi = ws.phi(alpha);
        return finish_evaluation(std::move(ev));
    }

    const Eigen::MatrixXd& phi = ws.phi(alpha);
    const GridFunction& u = ws.u(alpha);
    const ScaleSpeed& ss = ws.scale();
    index_t N = ev.N;
    ev.nu_tail_mass = ev.admissibility.nu_tail_mass;
    ev.edge_gap = 1.0 - u[N - 1];

    double denom = triple.gamma;
    for (const auto& [k, w] : triple.nu)
        if (k <= N) denom += w * (1.0 - u[k]);
    if (triple.beta > 0) {
        double mu_u = 0.0;
        for (index_t k = 0; k <= N; ++k) mu_u += ss.mu(k) * u[k];
        denom += triple.beta * alpha * mu_u;
    }
    if (!(denom > 0))
        fail(errc::numerical_failure, "wang_yang_resolvent: nonpositive denominator");
    ev.denominator = denom;

    Eigen::VectorXd numerator = Eigen::VectorXd::Zero(N + 1);
    for (const auto& [k, w] : triple.nu)
        if (k <= N) numerator += w * phi.row(k).transpose();
    if (triple.beta > 0)
        for (index_t j = 0; j <= N; ++j) numerator(j) += triple.beta * ss.mu(j) * u[j];

    Eigen::VectorXd uvec(N + 1);
    for (index_t i = 0; i <= N; ++i) uvec(i) = u[i];
    ev.psi = phi + (uvec * numerator.transpose()) / denom;
    return finish_evaluation(std::move(ev));
}

ResolventEvaluation doob_resolvent(ResolventWorkspace& ws, const ReturnDistribution& pi,
                                   double alpha) {
    pi.validate();
    ResolventEvaluation ev;
    ev.alpha = alpha;
    ev.N = ws.scale().N();

    if (pi.atoms.empty()) {  // pi = delta_trap reduces to the minimal process
        ev.psi = ws.phi(alpha);
        return finish_evaluation(std::move(ev));
    }

    const Eigen::MatrixXd& phi = ws.phi(alpha);
    const GridFunction& u = ws.u(alpha);
    index_t N = ev.N;
    ev.edge_gap = 1.0 - u[N - 1];

    double pi_u = 0.0;
    Eigen::VectorXd numerator = Eigen::VectorXd::Zero(N + 1);
    for (const auto& [k, w] : pi.atoms) {
        if (k > N) {
            ev.nu_tail_mass += w;
            continue;
        }
        pi_u += w * u[k];
        numerator += w * phi.row(k).transpose();
    }
    double denom = 1.0 - pi_u;
    if (!(denom > 0))
        fail(errc::numerical_failure,
             "doob_resolvent: 1 - pi(u) <= 0; returning mass sits at the truncation edge, "
             "increase N");
    ev.denominator = denom;

    Eigen::VectorXd uvec(N + 1);
    for (index_t i = 0; i <= N; ++i) uvec(i) = u[i];
    ev.psi = phi + (uvec * numerator.transpose()) / denom;
    return finish_evaluation(std::move(ev));
}

ResolventEvaluation resolvent_of(ResolventWorkspace& ws, const ProcessSpec& spec, double alpha) {
    switch (spec.kind) {
        case ProcessSpec::Kind::Minimal: return wang_yang_resolvent(ws, BoundaryTriple::minimal(), alpha);
        case ProcessSpec::Kind::Triple: return wang_yang_resolvent(ws, spec.triple, alpha);
        case ProcessSpec::Kind::Doob: return doob_resolvent(ws, spec.pi, alpha);
    }
    fail(errc::input_error, "resolvent_of: bad spec");
}

double verify_resolvent_equation(const ResolventEvaluation& A, const ResolventEvaluation& B,
                                 index_t edge_window) {
    if (A.N != B.N) fail(errc::input_error, "verify_resolvent_equation: mismatched truncations");
    index_t N = A.N;
    index_t top = std::max<index_t>(0, N - edge_window);
    Eigen::MatrixXd prod = A.psi * B.psi;
    double residual = 0.0;
    for (index_t i = 0; i <= top; ++i)
        for (index_t j = 0; j <= top; ++j)
            residual = std::max(residual,
                                std::abs(A.psi(i, j) - B.psi(i, j) +
                                         (A.alpha - B.alpha) * prod(i, j)));
    return residual;
}

BoundaryConditionResidual verify_generator_boundary(ResolventWorkspace& ws,
                                                    const BoundaryTriple& triple, double alpha,
                                                    const GridFunction& f) {
    const RateModel& model = ws.model();
    const ScaleSpeed& ss = ws.scale();
    index_t N = ss.N();
    if (f.top_index() != N)
        fail(errc::input_error, "verify_generator_boundary: f must live on 0..N");

    // F = Psi_alpha f assembled from one tridiagonal solve plus the rank-one
    // boundary correction; no dense resolvent needed.
    GridFunction F = minimal_resolvent_apply(model, alpha, f);
    if (!triple.is_minimal()) {
        auto rep = check_admissibility(triple, ss, ws.boundary_kind());
        if (!rep.admissible)
            fail(errc::inadmissible_triple, "verify_generator_boundary: " + rep.violated);
        const GridFunction& u = ws.u(alpha);
        double denom = triple.gamma;
        double numer = 0.0;
        for (const auto& [k, w] : triple.nu)
            if (k <= N) {
                denom += w * (1.0 - u[k]);
                numer += w * F[k];
            }
        if (triple.beta > 0) {
            double mu_u = 0.0, mu_u_f = 0.0;
            for (index_t k = 0; k <= N; ++k) {
                mu_u += ss.mu(k) * u[k];
                mu_u_f += ss.mu(k) * u[k] * f[k];
            }
            denom += triple.beta * alpha * mu_u;
            numer += triple.beta * mu_u_f;
        }
        double m = numer / denom;
        for (index_t k = 0; k <= N; ++k) F[k] += m * u[k];
    }

    BoundaryConditionResidual out{};
    GridFunction qf = apply_density_matrix(model, F);
    for (index_t k = 0; k < N; ++k) {
        // componentwise relative residual: rates grow geometrically, so the
        // raw residual scales with q_k and an absolute bound is vacuous
        double prev = k == 0 ? 0.0 : F[k - 1];
        double scale = std::abs(alpha * F[k]) + model.a(k) * std::abs(prev) +
                       model.q(k) * std::abs(F[k]) + model.b(k) * std::abs(F[k + 1]) +
                       std::abs(f[k]) + 1e-300;
        out.interior = std::max(out.interior, std::abs(alpha * F[k] - qf[k] - f[k]) / scale);
    }

    out.f_inf = F[N];
    out.fplus_inf = (F[N] - F[N - 1]) / ss.dc(N - 1);
    out.cauchy_gap_f = std::abs(F[N] - F[N - 1]);
    double fp_prev = (F[N - 1] - F[N - 2]) / ss.dc(N - 2);
    out.cauchy_gap_fp = std::abs(out.fplus_inf - fp_prev);

    if (triple.is_minimal()) {
        out.boundary = std::abs(out.f_inf);  // absorbing condition F(inf) = 0
        return out;
    }
    double bc = 0.0;
    if (triple.beta > 0 && ws.boundary_kind() != BoundaryKind::Exit)
        bc += 0.5 * triple.beta * out.fplus_inf;
    for (const auto& [k, w] : triple.nu)
        if (k <= N) bc += w * (out.f_inf - F[k]);
    bc += triple.gamma * out.f_inf;
    out.boundary = std::abs(bc);
    return out;
}

DensityRecovery recover_density_matrix(ResolventWorkspace& ws, const ProcessSpec& spec,
                                       const std::vector<double>& alphas, index_t i, index_t j) {
    if (alphas.size() < 2)
        fail(errc::input_error, "recover_density_matrix: need at least two alpha values");
    for (size_t m = 1; m < alphas.size(); ++m)
        if (!(alphas[m] > alphas[m - 1]))
            fail(errc::input_error, "recover_density_matrix: alphas must increase");
    if (!(alphas.back() >= 100.0 * alphas.front()))
        fail(errc::input_error, "recover_density_matrix: alphas must span >= 2 decades");

    DensityRecovery out;
    out.target = (std::abs(i - j) > 1) ? 0.0
                 : (i == j)            ? -ws.model().q(i)
                 : (i > j)             ? ws.model().a(i)
                                       : ws.model().b(i);

    // Neville extrapolation of g(alpha) = alpha (alpha Psi_ij - delta_ij)
    // in the variable x = 1/alpha, evaluated at x = 0.
    size_t n = alphas.size();
    std::vector<double> x(n), g(n);
    for (size_t m = 0; m < n; ++m) {
        double alpha = alphas[m];
        ResolventEvaluation ev = resolvent_of(ws, spec, alpha);
        double delta = (i == j) ? 1.0 : 0.0;
        x[m] = 1.0 / alpha;
        g[m] = alpha * (alpha * ev.psi(i, j) - delta);
    }
    std::vector<double> tab = g;
    double prev_order = tab.back();
    for (size_t level = 1; level < n; ++level) {
        for (size_t m = 0; m + level < n; ++m)
            tab[m] = tab[m + 1] + (tab[m] - tab[m + 1]) * (0.0 - x[m + level]) / (x[m] - x[m + level]);
        if (level == n - 2) prev_order = tab[0];
    }
    out.estimate = tab[0];
    out.spread = std::abs(out.estimate - prev_order);
    double scale = std::max(1.0, std::abs(out.estimate));
    out.converged = out.spread <= 0.05 * scale;
    return out;
}

}  // namespace bdray
