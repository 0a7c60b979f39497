#include "bdray/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace bdray {

namespace {

constexpr double kOverflowGuard = 1e305;

bool positive_finite(double x) { return x > 0 && std::isfinite(x); }

}  // namespace

RateModel RateModel::from_sequences(std::vector<double> a, std::vector<double> b) {
    if (b.empty()) fail(errc::input_error, "rate model: empty birth-rate sequence");
    if (a.empty()) a.push_back(0.0);
    a[0] = 0.0;
    for (size_t k = 1; k < a.size(); ++k)
        if (!positive_finite(a[k]))
            fail(errc::input_error, "rate model: a[" + std::to_string(k) + "] must be positive");
    for (size_t k = 0; k < b.size(); ++k)
        if (!positive_finite(b[k]))
            fail(errc::input_error, "rate model: b[" + std::to_string(k) + "] must be positive");
    RateModel m;
    m.kind_ = Kind::Explicit;
    m.a_ = std::move(a);
    m.b_ = std::move(b);
    m.describe_ = "explicit[" + std::to_string(m.b_.size()) + "]";
    return m;
}

RateModel RateModel::constant(double a, double b) {
    if (!positive_finite(a) || !positive_finite(b))
        fail(errc::input_error, "rate model: constant family needs a, b > 0");
    RateModel m;
    m.kind_ = Kind::Constant;
    m.pa_ = a;
    m.pb_ = b;
    std::ostringstream os;
    os << "constant(a=" << a << ", b=" << b << ")";
    m.describe_ = os.str();
    return m;
}

RateModel RateModel::geometric(double coeff_a, double coeff_b, double ratio) {
    if (!positive_finite(coeff_a) || !positive_finite(coeff_b) || !positive_finite(ratio))
        fail(errc::input_error, "rate model: geometric family needs coeff_a, coeff_b, ratio > 0");
    RateModel m;
    m.kind_ = Kind::Geometric;
    m.pa_ = coeff_a;
    m.pb_ = coeff_b;
    m.ratio_ = ratio;
    std::ostringstream os;
    os << "geometric(coeff_a=" << coeff_a << ", coeff_b=" << coeff_b << ", ratio=" << ratio << ")";
    m.describe_ = os.str();
    return m;
}

RateModel RateModel::power(double p) {
    if (!(p > 0) || !std::isfinite(p))
        fail(errc::input_error, "rate model: power family needs p > 0");
    RateModel m;
    m.kind_ = Kind::Power;
    m.p_ = p;
    std::ostringstream os;
    os << "power(p=" << p << ")";
    m.describe_ = os.str();
    return m;
}

void RateModel::check_index(index_t k) const {
    if (k < 0) fail(errc::input_error, "rate model: negative index");
    if (kind_ == Kind::Explicit) {
        auto top = max_index().value();
        if (k > top)
            fail(errc::input_error, "rate model: index " + std::to_string(k) +
                                        " beyond explicit sequences (max " + std::to_string(top) +
                                        ")");
    }
}

std::optional<index_t> RateModel::max_index() const {
    if (kind_ != Kind::Explicit) return std::nullopt;
    return static_cast<index_t>(std::min(a_.size(), b_.size())) - 1;
}

double RateModel::a(index_t k) const {
    check_index(k);
    if (k == 0) return 0.0;
    switch (kind_) {
        case Kind::Explicit: return a_[static_cast<size_t>(k)];
        case Kind::Constant: return pa_;
        case Kind::Geometric: return pa_ * std::pow(ratio_, static_cast<double>(k));
        case Kind::Power: {
            double kk = static_cast<double>(k);
            return std::pow(kk * (kk + 1.0), p_);
        }
    }
    return 0.0;
}

double RateModel::b(index_t k) const {
    check_index(k);
    switch (kind_) {
        case Kind::Explicit: return b_[static_cast<size_t>(k)];
        case Kind::Constant: return pb_;
        case Kind::Geometric: return pb_ * std::pow(ratio_, static_cast<double>(k));
        case Kind::Power: return std::pow(static_cast<double>(k) + 1.0, 2.0 * p_);
    }
    return 0.0;
}

ScaleSpeed build_scale_speed(const RateModel& model, index_t N) {
    if (N < 1) fail(errc::input_error, "build_scale_speed: N must be >= 1");
    if (auto top = model.max_index(); top && *top < N + 1)
        fail(errc::input_error, "build_scale_speed: rates defined only up to index " +
                                    std::to_string(*top) + ", need " + std::to_string(N + 1));

    ScaleSpeed ss;
    ss.N_ = N;
    auto n = static_cast<size_t>(N);
    ss.c_.resize(n + 2);
    ss.dc_.resize(n + 1);
    ss.mu_.resize(n + 2);
    ss.log_mu_.resize(n + 2);
    ss.mu_cumsum_.resize(n + 2);
    ss.sigma_term_.resize(n + 1);
    ss.sigma_partial_.resize(n + 1);
    ss.lambda_term_.resize(n + 2);
    ss.lambda_partial_.resize(n + 2);

    auto mark = [&](index_t at, const char* what) {
        if (!ss.overflow_) ss.overflow_ = OverflowMark{at, what};
    };

    ss.mu_[0] = 1.0;
    ss.log_mu_[0] = 0.0;
    ss.c_[0] = 0.0;
    ss.mu_cumsum_[0] = 1.0;
    ss.lambda_term_[0] = 0.0;
    ss.lambda_partial_[0] = 0.0;

    for (index_t k = 0; k <= N; ++k) {
        auto i = static_cast<size_t>(k);
        double bk = model.b(k);
        double ak1 = model.a(k + 1);

        // mu_{k+1} = mu_k b_k / a_{k+1}; log-domain value kept alongside so a
        // double overflow degrades to a certificate instead of inf arithmetic.
        ss.log_mu_[i + 1] = ss.log_mu_[i] + std::log(bk) - std::log(ak1);
        double mu_next = ss.mu_[i] * (bk / ak1);
        if (!std::isfinite(mu_next) || mu_next > kOverflowGuard) {
            mark(k + 1, "speed measure");
            mu_next = std::numeric_limits<double>::infinity();
        }
        ss.mu_[i + 1] = mu_next;

        // c_{k+1} = c_k + 1/(2 b_k mu_k), increment stored exactly
        double inv = 2.0 * bk * ss.mu_[i];
        double dk = std::isfinite(inv) && inv > 0 ? 1.0 / inv
                                                  : std::exp(-(std::log(2.0) + std::log(bk) + ss.log_mu_[i]));
        if (!std::isfinite(dk) || dk > kOverflowGuard) {
            mark(k, "scale increment");
            dk = std::numeric_limits<double>::infinity();
        }
        ss.dc_[i] = dk;
        ss.c_[i + 1] = ss.c_[i] + dk;
        if (!std::isfinite(ss.c_[i + 1])) mark(k + 1, "scale");

        ss.mu_cumsum_[i + 1] = ss.mu_cumsum_[i] + ss.mu_[i + 1];

        ss.sigma_term_[i] = dk * ss.mu_cumsum_[i];
        ss.sigma_partial_[i] = (k == 0 ? 0.0 : ss.sigma_partial_[i - 1]) + ss.sigma_term_[i];
        if (!std::isfinite(ss.sigma_partial_[i])) mark(k, "sigma partial sum");

        ss.lambda_term_[i + 1] = ss.c_[i + 1] * ss.mu_[i + 1];
        ss.lambda_partial_[i + 1] = ss.lambda_partial_[i] + ss.lambda_term_[i + 1];
        if (!std::isfinite(ss.lambda_partial_[i + 1])) mark(k + 1, "lambda partial sum");
    }
    return ss;
}

double ScaleSpeed::mean_explosion_time(index_t from) const {
    if (from < 0 || from > N_) fail(errc::input_error, "mean_explosion_time: index out of range");
    double tail = 0.0;
    for (index_t j = N_; j >= from; --j) tail += sigma_term(j);
    return 2.0 * tail;
}

double ScaleSpeed::mean_explosion_last_term() const { return 2.0 * sigma_term(N_); }

const char* to_string(BoundaryKind k) {
    switch (k) {
        case BoundaryKind::Regular: return "Regular";
        case BoundaryKind::Exit: return "Exit";
        case BoundaryKind::Entrance: return "Entrance";
        case BoundaryKind::Natural: return "Natural";
        case BoundaryKind::Inconclusive: return "Inconclusive";
    }
    return "?";
}

namespace {

// Decide finiteness of a positive series from its terms/partials on 0..last.
// Divergence fires on a threshold crossing or a non-decreasing tail window;
// finiteness on a relatively negligible window increase. Anything else stays
// inconclusive rather than guessing.
SeriesVerdict judge_series(const std::vector<double>& term, const std::vector<double>& partial,
                           index_t last, const ClassifyConfig& cfg, index_t overflow_at) {
    // Judge only the finite prefix: an overflow certificate truncates what is
    // materializable, and genuinely divergent series cross the threshold well
    // before the double range runs out.
    last = std::min(last, overflow_at - 1);
    if (last < 1)
        return {SeriesVerdict::State::Diverged, std::numeric_limits<double>::infinity(), 0,
                "terms overflowed immediately"};
    index_t w = std::clamp<index_t>(cfg.window, 2, last + 1);
    for (index_t k = 0; k <= last; ++k) {
        auto i = static_cast<size_t>(k);
        if (!std::isfinite(partial[i]) || partial[i] > cfg.threshold) {
            return {SeriesVerdict::State::Diverged, partial[i], k,
                    "partial sum exceeded threshold"};
        }
    }
    bool nondecreasing = true;
    for (index_t k = last - w + 2; k <= last; ++k) {
        auto i = static_cast<size_t>(k);
        if (term[i] < term[i - 1] * (1.0 - 1e-12)) {
            nondecreasing = false;
            break;
        }
    }
    auto lastp = partial[static_cast<size_t>(last)];
    if (nondecreasing && term[static_cast<size_t>(last)] > 0)
        return {SeriesVerdict::State::Diverged, lastp, last, "tail terms non-decreasing over window"};

    double window_gain = lastp - partial[static_cast<size_t>(last - w + 1)];
    if (window_gain <= cfg.rtol * std::max(lastp, std::numeric_limits<double>::min()))
        return {SeriesVerdict::State::Finite, lastp, last, "window increase below tolerance"};

    return {SeriesVerdict::State::Inconclusive, lastp, last,
            "neither convergence nor divergence criterion fired"};
}

}  // namespace

BoundaryClassification classify_boundary(const RateModel& model, const ClassifyConfig& cfg) {
    index_t w = std::max<index_t>(2, std::min(cfg.window, cfg.N));
    if (cfg.N < w) fail(errc::input_error, "classify_boundary: need N >= window >= 2");
    ScaleSpeed ss = build_scale_speed(model, cfg.N);

    index_t overflow_at = ss.overflow() ? ss.overflow()->at : cfg.N + 2;

    std::vector<double> sterm(static_cast<size_t>(cfg.N) + 1), spart(sterm.size());
    for (index_t k = 0; k <= cfg.N; ++k) {
        sterm[static_cast<size_t>(k)] = ss.sigma_term(k);
        spart[static_cast<size_t>(k)] = ss.sigma_partial(k);
    }
    std::vector<double> lterm(static_cast<size_t>(cfg.N) + 2), lpart(lterm.size());
    for (index_t k = 0; k <= cfg.N + 1; ++k) {
        lterm[static_cast<size_t>(k)] = ss.lambda_term(k);
        lpart[static_cast<size_t>(k)] = ss.lambda_partial(k);
    }

    BoundaryClassification out;
    out.truncation = cfg.N;
    out.sigma = judge_series(sterm, spart, cfg.N, cfg, overflow_at);
    out.lambda = judge_series(lterm, lpart, cfg.N + 1, cfg, overflow_at);

    using S = SeriesVerdict::State;
    if (out.sigma.state == S::Inconclusive || out.lambda.state == S::Inconclusive)
        out.kind = BoundaryKind::Inconclusive;
    else if (out.sigma.finite() && out.lambda.finite())
        out.kind = BoundaryKind::Regular;
    else if (out.sigma.finite())
        out.kind = BoundaryKind::Exit;
    else if (out.lambda.finite())
        out.kind = BoundaryKind::Entrance;
    else
        out.kind = BoundaryKind::Natural;
    return out;
}

GridFunction apply_density_matrix(const RateModel& model, const GridFunction& F) {
    index_t N = F.top_index();
    if (N < 1) fail(errc::input_error, "apply_density_matrix: need F on at least {0,1}");
    std::vector<double> out(static_cast<size_t>(N));
    for (index_t k = 0; k < N; ++k) {
        double prev = k == 0 ? 0.0 : F[k - 1];
        out[static_cast<size_t>(k)] = model.a(k) * prev - model.q(k) * F[k] + model.b(k) * F[k + 1];
    }
    return GridFunction(std::move(out));
}

ScaleDerivative scale_derivative(const GridFunction& F, const ScaleSpeed& ss) {
    index_t N = F.top_index();
    if (N < 1) fail(errc::input_error, "scale_derivative: need F on at least {0,1}");
    if (ss.N() < N - 1) fail(errc::input_error, "scale_derivative: scale data shorter than F");
    std::vector<double> out(static_cast<size_t>(N));
    for (index_t k = 0; k < N; ++k) out[static_cast<size_t>(k)] = (F[k + 1] - F[k]) / ss.dc(k);
    ScaleDerivative d{GridFunction(std::move(out)), 0.0};
    if (N >= 2) {
        d.cauchy_gap = std::abs(d.fplus[N - 1] - d.fplus[N - 2]);
        d.fplus.set_boundary(d.fplus[N - 1]);
    }
    return d;
}

IdentityResidual second_order_identity_check(const RateModel& model, const GridFunction& F,
                                             const ScaleSpeed& ss) {
    GridFunction qf = apply_density_matrix(model, F);
    ScaleDerivative d = scale_derivative(F, ss);
    double abs = 0.0, scale = 1.0;
    for (index_t k = 0; k < qf.size(); ++k) {
        double fp_prev = k == 0 ? 0.0 : d.fplus[k - 1];  // convention F+(-1) = 0
        double rhs = 0.5 * (d.fplus[k] - fp_prev) / ss.mu(k);
        abs = std::max(abs, std::abs(qf[k] - rhs));
        scale = std::max({scale, std::abs(qf[k]), std::abs(rhs)});
    }
    return {abs, abs / scale};
}

double dirichlet_energy(const GridFunction& F, const GridFunction& G, const ScaleSpeed& ss,
                        double kappa) {
    if (kappa < 0) fail(errc::input_error, "dirichlet_energy: kappa must be >= 0");
    if (F.size() != G.size()) fail(errc::input_error, "dirichlet_energy: mismatched grids");
    index_t N = F.top_index();
    if (ss.N() < N - 1) fail(errc::input_error, "dirichlet_energy: scale data shorter than F");
    double sum = 0.0;
    for (index_t k = 0; k < N; ++k) sum += (F[k + 1] - F[k]) * (G[k + 1] - G[k]) / ss.dc(k);
    sum *= 0.5;
    if (kappa > 0) {
        if (!F.boundary() || !G.boundary())
            fail(errc::input_error, "dirichlet_energy: kappa > 0 needs boundary values on F and G");
        sum += kappa * (*F.boundary()) * (*G.boundary());
    }
    return sum;
}

}  // namespace bdray
