#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bdray/error.hpp"

namespace bdray {

using index_t = std::int64_t;

// Birth-death rate data: death rates a_k (k >= 1, a_0 = 0) and birth rates
// b_k (k >= 0), either as explicit finite sequences or as a lazily evaluated
// closed-form family. All rates are strictly positive where defined.
class RateModel {
  public:
    static RateModel from_sequences(std::vector<double> a, std::vector<double> b);
    static RateModel constant(double a, double b);
    // a_k = coeff_a * ratio^k, b_k = coeff_b * ratio^k
    static RateModel geometric(double coeff_a, double coeff_b, double ratio);
    // b_k = (k+1)^{2p}, a_k = (k (k+1))^p; speed tail mu_k = (k+1)^{-p}
    static RateModel power(double p);

    double a(index_t k) const;
    double b(index_t k) const;
    double q(index_t k) const { return a(k) + b(k); }

    // Largest index with rates defined, or nullopt for unbounded families.
    std::optional<index_t> max_index() const;
    std::string describe() const { return describe_; }

  private:
    RateModel() = default;
    enum class Kind { Explicit, Constant, Geometric, Power };
    Kind kind_ = Kind::Constant;
    std::vector<double> a_, b_;               // Explicit
    double pa_ = 1, pb_ = 1, ratio_ = 1;      // Constant/Geometric params
    double p_ = 1;                            // Power param
    std::string describe_;
    void check_index(index_t k) const;
};

// First index at which materializing a derived sequence left the range of
// double; everything below it is trustworthy.
struct OverflowMark {
    index_t at;
    std::string quantity;
};

// Scale sequence c_k, speed measure mu_k and the running sums feeding the
// sigma / lambda boundary functionals, built to a fixed truncation N.
//
// Increments c_{k+1}-c_k are stored directly (computed as 1/(2 b_k mu_k)),
// never recovered by subtracting partial sums; for geometric families the
// subtraction loses all significant digits once c has converged.
class ScaleSpeed {
  public:
    index_t N() const { return N_; }

    double c(index_t k) const { return c_.at(static_cast<size_t>(k)); }          // 0..N+1
    double dc(index_t k) const { return dc_.at(static_cast<size_t>(k)); }        // c_{k+1}-c_k, 0..N
    double mu(index_t k) const { return mu_.at(static_cast<size_t>(k)); }        // 0..N+1
    double log_mu(index_t k) const { return log_mu_.at(static_cast<size_t>(k)); }
    double mu_cumsum(index_t k) const { return mu_cumsum_.at(static_cast<size_t>(k)); }

    // sigma_k = sum_{j<=k} (c_{j+1}-c_j) * sum_{i<=j} mu_i, defined for k <= N
    double sigma_term(index_t k) const { return sigma_term_.at(static_cast<size_t>(k)); }
    double sigma_partial(index_t k) const { return sigma_partial_.at(static_cast<size_t>(k)); }
    // lambda_k = sum_{j<=k} c_j mu_j, defined for k <= N+1
    double lambda_term(index_t k) const { return lambda_term_.at(static_cast<size_t>(k)); }
    double lambda_partial(index_t k) const { return lambda_partial_.at(static_cast<size_t>(k)); }

    // Mean explosion time started from `from`, truncated at the built range:
    // 2 * sum_{j=from..N} dc_j * mu_cumsum_j. Last summand reported so callers
    // can judge the truncation remainder.
    double mean_explosion_time(index_t from) const;
    double mean_explosion_last_term() const;

    const std::optional<OverflowMark>& overflow() const { return overflow_; }

  private:
    friend ScaleSpeed build_scale_speed(const RateModel&, index_t);
    index_t N_ = 0;
    std::vector<double> c_, dc_, mu_, log_mu_, mu_cumsum_;
    std::vector<double> sigma_term_, sigma_partial_, lambda_term_, lambda_partial_;
    std::optional<OverflowMark> overflow_;
};

ScaleSpeed build_scale_speed(const RateModel& model, index_t N);

enum class BoundaryKind { Regular, Exit, Entrance, Natural, Inconclusive };
const char* to_string(BoundaryKind k);

struct SeriesVerdict {
    enum class State { Finite, Diverged, Inconclusive } state;
    double partial;    // last partial sum examined (the value, when finite)
    index_t at;        // index where the verdict fired
    std::string reason;
    bool finite() const { return state == State::Finite; }
    bool diverged() const { return state == State::Diverged; }
};

struct BoundaryClassification {
    BoundaryKind kind;
    SeriesVerdict sigma;
    SeriesVerdict lambda;
    index_t truncation;
};

struct ClassifyConfig {
    index_t N = 400;
    double threshold = 1e8;   // partial sum above this certifies divergence
    index_t window = 8;       // Cauchy window (clamped to [2, N])
    double rtol = 1e-9;       // relative window increase below this certifies a finite sum
};

BoundaryClassification classify_boundary(const RateModel& model, const ClassifyConfig& cfg = {});

// Grid function F(0..N) with an optional boundary value F(infinity). The
// boundary value is never extrapolated; it is either supplied or absent.
class GridFunction {
  public:
    GridFunction() = default;
    explicit GridFunction(std::vector<double> values) : v_(std::move(values)) {}
    GridFunction(std::vector<double> values, double boundary)
        : v_(std::move(values)), boundary_(boundary) {}

    index_t size() const { return static_cast<index_t>(v_.size()); }
    index_t top_index() const { return size() - 1; }
    double operator[](index_t k) const { return v_[static_cast<size_t>(k)]; }
    double& operator[](index_t k) { return v_[static_cast<size_t>(k)]; }
    const std::vector<double>& values() const { return v_; }

    std::optional<double> boundary() const { return boundary_; }
    void set_boundary(double v) { boundary_ = v; }

  private:
    std::vector<double> v_;
    std::optional<double> boundary_;
};

// (QF)(k) = a_k F(k-1) - q_k F(k) + b_k F(k+1) with F(-1) := 0.
// F on 0..N gives QF on 0..N-1.
GridFunction apply_density_matrix(const RateModel& model, const GridFunction& F);

struct ScaleDerivative {
    GridFunction fplus;   // F+(k) = (F(k+1)-F(k))/(c_{k+1}-c_k) on 0..N-1
    double cauchy_gap;    // |F+(N-1) - F+(N-2)|; convergence evidence for F+(inf)
};

// The boundary estimate F+(N-1) is stored as fplus.boundary().
ScaleDerivative scale_derivative(const GridFunction& F, const ScaleSpeed& ss);

struct IdentityResidual {
    double abs;   // max_k |(QF)(k) - (1/2)(F+(k)-F+(k-1))/mu_k|
    double rel;   // abs relative to the magnitude of the two sides
};

IdentityResidual second_order_identity_check(const RateModel& model, const GridFunction& F,
                                             const ScaleSpeed& ss);

// E^kappa(F,G) = (1/2) sum_{k<N} (F(k+1)-F(k))(G(k+1)-G(k))/(c_{k+1}-c_k)
//              + kappa F(inf) G(inf)
double dirichlet_energy(const GridFunction& F, const GridFunction& G, const ScaleSpeed& ss,
                        double kappa);

}  // namespace bdray
