#pragma once

#include <map>
#include <optional>
#include <shared_mutex>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "bdray/model.hpp"

namespace bdray {

// Boundary triple (nu, gamma, beta): nu = returning-jump intensities on the
// state space, gamma = killing intensity at the boundary, beta = reflection
// intensity. Scale-free: (M nu, M gamma, M beta) names the same process.
struct BoundaryTriple {
    std::map<index_t, double> nu;  // sparse, finite support
    double gamma = 0.0;
    double beta = 0.0;

    double nu_total() const;
    bool is_minimal() const { return nu.empty() && beta == 0.0; }
    // Scales so the largest of min(|nu|,1), gamma, beta equals 1; identity for
    // the minimal triple. Used for equality comparisons only.
    BoundaryTriple normalized() const;

    static BoundaryTriple minimal() { return {}; }
    static BoundaryTriple delta(index_t k, double gamma = 0.0, double beta = 0.0) {
        BoundaryTriple t;
        t.nu[k] = 1.0;
        t.gamma = gamma;
        t.beta = beta;
        return t;
    }
};

// Probability measure on the state space plus the trap: the returning
// distribution of a Doob process.
struct ReturnDistribution {
    std::map<index_t, double> atoms;  // mass on states
    double dead = 0.0;                // mass at the trap

    double atom_total() const;
    void validate(double tol = 1e-9) const;  // throws input_error unless total == 1

    static ReturnDistribution at_state(index_t k) {
        ReturnDistribution p;
        p.atoms[k] = 1.0;
        return p;
    }
    static ReturnDistribution at_trap() {
        ReturnDistribution p;
        p.dead = 1.0;
        return p;
    }
};

struct AdmissibilityReport {
    bool admissible = true;
    std::string violated;      // which condition failed, empty if none
    bool feller = false;       // |nu| = inf or beta > 0 (finite nu here, so beta > 0)
    bool doob = false;         // 0 < |nu| < inf, beta = 0
    double entrance_series;    // sum_k nu_k * sigma-tail(k), evaluated at truncation
    double nu_tail_mass;       // nu mass beyond the truncation level
};

AdmissibilityReport check_admissibility(const BoundaryTriple& triple, const ScaleSpeed& ss,
                                        BoundaryKind kind);

// Laplace transform of the explosion time, k -> E_k[exp(-alpha eta)], computed
// by the forward three-term recursion and normalized to 1 at the truncation
// edge. Monotone increasing with values in (0, 1]. Refuses models whose
// boundary is certified Entrance or Natural (the transform degenerates to 0).
GridFunction explosion_laplace(const RateModel& model, const ScaleSpeed& ss, double alpha);

// Minimal resolvent applied to f: solves (alpha - Q) F = f on {0..N} with the
// absorbing closure F(N+1) = 0, by a scale-safe tridiagonal factorization.
GridFunction minimal_resolvent_apply(const RateModel& model, double alpha, const GridFunction& f);

double minimal_resolvent_entry(const RateModel& model, double alpha, index_t i, index_t j,
                               index_t N);

// Which process a resolvent / generator / simulation refers to.
struct ProcessSpec {
    enum class Kind { Minimal, Triple, Doob } kind = Kind::Minimal;
    BoundaryTriple triple;
    ReturnDistribution pi;

    static ProcessSpec minimal() { return {}; }
    static ProcessSpec from_triple(BoundaryTriple t) {
        return {Kind::Triple, std::move(t), {}};
    }
    static ProcessSpec from_pi(ReturnDistribution p) {
        return {Kind::Doob, {}, std::move(p)};
    }
};

struct ResolventEvaluation {
    double alpha = 0.0;
    index_t N = 0;
    Eigen::MatrixXd psi;            // (N+1) x (N+1)
    Eigen::VectorXd row_sums;
    double denominator = 0.0;       // D(alpha); 0 for the minimal case
    double nu_tail_mass = 0.0;
    double edge_gap = 0.0;          // 1 - u_alpha(N-1): truncation-quality diagnostic
    AdmissibilityReport admissibility;
};

// Shared (model, truncation) workspace memoizing u_alpha and dense minimal
// resolvents per alpha. Concurrent readers are safe; insertion takes the
// writer lock. Pass caching=false to recompute every time.
class ResolventWorkspace {
  public:
    ResolventWorkspace(const RateModel& model, const ScaleSpeed& ss, bool caching = true);

    const RateModel& model() const { return model_; }
    const ScaleSpeed& scale() const { return ss_; }
    BoundaryKind boundary_kind() const { return kind_; }

    // Dense minimal resolvent Phi(alpha) (column j = solve with the indicator
    // of {j}) and the explosion transform; memoized per alpha.
    const Eigen::MatrixXd& phi(double alpha);
    const GridFunction& u(double alpha);

  private:
    struct PerAlpha {
        Eigen::MatrixXd phi;
        GridFunction u;
    };
    const PerAlpha& entry(double alpha);
    const RateModel& model_;
    const ScaleSpeed& ss_;
    BoundaryKind kind_;
    bool caching_;
    std::map<double, PerAlpha> cache_;
    PerAlpha scratch_;
    std::shared_mutex mutex_;
};

// Resolvent matrix of the process named by (nu, gamma, beta):
//   Psi_ij = Phi_ij + u(i) * (sum_k nu_k Phi_kj + beta mu_j u(j)) / D,
//   D = gamma + sum_k nu_k (1 - u(k)) + beta alpha sum_k mu_k u(k).
// The minimal triple short-circuits to Phi (bitwise).
ResolventEvaluation wang_yang_resolvent(ResolventWorkspace& ws, const BoundaryTriple& triple,
                                        double alpha);

// Resolvent of the Doob process with returning distribution pi:
//   R_ij = Phi_ij + u(i) * (sum_k pi_k Phi_kj) / (1 - pi(u)).
ResolventEvaluation doob_resolvent(ResolventWorkspace& ws, const ReturnDistribution& pi,
                                   double alpha);

ResolventEvaluation resolvent_of(ResolventWorkspace& ws, const ProcessSpec& spec, double alpha);

// max_{i,j <= N-K} |A_ij - B_ij + (alpha_A - alpha_B) (A B)_ij|
double verify_resolvent_equation(const ResolventEvaluation& A, const ResolventEvaluation& B,
                                 index_t edge_window);

struct BoundaryConditionResidual {
    double interior;        // max_k of the componentwise relative residual of
                            // alpha F - QF = f over k <= N-1
    double boundary;        // boundary-condition residual read at the edge
    double f_inf;           // F(N)
    double fplus_inf;       // (F(N)-F(N-1))/(c_N - c_{N-1})
    double cauchy_gap_f;    // |F(N)-F(N-1)|
    double cauchy_gap_fp;   // |F+(N-1)-F+(N-2)|
};

// Checks that F = Psi_alpha f satisfies the interior equation and the
// boundary condition (beta/2) F+(inf) + sum_k (F(inf)-F(k)) nu_k
// + gamma F(inf) = 0, with edge values read off the truncation and Cauchy
// gaps attached. For the minimal triple the boundary residual is |F(N)|
// (absorbing condition). The beta term is dropped when the boundary is a
// certified Exit.
BoundaryConditionResidual verify_generator_boundary(ResolventWorkspace& ws,
                                                    const BoundaryTriple& triple, double alpha,
                                                    const GridFunction& f);

struct DensityRecovery {
    double estimate = 0.0;   // Richardson-extrapolated alpha (alpha Psi_ij - delta_ij)
    double target = 0.0;     // q_ij from the rate model
    bool converged = false;
    double spread = 0.0;     // gap between the last two extrapolation orders
};

// Recovers q_ij from the resolvent via the large-alpha limit of
// alpha (alpha Psi_ij(alpha) - delta_ij), extrapolated in 1/alpha.
DensityRecovery recover_density_matrix(ResolventWorkspace& ws, const ProcessSpec& spec,
                                       const std::vector<double>& alphas, index_t i, index_t j);

}  // namespace bdray
