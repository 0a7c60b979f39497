#pragma once

#include <vector>

#include <Eigen/Dense>

#include "bdray/resolvent.hpp"

namespace bdray {

enum class ClosureMode { Absorbing, BoundaryAugmented };

// Finite-rate generator on {0..N} plus, in augmented mode, a surrogate state b
// for the boundary. Interior rows copy the birth-death rates; row N sends its
// upward rate b_N to b; row b carries the boundary behaviour: reflection back
// to N at rate (beta/2)/(c_{N+1}-c_N), returning jumps nu_k to k <= N-1, and a
// killing deficit gamma. In absorbing mode row b is absent and row N simply
// loses its b_N mass.
class TruncatedGenerator {
  public:
    static TruncatedGenerator minimal(const RateModel& model, index_t N);
    static TruncatedGenerator from_triple(const RateModel& model, const ScaleSpeed& ss,
                                          const BoundaryTriple& triple, index_t N);
    // Doob boundary row scaled by `scale` (<= 0 picks max(q_N, 1)); the
    // process named is scale-free, the discretization error is ~1/scale.
    static TruncatedGenerator from_pi(const RateModel& model, const ScaleSpeed& ss,
                                      const ReturnDistribution& pi, index_t N, double scale = 0.0);
    static TruncatedGenerator of(const RateModel& model, const ScaleSpeed& ss,
                                 const ProcessSpec& spec, index_t N);

    index_t N() const { return N_; }
    ClosureMode mode() const { return mode_; }
    index_t dim() const { return N_ + 1 + (mode_ == ClosureMode::BoundaryAugmented ? 1 : 0); }
    index_t boundary_state() const { return N_ + 1; }  // valid in augmented mode

    double reflect_rate() const { return reflect_; }
    double kill_rate() const { return kill_; }
    const std::vector<double>& boundary_jumps() const { return jumps_; }
    double nu_tail_mass() const { return nu_tail_; }

    // Largest total outflow over rows; any uniformization rate must dominate it.
    double max_rate() const;
    Eigen::MatrixXd dense() const;
    // Row-sum deficit (killing rate) per row; exact zeros on conservative rows.
    Eigen::VectorXd row_deficits() const;

    double rate(index_t from, index_t to) const;  // off-diagonal entry of the dense form

  private:
    TruncatedGenerator() = default;
    const RateModel* model_ = nullptr;
    index_t N_ = 0;
    ClosureMode mode_ = ClosureMode::Absorbing;
    std::vector<double> a_, b_;       // copied rates 0..N
    std::vector<double> jumps_;       // row-b rates to states 0..N
    double reflect_ = 0.0;            // row-b rate to N
    double kill_ = 0.0;               // row-b killing
    double nu_tail_ = 0.0;
};

struct TransitionEvaluation {
    double t = 0.0;
    index_t N = 0;
    ClosureMode mode = ClosureMode::Absorbing;
    Eigen::MatrixXd p;       // dim x dim
    double lambda = 0.0;     // uniformization rate
    int series_terms = 0;    // Poisson terms at the leaf
    int split_depth = 0;     // dyadic time splits (squarings)
    double error_bound = 0.0;
};

// p(t) = sum_m e^{-Lt}(Lt)^m/m! P_u^m with P_u = I + G/L, evaluated at a
// dyadically split time leaf and squared back up. Throws when the series
// length would exceed the cap even at the maximum split depth.
TransitionEvaluation uniformized_transition(const TruncatedGenerator& gen, double t,
                                            double tol = 1e-12);

// Precomputed one-step matrix P(dt) for marching a transition row across a
// time grid at O(dim^2) per step.
class TransitionStepper {
  public:
    TransitionStepper(const TruncatedGenerator& gen, double dt, double tol = 1e-12);
    double dt() const { return dt_; }
    const Eigen::MatrixXd& step_matrix() const { return step_.p; }
    double error_bound() const { return step_.error_bound; }
    // advances row in place by dt
    void advance(Eigen::RowVectorXd& row) const;

  private:
    double dt_;
    TransitionEvaluation step_;
};

struct LaplaceCheck {
    double quadrature = 0.0;   // int_0^T e^{-alpha t} p_ij(t) dt (Simpson)
    double resolvent = 0.0;    // Psi_ij(alpha)
    double rel_gap = 0.0;
    double quad_error = 0.0;   // step-halving estimate of the quadrature error
    double tail_bound = 0.0;   // e^{-alpha T}/alpha
};

// Two independent routes to the same number: time-domain quadrature of the
// uniformized semigroup against the resolvent matrix. Requires alpha*T >= 20.
LaplaceCheck laplace_crosscheck(const TruncatedGenerator& gen, ResolventWorkspace& ws,
                                const ProcessSpec& spec, double alpha, index_t i, index_t j,
                                double T, double dt);

struct ConvergenceRow {
    index_t n;
    double alpha;
    index_t j;
    double sup_gap_resolvent;   // sup_i |Psi^n_ij - Psi_ij| over the inner window
    double sup_gap_transition;  // sup over the time grid and inner states
};

struct ConvergenceConfig {
    std::vector<index_t> schedule = {5, 10, 20, 40};
    std::vector<double> alphas = {1.0};
    index_t j = 0;
    index_t edge_window = 20;
    index_t semigroup_N = 14;       // truncation for the transition-level gaps
    double time_horizon = 2.0;
    double time_step = 0.1;
    bool transition_level = true;
};

// Approximates the target triple by the truncations nu^n = nu restricted to
// {0..n} with beta_n = beta (or 1/n when beta = 0), and reports the resolvent-
// and transition-level gaps to the target for each n. Regular boundary only.
std::vector<ConvergenceRow> convergence_experiment(ResolventWorkspace& ws,
                                                   const BoundaryTriple& target,
                                                   const ConvergenceConfig& cfg);

}  // namespace bdray
