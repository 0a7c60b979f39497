#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "bdray/resolvent.hpp"
#include "bdray/semigroup.hpp"

namespace bdray {

// Reproducible per-path random streams: a path is keyed by (base seed, path
// index, substream) through splitmix64 into xoshiro256++ state. Holding times
// and direction draws use separate substreams so the antithetic transform on
// holding times leaves the jump skeleton untouched.
class RandomStream {
  public:
    RandomStream(std::uint64_t base_seed, std::uint64_t path, std::uint64_t substream);
    std::uint64_t next();
    double uniform();                    // [0, 1)
    double exponential(double rate);     // -log(1-u)/rate
    double exponential_antithetic(double rate);

  private:
    std::uint64_t s_[4];
};

enum class PathStatus { Alive, Killed, TruncationBailout };

struct PathEvent {
    enum class Kind { Jump, Fly, Kill };
    double time;
    index_t state;  // new state; for Fly, the regeneration target (or -1 when killed)
    Kind kind;
};

struct PathRecord {
    index_t start = 0;
    std::vector<PathEvent> events;
    PathStatus status = PathStatus::Alive;
    double final_time = 0.0;   // kill time, or the horizon when alive
    std::uint64_t seed = 0;
    std::uint64_t stream_id = 0;
};

struct SimConfig {
    index_t explosion_cap = 40;  // N_cap: level at which a flying time is declared
    enum class Residual { MeanTail, Zero } residual = Residual::MeanTail;
    double horizon = 1.0;
    std::uint64_t paths = 1;
    std::uint64_t seed = 0;
    bool antithetic = false;
    std::uint64_t max_events = 50'000'000;
    int jobs = 0;  // worker threads; 0 picks min(8, hardware)
};

// Minimal process: +-1 jump chain killed at the first flying time. Explosion
// is detected at the cap; the residual flight time is the mean tail
// 2 * sum_{j >= cap} (c_{j+1}-c_j) sum_{i<=j} mu_i, or zero by configuration.
PathRecord simulate_minimal(const RateModel& model, const ScaleSpeed& ss, index_t start,
                            const SimConfig& cfg, std::uint64_t path_index = 0);

// Doob process: minimal segments pieced together by drawing a fresh start
// from pi at every flying time; a trap draw kills the path.
PathRecord simulate_doob(const RateModel& model, const ScaleSpeed& ss,
                         const ReturnDistribution& pi, index_t start, const SimConfig& cfg,
                         std::uint64_t path_index = 0);

// Feller process with finite nu and beta > 0: jump chain of the boundary-
// augmented generator; entering the surrogate state is the flying time, and
// the exit from it realizes reflection, a returning jump drawn from
// nu/(|nu|+gamma), or killing with probability gamma/(|nu|+gamma).
PathRecord simulate_feller(const RateModel& model, const ScaleSpeed& ss,
                           const BoundaryTriple& triple, index_t start, const SimConfig& cfg,
                           std::uint64_t path_index = 0);

struct TransitionEstimate {
    double estimate = 0.0;
    double stderr_ = 0.0;
    std::uint64_t n_paths = 0;
};

// Fraction of paths sitting at state j at time t (cadlag convention), with
// the binomial standard error. All paths must share the start state i.
TransitionEstimate estimate_transition(std::span<const PathRecord> paths, index_t i, index_t j,
                                       double t);

// Streaming ensemble: runs cfg.paths simulations without materializing the
// event lists and counts the state occupied at each probe time. Buckets:
// 0..cap-1 as-is, `cap` collects everything at or above the cap (including
// the boundary surrogate), `cap+1` counts killed paths. Counts are integers
// accumulated blockwise in path order, so results are reproducible for any
// worker count.
struct EnsembleCounts {
    index_t cap = 0;
    std::vector<double> times;
    std::vector<std::vector<std::uint64_t>> counts;  // [time][bucket]
    std::uint64_t paths = 0;
    std::uint64_t bailed_out = 0;

    index_t boundary_bucket() const { return cap; }
    index_t killed_bucket() const { return cap + 1; }
    TransitionEstimate estimate(size_t time_idx, index_t bucket) const;
};

EnsembleCounts simulate_ensemble(const RateModel& model, const ScaleSpeed& ss,
                                 const ProcessSpec& spec, index_t start, const SimConfig& cfg,
                                 std::vector<double> probe_times);

}  // namespace bdray
