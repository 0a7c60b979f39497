#include "bdray/simulate.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <optional>
#include <thread>

namespace bdray {

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

RandomStream::RandomStream(std::uint64_t base_seed, std::uint64_t path, std::uint64_t substream) {
    std::uint64_t key = base_seed;
    key ^= 0x632be59bd9b4e019ULL * (path + 1);
    key ^= 0x9e3779b97f4a7c15ULL * (substream + 1);
    for (auto& s : s_) s = splitmix64(key);
}

std::uint64_t RandomStream::next() {
    std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

double RandomStream::uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

double RandomStream::exponential(double rate) { return -std::log1p(-uniform()) / rate; }

double RandomStream::exponential_antithetic(double rate) {
    double u = uniform();
    return -std::log(u > 0 ? u : 0x1.0p-53) / rate;
}

namespace {

struct NullSink {
    void probe(size_t, index_t) {}
    void event(const PathEvent&) {}
};

struct RecordSink {
    std::vector<PathEvent>* events;
    void probe(size_t, index_t) {}
    void event(const PathEvent& e) { events->push_back(e); }
};

struct CountSink {
    std::vector<std::uint64_t>* counts;  // flattened [time][bucket]
    size_t buckets;
    void probe(size_t time_idx, index_t bucket) {
        ++(*counts)[time_idx * buckets + static_cast<size_t>(bucket)];
    }
    void event(const PathEvent&) {}
};

// Shared per-path context: probe flushing against a sorted time grid plus the
// two random substreams.
template <typename Sink>
struct PathContext {
    RandomStream hold;
    RandomStream dir;
    bool antithetic_half;
    const std::vector<double>* probes;
    size_t next_probe = 0;
    Sink sink;
    std::uint64_t events_left;
    bool bailed = false;

    PathContext(const SimConfig& cfg, std::uint64_t path, const std::vector<double>* times,
                Sink s)
        : hold(cfg.seed, cfg.antithetic ? path / 2 : path, 0),
          dir(cfg.seed, cfg.antithetic ? path / 2 : path, 1),
          antithetic_half(cfg.antithetic && (path % 2 == 1)),
          probes(times),
          sink(std::move(s)),
          events_left(cfg.max_events) {}

    double dwell(double rate) {
        return antithetic_half ? hold.exponential_antithetic(rate) : hold.exponential(rate);
    }
    // flush probes strictly before `until` at the given bucket
    void flush(double until, index_t bucket) {
        if (!probes) return;
        while (next_probe < probes->size() && (*probes)[next_probe] < until)
            sink.probe(next_probe++, bucket);
    }
    void flush_rest(index_t bucket) {
        if (!probes) return;
        while (next_probe < probes->size()) sink.probe(next_probe++, bucket);
    }
    bool spend_event() {
        if (events_left == 0) {
            bailed = true;
            return false;
        }
        --events_left;
        return true;
    }
};

struct MinimalDoobParams {
    const ReturnDistribution* pi = nullptr;  // nullptr for the minimal process
    index_t cap = 0;
    double residual = 0.0;  // mean tail flight time added at the cap (0 in Zero mode)
    index_t killed_bucket = 0;
    std::vector<double> total_rate;  // q_k for k < cap
    std::vector<double> up_prob;     // b_k / q_k
    std::vector<std::pair<double, index_t>> pi_table;  // cumulative atom mass

    MinimalDoobParams(const RateModel& model, index_t cap_, double residual_,
                      const ReturnDistribution* pi_)
        : pi(pi_), cap(cap_), residual(residual_), killed_bucket(cap_ + 1) {
        total_rate.resize(static_cast<size_t>(cap));
        up_prob.resize(static_cast<size_t>(cap));
        for (index_t k = 0; k < cap; ++k) {
            double q = model.q(k);
            total_rate[static_cast<size_t>(k)] = q;
            up_prob[static_cast<size_t>(k)] = model.b(k) / q;
        }
        if (pi) {
            double acc = 0.0;
            for (const auto& [k, w] : pi->atoms) {
                acc += w;
                pi_table.emplace_back(acc, k);
            }
        }
    }
};

// Minimal / Doob path core. Buckets: states < cap as themselves, cap for the
// climb beyond the cap, killed_bucket once dead.
template <typename Sink>
PathStatus run_minimal_doob(const MinimalDoobParams& prm, index_t start, double horizon,
                            PathContext<Sink>& ctx, double& final_time) {
    index_t state = start;
    double t = 0.0;

    for (;;) {
        if (state >= prm.cap) {
            double t_fly = t + prm.residual;
            if (t_fly >= horizon) {
                ctx.flush_rest(prm.cap);
                final_time = horizon;
                return PathStatus::Alive;  // still in flight at the horizon
            }
            ctx.flush(t_fly, prm.cap);
            index_t target = -1;
            if (prm.pi) {
                double u = ctx.dir.uniform();
                for (const auto& [cum, k] : prm.pi_table)
                    if (u < cum) {
                        target = k;
                        break;
                    }
            }
            if (target < 0) {  // minimal process, or the trap mass of pi
                ctx.sink.event({t_fly, -1, PathEvent::Kind::Kill});
                ctx.flush_rest(prm.killed_bucket);
                final_time = t_fly;
                return PathStatus::Killed;
            }
            ctx.sink.event({t_fly, target, PathEvent::Kind::Fly});
            state = target;
            t = t_fly;
            continue;
        }

        if (!ctx.spend_event()) {
            ctx.flush_rest(state);
            final_time = t;
            return PathStatus::TruncationBailout;
        }
        auto i = static_cast<size_t>(state);
        double t_next = t + ctx.dwell(prm.total_rate[i]);
        if (t_next >= horizon) {
            ctx.flush_rest(state);
            final_time = horizon;
            return PathStatus::Alive;
        }
        ctx.flush(t_next, state);
        state += ctx.dir.uniform() < prm.up_prob[i] ? 1 : -1;
        t = t_next;
        ctx.sink.event({t, state, PathEvent::Kind::Jump});
    }
}

struct FellerParams {
    index_t N = 0;    // interior top state; surrogate is N+1
    index_t cap = 0;  // bucket for state N and the surrogate
    index_t killed_bucket = 0;
    double total_rate_b = 0.0;
    double reflect_rate = 0.0;
    std::vector<std::pair<double, index_t>> jump_table;  // cumulative rate, target
    std::vector<double> total_rate;  // outflow per interior state 0..N
    std::vector<double> up_prob;     // upward share (to k+1, or to the surrogate at N)
};

template <typename Sink>
PathStatus run_feller(const FellerParams& prm, index_t start, double horizon,
                      PathContext<Sink>& ctx, double& final_time) {
    index_t N = prm.N;
    index_t B = N + 1;
    index_t state = start;
    double t = 0.0;

    for (;;) {
        if (!ctx.spend_event()) {
            ctx.flush_rest(std::min(state, prm.cap));
            final_time = t;
            return PathStatus::TruncationBailout;
        }
        bool at_b = state == B;
        double rate_out = at_b ? prm.total_rate_b : prm.total_rate[static_cast<size_t>(state)];
        double t_next = t + ctx.dwell(rate_out);
        if (t_next >= horizon) {
            ctx.flush_rest(std::min(state, prm.cap));
            final_time = horizon;
            return PathStatus::Alive;
        }
        ctx.flush(t_next, std::min(state, prm.cap));

        if (at_b) {
            double u = ctx.dir.uniform() * prm.total_rate_b;
            if (u < prm.reflect_rate) {
                state = N;
                t = t_next;
                ctx.sink.event({t, state, PathEvent::Kind::Jump});
                continue;
            }
            u -= prm.reflect_rate;
            index_t target = -1;
            for (const auto& [cum, k] : prm.jump_table)
                if (u < cum) {
                    target = k;
                    break;
                }
            if (target < 0) {
                ctx.sink.event({t_next, -1, PathEvent::Kind::Kill});
                ctx.flush_rest(prm.killed_bucket);
                final_time = t_next;
                return PathStatus::Killed;
            }
            state = target;
            t = t_next;
            ctx.sink.event({t, state, PathEvent::Kind::Fly});
            continue;
        }

        bool up = ctx.dir.uniform() < prm.up_prob[static_cast<size_t>(state)];
        state = up ? (state == N ? B : state + 1) : state - 1;
        t = t_next;
        ctx.sink.event({t, state, PathEvent::Kind::Jump});
    }
}

double residual_flight(const ScaleSpeed& ss, const SimConfig& cfg) {
    if (cfg.residual == SimConfig::Residual::Zero) return 0.0;
    if (ss.N() < cfg.explosion_cap)
        fail(errc::input_error,
             "simulate: scale/speed data must reach the explosion cap for the mean-tail residual");
    return ss.mean_explosion_time(cfg.explosion_cap);
}

void check_sim_config(const SimConfig& cfg) {
    if (cfg.explosion_cap < 10) fail(errc::input_error, "simulate: explosion cap must be >= 10");
    if (cfg.paths < 1) fail(errc::input_error, "simulate: need at least one path");
    if (cfg.horizon < 0) fail(errc::input_error, "simulate: negative horizon");
}

FellerParams make_feller_params(const TruncatedGenerator& gen) {
    FellerParams prm;
    prm.N = gen.N();
    prm.cap = gen.N();
    prm.killed_bucket = gen.N() + 1;
    prm.reflect_rate = gen.reflect_rate();
    double acc = 0.0;
    const auto& jumps = gen.boundary_jumps();
    for (size_t k = 0; k < jumps.size(); ++k)
        if (jumps[k] > 0) {
            acc += jumps[k];
            prm.jump_table.emplace_back(acc, static_cast<index_t>(k));
        }
    prm.total_rate_b = prm.reflect_rate + acc + gen.kill_rate();
    index_t B = prm.N + 1;
    prm.total_rate.resize(static_cast<size_t>(prm.N) + 1);
    prm.up_prob.resize(static_cast<size_t>(prm.N) + 1);
    for (index_t k = 0; k <= prm.N; ++k) {
        double down = gen.rate(k, k - 1);
        double up = k == prm.N ? gen.rate(prm.N, B) : gen.rate(k, k + 1);
        prm.total_rate[static_cast<size_t>(k)] = down + up;
        prm.up_prob[static_cast<size_t>(k)] = up / (down + up);
    }
    return prm;
}

}  // namespace

PathRecord simulate_minimal(const RateModel& model, const ScaleSpeed& ss, index_t start,
                            const SimConfig& cfg, std::uint64_t path_index) {
    check_sim_config(cfg);
    PathRecord rec;
    rec.start = start;
    rec.seed = cfg.seed;
    rec.stream_id = path_index;
    MinimalDoobParams prm(model, cfg.explosion_cap, residual_flight(ss, cfg), nullptr);
    PathContext<RecordSink> ctx(cfg, path_index, nullptr, RecordSink{&rec.events});
    rec.status = run_minimal_doob(prm, start, cfg.horizon, ctx, rec.final_time);
    return rec;
}

PathRecord simulate_doob(const RateModel& model, const ScaleSpeed& ss,
                         const ReturnDistribution& pi, index_t start, const SimConfig& cfg,
                         std::uint64_t path_index) {
    check_sim_config(cfg);
    pi.validate();
    PathRecord rec;
    rec.start = start;
    rec.seed = cfg.seed;
    rec.stream_id = path_index;
    MinimalDoobParams prm(model, cfg.explosion_cap, residual_flight(ss, cfg), &pi);
    PathContext<RecordSink> ctx(cfg, path_index, nullptr, RecordSink{&rec.events});
    rec.status = run_minimal_doob(prm, start, cfg.horizon, ctx, rec.final_time);
    return rec;
}

PathRecord simulate_feller(const RateModel& model, const ScaleSpeed& ss,
                           const BoundaryTriple& triple, index_t start, const SimConfig& cfg,
                           std::uint64_t path_index) {
    check_sim_config(cfg);
    if (triple.beta <= 0)
        fail(errc::unsupported_construction,
             "simulate_feller: needs beta > 0 and a finite returning measure; for beta = 0 use "
             "the doob mode, and approximate measures with unbounded support via the convergence "
             "experiment");
    if (triple.nu_total() + triple.gamma <= 0)
        fail(errc::input_error,
             "simulate_feller: |nu| + gamma must be positive (the returning distribution is "
             "undefined otherwise)");
    BoundaryKind kind = classify_boundary(model, {.N = ss.N()}).kind;
    if (kind != BoundaryKind::Regular)
        fail(errc::wrong_boundary_class,
             "simulate_feller: reflection at the boundary needs a regular boundary; got " +
                 std::string(to_string(kind)));

    TruncatedGenerator gen =
        TruncatedGenerator::from_triple(model, ss, triple, cfg.explosion_cap);
    FellerParams prm = make_feller_params(gen);
    PathRecord rec;
    rec.start = start;
    rec.seed = cfg.seed;
    rec.stream_id = path_index;
    PathContext<RecordSink> ctx(cfg, path_index, nullptr, RecordSink{&rec.events});
    rec.status = run_feller(prm, start, cfg.horizon, ctx, rec.final_time);
    return rec;
}

TransitionEstimate estimate_transition(std::span<const PathRecord> paths, index_t i, index_t j,
                                       double t) {
    if (paths.empty()) fail(errc::input_error, "estimate_transition: no paths");
    std::uint64_t hits = 0;
    for (const auto& rec : paths) {
        if (rec.start != i)
            fail(errc::input_error, "estimate_transition: paths must share the start state");
        index_t state = rec.start;
        bool dead = false;
        for (const auto& e : rec.events) {
            if (e.time > t) break;
            if (e.kind == PathEvent::Kind::Kill || (e.kind == PathEvent::Kind::Fly && e.state < 0))
                dead = true;
            else
                state = e.state;
        }
        if (!dead && state == j) ++hits;
    }
    auto n = static_cast<double>(paths.size());
    double p = static_cast<double>(hits) / n;
    return {p, std::sqrt(p * (1.0 - p) / n), paths.size()};
}

TransitionEstimate EnsembleCounts::estimate(size_t time_idx, index_t bucket) const {
    double p = static_cast<double>(counts.at(time_idx).at(static_cast<size_t>(bucket))) /
               static_cast<double>(paths);
    return {p, std::sqrt(p * (1.0 - p) / static_cast<double>(paths)), paths};
}

EnsembleCounts simulate_ensemble(const RateModel& model, const ScaleSpeed& ss,
                                 const ProcessSpec& spec, index_t start, const SimConfig& cfg,
                                 std::vector<double> probe_times) {
    check_sim_config(cfg);
    std::sort(probe_times.begin(), probe_times.end());
    for (double t : probe_times)
        if (t < 0 || t > cfg.horizon)
            fail(errc::input_error, "simulate_ensemble: probe times must lie in [0, horizon]");

    EnsembleCounts out;
    out.cap = cfg.explosion_cap;
    out.times = probe_times;
    out.paths = cfg.paths;
    size_t buckets = static_cast<size_t>(cfg.explosion_cap) + 2;
    out.counts.assign(probe_times.size(), std::vector<std::uint64_t>(buckets, 0));

    // Per-mode invariant setup (done once, outside the hot loop).
    bool feller = spec.kind == ProcessSpec::Kind::Triple && !spec.triple.is_minimal();
    FellerParams fp;
    std::optional<MinimalDoobParams> md;
    if (feller) {
        if (spec.triple.beta <= 0)
            fail(errc::unsupported_construction,
                 "simulate_ensemble: triples with beta = 0 are Doob processes; use the doob mode");
        BoundaryKind kind = classify_boundary(model, {.N = ss.N()}).kind;
        if (kind != BoundaryKind::Regular)
            fail(errc::wrong_boundary_class,
                 "simulate_ensemble: reflecting triples need a regular boundary");
        TruncatedGenerator gen =
            TruncatedGenerator::from_triple(model, ss, spec.triple, cfg.explosion_cap);
        fp = make_feller_params(gen);
    } else {
        const ReturnDistribution* pi = nullptr;
        if (spec.kind == ProcessSpec::Kind::Doob) {
            spec.pi.validate();
            pi = &spec.pi;
        }
        md.emplace(model, cfg.explosion_cap, residual_flight(ss, cfg), pi);
    }

    unsigned workers = cfg.jobs > 0
                           ? static_cast<unsigned>(cfg.jobs)
                           : std::min(8u, std::max(1u, std::thread::hardware_concurrency()));
    workers = static_cast<unsigned>(
        std::min<std::uint64_t>(workers, std::max<std::uint64_t>(1, cfg.paths / 256)));
    std::atomic<std::uint64_t> next_block{0};
    std::atomic<std::uint64_t> bailed{0};
    constexpr std::uint64_t kBlock = 1024;
    std::uint64_t n_blocks = (cfg.paths + kBlock - 1) / kBlock;
    std::mutex merge_mutex;

    auto worker = [&] {
        std::vector<std::uint64_t> local(probe_times.size() * buckets, 0);
        std::uint64_t local_bailed = 0;
        for (;;) {
            std::uint64_t blk = next_block.fetch_add(1);
            if (blk >= n_blocks) break;
            std::uint64_t lo = blk * kBlock;
            std::uint64_t hi = std::min(cfg.paths, lo + kBlock);
            for (std::uint64_t p = lo; p < hi; ++p) {
                PathContext<CountSink> ctx(cfg, p, &probe_times, CountSink{&local, buckets});
                double ft = 0.0;
                PathStatus st = feller ? run_feller(fp, start, cfg.horizon, ctx, ft)
                                       : run_minimal_doob(*md, start, cfg.horizon, ctx, ft);
                if (st == PathStatus::TruncationBailout) ++local_bailed;
            }
        }
        std::lock_guard lk(merge_mutex);
        for (size_t ti = 0; ti < probe_times.size(); ++ti)
            for (size_t bk = 0; bk < buckets; ++bk)
                out.counts[ti][bk] += local[ti * buckets + bk];
        bailed += local_bailed;
    };

    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    out.bailed_out = bailed.load();
    return out;
}

}  // namespace bdray
