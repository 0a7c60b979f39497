#include <doctest.h>

#include <atomic>
#include <cmath>
#include <random>
#include <thread>

#include "bdray/resolvent.hpp"
#include "bdray/semigroup.hpp"

using namespace bdray;

namespace {

RateModel regular_family() { return RateModel::geometric(1.0, 2.0, 3.0); }
RateModel exit_family() { return RateModel::geometric(0.5, 1.0, 2.0); }
RateModel natural_family() { return RateModel::constant(1.0, 1.0); }
RateModel entrance_family() { return RateModel::geometric(2.0, 1.0, 3.0); }
// regular boundary with polynomial tails (mu_k = (k+1)^-2, scale gaps ~ k^-2):
// truncation effects are visible at double precision, unlike the geometric
// reference families
RateModel poly_regular_family() { return RateModel::power(2.0); }

GridFunction random_grid(index_t N, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    std::vector<double> v(size_t(N) + 1);
    for (auto& x : v) x = unif(rng);
    return GridFunction(std::move(v));
}

double relative_row_residual(const RateModel& m, double alpha, const GridFunction& F,
                             const GridFunction& f, index_t k) {
    double prev = k == 0 ? 0.0 : F[k - 1];
    double lhs = alpha * F[k] - (m.a(k) * prev - m.q(k) * F[k] + m.b(k) * F[k + 1]);
    double scale = std::abs(alpha * F[k]) + m.a(k) * std::abs(prev) + m.q(k) * std::abs(F[k]) +
                   m.b(k) * std::abs(F[k + 1]) + std::abs(f[k]) + 1e-300;
    return std::abs(lhs - f[k]) / scale;
}

}  // namespace

TEST_CASE("explosion transform u_alpha") {
    RateModel m = regular_family();
    auto ss = build_scale_speed(m, 120);
    GridFunction u1 = explosion_laplace(m, ss, 1.0);
    GridFunction u2 = explosion_laplace(m, ss, 2.0);

    SUBCASE("normalized at the edge, increasing, in (0, 1]") {
        CHECK(u1[120] == 1.0);
        for (index_t k = 0; k < 120; ++k) {
            CHECK(u1[k] > 0.0);
            CHECK(u1[k] <= u1[k + 1]);
        }
    }
    SUBCASE("pointwise decreasing in alpha") {
        for (index_t k = 0; k < 120; ++k) CHECK(u2[k] <= u1[k] + 1e-15);
    }
    SUBCASE("consistency with the minimal resolvent: u = 1 - alpha R 1") {
        GridFunction one(std::vector<double>(121, 1.0));
        GridFunction R1 = minimal_resolvent_apply(m, 1.0, one);
        for (index_t k = 0; k <= 100; ++k)
            CHECK(std::abs(u1[k] - (1.0 - R1[k])) <= 1e-8);
    }
    SUBCASE("exit family admits the transform too") {
        RateModel me = exit_family();
        auto sse = build_scale_speed(me, 120);
        GridFunction ue = explosion_laplace(me, sse, 1.0);
        GridFunction onee(std::vector<double>(121, 1.0));
        GridFunction R1e = minimal_resolvent_apply(me, 1.0, onee);
        for (index_t k = 0; k <= 100; ++k)
            CHECK(std::abs(ue[k] - (1.0 - R1e[k])) <= 1e-8);
    }
    SUBCASE("entrance and natural boundaries refuse") {
        auto ssn = build_scale_speed(natural_family(), 60);
        try {
            explosion_laplace(natural_family(), ssn, 1.0);
            FAIL("expected a wrong-boundary-class refusal");
        } catch (const error& e) {
            CHECK(e.code() == errc::wrong_boundary_class);
            CHECK(std::string(e.what()).find("Natural") != std::string::npos);
        }
        auto sse = build_scale_speed(entrance_family(), 60);
        CHECK_THROWS_AS(explosion_laplace(entrance_family(), sse, 1.0), error);
        try {
            explosion_laplace(entrance_family(), sse, 1.0);
        } catch (const error& e) {
            CHECK(e.code() == errc::wrong_boundary_class);
        }
    }
}

TEST_CASE("minimal resolvent solve") {
    RateModel m = regular_family();
    const index_t N = 150;

    SUBCASE("zero maps to zero") {
        GridFunction z = minimal_resolvent_apply(m, 1.0, GridFunction(std::vector<double>(N + 1)));
        for (index_t k = 0; k <= N; ++k) CHECK(z[k] == 0.0);
    }
    SUBCASE("defining equation re-substituted, componentwise relative") {
        for (auto seed : {1u, 2u, 3u}) {
            GridFunction f = random_grid(N, seed);
            GridFunction F = minimal_resolvent_apply(m, 1.5, f);
            for (index_t k = 0; k < N; ++k)
                CHECK(relative_row_residual(m, 1.5, F, f, k) <= 1e-10);
        }
    }
    SUBCASE("entries nonnegative, sub-Markov rows, mu-symmetric") {
        auto ss = build_scale_speed(m, 40);
        double alpha = 1.0;
        Eigen::MatrixXd phi(41, 41);
        for (index_t j = 0; j <= 40; ++j) {
            std::vector<double> e(41, 0.0);
            e[size_t(j)] = 1.0;
            GridFunction col = minimal_resolvent_apply(m, alpha, GridFunction(e));
            for (index_t i = 0; i <= 40; ++i) phi(i, j) = col[i];
        }
        for (index_t i = 0; i <= 40; ++i) {
            CHECK(phi.row(i).minCoeff() >= 0.0);
            CHECK(alpha * phi.row(i).sum() <= 1.0 + 1e-12);
            for (index_t j = i + 1; j <= 40; ++j)
                CHECK(std::abs(ss.mu(i) * phi(i, j) - ss.mu(j) * phi(j, i)) <= 1e-10);
        }
    }
    SUBCASE("alpha Phi_ii -> 1 as alpha grows, cross-checked by quadrature") {
        // large-alpha standardness on the unit-rate family, where the
        // uniformized semigroup is cheap at any truncation
        RateModel mn = natural_family();
        const double alpha = 1e4;
        double value = alpha * minimal_resolvent_entry(mn, alpha, 0, 0, 200);
        CHECK(std::abs(value - 1.0) <= 1e-2);

        auto ssn = build_scale_speed(mn, 200);
        ResolventWorkspace ws(mn, ssn);
        TruncatedGenerator gen = TruncatedGenerator::minimal(mn, 200);
        LaplaceCheck chk =
            laplace_crosscheck(gen, ws, ProcessSpec::minimal(), alpha, 0, 0, 2.5e-3, 1e-6);
        CHECK(chk.rel_gap <= 1e-5);
        CHECK(std::abs(alpha * chk.quadrature - value) <= 1e-2);
    }
}

TEST_CASE("boundary triples and admissibility") {
    auto ss_exit = build_scale_speed(exit_family(), 100);
    SUBCASE("reflection on an exit boundary violates the constraint") {
        BoundaryTriple t;
        t.beta = 1.0;
        auto rep = check_admissibility(t, ss_exit, BoundaryKind::Exit);
        CHECK_FALSE(rep.admissible);
        CHECK(rep.violated.find("exit") != std::string::npos);
    }
    SUBCASE("zero triple is the minimal marker, any gamma") {
        BoundaryTriple t;
        t.gamma = 3.0;
        CHECK(t.is_minimal());
        auto rep = check_admissibility(t, ss_exit, BoundaryKind::Exit);
        CHECK(rep.admissible);
    }
    SUBCASE("canonical normalization") {
        BoundaryTriple t = BoundaryTriple::delta(0, 4.0, 2.0);
        t.nu[0] = 8.0;
        BoundaryTriple n = t.normalized();
        CHECK(std::max({std::min(n.nu_total(), 1.0), n.gamma, n.beta}) == doctest::Approx(1.0));
        CHECK(n.gamma / n.beta == doctest::Approx(t.gamma / t.beta));
    }
    SUBCASE("negative parameters are rejected") {
        BoundaryTriple t;
        t.gamma = -1.0;
        CHECK_THROWS_AS(check_admissibility(t, ss_exit, BoundaryKind::Exit), error);
    }
}

TEST_CASE("resolvent matrices") {
    RateModel m = regular_family();
    const index_t N = 120;
    auto ss = build_scale_speed(m, N);
    ResolventWorkspace ws(m, ss);

    SUBCASE("the (0, gamma, 0) family short-circuits to the minimal resolvent, bitwise") {
        BoundaryTriple g1;
        g1.gamma = 0.7;
        BoundaryTriple g2;
        g2.gamma = 2.5;
        auto e1 = wang_yang_resolvent(ws, g1, 1.0);
        auto e2 = wang_yang_resolvent(ws, g2, 1.0);
        CHECK(e1.psi == e2.psi);
        CHECK(e1.psi == ws.phi(1.0));
    }
    SUBCASE("honesty exactly when gamma = 0") {
        auto honest = wang_yang_resolvent(ws, BoundaryTriple::delta(0, 0.0, 1.0), 1.0);
        for (index_t i = 0; i <= N - 10; ++i)
            CHECK(std::abs(honest.alpha * honest.row_sums(i) - 1.0) <= 1e-6);
        auto killed = wang_yang_resolvent(ws, BoundaryTriple::delta(0, 0.5, 1.0), 1.0);
        CHECK(killed.alpha * killed.row_sums(0) < 1.0 - 1e-3);
    }
    SUBCASE("mu-symmetry iff nu vanishes") {
        BoundaryTriple elastic;
        elastic.gamma = 1.0;
        elastic.beta = 1.0;
        auto sym = wang_yang_resolvent(ws, elastic, 1.0);
        double defect = 0.0;
        for (index_t i = 0; i <= N; ++i)
            for (index_t j = i + 1; j <= N; ++j)
                defect = std::max(defect,
                                  std::abs(ss.mu(i) * sym.psi(i, j) - ss.mu(j) * sym.psi(j, i)));
        CHECK(defect <= 1e-8);

        auto asym = wang_yang_resolvent(ws, BoundaryTriple::delta(0), 1.0);
        double violation = 0.0;
        for (index_t i = 0; i <= N; ++i)
            for (index_t j = i + 1; j <= N; ++j)
                violation = std::max(
                    violation, std::abs(ss.mu(i) * asym.psi(i, j) - ss.mu(j) * asym.psi(j, i)));
        CHECK(violation > 1e-4);
    }
    SUBCASE("returning-distribution equivalence for 20 random finite pi") {
        std::mt19937_64 rng(99);
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        for (int rep = 0; rep < 20; ++rep) {
            ReturnDistribution pi;
            double total = 0.0;
            for (index_t k = 0; k < 6; ++k) {
                double w = unif(rng);
                pi.atoms[k * 3] = w;
                total += w;
            }
            double dead = unif(rng);
            total += dead;
            for (auto& [k, w] : pi.atoms) w /= total;
            pi.dead = dead / total;

            // scale-equivalent triple per the returning-distribution map
            double M = 1.0 + 4.0 * unif(rng);
            BoundaryTriple t;
            for (const auto& [k, w] : pi.atoms) t.nu[k] = M * w;
            t.gamma = M * pi.dead;
            auto via_pi = doob_resolvent(ws, pi, 1.0);
            auto via_triple = wang_yang_resolvent(ws, t, 1.0);
            CHECK((via_pi.psi - via_triple.psi).cwiseAbs().maxCoeff() <= 1e-12);
        }
    }
    SUBCASE("pi concentrated at the trap reduces to the minimal resolvent") {
        auto ev = doob_resolvent(ws, ReturnDistribution::at_trap(), 1.0);
        CHECK(ev.psi == ws.phi(1.0));
    }
    SUBCASE("half trap mass leaves a strict honesty defect") {
        ReturnDistribution pi;
        pi.atoms[0] = 0.5;
        pi.dead = 0.5;
        auto ev = doob_resolvent(ws, pi, 1.0);
        for (index_t i = 0; i <= 20; ++i) CHECK(ev.alpha * ev.row_sums(i) < 1.0 - 1e-3);
    }
    SUBCASE("returning mass at the truncation edge is a numerical failure") {
        CHECK_THROWS_AS(doob_resolvent(ws, ReturnDistribution::at_state(N), 1.0), error);
    }
    SUBCASE("non-minimal triples on a natural boundary refuse") {
        auto ssn = build_scale_speed(natural_family(), 60);
        ResolventWorkspace wsn(natural_family(), ssn);
        CHECK_THROWS_AS(wang_yang_resolvent(wsn, BoundaryTriple::delta(0), 1.0), error);
    }
}

TEST_CASE("resolvent equation") {
    SUBCASE("identical alphas give a zero residual") {
        RateModel m = regular_family();
        auto ss = build_scale_speed(m, 100);
        ResolventWorkspace ws(m, ss);
        auto e = wang_yang_resolvent(ws, BoundaryTriple::delta(0), 1.0);
        CHECK(verify_resolvent_equation(e, e, 10) == 0.0);
    }
    SUBCASE("reference family at N = 200 sits at the roundoff floor") {
        RateModel m = regular_family();
        auto ss = build_scale_speed(m, 200);
        ResolventWorkspace ws(m, ss);
        auto e1 = wang_yang_resolvent(ws, BoundaryTriple::minimal(), 1.0);
        auto e2 = wang_yang_resolvent(ws, BoundaryTriple::minimal(), 2.0);
        CHECK(verify_resolvent_equation(e1, e2, 20) <= 1e-6);

        BoundaryTriple geom;
        for (index_t k = 0; k <= 40; ++k) geom.nu[k] = std::exp2(-double(k));
        geom.gamma = 0.5;
        geom.beta = 1.0;
        auto g1 = wang_yang_resolvent(ws, geom, 1.0);
        auto g2 = wang_yang_resolvent(ws, geom, 2.0);
        CHECK(verify_resolvent_equation(g1, g2, 20) <= 1e-5);
    }
    SUBCASE("residual decreases across truncations on reference families (floor-limited)") {
        RateModel m = regular_family();
        double prev = 1e300;
        for (index_t N : {100, 200, 400}) {
            auto ss = build_scale_speed(m, N);
            ResolventWorkspace ws(m, ss);
            auto e1 = wang_yang_resolvent(ws, BoundaryTriple::delta(0, 0.0, 1.0), 1.0);
            auto e2 = wang_yang_resolvent(ws, BoundaryTriple::delta(0, 0.0, 1.0), 2.0);
            double r = verify_resolvent_equation(e1, e2, 20);
            CHECK(r <= prev * 1.5 + 1e-12);  // non-increase within the roundoff floor
            prev = r;
        }
    }
    SUBCASE("genuine strict decrease on the polynomial-tail regular family") {
        RateModel m = poly_regular_family();
        std::vector<double> residuals;
        for (index_t N : {100, 200, 400}) {
            auto ss = build_scale_speed(m, N);
            ResolventWorkspace ws(m, ss);
            auto e1 = wang_yang_resolvent(ws, BoundaryTriple::delta(0), 1.0);
            auto e2 = wang_yang_resolvent(ws, BoundaryTriple::delta(0), 2.0);
            residuals.push_back(verify_resolvent_equation(e1, e2, 20));
        }
        CHECK(residuals[1] < residuals[0]);
        CHECK(residuals[2] < residuals[1]);
    }
}

TEST_CASE("generator boundary condition") {
    RateModel m = regular_family();
    const index_t N = 200;
    auto ss = build_scale_speed(m, N);
    ResolventWorkspace ws(m, ss);

    std::vector<double> e0(size_t(N) + 1, 0.0);
    e0[0] = 1.0;
    GridFunction ind0(e0);
    GridFunction one(std::vector<double>(size_t(N) + 1, 1.0));

    SUBCASE("minimal triple satisfies the absorbing condition by construction") {
        auto res = verify_generator_boundary(ws, BoundaryTriple::minimal(), 1.0, ind0);
        CHECK(res.interior <= 1e-10);
        CHECK(res.boundary <= 1e-12);
    }
    SUBCASE("elastic triple") {
        BoundaryTriple elastic;
        elastic.gamma = 1.0;
        elastic.beta = 1.0;
        auto res = verify_generator_boundary(ws, elastic, 1.0, ind0);
        CHECK(res.interior <= 1e-10);
        CHECK(res.boundary <= 1e-6 + res.cauchy_gap_fp);
    }
    SUBCASE("returning-jump triple with reflection") {
        auto res =
            verify_generator_boundary(ws, BoundaryTriple::delta(0, 0.0, 1.0), 1.0, one);
        CHECK(res.interior <= 1e-10);
        CHECK(res.boundary <= 1e-6 + res.cauchy_gap_fp);
    }
    SUBCASE("oracle: assemble F independently from the dense resolvent") {
        BoundaryTriple t = BoundaryTriple::delta(0, 0.0, 1.0);
        auto ev = wang_yang_resolvent(ws, t, 1.0);
        Eigen::VectorXd fvec = Eigen::VectorXd::Ones(N + 1);
        Eigen::VectorXd F = ev.psi * fvec;
        double f_inf = F(N);
        double fp_inf = (F(N) - F(N - 1)) / ss.dc(N - 1);
        double bc = 0.5 * t.beta * fp_inf + t.nu.at(0) * (f_inf - F(0)) + t.gamma * f_inf;
        auto res = verify_generator_boundary(ws, t, 1.0, one);
        CHECK(std::abs(res.boundary - std::abs(bc)) <= 1e-9);
    }
}

TEST_CASE("density matrix recovery") {
    RateModel m = regular_family();
    auto ss = build_scale_speed(m, 150);
    ResolventWorkspace ws(m, ss);
    const std::vector<double> alphas = {1e3, 3e3, 1e4, 3e4, 1e5};

    SUBCASE("diagonal and off-diagonal entries within 1%") {
        for (const auto& spec :
             {ProcessSpec::minimal(), ProcessSpec::from_triple(BoundaryTriple::delta(0))}) {
            auto r00 = recover_density_matrix(ws, spec, alphas, 0, 0);
            CHECK(r00.converged);
            CHECK(std::abs(r00.estimate - r00.target) <= 0.01 * std::abs(r00.target));
            CHECK(r00.target == doctest::Approx(-m.q(0)));

            auto r10 = recover_density_matrix(ws, spec, alphas, 1, 0);
            CHECK(std::abs(r10.estimate - r10.target) <= 0.01 * std::abs(r10.target));
            CHECK(r10.target == doctest::Approx(m.a(1)));

            auto r01 = recover_density_matrix(ws, spec, alphas, 0, 1);
            CHECK(std::abs(r01.estimate - r01.target) <= 0.01 * std::abs(r01.target));
            CHECK(r01.target == doctest::Approx(m.b(0)));
        }
    }
    SUBCASE("long-range entries vanish") {
        auto far = recover_density_matrix(ws, ProcessSpec::minimal(), alphas, 0, 4);
        CHECK(far.target == 0.0);
        CHECK(std::abs(far.estimate) <= 1e-3 * m.q(4));
    }
    SUBCASE("alpha grids must increase and span two decades") {
        CHECK_THROWS_AS(recover_density_matrix(ws, ProcessSpec::minimal(), {1.0, 2.0, 3.0}, 0, 0),
                        error);
        CHECK_THROWS_AS(recover_density_matrix(ws, ProcessSpec::minimal(), {100.0, 10.0}, 0, 0),
                        error);
    }
}

TEST_CASE("workspace cache is safe for concurrent readers") {
    RateModel m = regular_family();
    auto ss = build_scale_speed(m, 80);
    ResolventWorkspace ws(m, ss);
    Eigen::MatrixXd ref = ws.phi(1.0);

    std::vector<std::thread> pool;
    std::atomic<int> mismatches{0};
    for (int w = 0; w < 4; ++w)
        pool.emplace_back([&] {
            for (int rep = 0; rep < 10; ++rep) {
                double alpha = 1.0 + (rep % 3);
                auto ev = wang_yang_resolvent(ws, BoundaryTriple::delta(0), alpha);
                if (alpha == 1.0 && (ws.phi(1.0) - ref).cwiseAbs().maxCoeff() != 0.0)
                    ++mismatches;
                (void)ev;
            }
        });
    for (auto& t : pool) t.join();
    CHECK(mismatches.load() == 0);
}
