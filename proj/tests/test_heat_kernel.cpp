#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "rcmlab/heat_kernel.hpp"
#include "rcmlab/rng.hpp"
#include "support.hpp"

using namespace rcmlab;

namespace {

Environment random_env(std::uint64_t seed, int L = 7, double alpha = 1.0) {
    return sample_environment(ConductanceLaw::polynomial_tail(1.0, 0.5),
                              {.d1 = 0, .d2 = 2, .L = L}, MuMode::counting, seed, alpha);
}

} // namespace

TEST_CASE("t=0 kernel is the delta density") {
    auto env = random_env(1, 4);
    auto gen = generator(env, jump_kernel(env));
    int x0 = env.lattice->origin();
    auto f = heat_kernel(gen, 0.0, x0, 1e-10);
    for (int y = 0; y < gen.size(); ++y) {
        double expect = (y == x0) ? 1.0 / gen.mu[x0] : 0.0;
        CHECK(f.density[y] == expect);
    }
}

TEST_CASE("full kernel conserves mass") {
    auto env = random_env(2, 5);
    auto gen = generator(env, jump_kernel(env));
    auto f = heat_kernel(gen, 1.0, env.lattice->origin(), 1e-9);
    CHECK(f.total_mass(gen.mu) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("uniformization matches the dense eigensolver oracle") {
    // 100-site random environment (9x9 plus change): max-norm <= 1e-8
    auto env = random_env(3, 5);
    auto gen = generator(env, jump_kernel(env));
    SpectralFactor sf(gen);
    int x0 = env.lattice->origin();
    for (double t : {0.3, 2.0, 10.0}) {
        auto u = heat_kernel(gen, t, x0, 1e-10);
        auto e = sf.field(t, x0, false);
        CHECK((u.density - e.density).cwiseAbs().maxCoeff() <= 1e-8);
    }
}

TEST_CASE("kernel density is symmetric for csrw measure") {
    auto env = sample_environment(ConductanceLaw::polynomial_tail(1.0, 0.5),
                                  {.d1 = 0, .d2 = 1, .L = 12}, MuMode::csrw, 4, 1.0);
    auto gen = generator(env, jump_kernel(env));
    SpectralFactor sf(gen);
    CounterRng rng(9);
    for (int k = 0; k < 30; ++k) {
        int x = static_cast<int>(rng.next_u64() % gen.size());
        int y = static_cast<int>(rng.next_u64() % gen.size());
        CHECK(sf.p(1.7, x, y) == doctest::Approx(sf.p(1.7, y, x)).epsilon(1e-10));
    }
}

TEST_CASE("semigroup law on random times") {
    auto env = random_env(5, 4);
    auto gen = generator(env, jump_kernel(env));
    SpectralFactor sf(gen);
    int x0 = env.lattice->origin();
    const double tol = 1e-10;
    CounterRng rng(77);
    for (int rep = 0; rep < 3; ++rep) {
        double t = 0.2 + 2.0 * rng.next_double();
        double s = 0.2 + 2.0 * rng.next_double();
        auto pt = heat_kernel(gen, t, x0, tol);
        auto pts = heat_kernel(gen, t + s, x0, tol);
        Eigen::MatrixXd Ps = sf.density_matrix(s);
        // p(t+s,x0,y) = sum_z p(t,x0,z) p(s,z,y) mu(z)
        Eigen::VectorXd conv = Ps.transpose() * pt.density.cwiseProduct(gen.mu);
        CHECK((conv - pts.density).cwiseAbs().maxCoeff() <= 10 * (tol + tol) + 1e-9);
    }
}

TEST_CASE("dirichlet kernel: domination, mass decay, and whole-box identity") {
    auto env = random_env(6, 5);
    auto J = jump_kernel(env);
    auto full = generator(env, J);
    const auto& lat = *env.lattice;
    int x0 = lat.origin();
    auto B = lat.ball(x0, 3.0);
    auto Bp = lat.ball(x0, 4.0);
    auto genB = generator(env, J, B);
    auto genBp = generator(env, J, Bp);

    double prev_mass = 2.0;
    for (double t : {0.5, 1.0, 2.0, 4.0}) {
        auto pB = dirichlet_heat_kernel(genB, t, x0, 1e-10);
        auto pBp = dirichlet_heat_kernel(genBp, t, x0, 1e-10);
        auto p = heat_kernel(full, t, x0, 1e-10);
        // domination p^B <= p^B' <= p on B
        for (int i = 0; i < genB.size(); ++i) {
            int g = genB.states[i];
            double vB = pB.density[i];
            double vBp = pBp.density[genBp.local(g)];
            double v = p.density[g];
            CHECK(vB <= vBp + 1e-9);
            CHECK(vBp <= v + 1e-9);
        }
        double mass = pB.total_mass(genB.mu);
        CHECK(mass <= prev_mass + 1e-12);
        CHECK(mass <= 1.0 + 1e-9);
        prev_mass = mass;
    }

    // whole box under absorbing boundary: identical to the full kernel
    std::vector<int> whole(lat.size());
    for (int i = 0; i < lat.size(); ++i) whole[i] = i;
    auto genW = generator(env, J, whole);
    auto pW = dirichlet_heat_kernel(genW, 1.5, x0, 1e-10);
    auto p = heat_kernel(full, 1.5, x0, 1e-10);
    CHECK((pW.density - p.density).cwiseAbs().maxCoeff() <= 1e-12);

    CHECK_THROWS(dirichlet_heat_kernel(genB, 1.0, Bp.back(), 1e-10));
}

TEST_CASE("on-diagonal dirichlet bound: sup p^B(t,x,x) t^{d/alpha} stays bounded") {
    // scaled-down on-diagonal decay check (constant env, d=2)
    auto env = sample_environment(ConductanceLaw::constant(1.0), {.d1 = 0, .d2 = 2, .L = 10},
                                  MuMode::counting, 0, 1.0);
    auto J = jump_kernel(env);
    const auto& lat = *env.lattice;
    auto B = lat.ball(lat.origin(), 7.0);
    auto genB = generator(env, J, B);
    double fitted = 0.0;
    std::vector<double> values;
    for (double t : {1.0, 2.0, 4.0}) {
        double sup = 0.0;
        for (int i = 0; i < genB.size(); ++i) {
            auto f = dirichlet_heat_kernel(genB, t, genB.states[i], 1e-8);
            sup = std::max(sup, f.density[i]);
        }
        double v = sup * std::pow(t, 2.0 / 1.0);
        values.push_back(v);
        fitted = std::max(fitted, v);
    }
    CHECK(fitted > 0.0);
    for (double v : values) CHECK(v <= fitted); // fitted constant is extremal
}

TEST_CASE("poisson weights reach the tolerance for large rates") {
    for (double lambda : {0.5, 20.0, 300.0, 2000.0}) {
        auto w = poisson_weights(lambda, 1e-12);
        double cum = 0.0;
        for (double x : w) cum += x;
        CHECK(cum >= 1.0 - 1e-12);
        CHECK(cum <= 1.0 + 1e-9);
    }
}
