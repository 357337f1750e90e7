// Acceptance gate: one case per release criterion, each printing a single
// PASS/FAIL line with its runtime so the whole gate can be audited at a glance.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "rcmlab/experiments.hpp"
#include "support.hpp"

using namespace rcmlab;
using nlohmann::json;

namespace {

struct Timer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

void report(int k, const char* name, bool ok, double secs, double budget) {
    std::printf("ACCEPTANCE %2d %-46s %s (%.1fs / budget %.0fs)\n", k, name,
                ok ? "PASS" : "FAIL", secs, budget);
    std::fflush(stdout);
    CHECK_MESSAGE(ok, name);
    CHECK_MESSAGE(secs < budget, name << ": over time budget");
}

std::vector<Environment> small_corpus(int count) {
    std::vector<ConductanceLaw> laws = {
        ConductanceLaw::constant(1.0),
        ConductanceLaw::bernoulli_degenerate(0.03, 2.0),
        ConductanceLaw::polynomial_tail(1.5, 0.5),
        ConductanceLaw::dyadic_trap(4, 0.5),
        ConductanceLaw::custom({{0.5, 0.5}, {2.0, 0.5}}),
    };
    std::vector<LatticeSpec> lats = {
        {.d1 = 0, .d2 = 1, .L = 40, .boundary = Boundary::torus},
        {.d1 = 0, .d2 = 2, .L = 6, .boundary = Boundary::torus},
    };
    std::vector<double> alphas = {0.7, 1.0, 1.4};
    std::vector<Environment> out;
    for (int i = 0; i < count; ++i)
        out.push_back(sample_environment(laws[i % laws.size()], lats[i % lats.size()],
                                         i % 3 == 0 ? MuMode::csrw : MuMode::counting,
                                         100 + i, alphas[i % alphas.size()]));
    return out;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("criterion 1: uniformization agrees with the dense eigensolver") {
    Timer timer;
    double worst = 0.0;
    for (const auto& env : small_corpus(10)) {
        auto gen = generator(env, jump_kernel(env));
        int loc = gen.local(env.lattice->origin());
        for (double t : {0.3, 1.7}) {
            auto u = heat_kernel(gen, t, loc, 1e-12, KernelMethod::uniformization);
            auto e = heat_kernel(gen, t, loc, 1e-12, KernelMethod::eigensolve);
            worst = std::max(worst, (u.density - e.density).cwiseAbs().maxCoeff());
        }
    }
    report(1, "uniformization vs eigensolve <= 1e-8", worst <= 1e-8, timer.seconds(), 30);
}

TEST_CASE("criterion 2: semigroup / conservation / symmetry / domination corpus") {
    Timer timer;
    bool ok = true;
    auto corpus = small_corpus(20);
    for (const auto& env : corpus) {
        auto gen = generator(env, jump_kernel(env));
        SpectralFactor sf(gen);
        const double t = 0.9, s = 1.4;
        Eigen::MatrixXd Pt = sf.density_matrix(t);
        Eigen::MatrixXd Ps = sf.density_matrix(s);
        Eigen::MatrixXd Pts = sf.density_matrix(t + s);
        // mu-symmetry of the density
        ok &= (Pt - Pt.transpose()).cwiseAbs().maxCoeff() <= 1e-9;
        // Chapman-Kolmogorov with the measure in the middle
        Eigen::MatrixXd comp = Pt * gen.mu.asDiagonal() * Ps;
        ok &= (comp - Pts).cwiseAbs().maxCoeff() <= 1e-8;
        // conservation of total mass
        auto field = heat_kernel(gen, t, gen.local(env.lattice->origin()), 1e-12);
        ok &= std::abs(field.total_mass(gen.mu) - 1.0) <= 1e-9;
        // the Dirichlet kernel never exceeds the free kernel
        auto domain = env.lattice->ball(env.lattice->origin(), 3.0);
        auto killed = killed_generator(env, domain);
        auto pb = dirichlet_heat_kernel(killed, t, env.lattice->origin(), 1e-12);
        for (int li = 0; li < killed.size(); ++li)
            ok &= pb.density[li] <= field.density[gen.local(killed.states[li])] + 1e-12;
    }
    report(2, "20-case invariant corpus", ok, timer.seconds(), 120);
}

TEST_CASE("criterion 3: two-sided profile constants stable under refinement") {
    Timer timer;
    auto env = sample_environment(ConductanceLaw::constant(1.0),
                                  {.d1 = 0, .d2 = 1, .L = 512, .boundary = Boundary::torus},
                                  MuMode::counting, 0, 1.0);
    const auto& lat = *env.lattice;
    auto gen = generator(env, jump_kernel(env));
    const int x0 = lat.origin();
    auto coarse_y = detail::stride_sample(lat.ball(x0, 256.0), 96);
    auto fine_y = detail::stride_sample(lat.ball(x0, 256.0), 192);
    auto coarse = bounds_check(env, gen, x0, {8.0, 16.0, 32.0, 64.0}, coarse_y);
    auto fine = bounds_check(env, gen, x0, {8.0, 11.0, 16.0, 23.0, 32.0, 45.0, 64.0}, fine_y);
    bool finite = std::isfinite(coarse.C1_low) && std::isfinite(coarse.C2_up) &&
                  coarse.C1_low > 0.0 && coarse.C2_up > 0.0;
    auto rel = [](double a, double b) { return std::abs(a - b) / std::abs(a); };
    bool stable = rel(coarse.C1_low, fine.C1_low) <= 0.20 &&
                  rel(coarse.C2_up, fine.C2_up) <= 0.20;
    report(3, "profile constants finite, refinement-stable", finite && stable,
           timer.seconds(), 300);
}

TEST_CASE("criterion 4: exit-time scaling exponent and quartile constant") {
    Timer timer;
    auto env = sample_environment(ConductanceLaw::constant(1.0),
                                  {.d1 = 0, .d2 = 1, .L = 512, .boundary = Boundary::torus},
                                  MuMode::counting, 0, 1.0);
    WalkSimulator sim(env);
    const int x0 = env.lattice->origin();
    std::vector<ExitStats> per_r;
    for (double r : {8.0, 16.0, 32.0, 64.0})
        per_r.push_back(exit_time_stats(sim, x0, r, 10000, 7000 + std::llround(r)));
    double expo = exit_time_exponent(per_r);
    double C0 = exit_time_c0(per_r, env.alpha, 0.25);
    bool quartile_ok = C0 > 0.0;
    for (const auto& st : per_r) {
        // independent recount from the raw samples
        double cutoff = C0 * std::pow(st.r, env.alpha);
        long leq = std::count_if(st.samples.begin(), st.samples.end(),
                                 [&](double s) { return s <= cutoff; });
        quartile_ok &= leq <= st.nsamples / 4;
    }
    bool expo_ok = std::abs(expo - env.alpha) <= 0.2;
    report(4, "exit exponent alpha +/- 0.2, quartile C0", expo_ok && quartile_ok,
           timer.seconds(), 300);
}

TEST_CASE("criterion 5: pathwise identities within 3 MC standard errors") {
    Timer timer;
    bool ok = true;
    std::vector<ConductanceLaw> laws = {ConductanceLaw::constant(1.0),
                                        ConductanceLaw::bernoulli_degenerate(0.03),
                                        ConductanceLaw::polynomial_tail(1.5, 0.5)};
    for (std::size_t li = 0; li < laws.size(); ++li) {
        auto env = sample_environment(laws[li], {.d1 = 0, .d2 = 1, .L = 32},
                                      MuMode::counting, 11 + li, 1.0);
        const auto& lat = *env.lattice;
        const int x0 = lat.origin();
        auto domain = lat.ball(x0, 8.0);
        for (int off : {0, 2}) {
            int y = lat.index_of({off});
            auto dh = dynkin_hunt_residual(env, domain, 4.0, x0, y, 10000, 90 + li);
            ok &= std::abs(dh.residual) <= 3.0 * dh.stderr_mc + 1e-9;
        }
        WalkSimulator sim(env);
        auto f = [&lat](int u, int z) { return lat.distance(u, z) >= 2.0 ? 1.0 : 0.0; };
        auto lv = levy_system_check(sim, domain, f, x0, 10000, 50 + li);
        ok &= std::abs(lv.residual) <= 3.0 * lv.stderr_paired + 1e-9;
    }
    report(5, "Dynkin-Hunt + jump-identity residuals", ok, timer.seconds(), 120);
}

TEST_CASE("criterion 6: Green decay exponent and dual-method agreement") {
    Timer timer;
    auto env = sample_environment(ConductanceLaw::constant(1.0), {.d1 = 0, .d2 = 2, .L = 32},
                                  MuMode::counting, 0, 1.0);
    const auto& lat = *env.lattice;
    const int x0 = lat.origin();
    GreenSolver solver(env, lat.ball(x0, 28.0));
    auto gf = solver.green(x0);
    std::vector<double> xs, ys;
    for (int li = 0; li < solver.size(); ++li) {
        double rho = lat.radius(gf.domain[li]);
        if (rho >= 3.0 && rho <= 12.0 && gf.values[li] > 0.0) {
            xs.push_back(std::log(rho));
            ys.push_back(std::log(gf.values[li]));
        }
    }
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sx += xs[i];
        sy += ys[i];
        sxx += xs[i] * xs[i];
        sxy += xs[i] * ys[i];
    }
    const double n = static_cast<double>(xs.size());
    double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);

    auto small_domain = lat.ball(x0, 10.0);
    GreenSolver small(env, small_domain);
    auto direct = small.green(x0);
    auto dual = green_time_integral(env, killed_generator(env, small_domain), x0);
    double diff = (direct.values - dual.values).cwiseAbs().maxCoeff();

    report(6, "Green slope -1 +/- 0.2, dual check <= 1e-6",
           std::abs(slope + 1.0) <= 0.2 && diff <= 1e-6, timer.seconds(), 180);
}

TEST_CASE("criterion 7: Harnack ratio growth vs its weak form") {
    Timer timer;
    const std::vector<double> R_grid = {4.0, 8.0, 16.0};
    LatticeSpec spec{.d1 = 0, .d2 = 2, .L = 32};
    std::vector<double> ehi4, ehi16, wehi4, wehi16;
    std::vector<int> seeds(20);
    for (int i = 0; i < 20; ++i) seeds[i] = 300 + i;
    std::vector<HarnackReport> reps(seeds.size());
    cli::parallel_over(static_cast<int>(seeds.size()), 4, [&](int i) {
        auto env = sample_environment(ConductanceLaw::polynomial_tail(1.0, 0.5), spec,
                                      MuMode::counting, seeds[i], 1.0);
        reps[i] = harnack_ratios(env, env.lattice->origin(), R_grid, 8, 17);
    });
    for (const auto& rep : reps) {
        ehi4.push_back(rep.rows[0].max_ehi);
        ehi16.push_back(rep.rows[2].max_ehi);
        wehi4.push_back(rep.rows[0].max_wehi);
        wehi16.push_back(rep.rows[2].max_wehi);
    }
    bool growth = cli::median_of(ehi16) > cli::median_of(ehi4);
    bool weak_stable = cli::median_of(wehi16) < 3.0 * cli::median_of(wehi4);

    auto flat = sample_environment(ConductanceLaw::constant(1.0), spec, MuMode::counting, 0, 1.0);
    auto crep = harnack_ratios(flat, flat.lattice->origin(), R_grid, 8, 17);
    bool flat_bounded = true;
    for (const auto& row : crep.rows) flat_bounded &= row.max_ehi <= 3.0 * crep.rows[0].max_ehi;

    report(7, "heterogeneous ratio grows, weak form stays flat",
           growth && weak_stable && flat_bounded, timer.seconds(), 600);
}

TEST_CASE("criterion 8: trap return probability scales like 2^{-2N}") {
    Timer timer;
    // The full return probability of the jump chain is dominated by the
    // ambient nearest-neighbor walk (it plateaus near 2/sites on a finite
    // box), so the 2^{-2N} scaling is carried by the trap-confined return
    // path alone: enter the trap in one step, stay on the strong bond until
    // step 2n-1, exit straight back to the start. That product is exactly
    // the lower-bound component of P(2n,0,0); check it is flat after the
    // 2^{2N} rescaling, and that the full probability indeed dominates it.
    LatticeSpec spec{.d1 = 0, .d2 = 2, .L = 12};
    std::vector<double> scaled;
    bool dominated = true;
    for (int N = 3; N <= 8; ++N) {
        auto env = build_trap_environment(N, spec);
        const auto& lat = *env.lattice;
        const int n_sites = env.size();
        int x = lat.index_of({0, 0}), y = lat.index_of({0, 1}), z = lat.index_of({0, 2});
        auto row_sum = [&](int i) {
            double s = 0.0;
            for (int j = 0; j < n_sites; ++j) s += env.jump_rate(i, j);
            return s;
        };
        auto step = [&](int i, int j) { return env.jump_rate(i, j) / row_sum(i); };
        Eigen::Matrix2d T;
        T << 0.0, step(y, z), step(z, y), 0.0; // confined to {y, z}
        int n = 1 << (N - 1);
        Eigen::Matrix2d Tp = Eigen::Matrix2d::Identity();
        for (int m = 0; m < 2 * n - 2; ++m) Tp = Tp * T;
        double mechanism = step(x, y) * Tp(0, 0) * step(y, x);
        scaled.push_back(mechanism * std::pow(2.0, 2 * N));

        auto ret = trap_return_probability(env, lat.origin(), {2 * n});
        dominated &= ret.p_return[0] >= mechanism;
    }
    double lo = *std::min_element(scaled.begin(), scaled.end());
    double hi = *std::max_element(scaled.begin(), scaled.end());
    report(8, "scaled trap-path return flat, spread < 10x",
           lo > 0.0 && hi <= 10.0 * lo && dominated, timer.seconds(), 180);
}

TEST_CASE("criterion 9: stable reference against closed forms") {
    Timer timer;
    bool const_ok = std::abs(stable_symbol_constant(1, 1.0) - M_PI) <= 1e-7;
    StableDensityEvaluator cauchy(1, 1.0, 1.0 / M_PI);
    bool cauchy_ok = true;
    for (int i = 0; i < 20; ++i) {
        double x = -9.5 + i;
        cauchy_ok &= std::abs(cauchy.density1(x) - 1.0 / (M_PI * (1.0 + x * x))) <= 1e-6;
    }
    bool norm_ok = true;
    for (auto [d, alpha, a] : {std::tuple{1, 0.7, 0.5}, std::tuple{2, 1.4, 0.05}}) {
        StableDensityEvaluator ev(d, alpha, a);
        norm_ok &= std::abs(ev.normalization() - 1.0) <= 1e-4;
    }
    norm_ok &= std::abs(cauchy.normalization() - 1.0) <= 1e-4;
    report(9, "symbol constant, Cauchy density, normalization",
           const_ok && cauchy_ok && norm_ok, timer.seconds(), 60);
}

TEST_CASE("criterion 10: rescaled kernel error decreases toward the limit") {
    Timer timer;
    auto res = llt_error(ConductanceLaw::constant(1.0), {1}, {4, 8, 16, 32}, 1, 1.0, 0.5,
                         2.0, 2.0, 3, 0.25);
    bool decreasing = true;
    for (std::size_t k = 1; k < res.median_error.size(); ++k)
        decreasing &= res.median_error[k] < res.median_error[k - 1];
    report(10, "median sup-error strictly decreasing in n", decreasing, timer.seconds(), 600);
}

TEST_CASE("criterion 11: manifests reproduce their runs byte for byte") {
    Timer timer;
    namespace fs = std::filesystem;
    json env1d = {{"lattice", {{"d1", 0}, {"d2", 1}, {"L", 64}, {"boundary", "torus"}}},
                  {"law", {{"kind", "polynomial_tail"}, {"p", 1.5}, {"eps", 0.5}}},
                  {"alpha", 1.0},
                  {"seeds", {1, 2}}};
    std::vector<json> configs = {
        {{"experiment", "exit-times"},
         {"environment", env1d},
         {"params", {{"r_grid", {2.0, 4.0}}, {"nsamples", 400}, {"check_exponent", false}}}},
        {{"experiment", "heat-kernel"}, {"environment", env1d}, {"params", {{"t_grid", {1.0}}}}},
        {{"experiment", "assumptions"},
         {"environment",
          {{"lattice", {{"d1", 0}, {"d2", 2}, {"L", 32}, {"boundary", "torus"}}},
           {"law", {{"kind", "constant"}, {"value", 1.0}}},
           {"alpha", 1.0},
           {"seeds", {1}}}},
         {"params", {{"R_grid", {4.0}}, {"max_scan_sites", 8}}}},
    };
    bool ok = true;
    for (std::size_t i = 0; i < configs.size(); ++i) {
        fs::path a = fs::temp_directory_path() / ("rcmlab_acc_a" + std::to_string(i));
        fs::path b = fs::temp_directory_path() / ("rcmlab_acc_b" + std::to_string(i));
        fs::remove_all(a);
        fs::remove_all(b);
        ok &= cli::run_experiment(configs[i], a.string()).status == 0;
        json manifest = json::parse(slurp(a / "manifest.json"));
        ok &= cli::run_experiment(manifest, b.string()).status == 0;
        for (const char* f : {"manifest.json", "results.csv", "summary.json"})
            ok &= slurp(a / f) == slurp(b / f);
    }
    report(11, "manifest re-run identical on 3 experiments", ok, timer.seconds(), 120);
}
