#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "rcmlab/heat_kernel.hpp"
#include "rcmlab/walk.hpp"

namespace rcmlab {

/// Profile shape the kernel is compared against:
/// phi(t, rho) = min(t^{-d/alpha}, t / rho^{d+alpha}).
inline double stable_profile(double t, double rho, int d, double alpha) {
    double on_diag = std::pow(t, -static_cast<double>(d) / alpha);
    if (rho <= 0.0) return on_diag;
    double off_diag = t / std::pow(rho, d + alpha);
    return std::min(on_diag, off_diag);
}

enum class BoundsRegime { on_diagonal, off_diagonal, crossover };

inline const char* to_string(BoundsRegime r) {
    switch (r) {
        case BoundsRegime::on_diagonal: return "on-diagonal";
        case BoundsRegime::off_diagonal: return "off-diagonal";
        case BoundsRegime::crossover: return "crossover";
    }
    return "?";
}

struct BoundsPoint {
    double t = 0.0;
    int y = -1;
    double rho = 0.0;
    double p = 0.0;
    double phi = 0.0;
    double ratio = 0.0; // p / phi, only meaningful when !excluded
    bool excluded = false;
    BoundsRegime regime = BoundsRegime::on_diagonal;
};

/// Extremal-constant scan of p(t,x0,y) against the two-sided profile:
/// C1_low = min p/phi and C2_up = max p/phi over the included points, so
/// C1_low * phi <= p <= C2_up * phi holds everywhere with equality attained.
struct BoundsReport {
    int x0 = -1;
    std::vector<BoundsPoint> points;
    double C1_low = std::numeric_limits<double>::infinity();
    double C2_up = 0.0;
    int excluded_count = 0;

    double spread() const { return C2_up / C1_low; }

    /// Smallest grid t whose included points all satisfy
    /// c1 * phi <= p <= c2 * phi (infinity if none does).
    double first_passing_t(double c1, double c2) const {
        std::vector<double> ts;
        for (const auto& pt : points) ts.push_back(pt.t);
        std::sort(ts.begin(), ts.end());
        ts.erase(std::unique(ts.begin(), ts.end()), ts.end());
        for (double t : ts) {
            bool ok = true;
            for (const auto& pt : points) {
                if (pt.t != t || pt.excluded) continue;
                if (pt.p < c1 * pt.phi || pt.p > c2 * pt.phi) {
                    ok = false;
                    break;
                }
            }
            if (ok) return t;
        }
        return std::numeric_limits<double>::infinity();
    }
};

/// Scans p(t, x0, y) over a (t, y) grid against the stable profile. Points
/// with p below 10x the truncation error are excluded (flagged), not clamped:
/// dividing noise would fabricate lower-bound violations in the deep tail.
inline BoundsReport bounds_check(const Environment& env, const GeneratorMatrix& gen, int x0,
                                 const std::vector<double>& t_grid,
                                 const std::vector<int>& y_set, double tol = 1e-10) {
    if (t_grid.empty() || y_set.empty())
        throw std::invalid_argument("bounds_check: empty scan grid");
    const auto& lat = *env.lattice;
    const int d = env.dim();
    BoundsReport rep;
    rep.x0 = x0;
    for (double t : t_grid) {
        if (t <= 0.0) throw std::invalid_argument("bounds_check: t must be > 0");
        auto field = heat_kernel(gen, t, gen.local(x0), tol);
        for (int y : y_set) {
            BoundsPoint pt;
            pt.t = t;
            pt.y = y;
            pt.rho = lat.distance(x0, y);
            pt.p = field.density[gen.local(y)];
            pt.phi = stable_profile(t, pt.rho, d, env.alpha);
            double on_diag = std::pow(t, -static_cast<double>(d) / env.alpha);
            double off_diag = pt.rho > 0.0
                                  ? t / std::pow(pt.rho, d + env.alpha)
                                  : std::numeric_limits<double>::infinity();
            double rel = std::abs(on_diag - off_diag) /
                         std::max(on_diag, std::min(off_diag, 1e300));
            pt.regime = rel <= 1e-12 ? BoundsRegime::crossover
                        : on_diag < off_diag ? BoundsRegime::on_diagonal
                                             : BoundsRegime::off_diagonal;
            if (pt.p < 10.0 * field.trunc_error) {
                pt.excluded = true;
                ++rep.excluded_count;
            } else {
                pt.ratio = pt.p / pt.phi;
                rep.C1_low = std::min(rep.C1_low, pt.ratio);
                rep.C2_up = std::max(rep.C2_up, pt.ratio);
            }
            rep.points.push_back(pt);
        }
    }
    if (rep.C2_up == 0.0) throw std::runtime_error("bounds_check: every point excluded");
    return rep;
}

/// Decomposition residual r = p(t,x0,y) - p^B(t,x0,y) - E[p(t - tau, X_tau, y);
/// tau <= t], with the expectation over Monte Carlo exits of B and the inner
/// kernel evaluated spectrally. Exact on finite chains, so |r| should sit
/// within a few MC standard errors.
struct DynkinHuntResult {
    double p_full = 0.0;
    double p_dirichlet = 0.0;
    double exit_term = 0.0;
    double residual = 0.0;
    double stderr_mc = 0.0;
    int nsamples = 0;
};

inline DynkinHuntResult dynkin_hunt_residual(const Environment& env,
                                             const std::vector<int>& domain, double t,
                                             int x0, int y, int nsamples,
                                             std::uint64_t seed, double tol = 1e-10) {
    if (nsamples < 1000)
        throw std::invalid_argument("dynkin_hunt_residual: nsamples >= 1000");
    auto J = jump_kernel(env);
    auto full = generator(env, J);
    SpectralFactor sf(full);

    DynkinHuntResult out;
    out.nsamples = nsamples;
    out.p_full = heat_kernel(full, t, x0, tol).density[y];

    std::vector<char> in_domain(env.size(), 0);
    for (int s : domain) in_domain[s] = 1;
    if (!in_domain[x0])
        throw std::invalid_argument("dynkin_hunt_residual: x0 outside domain");
    if (in_domain[y]) {
        auto genB = generator(env, J, domain);
        out.p_dirichlet = dirichlet_heat_kernel(genB, t, x0, tol).density[genB.local(y)];
    }

    WalkSimulator sim(env);
    double sum = 0.0, sum2 = 0.0;
    for (int k = 0; k < nsamples; ++k) {
        CounterRng rng(seed, static_cast<std::uint64_t>(k));
        auto traj = sim.simulate(x0, t, rng, &in_domain);
        double z = 0.0;
        if (traj.status == TerminalStatus::absorbed)
            z = sf.p(t - traj.final_time(), traj.final_site(), y);
        sum += z;
        sum2 += z * z;
    }
    out.exit_term = sum / nsamples;
    double var = (sum2 - nsamples * out.exit_term * out.exit_term) / (nsamples - 1.0);
    out.stderr_mc = std::sqrt(std::max(var, 0.0) / nsamples);
    out.residual = out.p_full - out.p_dirichlet - out.exit_term;
    return out;
}

/// Near-diagonal oscillation fit: regresses
///   log|p^B(t,x0,y) - p^B(t,x0,x0)| - log t^{-d/alpha}
/// against log(rho(x0,y)/t^{1/alpha}) over pairs with rho <= t^{1/alpha};
/// a positive slope is the regularity exponent.
struct HoelderFit {
    double beta = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
    int points_used = 0;
};

inline HoelderFit hoelder_diagnostic(const Environment& env, const GeneratorMatrix& genB,
                                     const std::vector<double>& t_grid, int x0,
                                     double tol = 1e-10) {
    const auto& lat = *env.lattice;
    const int d = env.dim();
    std::vector<double> xs, ys;
    for (double t : t_grid) {
        auto field = dirichlet_heat_kernel(genB, t, x0, tol);
        double p0 = field.density[genB.local(x0)];
        double scale = std::pow(t, -static_cast<double>(d) / env.alpha);
        double reach = std::pow(t, 1.0 / env.alpha);
        for (int i = 0; i < genB.size(); ++i) {
            int y = genB.states[i];
            double rho = lat.distance(x0, y);
            if (rho <= 0.0 || rho > reach) continue; // y = x0 has zero oscillation
            double diff = std::abs(field.density[i] - p0);
            if (diff <= 10.0 * field.trunc_error) continue;
            xs.push_back(std::log(rho / reach));
            ys.push_back(std::log(diff) - std::log(scale));
        }
    }
    if (xs.size() < 8)
        throw std::runtime_error("hoelder_diagnostic: fewer than 8 usable points");
    const std::size_t n = xs.size();
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sx += xs[i];
        sy += ys[i];
        sxx += xs[i] * xs[i];
        sxy += xs[i] * ys[i];
    }
    HoelderFit fit;
    fit.points_used = static_cast<int>(n);
    double denom = n * sxx - sx * sx;
    fit.beta = (n * sxy - sx * sy) / denom;
    fit.intercept = (sy - fit.beta * sx) / n;
    double ss_res = 0.0, ss_tot = 0.0, ybar = sy / n;
    for (std::size_t i = 0; i < n; ++i) {
        double pred = fit.beta * xs[i] + fit.intercept;
        ss_res += (ys[i] - pred) * (ys[i] - pred);
        ss_tot += (ys[i] - ybar) * (ys[i] - ybar);
    }
    fit.r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
    return fit;
}

} // namespace rcmlab
