#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "rcmlab/conductance.hpp"

namespace rcmlab {

/// User thresholds the fitted extremal constants are judged against. The
/// underlying statements are existential, so "pass" means "a constant of
/// reasonable size exists", with the fitted value reported for auditing.
struct AssumptionThresholds {
    double c_mu_max = 64.0;
    double C1_max = 1e6;
    double C2_max = 1e6;
    double C3_min = 1e-9;
    double c0_min = 0.5;
};

/// One scanned scale: radii r in [R^theta/2, 2R] and the deterministic
/// stride subsample of B(0,6R) used for the sup/inf scans.
struct ScanGrid {
    double R = 0.0;
    std::vector<double> r_values;
    std::vector<int> x_samples;
};

struct DvolReport {
    double c_mu_fit = 1.0;     // extremal of sup mu, mu(B)/r^d and r^d/mu(B)
    double kappa_fit = 0.0;    // smallest decay exponent for inf mu on B(0,R)
    bool kappa_scanned = false; // only meaningful for a custom site measure
    bool mu_bounded_pass = false;
    bool mu_lower_pass = true;
    bool volume_pass = false;
};

struct Hk1Report {
    double C1_fit = 0.0;  // extremal over the three normalized part-(i)/(ii) sums
    double c0_fit = 1.0;  // min fraction of a ball carrying positive bonds to z
    double c_star = 0.0;  // 8 * c_mu^{2/d}
    bool part_i_pass = false;
    bool part_ii_pass = false;
};

struct Hk2Report {
    double C2_fit = 0.0;
    bool pass = false;
};

struct Hk3Report {
    double C3_fit = std::numeric_limits<double>::infinity();
    bool pass = false;
};

struct AssumptionReport {
    double theta = 0.0;
    std::vector<ScanGrid> grids;
    std::vector<double> R_skipped; // scales whose 6R ball left the box
    DvolReport dvol;
    Hk1Report hk1;
    Hk2Report hk2;
    Hk3Report hk3;

    bool all_pass() const {
        return dvol.mu_bounded_pass && dvol.mu_lower_pass && dvol.volume_pass &&
               hk1.part_i_pass && hk1.part_ii_pass && hk2.pass && hk3.pass;
    }
};

namespace detail {

/// Deterministic stride subsample keeping at most `cap` sites.
inline std::vector<int> stride_sample(const std::vector<int>& sites, std::size_t cap) {
    if (sites.size() <= cap) return sites;
    std::vector<int> out;
    out.reserve(cap);
    double step = static_cast<double>(sites.size()) / cap;
    for (std::size_t k = 0; k < cap; ++k)
        out.push_back(sites[static_cast<std::size_t>(k * step)]);
    return out;
}

} // namespace detail

/// Scans the volume-regularity and kernel-summability conditions the large-
/// time estimates rest on, fitting the extremal constant of each inequality
/// over (R, r, sites). A pure function of (env, theta, R_grid, thresholds).
inline AssumptionReport check_assumptions(const Environment& env, double theta,
                                          const std::vector<double>& R_grid,
                                          const AssumptionThresholds& thr = {},
                                          std::size_t max_scan_sites = 48,
                                          int r_count = 4) {
    if (theta <= 0.0 || theta >= 1.0)
        throw std::invalid_argument("check_assumptions: theta must be in (0,1)");
    const auto& lat = *env.lattice;
    const int n = lat.size();
    const int d = env.dim();
    const int origin = lat.origin();

    AssumptionReport rep;
    rep.theta = theta;

    // usable scales: B(0, 6R) must stay inside the box
    for (double R : R_grid) {
        if (R <= 0.0) throw std::invalid_argument("check_assumptions: R must be > 0");
        if (6.0 * R > lat.spec().L) {
            rep.R_skipped.push_back(R);
            continue;
        }
        ScanGrid grid;
        grid.R = R;
        // distinct sites sit at distance >= 1, so radii below 1 scan only
        // singleton balls; clamp the lower end to the lattice spacing
        double r_lo = std::max(std::pow(R, theta) / 2.0, 1.0), r_hi = 2.0 * R;
        for (int k = 0; k < r_count; ++k) {
            double f = r_count == 1 ? 0.0 : static_cast<double>(k) / (r_count - 1);
            grid.r_values.push_back(r_lo * std::pow(r_hi / r_lo, f));
        }
        grid.x_samples = detail::stride_sample(lat.ball(origin, 6.0 * R), max_scan_sites);
        rep.grids.push_back(grid);
    }
    if (rep.grids.empty()) throw std::invalid_argument("check_assumptions: no usable scale");

    // ---- volume regularity ----
    double mu_sup = env.mu.maxCoeff();
    double c_mu = std::max(1.0, mu_sup);
    for (const auto& grid : rep.grids)
        for (double r : grid.r_values)
            for (int x : grid.x_samples) {
                double vol = 0.0;
                for (int y : lat.ball(x, r)) vol += env.mu[y];
                double rd = std::pow(r, d);
                c_mu = std::max({c_mu, vol / rd, rd / vol});
            }
    rep.dvol.c_mu_fit = c_mu;
    rep.dvol.mu_bounded_pass = c_mu <= thr.c_mu_max;
    rep.dvol.volume_pass = c_mu <= thr.c_mu_max;
    if (env.mu_mode == MuMode::custom) {
        rep.dvol.kappa_scanned = true;
        double kappa = 0.0;
        for (const auto& grid : rep.grids) {
            double inf_mu = std::numeric_limits<double>::infinity();
            for (int y : lat.ball(origin, grid.R)) inf_mu = std::min(inf_mu, env.mu[y]);
            if (grid.R > 1.0)
                kappa = std::max(kappa, -std::log(inf_mu) / std::log(grid.R));
        }
        rep.dvol.kappa_fit = std::max(kappa, 0.0);
        rep.dvol.mu_lower_pass = std::isfinite(rep.dvol.kappa_fit);
    }

    // ---- kernel summability ----
    double c_star = 8.0 * std::pow(c_mu, 2.0 / d);
    rep.hk1.c_star = c_star;
    double C1 = 0.0, c0 = 1.0;
    double C2 = 0.0, C3 = std::numeric_limits<double>::infinity();
    for (const auto& grid : rep.grids) {
        for (double r : grid.r_values) {
            double rd = std::pow(r, d);
            std::vector<std::vector<int>> balls_r; // B(y, r) per sampled site
            for (int y : grid.x_samples) balls_r.push_back(lat.ball(y, r));

            for (std::size_t xi = 0; xi < grid.x_samples.size(); ++xi) {
                int x = grid.x_samples[xi];
                // short-range second-moment sum <= C1 r^{2-alpha}
                double s_short = 0.0;
                // long-range tail sum * r^alpha <= C1
                double s_tail = 0.0;
                for (int y = 0; y < n; ++y) {
                    if (y == x) continue;
                    double w = env.w_at(x, y);
                    if (w <= 0.0) continue;
                    double rho = lat.distance(x, y);
                    if (rho <= r) s_short += w * env.mu[y] / std::pow(rho, d + env.alpha - 2.0);
                    if (rho > r) s_tail += w * env.mu[y] / std::pow(rho, d + env.alpha);
                }
                C1 = std::max(C1, s_short / std::pow(r, 2.0 - env.alpha));
                C1 = std::max(C1, s_tail * std::pow(r, env.alpha));

                // inverse-conductance sum over positive bonds within c_* r
                double s_inv = 0.0;
                for (int y : lat.ball(x, c_star * r)) {
                    double w = env.w_at(x, y);
                    if (w > 0.0) s_inv += env.mu[y] / w;
                }
                C1 = std::max(C1, s_inv / rd);

                // positive-bond ball fraction and the two-sided r^d row sums
                double vol_x = 0.0, volw_min = std::numeric_limits<double>::infinity();
                for (int y : balls_r[xi]) vol_x += env.mu[y];
                for (std::size_t zi = 0; zi < grid.x_samples.size(); ++zi) {
                    int z = grid.x_samples[zi];
                    double volw = 0.0;
                    for (int y : balls_r[xi])
                        if (env.w_at(y, z) > 0.0) volw += env.mu[y];
                    volw_min = std::min(volw_min, volw);

                    // sum_{z' in B(y=z, r)} w(x, z') mu(z') within [C3, C2] r^d
                    double row = 0.0;
                    for (int zp : balls_r[zi]) row += env.w_at(x, zp) * env.mu[zp];
                    C2 = std::max(C2, row / rd);
                    C3 = std::min(C3, row / rd);
                }
                c0 = std::min(c0, volw_min / vol_x);
            }
        }
    }
    rep.hk1.C1_fit = C1;
    rep.hk1.c0_fit = c0;
    rep.hk1.part_i_pass = C1 <= thr.C1_max && c0 > thr.c0_min;
    rep.hk1.part_ii_pass = C1 <= thr.C1_max;
    rep.hk2.C2_fit = C2;
    rep.hk2.pass = C2 <= thr.C2_max;
    rep.hk3.C3_fit = C3;
    rep.hk3.pass = C3 >= thr.C3_min;
    return rep;
}

} // namespace rcmlab
