#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rcmlab/heat_kernel.hpp"

namespace rcmlab {

namespace quad {

/// Adaptive Simpson quadrature with absolute tolerance.
inline double simpson_step(const std::function<double(double)>& f, double a, double b,
                           double fa, double fm, double fb, double whole, double tol,
                           int depth) {
    double m = 0.5 * (a + b);
    double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    double flm = f(lm), frm = f(rm);
    double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    double delta = left + right - whole;
    if (depth <= 0 || std::abs(delta) <= 15.0 * tol)
        return left + right + delta / 15.0;
    return simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
           simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

inline double adaptive_simpson(const std::function<double(double)>& f, double a, double b,
                               double tol, int depth = 40) {
    double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
    double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    return simpson_step(f, a, b, fa, fm, fb, whole, tol, depth);
}

} // namespace quad

/// One-dimensional cosine-tail integral I(alpha) = int_0^inf (1-cos s) s^{-1-alpha} ds,
/// evaluated by adaptive quadrature on [0, A] plus an integration-by-parts
/// series for the oscillatory tail (remainder O(A^{-6-alpha})).
inline double cosine_tail_integral(double alpha, double tol) {
    const double A = 60.0;
    // the integrand ~ s^{1-alpha}/2 near zero is singular for alpha > 1;
    // integrate [0, delta] by the alternating cosine series instead
    const double delta = 0.25;
    double head = 0.0, fact = 1.0;
    for (int k = 1; k <= 6; ++k) {
        fact *= (2.0 * k - 1.0) * (2.0 * k);
        double p = 2.0 * k - alpha;
        head += (k % 2 ? 1.0 : -1.0) * std::pow(delta, p) / (fact * p);
    }
    auto f = [alpha](double s) {
        return (1.0 - std::cos(s)) * std::pow(s, -1.0 - alpha);
    };
    head += quad::adaptive_simpson(f, delta, A, tol);
    // tail of the constant part: int_A^inf s^{-1-alpha} ds
    double tail = std::pow(A, -alpha) / alpha;
    // minus the oscillatory part int_A^inf cos(s) s^{-1-alpha} ds by repeated
    // integration by parts: sum_k (prod of exponents) trig(A) A^{-1-alpha-k}
    double c = std::cos(A), s = std::sin(A);
    double p1 = 1.0 + alpha, p2 = p1 + 1.0, p3 = p2 + 1.0, p4 = p3 + 1.0, p5 = p4 + 1.0;
    double osc = -s * std::pow(A, -p1) + p1 * c * std::pow(A, -p2) +
                 p1 * p2 * s * std::pow(A, -p3) - p1 * p2 * p3 * c * std::pow(A, -p4) -
                 p1 * p2 * p3 * p4 * s * std::pow(A, -p5);
    return head + tail - osc;
}

/// Surface factor S(d, alpha) = int_{S^{d-1}} |omega_1|^alpha dsigma.
inline double sphere_moment(int d, double alpha, double tol) {
    if (d == 1) return 2.0;
    if (d == 2) {
        auto f = [alpha](double th) { return std::pow(std::abs(std::cos(th)), alpha); };
        return 4.0 * quad::adaptive_simpson(f, 0.0, M_PI / 2.0, tol);
    }
    // |S^{d-2}| * int_0^pi |cos|^alpha sin^{d-2} dtheta
    double sphere = 2.0 * std::pow(M_PI, 0.5 * (d - 1)) / std::tgamma(0.5 * (d - 1));
    auto f = [alpha, d](double th) {
        return std::pow(std::abs(std::cos(th)), alpha) *
               std::pow(std::sin(th), static_cast<double>(d - 2));
    };
    return sphere * quad::adaptive_simpson(f, 0.0, M_PI, tol);
}

/// Symbol constant c(d, alpha) with psi(xi) = c * a * |xi|^alpha for the jump
/// intensity a |z|^{-d-alpha} dz:
///   c(d, alpha) = int_{R^d} (1 - cos(e.z)) |z|^{-d-alpha} dz.
inline double stable_symbol_constant(int d, double alpha, double tol = 1e-9) {
    if (d < 1) throw std::invalid_argument("stable_symbol_constant: d >= 1");
    if (alpha < 1e-3 || alpha > 2.0 - 1e-3)
        throw std::invalid_argument(
            "stable_symbol_constant: alpha outside [1e-3, 2-1e-3] margins");
    return cosine_tail_integral(alpha, tol) * sphere_moment(d, alpha, tol);
}

struct StableDensityValue {
    double value = 0.0;
    bool tail_asymptotic = false; // outside the resolved range; value is a.t.|x|^{-d-alpha}
};

/// Numerical density of the rotationally symmetric stable process with jump
/// intensity a |z|^{-d-alpha} dz: Fourier inversion at t = 1 (cosine kernel
/// for d = 1, Hankel kernel for d = 2), every other t by the exact scaling
/// k_{a,t}(x) = t^{-d/alpha} k_{a,1}(t^{-1/alpha} x). For d >= 3 there is no
/// dedicated inversion; the evaluator is marked experimental and returns the
/// interpolation k1(0) / (1 + (r/r*)^{d+alpha}) matched to the exact value at
/// the origin and the exact tail coefficient a.
class StableDensityEvaluator {
public:
    StableDensityEvaluator(int d, double alpha, double a, double resolved_radius = 32.0)
        : d_(d), alpha_(alpha), a_(a), x_max_(resolved_radius) {
        if (d < 1) throw std::invalid_argument("StableDensityEvaluator: d >= 1 required");
        if (a <= 0.0) throw std::invalid_argument("StableDensityEvaluator: a > 0 required");
        b_ = stable_symbol_constant(d, alpha) * a;
        xi_max_ = std::pow(45.0 / b_, 1.0 / alpha_);
        if (d >= 3) {
            experimental_ = true;
            // k1(0) = |S^{d-1}| / (2 pi)^d * Gamma(d/alpha) / (alpha b^{d/alpha})
            origin_value_ = surface_area() / std::pow(2.0 * M_PI, d) *
                            std::tgamma(d / alpha_) / (alpha_ * std::pow(b_, d / alpha_));
            match_radius_ = std::pow(a_ / origin_value_, 1.0 / (d + alpha_));
            // interpolation k0 (1 + (r/r1)^g)^{-(d+alpha)/g}: the origin value
            // and the tail coefficient are exact for every shape exponent g;
            // bisect g so the total mass is 1 as well (mass grows with g)
            double lo = 0.2, hi = 80.0;
            for (int it = 0; it < 80; ++it) {
                shape_ = 0.5 * (lo + hi);
                (experimental_mass() > 1.0 ? hi : lo) = shape_;
            }
        }
    }

    int d() const { return d_; }
    double alpha() const { return alpha_; }
    double a() const { return a_; }
    double symbol_coefficient() const { return b_; }
    double resolved_radius() const { return x_max_; }
    bool experimental() const { return experimental_; }

    /// k_{a,1} at radius r (exactly even in the argument).
    double density1(double r) const {
        r = std::abs(r);
        if (experimental_)
            return origin_value_ *
                   std::pow(1.0 + std::pow(r / match_radius_, shape_),
                            -(d_ + alpha_) / shape_);
        const int n = oscillation_points(r);
        if (d_ == 1) {
            auto f = [this, r](double xi) {
                return std::cos(xi * r) * std::exp(-b_ * std::pow(xi, alpha_));
            };
            return integrate(f, n) / M_PI;
        }
        auto f = [this, r](double xi) {
            return std::cyl_bessel_j(0.0, xi * r) * std::exp(-b_ * std::pow(xi, alpha_)) * xi;
        };
        return integrate(f, n) / (2.0 * M_PI);
    }

    StableDensityValue density(double t, double r) const {
        if (t <= 0.0) throw std::invalid_argument("stable density: t > 0 required");
        double scale = std::pow(t, -1.0 / alpha_);
        double r1 = std::abs(r) * scale;
        StableDensityValue out;
        if (r1 > x_max_) {
            out.tail_asymptotic = true;
            out.value = a_ * t * std::pow(std::abs(r), -static_cast<double>(d_) - alpha_);
            return out;
        }
        out.value = std::pow(scale, d_) * density1(r1);
        return out;
    }

    /// Mass of k_{a,1} inside radius X by the closed-form radial reduction of
    /// the inversion integral.
    double mass_inside1(double X) const {
        if (experimental_) {
            auto f = [this](double r) {
                return surface_area() * std::pow(r, d_ - 1.0) * density1(r);
            };
            return quad::adaptive_simpson(f, 0.0, X, 1e-10);
        }
        const int n = oscillation_points(X);
        if (d_ == 1) {
            auto f = [this, X](double xi) {
                double s = xi == 0.0 ? X : std::sin(xi * X) / xi;
                return s * std::exp(-b_ * std::pow(xi, alpha_));
            };
            return 2.0 * integrate(f, n) / M_PI;
        }
        auto f = [this, X](double xi) {
            return std::cyl_bessel_j(1.0, xi * X) * std::exp(-b_ * std::pow(xi, alpha_));
        };
        return X * integrate(f, n);
    }

    /// Coefficient of |x|^{-d-k alpha} in the large-|x| expansion of k_{a,1}
    /// (Mellin continuation of the inversion integral); k = 1 gives a.
    double tail_coefficient(int k) const {
        if (experimental_) return k == 1 ? a_ : 0.0; // the interpolation's exact tail
        double bk = (k % 2 ? 1.0 : -1.0) * std::pow(b_, k) / std::tgamma(k + 1.0);
        double ka = k * alpha_;
        if (d_ == 1) return bk / M_PI * std::tgamma(1.0 + ka) * std::sin(M_PI * ka / 2.0);
        // reflection form of 1/Gamma(-ka/2): entire, and exactly zero at the
        // poles (k alpha even), which correctly kills those terms
        double inv_gamma = std::sin(-M_PI * ka / 2.0) * std::tgamma(1.0 + ka / 2.0) / M_PI;
        return -bk / (2.0 * M_PI) * std::pow(2.0, 1.0 + ka) * std::tgamma(1.0 + ka / 2.0) *
               inv_gamma;
    }

    /// Mass of k_{a,1} beyond radius X by the three-term tail expansion.
    double mass_beyond1(double X) const {
        double out = 0.0;
        for (int k = 1; k <= 3; ++k)
            out += surface_area() * tail_coefficient(k) * std::pow(X, -k * alpha_) /
                   (k * alpha_);
        return out;
    }

    /// Quadrature check: inside-radius-X mass plus the expansion tail; should
    /// be 1 up to the neglected expansion orders.
    double normalization(double X = 64.0) const { return mass_inside1(X) + mass_beyond1(X); }

private:
    double surface_area() const { // |S^{d-1}|
        return 2.0 * std::pow(M_PI, 0.5 * d_) / std::tgamma(0.5 * d_);
    }

    double experimental_mass() const {
        double X = 64.0 * std::max(1.0, match_radius_);
        return mass_inside1(X) + surface_area() * a_ * std::pow(X, -alpha_) / alpha_;
    }

    int oscillation_points(double r) const {
        double needed = 24.0 * xi_max_ * (r + 1.0);
        int n = static_cast<int>(std::max(4000.0, needed));
        return n + (n % 2); // composite Simpson needs an even panel count
    }

    /// Composite Simpson over [0, xi_max]; the integrand beyond is below
    /// exp(-45) of its peak.
    double integrate(const std::function<double(double)>& f, int n) const {
        double h = xi_max_ / n;
        double acc = f(0.0) + f(xi_max_);
        for (int k = 1; k < n; ++k) acc += f(k * h) * (k % 2 ? 4.0 : 2.0);
        return acc * h / 3.0;
    }

    int d_;
    double alpha_, a_, b_, x_max_, xi_max_;
    bool experimental_ = false;
    double origin_value_ = 0.0, match_radius_ = 1.0, shape_ = 1.0;
};

/// Convergence table of the rescaled lattice kernel toward the stable
/// density: e(n) = sup over the (t, x) grid of |n^d p(n^alpha t, 0, [nx]) -
/// k_{a,t}(x)|, per seed and as a seed-median.
struct LltResult {
    std::vector<int> n_grid;
    std::vector<std::uint64_t> seeds;
    std::vector<std::vector<double>> per_seed_error; // [n index][seed index]
    std::vector<double> median_error;                // [n index]
};

inline LltResult llt_error(const ConductanceLaw& law, const std::vector<std::uint64_t>& seeds,
                           const std::vector<int>& n_grid, int d, double alpha, double T1,
                           double T2, double k_radius, int t_points = 3,
                           double x_step = 0.25, double kernel_tol = 1e-9,
                           std::int64_t site_cap = SiteIndex::kDefaultSiteCap) {
    if (d != 1)
        throw std::invalid_argument(
            "llt_error: only full one-dimensional boxes are supported (the half-space "
            "limit has no closed Fourier form, and higher-d tori exceed the site cap)");
    if (seeds.empty() || n_grid.empty()) throw std::invalid_argument("llt_error: empty grid");
    if (!(T2 > T1 && T1 > 0.0)) throw std::invalid_argument("llt_error: need 0 < T1 < T2");
    if (k_radius <= 1.0) throw std::invalid_argument("llt_error: need k_radius > 1");

    const double a = law.mean();
    StableDensityEvaluator ref(d, alpha, a);

    std::vector<double> t_grid;
    for (int i = 0; i < t_points; ++i)
        t_grid.push_back(T1 + (T2 - T1) * (t_points == 1 ? 0.0
                                                         : static_cast<double>(i) / (t_points - 1)));
    std::vector<double> x_grid;
    for (double x = -k_radius; x <= k_radius + 1e-12; x += x_step) x_grid.push_back(x);

    LltResult out;
    out.n_grid = n_grid;
    out.seeds = seeds;
    for (int n : n_grid) {
        const int L = static_cast<int>(8.0 * n * k_radius);
        LatticeSpec spec{.d1 = 0, .d2 = 1, .L = L, .boundary = Boundary::torus};
        std::vector<double> errs;
        for (std::size_t si = 0; si < seeds.size(); ++si) {
            if (law.deterministic() && si > 0) {
                errs.push_back(errs.front()); // identical environment
                continue;
            }
            auto env = sample_environment(law, spec, MuMode::counting, seeds[si], alpha,
                                          site_cap);
            auto gen = generator(env, jump_kernel(env));
            const auto& lat = *env.lattice;
            int origin = lat.origin();
            double sup_err = 0.0;
            for (double t : t_grid) {
                auto field = heat_kernel(gen, std::pow(n, alpha) * t, origin, kernel_tol);
                if (t == t_grid.back()) {
                    // torus-size check: the walk's mass beyond radius 4 n k may
                    // not exceed what the limit density itself puts there (a
                    // heavy tail owns O(1) far mass) by more than 1e-3; excess
                    // signals wrap-around contamination of the window
                    double far = 0.0;
                    for (int y = 0; y < lat.size(); ++y)
                        if (lat.radius(y) > 4.0 * n * k_radius)
                            far += field.density[y] * gen.mu[y];
                    double ref_far =
                        1.0 - ref.mass_inside1(4.0 * k_radius * std::pow(t, -1.0 / alpha));
                    if (far >= ref_far + 1e-3)
                        throw std::runtime_error(
                            "llt_error: torus too small, need radius > " +
                            std::to_string(2 * L) + " for n = " + std::to_string(n));
                }
                for (double x : x_grid) {
                    int coord = static_cast<int>(std::floor(n * x));
                    int site = lat.index_of({coord});
                    double lattice_val = std::pow(n, d) * field.density[site];
                    double limit_val = ref.density(t, x).value;
                    sup_err = std::max(sup_err, std::abs(lattice_val - limit_val));
                }
            }
            errs.push_back(sup_err);
        }
        out.per_seed_error.push_back(errs);
        std::vector<double> sorted = errs;
        std::sort(sorted.begin(), sorted.end());
        std::size_t m = sorted.size();
        out.median_error.push_back(m % 2 ? sorted[m / 2]
                                         : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]));
    }
    return out;
}

} // namespace rcmlab
