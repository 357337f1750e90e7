#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rcmlab/lattice.hpp"
#include "rcmlab/rng.hpp"

namespace rcmlab {

enum class LawKind { constant, bernoulli_degenerate, polynomial_tail, dyadic_trap, custom };
enum class MuMode { counting, csrw, custom };

inline const char* to_string(LawKind k) {
    switch (k) {
        case LawKind::constant: return "constant";
        case LawKind::bernoulli_degenerate: return "bernoulli_degenerate";
        case LawKind::polynomial_tail: return "polynomial_tail";
        case LawKind::dyadic_trap: return "dyadic_trap";
        case LawKind::custom: return "custom";
    }
    return "?";
}
inline const char* to_string(MuMode m) {
    switch (m) {
        case MuMode::counting: return "counting";
        case MuMode::csrw: return "csrw";
        case MuMode::custom: return "custom";
    }
    return "?";
}

/// Distribution of a single conductance w_{x,y}. Draws are i.i.d. across
/// unordered pairs, keyed by pair index for order-independent sampling.
class ConductanceLaw {
public:
    LawKind kind = LawKind::constant;

    // constant
    double value = 1.0;

    // bernoulli_degenerate: w = 0 with probability p0, else drawn from the
    // positive law (constant unless a table is supplied).
    double p0 = 0.0;
    double positive_value = 1.0;

    // polynomial_tail: P(w = k) = k^{-(2p+1+eps)} for integers k >= 2,
    // remaining mass at w = 1.
    double p = 1.0;
    double eps = 0.5;

    // dyadic_trap: P(w = 2^{-n}) = c n^{-(1+eps)} for 1 <= n <= N, with c
    // chosen so the dyadic mass totals 1/(2M); remaining mass at w = 1.
    int N = 1;
    double M = 1.0;

    // custom: explicit discrete table.
    std::vector<std::pair<double, double>> table; // (value, probability)

    static ConductanceLaw constant(double v) {
        ConductanceLaw l;
        l.kind = LawKind::constant;
        l.value = v;
        return l;
    }
    static ConductanceLaw bernoulli_degenerate(double p0, double positive_value = 1.0) {
        if (p0 < 0.0 || p0 >= 1.0)
            throw std::invalid_argument("bernoulli_degenerate: p0 must be in [0,1)");
        ConductanceLaw l;
        l.kind = LawKind::bernoulli_degenerate;
        l.p0 = p0;
        l.positive_value = positive_value;
        return l;
    }
    static ConductanceLaw polynomial_tail(double p, double eps) {
        if (p < 1.0 || eps <= 0.0)
            throw std::invalid_argument("polynomial_tail: need p >= 1 and eps > 0");
        ConductanceLaw l;
        l.kind = LawKind::polynomial_tail;
        l.p = p;
        l.eps = eps;
        return l;
    }
    static ConductanceLaw dyadic_trap(int N, double eps, double M = 1.0) {
        if (N < 1 || eps <= 0.0 || M < 1.0)
            throw std::invalid_argument("dyadic_trap: need N >= 1, eps > 0, M >= 1");
        ConductanceLaw l;
        l.kind = LawKind::dyadic_trap;
        l.N = N;
        l.eps = eps;
        l.M = M;
        return l;
    }
    static ConductanceLaw custom(std::vector<std::pair<double, double>> table) {
        double total = 0.0;
        for (auto& [v, q] : table) {
            if (v < 0.0 || q < 0.0) throw std::invalid_argument("custom law: negative entry");
            total += q;
        }
        if (std::abs(total - 1.0) > 1e-12)
            throw std::invalid_argument("custom law: probabilities must sum to 1");
        ConductanceLaw l;
        l.kind = LawKind::custom;
        l.table = std::move(table);
        return l;
    }

    /// Records whether the degenerate mass is below the 2^{-4} smallness
    /// threshold the variable-speed heat-kernel estimates require.
    bool degenerate_admissible() const {
        return zero_mass() < std::pow(2.0, -4.0);
    }

    double zero_mass() const {
        switch (kind) {
            case LawKind::constant: return value == 0.0 ? 1.0 : 0.0;
            case LawKind::bernoulli_degenerate: return p0;
            case LawKind::polynomial_tail:
            case LawKind::dyadic_trap: return 0.0;
            case LawKind::custom: {
                double m = 0.0;
                for (auto& [v, q] : table)
                    if (v == 0.0) m += q;
                return m;
            }
        }
        return 0.0;
    }

    bool deterministic() const { return kind == LawKind::constant; }

    /// CDF support table (value, cumulative probability), exact for discrete
    /// laws; used for inverse-CDF sampling and as the analytic reference in
    /// distribution tests. Tail truncated below 1e-14 for polynomial_tail.
    const std::vector<std::pair<double, double>>& cdf() const {
        if (cdf_.empty()) build_cdf();
        return cdf_;
    }

    double sample(CounterRng& rng) const {
        if (kind == LawKind::constant) return value;
        if (kind == LawKind::bernoulli_degenerate) {
            double u = rng.next_double();
            return u < p0 ? 0.0 : positive_value;
        }
        const auto& c = cdf();
        double u = rng.next_double();
        for (const auto& [v, cum] : c)
            if (u < cum) return v;
        return c.back().first;
    }

    double mean() const {
        if (kind == LawKind::constant) return value;
        if (kind == LawKind::bernoulli_degenerate) return (1.0 - p0) * positive_value;
        double m = 0.0;
        double prev = 0.0;
        for (const auto& [v, cum] : cdf()) {
            m += v * (cum - prev);
            prev = cum;
        }
        return m;
    }

private:
    mutable std::vector<std::pair<double, double>> cdf_;

    void build_cdf() const {
        std::vector<std::pair<double, double>> mass; // (value, prob)
        switch (kind) {
            case LawKind::constant:
                mass = {{value, 1.0}};
                break;
            case LawKind::bernoulli_degenerate:
                mass = {{0.0, p0}, {positive_value, 1.0 - p0}};
                break;
            case LawKind::polynomial_tail: {
                const double s = 2.0 * p + 1.0 + eps;
                double tail_mass = 0.0;
                std::vector<std::pair<double, double>> heavy;
                for (int k = 2;; ++k) {
                    double q = std::pow(static_cast<double>(k), -s);
                    if (q < 1e-14 && k > 16) break;
                    heavy.emplace_back(static_cast<double>(k), q);
                    tail_mass += q;
                }
                if (tail_mass >= 1.0)
                    throw std::invalid_argument("polynomial_tail: masses exceed 1");
                mass.emplace_back(1.0, 1.0 - tail_mass);
                mass.insert(mass.end(), heavy.begin(), heavy.end());
                break;
            }
            case LawKind::dyadic_trap: {
                double s = 0.0;
                for (int n = 1; n <= N; ++n) s += std::pow(n, -(1.0 + eps));
                const double c = 1.0 / (2.0 * M * s);
                double dyadic = 0.0;
                std::vector<std::pair<double, double>> weak;
                for (int n = 1; n <= N; ++n) {
                    double q = c * std::pow(n, -(1.0 + eps));
                    weak.emplace_back(std::pow(2.0, -n), q);
                    dyadic += q;
                }
                mass.emplace_back(1.0, 1.0 - dyadic);
                mass.insert(mass.end(), weak.begin(), weak.end());
                break;
            }
            case LawKind::custom:
                mass = table;
                break;
        }
        std::sort(mass.begin(), mass.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
        double cum = 0.0;
        cdf_.clear();
        for (auto& [v, q] : mass) {
            cum += q;
            cdf_.emplace_back(v, cum);
        }
        cdf_.back().second = std::max(cdf_.back().second, 1.0);
    }
};

/// Index of the unordered pair {i, j} (i < j) in row-major pair order.
inline std::size_t pair_index(int i, int j, int n) {
    if (i > j) std::swap(i, j);
    return static_cast<std::size_t>(i) * (2 * n - i - 1) / 2 + (j - i - 1);
}

/// A realized conductance environment on a lattice box. Immutable in normal
/// use; safe to share read-only across workers.
struct Environment {
    std::shared_ptr<const SiteIndex> lattice;
    std::vector<double> w; // unordered pairs, pair_index order
    Eigen::VectorXd mu;    // strictly positive site measure
    double alpha = 1.0;
    std::uint64_t seed = 0;
    ConductanceLaw law;
    MuMode mu_mode = MuMode::counting;

    int size() const { return lattice->size(); }
    int dim() const { return lattice->dim(); }

    double w_at(int i, int j) const {
        if (i == j) return 0.0;
        return w[pair_index(i, j, size())];
    }
    void set_w(int i, int j, double v) {
        if (i == j) throw std::invalid_argument("set_w: diagonal is fixed at 0");
        w[pair_index(i, j, size())] = v;
    }

    /// Stable-like rate density J(x,y) = w(x,y) / rho(x,y)^{d+alpha}.
    double jump_rate(int i, int j) const {
        if (i == j) return 0.0;
        double wij = w_at(i, j);
        if (wij == 0.0) return 0.0;
        return wij / std::pow(lattice->distance(i, j), dim() + alpha);
    }
};

/// Per-site CSRW measure mu^w(x) = sum_z J(x,z). Throws on an isolated site.
inline Eigen::VectorXd csrw_measure(const Environment& env) {
    const int n = env.size();
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int j = 0; j < n; ++j) s += env.jump_rate(i, j);
        if (s <= 0.0)
            throw std::runtime_error("csrw_measure: isolated site " + std::to_string(i));
        mu[i] = s;
    }
    return mu;
}

/// Draws an environment: one independent conductance per unordered pair, RNG
/// keyed by (seed, pair index) so output is identical regardless of order.
inline Environment sample_environment(const ConductanceLaw& law, const LatticeSpec& spec,
                                      MuMode mu_mode, std::uint64_t seed,
                                      double alpha = 1.0,
                                      std::int64_t site_cap = SiteIndex::kDefaultSiteCap) {
    if (alpha <= 0.0 || alpha >= 2.0)
        throw std::invalid_argument("sample_environment: alpha must be in (0,2)");
    Environment env;
    env.lattice = std::make_shared<SiteIndex>(spec, site_cap);
    env.alpha = alpha;
    env.seed = seed;
    env.law = law;
    env.mu_mode = mu_mode;
    const int n = env.size();
    env.w.assign(static_cast<std::size_t>(n) * (n - 1) / 2, 0.0);
    if (law.deterministic()) {
        for (auto& v : env.w) v = law.value;
    } else {
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) {
                std::size_t idx = pair_index(i, j, n);
                CounterRng rng(seed, idx);
                env.w[idx] = law.sample(rng);
            }
    }
    switch (mu_mode) {
        case MuMode::counting:
            env.mu = Eigen::VectorXd::Ones(n);
            break;
        case MuMode::csrw:
            env.mu = csrw_measure(env);
            break;
        case MuMode::custom:
            env.mu = Eigen::VectorXd::Ones(n); // caller overwrites
            break;
    }
    return env;
}

/// Deterministic trap configuration at the origin: strong bond C(y,z)=1 with
/// y = e1, z = 2e1, weak bond C(x,y)=2^{-N} at x = 0, every other
/// nearest-neighbor bond incident to y or z at 2^{-N}, no long-range bonds
/// (so the long-range totals at y and z vanish), and conductance-1
/// nearest-neighbor bonds everywhere else (the backbone to the boundary).
inline Environment build_trap_environment(int N, const LatticeSpec& spec, double eps = 0.5,
                                          std::int64_t site_cap = SiteIndex::kDefaultSiteCap) {
    if (N < 1) throw std::invalid_argument("build_trap_environment: N >= 1 required");
    if (N > 500) throw std::invalid_argument("build_trap_environment: 2^-N underflows for N > 500");
    if (spec.L < 4) throw std::invalid_argument("build_trap_environment: box too small (L >= 4)");

    Environment env;
    env.lattice = std::make_shared<SiteIndex>(spec, site_cap);
    env.alpha = 1.0;
    env.seed = 0;
    env.law = ConductanceLaw::dyadic_trap(N, eps);
    env.mu_mode = MuMode::counting;
    const auto& lat = *env.lattice;
    const int n = lat.size();
    const int d = lat.dim();
    env.w.assign(static_cast<std::size_t>(n) * (n - 1) / 2, 0.0);
    env.mu = Eigen::VectorXd::Ones(n);

    std::vector<int> c(d, 0);
    const int x = lat.index_of(c);
    c[d - 1] = 1;
    const int y = lat.index_of(c);
    c[d - 1] = 2;
    const int z = lat.index_of(c);
    if (x < 0 || y < 0 || z < 0)
        throw std::invalid_argument("build_trap_environment: trap sites outside box");

    const double weak = std::pow(2.0, -N);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            // Nearest-neighbor bonds only; ball-metric distance 1 means one
            // coordinate differs by 1.
            if (lat.distance(i, j) != 1.0) continue;
            double v = 1.0;
            bool touches_trap = (i == y || j == y || i == z || j == z);
            if (touches_trap) v = weak;
            if ((i == y && j == z) || (i == z && j == y)) v = 1.0;
            env.set_w(i, j, v);
        }
    env.set_w(x, y, weak);
    env.set_w(y, z, 1.0);
    return env;
}

} // namespace rcmlab
