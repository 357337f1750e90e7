#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "rcmlab/heat_kernel.hpp"
#include "rcmlab/markov.hpp"
#include "rcmlab/rng.hpp"

namespace rcmlab {

/// Killed generator on a sub-domain built directly from the environment,
/// without materializing the full box-sized kernel matrix (the diagonal still
/// needs the full outgoing rate, computed row by row).
inline GeneratorMatrix killed_generator(const Environment& env, const std::vector<int>& domain) {
    if (domain.empty()) throw std::invalid_argument("killed_generator: empty domain");
    const int n = env.size();
    GeneratorMatrix gen;
    gen.states = domain;
    gen.killed = true;
    const int m = gen.size();
    gen.mu.resize(m);
    for (int i = 0; i < m; ++i) gen.mu[i] = env.mu[domain[i]];
    gen.Q = Eigen::MatrixXd::Zero(m, m);
    for (int i = 0; i < m; ++i) {
        const int gi = domain[i];
        double full = 0.0;
        for (int gj = 0; gj < n; ++gj) full += env.jump_rate(gi, gj);
        gen.Q(i, i) = -full / env.mu[gi];
    }
    for (int i = 0; i < m; ++i)
        for (int j = i + 1; j < m; ++j) {
            double v = env.jump_rate(domain[i], domain[j]);
            gen.Q(i, j) = v / env.mu[domain[i]];
            gen.Q(j, i) = v / env.mu[domain[j]];
        }
    gen.Lambda = -gen.Q.diagonal().minCoeff();
    return gen;
}

/// 1 + sup of inverse conductances over unordered pairs in `sites`; infinite
/// whenever any in-range conductance vanishes (upper-bound checks that rely
/// on it are then skipped, not failed).
inline double theta_constant(const Environment& env, const std::vector<int>& sites) {
    double sup_inv = 0.0;
    for (std::size_t a = 0; a < sites.size(); ++a)
        for (std::size_t b = a + 1; b < sites.size(); ++b) {
            double w = env.w_at(sites[a], sites[b]);
            if (w <= 0.0) return std::numeric_limits<double>::infinity();
            sup_inv = std::max(sup_inv, 1.0 / w);
        }
    return 1.0 + sup_inv;
}

enum class GreenMethod { linear_solve, time_integral };

/// G^B(x0, .) as a density w.r.t. mu: the expected occupation time integral
/// of the killed kernel.
struct GreenField {
    std::vector<int> domain;
    int x0 = -1; // global site
    Eigen::VectorXd values;
    GreenMethod method = GreenMethod::linear_solve;
    double theta = 0.0;
};

/// Shared Cholesky factorization of A = -M Q_B (symmetric positive definite
/// whenever every positive-conductance component of B has positive exit
/// rate). One factorization serves Green rows, harmonic extensions, and
/// hitting profiles on the same domain.
class GreenSolver {
public:
    GreenSolver(const Environment& env, std::vector<int> domain)
        : env_(env), domain_(std::move(domain)) {
        const int n = env.size();
        const int m = static_cast<int>(domain_.size());
        if (m == 0) throw std::invalid_argument("GreenSolver: empty domain");
        local_.assign(n, -1);
        for (int i = 0; i < m; ++i) local_[domain_[i]] = i;

        // A(i,j) = -J(gi,gj) off-diagonal, full-row rate * mu on the diagonal.
        A_.setZero(m, m);
        exit_rate_.resize(m);
        for (int i = 0; i < m; ++i) {
            const int gi = domain_[i];
            double full = 0.0, exit = 0.0;
            for (int gj = 0; gj < n; ++gj) {
                double v = env.jump_rate(gi, gj);
                full += v;
                if (local_[gj] < 0) exit += v;
            }
            A_(i, i) = full;
            exit_rate_[i] = exit;
        }
        for (int i = 0; i < m; ++i)
            for (int j = i + 1; j < m; ++j) {
                double v = env.jump_rate(domain_[i], domain_[j]);
                A_(i, j) = -v;
                A_(j, i) = -v;
            }
        check_components();
        llt_.compute(A_);
        if (llt_.info() != Eigen::Success)
            throw std::runtime_error("GreenSolver: factorization failed (singular domain)");
    }

    const std::vector<int>& domain() const { return domain_; }
    int local(int site) const { return local_[site]; }

    Eigen::VectorXd solve(const Eigen::VectorXd& b) const { return llt_.solve(b); }

    /// G^B(x0, y) for all y in the domain (density w.r.t. mu).
    GreenField green(int x0_global) const {
        int loc = local(x0_global);
        if (loc < 0) throw std::invalid_argument("GreenSolver: x0 outside domain");
        Eigen::VectorXd e = Eigen::VectorXd::Zero(size());
        e[loc] = 1.0;
        GreenField field;
        field.domain = domain_;
        field.x0 = x0_global;
        field.values = solve(e);
        field.method = GreenMethod::linear_solve;
        field.theta = theta_constant(env_, domain_);
        return field;
    }

    /// Solution of Lu = 0 on the domain with the supplied exterior values;
    /// returns a full-box vector equal to boundary_data outside the domain.
    Eigen::VectorXd harmonic(const Eigen::VectorXd& boundary_data) const {
        const int n = env_.size();
        if (boundary_data.size() != n)
            throw std::invalid_argument("harmonic: boundary data must cover the box");
        const int m = size();
        Eigen::VectorXd b = Eigen::VectorXd::Zero(m);
        for (int i = 0; i < m; ++i) {
            const int gi = domain_[i];
            double acc = 0.0;
            for (int gj = 0; gj < n; ++gj)
                if (local_[gj] < 0) acc += env_.jump_rate(gi, gj) * boundary_data[gj];
            b[i] = acc;
        }
        Eigen::VectorXd u_in = solve(b);
        Eigen::VectorXd u = boundary_data;
        for (int i = 0; i < m; ++i) u[domain_[i]] = u_in[i];
        return u;
    }

    /// Exit-site profile f_z(x) = P_x(X_{tau} = z) via the Green-kernel
    /// convolution: f_z = A^{-1} b_z with b_z(v) = J(v, z).
    Eigen::VectorXd hitting_green(int z_global) const {
        if (local(z_global) >= 0)
            throw std::invalid_argument("hitting_green: z must be exterior");
        const int m = size();
        Eigen::VectorXd b(m);
        for (int i = 0; i < m; ++i) b[i] = env_.jump_rate(domain_[i], z_global);
        return solve(b);
    }

    /// Same profile via the harmonic extension of the indicator of z,
    /// restricted to the domain.
    Eigen::VectorXd hitting_harmonic(int z_global) const {
        if (local(z_global) >= 0)
            throw std::invalid_argument("hitting_harmonic: z must be exterior");
        Eigen::VectorXd bd = Eigen::VectorXd::Zero(env_.size());
        bd[z_global] = 1.0;
        Eigen::VectorXd u = harmonic(bd);
        Eigen::VectorXd f(size());
        for (int i = 0; i < size(); ++i) f[i] = u[domain_[i]];
        return f;
    }

    int size() const { return static_cast<int>(domain_.size()); }

private:
    /// Every positive-conductance component of the domain must see positive
    /// exit rate, else the killed system is singular there.
    void check_components() const {
        const int m = size();
        std::vector<int> parent(m);
        std::iota(parent.begin(), parent.end(), 0);
        std::function<int(int)> find = [&](int a) {
            while (parent[a] != a) a = parent[a] = parent[parent[a]];
            return a;
        };
        for (int i = 0; i < m; ++i)
            for (int j = i + 1; j < m; ++j)
                if (A_(i, j) != 0.0) parent[find(i)] = find(j);
        std::vector<double> comp_exit(m, 0.0);
        for (int i = 0; i < m; ++i) comp_exit[find(i)] += exit_rate_[i];
        for (int i = 0; i < m; ++i)
            if (comp_exit[find(i)] <= 0.0)
                throw std::runtime_error(
                    "GreenSolver: component containing site " +
                    std::to_string(domain_[i]) + " has no exit rate");
    }

    const Environment& env_;
    std::vector<int> domain_;
    std::vector<int> local_;
    Eigen::MatrixXd A_;
    Eigen::VectorXd exit_rate_;
    Eigen::LLT<Eigen::MatrixXd> llt_;
};

/// Green density via spectral time integration of the killed semigroup:
/// each mode contributes -1/lambda_k, an independent route used to
/// cross-validate the direct linear solve.
inline GreenField green_time_integral(const Environment& env, const GeneratorMatrix& killed,
                                      int x0_global) {
    int loc = killed.local(x0_global);
    if (loc < 0) throw std::invalid_argument("green_time_integral: x0 outside domain");
    const int m = killed.size();
    Eigen::VectorXd g = Eigen::VectorXd::Zero(m);
    Eigen::MatrixXd S(m, m);
    Eigen::VectorXd sq = killed.mu.cwiseSqrt();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) S(i, j) = sq[i] * killed.Q(i, j) / sq[j];
    S = 0.5 * (S + S.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
    if (es.info() != Eigen::Success)
        throw std::runtime_error("green_time_integral: eigensolve failed");
    const auto& V = es.eigenvectors();
    const auto& lam = es.eigenvalues();
    for (int y = 0; y < m; ++y) {
        double acc = 0.0;
        for (int k = 0; k < m; ++k) {
            if (lam[k] >= 0.0)
                throw std::runtime_error("green_time_integral: non-negative mode");
            acc += V(loc, k) * V(y, k) / (-lam[k]);
        }
        g[y] = acc / (sq[loc] * sq[y]);
    }
    GreenField field;
    field.domain = killed.states;
    field.x0 = x0_global;
    field.values = g;
    field.method = GreenMethod::time_integral;
    field.theta = theta_constant(env, killed.states);
    return field;
}

/// Per-radius Harnack ratios over a family of nonnegative harmonic functions.
struct HarnackRow {
    double R = 0.0;
    int tested = 0;
    int flagged_zero_inf = 0;
    double max_ehi = 0.0;  // sup / inf over B(x0, R)
    double max_wehi = 0.0; // R^{-d} * sum over B(x0, R), divided by inf
};

struct HarnackReport {
    int x0 = -1;
    std::vector<HarnackRow> rows;
};

namespace detail {

inline void harnack_accumulate(HarnackRow& row, const std::vector<double>& values, double Rd) {
    double sup = 0.0, inf = std::numeric_limits<double>::infinity(), sum = 0.0;
    for (double v : values) {
        sup = std::max(sup, v);
        inf = std::min(inf, v);
        sum += v;
    }
    ++row.tested;
    if (inf <= 0.0) {
        ++row.flagged_zero_inf;
        return;
    }
    row.max_ehi = std::max(row.max_ehi, sup / inf);
    row.max_wehi = std::max(row.max_wehi, (sum / Rd) / inf);
}

} // namespace detail

/// Harnack ratio scan with the hitting-profile family: for each R, hitting
/// profiles of B(x0, 2R) for a seeded sample of exterior sites z, evaluated
/// over B(x0, R).
inline HarnackReport harnack_ratios(const Environment& env, int x0,
                                    const std::vector<double>& R_grid, int z_samples,
                                    std::uint64_t seed) {
    if (R_grid.empty()) throw std::invalid_argument("harnack_ratios: empty R grid");
    if (z_samples < 1) throw std::invalid_argument("harnack_ratios: empty family");
    const auto& lat = *env.lattice;
    const int d = env.dim();
    HarnackReport rep;
    rep.x0 = x0;
    for (double R : R_grid) {
        auto B2 = lat.ball(x0, 2.0 * R);
        auto inner = lat.ball(x0, R);
        GreenSolver solver(env, B2);
        std::vector<int> exterior;
        for (int s = 0; s < lat.size(); ++s)
            if (solver.local(s) < 0) exterior.push_back(s);
        if (exterior.empty()) throw std::invalid_argument("harnack_ratios: no exterior sites");
        // deterministic sample without replacement
        CounterRng rng(seed, static_cast<std::uint64_t>(std::llround(R)));
        for (std::size_t i = exterior.size(); i > 1; --i)
            std::swap(exterior[i - 1], exterior[rng.next_u64() % i]);
        if (static_cast<int>(exterior.size()) > z_samples) exterior.resize(z_samples);

        HarnackRow row;
        row.R = R;
        const double Rd = std::pow(R, d);
        for (int z : exterior) {
            Eigen::VectorXd f = solver.hitting_green(z);
            std::vector<double> vals;
            vals.reserve(inner.size());
            for (int s : inner) vals.push_back(f[solver.local(s)]);
            detail::harnack_accumulate(row, vals, Rd);
        }
        rep.rows.push_back(row);
    }
    return rep;
}

/// Same scan over caller-supplied full-box functions assumed harmonic.
inline HarnackReport harnack_ratios_custom(const Environment& env, int x0,
                                           const std::vector<double>& R_grid,
                                           const std::vector<Eigen::VectorXd>& family) {
    if (family.empty()) throw std::invalid_argument("harnack_ratios_custom: empty family");
    const auto& lat = *env.lattice;
    const int d = env.dim();
    HarnackReport rep;
    rep.x0 = x0;
    for (double R : R_grid) {
        auto inner = lat.ball(x0, R);
        HarnackRow row;
        row.R = R;
        const double Rd = std::pow(R, d);
        for (const auto& h : family) {
            std::vector<double> vals;
            vals.reserve(inner.size());
            for (int s : inner) vals.push_back(h[s]);
            detail::harnack_accumulate(row, vals, Rd);
        }
        rep.rows.push_back(row);
    }
    return rep;
}

/// Dyadic-annulus scan of the conductance ratio that any environment
/// satisfying the Harnack inequality must keep bounded: for each annulus
/// 2^k < |z - x0| <= 2^{k+1}, the max over z of
///   w(x0,z) / (sup_{v in B(x0,2R), v != x0} w(v,z) * R^{alpha+theta'(d-alpha)}).
struct AnnulusRatio {
    int k = 0;
    double radius_lo = 0.0, radius_hi = 0.0;
    double max_ratio = 0.0;
    int z_count = 0;
    bool unbounded = false; // some z has w(x0,z) > 0 with vanishing ball sup
};

struct EhiConditionReport {
    int x0 = -1;
    double R = 0.0;
    double theta_prime = 0.0;
    std::vector<AnnulusRatio> annuli;

    double max_ratio() const {
        double m = 0.0;
        for (const auto& a : annuli) m = std::max(m, a.max_ratio);
        return m;
    }
};

inline EhiConditionReport ehi_necessary_condition(const Environment& env, int x0, double R,
                                                  double theta_prime) {
    const auto& lat = *env.lattice;
    const int d = env.dim();
    if (d <= env.alpha)
        throw std::invalid_argument("ehi_necessary_condition: requires d > alpha");
    auto ball = lat.ball(x0, 2.0 * R);
    const double scale = std::pow(R, env.alpha + theta_prime * (d - env.alpha));
    EhiConditionReport rep;
    rep.x0 = x0;
    rep.R = R;
    rep.theta_prime = theta_prime;
    for (int k = 0;; ++k) {
        double lo = std::pow(2.0, k), hi = std::pow(2.0, k + 1);
        AnnulusRatio ann;
        ann.k = k;
        ann.radius_lo = lo;
        ann.radius_hi = hi;
        for (int z = 0; z < lat.size(); ++z) {
            double rho = lat.distance(x0, z);
            if (rho <= lo || rho > hi) continue;
            ++ann.z_count;
            double wz = env.w_at(x0, z);
            if (wz == 0.0) continue; // contributes ratio 0
            double sup = 0.0;
            for (int v : ball)
                if (v != x0 && v != z) sup = std::max(sup, env.w_at(v, z));
            if (sup == 0.0) {
                ann.unbounded = true;
                continue;
            }
            ann.max_ratio = std::max(ann.max_ratio, wz / (sup * scale));
        }
        if (ann.z_count == 0) break; // annulus left the box
        rep.annuli.push_back(ann);
    }
    if (rep.annuli.empty())
        throw std::invalid_argument("ehi_necessary_condition: box too small for any annulus");
    return rep;
}

/// Return probabilities P(m, 0, 0) of the embedded jump chain (transition
/// probabilities proportional to kernel rows), by repeated matrix-vector
/// products. The chain is row-stochastic; frozen rows are absorbing.
struct TrapReturn {
    std::vector<int> steps;    // requested step counts m
    std::vector<double> p_return;
};

inline TrapReturn trap_return_probability(const Environment& env, int x0,
                                          const std::vector<int>& steps,
                                          long step_budget = 4096) {
    if (steps.empty()) throw std::invalid_argument("trap_return_probability: empty step list");
    int max_step = *std::max_element(steps.begin(), steps.end());
    if (max_step > step_budget)
        throw std::invalid_argument("trap_return_probability: step budget exceeded");
    const int n = env.size();
    Eigen::MatrixXd P = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i) {
        double row = 0.0;
        for (int j = 0; j < n; ++j) row += env.jump_rate(i, j);
        if (row <= 0.0) {
            P(i, i) = 1.0; // frozen site: absorbing
            continue;
        }
        for (int j = 0; j < n; ++j)
            if (j != i) P(i, j) = env.jump_rate(i, j) / row;
    }
    TrapReturn out;
    out.steps = steps;
    out.p_return.assign(steps.size(), 0.0);
    Eigen::VectorXd v = Eigen::VectorXd::Zero(n);
    v[x0] = 1.0;
    for (int m = 0; m <= max_step; ++m) {
        for (std::size_t s = 0; s < steps.size(); ++s)
            if (steps[s] == m) out.p_return[s] = v[x0];
        if (m < max_step) v = P.transpose() * v;
    }
    return out;
}

} // namespace rcmlab
