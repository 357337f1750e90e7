#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "rcmlab/heat_kernel.hpp"
#include "rcmlab/markov.hpp"
#include "rcmlab/rng.hpp"

namespace rcmlab {

enum class TerminalStatus { alive_at_T, absorbed };

/// One realized path of the continuous-time walk: the start site, the jump
/// record (time, landing site) with strictly increasing times, and how the
/// path ended. `absorbed` means the walk jumped out of the supplied domain;
/// the exit site and exit time are the last jump entry.
struct Trajectory {
    int x0 = -1;
    std::vector<std::pair<double, int>> jumps;
    TerminalStatus status = TerminalStatus::alive_at_T;

    int final_site() const { return jumps.empty() ? x0 : jumps.back().second; }
    double final_time() const { return jumps.empty() ? 0.0 : jumps.back().first; }
};

/// Walker alias table: O(1) sampling from one site's jump-target row.
struct AliasTable {
    std::vector<double> prob;
    std::vector<int> alias;
    std::vector<int> target;

    int sample(CounterRng& rng) const {
        const int n = static_cast<int>(prob.size());
        double u = rng.next_double() * n;
        int k = std::min(static_cast<int>(u), n - 1);
        double frac = u - k;
        return frac < prob[k] ? target[k] : target[alias[k]];
    }
};

inline AliasTable build_alias_table(const std::vector<int>& targets,
                                    const std::vector<double>& weights) {
    const int n = static_cast<int>(targets.size());
    if (n == 0) throw std::invalid_argument("build_alias_table: empty row");
    double total = 0.0;
    for (double w : weights) total += w;
    AliasTable tab;
    tab.target = targets;
    tab.prob.assign(n, 0.0);
    tab.alias.assign(n, 0);
    std::vector<double> scaled(n);
    for (int i = 0; i < n; ++i) scaled[i] = weights[i] * n / total;
    std::vector<int> small, large;
    for (int i = 0; i < n; ++i) (scaled[i] < 1.0 ? small : large).push_back(i);
    while (!small.empty() && !large.empty()) {
        int s = small.back();
        small.pop_back();
        int l = large.back();
        tab.prob[s] = scaled[s];
        tab.alias[s] = l;
        scaled[l] -= 1.0 - scaled[s];
        if (scaled[l] < 1.0) {
            large.pop_back();
            small.push_back(l);
        }
    }
    for (int i : large) tab.prob[i] = 1.0;
    for (int i : small) tab.prob[i] = 1.0;
    return tab;
}

/// Exact continuous-time simulation of the walk: exponential holding clocks
/// (rate = total jump rate at the site) and alias-sampled jump targets
/// proportional to the kernel row. Alias tables are built lazily per visited
/// site and cached with a FIFO cap; the cache is internally synchronized so a
/// simulator can be shared across threads.
class WalkSimulator {
public:
    explicit WalkSimulator(const Environment& env, std::size_t cache_cap = 8192)
        : env_(env), J_(jump_kernel(env)), cache_cap_(cache_cap) {
        const int n = env.size();
        rate_.resize(n);
        for (int i = 0; i < n; ++i) rate_[i] = J_.row(i).sum() / env.mu[i];
    }

    const Environment& env() const { return env_; }

    /// Total jump rate at a site (zero means the walk freezes there).
    double rate(int site) const { return rate_[site]; }

    /// Simulate until horizon T. If `in_domain` is supplied, the path is
    /// reported absorbed at the first jump landing at a site where
    /// in_domain[site] is false (the jump itself is recorded).
    Trajectory simulate(int x0, double T, CounterRng& rng,
                        const std::vector<char>* in_domain = nullptr) const {
        if (x0 < 0 || x0 >= env_.size())
            throw std::invalid_argument("simulate: x0 outside box");
        if (T <= 0.0) throw std::invalid_argument("simulate: T must be > 0");
        if (in_domain && !(*in_domain)[x0])
            throw std::invalid_argument("simulate: x0 outside domain");
        Trajectory traj;
        traj.x0 = x0;
        int site = x0;
        double t = 0.0;
        for (;;) {
            double r = rate_[site];
            if (r <= 0.0) break; // frozen site: alive at T where it sits
            t += rng.next_exponential(r);
            if (t > T) break;
            site = sample_target(site, rng);
            traj.jumps.emplace_back(t, site);
            if (in_domain && !(*in_domain)[site]) {
                traj.status = TerminalStatus::absorbed;
                return traj;
            }
        }
        traj.status = TerminalStatus::alive_at_T;
        return traj;
    }

    int sample_target(int site, CounterRng& rng) const {
        std::lock_guard<std::mutex> lock(mutex_);
        auto it = cache_.find(site);
        if (it == cache_.end()) {
            it = cache_.emplace(site, make_table(site)).first;
            order_.push_back(site);
            if (cache_.size() > cache_cap_) {
                cache_.erase(order_.front());
                order_.pop_front();
            }
        }
        return it->second.sample(rng);
    }

private:
    AliasTable make_table(int site) const {
        std::vector<int> targets;
        std::vector<double> weights;
        for (int j = 0; j < env_.size(); ++j) {
            double w = J_(site, j);
            if (w > 0.0) {
                targets.push_back(j);
                weights.push_back(w);
            }
        }
        return build_alias_table(targets, weights);
    }

    const Environment& env_;
    Eigen::MatrixXd J_;
    std::vector<double> rate_;
    std::size_t cache_cap_;
    mutable std::unordered_map<int, AliasTable> cache_;
    mutable std::deque<int> order_;
    mutable std::mutex mutex_;
};

/// Exit-time sample set for one ball B(x0, r).
struct ExitStats {
    int x0 = -1;
    double r = 0.0;
    int nsamples = 0;
    std::vector<double> samples; // sorted ascending
    double mean = 0.0;
    double q25 = 0.0, q50 = 0.0, q75 = 0.0;

    /// Empirical P(tau <= s).
    double prob_leq(double s) const {
        auto it = std::upper_bound(samples.begin(), samples.end(), s);
        return static_cast<double>(it - samples.begin()) / samples.size();
    }
};

/// Simulates nsamples independent exits from B(x0, r); r = 0 makes tau the
/// first jump time. Sample k uses the RNG stream (seed, k) so results are
/// independent of evaluation order.
inline ExitStats exit_time_stats(const WalkSimulator& sim, int x0, double r, int nsamples,
                                 std::uint64_t seed) {
    if (nsamples < 400)
        throw std::invalid_argument("exit_time_stats: need >= 400 samples for quantiles");
    const auto& lat = *sim.env().lattice;
    ExitStats stats;
    stats.x0 = x0;
    stats.r = r;
    stats.nsamples = nsamples;
    stats.samples.resize(nsamples);
    for (int k = 0; k < nsamples; ++k) {
        CounterRng rng(seed, static_cast<std::uint64_t>(k));
        int site = x0;
        double t = 0.0;
        for (;;) {
            double rate = sim.rate(site);
            if (rate <= 0.0)
                throw std::runtime_error("exit_time_stats: walk froze inside the ball");
            t += rng.next_exponential(rate);
            site = sim.sample_target(site, rng);
            if (lat.distance(x0, site) > r) break;
        }
        stats.samples[k] = t;
    }
    std::sort(stats.samples.begin(), stats.samples.end());
    double s = 0.0;
    for (double v : stats.samples) s += v;
    stats.mean = s / nsamples;
    auto quant = [&](double q) {
        return stats.samples[static_cast<std::size_t>(q * (nsamples - 1))];
    };
    stats.q25 = quant(0.25);
    stats.q50 = quant(0.50);
    stats.q75 = quant(0.75);
    return stats;
}

/// Least-squares slope of log(mean tau) against log(r) across a radius grid.
inline double exit_time_exponent(const std::vector<ExitStats>& per_r) {
    const std::size_t n = per_r.size();
    if (n < 2) throw std::invalid_argument("exit_time_exponent: need >= 2 radii");
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (const auto& st : per_r) {
        double x = std::log(st.r);
        double y = std::log(st.mean);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

/// Largest C0 such that the empirical P(tau <= C0 r^alpha) <= level holds
/// simultaneously across the scanned radii (0 if even tiny C0 fails).
inline double exit_time_c0(const std::vector<ExitStats>& per_r, double alpha,
                           double level = 0.25) {
    double c0 = std::numeric_limits<double>::infinity();
    for (const auto& st : per_r) {
        // largest s with P(tau <= s) <= level is strictly below the order
        // statistic at index floor(level * n); ties push s below the whole
        // run of equal samples so the count stays at most that index.
        std::size_t k = static_cast<std::size_t>(level * st.nsamples);
        if (k >= st.samples.size()) k = st.samples.size() - 1;
        auto first = std::lower_bound(st.samples.begin(), st.samples.end(), st.samples[k]);
        double s = first == st.samples.begin() ? 0.5 * st.samples.front()
                                               : 0.5 * (*(first - 1) + *first);
        c0 = std::min(c0, s / std::pow(st.r, alpha));
    }
    return c0;
}

/// Monte Carlo occupancy estimate of the time-t law started at x0, expressed
/// as a density w.r.t. mu, with per-site binomial standard errors.
struct McKernelEstimate {
    double t = 0.0;
    int x0 = -1;
    int nsamples = 0;
    Eigen::VectorXd density;
    Eigen::VectorXd stderr_density;
};

inline McKernelEstimate mc_heat_kernel(const WalkSimulator& sim, double t, int x0,
                                       int nsamples, std::uint64_t seed) {
    if (nsamples < 1000) throw std::invalid_argument("mc_heat_kernel: nsamples >= 1000");
    const int n = sim.env().size();
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(n);
    if (t == 0.0) {
        counts[x0] = nsamples;
    } else {
        for (int k = 0; k < nsamples; ++k) {
            CounterRng rng(seed, static_cast<std::uint64_t>(k));
            auto traj = sim.simulate(x0, t, rng);
            counts[traj.final_site()] += 1.0;
        }
    }
    McKernelEstimate est;
    est.t = t;
    est.x0 = x0;
    est.nsamples = nsamples;
    est.density.resize(n);
    est.stderr_density.resize(n);
    const auto& mu = sim.env().mu;
    for (int i = 0; i < n; ++i) {
        double phat = counts[i] / nsamples;
        est.density[i] = phat / mu[i];
        est.stderr_density[i] = std::sqrt(phat * (1.0 - phat) / nsamples) / mu[i];
    }
    return est;
}

/// Identity check equating the expected sum of f over actual jumps up to the
/// exit of a domain with the time integral of the f-weighted jump rates along
/// the same paths. The paired estimator reuses each path for both sides.
struct LevyCheck {
    double lhs = 0.0;
    double rhs = 0.0;
    double residual = 0.0;
    double stderr_paired = 0.0;
    int nsamples = 0;
};

inline LevyCheck levy_system_check(const WalkSimulator& sim, const std::vector<int>& domain,
                                   const std::function<double(int, int)>& f, int x0,
                                   int nsamples, std::uint64_t seed) {
    const auto& env = sim.env();
    const int n = env.size();
    std::vector<char> in_domain(n, 0);
    for (int s : domain) in_domain[s] = 1;
    if (!in_domain[x0]) throw std::invalid_argument("levy_system_check: x0 outside domain");
    for (int s : domain)
        if (f(s, s) != 0.0)
            throw std::invalid_argument("levy_system_check: f must vanish on the diagonal");

    // Per-site rate sums Sigma_z f(u,z) q(u,z), cached for domain sites.
    std::unordered_map<int, double> fq;
    auto fq_at = [&](int u) {
        auto it = fq.find(u);
        if (it != fq.end()) return it->second;
        double acc = 0.0;
        for (int z = 0; z < n; ++z) {
            if (z == u) continue;
            double j = env.jump_rate(u, z);
            if (j > 0.0) acc += f(u, z) * j / env.mu[u];
        }
        fq.emplace(u, acc);
        return acc;
    };

    double sum_l = 0.0, sum_r = 0.0, sum_d2 = 0.0;
    const double horizon = std::numeric_limits<double>::max() / 4.0;
    for (int k = 0; k < nsamples; ++k) {
        CounterRng rng(seed, static_cast<std::uint64_t>(k));
        double lhs = 0.0, rhs = 0.0;
        int site = x0;
        double t = 0.0;
        for (;;) {
            double rate = sim.rate(site);
            if (rate <= 0.0)
                throw std::runtime_error("levy_system_check: walk froze inside domain");
            double hold = rng.next_exponential(rate);
            rhs += hold * fq_at(site);
            int next = sim.sample_target(site, rng);
            lhs += f(site, next);
            t += hold;
            site = next;
            if (!in_domain[site]) break;
            if (t > horizon) throw std::runtime_error("levy_system_check: no exit");
        }
        sum_l += lhs;
        sum_r += rhs;
        double d = lhs - rhs;
        sum_d2 += d * d;
    }
    LevyCheck out;
    out.nsamples = nsamples;
    out.lhs = sum_l / nsamples;
    out.rhs = sum_r / nsamples;
    out.residual = out.lhs - out.rhs;
    double var = (sum_d2 - nsamples * out.residual * out.residual) / (nsamples - 1.0);
    out.stderr_paired = std::sqrt(std::max(var, 0.0) / nsamples);
    return out;
}

} // namespace rcmlab
