#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "rcmlab/assumptions.hpp"
#include "rcmlab/env_io.hpp"
#include "rcmlab/green.hpp"
#include "rcmlab/kernel_checks.hpp"
#include "rcmlab/stable.hpp"
#include "rcmlab/walk.hpp"

namespace rcmlab::cli {

using nlohmann::json;

struct RunResult {
    int status = 0; // 0 pass, 1 hard-check failure, 2 validation, 3 resource refusal
    std::vector<std::string> errors;
};

/// Raised when a configured resource cap refuses the run (exit status 3).
struct CapRefusal : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct Errors {
    std::vector<std::string> list;
    void add(std::string s) { list.push_back(std::move(s)); }
    bool ok() const { return list.empty(); }
};

/// Schema-checking view over one JSON object: typed accessors with ranges and
/// defaults, named-field errors, unknown-key rejection, and an echo of the
/// fully-resolved values for the manifest.
class Section {
public:
    Section(const json* j, std::string path, Errors& errs)
        : j_(j), path_(std::move(path)), errs_(&errs) {
        if (j_ && !j_->is_object()) {
            errs_->add(label() + ": must be an object");
            j_ = nullptr;
        }
    }

    std::string label() const { return path_.empty() ? "config" : path_; }
    std::string key(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }
    bool present(const std::string& k) const { return j_ && j_->contains(k); }

    double number(const std::string& k, std::optional<double> dflt,
                  double lo = -std::numeric_limits<double>::infinity(),
                  double hi = std::numeric_limits<double>::infinity()) {
        seen_.insert(k);
        if (!present(k)) {
            if (dflt) {
                resolved_[k] = *dflt;
                return *dflt;
            }
            errs_->add(key(k) + ": required");
            return 0.0;
        }
        const json& v = (*j_)[k];
        if (!v.is_number()) {
            errs_->add(key(k) + ": must be a number");
            return dflt.value_or(0.0);
        }
        double x = v.get<double>();
        if (!(x >= lo && x <= hi)) {
            errs_->add(key(k) + ": must be in [" + fmt(lo) + ", " + fmt(hi) + "]");
            return dflt.value_or(0.0);
        }
        resolved_[k] = v;
        return x;
    }

    long long integer(const std::string& k, std::optional<long long> dflt, long long lo,
                      long long hi) {
        seen_.insert(k);
        if (!present(k)) {
            if (dflt) {
                resolved_[k] = *dflt;
                return *dflt;
            }
            errs_->add(key(k) + ": required");
            return lo;
        }
        const json& v = (*j_)[k];
        if (!v.is_number_integer()) {
            errs_->add(key(k) + ": must be an integer");
            return dflt.value_or(lo);
        }
        long long x = v.get<long long>();
        if (x < lo || x > hi) {
            errs_->add(key(k) + ": must be in [" + std::to_string(lo) + ", " +
                       std::to_string(hi) + "]");
            return dflt.value_or(lo);
        }
        resolved_[k] = v;
        return x;
    }

    bool boolean(const std::string& k, bool dflt) {
        seen_.insert(k);
        if (!present(k)) {
            resolved_[k] = dflt;
            return dflt;
        }
        const json& v = (*j_)[k];
        if (!v.is_boolean()) {
            errs_->add(key(k) + ": must be a boolean");
            return dflt;
        }
        resolved_[k] = v;
        return v.get<bool>();
    }

    std::string choice(const std::string& k, std::optional<std::string> dflt,
                       const std::vector<std::string>& allowed) {
        seen_.insert(k);
        if (!present(k)) {
            if (dflt) {
                resolved_[k] = *dflt;
                return *dflt;
            }
            errs_->add(key(k) + ": required");
            return {};
        }
        const json& v = (*j_)[k];
        if (!v.is_string()) {
            errs_->add(key(k) + ": must be a string");
            return dflt.value_or("");
        }
        std::string s = v.get<std::string>();
        if (std::find(allowed.begin(), allowed.end(), s) == allowed.end()) {
            std::string opts;
            for (const auto& a : allowed) opts += (opts.empty() ? "" : ", ") + a;
            errs_->add(key(k) + ": must be one of {" + opts + "}");
            return dflt.value_or("");
        }
        resolved_[k] = v;
        return s;
    }

    std::vector<double> numbers(const std::string& k, std::optional<std::vector<double>> dflt,
                                double lo, double hi, std::size_t min_len = 1) {
        seen_.insert(k);
        if (!present(k)) {
            if (dflt) {
                resolved_[k] = *dflt;
                return *dflt;
            }
            errs_->add(key(k) + ": required");
            return {};
        }
        const json& v = (*j_)[k];
        if (!v.is_array() || v.size() < min_len) {
            errs_->add(key(k) + ": must be an array of >= " + std::to_string(min_len) +
                       " numbers");
            return dflt.value_or(std::vector<double>{});
        }
        std::vector<double> out;
        for (const auto& e : v) {
            if (!e.is_number() || !(e.get<double>() >= lo && e.get<double>() <= hi)) {
                errs_->add(key(k) + ": entries must be numbers in [" + fmt(lo) + ", " +
                           fmt(hi) + "]");
                return dflt.value_or(std::vector<double>{});
            }
            out.push_back(e.get<double>());
        }
        resolved_[k] = v;
        return out;
    }

    std::vector<long long> integers(const std::string& k,
                                    std::optional<std::vector<long long>> dflt, long long lo,
                                    long long hi, std::size_t min_len = 1) {
        seen_.insert(k);
        if (!present(k)) {
            if (dflt) {
                resolved_[k] = *dflt;
                return *dflt;
            }
            errs_->add(key(k) + ": required");
            return {};
        }
        const json& v = (*j_)[k];
        if (!v.is_array() || v.size() < min_len) {
            errs_->add(key(k) + ": must be an array of >= " + std::to_string(min_len) +
                       " integers");
            return dflt.value_or(std::vector<long long>{});
        }
        std::vector<long long> out;
        for (const auto& e : v) {
            if (!e.is_number_integer() || e.get<long long>() < lo || e.get<long long>() > hi) {
                errs_->add(key(k) + ": entries must be integers in [" + std::to_string(lo) +
                           ", " + std::to_string(hi) + "]");
                return dflt.value_or(std::vector<long long>{});
            }
            out.push_back(e.get<long long>());
        }
        resolved_[k] = v;
        return out;
    }

    const json* child(const std::string& k, bool required) {
        seen_.insert(k);
        if (!present(k)) {
            if (required) errs_->add(key(k) + ": required");
            return nullptr;
        }
        return &(*j_)[k];
    }

    void set_resolved(const std::string& k, json v) { resolved_[k] = std::move(v); }

    void finish() {
        if (!j_) return;
        for (const auto& [k, v] : j_->items())
            if (!seen_.count(k)) errs_->add(key(k) + ": unknown key");
    }

    json resolved() const { return resolved_; }

private:
    const json* j_;
    std::string path_;
    Errors* errs_;
    std::set<std::string> seen_;
    json resolved_ = json::object();
};

// ---------------------------------------------------------------------------
// environment block
// ---------------------------------------------------------------------------

struct EnvCfg {
    LatticeSpec spec;
    ConductanceLaw law = ConductanceLaw::constant(1.0);
    MuMode mu_mode = MuMode::counting;
    double alpha = 1.0;
    std::vector<std::uint64_t> seeds;
    json resolved;
};

inline ConductanceLaw parse_law(const json* j, Errors& errs, json& resolved) {
    Section s(j, "environment.law", errs);
    std::string kind = s.choice("kind", std::nullopt,
                                {"constant", "bernoulli_degenerate", "polynomial_tail",
                                 "dyadic_trap", "custom"});
    ConductanceLaw law = ConductanceLaw::constant(1.0);
    try {
        if (kind == "constant") {
            law = ConductanceLaw::constant(s.number("value", 1.0, 0.0, 1e12));
        } else if (kind == "bernoulli_degenerate") {
            double p0 = s.number("p0", std::nullopt, 0.0, 1.0);
            double pv = s.number("positive_value", 1.0, 0.0, 1e12);
            law = ConductanceLaw::bernoulli_degenerate(p0, pv);
        } else if (kind == "polynomial_tail") {
            law = ConductanceLaw::polynomial_tail(s.number("p", std::nullopt, 1.0, 1e6),
                                                  s.number("eps", std::nullopt, 1e-9, 1e6));
        } else if (kind == "dyadic_trap") {
            law = ConductanceLaw::dyadic_trap(
                static_cast<int>(s.integer("N", std::nullopt, 1, 500)),
                s.number("eps", 0.5, 1e-9, 1e6), s.number("M", 1.0, 1.0, 1e12));
        } else if (kind == "custom") {
            const json* t = s.child("table", true);
            std::vector<std::pair<double, double>> table;
            bool shape_ok = t && t->is_array();
            if (shape_ok)
                for (const auto& row : *t) {
                    if (!row.is_array() || row.size() != 2 || !row[0].is_number() ||
                        !row[1].is_number()) {
                        shape_ok = false;
                        break;
                    }
                    table.emplace_back(row[0].get<double>(), row[1].get<double>());
                }
            if (!shape_ok)
                errs.add("environment.law.table: must be an array of [value, prob] pairs");
            else {
                law = ConductanceLaw::custom(std::move(table));
                s.set_resolved("table", *t);
            }
        }
    } catch (const std::invalid_argument& e) {
        errs.add("environment.law: " + std::string(e.what()));
    }
    s.finish();
    resolved = s.resolved();
    return law;
}

inline EnvCfg parse_environment(const json* j, Errors& errs) {
    EnvCfg e;
    Section s(j, "environment", errs);

    Section lat(s.child("lattice", true), "environment.lattice", errs);
    e.spec.d1 = static_cast<int>(lat.integer("d1", 0, 0, 4));
    e.spec.d2 = static_cast<int>(lat.integer("d2", std::nullopt, 0, 4));
    e.spec.L = static_cast<int>(lat.integer("L", std::nullopt, 1, 1 << 24));
    std::string metric = lat.choice("metric", "euclidean", {"euclidean", "graph"});
    std::string boundary = lat.choice("boundary", "torus", {"absorbing_box", "torus"});
    lat.finish();
    e.spec.metric = metric == "graph" ? Metric::graph : Metric::euclidean;
    e.spec.boundary = boundary == "torus" ? Boundary::torus : Boundary::absorbing_box;
    if (e.spec.dim() < 1) errs.add("environment.lattice: d1 + d2 must be >= 1");

    json law_resolved;
    e.law = parse_law(s.child("law", true), errs, law_resolved);

    std::string mm = s.choice("mu_mode", "counting", {"counting", "csrw"});
    e.mu_mode = mm == "csrw" ? MuMode::csrw : MuMode::counting;

    e.alpha = s.number("alpha", 1.0);
    if (!(e.alpha > 0.0 && e.alpha < 2.0))
        errs.add("environment.alpha: must be in (0, 2)");

    for (long long sd : s.integers("seeds", std::vector<long long>{1}, 0,
                                   std::numeric_limits<long long>::max()))
        e.seeds.push_back(static_cast<std::uint64_t>(sd));
    s.finish();

    e.resolved = s.resolved();
    e.resolved["lattice"] = lat.resolved();
    e.resolved["law"] = law_resolved;
    return e;
}

// ---------------------------------------------------------------------------
// shared plumbing
// ---------------------------------------------------------------------------

struct Resolved {
    std::string experiment;
    EnvCfg env;
    std::uint64_t global_seed = 0;
    int threads = 1;
    long long max_sites = SiteIndex::kDefaultSiteCap;
    long long max_samples = 1000000;
    long long step_budget = 4096;
    const json* params = nullptr;
};

struct Artifacts {
    std::string csv_header;
    std::vector<std::string> rows;
    json checks = json::array();
    json extra = json::object();

    void check(const std::string& name, bool pass, json value = nullptr) {
        checks.push_back({{"name", name}, {"pass", pass}, {"value", std::move(value)}});
    }
    bool pass() const {
        for (const auto& c : checks)
            if (!c.at("pass").get<bool>()) return false;
        return true;
    }
};

/// Deterministic MC stream id for (global seed, environment seed, slot).
inline std::uint64_t mc_seed(const Resolved& R, std::uint64_t env_seed, std::uint64_t slot) {
    return R.global_seed * 0x9e3779b97f4a7c15ULL + env_seed * 1000003ULL + slot;
}

inline Environment make_env(const Resolved& R, std::uint64_t seed) {
    return sample_environment(R.env.law, R.env.spec, R.env.mu_mode, seed, R.env.alpha,
                              R.max_sites);
}

template <class F>
inline void parallel_over(int count, int threads, F&& fn) {
    threads = std::max(1, std::min(threads, count));
    if (threads <= 1) {
        for (int i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::exception_ptr> errs(threads);
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t)
        pool.emplace_back([&, t] {
            try {
                for (int i; (i = next.fetch_add(1)) < count;) fn(i);
            } catch (...) {
                errs[t] = std::current_exception();
            }
        });
    for (auto& th : pool) th.join();
    for (auto& e : errs)
        if (e) std::rethrow_exception(e);
}

inline void require_samples(const Resolved& R, long long requested) {
    if (requested > R.max_samples)
        throw CapRefusal("sample budget refused: requested " + std::to_string(requested) +
                         " > caps.max_samples " + std::to_string(R.max_samples));
}

inline double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    std::size_t m = v.size();
    return m % 2 ? v[m / 2] : 0.5 * (v[m / 2 - 1] + v[m / 2]);
}

inline std::pair<double, double> log_log_fit(const std::vector<double>& x,
                                             const std::vector<double>& y) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = static_cast<double>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        double lx = std::log(x[i]), ly = std::log(y[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    return {slope, (sy - slope * sx) / n};
}

// ---------------------------------------------------------------------------
// experiment runners
// ---------------------------------------------------------------------------

inline Artifacts run_assumptions(const Resolved& R, Section& p, Errors& errs) {
    double theta = p.number("theta", 0.5, 1e-6, 1.0 - 1e-6);
    auto R_grid = p.numbers("R_grid", std::vector<double>{4.0, 8.0}, 0.5, 1e9);
    auto max_scan = p.integer("max_scan_sites", 48, 1, 1000000);
    auto r_count = p.integer("r_count", 4, 1, 64);
    AssumptionThresholds thr;
    Section th(p.child("thresholds", false), "params.thresholds", errs);
    thr.c_mu_max = th.number("c_mu_max", thr.c_mu_max, 1.0, 1e18);
    thr.C1_max = th.number("C1_max", thr.C1_max, 0.0, 1e18);
    thr.C2_max = th.number("C2_max", thr.C2_max, 0.0, 1e18);
    thr.C3_min = th.number("C3_min", thr.C3_min, 0.0, 1e18);
    thr.c0_min = th.number("c0_min", thr.c0_min, 0.0, 1.0);
    th.finish();
    p.set_resolved("thresholds", th.resolved());
    p.finish();
    Artifacts art;
    if (!errs.ok()) return art;

    const int ns = static_cast<int>(R.env.seeds.size());
    std::vector<AssumptionReport> reps(ns);
    parallel_over(ns, R.threads, [&](int i) {
        auto env = make_env(R, R.env.seeds[i]);
        reps[i] = check_assumptions(env, theta, R_grid, thr,
                                    static_cast<std::size_t>(max_scan),
                                    static_cast<int>(r_count));
    });

    art.csv_header = "seed,family,quantity,value";
    bool dvol = true, hk1 = true, hk2 = true, hk3 = true;
    json by_seed = json::array();
    for (int i = 0; i < ns; ++i) {
        const auto& rep = reps[i];
        std::string s = std::to_string(R.env.seeds[i]);
        art.rows.push_back(s + ",dvol,c_mu_fit," + fmt(rep.dvol.c_mu_fit));
        art.rows.push_back(s + ",dvol,kappa_fit," + fmt(rep.dvol.kappa_fit));
        art.rows.push_back(s + ",hk1,C1_fit," + fmt(rep.hk1.C1_fit));
        art.rows.push_back(s + ",hk1,c0_fit," + fmt(rep.hk1.c0_fit));
        art.rows.push_back(s + ",hk1,c_star," + fmt(rep.hk1.c_star));
        art.rows.push_back(s + ",hk2,C2_fit," + fmt(rep.hk2.C2_fit));
        art.rows.push_back(s + ",hk3,C3_fit," + fmt(rep.hk3.C3_fit));
        dvol &= rep.dvol.mu_bounded_pass && rep.dvol.mu_lower_pass && rep.dvol.volume_pass;
        hk1 &= rep.hk1.part_i_pass && rep.hk1.part_ii_pass;
        hk2 &= rep.hk2.pass;
        hk3 &= rep.hk3.pass;
        by_seed.push_back({{"seed", R.env.seeds[i]}, {"all_pass", rep.all_pass()}});
        for (double skipped : rep.R_skipped)
            art.extra["R_skipped"].push_back(skipped);
    }
    art.check("dvol", dvol);
    art.check("hk1", hk1);
    art.check("hk2", hk2);
    art.check("hk3", hk3);
    art.extra["by_seed"] = by_seed;
    return art;
}

inline Artifacts run_heat_kernel(const Resolved& R, Section& p, Errors& errs) {
    auto t_grid = p.numbers("t_grid", std::vector<double>{1.0, 4.0}, 0.0, 1e12);
    double tol = p.number("tol", 1e-10, 1e-15, 1e-2);
    std::string method = p.choice("method", "uniformization", {"uniformization", "eigensolve"});
    double domain_radius = p.number("domain_radius", 0.0, 0.0, 1e9);
    double output_radius = p.number("output_radius", 1e18, 0.0, 1e18);
    p.finish();
    Artifacts art;
    if (!errs.ok()) return art;

    const KernelMethod km =
        method == "eigensolve" ? KernelMethod::eigensolve : KernelMethod::uniformization;
    const int ns = static_cast<int>(R.env.seeds.size());
    std::vector<std::vector<std::string>> rows(ns);
    std::vector<double> worst_neg(ns, 0.0), worst_mass(ns, 0.0);
    std::vector<char> killed_flag(ns, 0);
    parallel_over(ns, R.threads, [&](int i) {
        auto env = make_env(R, R.env.seeds[i]);
        const auto& lat = *env.lattice;
        const int x0 = lat.origin();
        GeneratorMatrix gen;
        if (domain_radius > 0.0) {
            gen = killed_generator(env, lat.ball(x0, domain_radius));
            killed_flag[i] = 1;
        } else {
            gen = killed_generator(env, [&] {
                std::vector<int> all(lat.size());
                for (int k = 0; k < lat.size(); ++k) all[k] = k;
                return all;
            }());
            gen.killed = false;
        }
        for (double t : t_grid) {
            auto field = heat_kernel(gen, t, gen.local(x0), tol, km);
            double mass = 0.0;
            for (int li = 0; li < gen.size(); ++li) {
                int y = gen.states[li];
                double rho = lat.radius(y);
                mass += field.density[li] * gen.mu[li];
                worst_neg[i] = std::min(worst_neg[i], field.density[li]);
                if (rho <= output_radius)
                    rows[i].push_back(std::to_string(R.env.seeds[i]) + "," + fmt(t) + "," +
                                      std::to_string(y) + "," + fmt(rho) + "," +
                                      fmt(field.density[li]));
            }
            worst_mass[i] = std::max(worst_mass[i],
                                     killed_flag[i] ? std::max(0.0, mass - 1.0)
                                                    : std::abs(mass - 1.0));
        }
    });

    art.csv_header = "seed,t,y,rho,p";
    for (auto& r : rows) art.rows.insert(art.rows.end(), r.begin(), r.end());
    double neg = *std::min_element(worst_neg.begin(), worst_neg.end());
    double mass_err = *std::max_element(worst_mass.begin(), worst_mass.end());
    art.check("nonnegative", neg >= -1e-12, neg);
    art.check("mass_conserved", mass_err <= 100.0 * tol + 1e-9, mass_err);
    return art;
}

inline Artifacts run_bounds_check(const Resolved& R, Section& p, Errors& errs) {
    auto t_grid = p.numbers("t_grid", std::vector<double>{8.0, 16.0, 32.0, 64.0}, 1e-12, 1e12);
    double tol = p.number("tol", 1e-10, 1e-15, 1e-2);
    double y_max_radius = p.number("y_max_radius", 1e18, 0.0, 1e18);
    auto max_points = p.integer("max_points", 4096, 1, 10000000);
    p.finish();
    Artifacts art;
    if (!errs.ok()) return art;

    const int ns = static_cast<int>(R.env.seeds.size());
    std::vector<std::vector<std::string>> rows(ns);
    std::vector<double> c1(ns), c2(ns);
    parallel_over(ns, R.threads, [&](int i) {
        auto env = make_env(R, R.env.seeds[i]);
        const auto& lat = *env.lattice;
        const int x0 = lat.origin();
        auto gen = generator(env, jump_kernel(env));
        auto y_set = detail::stride_sample(lat.ball(x0, std::min(y_max_radius, 1e17)),
                                           static_cast<std::size_t>(max_points));
        auto rep = bounds_check(env, gen, x0, t_grid, y_set, tol);
        c1[i] = rep.C1_low;
        c2[i] = rep.C2_up;
        for (const auto& pt : rep.points)
            rows[i].push_back(std::to_string(R.env.seeds[i]) + "," + fmt(pt.t) + "," +
                              std::to_string(pt.y) + "," + fmt(pt.rho) + "," + fmt(pt.p) +
                              "," + fmt(pt.phi) + "," + fmt(pt.ratio) + "," +
                              (pt.excluded ? "1" : "0") + "," + to_string(pt.regime));
    });

    art.csv_header = "seed,t,y,rho,p,phi,ratio,excluded,regime";
    for (auto& r : rows) art.rows.insert(art.rows.end(), r.begin(), r.end());
    bool finite = true;
    json constants = json::array();
    for (int i = 0; i < ns; ++i) {
        finite &= c1[i] > 0.0 && std::isfinite(c1[i]) && std::isfinite(c2[i]) && c2[i] > 0.0;
        constants.push_back({{"seed", R.env.seeds[i]},
                             {"C1_low", c1[i]},
                             {"C2_up", c2[i]},
                             {"spread", c2[i] / c1[i]}});
    }
    art.check("constants_finite", finite);
    art.extra["constants"] = constants;
    return art;
}

inline Artifacts run_exit_times(const Resolved& R, Section& p, Errors& errs) {
    auto r_grid = p.numbers("r_grid", std::vector<double>{8.0, 16.0, 32.0}, 0.0, 1e9, 2);
    auto nsamples = p.integer("nsamples", 2000, 400, 100000000);
    double level = p.number("level", 0.25, 1e-6, 1.0 - 1e-6);
    double exponent_tol = p.number("exponent_tol", 0.3, 0.0, 10.0);
    bool check_exponent = p.boolean("check_exponent", true);
    p.finish();
    Artifacts art;
    if (!errs.ok()) return art;
    require_samples(R, nsamples * static_cast<long long>(r_grid.size()) *
                           static_cast<long long>(R.env.seeds.size()));

    const int ns = static_cast<int>(R.env.seeds.size());
    std::vector<std::vector<std::string>> rows(ns);
    std::vector<double> exponents(ns), c0s(ns);
    parallel_over(ns, R.threads, [&](int i) {
        auto env = make_env(R, R.env.seeds[i]);
        WalkSimulator sim(env);
        const int x0 = env.lattice->origin();
        std::vector<ExitStats> per_r;
        for (std::size_t k = 0; k < r_grid.size(); ++k) {
            per_r.push_back(exit_time_stats(sim, x0, r_grid[k], static_cast<int>(nsamples),
                                            mc_seed(R, R.env.seeds[i], k)));
            const auto& st = per_r.back();
            rows[i].push_back(std::to_string(R.env.seeds[i]) + "," + fmt(st.r) + "," +
                              std::to_string(st.nsamples) + "," + fmt(st.mean) + "," +
                              fmt(st.q25) + "," + fmt(st.q50) + "," + fmt(st.q75));
        }
        exponents[i] = exit_time_exponent(per_r);
        c0s[i] = exit_time_c0(per_r, R.env.alpha, level);
    });

    art.csv_header = "seed,r,nsamples,mean,q25,q50,q75";
    for (auto& r : rows) art.rows.insert(art.rows.end(), r.begin(), r.end());
    double med = median_of(exponents);
    double c0_min = *std::min_element(c0s.begin(), c0s.end());
    art.check("exponent_within_tol",
              !check_exponent || std::abs(med - R.env.alpha) <= exponent_tol, med);
    art.check("c0_positive", c0_min > 0.0, c0_min);
    art.extra["exponent_by_seed"] = exponents;
    art.extra["median_exponent"] = med;
    art.extra["c0"] = c0_min;
    return art;
}

inline Artifacts run_dynkin_hunt(const Resolved& R, Section& p, Errors& errs) {
    double domain_radius = p.number("domain_radius", R.env.spec.L / 2.0, 1.0, 1e9);
    double t = p.number("t", 4.0, 1e-12, 1e12);
    auto nsamples = p.integer("nsamples", 10000, 1000, 100000000);
    auto y_offsets = p.integers("y_offsets", std::vector<long long>{0, 2, -2}, -(1 << 24),
                                1 << 24);
    double tol = p.number("tol", 1e-10, 1e-15, 1e-2);
    p.finish();
    Artifacts art;
    if (!errs.ok()) return art;
    require_samples(R, nsamples * static_cast<long long>(y_offsets.size()) *
                           static_cast<long long>(R.env.seeds.size()));

    const int ns = static_cast<int>(R.env.seeds.size());
    std::vector<std::vector<std::string>> rows(ns);
    std::vector<double> worst(ns, 0.0);
    parallel_over(ns, R.threads, [&](int i) {
        auto env = make_env(R, R.env.seeds[i]);
        const auto& lat = *env.lattice;
        const int x0 = lat.origin();
        auto domain = lat.ball(x0, domain_radius);
        for (std::size_t k = 0; k < y_offsets.size(); ++k) {
            std::vector<int> c(lat.dim(), 0);
            c[0] = static_cast<int>(y_offsets[k]);
            int y = lat.index_of(c);
            if (y < 0)
                throw std::invalid_argument("params.y_offsets: offset " +
                                            std::to_string(y_offsets[k]) +
                                            " is outside the box");
            auto res = dynkin_hunt_residual(env, domain, t, x0, y, static_cast<int>(nsamples),
                                            mc_seed(R, R.env.seeds[i], k), tol);
            worst[i] = std::max(worst[i],
                                std::abs(res.residual) / (3.0 * res.stderr_mc + 1e-10));
            rows[i].push_back(std::to_string(R.env.seeds[i]) + "," +
                              std::to_string(y_offsets[k]) + "," + fmt(res.p_full) + "," +
                              fmt(res.p_dirichlet) + "," + fmt(res.exit_term) + "," +
                              fmt(res.residual) + "," + fmt(res.stderr_mc));
        }
    });

    art.csv_header = "seed,y_offset,p_full,p_dirichlet,exit_term,residual,stderr";
    for (auto& r : rows) art.rows.insert(art.rows.end(), r.begin(), r.end());
    double w = *std::max_element(worst.begin(), worst.end());
    art.check("residual_within_3se", w <= 1.0, w);
    return art;
}

inline Artifacts run_levy_system(const Resolved& R, Section& p, Errors& errs) {
    double domain_radius = p.number("domain_radius", R.env.spec.L / 2.0, 1.0, 1e9);
    auto nsamples = p.integer("nsamples", 10000, 1000, 100000000);
    double cut = p.number("cut", 2.0, 1e-9, 1e9);
    p.finish();
    Artifacts art;
    if (!errs.ok()) return art;
    require_samples(R, nsamples * static_cast<long long>(R.env.seeds.size()));

    const int ns = static_cast<int>(R.env.seeds.size());
    std::vector<std::string> rows(ns);
    std::vector<double> worst(ns, 0.0);
    parallel_over(ns, R.threads, [&](int i) {
        auto env = make_env(R, R.env.seeds[i]);
        const auto& lat = *env.lattice;
        const int x0 = lat.origin();
        WalkSimulator sim(env);
        auto f = [&lat, cut](int u, int z) {
            return lat.distance(u, z) >= cut ? 1.0 : 0.0;
        };
        auto chk = levy_system_check(sim, lat.ball(x0, domain_radius), f, x0,
                                     static_cast<int>(nsamples), mc_seed(R, R.env.seeds[i], 0));
        worst[i] = std::abs(chk.residual) / (3.0 * chk.stderr_paired + 1e-10);
        rows[i] = std::to_string(R.env.seeds[i]) + "," + fmt(chk.lhs) + "," + fmt(chk.rhs) +
                  "," + fmt(chk.residual) + "," + fmt(chk.stderr_paired) + "," +
                  std::to_string(chk.nsamples);
    });

    art.csv_header = "seed,lhs,rhs,residual,stderr,nsamples";
    art.rows = rows;
    double w = *std::max_element(worst.begin(), worst.end());
    art.check("residual_within_3se", w <= 1.0, w);
    return art;
}

inline Artifacts run_green(const Resolved& R, Section& p, Errors& errs) {
    double domain_radius = p.number("domain_radius", R.env.spec.L / 2.0, 1.0, 1e9);
    bool dual_check = p.boolean("dual_check", true);
    double dual_tol = p.number("dual_tol", 1e-6, 1e-15, 1.0);
    auto dual_max_sites = p.integer("dual_max_sites", 2500, 1, 100000);
    double rho_min = p.number("slope_rho_min", 3.0, 0.0, 1e9);
    double rho_max = p.number("slope_rho_max", 0.0, 0.0, 1e9); // 0 = domain_radius / 2
    p.finish();
    Artifacts art;
    if (!errs.ok()) return art;
    if (rho_max <= 0.0) rho_max = domain_radius / 2.0;

    const int ns = static_cast<int>(R.env.seeds.size());
    std::vector<std::vector<std::string>> rows(ns);
    std::vector<double> slopes(ns, 0.0), dual_diff(ns, 0.0), thetas(ns, 0.0);
    std::vector<char> dual_done(ns, 0), slope_done(ns, 0);
    parallel_over(ns, R.threads, [&](int i) {
        auto env = make_env(R, R.env.seeds[i]);
        const auto& lat = *env.lattice;
        const int x0 = lat.origin();
        auto domain = lat.ball(x0, domain_radius);
        GreenSolver solver(env, domain);
        auto gf = solver.green(x0);
        thetas[i] = gf.theta;
        std::vector<double> xs, ys;
        for (int li = 0; li < solver.size(); ++li) {
            int y = domain[li];
            double rho = lat.radius(y);
            rows[i].push_back(std::to_string(R.env.seeds[i]) + "," + std::to_string(y) + "," +
                              fmt(rho) + "," + fmt(gf.values[li]));
            if (rho >= rho_min && rho <= rho_max && gf.values[li] > 0.0) {
                xs.push_back(rho);
                ys.push_back(gf.values[li]);
            }
        }
        if (xs.size() >= 4) {
            slopes[i] = log_log_fit(xs, ys).first;
            slope_done[i] = 1;
        }
        if (dual_check && solver.size() <= dual_max_sites) {
            auto killed = killed_generator(env, domain);
            auto dual = green_time_integral(env, killed, x0);
            dual_diff[i] = (dual.values - gf.values).cwiseAbs().maxCoeff();
            dual_done[i] = 1;
        }
    });

    art.csv_header = "seed,y,rho,G";
    for (auto& r : rows) art.rows.insert(art.rows.end(), r.begin(), r.end());
    bool dual_ok = true;
    double worst_dual = 0.0;
    int dual_count = 0;
    for (int i = 0; i < ns; ++i)
        if (dual_done[i]) {
            ++dual_count;
            worst_dual = std::max(worst_dual, dual_diff[i]);
            dual_ok &= dual_diff[i] <= dual_tol;
        }
    if (dual_check) art.check("dual_agreement", dual_ok && dual_count > 0, worst_dual);
    std::vector<double> fitted;
    for (int i = 0; i < ns; ++i)
        if (slope_done[i]) fitted.push_back(slopes[i]);
    if (!fitted.empty()) art.extra["median_slope"] = median_of(fitted);
    art.extra["slope_by_seed"] = slopes;
    art.extra["theta_by_seed"] = thetas;
    art.extra["dual_checked_seeds"] = dual_count;
    return art;
}

inline Artifacts run_harnack(const Resolved& R, Section& p, Errors& errs) {
    auto R_grid = p.numbers("R_grid", std::vector<double>{4.0, 8.0}, 1.0, 1e9);
    auto z_samples = p.integer("z_samples", 8, 1, 10000);
    p.finish();
    Artifacts art;
    if (!errs.ok()) return art;

    const int ns = static_cast<int>(R.env.seeds.size());
    std::vector<std::vector<std::string>> rows(ns);
    std::vector<HarnackReport> reps(ns);
    parallel_over(ns, R.threads, [&](int i) {
        auto env = make_env(R, R.env.seeds[i]);
        reps[i] = harnack_ratios(env, env.lattice->origin(), R_grid,
                                 static_cast<int>(z_samples), mc_seed(R, R.env.seeds[i], 0));
        for (const auto& row : reps[i].rows)
            rows[i].push_back(std::to_string(R.env.seeds[i]) + "," + fmt(row.R) + "," +
                              std::to_string(row.tested) + "," +
                              std::to_string(row.flagged_zero_inf) + "," + fmt(row.max_ehi) +
                              "," + fmt(row.max_wehi));
    });

    art.csv_header = "seed,R,tested,flagged_zero_inf,max_ehi,max_wehi";
    for (auto& r : rows) art.rows.insert(art.rows.end(), r.begin(), r.end());
    bool valid = true;
    json medians = json::array();
    for (std::size_t k = 0; k < R_grid.size(); ++k) {
        std::vector<double> ehi, wehi;
        for (const auto& rep : reps) {
            const auto& row = rep.rows[k];
            if (row.tested > 0) {
                ehi.push_back(row.max_ehi);
                wehi.push_back(row.max_wehi);
                valid &= row.max_ehi >= 1.0 - 1e-9;
            }
        }
        medians.push_back({{"R", R_grid[k]},
                           {"median_max_ehi", ehi.empty() ? 0.0 : median_of(ehi)},
                           {"median_max_wehi", wehi.empty() ? 0.0 : median_of(wehi)}});
    }
    art.check("ratios_valid", valid);
    art.extra["medians"] = medians;
    return art;
}

inline Artifacts run_ehi_condition(const Resolved& R, Section& p, Errors& errs) {
    double Rr = p.number("R", 8.0, 1.0, 1e9);
    double theta_prime = p.number("theta_prime", 0.5, 0.0, 1.0);
    p.finish();
    if (R.env.spec.dim() <= R.env.alpha)
        errs.add("environment: ehi-condition requires dimension d > alpha");
    Artifacts art;
    if (!errs.ok()) return art;

    const int ns = static_cast<int>(R.env.seeds.size());
    std::vector<std::vector<std::string>> rows(ns);
    std::vector<double> max_ratio(ns, 0.0);
    std::vector<char> unbounded(ns, 0);
    parallel_over(ns, R.threads, [&](int i) {
        auto env = make_env(R, R.env.seeds[i]);
        auto rep = ehi_necessary_condition(env, env.lattice->origin(), Rr, theta_prime);
        max_ratio[i] = rep.max_ratio();
        for (const auto& a : rep.annuli) {
            unbounded[i] |= a.unbounded;
            rows[i].push_back(std::to_string(R.env.seeds[i]) + "," + std::to_string(a.k) +
                              "," + fmt(a.radius_lo) + "," + fmt(a.radius_hi) + "," +
                              fmt(a.max_ratio) + "," + std::to_string(a.z_count) + "," +
                              (a.unbounded ? "1" : "0"));
        }
    });

    art.csv_header = "seed,annulus,radius_lo,radius_hi,max_ratio,z_count,unbounded";
    for (auto& r : rows) art.rows.insert(art.rows.end(), r.begin(), r.end());
    art.check("computed", true);
    art.extra["max_ratio_by_seed"] = max_ratio;
    art.extra["any_unbounded"] =
        std::any_of(unbounded.begin(), unbounded.end(), [](char c) { return c != 0; });
    return art;
}

inline Artifacts run_trap_return(const Resolved& R, Section& p, Errors& errs) {
    if (R.env.law.kind != LawKind::dyadic_trap)
        errs.add("environment.law.kind: trap-return requires dyadic_trap");
    Artifacts art;
    const int N = R.env.law.N;
    std::vector<long long> default_steps;
    if (errs.ok() && N >= 1 && N < 60) default_steps = {1LL << N};
    auto steps = p.integers("steps", default_steps, 1, 1LL << 60);
    p.finish();
    if (!errs.ok()) return art;
    for (long long m : steps)
        if (m > R.step_budget)
            throw CapRefusal("step budget refused: " + std::to_string(m) +
                             " > caps.step_budget " + std::to_string(R.step_budget));

    // the trap is a deterministic construction: seeds are unused here
    auto env = build_trap_environment(N, R.env.spec, R.env.law.eps, R.max_sites);
    std::vector<int> step_ints(steps.begin(), steps.end());
    auto tr = trap_return_probability(env, env.lattice->origin(), step_ints, R.step_budget);

    art.csv_header = "step,p_return,scaled";
    const double scale = std::pow(2.0, 2.0 * N);
    bool positive = true;
    for (std::size_t k = 0; k < tr.steps.size(); ++k) {
        positive &= tr.p_return[k] > 0.0;
        art.rows.push_back(std::to_string(tr.steps[k]) + "," + fmt(tr.p_return[k]) + "," +
                           fmt(tr.p_return[k] * scale));
    }
    art.check("return_positive", positive);
    art.extra["trap_N"] = N;
    art.extra["deterministic_environment"] = true;
    return art;
}

inline Artifacts run_llt(const Resolved& R, Section& p, Errors& errs) {
    auto n_grid = p.integers("n_grid", std::vector<long long>{4, 8}, 1, 4096);
    double T1 = p.number("T1", 0.5, 1e-9, 1e9);
    double T2 = p.number("T2", 2.0, 1e-9, 1e9);
    double k_radius = p.number("k_radius", 2.0, 1.0 + 1e-9, 1e6);
    auto t_points = p.integer("t_points", 3, 1, 64);
    double x_step = p.number("x_step", 0.25, 1e-6, 1e6);
    double tol = p.number("tol", 1e-9, 1e-15, 1e-2);
    bool require_monotone = p.boolean("require_monotone", true);
    p.finish();
    if (R.env.spec.d1 != 0 || R.env.spec.d2 != 1)
        errs.add("environment.lattice: llt requires d1 = 0, d2 = 1");
    Artifacts art;
    if (!errs.ok()) return art;
    for (long long n : n_grid) {
        long long sites = 2 * static_cast<long long>(8.0 * n * k_radius) + 1;
        if (sites > R.max_sites)
            throw CapRefusal("llt torus for n = " + std::to_string(n) + " needs " +
                             std::to_string(sites) + " sites > caps.max_sites " +
                             std::to_string(R.max_sites));
    }

    std::vector<int> ng(n_grid.begin(), n_grid.end());
    auto res = llt_error(R.env.law, R.env.seeds, ng, 1, R.env.alpha, T1, T2, k_radius,
                         static_cast<int>(t_points), x_step, tol, R.max_sites);

    art.csv_header = "n,seed,sup_error";
    for (std::size_t k = 0; k < res.n_grid.size(); ++k)
        for (std::size_t si = 0; si < res.seeds.size(); ++si)
            art.rows.push_back(std::to_string(res.n_grid[k]) + "," +
                               std::to_string(res.seeds[si]) + "," +
                               fmt(res.per_seed_error[k][si]));
    bool monotone = true;
    for (std::size_t k = 1; k < res.median_error.size(); ++k)
        monotone &= res.median_error[k] < res.median_error[k - 1];
    if (require_monotone) art.check("median_error_decreasing", monotone);
    art.check("errors_finite", std::all_of(res.median_error.begin(), res.median_error.end(),
                                           [](double e) { return std::isfinite(e); }));
    art.extra["median_error"] = res.median_error;
    art.extra["monotone"] = monotone;
    return art;
}

// ---------------------------------------------------------------------------
// driver
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& experiment_names() {
    static const std::vector<std::string> names = {
        "assumptions", "heat-kernel", "bounds-check", "exit-times", "dynkin-hunt",
        "levy-system", "green",       "harnack",      "ehi-condition", "trap-return",
        "llt"};
    return names;
}

inline int default_threads() {
    if (const char* e = std::getenv("RCMLAB_THREADS")) {
        int t = std::atoi(e);
        if (t >= 1) return t;
    }
    return 1;
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

inline RunResult run_experiment(const json& raw_in, const std::string& out_dir) {
    json raw = raw_in;
    // a manifest from a previous run is itself a valid config carrier
    if (raw.is_object() && raw.value("tool", "") == "rcmlab" && raw.contains("config"))
        raw = raw["config"];

    Errors errs;
    Section top(&raw, "", errs);
    std::string experiment = top.choice("experiment", std::nullopt, experiment_names());

    Resolved R;
    R.experiment = experiment;
    R.global_seed = static_cast<std::uint64_t>(
        top.integer("seed", 0, 0, std::numeric_limits<long long>::max()));
    R.threads = static_cast<int>(top.integer("threads", default_threads(), 1, 256));
    R.env = parse_environment(top.child("environment", true), errs);

    Section caps(top.child("caps", false), "caps", errs);
    R.max_sites = caps.integer("max_sites", SiteIndex::kDefaultSiteCap, 1, 1 << 26);
    R.max_samples = caps.integer("max_samples", 1000000, 1, 1LL << 40);
    R.step_budget = caps.integer("step_budget", 4096, 1, 1 << 24);
    caps.finish();

    const json empty_params = json::object();
    const json* pjson = top.child("params", false);
    if (!pjson) pjson = &empty_params;
    Section params(pjson, "params", errs);
    top.finish();
    if (!errs.ok()) return {2, errs.list};

    if (R.env.spec.site_count() > R.max_sites)
        return {3,
                {"site count " + std::to_string(R.env.spec.site_count()) +
                 " exceeds caps.max_sites " + std::to_string(R.max_sites)}};
    if (R.env.seeds.empty()) return {2, {"environment.seeds: must not be empty"}};

    Artifacts art;
    try {
        if (experiment == "assumptions") art = run_assumptions(R, params, errs);
        else if (experiment == "heat-kernel") art = run_heat_kernel(R, params, errs);
        else if (experiment == "bounds-check") art = run_bounds_check(R, params, errs);
        else if (experiment == "exit-times") art = run_exit_times(R, params, errs);
        else if (experiment == "dynkin-hunt") art = run_dynkin_hunt(R, params, errs);
        else if (experiment == "levy-system") art = run_levy_system(R, params, errs);
        else if (experiment == "green") art = run_green(R, params, errs);
        else if (experiment == "harnack") art = run_harnack(R, params, errs);
        else if (experiment == "ehi-condition") art = run_ehi_condition(R, params, errs);
        else if (experiment == "trap-return") art = run_trap_return(R, params, errs);
        else if (experiment == "llt") art = run_llt(R, params, errs);
    } catch (const CapRefusal& e) {
        return {3, {e.what()}};
    } catch (const std::invalid_argument& e) {
        return {2, {e.what()}};
    } catch (const std::exception& e) {
        return {1, {e.what()}};
    }
    if (!errs.ok()) return {2, errs.list};

    json resolved = json::object();
    resolved["experiment"] = experiment;
    resolved["seed"] = R.global_seed;
    resolved["threads"] = R.threads;
    resolved["environment"] = R.env.resolved;
    resolved["caps"] = caps.resolved();
    resolved["params"] = params.resolved();

    json manifest = {{"format", 1}, {"tool", "rcmlab"}, {"config", resolved}};

    std::string csv = art.csv_header + "\n";
    for (const auto& r : art.rows) csv += r + "\n";

    json summary = json::object();
    summary["experiment"] = experiment;
    summary["pass"] = art.pass();
    summary["checks"] = art.checks;
    for (const auto& [k, v] : art.extra.items()) summary[k] = v;

    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    write_file(fs::path(out_dir) / "manifest.json", manifest.dump(2) + "\n");
    write_file(fs::path(out_dir) / "results.csv", csv);
    write_file(fs::path(out_dir) / "summary.json", summary.dump(2) + "\n");
    return {art.pass() ? 0 : 1, {}};
}

// ---------------------------------------------------------------------------
// plot-data emission
// ---------------------------------------------------------------------------

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<int>(i);
        return -1;
    }
};

inline CsvTable read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    CsvTable t;
    std::string line;
    auto split = [](const std::string& s) {
        std::vector<std::string> out;
        std::stringstream ss(s);
        std::string cell;
        while (std::getline(ss, cell, ',')) out.push_back(cell);
        return out;
    };
    if (std::getline(in, line)) t.header = split(line);
    while (std::getline(in, line))
        if (!line.empty()) t.rows.push_back(split(line));
    return t;
}

/// Writes the figure-like tidy table for the experiment found in the results
/// directory; experiments without a figure-like diagnostic emit nothing.
inline RunResult emit_plot_data(const std::string& results_dir, std::string out_dir = "") {
    namespace fs = std::filesystem;
    if (out_dir.empty()) out_dir = results_dir;
    std::vector<std::string> missing;
    if (!fs::exists(fs::path(results_dir) / "manifest.json")) missing.push_back("manifest.json");
    if (!fs::exists(fs::path(results_dir) / "results.csv")) missing.push_back("results.csv");
    if (!missing.empty()) {
        RunResult r{2, {}};
        for (const auto& m : missing) r.errors.push_back("missing input: " + m);
        return r;
    }
    json manifest;
    {
        std::ifstream in(fs::path(results_dir) / "manifest.json");
        in >> manifest;
    }
    std::string experiment = manifest.at("config").at("experiment");
    CsvTable t = read_csv(fs::path(results_dir) / "results.csv");

    auto project = [&](const std::vector<std::string>& cols, const std::string& filename,
                       std::vector<std::string>* errors) {
        std::vector<int> idx;
        for (const auto& c : cols) {
            int k = t.column(c);
            if (k < 0) {
                errors->push_back("missing input: results.csv column " + c);
                return;
            }
            idx.push_back(k);
        }
        std::string out;
        for (std::size_t i = 0; i < cols.size(); ++i)
            out += (i ? "," : "") + cols[i];
        out += "\n";
        for (const auto& row : t.rows) {
            for (std::size_t i = 0; i < idx.size(); ++i)
                out += (i ? "," : "") + row[idx[i]];
            out += "\n";
        }
        fs::create_directories(out_dir);
        write_file(fs::path(out_dir) / filename, out);
    };

    RunResult res;
    if (experiment == "bounds-check")
        project({"t", "rho", "p", "phi", "ratio"}, "plot_bounds.csv", &res.errors);
    else if (experiment == "heat-kernel")
        project({"t", "rho", "p"}, "plot_kernel_profile.csv", &res.errors);
    else if (experiment == "exit-times")
        project({"r", "seed", "mean", "q50"}, "plot_exit_scaling.csv", &res.errors);
    else if (experiment == "harnack")
        project({"R", "seed", "max_ehi", "max_wehi"}, "plot_harnack_growth.csv", &res.errors);
    else if (experiment == "llt")
        project({"n", "seed", "sup_error"}, "plot_llt_error.csv", &res.errors);
    if (!res.errors.empty()) res.status = 2;
    return res;
}

} // namespace rcmlab::cli
