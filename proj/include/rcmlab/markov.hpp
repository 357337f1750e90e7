#pragma once

#include <Eigen/Dense>

#include <optional>
#include <stdexcept>
#include <vector>

#include "rcmlab/conductance.hpp"

// Rate convention. A single kernel J(x,y) = w(x,y)/rho(x,y)^{d+alpha} plus a
// site measure mu represent both walks: the jump rate is
//     q(x,y) = J(x,y) / mu(x),
// so mu(x) q(x,y) = J(x,y) is symmetric (detailed balance is exact by
// construction). Counting measure gives the variable speed walk q = J; the
// CSRW measure mu(x) = sum_z J(x,z) gives unit total jump rate at every site.
// A form with extra mu-weights in the energy is the same object with the
// conductance rescaled by mu(x) mu(y); we never double-weight.

namespace rcmlab {

/// Dense J matrix; symmetric, zero diagonal.
inline Eigen::MatrixXd jump_kernel(const Environment& env) {
    const int n = env.size();
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            double v = env.jump_rate(i, j);
            J(i, j) = v;
            J(j, i) = v;
        }
    return J;
}

/// mu-symmetric rate matrix, full or killed on a sub-domain. The killed
/// variant keeps the rows/columns of the domain with the same off-diagonal
/// entries; the diagonal still subtracts the FULL outgoing rate, so mass
/// jumping out of the domain is killed, not reflected.
struct GeneratorMatrix {
    Eigen::MatrixXd Q;       // local indexing over `states`
    std::vector<int> states; // global site per local index
    Eigen::VectorXd mu;      // measure restricted to `states`
    double Lambda = 0.0;     // uniformization bound max_x |q(x,x)|
    bool killed = false;

    int size() const { return static_cast<int>(states.size()); }

    /// Local index of a global site; -1 if killed away.
    int local(int site) const {
        for (int i = 0; i < size(); ++i)
            if (states[i] == site) return i;
        return -1;
    }
};

inline GeneratorMatrix generator(const Environment& env, const Eigen::MatrixXd& J,
                                 const std::optional<std::vector<int>>& domain = std::nullopt) {
    const int n = env.size();
    GeneratorMatrix gen;
    if (domain) {
        if (domain->empty()) throw std::invalid_argument("generator: empty domain");
        for (int s : *domain)
            if (s < 0 || s >= n) throw std::invalid_argument("generator: domain site outside box");
        gen.states = *domain;
        gen.killed = true;
    } else {
        gen.states.resize(n);
        for (int i = 0; i < n; ++i) gen.states[i] = i;
    }
    const int m = gen.size();
    gen.mu.resize(m);
    for (int i = 0; i < m; ++i) gen.mu[i] = env.mu[gen.states[i]];

    gen.Q = Eigen::MatrixXd::Zero(m, m);
    // Diagonal subtracts the full-row rate; off-diagonals only within domain.
    Eigen::VectorXd full_rate = Eigen::VectorXd::Zero(m);
    for (int i = 0; i < m; ++i) {
        const int gi = gen.states[i];
        double s = 0.0;
        for (int gj = 0; gj < n; ++gj) s += J(gi, gj);
        full_rate[i] = s / env.mu[gi];
    }
    for (int i = 0; i < m; ++i) {
        const int gi = gen.states[i];
        for (int j = 0; j < m; ++j) {
            if (i == j) continue;
            gen.Q(i, j) = J(gi, gen.states[j]) / env.mu[gi];
        }
        gen.Q(i, i) = -full_rate[i];
    }
    gen.Lambda = full_rate.maxCoeff();
    return gen;
}

/// Dirichlet energy D(f,f) = (1/2) sum_{x,y} (f(x)-f(y))^2 J(x,y); equals
/// -<f, Lf>_mu for the full generator.
inline double dirichlet_energy(const Eigen::VectorXd& f, const Eigen::MatrixXd& J) {
    const int n = static_cast<int>(f.size());
    double acc = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            double d = f[i] - f[j];
            acc += d * d * J(i, j);
        }
    return acc;
}

inline double dirichlet_energy(const Eigen::VectorXd& f, const Environment& env) {
    return dirichlet_energy(f, jump_kernel(env));
}

} // namespace rcmlab
