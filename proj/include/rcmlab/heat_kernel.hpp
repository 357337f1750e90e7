#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "rcmlab/markov.hpp"

namespace rcmlab {

enum class KernelMethod { uniformization, eigensolve };

/// p(t, x0, .) as a density w.r.t. mu: probability mass at y is
/// density[y] * mu[y]. Indexed by the generator's local states.
struct HeatKernelField {
    double t = 0.0;
    int x0 = -1; // local state index
    Eigen::VectorXd density;
    double trunc_error = 0.0;
    KernelMethod method = KernelMethod::uniformization;
    bool dirichlet = false;

    double total_mass(const Eigen::VectorXd& mu) const {
        return density.dot(mu);
    }
};

/// Poisson(lambda) weights w_0..w_N with cumulative mass >= 1 - tol.
/// Stable for large lambda via log-space evaluation.
inline std::vector<double> poisson_weights(double lambda, double tol) {
    std::vector<double> w;
    if (lambda <= 0.0) {
        w.push_back(1.0);
        return w;
    }
    const double log_lambda = std::log(lambda);
    double cum = 0.0;
    const int hard_cap = static_cast<int>(lambda + 12.0 * std::sqrt(lambda) + 200.0);
    for (int n = 0; n <= hard_cap; ++n) {
        double lw = -lambda + n * log_lambda - std::lgamma(n + 1.0);
        double wn = std::exp(lw);
        w.push_back(wn);
        cum += wn;
        if (cum >= 1.0 - tol && n >= lambda) break;
    }
    if (cum < 1.0 - tol)
        throw std::runtime_error("poisson_weights: failed to reach tolerance");
    return w;
}

/// Uniformization: p = sum_n Poisson(Lambda t){n} Phat^n delta_x0 with
/// Phat = I + Q / Lambda; positivity-preserving with a computable tail bound.
inline HeatKernelField heat_kernel_uniformization(const GeneratorMatrix& gen, double t,
                                                  int x0, double tol) {
    const int m = gen.size();
    if (x0 < 0 || x0 >= m) throw std::invalid_argument("heat_kernel: x0 outside domain");
    if (t < 0.0) throw std::invalid_argument("heat_kernel: t must be >= 0");
    if (tol <= 0.0 || tol > 1e-6) throw std::invalid_argument("heat_kernel: tol in (0, 1e-6]");

    HeatKernelField field;
    field.t = t;
    field.x0 = x0;
    field.method = KernelMethod::uniformization;
    field.dirichlet = gen.killed;

    Eigen::VectorXd mass = Eigen::VectorXd::Zero(m);
    if (t == 0.0 || gen.Lambda == 0.0) {
        mass[x0] = 1.0;
    } else {
        const double lambda_t = gen.Lambda * t;
        const auto weights = poisson_weights(lambda_t, tol);
        // Row vector iteration: v_{n+1} = v_n Phat, i.e. v <- v + (v Q)/Lambda.
        Eigen::RowVectorXd v = Eigen::RowVectorXd::Zero(m);
        v[x0] = 1.0;
        Eigen::RowVectorXd acc = weights[0] * v;
        for (std::size_t n = 1; n < weights.size(); ++n) {
            v += (v * gen.Q) / gen.Lambda;
            if (weights[n] > 0.0) acc += weights[n] * v;
        }
        mass = acc.transpose().cwiseMax(0.0);
        field.trunc_error = tol;
    }
    field.density = mass.cwiseQuotient(gen.mu);
    return field;
}

/// Spectral factorization of the mu-symmetric generator; the small-instance
/// oracle and the cheap route when many (t, x, y) evaluations share one Q.
/// exp(tQ) = Minv2 V exp(t lam) V^T M2 with M2 = diag(sqrt(mu)).
class SpectralFactor {
public:
    explicit SpectralFactor(const GeneratorMatrix& gen)
        : mu_(gen.mu), sqrt_mu_(gen.mu.cwiseSqrt()) {
        const int m = gen.size();
        Eigen::MatrixXd S(m, m);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < m; ++j)
                S(i, j) = sqrt_mu_[i] * gen.Q(i, j) / sqrt_mu_[j];
        S = 0.5 * (S + S.transpose()); // scrub rounding asymmetry
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
        if (es.info() != Eigen::Success)
            throw std::runtime_error("SpectralFactor: eigensolve failed");
        V_ = es.eigenvectors();
        lam_ = es.eigenvalues();
    }

    int size() const { return static_cast<int>(lam_.size()); }

    /// Density p(t, x, y) w.r.t. mu (symmetric in x and y).
    double p(double t, int x, int y) const {
        double acc = 0.0;
        for (int k = 0; k < size(); ++k)
            acc += V_(x, k) * V_(y, k) * std::exp(t * lam_[k]);
        return acc / (sqrt_mu_[x] * sqrt_mu_[y]);
    }

    HeatKernelField field(double t, int x0, bool dirichlet) const {
        const int m = size();
        Eigen::VectorXd e = Eigen::VectorXd::Zero(m);
        for (int k = 0; k < m; ++k) e[k] = V_(x0, k) * std::exp(t * lam_[k]);
        Eigen::VectorXd mass = (V_ * e).cwiseProduct(sqrt_mu_) / sqrt_mu_[x0];
        HeatKernelField f;
        f.t = t;
        f.x0 = x0;
        f.method = KernelMethod::eigensolve;
        f.dirichlet = dirichlet;
        f.trunc_error = 1e-12;
        f.density = mass.cwiseQuotient(mu_);
        return f;
    }

    /// Full transition-density matrix at time t (densities w.r.t. mu).
    Eigen::MatrixXd density_matrix(double t) const {
        const int m = size();
        Eigen::VectorXd el = (t * lam_).array().exp();
        Eigen::MatrixXd P = V_ * el.asDiagonal() * V_.transpose();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < m; ++j) P(i, j) /= sqrt_mu_[i] * sqrt_mu_[j];
        return P;
    }

private:
    Eigen::VectorXd mu_, sqrt_mu_;
    Eigen::MatrixXd V_;
    Eigen::VectorXd lam_;
};

inline HeatKernelField heat_kernel(const GeneratorMatrix& gen, double t, int x0, double tol,
                                   KernelMethod method = KernelMethod::uniformization) {
    if (method == KernelMethod::uniformization)
        return heat_kernel_uniformization(gen, t, x0, tol);
    SpectralFactor sf(gen);
    return sf.field(t, x0, gen.killed);
}

/// Dirichlet kernel on a sub-domain; x0 is a GLOBAL site which must lie in
/// the domain used to build `killed_gen`.
inline HeatKernelField dirichlet_heat_kernel(const GeneratorMatrix& killed_gen, double t,
                                             int x0_global, double tol) {
    int loc = killed_gen.local(x0_global);
    if (loc < 0) throw std::invalid_argument("dirichlet_heat_kernel: x0 not in domain");
    return heat_kernel_uniformization(killed_gen, t, loc, tol);
}

} // namespace rcmlab
