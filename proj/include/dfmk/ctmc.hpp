#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "dfmk/geometry.hpp"
#include "dfmk/pmf.hpp"

namespace dfmk {

// Off-diagonal CTMC rates split into total intensity and the normalized
// destination law. destination[z] is structurally zero; when lambda == 0 the
// destination entries are all zero and must not be sampled.
struct JumpDecomposition {
    double lambda = 0.0;
    std::vector<double> destination;
};

inline std::size_t sample_destination(const JumpDecomposition& jd, double u) {
    if (!(jd.lambda > 0.0))
        throw std::logic_error("sample_destination: lambda == 0");
    double acc = 0.0;
    for (std::size_t x = 0; x < jd.destination.size(); ++x) {
        acc += jd.destination[x];
        if (u <= acc) return x;
    }
    // Round-off spill: return the last positive entry.
    for (std::size_t x = jd.destination.size(); x-- > 0;) {
        if (jd.destination[x] > 0.0) return x;
    }
    throw std::logic_error("sample_destination: empty destination");
}

// Kinetic-optimal velocity row for current state z:
// rate(x) = [p(z) pdot(x) - pdot(z) p(x)]_+ / p(z) for x != z,
// diagonal from the rate condition. All rates zero when p(z) == 0.
inline std::vector<double> ko_velocity_general(const Pmf& p, const std::vector<double>& p_dot,
                                               std::size_t z) {
    const std::size_t s = p.size();
    if (p_dot.size() != s) throw std::invalid_argument("ko_velocity_general: size mismatch");
    if (z >= s) throw std::invalid_argument("ko_velocity_general: z out of range");
    for (double x : p_dot) {
        if (!std::isfinite(x)) throw std::invalid_argument("ko_velocity_general: non-finite p_dot");
    }
    std::vector<double> rates(s, 0.0);
    if (!(p[z] > 0.0)) return rates;
    double total = 0.0;
    for (std::size_t x = 0; x < s; ++x) {
        if (x == z) continue;
        const double num = p[z] * p_dot[x] - p_dot[z] * p[x];
        rates[x] = std::max(num, 0.0) / p[z];
        total += rates[x];
    }
    rates[z] = -total;
    return rates;
}

// Metric-induced jump decomposition for current token z and predicted target
// x1_hat: u(x, z) = p_t(x | x1_hat) * beta_dot * [d(z, x1_hat) - d(x, x1_hat)]_+.
inline JumpDecomposition metric_jump_decomposition(const DistanceMatrix& d, double beta,
                                                   double beta_dot, std::size_t z,
                                                   std::size_t x1_hat) {
    if (!(beta_dot >= 0.0)) throw std::invalid_argument("metric_jump_decomposition: beta_dot < 0");
    const std::size_t s = d.size();
    if (z >= s || x1_hat >= s)
        throw std::invalid_argument("metric_jump_decomposition: token out of range");
    const Pmf p = gibbs_conditional(d, beta, x1_hat);
    const double dz = d.at(z, x1_hat);
    JumpDecomposition jd;
    jd.destination.assign(s, 0.0);
    for (std::size_t x = 0; x < s; ++x) {
        const double u = p[x] * beta_dot * std::max(dz - d.at(x, x1_hat), 0.0);
        jd.destination[x] = u;
        jd.lambda += u;
    }
    if (jd.lambda > 0.0) {
        for (double& x : jd.destination) x /= jd.lambda;
    }
    return jd;
}

// Mixture-path jump decomposition from the marginal velocity
// u = kappa_dot / (1 - kappa) * (posterior(x) - delta_z(x)).
inline JumpDecomposition mixture_jump_decomposition(double kappa, double kappa_dot,
                                                    const Pmf& posterior, std::size_t z) {
    if (!(kappa >= 0.0 && kappa < 1.0))
        throw std::invalid_argument("mixture_jump_decomposition: kappa must be in [0,1)");
    if (!(kappa_dot >= 0.0))
        throw std::invalid_argument("mixture_jump_decomposition: kappa_dot < 0");
    const std::size_t s = posterior.size();
    if (z >= s) throw std::invalid_argument("mixture_jump_decomposition: z out of range");
    const double scale = kappa_dot / (1.0 - kappa);
    JumpDecomposition jd;
    jd.destination.assign(s, 0.0);
    for (std::size_t x = 0; x < s; ++x) {
        if (x == z) continue;
        const double u = scale * posterior[x];
        jd.destination[x] = u;
        jd.lambda += u;
    }
    if (jd.lambda > 0.0) {
        for (double& x : jd.destination) x /= jd.lambda;
    }
    return jd;
}

// First-order jump probability 1 - exp(-h lambda).
inline double base_jump_prob(double lambda, double h) {
    if (!(lambda >= 0.0 && h >= 0.0))
        throw std::invalid_argument("base_jump_prob: lambda and h must be >= 0");
    return -std::expm1(-h * lambda);
}

struct CorrectionInputs {
    double phi_current = 0.0;     // phi_t(z | x1_hat)
    double phi_bar = 0.0;         // E_{y ~ pi}[phi_t(y | x1_hat)]
    double reference_moment = 0.0; // m_{t+h}
};

struct CorrectedJump {
    double rho = 0.0;
    bool used_correction = false;
};

// Moment-matching jump probability: rho* = (phi(z) - m) / (phi(z) - phi_bar),
// used when it lands in [0,1]; otherwise the caller's fallback (the
// first-order rho) is returned. Degenerate phi(z) == phi_bar also falls back.
inline CorrectedJump corrected_jump_prob_generic(const CorrectionInputs& c, double fallback) {
    if (!(fallback >= 0.0 && fallback <= 1.0))
        throw std::invalid_argument("corrected_jump_prob_generic: fallback outside [0,1]");
    if (!std::isfinite(c.phi_current) || !std::isfinite(c.phi_bar) || !std::isfinite(c.reference_moment))
        throw std::invalid_argument("corrected_jump_prob_generic: non-finite inputs");
    const double denom = c.phi_current - c.phi_bar;
    if (denom == 0.0) return {fallback, false};
    const double rho = (c.phi_current - c.reference_moment) / denom;
    if (rho >= 0.0 && rho <= 1.0) return {rho, true};
    return {fallback, false};
}

// Metric-induced corrector. With A = d(z) - E_{p_{t+h}}[d] and
// B = E_pi[d(z) - d(.)], rho* = A / B; beta_dot cancels, so only the two
// expected distances are needed. Gating follows the inference algorithm:
// lambda > 0, B away from zero, rho* in [0,1], else fallback.
inline CorrectedJump corrected_jump_prob_metric(const DistanceMatrix& d, double beta_t,
                                                double beta_th, std::size_t z,
                                                std::size_t x1_hat, const JumpDecomposition& jd,
                                                double fallback) {
    if (!(beta_th >= beta_t && beta_t >= 0.0))
        throw std::invalid_argument("corrected_jump_prob_metric: need beta_th >= beta_t >= 0");
    if (!(fallback >= 0.0 && fallback <= 1.0))
        throw std::invalid_argument("corrected_jump_prob_metric: fallback outside [0,1]");
    if (!(jd.lambda > 0.0)) return {fallback, false};

    const double dz = d.at(z, x1_hat);
    const double mu_next = gibbs_mean_distance(d, beta_th, x1_hat);
    double mu_pi = 0.0;
    for (std::size_t x = 0; x < d.size(); ++x)
        mu_pi += jd.destination[x] * d.at(x, x1_hat);

    const double A = dz - mu_next;
    const double B = dz - mu_pi;
    if (std::abs(B) <= 1e-15 * std::max(1.0, std::abs(dz))) return {fallback, false};
    const double rho = A / B;
    if (rho >= 0.0 && rho <= 1.0) return {rho, true};
    return {fallback, false};
}

// Exact finite-step jump probability of the two-state mixture path.
inline double mixture_exact_jump_prob(double kappa_t, double kappa_th) {
    if (!(kappa_t >= 0.0 && kappa_t < 1.0 && kappa_th >= kappa_t && kappa_th <= 1.0))
        throw std::invalid_argument("mixture_exact_jump_prob: need 0 <= kappa_t <= kappa_th <= 1, kappa_t < 1");
    return (kappa_th - kappa_t) / (1.0 - kappa_t);
}

// Brute-force reference: integrate dp/dt = sum_z u_t(., z) p_t(z) with a
// classical fixed-step RK4 over [t0, t1] for the conditional path, starting
// from the analytic conditional at t0. Oracle for the sampler, nothing more.
inline Pmf forward_equation_reference(const PathFamily& path, const ScheduleFn& schedule,
                                      std::size_t x1, double t0, double t1, std::size_t steps) {
    if (!(t1 >= t0)) throw std::invalid_argument("forward_equation_reference: t1 < t0");
    if (steps < 1) throw std::invalid_argument("forward_equation_reference: steps < 1");
    const std::size_t s = path.vocab_size();

    const auto [v0, w0] = schedule(t0);
    (void)w0;
    Pmf start = path.conditional(v0, x1);
    std::vector<double> p(start.begin(), start.end());
    if (t1 == t0) return start;

    const auto deriv = [&](double t, const std::vector<double>& state, std::vector<double>& out) {
        const auto [value, value_dot] = schedule(t);
        const Pmf pt = path.conditional(value, x1);
        const auto pt_dot = path.conditional_dot(value, value_dot, x1);
        std::fill(out.begin(), out.end(), 0.0);
        for (std::size_t z = 0; z < s; ++z) {
            if (state[z] == 0.0) continue;
            const auto rates = ko_velocity_general(pt, pt_dot, z);
            for (std::size_t x = 0; x < s; ++x) out[x] += rates[x] * state[z];
        }
    };

    const double h = (t1 - t0) / static_cast<double>(steps);
    std::vector<double> k1(s), k2(s), k3(s), k4(s), tmp(s);
    for (std::size_t step = 0; step < steps; ++step) {
        const double t = t0 + h * static_cast<double>(step);
        deriv(t, p, k1);
        for (std::size_t x = 0; x < s; ++x) tmp[x] = p[x] + 0.5 * h * k1[x];
        deriv(t + 0.5 * h, tmp, k2);
        for (std::size_t x = 0; x < s; ++x) tmp[x] = p[x] + 0.5 * h * k2[x];
        deriv(t + 0.5 * h, tmp, k3);
        for (std::size_t x = 0; x < s; ++x) tmp[x] = p[x] + h * k3[x];
        deriv(t + h, tmp, k4);
        for (std::size_t x = 0; x < s; ++x)
            p[x] += h / 6.0 * (k1[x] + 2.0 * k2[x] + 2.0 * k3[x] + k4[x]);
    }

    double sum = 0.0, clip = 0.0;
    for (double& x : p) {
        if (x < 0.0) { clip = std::max(clip, -x); x = 0.0; }
        sum += x;
    }
    if (clip > 1e-8 || std::abs(sum - 1.0) > 1e-8)
        throw std::runtime_error("forward_equation_reference: pmf left the simplex; step too coarse");
    for (double& x : p) x /= sum;
    return Pmf::normalized(std::move(p));
}

// Step-halving wrapper: refine until two successive step counts agree to tol.
inline Pmf forward_equation_reference_adaptive(const PathFamily& path, const ScheduleFn& schedule,
                                               std::size_t x1, double t0, double t1,
                                               std::size_t initial_steps = 10000,
                                               double tol = 1e-8, int max_halvings = 6) {
    Pmf prev = forward_equation_reference(path, schedule, x1, t0, t1, initial_steps);
    std::size_t steps = initial_steps;
    for (int k = 0; k < max_halvings; ++k) {
        steps *= 2;
        Pmf next = forward_equation_reference(path, schedule, x1, t0, t1, steps);
        double diff = 0.0;
        for (std::size_t x = 0; x < prev.size(); ++x)
            diff = std::max(diff, std::abs(next[x] - prev[x]));
        if (diff <= tol) return next;
        prev = std::move(next);
    }
    return prev;
}

} // namespace dfmk
