#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <utility>
#include <variant>
#include <vector>

#include "dfmk/distance.hpp"
#include "dfmk/pmf.hpp"

namespace dfmk {

// Gibbs conditional p(x | x1; beta) = softmax_x(-beta * d(x, x1)).
// Max-subtraction keeps the exponentials in range for large beta * d.
inline Pmf gibbs_conditional(const DistanceMatrix& d, double beta, std::size_t x1) {
    if (!std::isfinite(beta) || beta < 0.0)
        throw std::invalid_argument("gibbs_conditional: beta must be finite and >= 0");
    const std::size_t s = d.size();
    if (x1 >= s) throw std::invalid_argument("gibbs_conditional: x1 out of range");
    std::vector<double> w(s);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t x = 0; x < s; ++x) {
        w[x] = -beta * d.at(x, x1);
        mx = std::max(mx, w[x]);
    }
    double sum = 0.0;
    for (std::size_t x = 0; x < s; ++x) {
        w[x] = std::exp(w[x] - mx);
        sum += w[x];
    }
    for (double& x : w) x /= sum;
    return Pmf::normalized(std::move(w));
}

// E_{x ~ p(.|x1;beta)}[d(x, x1)].
inline double gibbs_mean_distance(const DistanceMatrix& d, double beta, std::size_t x1) {
    const Pmf p = gibbs_conditional(d, beta, x1);
    double mu = 0.0;
    for (std::size_t x = 0; x < d.size(); ++x) mu += p[x] * d.at(x, x1);
    return mu;
}

// Score of the Gibbs path in t: phi(x) = beta_dot * (E[d] - d(x, x1)).
// Has zero mean under the Gibbs conditional.
inline std::vector<double> gibbs_log_derivative(const DistanceMatrix& d, double beta,
                                                double beta_dot, std::size_t x1) {
    if (!std::isfinite(beta_dot))
        throw std::invalid_argument("gibbs_log_derivative: non-finite beta_dot");
    const double mu = gibbs_mean_distance(d, beta, x1);
    std::vector<double> phi(d.size());
    for (std::size_t x = 0; x < d.size(); ++x)
        phi[x] = beta_dot * (mu - d.at(x, x1));
    return phi;
}

// Mixture conditional (1 - kappa) * source + kappa * delta_{x1}.
inline Pmf mixture_conditional(const Pmf& source, double kappa, std::size_t x1) {
    if (!(kappa >= 0.0 && kappa <= 1.0))
        throw std::invalid_argument("mixture_conditional: kappa outside [0,1]");
    if (x1 >= source.size()) throw std::invalid_argument("mixture_conditional: x1 out of range");
    std::vector<double> w(source.begin(), source.end());
    for (double& x : w) x *= (1.0 - kappa);
    w[x1] += kappa;
    return Pmf::normalized(std::move(w));
}

// Fisher information of the Gibbs path in beta: Var[d(x, x1)] under the conditional.
inline double fisher_information_metric(const DistanceMatrix& d, double beta, std::size_t x1) {
    const Pmf p = gibbs_conditional(d, beta, x1);
    double mu = 0.0, m2 = 0.0;
    for (std::size_t x = 0; x < d.size(); ++x) {
        const double dx = d.at(x, x1);
        mu += p[x] * dx;
        m2 += p[x] * dx * dx;
    }
    return std::max(m2 - mu * mu, 0.0);
}

// Fisher information of the mixture path in kappa:
// (1 - p1) / ((1 - kappa) (p1 + (1 - p1) kappa)).
inline double fisher_information_mixture(double p1, double kappa) {
    if (!(p1 >= 0.0 && p1 < 1.0))
        throw std::invalid_argument("fisher_information_mixture: p1 must be in [0,1)");
    if (!(kappa >= 0.0 && kappa < 1.0))
        throw std::invalid_argument("fisher_information_mixture: kappa must be in [0,1)");
    return (1.0 - p1) / ((1.0 - kappa) * (p1 + (1.0 - p1) * kappa));
}

// Fisher-Rao speed sqrt(sum pdot(x)^2 / p(x)).
inline double fr_speed(const Pmf& p, const std::vector<double>& p_dot) {
    if (p.size() != p_dot.size()) throw std::invalid_argument("fr_speed: size mismatch");
    double acc = 0.0;
    for (std::size_t x = 0; x < p.size(); ++x) {
        if (p_dot[x] == 0.0) continue;
        if (p[x] <= 0.0)
            throw std::invalid_argument("fr_speed: zero mass with nonzero derivative");
        acc += p_dot[x] * p_dot[x] / p[x];
    }
    return std::sqrt(acc);
}

struct LengthEnergy {
    double length = 0.0;
    double energy = 0.0;
};

// Trapezoidal estimates of the Fisher-Rao length and energy of a sampled path.
// Finite-difference pdot: central on interior points, one-sided at the ends.
inline LengthEnergy fr_length_and_energy(const std::vector<std::pair<double, Pmf>>& samples) {
    const std::size_t n = samples.size();
    if (n < 3) throw std::invalid_argument("fr_length_and_energy: need at least 3 samples");
    const std::size_t s = samples[0].second.size();
    for (std::size_t k = 1; k < n; ++k) {
        if (!(samples[k].first > samples[k - 1].first))
            throw std::invalid_argument("fr_length_and_energy: times must strictly increase");
        if (samples[k].second.size() != s)
            throw std::invalid_argument("fr_length_and_energy: support size mismatch");
    }

    std::vector<double> speed(n);
    std::vector<double> pdot(s);
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t lo = (k == 0) ? 0 : k - 1;
        const std::size_t hi = (k == n - 1) ? n - 1 : k + 1;
        const double dt = samples[hi].first - samples[lo].first;
        for (std::size_t x = 0; x < s; ++x)
            pdot[x] = (samples[hi].second[x] - samples[lo].second[x]) / dt;
        speed[k] = fr_speed(samples[k].second, pdot);
    }

    LengthEnergy out;
    for (std::size_t k = 1; k < n; ++k) {
        const double dt = samples[k].first - samples[k - 1].first;
        out.length += 0.5 * (speed[k] + speed[k - 1]) * dt;
        out.energy += 0.5 * (speed[k] * speed[k] + speed[k - 1] * speed[k - 1]) * dt;
    }
    return out;
}

// A conditional probability path family: either the Gibbs (metric-induced) path
// over a distance matrix, or the mixture path from a source pmf (optionally the
// dedicated mask construction, where the source is a delta at the mask token).
struct MetricInducedFamily {
    DistanceMatrix distances;
};

struct MixtureFamily {
    Pmf source;
    std::optional<std::size_t> mask_state;
};

class PathFamily {
public:
    explicit PathFamily(MetricInducedFamily m) : v_(std::move(m)) {}
    explicit PathFamily(MixtureFamily m) : v_(std::move(m)) {
        const auto& mix = std::get<MixtureFamily>(v_);
        if (mix.mask_state) {
            const auto& src = mix.source;
            for (std::size_t x = 0; x < src.size(); ++x) {
                const double want = (x == *mix.mask_state) ? 1.0 : 0.0;
                if (src[x] != want)
                    throw std::invalid_argument("PathFamily: mask source must be a delta at the mask state");
            }
        }
    }

    bool is_metric() const { return std::holds_alternative<MetricInducedFamily>(v_); }
    const DistanceMatrix& distances() const { return std::get<MetricInducedFamily>(v_).distances; }
    const Pmf& source() const { return std::get<MixtureFamily>(v_).source; }
    std::optional<std::size_t> mask_state() const { return std::get<MixtureFamily>(v_).mask_state; }

    std::size_t vocab_size() const {
        return is_metric() ? distances().size() : source().size();
    }

    // Conditional pmf at path parameter value (beta for metric, kappa for mixture).
    Pmf conditional(double param, std::size_t x1) const {
        if (is_metric()) return gibbs_conditional(distances(), param, x1);
        return mixture_conditional(source(), param, x1);
    }

    // Time derivative of the conditional pmf given (param, param_dot).
    std::vector<double> conditional_dot(double param, double param_dot, std::size_t x1) const {
        const std::size_t s = vocab_size();
        std::vector<double> pd(s);
        if (is_metric()) {
            const Pmf p = gibbs_conditional(distances(), param, x1);
            const auto phi = gibbs_log_derivative(distances(), param, param_dot, x1);
            for (std::size_t x = 0; x < s; ++x) pd[x] = p[x] * phi[x];
        } else {
            const Pmf& src = source();
            for (std::size_t x = 0; x < s; ++x)
                pd[x] = param_dot * ((x == x1 ? 1.0 : 0.0) - src[x]);
        }
        return pd;
    }

private:
    std::variant<MetricInducedFamily, MixtureFamily> v_;
};

// Schedule evaluator: t in [0,1] -> (param value, time derivative).
using ScheduleFn = std::function<std::pair<double, double>(double)>;

} // namespace dfmk
