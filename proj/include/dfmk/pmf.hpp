#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace dfmk {

inline constexpr double kPmfSumTolerance = 1e-12;

// Probability mass function over a token vocabulary [0, s).
class Pmf {
public:
    Pmf() = default;

    // Validates without renormalizing; rejects sums off by more than the tolerance.
    static Pmf validated(std::vector<double> w) {
        check_entries(w);
        const double sum = std::accumulate(w.begin(), w.end(), 0.0);
        if (std::abs(sum - 1.0) > kPmfSumTolerance)
            throw std::invalid_argument("Pmf: sum deviates from 1 by " + std::to_string(sum - 1.0));
        return Pmf(std::move(w));
    }

    // Renormalizes nonnegative weights.
    static Pmf normalized(std::vector<double> w) {
        check_entries(w);
        const double sum = std::accumulate(w.begin(), w.end(), 0.0);
        if (!(sum > 0.0))
            throw std::invalid_argument("Pmf: cannot normalize zero-mass weights");
        for (double& x : w) x /= sum;
        return Pmf(std::move(w));
    }

    static Pmf uniform(std::size_t s) {
        if (s == 0) throw std::invalid_argument("Pmf: empty support");
        return Pmf(std::vector<double>(s, 1.0 / static_cast<double>(s)));
    }

    static Pmf delta(std::size_t s, std::size_t at) {
        if (at >= s) throw std::invalid_argument("Pmf: delta index out of range");
        std::vector<double> w(s, 0.0);
        w[at] = 1.0;
        return Pmf(std::move(w));
    }

    std::size_t size() const { return w_.size(); }
    double operator[](std::size_t i) const { return w_[i]; }
    const std::vector<double>& weights() const { return w_; }

    auto begin() const { return w_.begin(); }
    auto end() const { return w_.end(); }

private:
    explicit Pmf(std::vector<double> w) : w_(std::move(w)) {}

    static void check_entries(const std::vector<double>& w) {
        if (w.empty()) throw std::invalid_argument("Pmf: empty support");
        for (double x : w) {
            if (!std::isfinite(x) || x < 0.0)
                throw std::invalid_argument("Pmf: negative or non-finite entry");
        }
    }

    std::vector<double> w_;
};

// Total variation distance, 1/2 * sum |p - q|.
inline double tv_distance(const Pmf& p, const Pmf& q) {
    if (p.size() != q.size())
        throw std::invalid_argument("tv_distance: support size mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) acc += std::abs(p[i] - q[i]);
    return 0.5 * acc;
}

// KL(p || q) with q floored and renormalized so empirical zeros stay finite.
inline double kl_divergence(const Pmf& p, const Pmf& q, double floor = 1e-12) {
    if (p.size() != q.size())
        throw std::invalid_argument("kl_divergence: support size mismatch");
    std::vector<double> qf(q.begin(), q.end());
    for (double& x : qf) x = std::max(x, floor);
    const double sum = std::accumulate(qf.begin(), qf.end(), 0.0);
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] > 0.0) acc += p[i] * std::log(p[i] * sum / qf[i]);
    }
    return std::max(acc, 0.0);
}

} // namespace dfmk
