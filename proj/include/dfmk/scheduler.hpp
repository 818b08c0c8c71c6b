#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dfmk/distance.hpp"
#include "dfmk/geometry.hpp"

namespace dfmk {

// Lookup table {t_j, value_j, derivative_j} produced by the kinetic-optimal
// construction. values are beta* for the metric path or kappa* for a generic
// scalar path; derivatives are the constant-speed time derivatives.
struct SchedulerTable {
    enum class Kind { MetricKO, GenericKO };

    Kind kind = Kind::MetricKO;
    std::vector<double> times;       // uniform, t_j = (j-1)/(T-1)
    std::vector<double> values;      // nondecreasing, values[0] = 0, back() = param_max
    std::vector<double> derivatives; // strictly positive
    double param_max = 0.0;
    double total_length = 0.0;       // Fisher-Rao arc length L
    struct Meta {
        std::size_t grid_size = 0;
        double tolerance = 0.0;
        std::string averaging = "shared"; // "shared" | "per-codebook"
    } meta;

    std::size_t points() const { return times.size(); }

    void validate() const {
        const std::size_t T = times.size();
        if (T < 2 || values.size() != T || derivatives.size() != T)
            throw std::invalid_argument("SchedulerTable: need T >= 2 matching columns");
        for (std::size_t j = 0; j < T; ++j) {
            const double tj = static_cast<double>(j) / static_cast<double>(T - 1);
            if (std::abs(times[j] - tj) > 1e-12)
                throw std::invalid_argument("SchedulerTable: times must be uniform on [0,1]");
            if (!(derivatives[j] > 0.0))
                throw std::invalid_argument("SchedulerTable: derivatives must be positive");
            if (j > 0 && values[j] < values[j - 1])
                throw std::invalid_argument("SchedulerTable: values must be nondecreasing");
        }
        if (std::abs(values.front()) > 1e-9 || std::abs(values.back() - param_max) > 1e-9)
            throw std::invalid_argument("SchedulerTable: endpoint values off");
    }
};

// Piecewise-linear lookup of (value, derivative) at t in [0,1].
inline std::pair<double, double> interp_schedule(const SchedulerTable& table, double t) {
    if (!(t >= 0.0 && t <= 1.0))
        throw std::invalid_argument("interp_schedule: t outside [0,1]");
    const std::size_t T = table.times.size();
    const double pos = t * static_cast<double>(T - 1);
    const std::size_t j = std::min(static_cast<std::size_t>(pos), T - 2);
    const double a = pos - static_cast<double>(j);
    return {table.values[j] + a * (table.values[j + 1] - table.values[j]),
            table.derivatives[j] + a * (table.derivatives[j + 1] - table.derivatives[j])};
}

// Smallest beta whose endpoint concentration score
//   f(beta) = min_c min_{x1} p_beta^{(c)}(x1 | x1)
// reaches 1 - eps. Doubling phase, then bisection to relative tolerance 1e-6.
inline double find_beta_max(const DistanceSet& ds, double eps = 1e-8, double beta_init = 1.0) {
    if (!(eps > 0.0 && eps < 0.5)) throw std::invalid_argument("find_beta_max: eps outside (0, 0.5)");
    if (!(beta_init > 0.0)) throw std::invalid_argument("find_beta_max: beta_init must be positive");

    const auto score = [&](double beta) {
        double f = 1.0;
        for (std::size_t c = 0; c < ds.codebook_count(); ++c) {
            for (std::size_t x1 = 0; x1 < ds.vocab_size(); ++x1)
                f = std::min(f, gibbs_conditional(ds[c], beta, x1)[x1]);
        }
        return f;
    };

    double hi = beta_init;
    int iters = 0;
    while (score(hi) < 1.0 - eps) {
        hi *= 2.0;
        if (++iters > 200)
            throw std::runtime_error("find_beta_max: concentration score never reached 1 - eps");
    }
    double lo = 0.0;
    for (int i = 0; i < 200 && hi - lo > 1e-6 * hi; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (score(mid) >= 1.0 - eps)
            hi = mid;
        else
            lo = mid;
    }
    return hi;
}

namespace detail {

// Arc-length inversion shared by the metric and generic constructions.
// Inputs: uniform parameter grid values fisher[i] on [0, param_max].
inline SchedulerTable invert_arc_length(const std::vector<double>& fisher, double param_max,
                                        std::size_t table_points, double eps,
                                        SchedulerTable::Kind kind) {
    const std::size_t I = fisher.size();
    if (I < 2) throw std::invalid_argument("ko schedule: grid size must be >= 2");
    if (table_points < 2) throw std::invalid_argument("ko schedule: table points must be >= 2");
    if (!(param_max > 0.0)) throw std::invalid_argument("ko schedule: param_max must be positive");
    for (double v : fisher) {
        if (!std::isfinite(v)) throw std::invalid_argument("ko schedule: non-finite Fisher information");
    }

    const double dparam = param_max / static_cast<double>(I - 1);
    std::vector<double> ell(I, 0.0);
    for (std::size_t i = 1; i < I; ++i) {
        const double a = std::sqrt(std::max(fisher[i], eps));
        const double b = std::sqrt(std::max(fisher[i - 1], eps));
        ell[i] = ell[i - 1] + 0.5 * (a + b) * dparam;
    }
    const double L = ell.back();
    if (!(L > 0.0)) throw std::runtime_error("ko schedule: degenerate all-zero Fisher information");

    SchedulerTable table;
    table.kind = kind;
    table.param_max = param_max;
    table.total_length = L;
    table.meta.grid_size = I;
    table.meta.tolerance = eps;
    const std::size_t T = table_points;
    table.times.resize(T);
    table.values.resize(T);
    table.derivatives.resize(T);

    std::size_t i = 1;
    for (std::size_t j = 0; j < T; ++j) {
        const double tj = static_cast<double>(j) / static_cast<double>(T - 1);
        const double target = tj * L;
        while (i < I - 1 && ell[i] < target) ++i;
        // ell[i-1] <= target <= ell[i]; the +eps keeps flat segments well defined
        // and selects the left node on ties.
        const double a = (target - ell[i - 1]) / (ell[i] - ell[i - 1] + eps);
        const double p0 = static_cast<double>(i - 1) * dparam;
        const double p1 = static_cast<double>(i) * dparam;
        double value = p0 + a * (p1 - p0);
        const double at = (value - p0) / (p1 - p0 + eps);
        const double V = fisher[i - 1] + at * (fisher[i] - fisher[i - 1]);
        if (j == 0) value = 0.0;
        if (j == T - 1) value = param_max;
        table.times[j] = tj;
        table.values[j] = value;
        table.derivatives[j] = L / std::sqrt(std::max(V, eps));
    }
    table.validate();
    return table;
}

// Fisher information of the metric path at a grid point, averaged over target
// tokens: (1/s) sum_{x1} Var[d(., x1)].
inline double mean_fisher_metric(const DistanceMatrix& d, double beta) {
    double acc = 0.0;
    for (std::size_t x1 = 0; x1 < d.size(); ++x1)
        acc += fisher_information_metric(d, beta, x1);
    return acc / static_cast<double>(d.size());
}

} // namespace detail

enum class Averaging { Shared, PerCodebook };

// Numerical kinetic-optimal scheduler for metric-induced paths, averaging the
// Fisher information over target tokens and codebooks (the shared scheduler).
inline SchedulerTable build_ko_schedule_metric(const DistanceSet& ds, std::size_t grid_size,
                                               std::size_t table_points, double beta_max,
                                               double eps = 1e-8) {
    if (grid_size < 2) throw std::invalid_argument("build_ko_schedule_metric: grid size >= 2 required");
    std::vector<double> fisher(grid_size);
    for (std::size_t i = 0; i < grid_size; ++i) {
        const double beta = beta_max * static_cast<double>(i) / static_cast<double>(grid_size - 1);
        double v = 0.0;
        for (std::size_t c = 0; c < ds.codebook_count(); ++c)
            v += detail::mean_fisher_metric(ds[c], beta);
        fisher[i] = v / static_cast<double>(ds.codebook_count());
    }
    SchedulerTable table = detail::invert_arc_length(fisher, beta_max, table_points, eps,
                                                     SchedulerTable::Kind::MetricKO);
    table.meta.averaging = "shared";
    return table;
}

// Per-codebook variant: one table per distance matrix.
inline std::vector<SchedulerTable> build_ko_schedule_per_codebook(const DistanceSet& ds,
                                                                  std::size_t grid_size,
                                                                  std::size_t table_points,
                                                                  double beta_max,
                                                                  double eps = 1e-8) {
    std::vector<SchedulerTable> out;
    out.reserve(ds.codebook_count());
    for (std::size_t c = 0; c < ds.codebook_count(); ++c) {
        std::vector<double> fisher(grid_size);
        for (std::size_t i = 0; i < grid_size; ++i) {
            const double beta = beta_max * static_cast<double>(i) / static_cast<double>(grid_size - 1);
            fisher[i] = detail::mean_fisher_metric(ds[c], beta);
        }
        SchedulerTable t = detail::invert_arc_length(fisher, beta_max, table_points, eps,
                                                     SchedulerTable::Kind::MetricKO);
        t.meta.averaging = "per-codebook";
        out.push_back(std::move(t));
    }
    return out;
}

// Generic arc-length inversion for an arbitrary scalar path parameter with
// Fisher information fisher_fn on [0, kappa_max].
inline SchedulerTable build_ko_schedule_generic(const std::function<double(double)>& fisher_fn,
                                                double kappa_max, std::size_t grid_size,
                                                std::size_t table_points, double eps = 1e-8) {
    if (grid_size < 2) throw std::invalid_argument("build_ko_schedule_generic: grid size >= 2 required");
    std::vector<double> fisher(grid_size);
    for (std::size_t i = 0; i < grid_size; ++i) {
        const double k = kappa_max * static_cast<double>(i) / static_cast<double>(grid_size - 1);
        const double v = fisher_fn(k);
        if (!std::isfinite(v) || v < 0.0)
            throw std::invalid_argument("build_ko_schedule_generic: fisher_fn must be finite and >= 0");
        fisher[i] = v;
    }
    return detail::invert_arc_length(fisher, kappa_max, table_points, eps,
                                     SchedulerTable::Kind::GenericKO);
}

// Closed-form kinetic-optimal mixture scheduler (hypersphere geodesic):
// kappa_t = 1 - sin^2((1-t) Omega) / sin^2(Omega), Omega = arccos(sqrt(p1)).
inline std::pair<double, double> closed_form_mixture_ko(double p1, double t) {
    if (!(p1 >= 0.0 && p1 < 1.0))
        throw std::invalid_argument("closed_form_mixture_ko: p1 must be in [0,1)");
    if (!(t >= 0.0 && t <= 1.0))
        throw std::invalid_argument("closed_form_mixture_ko: t outside [0,1]");
    const double omega = std::acos(std::sqrt(p1));
    const double s2 = std::sin(omega) * std::sin(omega);
    const double arg = (1.0 - t) * omega;
    const double kappa = 1.0 - std::sin(arg) * std::sin(arg) / s2;
    const double kappa_dot = omega * std::sin(2.0 * arg) / s2;
    return {kappa, kappa_dot};
}

// Heuristic schedule beta_t = c (t / (1-t))^a, clamped at beta_cap.
inline std::pair<double, double> heuristic_beta(double a, double c, double t,
                                                double beta_cap = 1e6) {
    if (!(a > 0.0 && c > 0.0)) throw std::invalid_argument("heuristic_beta: need a > 0, c > 0");
    if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("heuristic_beta: t outside [0,1]");
    if (t >= 1.0) return {beta_cap, 0.0};
    const double r = t / (1.0 - t);
    const double beta = c * std::pow(r, a);
    if (!(beta < beta_cap)) return {beta_cap, 0.0};
    const double beta_dot = (t == 0.0 && a > 1.0)
                                ? 0.0
                                : c * a * std::pow(r, a - 1.0) / ((1.0 - t) * (1.0 - t));
    return {beta, beta_dot};
}

enum class NamedKappa { SinSq, Power2, Sine };

// Baseline mixture schedulers with analytic derivatives.
inline std::pair<double, double> named_kappa(NamedKappa kind, double t) {
    if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("named_kappa: t outside [0,1]");
    constexpr double half_pi = 1.5707963267948966;
    switch (kind) {
        case NamedKappa::SinSq: {
            const double s = std::sin(half_pi * t);
            return {s * s, half_pi * std::sin(3.141592653589793 * t)};
        }
        case NamedKappa::Power2:
            return {t * t, 2.0 * t};
        case NamedKappa::Sine:
            return {std::sin(half_pi * t), half_pi * std::cos(half_pi * t)};
    }
    throw std::invalid_argument("named_kappa: unknown kind");
}

// Schedule evaluators as ScheduleFn closures.
inline ScheduleFn schedule_from_table(const SchedulerTable& table) {
    return [&table](double t) { return interp_schedule(table, t); };
}

inline ScheduleFn schedule_heuristic(double a, double c, double beta_cap) {
    return [=](double t) { return heuristic_beta(a, c, t, beta_cap); };
}

inline ScheduleFn schedule_named(NamedKappa kind) {
    return [=](double t) { return named_kappa(kind, t); };
}

inline ScheduleFn schedule_closed_mixture_ko(double p1) {
    return [=](double t) { return closed_form_mixture_ko(p1, t); };
}

} // namespace dfmk
