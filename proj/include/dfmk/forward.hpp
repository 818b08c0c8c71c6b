#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "dfmk/distance.hpp"
#include "dfmk/geometry.hpp"
#include "dfmk/rng.hpp"
#include "dfmk/scheduler.hpp"

namespace dfmk {

// Prompt/target split mask: first m positions are prompt (0), the rest target (1).
struct PredictionMask {
    std::vector<std::uint8_t> bits;
    std::size_t prompt_count = 0;
};

// m = round(r N), half away from zero; bits[i] = 1 iff i >= m.
inline PredictionMask build_prediction_mask(std::size_t n, double r, bool strict = true) {
    if (n < 1) throw std::invalid_argument("build_prediction_mask: N must be >= 1");
    if (strict && !(r >= 0.0 && r <= 0.3))
        throw std::invalid_argument("build_prediction_mask: r outside [0, 0.3]");
    const auto m = static_cast<std::size_t>(std::llround(r * static_cast<double>(n)));
    PredictionMask mask;
    mask.prompt_count = std::min(m, n);
    mask.bits.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        mask.bits[i] = (i >= mask.prompt_count) ? 1 : 0;
    return mask;
}

struct CodebookWeights {
    std::vector<double> weights; // w_c = 1 - (c-1)/C, strictly decreasing, w_1 = 1
};

inline CodebookWeights codebook_weights(std::size_t c_count) {
    if (c_count < 1) throw std::invalid_argument("codebook_weights: C must be >= 1");
    CodebookWeights w;
    w.weights.resize(c_count);
    for (std::size_t c = 0; c < c_count; ++c)
        w.weights[c] = 1.0 - static_cast<double>(c) / static_cast<double>(c_count);
    return w;
}

// Gumbel-max draw from unnormalized log weights; ties break to the lowest index.
inline std::size_t gumbel_max_sample(const std::vector<double>& log_weights, RngStream& rng) {
    std::size_t best = log_weights.size();
    double best_val = -std::numeric_limits<double>::infinity();
    for (std::size_t x = 0; x < log_weights.size(); ++x) {
        if (!std::isfinite(log_weights[x]) && log_weights[x] < 0.0) {
            rng.next_gumbel(); // keep the draw count state-independent
            continue;
        }
        const double v = log_weights[x] + rng.next_gumbel();
        if (v > best_val) {
            best_val = v;
            best = x;
        }
    }
    if (best == log_weights.size())
        throw std::invalid_argument("gumbel_max_sample: all weights are -inf");
    return best;
}

// Temperature scaling of log weights; renormalization happens at sampling time.
inline std::vector<double> apply_temperature(const std::vector<double>& log_weights, double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("apply_temperature: tau must be > 0");
    std::vector<double> out(log_weights);
    for (double& x : out) x /= tau;
    return out;
}

// Forward corruption of clean tokens x1 (N x C, row-major by position): masked
// positions are drawn from the Gibbs conditional at beta_t, prompt positions
// are copied through. One stream per (position, codebook) keyed by the seed.
inline std::vector<std::size_t> sample_corruption(const std::vector<std::size_t>& x1,
                                                  std::size_t n, std::size_t c_count, double t,
                                                  const SchedulerTable& table,
                                                  const DistanceSet& ds,
                                                  const PredictionMask& mask,
                                                  std::uint64_t seed) {
    if (x1.size() != n * c_count)
        throw std::invalid_argument("sample_corruption: token count mismatch");
    if (ds.codebook_count() != c_count)
        throw std::invalid_argument("sample_corruption: distance set size mismatch");
    if (mask.bits.size() != n)
        throw std::invalid_argument("sample_corruption: mask length mismatch");
    if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("sample_corruption: t outside [0,1]");

    const auto [beta, beta_dot] = interp_schedule(table, t);
    (void)beta_dot;
    const std::size_t s = ds.vocab_size();
    std::vector<std::size_t> out(x1);
    for (std::size_t i = 0; i < n; ++i) {
        if (!mask.bits[i]) continue;
        for (std::size_t c = 0; c < c_count; ++c) {
            const std::size_t clean = x1[i * c_count + c];
            if (clean >= s) throw std::invalid_argument("sample_corruption: token out of range");
            std::vector<double> logw(s);
            for (std::size_t x = 0; x < s; ++x)
                logw[x] = -beta * ds[c].at(x, clean);
            RngStream rng(seed, 0x636f7272, i, c);
            out[i * c_count + c] = gumbel_max_sample(logw, rng);
        }
    }
    return out;
}

// Weighted masked NLL: sum_i sum_c M_i w_c (-log p(x1_ic)) / sum_i sum_c M_i w_c.
// log_probs is N x C x s, normalized per (i, c) within 1e-9.
inline double weighted_masked_nll(const std::vector<double>& log_probs,
                                  const std::vector<std::size_t>& targets, std::size_t n,
                                  std::size_t c_count, std::size_t s,
                                  const PredictionMask& mask, const CodebookWeights& weights) {
    if (log_probs.size() != n * c_count * s)
        throw std::invalid_argument("weighted_masked_nll: log_probs shape mismatch");
    if (targets.size() != n * c_count)
        throw std::invalid_argument("weighted_masked_nll: target shape mismatch");
    if (mask.bits.size() != n || weights.weights.size() != c_count)
        throw std::invalid_argument("weighted_masked_nll: mask/weights shape mismatch");

    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < c_count; ++c) {
            double sum = 0.0;
            for (std::size_t x = 0; x < s; ++x)
                sum += std::exp(log_probs[(i * c_count + c) * s + x]);
            if (std::abs(sum - 1.0) > 1e-9)
                throw std::invalid_argument("weighted_masked_nll: log_probs not normalized");
        }
    }

    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!mask.bits[i]) continue;
        for (std::size_t c = 0; c < c_count; ++c) {
            const std::size_t target = targets[i * c_count + c];
            if (target >= s) throw std::invalid_argument("weighted_masked_nll: target out of range");
            num += weights.weights[c] * (-log_probs[(i * c_count + c) * s + target]);
            den += weights.weights[c];
        }
    }
    if (den == 0.0)
        throw std::invalid_argument("weighted_masked_nll: all-prompt input, loss undefined");
    return num / den;
}

} // namespace dfmk
