#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dfmk/ctmc.hpp"
#include "dfmk/forward.hpp"
#include "dfmk/geometry.hpp"
#include "dfmk/pmf.hpp"
#include "dfmk/rng.hpp"

namespace dfmk {

// Token grid for one sequence: N positions x C codebooks, row-major by
// position. The first prompt_length positions are frozen.
struct SequenceState {
    std::vector<std::size_t> tokens;
    std::size_t positions = 0;
    std::size_t codebooks = 0;
    std::size_t prompt_length = 0;
    double time = 0.0;

    std::size_t& at(std::size_t i, std::size_t c) { return tokens[i * codebooks + c]; }
    std::size_t at(std::size_t i, std::size_t c) const { return tokens[i * codebooks + c]; }

    // Tokens of one codebook for the target region (positions >= prompt_length).
    std::vector<std::size_t> target_row(std::size_t c) const {
        std::vector<std::size_t> row;
        row.reserve(positions - prompt_length);
        for (std::size_t i = prompt_length; i < positions; ++i) row.push_back(at(i, c));
        return row;
    }
};

// Source of per-position clean-token distributions p_{1|t}(. | z) for the
// target region of one codebook.
class PosteriorProvider {
public:
    virtual ~PosteriorProvider() = default;
    // tokens: target-region tokens of codebook c at time t; one pmf per position.
    virtual std::vector<Pmf> posteriors(std::size_t c, const std::vector<std::size_t>& tokens,
                                        double t) = 0;
};

// Conditional pmf evaluator per codebook: (c, x1, t) -> p_t(. | x1).
using ConditionalFn = std::function<Pmf(std::size_t, std::size_t, double)>;

// Exact posterior by enumeration over a small joint target q per codebook.
// p_{1|t}(x^i | z) = sum_{x1 : x1^i = x^i} q(x1) prod_j p_t(z^j | x1^j), normalized.
class ExactOracle final : public PosteriorProvider {
public:
    // joint_q[c] has s^N entries indexed by sum_i x1_i * s^(N-1-i).
    ExactOracle(std::size_t vocab, std::size_t target_len,
                std::vector<std::vector<double>> joint_q, ConditionalFn conditional,
                std::size_t enumeration_budget = 1000000)
        : s_(vocab), n_(target_len), q_(std::move(joint_q)), cond_(std::move(conditional)) {
        std::size_t states = 1;
        for (std::size_t i = 0; i < n_; ++i) {
            states *= s_;
            if (states > enumeration_budget)
                throw std::invalid_argument("ExactOracle: enumeration budget exceeded");
        }
        for (const auto& q : q_) {
            if (q.size() != states) throw std::invalid_argument("ExactOracle: joint q size mismatch");
            double sum = 0.0;
            for (double x : q) sum += x;
            if (std::abs(sum - 1.0) > 1e-9)
                throw std::invalid_argument("ExactOracle: joint q does not sum to 1");
        }
    }

    std::size_t vocab_size() const { return s_; }
    std::size_t target_length() const { return n_; }
    const std::vector<double>& joint_target(std::size_t c) const { return q_[c]; }

    std::vector<Pmf> posteriors(std::size_t c, const std::vector<std::size_t>& tokens,
                                double t) override {
        if (c >= q_.size()) throw std::invalid_argument("ExactOracle: codebook out of range");
        if (tokens.size() != n_) throw std::invalid_argument("ExactOracle: token count mismatch");
        const CacheKey key{c, encode(tokens), t};
        {
            std::lock_guard<std::mutex> lock(cache_mutex_);
            if (auto it = cache_.find(key); it != cache_.end()) return it->second;
        }

        // Conditional rows p_t(. | x1) reused across the joint enumeration.
        std::vector<Pmf> cond_rows;
        cond_rows.reserve(s_);
        for (std::size_t x1 = 0; x1 < s_; ++x1) cond_rows.push_back(cond_(c, x1, t));

        std::vector<std::vector<double>> marg(n_, std::vector<double>(s_, 0.0));
        const std::size_t states = q_[c].size();
        std::vector<std::size_t> x1(n_, 0);
        for (std::size_t idx = 0; idx < states; ++idx) {
            const double qv = q_[c][idx];
            if (qv > 0.0) {
                double w = qv;
                std::size_t rest = idx;
                for (std::size_t i = n_; i-- > 0;) {
                    x1[i] = rest % s_;
                    rest /= s_;
                }
                for (std::size_t j = 0; j < n_; ++j) w *= cond_rows[x1[j]][tokens[j]];
                if (w > 0.0) {
                    for (std::size_t i = 0; i < n_; ++i) marg[i][x1[i]] += w;
                }
            }
        }
        std::vector<Pmf> out;
        out.reserve(n_);
        for (std::size_t i = 0; i < n_; ++i) out.push_back(Pmf::normalized(std::move(marg[i])));
        {
            std::lock_guard<std::mutex> lock(cache_mutex_);
            cache_.emplace(key, out);
        }
        return out;
    }

private:
    struct CacheKey {
        std::size_t c;
        std::uint64_t state;
        double t;
        bool operator<(const CacheKey& o) const {
            if (c != o.c) return c < o.c;
            if (state != o.state) return state < o.state;
            return t < o.t;
        }
    };

    std::uint64_t encode(const std::vector<std::size_t>& tokens) const {
        std::uint64_t key = 0;
        for (std::size_t z : tokens) key = key * s_ + z;
        return key;
    }

    std::size_t s_;
    std::size_t n_;
    std::vector<std::vector<double>> q_;
    ConditionalFn cond_;
    std::mutex cache_mutex_;
    std::map<CacheKey, std::vector<Pmf>> cache_;
};

// Posterior provider backed by a precomputed logits file, so externally
// trained models can be audited without in-process inference. Keys follow
// logits_key(); every queried key must be present.
class LogitsTableProvider final : public PosteriorProvider {
public:
    explicit LogitsTableProvider(std::map<std::string, std::vector<double>> table)
        : table_(std::move(table)) {}

    static std::string logits_key(std::size_t c, std::size_t i,
                                  const std::vector<std::size_t>& tokens, double t) {
        std::string key = "c" + std::to_string(c) + "|i" + std::to_string(i) + "|t";
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.9f", t);
        key += buf;
        key += "|z";
        for (std::size_t j = 0; j < tokens.size(); ++j) {
            if (j) key += ',';
            key += std::to_string(tokens[j]);
        }
        return key;
    }

    std::vector<Pmf> posteriors(std::size_t c, const std::vector<std::size_t>& tokens,
                                double t) override {
        std::vector<Pmf> out;
        out.reserve(tokens.size());
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            const auto it = table_.find(logits_key(c, i, tokens, t));
            if (it == table_.end())
                throw std::runtime_error("LogitsTableProvider: missing key " +
                                         logits_key(c, i, tokens, t));
            std::vector<double> w(it->second.size());
            double mx = -std::numeric_limits<double>::infinity();
            for (double x : it->second) mx = std::max(mx, x);
            double sum = 0.0;
            for (std::size_t x = 0; x < w.size(); ++x) {
                w[x] = std::exp(it->second[x] - mx);
                sum += w[x];
            }
            for (double& x : w) x /= sum;
            out.push_back(Pmf::normalized(std::move(w)));
        }
        return out;
    }

private:
    std::map<std::string, std::vector<double>> table_;
};

// Per-codebook probability path plus its time schedule.
struct CodebookPath {
    PathFamily family;
    ScheduleFn schedule;
};

struct SamplerConfig {
    std::size_t steps = 32;       // K
    double temperature = 0.6;     // tau
    bool corrector_enabled = true;
    std::uint64_t seed = 0;

    void validate() const {
        if (steps < 1) throw std::invalid_argument("SamplerConfig: K must be >= 1");
        if (!(temperature > 0.0)) throw std::invalid_argument("SamplerConfig: tau must be > 0");
    }
};

struct StepDiagnostics {
    double t = 0.0;
    double h = 0.0;
    std::size_t updates = 0;
    std::size_t jumps = 0;
    std::size_t corrector_eligible = 0; // lambda > 0 with corrector on
    std::size_t corrector_used = 0;
    double max_moment_residual = 0.0;   // metric corrector only
};

namespace detail {

inline constexpr std::uint64_t kInitStreamTag = UINT64_C(0xFFFFFFFFFFFFFFFF);

// Moment residual of the corrected metric step with beta_dot factored out:
// (1 - rho) phi(z) + rho phi_bar - m, phi(x) = mu_t - d(x, x1_hat).
inline double metric_moment_residual(const DistanceMatrix& d, double beta_t, double beta_th,
                                     std::size_t z, std::size_t x1_hat,
                                     const JumpDecomposition& jd, double rho) {
    const double mu_t = gibbs_mean_distance(d, beta_t, x1_hat);
    const double mu_next = gibbs_mean_distance(d, beta_th, x1_hat);
    double mu_pi = 0.0;
    for (std::size_t x = 0; x < d.size(); ++x)
        mu_pi += jd.destination[x] * d.at(x, x1_hat);
    const double phi_z = mu_t - d.at(z, x1_hat);
    const double phi_bar = mu_t - mu_pi;
    const double m = mu_t - mu_next;
    return (1.0 - rho) * phi_z + rho * phi_bar - m;
}

} // namespace detail

// One step of the inference loop over [t, t+h]. All per-(position, codebook)
// updates read the pre-step state, so the result is order independent; RNG
// streams are keyed by (seed, step, position, codebook).
inline SequenceState inference_step(const SequenceState& state, double t, double h,
                                    std::size_t step_index, const SamplerConfig& config,
                                    const std::vector<CodebookPath>& paths,
                                    PosteriorProvider& provider,
                                    StepDiagnostics* diag = nullptr) {
    if (t + h > 1.0 + 1e-12) throw std::invalid_argument("inference_step: t + h > 1");
    if (paths.size() != state.codebooks)
        throw std::invalid_argument("inference_step: path count mismatch");

    SequenceState next = state;
    next.time = t + h;
    const std::size_t n_target = state.positions - state.prompt_length;
    if (n_target == 0) return next;

    for (std::size_t c = 0; c < state.codebooks; ++c) {
        const auto& cb = paths[c];
        const auto row = state.target_row(c);
        const std::vector<Pmf> posts = provider.posteriors(c, row, t);
        const auto [param_t, param_dot] = cb.schedule(t);
        const auto [param_th, param_th_dot] = cb.schedule(t + h);
        (void)param_th_dot;

        for (std::size_t j = 0; j < n_target; ++j) {
            const std::size_t i = state.prompt_length + j;
            const std::size_t z = state.at(i, c);
            RngStream rng(config.seed, step_index, i, c, 1);

            // Sample the predicted endpoint from the temperature-scaled posterior.
            std::vector<double> logw(posts[j].size());
            for (std::size_t x = 0; x < logw.size(); ++x)
                logw[x] = posts[j][x] > 0.0 ? std::log(posts[j][x])
                                            : -std::numeric_limits<double>::infinity();
            const std::size_t x1_hat =
                gumbel_max_sample(apply_temperature(logw, config.temperature), rng);

            JumpDecomposition jd;
            double rho = 0.0;
            bool used_corr = false;
            if (cb.family.is_metric()) {
                const auto& d = cb.family.distances();
                jd = metric_jump_decomposition(d, param_t, param_dot, z, x1_hat);
                const double fallback = base_jump_prob(jd.lambda, h);
                if (config.corrector_enabled && jd.lambda > 0.0) {
                    const auto corr =
                        corrected_jump_prob_metric(d, param_t, param_th, z, x1_hat, jd, fallback);
                    rho = corr.rho;
                    used_corr = corr.used_correction;
                    if (diag && used_corr) {
                        const double res = detail::metric_moment_residual(d, param_t, param_th, z,
                                                                          x1_hat, jd, rho);
                        diag->max_moment_residual =
                            std::max(diag->max_moment_residual, std::abs(res));
                    }
                } else {
                    rho = fallback;
                }
            } else {
                // Conditional on x1_hat the mixture destination is the delta at x1_hat.
                const Pmf target = Pmf::delta(cb.family.vocab_size(), x1_hat);
                jd = mixture_jump_decomposition(param_t, param_dot, target, z);
                const double fallback = base_jump_prob(jd.lambda, h);
                if (config.corrector_enabled && jd.lambda > 0.0) {
                    rho = mixture_exact_jump_prob(param_t, std::max(param_th, param_t));
                    used_corr = true;
                } else {
                    rho = fallback;
                }
            }

            if (diag) {
                ++diag->updates;
                if (config.corrector_enabled && jd.lambda > 0.0) ++diag->corrector_eligible;
                if (used_corr) ++diag->corrector_used;
            }

            const double z_jump = rng.next_double();
            if (z_jump <= rho && jd.lambda > 0.0) {
                next.at(i, c) = sample_destination(jd, rng.next_double());
                if (diag) ++diag->jumps;
            }
        }
    }
    return next;
}

struct InferenceResult {
    std::vector<std::size_t> target_tokens; // N x C row-major
    std::vector<StepDiagnostics> trace;
    std::vector<SequenceState> states; // per grid time, including the initial state
};

// Full inference loop: uniform time grid t_k = k / K, target tokens drawn from
// the source distribution of each codebook's path (uniform for metric paths).
inline InferenceResult run_inference(const SamplerConfig& config,
                                     const std::vector<CodebookPath>& paths,
                                     PosteriorProvider& provider,
                                     const std::vector<std::size_t>& prompt_tokens,
                                     std::size_t target_length, bool keep_states = false) {
    config.validate();
    if (paths.empty()) throw std::invalid_argument("run_inference: no codebook paths");
    const std::size_t c_count = paths.size();
    if (prompt_tokens.size() % c_count != 0)
        throw std::invalid_argument("run_inference: prompt token count not divisible by C");
    const std::size_t prompt_len = prompt_tokens.size() / c_count;

    SequenceState state;
    state.codebooks = c_count;
    state.prompt_length = prompt_len;
    state.positions = prompt_len + target_length;
    state.tokens.resize(state.positions * c_count);
    for (std::size_t i = 0; i < prompt_len; ++i)
        for (std::size_t c = 0; c < c_count; ++c)
            state.at(i, c) = prompt_tokens[i * c_count + c];

    for (std::size_t j = 0; j < target_length; ++j) {
        const std::size_t i = prompt_len + j;
        for (std::size_t c = 0; c < c_count; ++c) {
            RngStream rng(config.seed, detail::kInitStreamTag, i, c, 0);
            const auto& fam = paths[c].family;
            if (fam.is_metric()) {
                state.at(i, c) = rng.next_below(fam.vocab_size());
            } else {
                const Pmf& src = fam.source();
                const double u = rng.next_double();
                double acc = 0.0;
                std::size_t pick = src.size() - 1;
                for (std::size_t x = 0; x < src.size(); ++x) {
                    acc += src[x];
                    if (u <= acc) { pick = x; break; }
                }
                state.at(i, c) = pick;
            }
        }
    }

    InferenceResult result;
    if (keep_states) result.states.push_back(state);
    const std::size_t K = config.steps;
    for (std::size_t k = 0; k < K; ++k) {
        const double t = static_cast<double>(k) / static_cast<double>(K);
        const double h = static_cast<double>(k + 1) / static_cast<double>(K) - t;
        StepDiagnostics diag;
        diag.t = t;
        diag.h = h;
        state = inference_step(state, t, h, k, config, paths, provider, &diag);
        result.trace.push_back(diag);
        if (keep_states) result.states.push_back(state);
    }

    result.target_tokens.resize(target_length * c_count);
    for (std::size_t j = 0; j < target_length; ++j)
        for (std::size_t c = 0; c < c_count; ++c)
            result.target_tokens[j * c_count + c] = state.at(prompt_len + j, c);
    return result;
}

} // namespace dfmk
