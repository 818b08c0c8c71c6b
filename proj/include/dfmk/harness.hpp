#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "dfmk/geometry.hpp"
#include "dfmk/io.hpp"
#include "dfmk/parallel.hpp"
#include "dfmk/rng.hpp"
#include "dfmk/sampler.hpp"
#include "dfmk/scheduler.hpp"

namespace dfmk {

inline std::string iso_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t tt = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&tt, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

struct SimulationReport {
    ordered_json config_echo;
    double tv_to_target = 0.0;
    double kl_to_target = 0.0;
    std::vector<double> per_step_speed;
    std::vector<double> moment_residuals; // max |residual| per step, over trials
    std::size_t nfe = 0;
    double corrector_used_rate = 0.0;
    std::string started_at;
    std::string finished_at;
    int format_version = kReportFormatVersion;
};

inline ordered_json report_to_json(const SimulationReport& r) {
    ordered_json j;
    j["formatVersion"] = r.format_version;
    j["configEcho"] = r.config_echo;
    j["metrics"] = {{"tvToTarget", r.tv_to_target},
                    {"klToTarget", r.kl_to_target},
                    {"perStepSpeed", r.per_step_speed},
                    {"momentResiduals", r.moment_residuals},
                    {"nfe", r.nfe},
                    {"correctorUsedRate", r.corrector_used_rate}};
    j["timestamps"] = {{"started", r.started_at}, {"finished", r.finished_at}};
    return j;
}

// Structural schema check shared by every command path that emits a report.
inline bool report_schema_valid(const ordered_json& j, std::string* why = nullptr) {
    const auto fail = [&](const std::string& msg) {
        if (why) *why = msg;
        return false;
    };
    if (!j.contains("formatVersion") || !j.at("formatVersion").is_number_integer())
        return fail("missing integer formatVersion");
    if (!j.contains("configEcho") || !j.at("configEcho").is_object())
        return fail("missing configEcho object");
    if (!j.at("configEcho").contains("seed")) return fail("configEcho missing seed");
    if (!j.contains("metrics") || !j.at("metrics").is_object())
        return fail("missing metrics object");
    const auto& m = j.at("metrics");
    for (const char* key : {"tvToTarget", "klToTarget", "nfe", "correctorUsedRate"}) {
        if (!m.contains(key) || !m.at(key).is_number()) return fail(std::string("metrics missing ") + key);
    }
    for (const char* key : {"perStepSpeed", "momentResiduals"}) {
        if (!m.contains(key) || !m.at(key).is_array()) return fail(std::string("metrics missing ") + key);
    }
    const double tv = m.at("tvToTarget").get<double>();
    if (!(tv >= 0.0 && tv <= 1.0)) return fail("tvToTarget outside [0,1]");
    if (!(m.at("klToTarget").get<double>() >= 0.0)) return fail("klToTarget negative");
    if (!j.contains("timestamps") || !j.at("timestamps").is_object())
        return fail("missing timestamps object");
    return true;
}

// Mean Fisher information of a path family at a parameter value: averaged over
// target tokens for the metric path, closed form for the mixture path.
inline double family_mean_fisher(const PathFamily& family, double param) {
    if (family.is_metric()) return detail::mean_fisher_metric(family.distances(), param);
    double p1 = 0.0;
    const Pmf& src = family.source();
    // The mixture Fisher information depends on the source mass at the target;
    // average over targets drawn uniformly, matching the metric convention.
    double acc = 0.0;
    for (std::size_t x1 = 0; x1 < src.size(); ++x1) {
        p1 = src[x1];
        if (p1 >= 1.0) continue; // degenerate: path is constant for this target
        acc += fisher_information_mixture(p1, std::min(param, 1.0 - 1e-15));
    }
    return acc / static_cast<double>(src.size());
}

struct SpeedProfile {
    std::vector<double> times;
    std::vector<double> speeds;
    double mean = 0.0;
    double relative_std = 0.0;
};

// Finite-difference averaged Fisher-Rao speed |dbeta/dt| sqrt(Vbar(beta)) at
// interior grid times, with a summary for constancy checks.
inline SpeedProfile speed_diagnostic(const SchedulerTable& table, const DistanceSet& ds,
                                     std::size_t samples) {
    if (samples < 3) throw std::invalid_argument("speed_diagnostic: samples must be >= 3");
    const double delta = 0.5 / static_cast<double>(samples);
    SpeedProfile prof;
    for (std::size_t k = 1; k + 1 < samples; ++k) {
        const double t = static_cast<double>(k) / static_cast<double>(samples - 1);
        const auto [lo, lo_dot] = interp_schedule(table, std::max(t - delta, 0.0));
        const auto [hi, hi_dot] = interp_schedule(table, std::min(t + delta, 1.0));
        (void)lo_dot;
        (void)hi_dot;
        const auto [beta, beta_dot] = interp_schedule(table, t);
        (void)beta_dot;
        const double slope =
            (hi - lo) / (std::min(t + delta, 1.0) - std::max(t - delta, 0.0));
        double vbar = 0.0;
        for (std::size_t c = 0; c < ds.codebook_count(); ++c)
            vbar += detail::mean_fisher_metric(ds[c], beta);
        vbar /= static_cast<double>(ds.codebook_count());
        prof.times.push_back(t);
        prof.speeds.push_back(std::abs(slope) * std::sqrt(vbar));
    }
    const std::size_t n = prof.speeds.size();
    prof.mean = std::accumulate(prof.speeds.begin(), prof.speeds.end(), 0.0) /
                static_cast<double>(n);
    double var = 0.0;
    for (double v : prof.speeds) var += (v - prof.mean) * (v - prof.mean);
    var /= static_cast<double>(n);
    prof.relative_std = prof.mean > 0.0 ? std::sqrt(var) / prof.mean : 0.0;
    return prof;
}

// Fixture-level driver: repeated inference trials against an exact oracle,
// with empirical joint marginals compared to the fixture target per codebook.
struct SimulationSetup {
    std::vector<CodebookPath> paths;       // one per codebook
    ExactOracle* oracle = nullptr;         // provider and joint target
    std::size_t target_length = 0;
    std::size_t trials = 1;
    SamplerConfig sampler;
    ordered_json config_echo;              // full effective config (CLI fills this)
};

// Seed for trial k, derived so the stream layout is identical across runs and
// independent of the worker count.
inline std::uint64_t trial_seed(std::uint64_t base_seed, std::size_t trial) {
    return detail::mix64(base_seed + (static_cast<std::uint64_t>(trial) + 1) * detail::kGolden);
}

inline SimulationReport run_simulation(const SimulationSetup& setup) {
    if (setup.oracle == nullptr) throw std::invalid_argument("run_simulation: oracle required");
    if (setup.trials < 1) throw std::invalid_argument("run_simulation: trials must be >= 1");
    const std::size_t c_count = setup.paths.size();
    const std::size_t n = setup.target_length;
    const std::size_t s = setup.oracle->vocab_size();
    if (setup.oracle->target_length() != n)
        throw std::invalid_argument("run_simulation: oracle target length mismatch");

    SimulationReport report;
    report.started_at = iso_timestamp();
    report.config_echo = setup.config_echo;
    report.nfe = setup.sampler.steps;

    // Per-trial slots keep the parallel loop write-disjoint; merging afterwards
    // is sequential and therefore thread-count independent.
    std::vector<std::vector<std::size_t>> trial_tokens(setup.trials);
    std::vector<std::vector<StepDiagnostics>> trial_traces(setup.trials);
    parallel_for(setup.trials, [&](std::size_t k) {
        SamplerConfig cfg = setup.sampler;
        cfg.seed = trial_seed(setup.sampler.seed, k);
        InferenceResult res = run_inference(cfg, setup.paths, *setup.oracle, {}, n);
        trial_tokens[k] = std::move(res.target_tokens);
        trial_traces[k] = std::move(res.trace);
    });

    // Empirical joint law per codebook over s^N states.
    std::size_t states = 1;
    for (std::size_t i = 0; i < n; ++i) states *= s;
    std::vector<std::vector<double>> counts(c_count, std::vector<double>(states, 0.0));
    for (std::size_t k = 0; k < setup.trials; ++k) {
        for (std::size_t c = 0; c < c_count; ++c) {
            std::size_t idx = 0;
            for (std::size_t i = 0; i < n; ++i) idx = idx * s + trial_tokens[k][i * c_count + c];
            counts[c][idx] += 1.0;
        }
    }
    double tv = 0.0, kl = 0.0;
    for (std::size_t c = 0; c < c_count; ++c) {
        for (double& x : counts[c]) x /= static_cast<double>(setup.trials);
        const Pmf emp = Pmf::normalized(std::move(counts[c]));
        const Pmf target = Pmf::normalized(std::vector<double>(setup.oracle->joint_target(c)));
        tv += tv_distance(emp, target);
        kl += kl_divergence(emp, target);
    }
    report.tv_to_target = tv / static_cast<double>(c_count);
    report.kl_to_target = kl / static_cast<double>(c_count);

    // Step-level diagnostics merged in trial order.
    const std::size_t K = setup.sampler.steps;
    report.moment_residuals.assign(K, 0.0);
    std::size_t updates = 0, used = 0;
    for (std::size_t k = 0; k < setup.trials; ++k) {
        for (std::size_t step = 0; step < K; ++step) {
            report.moment_residuals[step] = std::max(report.moment_residuals[step],
                                                     trial_traces[k][step].max_moment_residual);
            updates += trial_traces[k][step].updates;
            used += trial_traces[k][step].corrector_used;
        }
    }
    report.corrector_used_rate =
        updates > 0 ? static_cast<double>(used) / static_cast<double>(updates) : 0.0;

    // Averaged-Fisher speed of the schedule at step midpoints (first codebook's
    // schedule is representative; per-codebook speeds coincide for shared tables).
    report.per_step_speed.reserve(K);
    for (std::size_t step = 0; step < K; ++step) {
        const double t = (static_cast<double>(step) + 0.5) / static_cast<double>(K);
        const auto [param, param_dot] = setup.paths[0].schedule(t);
        report.per_step_speed.push_back(param_dot *
                                        std::sqrt(family_mean_fisher(setup.paths[0].family, param)));
    }

    report.finished_at = iso_timestamp();
    return report;
}

inline std::vector<SimulationReport> run_nfe_sweep(SimulationSetup setup,
                                                   const std::vector<std::size_t>& k_values) {
    if (k_values.empty()) throw std::invalid_argument("run_nfe_sweep: empty K list");
    std::vector<SimulationReport> out;
    out.reserve(k_values.size());
    for (std::size_t K : k_values) {
        setup.sampler.steps = K;
        setup.config_echo["nfe"] = K;
        out.push_back(run_simulation(setup));
    }
    return out;
}

// CSV export: one row per report, metrics flattened for spreadsheet diffing.
inline std::string reports_to_csv(const std::vector<SimulationReport>& reports) {
    std::ostringstream out;
    out << "nfe,corrector,tvToTarget,klToTarget,correctorUsedRate\n";
    for (const auto& r : reports) {
        const bool corrector = r.config_echo.contains("corrector")
                                   ? r.config_echo.at("corrector").get<bool>()
                                   : true;
        out << r.nfe << ',' << (corrector ? 1 : 0) << ',' << r.tv_to_target << ','
            << r.kl_to_target << ',' << r.corrector_used_rate << '\n';
    }
    return out.str();
}

} // namespace dfmk
