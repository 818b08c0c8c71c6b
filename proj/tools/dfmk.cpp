// dfmk: schedule construction, inspection, and CTMC sampling experiments for
// discrete flow matching over metric-induced and mixture probability paths.

#include <cstdint>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dfmk/harness.hpp"
#include "dfmk/io.hpp"
#include "dfmk/sampler.hpp"

namespace {

using namespace dfmk;

struct SchedulerSpec {
    enum class Kind { NumericalKO, ClosedKO, Heuristic, T2, Sin } kind;
    double a = 5.0; // heuristic exponent
    double c = 1.0; // heuristic scale
};

SchedulerSpec parse_scheduler(const std::string& text) {
    SchedulerSpec spec{};
    if (text == "numerical-ko") {
        spec.kind = SchedulerSpec::Kind::NumericalKO;
    } else if (text == "closed-ko") {
        spec.kind = SchedulerSpec::Kind::ClosedKO;
    } else if (text == "t2") {
        spec.kind = SchedulerSpec::Kind::T2;
    } else if (text == "sin") {
        spec.kind = SchedulerSpec::Kind::Sin;
    } else if (text.rfind("heuristic:", 0) == 0) {
        spec.kind = SchedulerSpec::Kind::Heuristic;
        std::string rest = text.substr(10);
        std::size_t pos = 0;
        while (pos < rest.size()) {
            std::size_t next = rest.find(',', pos);
            if (next == std::string::npos) next = rest.size();
            const std::string kv = rest.substr(pos, next - pos);
            const std::size_t eq = kv.find('=');
            if (eq == std::string::npos)
                throw CLI::ValidationError("--scheduler", "bad heuristic parameter: " + kv);
            const std::string key = kv.substr(0, eq);
            const double val = std::stod(kv.substr(eq + 1));
            if (key == "a")
                spec.a = val;
            else if (key == "c")
                spec.c = val;
            else
                throw CLI::ValidationError("--scheduler", "unknown heuristic parameter: " + key);
            pos = next + 1;
        }
    } else {
        throw CLI::ValidationError("--scheduler", "unknown scheduler: " + text);
    }
    return spec;
}

struct SimulateFlags {
    std::string schedule_file;
    std::string distances_file;
    std::string path_kind = "metric"; // metric | mixture | mask
    std::string scheduler_text = "numerical-ko";
    std::string target_file;
    std::string report_file;
    std::size_t nfe = 32;
    double temperature = 0.6;
    std::uint64_t seed = 0;
    bool no_corrector = false;
    std::size_t trials = 1;
};

void add_simulate_flags(CLI::App* cmd, SimulateFlags& f, bool single_nfe) {
    cmd->add_option("--schedule", f.schedule_file, "Schedule table JSON (numerical-ko)");
    cmd->add_option("--distances", f.distances_file, "Distance container (metric path)");
    cmd->add_option("--path", f.path_kind, "Path family: metric|mixture|mask")
        ->check(CLI::IsMember({"metric", "mixture", "mask"}));
    cmd->add_option("--scheduler", f.scheduler_text,
                    "numerical-ko|closed-ko|heuristic:a=5,c=1|t2|sin");
    cmd->add_option("--target", f.target_file, "Joint target fixture JSON")->required();
    if (single_nfe) cmd->add_option("--nfe", f.nfe, "Sampler steps K");
    cmd->add_option("--temperature", f.temperature, "Endpoint sampling temperature");
    cmd->add_option("--seed", f.seed, "Base RNG seed");
    cmd->add_flag("--no-corrector", f.no_corrector, "Disable the moment corrector");
    cmd->add_option("--trials", f.trials, "Monte Carlo trials");
    cmd->add_option("--report", f.report_file, "Report output JSON")->required();
}

// Everything run_simulation needs, owned in one place so sweep can reuse it.
struct SimulationContext {
    std::vector<CodebookPath> paths;
    std::unique_ptr<ExactOracle> oracle;
    std::size_t target_length = 0;
};

SimulationContext build_context(const SimulateFlags& f) {
    const TargetFixture fx = load_target_fixture(f.target_file);
    const SchedulerSpec spec = parse_scheduler(f.scheduler_text);

    SimulationContext ctx;
    ctx.target_length = fx.target_length;

    std::shared_ptr<SchedulerTable> table; // keeps table alive for the closures
    if (spec.kind == SchedulerSpec::Kind::NumericalKO) {
        if (f.schedule_file.empty())
            throw CLI::ValidationError("--schedule", "numerical-ko needs a schedule file");
        table = std::make_shared<SchedulerTable>(load_schedule(f.schedule_file));
    }

    std::size_t vocab = fx.vocab;
    std::vector<std::vector<double>> joint_q = fx.joint_q;

    if (f.path_kind == "metric") {
        if (f.distances_file.empty())
            throw CLI::ValidationError("--distances", "metric path needs distances");
        DistanceSet ds = load_distances(f.distances_file);
        if (ds.vocab_size() != fx.vocab)
            throw CLI::ValidationError("--target", "fixture vocab does not match distances");
        if (ds.codebook_count() != fx.codebooks)
            throw CLI::ValidationError("--target", "fixture codebooks do not match distances");
        ScheduleFn sched;
        if (spec.kind == SchedulerSpec::Kind::NumericalKO) {
            sched = [table](double t) { return interp_schedule(*table, t); };
        } else if (spec.kind == SchedulerSpec::Kind::Heuristic) {
            sched = schedule_heuristic(spec.a, spec.c, 1e6);
        } else {
            throw CLI::ValidationError("--scheduler",
                                       "metric path needs numerical-ko or heuristic:...");
        }
        for (std::size_t c = 0; c < fx.codebooks; ++c)
            ctx.paths.push_back({PathFamily(MetricInducedFamily{ds[c]}), sched});
    } else {
        const bool mask = f.path_kind == "mask";
        Pmf source = mask ? Pmf::delta(fx.vocab + 1, fx.vocab) : Pmf::uniform(fx.vocab);
        if (mask) {
            // Extend the joint target to the mask-augmented vocabulary: base-s
            // indices become base-(s+1) indices, mask states carry zero mass.
            vocab = fx.vocab + 1;
            for (auto& q : joint_q) {
                std::vector<double> big;
                std::size_t big_states = 1;
                for (std::size_t i = 0; i < fx.target_length; ++i) big_states *= vocab;
                big.assign(big_states, 0.0);
                for (std::size_t idx = 0; idx < q.size(); ++idx) {
                    std::size_t rest = idx, out = 0, place = 1;
                    for (std::size_t i = 0; i < fx.target_length; ++i) {
                        out += (rest % fx.vocab) * place;
                        rest /= fx.vocab;
                        place *= vocab;
                    }
                    big[out] = q[idx];
                }
                q = std::move(big);
            }
        }
        const double p1_closed = mask ? 0.0 : 1.0 / static_cast<double>(fx.vocab);
        ScheduleFn sched;
        switch (spec.kind) {
            case SchedulerSpec::Kind::NumericalKO:
                sched = [table](double t) { return interp_schedule(*table, t); };
                break;
            case SchedulerSpec::Kind::ClosedKO:
                sched = schedule_closed_mixture_ko(p1_closed);
                break;
            case SchedulerSpec::Kind::T2:
                sched = schedule_named(NamedKappa::Power2);
                break;
            case SchedulerSpec::Kind::Sin:
                sched = schedule_named(NamedKappa::Sine);
                break;
            case SchedulerSpec::Kind::Heuristic:
                throw CLI::ValidationError("--scheduler", "heuristic is a metric-path scheduler");
        }
        std::optional<std::size_t> mask_state =
            mask ? std::optional<std::size_t>(fx.vocab) : std::nullopt;
        for (std::size_t c = 0; c < fx.codebooks; ++c)
            ctx.paths.push_back({PathFamily(MixtureFamily{source, mask_state}), sched});
    }

    // Exact posterior oracle over the (possibly mask-augmented) joint target.
    std::vector<CodebookPath>* paths_ptr = &ctx.paths;
    ConditionalFn cond = [paths_ptr](std::size_t c, std::size_t x1, double t) {
        const auto& cb = (*paths_ptr)[c];
        return cb.family.conditional(cb.schedule(t).first, x1);
    };
    ctx.oracle = std::make_unique<ExactOracle>(vocab, fx.target_length, std::move(joint_q),
                                               std::move(cond));
    return ctx;
}

ordered_json echo_config(const SimulateFlags& f, const char* command) {
    ordered_json j;
    j["command"] = command;
    j["schedule"] = f.schedule_file;
    j["distances"] = f.distances_file;
    j["path"] = f.path_kind;
    j["scheduler"] = f.scheduler_text;
    j["target"] = f.target_file;
    j["nfe"] = f.nfe;
    j["temperature"] = f.temperature;
    j["seed"] = f.seed;
    j["corrector"] = !f.no_corrector;
    j["trials"] = f.trials;
    return j;
}

SimulationSetup make_setup(const SimulateFlags& f, SimulationContext& ctx, const char* command) {
    SimulationSetup setup;
    setup.paths = ctx.paths;
    setup.oracle = ctx.oracle.get();
    setup.target_length = ctx.target_length;
    setup.trials = f.trials;
    setup.sampler.steps = f.nfe;
    setup.sampler.temperature = f.temperature;
    setup.sampler.corrector_enabled = !f.no_corrector;
    setup.sampler.seed = f.seed;
    setup.config_echo = echo_config(f, command);
    return setup;
}

int cmd_build_schedule(const std::string& distances_file, const std::string& embeddings_file,
                       bool normalize, double eps, std::size_t grid, std::size_t points,
                       bool per_codebook, const std::string& out) {
    std::optional<DistanceSet> ds;
    if (!distances_file.empty()) {
        ds = load_distances(distances_file);
    } else if (!embeddings_file.empty()) {
        ds = distances_from_embeddings(load_embeddings(embeddings_file), normalize);
    } else {
        std::cerr << "build-schedule: need --distances or --embeddings\n";
        return 1;
    }
    const double beta_max = find_beta_max(*ds, eps);
    if (per_codebook) {
        const auto tables = build_ko_schedule_per_codebook(*ds, grid, points, beta_max, eps);
        const std::filesystem::path base(out);
        for (std::size_t c = 0; c < tables.size(); ++c) {
            std::filesystem::path p = base;
            p.replace_extension(".c" + std::to_string(c) + base.extension().string());
            save_schedule(p, tables[c]);
            std::cout << "wrote " << p.string() << " (L = " << tables[c].total_length << ")\n";
        }
    } else {
        const SchedulerTable tbl = build_ko_schedule_metric(*ds, grid, points, beta_max, eps);
        save_schedule(out, tbl);
        std::cout << "wrote " << out << " (beta_max = " << beta_max
                  << ", L = " << tbl.total_length << ")\n";
    }
    return 0;
}

int cmd_inspect(const std::string& in, bool speed_check, std::size_t samples,
                const std::string& distances_file) {
    const SchedulerTable tbl = load_schedule(in);
    ordered_json j;
    j["kind"] = tbl.kind == SchedulerTable::Kind::MetricKO ? "metric-ko" : "generic-ko";
    j["points"] = tbl.points();
    j["paramMax"] = tbl.param_max;
    j["totalLength"] = tbl.total_length;
    j["meta"] = {{"gridSize", tbl.meta.grid_size},
                 {"tolerance", tbl.meta.tolerance},
                 {"averaging", tbl.meta.averaging}};
    if (speed_check) {
        if (distances_file.empty()) {
            std::cerr << "inspect-schedule: --speed-check needs --distances\n";
            return 1;
        }
        const DistanceSet ds = load_distances(distances_file);
        const SpeedProfile prof = speed_diagnostic(tbl, ds, samples);
        j["speed"] = {{"samples", samples},
                      {"mean", prof.mean},
                      {"relativeStd", prof.relative_std}};
    }
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_simulate(const SimulateFlags& f) {
    SimulationContext ctx = build_context(f);
    const SimulationSetup setup = make_setup(f, ctx, "simulate");
    const SimulationReport report = run_simulation(setup);
    const ordered_json j = report_to_json(report);
    std::string why;
    if (!report_schema_valid(j, &why)) {
        std::cerr << "simulate: report failed schema check: " << why << "\n";
        return 1;
    }
    atomic_write(f.report_file, j.dump(2) + "\n");
    std::cout << "tvToTarget " << report.tv_to_target << "\nklToTarget " << report.kl_to_target
              << "\ncorrectorUsedRate " << report.corrector_used_rate << "\n";
    return 0;
}

int cmd_sweep(const SimulateFlags& f, const std::string& nfe_list, const std::string& csv_file) {
    std::vector<std::size_t> ks;
    std::size_t pos = 0;
    while (pos < nfe_list.size()) {
        std::size_t next = nfe_list.find(',', pos);
        if (next == std::string::npos) next = nfe_list.size();
        ks.push_back(static_cast<std::size_t>(std::stoul(nfe_list.substr(pos, next - pos))));
        pos = next + 1;
    }
    SimulationContext ctx = build_context(f);
    SimulateFlags base = f;
    std::vector<SimulationReport> reports;
    for (std::size_t k : ks) {
        base.nfe = k;
        reports.push_back(run_simulation(make_setup(base, ctx, "sweep")));
        std::cout << "K=" << k << " tvToTarget " << reports.back().tv_to_target << "\n";
    }
    ordered_json arr = ordered_json::array();
    for (const auto& r : reports) {
        const ordered_json j = report_to_json(r);
        std::string why;
        if (!report_schema_valid(j, &why)) {
            std::cerr << "sweep: report failed schema check: " << why << "\n";
            return 1;
        }
        arr.push_back(j);
    }
    atomic_write(f.report_file, arr.dump(2) + "\n");
    if (!csv_file.empty()) atomic_write(csv_file, reports_to_csv(reports));
    return 0;
}

int cmd_corrupt(const std::string& distances_file, const std::string& schedule_file, double t,
                const std::string& tokens_file, std::uint64_t seed, double ratio,
                const std::string& out) {
    const DistanceSet ds = load_distances(distances_file);
    const SchedulerTable tbl = load_schedule(schedule_file);
    const TokenGrid grid = load_token_grid(tokens_file);
    if (grid.codebooks != ds.codebook_count()) {
        std::cerr << "corrupt: token grid codebooks do not match distances\n";
        return 1;
    }
    const PredictionMask mask = build_prediction_mask(grid.positions, ratio);
    TokenGrid corrupted = grid;
    corrupted.tokens = sample_corruption(grid.tokens, grid.positions, grid.codebooks, t, tbl, ds,
                                         mask, seed);
    if (out.empty()) {
        ordered_json j;
        j["N"] = corrupted.positions;
        j["C"] = corrupted.codebooks;
        j["tokens"] = corrupted.tokens;
        std::cout << j.dump(2) << "\n";
    } else {
        save_token_grid(out, corrupted);
    }
    return 0;
}

int cmd_verify() {
    int failures = 0;
    const auto check = [&](const std::string& name, bool ok) {
        std::cout << (ok ? "PASS " : "FAIL ") << name << "\n";
        if (!ok) ++failures;
    };

    // Spot values of the closed-form and named schedulers.
    {
        const auto [k1, k1d] = closed_form_mixture_ko(0.25, 0.5);
        (void)k1d;
        const auto [k2, k2d] = closed_form_mixture_ko(0.0, 0.5);
        (void)k2d;
        const auto [k3, k3d] = named_kappa(NamedKappa::Power2, 0.5);
        (void)k3d;
        const auto [k4, k4d] = named_kappa(NamedKappa::Sine, 0.5);
        (void)k4d;
        check("scheduler spot values",
              std::abs(k1 - 2.0 / 3.0) <= 1e-12 && std::abs(k2 - 0.5) <= 1e-12 &&
                  std::abs(k3 - 0.25) <= 1e-12 &&
                  std::abs(k4 - std::sqrt(0.5)) <= 1e-12);
    }

    // Endpoint concentration threshold on the binary fixture.
    {
        const DistanceSet ds({DistanceMatrix(2, {0.0, 1.0, 1.0, 0.0})});
        const double bmax = find_beta_max(ds, 1e-8);
        const double expected = std::log((1.0 - 1e-8) / 1e-8);
        check("binary beta_max", std::abs(bmax - expected) <= 1e-4);
    }

    // Generic arc-length inversion recovers the closed-form mixture scheduler.
    {
        const double p1 = 0.25, kmax = 0.99;
        const auto fisher = [p1](double k) { return fisher_information_mixture(p1, k); };
        const SchedulerTable tbl = build_ko_schedule_generic(fisher, kmax, 4096, 257);
        const auto ell = [p1](double k) {
            return 2.0 * std::asin(std::sqrt(p1 + (1.0 - p1) * k)) - 2.0 * std::asin(std::sqrt(p1));
        };
        const double L = ell(kmax);
        double sup = 0.0;
        for (std::size_t j = 0; j < tbl.points(); ++j) {
            const double target = tbl.times[j] * L;
            const double sn = std::sin(0.5 * target + std::asin(std::sqrt(p1)));
            const double kappa = (sn * sn - p1) / (1.0 - p1);
            sup = std::max(sup, std::abs(tbl.values[j] - kappa));
        }
        check("mixture closed-form recovery", sup <= 1e-3);
    }

    // Generic corrector with the indicator moment equals the exact mixture rho.
    {
        RngStream rng(7, 1);
        bool ok = true;
        for (int i = 0; i < 1000 && ok; ++i) {
            const double kt = 0.98 * rng.next_double();
            const double kth = kt + (1.0 - kt) * rng.next_double();
            // Indicator moment phi = 1[x == x1_hat]: phi(z) = 0 off the target,
            // phi_bar = 1 under the delta destination, m = kappa_{t+h}... of the
            // conditional path restarted at z, i.e. (kth - kt)/(1 - kt).
            const double m = (kth - kt) / (1.0 - kt);
            const auto corr = corrected_jump_prob_generic({0.0, 1.0, m}, 0.5);
            ok = corr.used_correction &&
                 std::abs(corr.rho - mixture_exact_jump_prob(kt, kth)) <= 1e-14;
        }
        check("mixture corrector identity", ok);
    }

    // Constant Fisher-Rao speed of the metric KO table on a random fixture.
    {
        RngStream rng(11, 2);
        const std::size_t s = 16;
        std::vector<double> d(s * s, 0.0);
        for (std::size_t x = 0; x < s; ++x)
            for (std::size_t y = 0; y < s; ++y)
                if (x != y) d[x * s + y] = 0.1 + rng.next_double();
        const DistanceSet ds({DistanceMatrix(s, std::move(d))});
        const double bmax = find_beta_max(ds, 1e-8);
        const SchedulerTable tbl = build_ko_schedule_metric(ds, 4096, 1024, bmax);
        const SpeedProfile prof = speed_diagnostic(tbl, ds, 256);
        check("constant speed", prof.relative_std <= 0.05);
    }

    // Kolmogorov forward consistency of the KO velocity on the mixture path.
    {
        const PathFamily fam(MixtureFamily{Pmf::uniform(4), std::nullopt});
        const ScheduleFn sched = schedule_named(NamedKappa::SinSq);
        bool ok = true;
        for (int k = 1; k <= 8 && ok; ++k) {
            const double t = static_cast<double>(k) / 10.0;
            const auto [kap, kap_dot] = sched(t);
            const Pmf p = fam.conditional(kap, 1);
            const auto pd = fam.conditional_dot(kap, kap_dot, 1);
            for (std::size_t x = 0; x < 4 && ok; ++x) {
                double flux = 0.0;
                for (std::size_t z = 0; z < 4; ++z)
                    flux += ko_velocity_general(p, pd, z)[x] * p[z];
                ok = std::abs(flux - pd[x]) <= 1e-5;
            }
        }
        check("kolmogorov consistency", ok);
    }

    // Round-trip serialization of a schedule table.
    {
        const SchedulerTable tbl = build_ko_schedule_generic(
            [](double k) { return fisher_information_mixture(0.5, k); }, 0.9, 64, 17);
        const SchedulerTable back = schedule_from_json(schedule_to_json(tbl));
        bool ok = back.values == tbl.values && back.derivatives == tbl.derivatives &&
                  back.times == tbl.times && back.param_max == tbl.param_max &&
                  back.total_length == tbl.total_length;
        check("schedule round trip", ok);
    }

    std::cout << (failures == 0 ? "verify: all checks passed\n"
                                : "verify: " + std::to_string(failures) + " check(s) failed\n");
    return failures == 0 ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"discrete flow matching schedule and sampling toolkit"};
    app.require_subcommand(1);

    // build-schedule
    std::string bs_distances, bs_embeddings, bs_out = "schedule.json";
    bool bs_normalize = false, bs_per_codebook = false;
    double bs_eps = 1e-8;
    std::size_t bs_grid = 4096, bs_points = 1024;
    auto* bs = app.add_subcommand("build-schedule", "Build a kinetic-optimal schedule table");
    bs->add_option("--distances", bs_distances, "Distance container (binary)");
    bs->add_option("--embeddings", bs_embeddings, "Embedding container (binary)");
    bs->add_flag("--normalize", bs_normalize, "L2-normalize embeddings first");
    bs->add_option("--eps", bs_eps, "Numerical tolerance");
    bs->add_option("--grid", bs_grid, "Fisher-information grid size I");
    bs->add_option("--points", bs_points, "Output table points T");
    bs->add_flag("--per-codebook", bs_per_codebook, "One table per codebook");
    bs->add_option("--out", bs_out, "Output schedule JSON");

    // inspect-schedule
    std::string is_in, is_distances;
    bool is_speed = false;
    std::size_t is_samples = 512;
    auto* is = app.add_subcommand("inspect-schedule", "Summarize a schedule table");
    is->add_option("--in", is_in, "Schedule JSON")->required();
    is->add_flag("--speed-check", is_speed, "Run the constant-speed diagnostic");
    is->add_option("--samples", is_samples, "Diagnostic sample count");
    is->add_option("--distances", is_distances, "Distance container for the diagnostic");

    // simulate
    SimulateFlags sim;
    auto* sc = app.add_subcommand("simulate", "Monte Carlo sampling against a joint fixture");
    add_simulate_flags(sc, sim, true);

    // sweep
    SimulateFlags sw;
    std::string sw_nfe = "4,8,16,32,64", sw_csv;
    auto* sw_cmd = app.add_subcommand("sweep", "Simulate across a list of step counts");
    add_simulate_flags(sw_cmd, sw, false);
    sw_cmd->add_option("--nfe", sw_nfe, "Comma-separated K list");
    sw_cmd->add_option("--csv", sw_csv, "Optional CSV export path");

    // corrupt
    std::string co_distances, co_schedule, co_tokens, co_out;
    double co_t = 0.5, co_ratio = 0.0;
    std::uint64_t co_seed = 0;
    auto* co = app.add_subcommand("corrupt", "Forward-corrupt a clean token grid");
    co->add_option("--distances", co_distances, "Distance container")->required();
    co->add_option("--schedule", co_schedule, "Schedule JSON")->required();
    co->add_option("--t", co_t, "Corruption time in [0,1]");
    co->add_option("--tokens", co_tokens, "Clean token grid JSON")->required();
    co->add_option("--seed", co_seed, "RNG seed");
    co->add_option("--ratio", co_ratio, "Prompt ratio r in [0, 0.3]");
    co->add_option("--out", co_out, "Output token grid JSON (stdout if omitted)");

    // verify
    auto* ve = app.add_subcommand("verify", "Run the oracle/consistency suite");

    CLI11_PARSE(app, argc, argv);

    try {
        if (bs->parsed())
            return cmd_build_schedule(bs_distances, bs_embeddings, bs_normalize, bs_eps, bs_grid,
                                      bs_points, bs_per_codebook, bs_out);
        if (is->parsed()) return cmd_inspect(is_in, is_speed, is_samples, is_distances);
        if (sc->parsed()) return cmd_simulate(sim);
        if (sw_cmd->parsed()) return cmd_sweep(sw, sw_nfe, sw_csv);
        if (co->parsed())
            return cmd_corrupt(co_distances, co_schedule, co_t, co_tokens, co_seed, co_ratio,
                               co_out);
        if (ve->parsed()) return cmd_verify();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
