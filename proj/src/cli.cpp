#include "qsync/cli.hpp"

#include <cstdlib>
#include <fstream>

#include "CLI11.hpp"
#include "qsync/allocator.hpp"
#include "qsync/replayer.hpp"
#include "qsync/rng.hpp"

namespace qsync {

namespace {

void write_output(const nlohmann::json& j, const std::string& path, std::ostream& out) {
    if (path.empty()) {
        out << j.dump(2) << "\n";
        return;
    }
    std::ofstream f(path);
    if (!f) fail(ErrorKind::Io, "cannot write output file \"" + path + "\"");
    f << j.dump(2) << "\n";
    if (!f) fail(ErrorKind::Io, "failed writing output file \"" + path + "\"");
}

nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot open \"" + path + "\"");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorKind::Validation, "malformed JSON in \"" + path + "\": " + e.what());
    }
    return j;
}

PrecisionPlan read_plan_file(const std::string& path) {
    const nlohmann::json j = read_json_file(path);
    // Accept both the replayer's native shape and cmd_plan's report.
    if (j.contains("per_device")) return plan_from_json(j);
    if (j.contains("devices")) {
        PrecisionPlan plan;
        for (const auto& [device, jm] : j.at("devices").items())
            for (const auto& [op, p] : jm.items())
                plan.per_device[device][op] = parse_precision(p.get<std::string>());
        return plan;
    }
    fail(ErrorKind::Validation,
         "plan file \"" + path + "\" has neither per_device nor devices");
}

LossSpec loss_of(const Config& config) { return {config.loss, config.loss_n}; }

/// Monte-Carlo cross-check of the fixed-point variance bound: quantize a
/// uniform batch with stochastic rounding and compare the summed squared
/// error against q^2*D/6.
nlohmann::json run_sr_check(std::uint64_t seed) {
    const double q = 0.01;
    const int d = 10000;
    std::mt19937_64 rng(seed);
    std::vector<double> values(d);
    for (double& v : values) v = uniform01(rng);
    const StochasticRoundResult r = stochastic_round(values, q, 0.0, seed + 1);
    double sum_sq = 0;
    for (int i = 0; i < d; ++i) {
        const double err = r.dequantized[i] - values[i];
        sum_sq += err * err;
    }
    const double predicted = fixed_point_tensor_variance(q, d);
    return {{"empirical_variance", sum_sq},
            {"predicted_variance", predicted},
            {"ratio", sum_sq / predicted},
            {"samples", d},
            {"seed", seed}};
}

} // namespace

int cmd_indicate(const Config& config, std::ostream& out) {
    const ProfileBundle bundle = load_profile(config.bundle_path);
    const TensorStats stats = bundle.reduced_stats(config.window);
    const PerturbationTable table = score_all(bundle.graph, stats, loss_of(config));
    nlohmann::json j = table_to_json(table);
    if (config.sr_check) j = {{"scores", std::move(j)}, {"sr_check", run_sr_check(config.seed)}};
    write_output(j, config.out_path, out);
    return 0;
}

int cmd_replay(const Config& config, std::ostream& out) {
    const ProfileBundle bundle = load_profile(config.bundle_path);
    const PrecisionPlan plan = read_plan_file(config.plan_path);
    const GlobalBuild build = build_global_dfg(bundle, plan);
    const Timeline timeline = simulate(build.global);

    nlohmann::json per_device = nlohmann::json::object();
    for (const auto& [device, dag] : build.dags) {
        std::int64_t compute = 0;
        for (const TimelineEvent& e : timeline.compute.at(device)) compute += e.end_ns - e.start_ns;
        std::int64_t comm_wait = 0;
        const auto& ready = timeline.slot_ready.at(device);
        for (std::size_t n = 0; n < ready.size(); ++n)
            comm_wait += timeline.comm_start[n] - ready[n];
        per_device[device] = {{"comm_wait_ns", comm_wait},
                              {"compute_ns", compute},
                              {"memory_bytes", estimate_memory(dag, bundle.op_costs)}};
    }
    const nlohmann::json report = {{"makespan_ns", timeline.makespan_ns},
                                   {"per_device", std::move(per_device)},
                                   {"throughput_it_s", throughput(timeline)}};
    if (!config.trace_out.empty()) export_trace(timeline, config.trace_out);
    write_output(report, config.out_path, out);
    return 0;
}

int cmd_plan(const Config& config, std::ostream& out) {
    const ProfileBundle bundle = load_profile(config.bundle_path);
    const TensorStats stats =
        bundle.tensor_stats.empty() ? TensorStats{} : bundle.reduced_stats(config.window);

    AllocProblem problem;
    problem.bundle = &bundle;
    problem.loss = loss_of(config);
    problem.scores = score_all(bundle.graph, stats, problem.loss);
    problem.mem_caps = config.mem_caps;
    problem.t_min = config.t_min;
    problem.t_min_uniform_lowest = config.t_min_uniform_lowest;
    problem.b_max = config.b_max;

    const SolveResult result = solve(problem);
    write_output(solve_report(result), config.out_path, out);
    if (!config.trace_out.empty()) export_trace(result.timeline, config.trace_out);
    out << "omega " << result.omega_before << "->" << result.omega_after << " throughput "
        << result.throughput_it_s << " it/s\n";
    return 0;
}

int cmd_fit_cast(const Config& config, std::ostream& out) {
    const nlohmann::json j = read_json_file(config.samples_path);
    if (!j.is_array()) fail(ErrorKind::Validation, "cast samples file must be a JSON array");
    std::vector<std::pair<std::int64_t, std::int64_t>> samples;
    for (const auto& e : j) {
        if (e.is_array() && e.size() == 2)
            samples.emplace_back(e.at(0).get<std::int64_t>(), e.at(1).get<std::int64_t>());
        else if (e.is_object() && e.contains("numel") && e.contains("measured_ns"))
            samples.emplace_back(e.at("numel").get<std::int64_t>(),
                                 e.at("measured_ns").get<std::int64_t>());
        else
            fail(ErrorKind::Validation,
                 "each sample must be [numel, measured_ns] or {numel, measured_ns}");
    }
    const LinearModel m = fit_cast_model(samples);
    write_output({{"a", m.a}, {"b", m.b}, {"r_squared", m.r_squared}}, config.out_path, out);
    return 0;
}

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Precision planner and training-timeline replayer for hybrid GPU clusters"};
    app.require_subcommand(1);
    Config config;
    std::string loss_name = "generic_negone";
    std::vector<std::string> cap_args;

    auto add_bundle = [&](CLI::App* cmd) {
        cmd->add_option("--bundle", config.bundle_path, "Profile bundle JSON file")->required();
    };
    auto add_loss = [&](CLI::App* cmd) {
        cmd->add_option("--loss", loss_name, "Loss kind: mse_mean, ce_mean or generic_negone")
            ->check(CLI::IsMember({"mse_mean", "ce_mean", "generic_negone"}));
        cmd->add_option("--loss-n", config.loss_n, "Batch denominator of the loss")
            ->check(CLI::PositiveNumber);
        cmd->add_option("--window", config.window, "Statistics averaging window")
            ->check(CLI::PositiveNumber);
    };

    CLI::App* indicate = app.add_subcommand("indicate", "Score operator precisions");
    add_bundle(indicate);
    add_loss(indicate);
    indicate->add_option("--out", config.out_path, "Write the score table to this file");
    indicate->add_flag("--sr-check", config.sr_check,
                       "Cross-check the variance bound with stochastic rounding");
    indicate->add_option("--seed", config.seed, "Seed for the stochastic cross-check");

    CLI::App* replay = app.add_subcommand("replay", "Simulate a training iteration");
    add_bundle(replay);
    replay->add_option("--plan", config.plan_path, "Precision plan JSON file")->required();
    replay->add_option("--trace-out", config.trace_out, "Write a Chrome trace here");
    replay->add_option("--out", config.out_path, "Write the report to this file");

    CLI::App* plan = app.add_subcommand("plan", "Solve for a precision plan");
    add_bundle(plan);
    add_loss(plan);
    plan->add_option("--mem-cap", cap_args,
                     "Override a device memory cap as device=bytes (repeatable)");
    plan->add_option("--t-min", config.t_min, "Explicit throughput floor in it/s");
    plan->add_flag("--t-min-uniform-lowest", config.t_min_uniform_lowest,
                   "Derive the floor from the uniform lowest-precision plan");
    plan->add_option("--b-max", config.b_max, "Per-subgraph enumeration cap")
        ->check(CLI::Range(1, 12));
    plan->add_option("--out", config.out_path, "Write the plan JSON to this file");
    plan->add_option("--trace-out", config.trace_out, "Write a Chrome trace of the solved plan");

    CLI::App* fit = app.add_subcommand("fit-cast", "Fit a casting-cost linear model");
    fit->add_option("--samples", config.samples_path, "JSON array of (numel, measured_ns) samples")
        ->required();
    fit->add_option("--out", config.out_path, "Write the fit to this file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << e.what() << "\n";
        return 2;
    }

    try {
        config.loss = parse_loss_kind(loss_name);
        for (const std::string& arg : cap_args) {
            const std::size_t eq = arg.find('=');
            if (eq == std::string::npos || eq == 0 || eq + 1 == arg.size())
                fail(ErrorKind::Validation, "--mem-cap expects device=bytes, got \"" + arg + "\"");
            try {
                config.mem_caps[arg.substr(0, eq)] = std::stoll(arg.substr(eq + 1));
            } catch (const std::exception&) {
                fail(ErrorKind::Validation, "--mem-cap expects device=bytes, got \"" + arg + "\"");
            }
        }
        if (const char* env_seed = std::getenv("QSYNC_SEED")) {
            try {
                config.seed = std::stoull(env_seed);
            } catch (const std::exception&) {
                fail(ErrorKind::Validation, "QSYNC_SEED must be an unsigned integer");
            }
        }

        if (indicate->parsed()) return cmd_indicate(config, out);
        if (replay->parsed()) return cmd_replay(config, out);
        if (plan->parsed()) return cmd_plan(config, out);
        return cmd_fit_cast(config, out);
    } catch (const Error& e) {
        err << e.what() << "\n";
        switch (e.kind()) {
            case ErrorKind::Infeasible: return 3;
            case ErrorKind::Internal: return 4;
            default: return 2;
        }
    } catch (const std::exception& e) {
        err << "internal: " << e.what() << "\n";
        return 4;
    }
}

} // namespace qsync
