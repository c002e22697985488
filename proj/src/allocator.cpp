#include "qsync/allocator.hpp"

#include <algorithm>
#include <functional>
#include <queue>

#include "qsync/cost_mapper.hpp"

namespace qsync {

namespace {

Precision lowest_supported(const OperatorNode& n) {
    Precision lo = Precision::Fp32;
    for (Precision p : n.supported_precisions)
        if (bit_width(p) < bit_width(lo)) lo = p;
    return lo;
}

std::vector<Precision> ascending_supported(const OperatorNode& n) {
    std::vector<Precision> out = n.supported_precisions;
    std::sort(out.begin(), out.end(),
              [](Precision a, Precision b) { return bit_width(a) < bit_width(b); });
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

std::map<std::string, Precision> all_fp32(const PrecisionDag& dag) {
    std::map<std::string, Precision> m;
    for (const auto& [id, n] : dag.nodes()) m[id] = Precision::Fp32;
    return m;
}

std::map<std::string, std::vector<std::string>> group_by_subgraph(const PrecisionDag& dag) {
    std::map<std::string, std::vector<std::string>> groups;
    for (const auto& [id, n] : dag.nodes()) groups[n.subgraph_id].push_back(id);
    return groups;
}

/// Visits every combination of the given per-operator precision choices in
/// lexicographic order (first operator most significant, lower bits first).
void enumerate_combos(const std::vector<std::pair<std::string, std::vector<Precision>>>& axes,
                      const std::function<void(const std::map<std::string, Precision>&)>& visit) {
    std::vector<std::size_t> index(axes.size(), 0);
    while (true) {
        std::map<std::string, Precision> combo;
        for (std::size_t i = 0; i < axes.size(); ++i)
            combo[axes[i].first] = axes[i].second[index[i]];
        visit(combo);
        std::size_t i = axes.size();
        while (i > 0) {
            --i;
            if (++index[i] < axes[i].second.size()) break;
            index[i] = 0;
            if (i == 0) return;
        }
        if (axes.empty()) return;
    }
}

} // namespace

std::map<std::string, std::int64_t> partition_budget(const PrecisionDag& dag, std::int64_t m_max,
                                                     const OpCostProfile& costs) {
    if (m_max <= 0) fail(ErrorKind::Infeasible, "memory cap must be positive");
    const auto groups = group_by_subgraph(dag);

    std::map<std::string, std::int64_t> fp32_mem, lowest_mem;
    std::int64_t fp32_total = 0, capacity_total = 0;
    for (const auto& [sub, ops] : groups) {
        std::int64_t hi = 0, lo = 0;
        for (const std::string& op : ops) {
            hi += costs.at(op, Precision::Fp32).memory_bytes;
            lo += costs.at(op, lowest_supported(dag.node(op))).memory_bytes;
        }
        fp32_mem[sub] = hi;
        lowest_mem[sub] = lo;
        fp32_total += hi;
        capacity_total += std::max<std::int64_t>(0, hi - lo);
    }

    const std::int64_t reduction_needed = std::max<std::int64_t>(0, fp32_total - m_max);
    if (reduction_needed > capacity_total)
        fail(ErrorKind::Infeasible,
             "memory cap " + std::to_string(m_max) + " bytes is below the lowest-precision "
             "footprint (" + std::to_string(fp32_total - capacity_total) + " bytes)");

    std::map<std::string, std::int64_t> budgets;
    for (const auto& [sub, hi] : fp32_mem) {
        std::int64_t reduction = 0;
        if (reduction_needed > 0) {
            const std::int64_t capacity = std::max<std::int64_t>(0, hi - lowest_mem.at(sub));
            const unsigned __int128 num =
                static_cast<unsigned __int128>(reduction_needed) *
                static_cast<unsigned __int128>(capacity);
            reduction = static_cast<std::int64_t>(
                (num + static_cast<unsigned __int128>(capacity_total) - 1) /
                static_cast<unsigned __int128>(capacity_total));
        }
        budgets[sub] = std::max(lowest_mem.at(sub), hi - reduction);
    }
    return budgets;
}

std::map<std::string, Precision> initial_plan(const PrecisionDag& dag,
                                              const std::map<std::string, std::int64_t>& budgets,
                                              const OpCostProfile& costs,
                                              const CastCostModel& cast, int b_max) {
    if (b_max < 1) fail(ErrorKind::Domain, "enumeration cap must be at least 1");
    const auto groups = group_by_subgraph(dag);
    for (const auto& [sub, ops] : groups)
        if (!budgets.count(sub))
            fail(ErrorKind::Reference, "no memory budget for subgraph \"" + sub + "\"");

    // Shallowest subgraph first, then id, so upstream precisions are settled
    // before the casts they induce downstream are priced.
    std::vector<std::pair<int, std::string>> order;
    for (const auto& [sub, ops] : groups) {
        int min_depth = dag.model_depth();
        for (const std::string& op : ops) min_depth = std::min(min_depth, dag.node(op).depth);
        order.emplace_back(min_depth, sub);
    }
    std::sort(order.begin(), order.end());

    std::map<std::string, Precision> current = all_fp32(dag);
    for (const auto& [min_depth, sub] : order) {
        std::vector<std::pair<std::string, std::vector<Precision>>> axes;
        std::vector<std::string> sorted_ops = groups.at(sub);
        std::sort(sorted_ops.begin(), sorted_ops.end());
        for (const std::string& op : sorted_ops)
            if (dag.node(op).kind == OperatorKind::Adjustable)
                axes.emplace_back(op, ascending_supported(dag.node(op)));
        if (static_cast<int>(axes.size()) > b_max)
            fail(ErrorKind::EnumerationLimit,
                 "subgraph \"" + sub + "\" has " + std::to_string(axes.size()) +
                     " adjustable operators; the enumeration cap is " + std::to_string(b_max));

        bool found = false;
        std::int64_t best_time = 0;
        std::map<std::string, Precision> best_resolved;
        enumerate_combos(axes, [&](const std::map<std::string, Precision>& combo) {
            std::map<std::string, Precision> cand = current;
            for (const auto& [op, p] : combo) cand[op] = p;
            const PrecisionDag with = dag.with_assignment(cand);
            const std::map<std::string, Precision> resolved = resolve_dependents(with);

            std::int64_t mem = 0;
            for (const std::string& op : groups.at(sub))
                mem += costs.at(op, resolved.at(op)).memory_bytes;
            if (mem > budgets.at(sub)) return;

            const PrecisionDag resolved_dag = dag.with_assignment(resolved);
            std::int64_t time = 0;
            for (const auto& [op, node] : dag.nodes())
                time += op_breakdown(resolved_dag, resolved, op, costs, cast).total();
            if (!found || time < best_time) {
                found = true;
                best_time = time;
                best_resolved = resolved;
            }
        });
        if (!found)
            fail(ErrorKind::Infeasible, "no precision combination fits the " +
                                            std::to_string(budgets.at(sub)) +
                                            "-byte budget of subgraph \"" + sub + "\"");
        current = best_resolved;
    }
    return current;
}

namespace {

std::int64_t cap_for(const AllocProblem& problem, const std::string& device) {
    auto it = problem.mem_caps.find(device);
    if (it != problem.mem_caps.end()) return it->second;
    return problem.bundle->device(device).mem_capacity_bytes;
}

double uniform_lowest_throughput(const ProfileBundle& bundle) {
    PrecisionPlan plan;
    for (const DeviceSpec& d : bundle.devices) {
        std::map<std::string, Precision> assignment = all_fp32(bundle.graph);
        if (d.is_inference)
            for (const auto& [op, node] : bundle.graph.nodes())
                if (node.kind == OperatorKind::Adjustable)
                    assignment[op] = lowest_supported(node);
        plan.per_device[d.id] = std::move(assignment);
    }
    return throughput(simulate(build_global_dfg(bundle, plan).global));
}

double plan_omega(const ProfileBundle& bundle, const PerturbationTable& scores,
                  const PrecisionPlan& plan) {
    double total = 0;
    for (const DeviceSpec& d : bundle.devices) {
        if (!d.is_inference) continue;
        auto it = plan.per_device.find(d.id);
        if (it == plan.per_device.end()) continue;
        for (const auto& [op, p] : it->second)
            if (bundle.graph.node(op).kind == OperatorKind::Adjustable)
                total += scores.omega_of(op, p);
    }
    return total;
}

struct HeapEntry {
    double delta = 0.0;
    std::string op;
    Precision from = Precision::Fp32;
};

struct HeapOrder {
    bool operator()(const HeapEntry& a, const HeapEntry& b) const {
        if (a.delta != b.delta) return a.delta < b.delta;
        return a.op > b.op;  // max-heap pops the smaller id on ties
    }
};

using Heap = std::priority_queue<HeapEntry, std::vector<HeapEntry>, HeapOrder>;

} // namespace

RecoverResult recover(const AllocProblem& problem, const PrecisionPlan& initial) {
    if (!problem.bundle) fail(ErrorKind::Internal, "allocation problem has no profile bundle");
    const ProfileBundle& bundle = *problem.bundle;

    GlobalBuild build = build_global_dfg(bundle, initial);
    const double initial_throughput = throughput(simulate(build.global));

    double t_min = initial_throughput;
    if (problem.t_min)
        t_min = *problem.t_min;
    else if (problem.t_min_uniform_lowest)
        t_min = uniform_lowest_throughput(bundle);

    std::vector<std::string> inference = bundle.inference_device_ids();
    for (const std::string& device : inference) {
        const std::int64_t mem = estimate_memory(build.dags.at(device), bundle.op_costs);
        if (mem > cap_for(problem, device))
            fail(ErrorKind::Infeasible, "initial plan uses " + std::to_string(mem) +
                                            " bytes on device " + device + ", above its cap of " +
                                            std::to_string(cap_for(problem, device)) + " bytes");
    }

    auto push_entry = [&](Heap& heap, const std::string& op, Precision from) {
        const std::optional<Precision> next = next_higher_precision(from);
        if (!next || !bundle.graph.node(op).supports(*next)) return;
        heap.push({problem.scores.omega_of(op, from) - problem.scores.omega_of(op, *next), op,
                   from});
    };

    std::map<std::string, Heap> heaps;
    for (const std::string& device : inference) {
        Heap& heap = heaps[device];
        for (const auto& [op, node] : bundle.graph.nodes())
            if (node.kind == OperatorKind::Adjustable)
                push_entry(heap, op, build.dags.at(device).precision_of(op));
    }

    RecoverResult result;
    result.t_min = t_min;
    bool any_left = !inference.empty();
    while (any_left) {
        any_left = false;
        for (const std::string& device : inference) {
            Heap& heap = heaps[device];
            if (heap.empty()) continue;
            any_left = true;
            const HeapEntry entry = heap.top();
            heap.pop();
            const Precision next = *next_higher_precision(entry.from);

            AuditStep step{device, entry.op, entry.from, next, entry.delta, false, ""};
            if (entry.delta <= 0) {
                step.reason = "no-objective-gain";
                result.audit.push_back(std::move(step));
                continue;
            }
            MappingResult mapped =
                cost_mapping(build.dags.at(device), build.global.locals.at(device), entry.op,
                             next, bundle.op_costs, bundle.cast_model);
            const std::int64_t mem = estimate_memory(mapped.dag, bundle.op_costs);
            if (mem > cap_for(problem, device)) {
                step.reason = "memory";
                result.audit.push_back(std::move(step));
                continue;
            }
            GlobalDfg candidate = build.global;
            candidate.locals[device] = mapped.dfg;
            const double tp = throughput(simulate(candidate));
            if (tp < t_min) {
                step.reason = "throughput";
                result.audit.push_back(std::move(step));
                continue;
            }
            step.accepted = true;
            step.reason = "ok";
            result.audit.push_back(std::move(step));
            build.dags.at(device) = std::move(mapped.dag);
            build.global = std::move(candidate);
            push_entry(heap, entry.op, next);
        }
    }

    for (const DeviceSpec& d : bundle.devices)
        result.plan.per_device[d.id] = build.dags.at(d.id).assignment();
    return result;
}

SolveResult solve(const AllocProblem& problem) {
    if (!problem.bundle) fail(ErrorKind::Internal, "allocation problem has no profile bundle");
    const ProfileBundle& bundle = *problem.bundle;

    PrecisionPlan initial;
    for (const DeviceSpec& d : bundle.devices) {
        if (!d.is_inference) {
            initial.per_device[d.id] = all_fp32(bundle.graph);
            continue;
        }
        const auto budgets =
            partition_budget(bundle.graph, cap_for(problem, d.id), bundle.op_costs);
        initial.per_device[d.id] =
            initial_plan(bundle.graph, budgets, bundle.op_costs, bundle.cast_model,
                         problem.b_max);
    }

    SolveResult r;
    r.omega_before = plan_omega(bundle, problem.scores, initial);

    RecoverResult rec = recover(problem, initial);
    r.plan = std::move(rec.plan);
    r.audit = std::move(rec.audit);
    r.t_min = rec.t_min;
    r.omega_after = plan_omega(bundle, problem.scores, r.plan);

    const GlobalBuild final_build = build_global_dfg(bundle, r.plan);
    r.timeline = simulate(final_build.global);
    r.throughput_it_s = throughput(r.timeline);
    for (const DeviceSpec& d : bundle.devices) {
        const std::int64_t mem = estimate_memory(final_build.dags.at(d.id), bundle.op_costs);
        r.per_device_memory[d.id] = mem;
        if (d.is_inference && mem > cap_for(problem, d.id)) r.memory_ok = false;
    }
    r.throughput_ok = r.throughput_it_s >= r.t_min;

    // Exhaustive reference when the joint space is small enough to sweep.
    unsigned long long combos = 1;
    std::vector<std::pair<std::string, std::string>> axis_ids;  // (device, op)
    for (const DeviceSpec& d : bundle.devices) {
        if (!d.is_inference) continue;
        for (const auto& [op, node] : bundle.graph.nodes())
            if (node.kind == OperatorKind::Adjustable) {
                combos *= ascending_supported(node).size();
                axis_ids.emplace_back(d.id, op);
                if (combos > 729) break;
            }
        if (combos > 729) break;
    }
    if (combos <= 729 && !axis_ids.empty()) {
        std::vector<std::vector<Precision>> axes;
        for (const auto& [device, op] : axis_ids)
            axes.push_back(ascending_supported(bundle.graph.node(op)));
        std::vector<std::size_t> index(axes.size(), 0);
        std::optional<double> best;
        while (true) {
            PrecisionPlan plan;
            for (const DeviceSpec& d : bundle.devices)
                plan.per_device[d.id] = all_fp32(bundle.graph);
            for (std::size_t i = 0; i < axes.size(); ++i)
                plan.per_device[axis_ids[i].first][axis_ids[i].second] = axes[i][index[i]];

            const GlobalBuild cand = build_global_dfg(bundle, plan);
            bool feasible = true;
            for (const DeviceSpec& d : bundle.devices)
                if (d.is_inference &&
                    estimate_memory(cand.dags.at(d.id), bundle.op_costs) > cap_for(problem, d.id))
                    feasible = false;
            if (feasible && throughput(simulate(cand.global)) < r.t_min) feasible = false;
            if (feasible) {
                PrecisionPlan resolved_plan;
                for (const auto& [device, dag] : cand.dags)
                    resolved_plan.per_device[device] = dag.assignment();
                const double om = plan_omega(bundle, problem.scores, resolved_plan);
                if (!best || om < *best) best = om;
            }

            std::size_t i = axes.size();
            bool done = true;
            while (i > 0) {
                --i;
                if (++index[i] < axes[i].size()) {
                    done = false;
                    break;
                }
                index[i] = 0;
            }
            if (done) break;
        }
        if (best) r.optimality_gap = r.omega_after - *best;
    }
    return r;
}

nlohmann::json solve_report(const SolveResult& r) {
    nlohmann::json audit = nlohmann::json::array();
    for (const AuditStep& s : r.audit)
        audit.push_back({{"accepted", s.accepted},
                         {"delta", s.delta},
                         {"device", s.device},
                         {"from", precision_name(s.from)},
                         {"op", s.op},
                         {"reason", s.reason},
                         {"to", precision_name(s.to)}});

    nlohmann::json devices = nlohmann::json::object();
    for (const auto& [device, assignment] : r.plan.per_device) {
        nlohmann::json jm = nlohmann::json::object();
        for (const auto& [op, p] : assignment) jm[op] = precision_name(p);
        devices[device] = std::move(jm);
    }

    nlohmann::json memory = nlohmann::json::object();
    for (const auto& [device, bytes] : r.per_device_memory) memory[device] = bytes;

    nlohmann::json j = {{"audit", std::move(audit)},
                        {"devices", std::move(devices)},
                        {"memory_ok", r.memory_ok},
                        {"omega_after", r.omega_after},
                        {"omega_before", r.omega_before},
                        {"per_device_memory_bytes", std::move(memory)},
                        {"predicted_throughput_it_s", r.throughput_it_s},
                        {"t_min_it_s", r.t_min},
                        {"throughput_ok", r.throughput_ok},
                        {"total_omega", r.omega_after}};
    if (r.optimality_gap) j["optimality_gap"] = *r.optimality_gap;
    return j;
}

} // namespace qsync
