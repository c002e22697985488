#include "qsync/replayer.hpp"

#include <algorithm>
#include <fstream>

namespace qsync {

Timeline simulate(const GlobalDfg& g) {
    const int n_slots = g.comm.slot_count();
    if (n_slots > 0)
        for (const auto& [device, dfg] : g.locals)
            if (!g.comm.per_device.count(device))
                fail(ErrorKind::Topology,
                     "device \"" + device + "\" has no communication profile");
    for (const auto& [device, slots] : g.comm.per_device)
        if (!g.locals.count(device))
            fail(ErrorKind::Topology,
                 "communication profile names unknown device \"" + device + "\"");

    Timeline t;
    std::map<std::string, std::int64_t> compute_end;
    for (const auto& [device, dfg] : g.locals) {
        std::int64_t now = 0;
        std::vector<std::int64_t> ready(n_slots, -1);
        for (const DfgEvent& e : dfg.events) {
            if (e.phase == EventPhase::Optimizer) continue;
            const std::int64_t start = now;
            now += e.duration_ns;
            t.compute[device].push_back({e.id, start, now});
            if (e.comm_slot) {
                const int slot = *e.comm_slot;
                if (slot < 1 || slot > n_slots || ready[slot - 1] != -1)
                    fail(ErrorKind::Topology, "device \"" + device +
                                                  "\" hooks communication slot " +
                                                  std::to_string(slot) + " invalidly");
                ready[slot - 1] = now;
            }
        }
        for (int n = 1; n <= n_slots; ++n)
            if (ready[n - 1] == -1)
                fail(ErrorKind::Topology, "device \"" + device +
                                              "\" never hooks communication slot " +
                                              std::to_string(n));
        compute_end[device] = now;
        t.slot_ready[device] = std::move(ready);
    }

    std::int64_t prev_end = 0;
    for (int n = 1; n <= n_slots; ++n) {
        std::int64_t start = prev_end;
        std::int64_t duration = 0;
        for (const auto& [device, dfg] : g.locals) {
            start = std::max(start, t.slot_ready.at(device)[n - 1]);
            duration = std::max(duration, g.comm.per_device.at(device)[n - 1].duration_ns);
        }
        const std::int64_t end = start + duration;
        t.comm_start.push_back(start);
        t.comm_end.push_back(end);
        for (const auto& [device, dfg] : g.locals)
            t.comm[device].push_back({"allreduce:" + std::to_string(n), start, end});
        prev_end = end;
    }

    for (const auto& [device, dfg] : g.locals) {
        std::int64_t now = std::max(compute_end.at(device), prev_end);
        for (const DfgEvent& e : dfg.events) {
            if (e.phase != EventPhase::Optimizer) continue;
            const std::int64_t start = now;
            now += e.duration_ns;
            t.compute[device].push_back({e.id, start, now});
        }
        t.makespan_ns = std::max(t.makespan_ns, now);
    }
    return t;
}

GlobalBuild build_global_dfg(const ProfileBundle& bundle, const PrecisionPlan& plan) {
    for (const auto& [device, ops] : plan.per_device) {
        bool known = false;
        for (const DeviceSpec& d : bundle.devices) known = known || d.id == device;
        if (!known)
            fail(ErrorKind::Reference, "plan names unknown device \"" + device + "\"");
    }
    GlobalBuild build;
    for (const DeviceSpec& d : bundle.devices) {
        std::map<std::string, Precision> assignment;
        for (const auto& [id, n] : bundle.graph.nodes()) assignment[id] = Precision::Fp32;
        auto it = plan.per_device.find(d.id);
        if (it != plan.per_device.end())
            for (const auto& [op, p] : it->second) {
                if (!assignment.count(op))
                    fail(ErrorKind::Reference,
                         "plan assigns unknown operator \"" + op + "\" on device " + d.id);
                assignment[op] = p;
            }
        if (!d.is_inference)
            for (const auto& [op, p] : assignment)
                if (p != Precision::Fp32)
                    fail(ErrorKind::Validation, "training device " + d.id +
                                                    " must stay FP32 but \"" + op + "\" is " +
                                                    precision_name(p));
        std::vector<CommSlot> slots;
        auto ct = bundle.comm.per_device.find(d.id);
        if (ct != bundle.comm.per_device.end()) slots = ct->second;
        RemapResult remap =
            full_remap(bundle.graph, assignment, bundle.op_costs, bundle.cast_model, slots);
        build.global.locals[d.id] = std::move(remap.dfg);
        build.dags.emplace(d.id, std::move(remap.dag));
        if (d.is_inference) build.global.inference_devices.insert(d.id);
    }
    build.global.comm = bundle.comm;
    return build;
}

std::int64_t estimate_memory(const PrecisionDag& dag, const OpCostProfile& costs) {
    std::int64_t total = 0;
    for (const auto& [op, p] : dag.assignment()) total += costs.at(op, p).memory_bytes;
    return total;
}

double throughput(const Timeline& t) {
    if (t.makespan_ns <= 0) fail(ErrorKind::Domain, "timeline has no positive makespan");
    return 1e9 / static_cast<double>(t.makespan_ns);
}

nlohmann::json trace_to_json(const Timeline& t) {
    nlohmann::json events = nlohmann::json::array();
    auto emit = [&events](const std::string& device, const TimelineEvent& e, int tid) {
        events.push_back({{"name", e.id},
                          {"ph", "X"},
                          {"ts", static_cast<double>(e.start_ns) / 1000.0},
                          {"dur", static_cast<double>(e.end_ns - e.start_ns) / 1000.0},
                          {"pid", device},
                          {"tid", tid}});
    };
    for (const auto& [device, list] : t.compute)
        for (const TimelineEvent& e : list) emit(device, e, 0);
    for (const auto& [device, list] : t.comm)
        for (const TimelineEvent& e : list) emit(device, e, 1);
    return {{"traceEvents", std::move(events)}, {"displayTimeUnit", "ms"}};
}

void export_trace(const Timeline& t, const std::string& path) {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::Io, "cannot write trace file \"" + path + "\"");
    out << trace_to_json(t).dump(2) << "\n";
    if (!out) fail(ErrorKind::Io, "failed writing trace file \"" + path + "\"");
}

} // namespace qsync
