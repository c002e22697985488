#ifndef QSYNC_REPLAYER_HPP
#define QSYNC_REPLAYER_HPP

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "qsync/cost_mapper.hpp"
#include "qsync/profile.hpp"

namespace qsync {

/// All per-device execution lines plus the communication profile coupling
/// them through synchronized all-reduce slots.
struct GlobalDfg {
    std::map<std::string, LocalDfg> locals;
    CommProfile comm;
    std::set<std::string> inference_devices;
};

struct TimelineEvent {
    std::string id;
    std::int64_t start_ns = 0;
    std::int64_t end_ns = 0;

    bool operator==(const TimelineEvent&) const = default;
};

struct Timeline {
    std::map<std::string, std::vector<TimelineEvent>> compute;  // per device, in DFG order
    std::map<std::string, std::vector<TimelineEvent>> comm;     // per device, one per slot
    std::map<std::string, std::vector<std::int64_t>> slot_ready;  // per device, slot n at [n-1]
    std::vector<std::int64_t> comm_start;  // slot n at [n-1]
    std::vector<std::int64_t> comm_end;    // device-uniform
    std::int64_t makespan_ns = 0;
};

/// Replays one training iteration. Compute events run back-to-back per
/// device; slot n starts once every device's hooked backward event finished
/// and slot n-1 ended, and runs for the slowest device's duration; the
/// optimizer waits for both the device's compute and the final slot.
Timeline simulate(const GlobalDfg& g);

struct GlobalBuild {
    GlobalDfg global;
    std::map<std::string, PrecisionDag> dags;  // per-device resolved assignments
};

/// Instantiates every device's local DFG from a plan. Devices the plan does
/// not mention run all-FP32; plan entries may cover a subset of operators
/// (the rest default to FP32) but must stay FP32 on training devices.
GlobalBuild build_global_dfg(const ProfileBundle& bundle, const PrecisionPlan& plan);

/// Sum of profiled memory over operators at their assigned precisions.
std::int64_t estimate_memory(const PrecisionDag& dag, const OpCostProfile& costs);

/// Iterations per second implied by the makespan.
double throughput(const Timeline& t);

nlohmann::json trace_to_json(const Timeline& t);

/// Chrome trace-event JSON: one complete ("X") event per compute/comm span,
/// pid = device, tid 0 = compute, tid 1 = comm, timestamps in microseconds.
void export_trace(const Timeline& t, const std::string& path);

} // namespace qsync

#endif
