#ifndef QSYNC_COST_MAPPER_HPP
#define QSYNC_COST_MAPPER_HPP

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "qsync/graph.hpp"
#include "qsync/profile.hpp"

namespace qsync {

struct CostBreakdown {
    std::int64_t fwd_cast = 0;
    std::int64_t weight_cast = 0;
    std::int64_t bwd_cast = 0;
    std::int64_t pure_op = 0;

    std::int64_t total() const { return fwd_cast + weight_cast + bwd_cast + pure_op; }
    bool operator==(const CostBreakdown&) const = default;
};

enum class EventPhase { Forward, Backward, Optimizer };

struct DfgEvent {
    std::string id;   // "fwd:<op>", "bwd:<op>", "optimizer"
    std::string op;   // empty for the optimizer event
    EventPhase phase = EventPhase::Forward;
    std::int64_t duration_ns = 0;
    std::optional<int> comm_slot;  // 1-based hook on backward events

    bool operator==(const DfgEvent&) const = default;
};

/// One device's execution line: forward events in topological order, backward
/// events in reverse topological order, then the optimizer. Communication
/// hooks mark the backward event after which each all-reduce bucket is ready.
struct LocalDfg {
    std::vector<DfgEvent> events;
    std::map<std::string, CostBreakdown> per_op;

    std::int64_t total_compute_ns() const;
    bool operator==(const LocalDfg&) const = default;
};

/// Casting costs and pure cost of one operator under a fully resolved
/// assignment. Consumers pay input casts: fwd_cast covers casting each
/// predecessor's output into this kernel's format, bwd_cast covers casting
/// each successor's gradient into this kernel's backward format (plus the
/// FP32 weight-gradient conversion of fixed-point kernels).
CostBreakdown op_breakdown(const PrecisionDag& dag,
                           const std::map<std::string, Precision>& assignment,
                           const std::string& op, const OpCostProfile& costs,
                           const CastCostModel& cast);

/// Backward events carry the all-reduce hooks. Attachment is structural: the
/// all-FP32 serial timeline places each slot at the first backward event
/// ending at or after the slot's profiled ready offset (never earlier than
/// the previous slot's event), so it survives precision changes.
std::map<int, std::string> comm_attachment(const PrecisionDag& dag, const OpCostProfile& costs,
                                           const std::vector<CommSlot>& slots);

struct RemapResult {
    PrecisionDag dag;   // carries the resolved assignment
    LocalDfg dfg;
    CostBreakdown total;
};

/// Rebuilds the device's DFG from scratch: resolves dependent precisions to
/// their fixed point, charges every boundary cast once, sums pure costs.
RemapResult full_remap(const PrecisionDag& dag, const std::map<std::string, Precision>& assignment,
                       const OpCostProfile& costs, const CastCostModel& cast,
                       const std::vector<CommSlot>& slots = {});

struct MappingResult {
    PrecisionDag dag;
    LocalDfg dfg;
    CostBreakdown changed;  // breakdown of the operator that was changed
};

/// Applies one precision change: updates the operator, cascades through its
/// dependent closure, and refreshes the casting costs of every operator whose
/// inputs or outputs the change touched. Inputs are not mutated.
MappingResult cost_mapping(const PrecisionDag& dag, const LocalDfg& dfg, const std::string& op,
                           Precision new_p, const OpCostProfile& costs,
                           const CastCostModel& cast);

} // namespace qsync

#endif
