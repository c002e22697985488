#include "qsync/cost_mapper.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace qsync {

namespace {

/// Format gradients are produced and consumed in: fixed-point kernels run
/// their backward pass in FP16, everything else matches the kernel.
Precision backward_precision(Precision kernel) {
    return kernel == Precision::Int8 ? Precision::Fp16 : kernel;
}

std::int64_t forward_share(const OpCostEntry& entry) {
    return static_cast<std::int64_t>(
        std::llround(static_cast<double>(entry.pure_cost_ns) * entry.fwd_fraction));
}

} // namespace

std::int64_t LocalDfg::total_compute_ns() const {
    std::int64_t total = 0;
    for (const DfgEvent& e : events) total += e.duration_ns;
    return total;
}

CostBreakdown op_breakdown(const PrecisionDag& dag,
                           const std::map<std::string, Precision>& assignment,
                           const std::string& op, const OpCostProfile& costs,
                           const CastCostModel& cast) {
    const OperatorNode& node = dag.node(op);
    const Precision k = assignment.at(op);
    CostBreakdown b;
    for (const std::string& p : dag.predecessors(op)) {
        const Precision out_p = output_precision(assignment.at(p));
        if (out_p != k) b.fwd_cast += cast.predict(out_p, k, dag.node(p).output_numel);
    }
    if (node.has_weight && k != Precision::Fp32)
        b.weight_cast = cast.predict(Precision::Fp32, k, node.weight_numel);
    const Precision bp = backward_precision(k);
    for (const std::string& s : dag.successors(op)) {
        const Precision gp = backward_precision(assignment.at(s));
        if (gp != bp) b.bwd_cast += cast.predict(gp, bp, node.output_numel);
    }
    if (k == Precision::Int8 && node.has_weight)
        // Fixed-point kernels emit the weight gradient in FP32.
        b.bwd_cast += cast.predict(Precision::Int8, Precision::Fp32, node.weight_numel);
    b.pure_op = costs.at(op, k).pure_cost_ns;
    return b;
}

std::map<int, std::string> comm_attachment(const PrecisionDag& dag, const OpCostProfile& costs,
                                           const std::vector<CommSlot>& slots) {
    std::map<int, std::string> attachment;
    if (slots.empty()) return attachment;

    std::int64_t t = 0;
    for (const std::string& op : dag.topo_order()) t += forward_share(costs.at(op, Precision::Fp32));
    std::vector<std::pair<std::string, std::int64_t>> bwd_end;
    const auto& topo = dag.topo_order();
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        const OpCostEntry& entry = costs.at(*it, Precision::Fp32);
        t += entry.pure_cost_ns - forward_share(entry);
        bwd_end.emplace_back(*it, t);
    }

    const int nb = static_cast<int>(bwd_end.size());
    const int ns = static_cast<int>(slots.size());
    if (ns > nb)
        fail(ErrorKind::Topology, "profile declares " + std::to_string(ns) +
                                      " communication slots but the graph has only " +
                                      std::to_string(nb) + " backward events");

    std::vector<int> idx(ns);
    int cursor = 0;
    for (int i = 0; i < ns; ++i) {
        while (cursor < nb && bwd_end[cursor].second < slots[i].earliest_ready_offset_ns) ++cursor;
        idx[i] = std::min(cursor, nb - 1);
        cursor = idx[i] + 1;
    }
    // Keep one slot per event: pack from the tail, then restore monotonicity.
    for (int i = ns - 1; i >= 0; --i) idx[i] = std::min(idx[i], nb - (ns - i));
    for (int i = 1; i < ns; ++i) idx[i] = std::max(idx[i], idx[i - 1] + 1);

    for (int i = 0; i < ns; ++i) attachment[i + 1] = bwd_end[idx[i]].first;
    return attachment;
}

namespace {

LocalDfg build_local_dfg(const PrecisionDag& dag, const OpCostProfile& costs,
                         const CastCostModel& cast, const std::vector<CommSlot>& slots) {
    const auto& assignment = dag.assignment();
    LocalDfg dfg;
    for (const std::string& op : dag.topo_order())
        dfg.per_op[op] = op_breakdown(dag, assignment, op, costs, cast);

    std::map<std::string, int> slot_of;
    for (const auto& [slot, op] : comm_attachment(dag, costs, slots)) slot_of[op] = slot;

    const auto& topo = dag.topo_order();
    for (const std::string& op : topo) {
        const CostBreakdown& b = dfg.per_op.at(op);
        const OpCostEntry& entry = costs.at(op, assignment.at(op));
        DfgEvent e;
        e.id = "fwd:" + op;
        e.op = op;
        e.phase = EventPhase::Forward;
        e.duration_ns = forward_share(entry) + b.fwd_cast + b.weight_cast;
        dfg.events.push_back(std::move(e));
    }
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        const CostBreakdown& b = dfg.per_op.at(*it);
        const OpCostEntry& entry = costs.at(*it, assignment.at(*it));
        DfgEvent e;
        e.id = "bwd:" + *it;
        e.op = *it;
        e.phase = EventPhase::Backward;
        e.duration_ns = entry.pure_cost_ns - forward_share(entry) + b.bwd_cast;
        auto hook = slot_of.find(*it);
        if (hook != slot_of.end()) e.comm_slot = hook->second;
        dfg.events.push_back(std::move(e));
    }
    DfgEvent opt;
    opt.id = "optimizer";
    opt.phase = EventPhase::Optimizer;
    opt.duration_ns = 0;
    dfg.events.push_back(std::move(opt));
    return dfg;
}

void refresh_events(LocalDfg& dfg, const PrecisionDag& dag, const OpCostProfile& costs,
                    const std::set<std::string>& ops) {
    for (DfgEvent& e : dfg.events) {
        if (e.phase == EventPhase::Optimizer || !ops.count(e.op)) continue;
        const CostBreakdown& b = dfg.per_op.at(e.op);
        const OpCostEntry& entry = costs.at(e.op, dag.assignment().at(e.op));
        if (e.phase == EventPhase::Forward)
            e.duration_ns = forward_share(entry) + b.fwd_cast + b.weight_cast;
        else
            e.duration_ns = entry.pure_cost_ns - forward_share(entry) + b.bwd_cast;
    }
}

} // namespace

RemapResult full_remap(const PrecisionDag& dag, const std::map<std::string, Precision>& assignment,
                       const OpCostProfile& costs, const CastCostModel& cast,
                       const std::vector<CommSlot>& slots) {
    const PrecisionDag assigned = dag.with_assignment(assignment);
    const PrecisionDag resolved = assigned.with_assignment(resolve_dependents(assigned));
    RemapResult r{resolved, build_local_dfg(resolved, costs, cast, slots), {}};
    for (const auto& [op, b] : r.dfg.per_op) {
        r.total.fwd_cast += b.fwd_cast;
        r.total.weight_cast += b.weight_cast;
        r.total.bwd_cast += b.bwd_cast;
        r.total.pure_op += b.pure_op;
    }
    return r;
}

MappingResult cost_mapping(const PrecisionDag& dag, const LocalDfg& dfg, const std::string& op,
                           Precision new_p, const OpCostProfile& costs,
                           const CastCostModel& cast) {
    const OperatorNode& node = dag.node(op);
    if (node.kind != OperatorKind::Adjustable)
        fail(ErrorKind::KindMismatch, "operator \"" + op + "\" is " +
                                          operator_kind_name(node.kind) +
                                          "; only adjustable operators take precision changes");
    const CascadeResult cascade = apply_with_cascade(dag, op, new_p);

    MappingResult r{dag.with_assignment(cascade.assignment), dfg, {}};

    std::set<std::string> touched = cascade.closure;
    touched.insert(op);
    std::set<std::string> refresh = touched;
    for (const std::string& t : touched) {
        for (const std::string& p : dag.predecessors(t)) refresh.insert(p);
        for (const std::string& s : dag.successors(t)) refresh.insert(s);
    }
    for (const std::string& t : refresh)
        r.dfg.per_op[t] = op_breakdown(r.dag, r.dag.assignment(), t, costs, cast);
    refresh_events(r.dfg, r.dag, costs, refresh);
    r.changed = r.dfg.per_op.at(op);
    return r;
}

} // namespace qsync
