#ifndef QSYNC_ALLOCATOR_HPP
#define QSYNC_ALLOCATOR_HPP

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "qsync/indicator.hpp"
#include "qsync/profile.hpp"
#include "qsync/replayer.hpp"

namespace qsync {

struct AllocProblem {
    const ProfileBundle* bundle = nullptr;
    LossSpec loss;
    PerturbationTable scores;
    std::map<std::string, std::int64_t> mem_caps;  // per inference device
    std::optional<double> t_min;                   // explicit throughput floor, it/s
    bool t_min_uniform_lowest = false;  // derive the floor from the uniform-lowest plan
    int b_max = 8;                      // enumeration cap per subgraph
};

/// Splits one device's memory cap into per-subgraph budgets in proportion to
/// each subgraph's compression capacity (FP32 memory minus lowest-precision
/// memory). Infeasible when even the lowest precisions exceed the cap.
std::map<std::string, std::int64_t> partition_budget(const PrecisionDag& dag, std::int64_t m_max,
                                                     const OpCostProfile& costs);

/// Brute-force per-subgraph search for the fastest budget-respecting
/// assignment. Subgraphs are processed shallowest-first; ties in compute
/// time go to the lexicographically smallest precision vector (lower bits
/// first), which keeps memory headroom.
std::map<std::string, Precision> initial_plan(const PrecisionDag& dag,
                                              const std::map<std::string, std::int64_t>& budgets,
                                              const OpCostProfile& costs,
                                              const CastCostModel& cast, int b_max);

struct AuditStep {
    std::string device;
    std::string op;
    Precision from = Precision::Fp32;
    Precision to = Precision::Fp32;
    double delta = 0.0;  // omega(from) - omega(to)
    bool accepted = false;
    std::string reason;  // "ok", "no-objective-gain", "memory", "throughput"
};

struct RecoverResult {
    PrecisionPlan plan;
    std::vector<AuditStep> audit;
    double t_min = 0.0;  // the floor that was enforced
};

/// Greedy precision recovery: repeatedly pops the largest perturbation
/// decrement across per-device max-heaps (round-robin over devices) and
/// raises that operator one precision step when memory and throughput still
/// hold. Rejected entries are consumed, not retried.
RecoverResult recover(const AllocProblem& problem, const PrecisionPlan& initial);

struct SolveResult {
    PrecisionPlan plan;
    Timeline timeline;
    double omega_before = 0.0;
    double omega_after = 0.0;
    double throughput_it_s = 0.0;
    double t_min = 0.0;
    std::map<std::string, std::int64_t> per_device_memory;
    bool memory_ok = true;
    bool throughput_ok = true;
    std::vector<AuditStep> audit;
    std::optional<double> optimality_gap;  // vs exhaustive search, when tractable
};

/// partition_budget -> initial_plan per inference device -> recover, with
/// training devices pinned to FP32. The result carries a post-hoc
/// re-evaluation of both constraints and, when the joint search space has at
/// most 729 combinations, the gap to the exhaustive optimum.
SolveResult solve(const AllocProblem& problem);

nlohmann::json solve_report(const SolveResult& r);

} // namespace qsync

#endif
