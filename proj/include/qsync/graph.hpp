#ifndef QSYNC_GRAPH_HPP
#define QSYNC_GRAPH_HPP

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "qsync/precision.hpp"

namespace qsync {

/// One operator of the training graph, as profiled on the target device.
///
/// `depth` is the 1-based longest-path distance from a graph source, measured
/// in operators. It is recomputed by build_dag; any supplied value is
/// overwritten. `subgraph_id` names the isomorphic building block (e.g. a
/// residual block) the operator belongs to; the allocator partitions memory
/// budgets per subgraph.
struct OperatorNode {
    std::string id;
    OperatorKind kind = OperatorKind::Adjustable;
    int depth = 0;
    bool has_weight = false;
    std::int64_t weight_numel = 0;
    std::int64_t output_numel = 0;
    std::string subgraph_id;
    std::vector<Precision> supported_precisions;

    bool supports(Precision p) const;
};

/// Kernel output format: fixed-point kernels emit FP32 outputs, floating
/// point kernels emit their own format.
constexpr Precision output_precision(Precision kernel_precision) {
    return kernel_precision == Precision::Int8 ? Precision::Fp32 : kernel_precision;
}

/// Operator graph plus one device's precision assignment.
///
/// Immutable after build_dag: queries are const and mutation happens by
/// constructing a modified copy (with_precision / with_assignment), so
/// concurrent reads are safe.
class PrecisionDag {
  public:
    PrecisionDag() = default;

    const std::map<std::string, OperatorNode>& nodes() const { return nodes_; }
    const std::vector<std::pair<std::string, std::string>>& edges() const { return edges_; }
    const std::map<std::string, Precision>& assignment() const { return assignment_; }

    const OperatorNode& node(const std::string& id) const;
    Precision precision_of(const std::string& id) const;
    const std::vector<std::string>& predecessors(const std::string& id) const;
    const std::vector<std::string>& successors(const std::string& id) const;

    /// Canonical topological order: Kahn's algorithm, ties broken by
    /// smallest id. Identical across rebuilds of the same graph.
    const std::vector<std::string>& topo_order() const { return topo_; }

    /// Maximum node depth d_L.
    int model_depth() const { return model_depth_; }

    /// Copy with one precision replaced. Validates support.
    PrecisionDag with_precision(const std::string& id, Precision p) const;

    /// Copy with the whole assignment replaced. Validates support and cover.
    PrecisionDag with_assignment(std::map<std::string, Precision> assignment) const;

    bool operator==(const PrecisionDag& other) const;

    friend PrecisionDag build_dag(std::vector<OperatorNode> nodes,
                                  std::vector<std::pair<std::string, std::string>> edges,
                                  std::map<std::string, Precision> initial_assignment);

  private:
    std::map<std::string, OperatorNode> nodes_;
    std::vector<std::pair<std::string, std::string>> edges_;
    std::map<std::string, Precision> assignment_;
    std::map<std::string, std::vector<std::string>> preds_;
    std::map<std::string, std::vector<std::string>> succs_;
    std::vector<std::string> topo_;
    int model_depth_ = 0;
};

/// Validates endpoints, support and acyclicity, recomputes depths, and
/// freezes the canonical topological order. Raises graph-cycle naming one
/// edge on a cycle, validation for bad endpoints/assignments.
PrecisionDag build_dag(std::vector<OperatorNode> nodes,
                       std::vector<std::pair<std::string, std::string>> edges,
                       std::map<std::string, Precision> initial_assignment);

struct DepthResult {
    std::map<std::string, int> depth;
    int model_depth = 0;
};

/// Longest-path depths: 1 for sources, 1 + max over predecessors otherwise.
DepthResult compute_depths(const PrecisionDag& dag);

/// Dependent nodes downstream of `start` that adopt a new precision when
/// `start`'s output format becomes `new_output_precision`.
///
/// A dependent node joins the cascade when at least one predecessor already
/// belongs to it (or is `start`), all predecessors' output formats agree and
/// the node supports that format. Traversal stops at adjustable and fixed
/// nodes, at dependents with mixed-format inputs, and at dependents lacking
/// support; those keep their prior precision.
std::set<std::string> dependent_closure(const PrecisionDag& dag, const std::string& start,
                                        Precision new_output_precision);

/// Fixed point of the cascade rule over the whole graph: every dependent
/// node whose predecessors' output formats agree takes that format (subject
/// to the support guard); all other nodes keep dag.assignment. One
/// topological pass suffices on a DAG.
std::map<std::string, Precision> resolve_dependents(const PrecisionDag& dag);

struct CascadeResult {
    std::map<std::string, Precision> assignment;  // full map after the cascade
    std::set<std::string> closure;                // dependents that adopted a precision
};

/// Sets `op` to `new_p` and cascades through its dependent closure, returning
/// the resulting assignment without touching the dag.
CascadeResult apply_with_cascade(const PrecisionDag& dag, const std::string& op, Precision new_p);

/// Precision assignments for every device in the cluster. Training devices
/// run everything in FP32; only inference devices carry mixed assignments.
struct PrecisionPlan {
    std::map<std::string, std::map<std::string, Precision>> per_device;
};

nlohmann::json graph_to_json(const PrecisionDag& dag);
PrecisionDag graph_from_json(const nlohmann::json& j);

nlohmann::json plan_to_json(const PrecisionPlan& plan);
PrecisionPlan plan_from_json(const nlohmann::json& j);

} // namespace qsync

#endif
