#include "qsync/graph.hpp"

#include <algorithm>
#include <deque>
#include <queue>

namespace qsync {

bool OperatorNode::supports(Precision p) const {
    return std::find(supported_precisions.begin(), supported_precisions.end(), p) !=
           supported_precisions.end();
}

const OperatorNode& PrecisionDag::node(const std::string& id) const {
    auto it = nodes_.find(id);
    if (it == nodes_.end()) fail(ErrorKind::Reference, "unknown operator \"" + id + "\"");
    return it->second;
}

Precision PrecisionDag::precision_of(const std::string& id) const {
    auto it = assignment_.find(id);
    if (it == assignment_.end()) fail(ErrorKind::Reference, "no precision assigned to \"" + id + "\"");
    return it->second;
}

const std::vector<std::string>& PrecisionDag::predecessors(const std::string& id) const {
    auto it = preds_.find(id);
    if (it == preds_.end()) fail(ErrorKind::Reference, "unknown operator \"" + id + "\"");
    return it->second;
}

const std::vector<std::string>& PrecisionDag::successors(const std::string& id) const {
    auto it = succs_.find(id);
    if (it == succs_.end()) fail(ErrorKind::Reference, "unknown operator \"" + id + "\"");
    return it->second;
}

PrecisionDag PrecisionDag::with_precision(const std::string& id, Precision p) const {
    const OperatorNode& n = node(id);
    if (!n.supports(p))
        fail(ErrorKind::Validation, "operator \"" + id + "\" does not support " + precision_name(p));
    PrecisionDag copy = *this;
    copy.assignment_[id] = p;
    return copy;
}

PrecisionDag PrecisionDag::with_assignment(std::map<std::string, Precision> assignment) const {
    for (const auto& [id, node] : nodes_) {
        auto it = assignment.find(id);
        if (it == assignment.end())
            fail(ErrorKind::Validation, "assignment misses operator \"" + id + "\"");
        if (!node.supports(it->second))
            fail(ErrorKind::Validation,
                 "operator \"" + id + "\" does not support " + precision_name(it->second));
    }
    if (assignment.size() != nodes_.size())
        fail(ErrorKind::Validation, "assignment names operators absent from the graph");
    PrecisionDag copy = *this;
    copy.assignment_ = std::move(assignment);
    return copy;
}

bool PrecisionDag::operator==(const PrecisionDag& other) const {
    auto node_eq = [](const OperatorNode& a, const OperatorNode& b) {
        return a.id == b.id && a.kind == b.kind && a.depth == b.depth &&
               a.has_weight == b.has_weight && a.weight_numel == b.weight_numel &&
               a.output_numel == b.output_numel && a.subgraph_id == b.subgraph_id &&
               a.supported_precisions == b.supported_precisions;
    };
    if (nodes_.size() != other.nodes_.size() || edges_ != other.edges_ ||
        assignment_ != other.assignment_)
        return false;
    for (const auto& [id, n] : nodes_) {
        auto it = other.nodes_.find(id);
        if (it == other.nodes_.end() || !node_eq(n, it->second)) return false;
    }
    return true;
}

namespace {

/// Kahn's algorithm with a min-heap on id. On a cycle, names one edge that
/// lies on it: from an unprocessed node, walk unprocessed predecessors until
/// a node repeats, then report the closing edge.
std::vector<std::string> canonical_topo_order(
    const std::map<std::string, OperatorNode>& nodes,
    const std::map<std::string, std::vector<std::string>>& preds,
    const std::map<std::string, std::vector<std::string>>& succs) {
    std::map<std::string, int> indegree;
    for (const auto& [id, p] : preds) indegree[id] = static_cast<int>(p.size());
    std::priority_queue<std::string, std::vector<std::string>, std::greater<>> ready;
    for (const auto& [id, deg] : indegree)
        if (deg == 0) ready.push(id);
    std::vector<std::string> order;
    order.reserve(nodes.size());
    while (!ready.empty()) {
        std::string id = ready.top();
        ready.pop();
        order.push_back(id);
        for (const std::string& s : succs.at(id))
            if (--indegree[s] == 0) ready.push(s);
    }
    if (order.size() == nodes.size()) return order;

    std::set<std::string> done(order.begin(), order.end());
    std::string cur;
    for (const auto& [id, n] : nodes)
        if (!done.count(id)) {
            cur = id;
            break;
        }
    std::map<std::string, std::string> came_from;
    std::set<std::string> seen;
    while (!seen.count(cur)) {
        seen.insert(cur);
        for (const std::string& p : preds.at(cur))
            if (!done.count(p)) {
                came_from[cur] = p;
                cur = p;
                break;
            }
    }
    // cur repeats, so came_from[cur] -> cur closes a cycle.
    fail(ErrorKind::GraphCycle,
         "graph contains a cycle through edge " + came_from.at(cur) + " -> " + cur);
}

} // namespace

PrecisionDag build_dag(std::vector<OperatorNode> nodes,
                       std::vector<std::pair<std::string, std::string>> edges,
                       std::map<std::string, Precision> initial_assignment) {
    PrecisionDag dag;
    for (OperatorNode& n : nodes) {
        if (n.id.empty()) fail(ErrorKind::Validation, "operator with empty id");
        if (n.supported_precisions.empty())
            fail(ErrorKind::Validation, "operator \"" + n.id + "\" supports no precision");
        if (!n.supports(Precision::Fp32))
            fail(ErrorKind::Validation, "operator \"" + n.id + "\" must support FP32");
        if (n.has_weight && n.weight_numel <= 0)
            fail(ErrorKind::Validation,
                 "operator \"" + n.id + "\" has a weight but weight_numel is not positive");
        if (n.has_weight && n.kind == OperatorKind::Dependent)
            fail(ErrorKind::Validation,
                 "operator \"" + n.id + "\" is dependent and cannot carry a weight");
        if (n.output_numel < 0)
            fail(ErrorKind::Validation, "operator \"" + n.id + "\" has negative output_numel");
        if (!dag.nodes_.emplace(n.id, n).second)
            fail(ErrorKind::Validation, "duplicate operator id \"" + n.id + "\"");
    }
    for (const auto& [id, n] : dag.nodes_) {
        dag.preds_[id] = {};
        dag.succs_[id] = {};
    }
    std::set<std::pair<std::string, std::string>> seen_edges;
    for (const auto& [src, dst] : edges) {
        if (!dag.nodes_.count(src) || !dag.nodes_.count(dst))
            fail(ErrorKind::Validation, "edge " + src + " -> " + dst + " names an unknown operator");
        if (src == dst) fail(ErrorKind::GraphCycle, "graph contains a cycle through edge " + src + " -> " + dst);
        if (!seen_edges.insert({src, dst}).second)
            fail(ErrorKind::Validation, "duplicate edge " + src + " -> " + dst);
        dag.preds_[dst].push_back(src);
        dag.succs_[src].push_back(dst);
    }
    for (auto& [id, v] : dag.preds_) std::sort(v.begin(), v.end());
    for (auto& [id, v] : dag.succs_) std::sort(v.begin(), v.end());
    dag.edges_ = std::move(edges);
    std::sort(dag.edges_.begin(), dag.edges_.end());

    dag.topo_ = canonical_topo_order(dag.nodes_, dag.preds_, dag.succs_);

    for (const std::string& id : dag.topo_) {
        int d = 1;
        for (const std::string& p : dag.preds_[id]) d = std::max(d, dag.nodes_[p].depth + 1);
        dag.nodes_[id].depth = d;
        dag.model_depth_ = std::max(dag.model_depth_, d);
    }

    for (const auto& [id, n] : dag.nodes_) {
        auto it = initial_assignment.find(id);
        if (it == initial_assignment.end())
            fail(ErrorKind::Validation, "initial assignment misses operator \"" + id + "\"");
        if (!n.supports(it->second))
            fail(ErrorKind::Validation,
                 "operator \"" + id + "\" does not support " + precision_name(it->second));
    }
    if (initial_assignment.size() != dag.nodes_.size())
        fail(ErrorKind::Validation, "initial assignment names operators absent from the graph");
    dag.assignment_ = std::move(initial_assignment);
    return dag;
}

DepthResult compute_depths(const PrecisionDag& dag) {
    DepthResult r;
    for (const std::string& id : dag.topo_order()) {
        int d = 1;
        for (const std::string& p : dag.predecessors(id)) d = std::max(d, r.depth.at(p) + 1);
        r.depth[id] = d;
        r.model_depth = std::max(r.model_depth, d);
    }
    return r;
}

namespace {

CascadeResult cascade_from(const PrecisionDag& dag, const std::string& start,
                           Precision start_output) {
    dag.node(start);
    std::map<std::string, Precision> out;
    for (const auto& [id, p] : dag.assignment()) out[id] = output_precision(p);
    out[start] = start_output;

    CascadeResult r;
    r.assignment = dag.assignment();
    std::set<std::string> region{start};
    for (const std::string& id : dag.topo_order()) {
        const OperatorNode& n = dag.node(id);
        if (n.kind != OperatorKind::Dependent) continue;
        const auto& preds = dag.predecessors(id);
        if (preds.empty()) continue;
        bool touches_region = false;
        bool unanimous = true;
        Precision q = out.at(preds.front());
        for (const std::string& p : preds) {
            touches_region = touches_region || region.count(p) > 0;
            unanimous = unanimous && out.at(p) == q;
        }
        if (touches_region && unanimous && n.supports(q)) {
            r.closure.insert(id);
            region.insert(id);
            r.assignment[id] = q;
            out[id] = output_precision(q);
        }
    }
    return r;
}

} // namespace

std::set<std::string> dependent_closure(const PrecisionDag& dag, const std::string& start,
                                        Precision new_output_precision) {
    return cascade_from(dag, start, new_output_precision).closure;
}

CascadeResult apply_with_cascade(const PrecisionDag& dag, const std::string& op, Precision new_p) {
    if (!dag.node(op).supports(new_p))
        fail(ErrorKind::Validation,
             "operator \"" + op + "\" does not support " + precision_name(new_p));
    CascadeResult r = cascade_from(dag, op, output_precision(new_p));
    r.assignment[op] = new_p;
    return r;
}

std::map<std::string, Precision> resolve_dependents(const PrecisionDag& dag) {
    std::map<std::string, Precision> assignment = dag.assignment();
    std::map<std::string, Precision> out;
    for (const std::string& id : dag.topo_order()) {
        const OperatorNode& n = dag.node(id);
        const auto& preds = dag.predecessors(id);
        if (n.kind == OperatorKind::Dependent && !preds.empty()) {
            bool unanimous = true;
            Precision q = out.at(preds.front());
            for (const std::string& p : preds) unanimous = unanimous && out.at(p) == q;
            if (unanimous && n.supports(q)) assignment[id] = q;
        }
        out[id] = output_precision(assignment.at(id));
    }
    return assignment;
}

nlohmann::json graph_to_json(const PrecisionDag& dag) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& [id, n] : dag.nodes()) {
        nlohmann::json sp = nlohmann::json::array();
        for (Precision p : n.supported_precisions) sp.push_back(precision_name(p));
        nodes.push_back({{"id", n.id},
                         {"kind", operator_kind_name(n.kind)},
                         {"has_weight", n.has_weight},
                         {"weight_numel", n.weight_numel},
                         {"output_numel", n.output_numel},
                         {"subgraph_id", n.subgraph_id},
                         {"supported_precisions", sp}});
    }
    nlohmann::json edges = nlohmann::json::array();
    for (const auto& [src, dst] : dag.edges()) edges.push_back({src, dst});
    nlohmann::json assignment = nlohmann::json::object();
    for (const auto& [id, p] : dag.assignment()) assignment[id] = precision_name(p);
    return {{"nodes", nodes}, {"edges", edges}, {"assignment", assignment}};
}

PrecisionDag graph_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("nodes") || !j.contains("edges"))
        fail(ErrorKind::Validation, "graph JSON must be an object with nodes and edges");
    std::vector<OperatorNode> nodes;
    for (const auto& jn : j.at("nodes")) {
        OperatorNode n;
        n.id = jn.at("id").get<std::string>();
        n.kind = parse_operator_kind(jn.at("kind").get<std::string>());
        n.has_weight = jn.value("has_weight", false);
        n.weight_numel = jn.value("weight_numel", std::int64_t{0});
        n.output_numel = jn.at("output_numel").get<std::int64_t>();
        n.subgraph_id = jn.value("subgraph_id", std::string{});
        for (const auto& sp : jn.at("supported_precisions"))
            n.supported_precisions.push_back(parse_precision(sp.get<std::string>()));
        nodes.push_back(std::move(n));
    }
    std::vector<std::pair<std::string, std::string>> edges;
    for (const auto& je : j.at("edges")) {
        if (!je.is_array() || je.size() != 2)
            fail(ErrorKind::Validation, "each edge must be a [producer, consumer] pair");
        edges.emplace_back(je.at(0).get<std::string>(), je.at(1).get<std::string>());
    }
    std::map<std::string, Precision> assignment;
    if (j.contains("assignment")) {
        for (const auto& [id, p] : j.at("assignment").items())
            assignment[id] = parse_precision(p.get<std::string>());
    } else {
        for (const OperatorNode& n : nodes) assignment[n.id] = Precision::Fp32;
    }
    return build_dag(std::move(nodes), std::move(edges), std::move(assignment));
}

nlohmann::json plan_to_json(const PrecisionPlan& plan) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [device, m] : plan.per_device) {
        nlohmann::json jm = nlohmann::json::object();
        for (const auto& [op, p] : m) jm[op] = precision_name(p);
        j[device] = std::move(jm);
    }
    return {{"per_device", j}};
}

PrecisionPlan plan_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("per_device"))
        fail(ErrorKind::Validation, "plan JSON must be an object with per_device");
    PrecisionPlan plan;
    for (const auto& [device, jm] : j.at("per_device").items())
        for (const auto& [op, p] : jm.items())
            plan.per_device[device][op] = parse_precision(p.get<std::string>());
    return plan;
}

} // namespace qsync
