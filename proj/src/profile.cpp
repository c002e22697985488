#include "qsync/profile.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

namespace qsync {

const char* cast_scheme_name(CastScheme s) {
    switch (s) {
        case CastScheme::FloatToFloat: return "float_to_float";
        case CastScheme::QuantizeFixed: return "quantize_fixed";
        case CastScheme::DequantizeFixed: return "dequantize_fixed";
    }
    return "?";
}

CastScheme parse_cast_scheme(const std::string& name) {
    if (name == "float_to_float") return CastScheme::FloatToFloat;
    if (name == "quantize_fixed") return CastScheme::QuantizeFixed;
    if (name == "dequantize_fixed") return CastScheme::DequantizeFixed;
    fail(ErrorKind::Validation, "unknown cast scheme \"" + name + "\"");
}

CastScheme cast_scheme_for(Precision src, Precision dst) {
    if (src == dst) fail(ErrorKind::Domain, "no cast scheme for identical precisions");
    if (dst == Precision::Int8) return CastScheme::QuantizeFixed;
    if (src == Precision::Int8) return CastScheme::DequantizeFixed;
    return CastScheme::FloatToFloat;
}

LinearModel fit_cast_model(const std::vector<std::pair<std::int64_t, std::int64_t>>& samples) {
    if (samples.size() < 2)
        fail(ErrorKind::DegenerateFit, "need at least 2 cast samples, got " +
                                           std::to_string(samples.size()));
    const double n = static_cast<double>(samples.size());
    double sx = 0, sy = 0;
    for (const auto& [x, y] : samples) {
        sx += static_cast<double>(x);
        sy += static_cast<double>(y);
    }
    const double mx = sx / n, my = sy / n;
    double sxx = 0, sxy = 0;
    for (const auto& [x, y] : samples) {
        const double dx = static_cast<double>(x) - mx;
        sxx += dx * dx;
        sxy += dx * (static_cast<double>(y) - my);
    }
    if (sxx == 0.0)
        fail(ErrorKind::DegenerateFit, "all cast samples share one tensor size");

    LinearModel m;
    m.a = sxy / sxx;
    m.b = my - m.a * mx;
    if (m.a < 0) {
        // Best nonnegative-slope line is the flat mean.
        m.a = 0;
        m.b = my;
    }
    if (m.b < 0) {
        // Refit through the origin.
        double sxx0 = 0, sxy0 = 0;
        for (const auto& [x, y] : samples) {
            sxx0 += static_cast<double>(x) * static_cast<double>(x);
            sxy0 += static_cast<double>(x) * static_cast<double>(y);
        }
        m.b = 0;
        m.a = sxx0 > 0 ? std::max(0.0, sxy0 / sxx0) : 0;
    }

    double ss_res = 0, ss_tot = 0;
    for (const auto& [x, y] : samples) {
        const double fit = m.a * static_cast<double>(x) + m.b;
        ss_res += (static_cast<double>(y) - fit) * (static_cast<double>(y) - fit);
        ss_tot += (static_cast<double>(y) - my) * (static_cast<double>(y) - my);
    }
    m.r_squared = ss_tot > 0 ? 1.0 - ss_res / ss_tot : (ss_res == 0 ? 1.0 : 0.0);
    return m;
}

const LinearModel& CastCostModel::model(const CastKey& key) const {
    auto it = models_.find(key);
    if (it == models_.end())
        fail(ErrorKind::MissingModel,
             std::string("no cast model for ") + precision_name(key.src) + "->" +
                 precision_name(key.dst) + " " + cast_scheme_name(key.scheme));
    return it->second;
}

std::int64_t CastCostModel::predict(Precision src, Precision dst, std::int64_t numel) const {
    if (numel < 0) fail(ErrorKind::Domain, "negative tensor size in cast prediction");
    if (src == dst) return 0;
    const LinearModel& m = model({src, dst, cast_scheme_for(src, dst)});
    return static_cast<std::int64_t>(std::llround(m.a * static_cast<double>(numel) + m.b));
}

std::int64_t predict_cast_cost(const CastCostModel& model, Precision src, Precision dst,
                               std::int64_t numel) {
    return model.predict(src, dst, numel);
}

bool OpCostProfile::has(const std::string& op, Precision p) const {
    auto it = entries_.find(op);
    return it != entries_.end() && it->second.count(p) > 0;
}

const OpCostEntry& OpCostProfile::at(const std::string& op, Precision p) const {
    auto it = entries_.find(op);
    if (it != entries_.end()) {
        auto jt = it->second.find(p);
        if (jt != it->second.end()) return jt->second;
    }
    fail(ErrorKind::MissingProfile,
         "no cost entry for operator \"" + op + "\" at " + precision_name(p));
}

namespace {

void mean_field(std::optional<double> OpStats::* field, const std::vector<const OpStats*>& snaps,
                OpStats& out) {
    double sum = 0;
    int count = 0;
    for (const OpStats* s : snaps)
        if ((s->*field).has_value()) {
            sum += *(s->*field);
            ++count;
        }
    if (count > 0) out.*field = sum / count;
}

} // namespace

TensorStats reduce_stats(const std::vector<TensorStats>& per_iteration, int window) {
    if (per_iteration.empty()) fail(ErrorKind::Domain, "no tensor statistics snapshots to reduce");
    if (window < 1) fail(ErrorKind::Domain, "statistics window must be at least 1");
    const std::size_t take = std::min<std::size_t>(window, per_iteration.size());

    std::set<std::string> ops;
    for (std::size_t i = 0; i < take; ++i)
        for (const auto& [op, s] : per_iteration[i].per_op) ops.insert(op);

    static constexpr std::optional<double> OpStats::* kFields[] = {
        &OpStats::norm_w_sq,   &OpStats::norm_act_sq, &OpStats::norm_grad_act_sq,
        &OpStats::norm_grad_act_hat_sq, &OpStats::d_act, &OpStats::d_w,
        &OpStats::d_grad,      &OpStats::q_act,       &OpStats::q_w,
        &OpStats::e_act,       &OpStats::e_w,         &OpStats::e_grad,
    };

    TensorStats out;
    for (const std::string& op : ops) {
        std::vector<const OpStats*> snaps;
        for (std::size_t i = 0; i < take; ++i) {
            auto it = per_iteration[i].per_op.find(op);
            if (it != per_iteration[i].per_op.end()) snaps.push_back(&it->second);
        }
        OpStats reduced;
        for (auto field : kFields) mean_field(field, snaps, reduced);
        out.per_op[op] = reduced;
    }
    return out;
}

int CommProfile::slot_count() const {
    int n = -1;
    for (const auto& [device, slots] : per_device) {
        if (n == -1) n = static_cast<int>(slots.size());
        if (static_cast<int>(slots.size()) != n)
            fail(ErrorKind::Topology, "device \"" + device + "\" reports " +
                                          std::to_string(slots.size()) +
                                          " communication slots but others report " +
                                          std::to_string(n));
    }
    return n == -1 ? 0 : n;
}

const DeviceSpec& ProfileBundle::device(const std::string& id) const {
    for (const DeviceSpec& d : devices)
        if (d.id == id) return d;
    fail(ErrorKind::Reference, "unknown device \"" + id + "\"");
}

std::vector<std::string> ProfileBundle::inference_device_ids() const {
    std::vector<std::string> out;
    for (const DeviceSpec& d : devices)
        if (d.is_inference) out.push_back(d.id);
    return out;
}

namespace {

[[noreturn]] void fail_at(const std::string& pointer, const std::string& what) {
    fail(ErrorKind::Validation, what + " at " + pointer);
}

const nlohmann::json& require(const nlohmann::json& j, const char* key,
                              const std::string& pointer) {
    if (!j.is_object() || !j.contains(key)) fail_at(pointer + "/" + key, "missing required key");
    return j.at(key);
}

std::int64_t require_int(const nlohmann::json& j, const char* key, const std::string& pointer) {
    const nlohmann::json& v = require(j, key, pointer);
    if (!v.is_number_integer()) fail_at(pointer + "/" + key, "expected an integer");
    return v.get<std::int64_t>();
}

/// Conversion keys a bundle must provide samples for, given which precisions
/// any operator supports. Float pairs in both directions when FP16 appears;
/// quantize/dequantize pairs when INT8 appears; FP16->INT8 quantization only
/// when both appear.
std::set<CastKey> required_cast_keys(const PrecisionDag& graph) {
    std::set<Precision> supported;
    for (const auto& [id, n] : graph.nodes())
        for (Precision p : n.supported_precisions) supported.insert(p);
    std::set<CastKey> keys;
    if (supported.count(Precision::Fp16)) {
        keys.insert({Precision::Fp32, Precision::Fp16, CastScheme::FloatToFloat});
        keys.insert({Precision::Fp16, Precision::Fp32, CastScheme::FloatToFloat});
    }
    if (supported.count(Precision::Int8)) {
        keys.insert({Precision::Fp32, Precision::Int8, CastScheme::QuantizeFixed});
        keys.insert({Precision::Int8, Precision::Fp32, CastScheme::DequantizeFixed});
        if (supported.count(Precision::Fp16))
            keys.insert({Precision::Fp16, Precision::Int8, CastScheme::QuantizeFixed});
    }
    return keys;
}

OpStats op_stats_from_json(const nlohmann::json& j, const std::string& pointer) {
    static const std::map<std::string, std::optional<double> OpStats::*> kFieldNames = {
        {"norm_w_sq", &OpStats::norm_w_sq},
        {"norm_act_sq", &OpStats::norm_act_sq},
        {"norm_grad_act_sq", &OpStats::norm_grad_act_sq},
        {"norm_grad_act_hat_sq", &OpStats::norm_grad_act_hat_sq},
        {"d_act", &OpStats::d_act},
        {"d_w", &OpStats::d_w},
        {"d_grad", &OpStats::d_grad},
        {"q_act", &OpStats::q_act},
        {"q_w", &OpStats::q_w},
        {"e_act", &OpStats::e_act},
        {"e_w", &OpStats::e_w},
        {"e_grad", &OpStats::e_grad},
    };
    OpStats s;
    for (const auto& [key, value] : j.items()) {
        auto it = kFieldNames.find(key);
        if (it == kFieldNames.end()) fail_at(pointer + "/" + key, "unknown statistics field");
        if (!value.is_number()) fail_at(pointer + "/" + key, "expected a number");
        s.*(it->second) = value.get<double>();
    }
    if (s.norm_w_sq && *s.norm_w_sq < 0) fail_at(pointer + "/norm_w_sq", "norm must be >= 0");
    if (s.norm_act_sq && *s.norm_act_sq < 0) fail_at(pointer + "/norm_act_sq", "norm must be >= 0");
    if (s.norm_grad_act_sq && *s.norm_grad_act_sq < 0)
        fail_at(pointer + "/norm_grad_act_sq", "norm must be >= 0");
    if (s.q_act && *s.q_act <= 0) fail_at(pointer + "/q_act", "scaling factor must be > 0");
    if (s.q_w && *s.q_w <= 0) fail_at(pointer + "/q_w", "scaling factor must be > 0");
    return s;
}

nlohmann::json op_stats_to_json(const OpStats& s) {
    nlohmann::json j = nlohmann::json::object();
    auto put = [&](const char* key, const std::optional<double>& v) {
        if (v) j[key] = *v;
    };
    put("norm_w_sq", s.norm_w_sq);
    put("norm_act_sq", s.norm_act_sq);
    put("norm_grad_act_sq", s.norm_grad_act_sq);
    put("norm_grad_act_hat_sq", s.norm_grad_act_hat_sq);
    put("d_act", s.d_act);
    put("d_w", s.d_w);
    put("d_grad", s.d_grad);
    put("q_act", s.q_act);
    put("q_w", s.q_w);
    put("e_act", s.e_act);
    put("e_w", s.e_w);
    put("e_grad", s.e_grad);
    return j;
}

} // namespace

ProfileBundle bundle_from_json(const nlohmann::json& j) {
    if (!j.is_object()) fail_at("", "bundle must be a JSON object");
    const std::int64_t version = require_int(j, "schema_version", "");
    if (version != 1)
        fail_at("/schema_version", "unsupported schema version " + std::to_string(version));

    ProfileBundle b;
    b.graph = graph_from_json(require(j, "graph", ""));

    const nlohmann::json& costs = require(j, "op_costs", "");
    for (const auto& [op, per_precision] : costs.items()) {
        if (!b.graph.nodes().count(op))
            fail(ErrorKind::Reference, "op_costs entry for unknown operator \"" + op + "\"");
        for (const auto& [pname, entry] : per_precision.items()) {
            const std::string pointer = "/op_costs/" + op + "/" + pname;
            const Precision p = parse_precision(pname);
            if (!b.graph.node(op).supports(p))
                fail_at(pointer, "cost entry for unsupported precision");
            OpCostEntry e;
            e.pure_cost_ns = require_int(entry, "pure_cost_ns", pointer);
            e.memory_bytes = require_int(entry, "memory_bytes", pointer);
            if (entry.contains("fwd_fraction")) {
                e.fwd_fraction = entry.at("fwd_fraction").get<double>();
                if (e.fwd_fraction < 0 || e.fwd_fraction > 1)
                    fail_at(pointer + "/fwd_fraction", "fraction must lie in [0, 1]");
            }
            if (e.pure_cost_ns <= 0) fail_at(pointer + "/pure_cost_ns", "cost must be > 0");
            if (e.memory_bytes < 0) fail_at(pointer + "/memory_bytes", "memory must be >= 0");
            b.op_costs.set(op, p, e);
        }
    }
    for (const auto& [id, n] : b.graph.nodes())
        for (Precision p : n.supported_precisions)
            if (!b.op_costs.has(id, p))
                fail(ErrorKind::Validation, "missing op_costs entry for operator \"" + id +
                                                "\" at " + precision_name(p));

    const nlohmann::json& samples = require(j, "cast_samples", "");
    if (!samples.is_array()) fail_at("/cast_samples", "expected an array");
    std::map<CastKey, std::vector<std::pair<std::int64_t, std::int64_t>>> by_key;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const std::string pointer = "/cast_samples/" + std::to_string(i);
        const nlohmann::json& js = samples.at(i);
        CastSample s;
        s.src = parse_precision(require(js, "src", pointer).get<std::string>());
        s.dst = parse_precision(require(js, "dst", pointer).get<std::string>());
        s.scheme = parse_cast_scheme(require(js, "scheme", pointer).get<std::string>());
        s.numel = require_int(js, "numel", pointer);
        s.measured_ns = require_int(js, "measured_ns", pointer);
        if (s.numel < 0) fail_at(pointer + "/numel", "tensor size must be >= 0");
        if (s.measured_ns < 0) fail_at(pointer + "/measured_ns", "duration must be >= 0");
        if (s.scheme != cast_scheme_for(s.src, s.dst))
            fail_at(pointer + "/scheme", "scheme does not match the precision pair");
        by_key[{s.src, s.dst, s.scheme}].emplace_back(s.numel, s.measured_ns);
        b.cast_samples.push_back(s);
    }
    for (const CastKey& key : required_cast_keys(b.graph)) {
        auto it = by_key.find(key);
        if (it == by_key.end() || it->second.size() < 2)
            fail(ErrorKind::Validation,
                 std::string("need at least 2 cast samples for ") + precision_name(key.src) +
                     "->" + precision_name(key.dst) + " " + cast_scheme_name(key.scheme));
    }
    for (const auto& [key, pairs] : by_key) {
        if (pairs.size() < 2)
            fail(ErrorKind::Validation,
                 std::string("need at least 2 cast samples for ") + precision_name(key.src) +
                     "->" + precision_name(key.dst) + " " + cast_scheme_name(key.scheme));
        b.cast_model.set(key, fit_cast_model(pairs));
    }

    if (j.contains("tensor_stats")) {
        const nlohmann::json& stats = j.at("tensor_stats");
        if (!stats.is_array()) fail_at("/tensor_stats", "expected an array of snapshots");
        for (std::size_t i = 0; i < stats.size(); ++i) {
            TensorStats snap;
            for (const auto& [op, fields] : stats.at(i).items()) {
                if (!b.graph.nodes().count(op))
                    fail(ErrorKind::Reference,
                         "tensor_stats entry for unknown operator \"" + op + "\"");
                snap.per_op[op] =
                    op_stats_from_json(fields, "/tensor_stats/" + std::to_string(i) + "/" + op);
            }
            b.tensor_stats.push_back(std::move(snap));
        }
    }

    const nlohmann::json& devices = require(j, "devices", "");
    if (!devices.is_array() || devices.empty()) fail_at("/devices", "expected a nonempty array");
    std::set<std::string> device_ids;
    for (std::size_t i = 0; i < devices.size(); ++i) {
        const std::string pointer = "/devices/" + std::to_string(i);
        const nlohmann::json& jd = devices.at(i);
        DeviceSpec d;
        d.id = require(jd, "id", pointer).get<std::string>();
        d.is_inference = require(jd, "is_inference", pointer).get<bool>();
        d.mem_capacity_bytes = require_int(jd, "mem_capacity_bytes", pointer);
        if (d.mem_capacity_bytes <= 0) fail_at(pointer + "/mem_capacity_bytes", "must be > 0");
        if (!device_ids.insert(d.id).second) fail_at(pointer + "/id", "duplicate device id");
        b.devices.push_back(std::move(d));
    }

    if (j.contains("comm")) {
        const nlohmann::json& comm = j.at("comm");
        if (!comm.is_object()) fail_at("/comm", "expected an object keyed by device id");
        for (const auto& [device, slots] : comm.items()) {
            const std::string pointer = "/comm/" + device;
            if (!device_ids.count(device))
                fail(ErrorKind::Reference, "comm entry for unknown device \"" + device + "\"");
            if (!slots.is_array()) fail_at(pointer, "expected an array of slots");
            for (std::size_t i = 0; i < slots.size(); ++i) {
                const std::string sp = pointer + "/" + std::to_string(i);
                const nlohmann::json& js = slots.at(i);
                CommSlot s;
                s.earliest_ready_offset_ns = require_int(js, "earliest_ready_offset_ns", sp);
                s.duration_ns = require_int(js, "duration_ns", sp);
                s.bucket_bytes = require_int(js, "bucket_bytes", sp);
                if (s.earliest_ready_offset_ns < 0) fail_at(sp, "ready offset must be >= 0");
                if (s.duration_ns <= 0) fail_at(sp, "slot duration must be > 0");
                b.comm.per_device[device].push_back(s);
            }
        }
        if (!b.comm.per_device.empty()) {
            for (const std::string& id : device_ids)
                if (!b.comm.per_device.count(id))
                    fail(ErrorKind::Topology, "device \"" + id + "\" missing from comm profile");
            b.comm.slot_count();
        }
    }
    return b;
}

nlohmann::json bundle_to_json(const ProfileBundle& b) {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["graph"] = graph_to_json(b.graph);

    nlohmann::json costs = nlohmann::json::object();
    for (const auto& [op, per_precision] : b.op_costs.entries()) {
        nlohmann::json jp = nlohmann::json::object();
        for (const auto& [p, e] : per_precision)
            jp[precision_name(p)] = {{"pure_cost_ns", e.pure_cost_ns},
                                     {"memory_bytes", e.memory_bytes},
                                     {"fwd_fraction", e.fwd_fraction}};
        costs[op] = std::move(jp);
    }
    j["op_costs"] = std::move(costs);

    nlohmann::json samples = nlohmann::json::array();
    for (const CastSample& s : b.cast_samples)
        samples.push_back({{"src", precision_name(s.src)},
                           {"dst", precision_name(s.dst)},
                           {"scheme", cast_scheme_name(s.scheme)},
                           {"numel", s.numel},
                           {"measured_ns", s.measured_ns}});
    j["cast_samples"] = std::move(samples);

    nlohmann::json stats = nlohmann::json::array();
    for (const TensorStats& snap : b.tensor_stats) {
        nlohmann::json js = nlohmann::json::object();
        for (const auto& [op, s] : snap.per_op) js[op] = op_stats_to_json(s);
        stats.push_back(std::move(js));
    }
    j["tensor_stats"] = std::move(stats);

    nlohmann::json comm = nlohmann::json::object();
    for (const auto& [device, slots] : b.comm.per_device) {
        nlohmann::json ja = nlohmann::json::array();
        for (const CommSlot& s : slots)
            ja.push_back({{"earliest_ready_offset_ns", s.earliest_ready_offset_ns},
                          {"duration_ns", s.duration_ns},
                          {"bucket_bytes", s.bucket_bytes}});
        comm[device] = std::move(ja);
    }
    j["comm"] = std::move(comm);

    nlohmann::json devices = nlohmann::json::array();
    for (const DeviceSpec& d : b.devices)
        devices.push_back({{"id", d.id},
                           {"is_inference", d.is_inference},
                           {"mem_capacity_bytes", d.mem_capacity_bytes}});
    j["devices"] = std::move(devices);
    return j;
}

ProfileBundle load_profile(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot open profile bundle \"" + path + "\"");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorKind::Validation, "malformed JSON in \"" + path + "\": " + e.what());
    }
    return bundle_from_json(j);
}

} // namespace qsync
