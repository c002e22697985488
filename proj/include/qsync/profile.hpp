#ifndef QSYNC_PROFILE_HPP
#define QSYNC_PROFILE_HPP

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "qsync/graph.hpp"
#include "qsync/precision.hpp"

namespace qsync {

/// Conversion kernels have distinct cost curves: plain float casts, fixed
/// point quantization (includes minmax collection), and dequantization.
enum class CastScheme { FloatToFloat = 0, QuantizeFixed = 1, DequantizeFixed = 2 };

const char* cast_scheme_name(CastScheme s);
CastScheme parse_cast_scheme(const std::string& name);

/// The scheme implied by a conversion's endpoints. src == dst never reaches
/// a model (predicted cost is zero), so it has no scheme.
CastScheme cast_scheme_for(Precision src, Precision dst);

struct CastKey {
    Precision src;
    Precision dst;
    CastScheme scheme;
    auto operator<=>(const CastKey&) const = default;
};

struct LinearModel {
    double a = 0.0;  // ns per element
    double b = 0.0;  // ns
    double r_squared = 1.0;
};

struct CastSample {
    Precision src;
    Precision dst;
    CastScheme scheme;
    std::int64_t numel = 0;
    std::int64_t measured_ns = 0;
};

/// Ordinary least squares on (numel, measured_ns) pairs, slope and intercept
/// clamped to >= 0 afterwards. R-squared is computed for the clamped model.
/// Raises degenerate-fit when every sample shares one numel.
LinearModel fit_cast_model(const std::vector<std::pair<std::int64_t, std::int64_t>>& samples);

class CastCostModel {
  public:
    void set(const CastKey& key, const LinearModel& model) { models_[key] = model; }
    bool has(const CastKey& key) const { return models_.count(key) > 0; }
    const LinearModel& model(const CastKey& key) const;
    const std::map<CastKey, LinearModel>& models() const { return models_; }

    /// a*numel + b for the implied (src, dst, scheme) key, rounded half-up
    /// to integer ns; 0 when src == dst.
    std::int64_t predict(Precision src, Precision dst, std::int64_t numel) const;

  private:
    std::map<CastKey, LinearModel> models_;
};

std::int64_t predict_cast_cost(const CastCostModel& model, Precision src, Precision dst,
                               std::int64_t numel);

struct OpCostEntry {
    std::int64_t pure_cost_ns = 0;   // forward + backward kernel time
    std::int64_t memory_bytes = 0;   // weights + saved activations + workspace
    double fwd_fraction = 1.0 / 3.0; // share of pure_cost_ns spent in forward
};

class OpCostProfile {
  public:
    void set(const std::string& op, Precision p, const OpCostEntry& e) { entries_[op][p] = e; }
    bool has(const std::string& op, Precision p) const;
    const OpCostEntry& at(const std::string& op, Precision p) const;
    const std::map<std::string, std::map<Precision, OpCostEntry>>& entries() const {
        return entries_;
    }

  private:
    std::map<std::string, std::map<Precision, OpCostEntry>> entries_;
};

/// Profiled tensor statistics for one operator, running means over the
/// profiling window. Norms are squared L2 norms; d_* are element counts;
/// q_* fixed-point scaling factors; e_* effective exponents. Absent fields
/// surface as stats-incomplete errors only when a formula needs them.
struct OpStats {
    std::optional<double> norm_w_sq;             // weight tensor
    std::optional<double> norm_act_sq;           // input activation
    std::optional<double> norm_grad_act_sq;      // activation gradient
    std::optional<double> norm_grad_act_hat_sq;  // quantization-affected gradient
    std::optional<double> d_act;
    std::optional<double> d_w;
    std::optional<double> d_grad;
    std::optional<double> q_act;
    std::optional<double> q_w;
    std::optional<double> e_act;
    std::optional<double> e_w;
    std::optional<double> e_grad;
};

struct TensorStats {
    std::map<std::string, OpStats> per_op;
};

/// Field-wise arithmetic mean of the first min(window, size) snapshots.
/// A field contributes where present; absent everywhere stays absent.
TensorStats reduce_stats(const std::vector<TensorStats>& per_iteration, int window = 50);

struct CommSlot {
    std::int64_t earliest_ready_offset_ns = 0;
    std::int64_t duration_ns = 0;
    std::int64_t bucket_bytes = 0;
};

struct CommProfile {
    std::map<std::string, std::vector<CommSlot>> per_device;

    // 0 when no device has slots; topology error on a mismatch.
    int slot_count() const;
};

struct DeviceSpec {
    std::string id;
    bool is_inference = false;
    std::int64_t mem_capacity_bytes = 0;
};

struct ProfileBundle {
    PrecisionDag graph;
    OpCostProfile op_costs;
    std::vector<CastSample> cast_samples;
    std::vector<TensorStats> tensor_stats;  // per-iteration snapshots
    CommProfile comm;
    std::vector<DeviceSpec> devices;
    CastCostModel cast_model;  // fitted from cast_samples at load

    const DeviceSpec& device(const std::string& id) const;
    std::vector<std::string> inference_device_ids() const;
    TensorStats reduced_stats(int window = 50) const { return reduce_stats(tensor_stats, window); }
};

ProfileBundle bundle_from_json(const nlohmann::json& j);
nlohmann::json bundle_to_json(const ProfileBundle& bundle);
ProfileBundle load_profile(const std::string& path);

} // namespace qsync

#endif
