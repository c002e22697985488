#ifndef QSYNC_INDICATOR_HPP
#define QSYNC_INDICATOR_HPP

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "qsync/graph.hpp"
#include "qsync/profile.hpp"

namespace qsync {

/// Gradient prefactor of the configured loss. gamma enters the perturbation
/// score squared, so only its magnitude pattern matters.
enum class LossKind { MseMean, CeMean, GenericNegone };

const char* loss_kind_name(LossKind k);
LossKind parse_loss_kind(const std::string& name);

struct LossSpec {
    LossKind kind = LossKind::GenericNegone;
    std::int64_t n = 1;  // batch denominator

    double gamma() const;
};

/// Mantissa bits kept when rounding to FP16.
constexpr int kFp16MantissaBits = 9;

/// Variance of stochastically rounding a D-element tensor on a fixed-point
/// grid with scaling factor q: q^2 * D / 6.
double fixed_point_tensor_variance(double q, double d);

/// Same bound for a floating-point grid at effective exponent e with k
/// mantissa bits kept: 2^(2e) * 2^(-2k) * D / 6.
double float_tensor_variance(double e, int k, double d);

/// Forward-pass variance increment of running one operator at precision p.
/// Operators with weights combine the weight and activation terms; parameter
/// free operators are bounded by their input tensor's quantization variance.
/// FP32 contributes nothing.
double sigma_fwd(const OpStats& stats, Precision p, const std::string& op, bool parameter_free,
                 int k = kFp16MantissaBits);

/// Backward-pass variance increment. Fixed-point kernels run their backward
/// in FP16, so the INT8 branch mixes both grids. Zero for parameter-free
/// operators and for FP32.
double sigma_bwd(const OpStats& stats, Precision p, const std::string& op, bool parameter_free,
                 int k = kFp16MantissaBits);

/// Perturbation score: gamma^2 * d_o * sigma_fwd + (d_L - d_o) * sigma_bwd.
double omega(const OperatorNode& node, Precision p, int d_l, const LossSpec& loss,
             const TensorStats& stats, int k = kFp16MantissaBits);

struct ScoreEntry {
    double omega = 0.0;
    std::optional<double> delta_to_next;  // omega(b) - omega(ADD(b)), when ADD(b) is supported
};

struct PerturbationTable {
    std::map<std::string, std::map<Precision, ScoreEntry>> per_op;

    double omega_of(const std::string& op, Precision p) const;
};

/// Scores every (adjustable operator, supported precision) pair. Dependent
/// and fixed operators carry zero at all precisions; their perturbation is
/// already attributed to the adjustable producers feeding them.
PerturbationTable score_all(const PrecisionDag& dag, const TensorStats& stats,
                            const LossSpec& loss, int k = kFp16MantissaBits);

nlohmann::json table_to_json(const PerturbationTable& table);

struct StochasticRoundResult {
    std::vector<std::int64_t> rounded;
    std::vector<double> dequantized;
};

/// Quantize-dequantize with stochastic rounding: xbar = (x - zp) / q, round
/// up with probability frac(xbar). Unbiased by construction; the seed makes
/// runs reproducible.
StochasticRoundResult stochastic_round(const std::vector<double>& values, double q, double zp,
                                       std::uint64_t seed);

/// Floating-point counterpart: stochastic rounding onto the mantissa grid of
/// exponent e with k bits kept (spacing 2^(e-k)).
std::vector<double> stochastic_round_float(const std::vector<double>& values, int e, int k,
                                           std::uint64_t seed);

} // namespace qsync

#endif
