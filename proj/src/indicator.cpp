#include "qsync/indicator.hpp"

#include <cmath>

#include "qsync/rng.hpp"

namespace qsync {

const char* loss_kind_name(LossKind k) {
    switch (k) {
        case LossKind::MseMean: return "mse_mean";
        case LossKind::CeMean: return "ce_mean";
        case LossKind::GenericNegone: return "generic_negone";
    }
    return "?";
}

LossKind parse_loss_kind(const std::string& name) {
    if (name == "mse_mean") return LossKind::MseMean;
    if (name == "ce_mean") return LossKind::CeMean;
    if (name == "generic_negone") return LossKind::GenericNegone;
    fail(ErrorKind::Validation, "unknown loss kind \"" + name + "\"");
}

double LossSpec::gamma() const {
    if (n < 1) fail(ErrorKind::Domain, "loss batch denominator must be at least 1");
    switch (kind) {
        case LossKind::MseMean: return 2.0 / static_cast<double>(n);
        case LossKind::CeMean: return 1.0 / static_cast<double>(n);
        case LossKind::GenericNegone: return -1.0;
    }
    return -1.0;
}

double fixed_point_tensor_variance(double q, double d) {
    if (q <= 0) fail(ErrorKind::Domain, "fixed-point scaling factor must be > 0");
    if (d < 0) fail(ErrorKind::Domain, "element count must be >= 0");
    return q * q * d / 6.0;
}

double float_tensor_variance(double e, int k, double d) {
    if (k < 1) fail(ErrorKind::Domain, "mantissa bit count must be at least 1");
    if (d < 0) fail(ErrorKind::Domain, "element count must be >= 0");
    return std::exp2(2.0 * e) * std::exp2(-2.0 * k) * d / 6.0;
}

namespace {

double need(const std::optional<double>& field, const char* name, const std::string& op) {
    if (!field)
        fail(ErrorKind::StatsIncomplete,
             "operator \"" + op + "\" is missing statistic " + name);
    return *field;
}

/// The quantization-affected gradient norm falls back to the plain gradient
/// norm when it was not profiled separately.
double grad_hat_norm(const OpStats& s, const std::string& op) {
    if (s.norm_grad_act_hat_sq) return *s.norm_grad_act_hat_sq;
    return need(s.norm_grad_act_sq, "norm_grad_act_sq", op);
}

} // namespace

double sigma_fwd(const OpStats& s, Precision p, const std::string& op, bool parameter_free,
                 int k) {
    if (p == Precision::Fp32) return 0.0;
    if (parameter_free) {
        const double d_act = need(s.d_act, "d_act", op);
        if (p == Precision::Int8)
            return fixed_point_tensor_variance(need(s.q_act, "q_act", op), d_act);
        return float_tensor_variance(need(s.e_act, "e_act", op), k, d_act);
    }
    const double norm_w = need(s.norm_w_sq, "norm_w_sq", op);
    const double norm_act = need(s.norm_act_sq, "norm_act_sq", op);
    const double d_act = need(s.d_act, "d_act", op);
    const double d_w = need(s.d_w, "d_w", op);
    if (p == Precision::Int8) {
        const double q_act = need(s.q_act, "q_act", op);
        const double q_w = need(s.q_w, "q_w", op);
        return (norm_w * q_act * q_act * d_act + norm_act * q_w * q_w * d_w) / 6.0;
    }
    const double eps_sq = std::exp2(-2.0 * k);
    const double e_act = need(s.e_act, "e_act", op);
    const double e_w = need(s.e_w, "e_w", op);
    return eps_sq *
           (norm_w * std::exp2(2.0 * e_act) * d_act + norm_act * std::exp2(2.0 * e_w) * d_w) /
           6.0;
}

double sigma_bwd(const OpStats& s, Precision p, const std::string& op, bool parameter_free,
                 int k) {
    if (p == Precision::Fp32 || parameter_free) return 0.0;
    const double norm_act = need(s.norm_act_sq, "norm_act_sq", op);
    const double d_act = need(s.d_act, "d_act", op);
    const double d_grad = need(s.d_grad, "d_grad", op);
    const double e_grad = need(s.e_grad, "e_grad", op);
    const double eps_sq = std::exp2(-2.0 * k);
    if (p == Precision::Int8) {
        // Backward of a fixed-point kernel runs in FP16: the activation
        // gradient keeps the fixed-point grid of the saved activations while
        // the incoming gradient sits on the FP16 grid.
        const double norm_grad = need(s.norm_grad_act_sq, "norm_grad_act_sq", op);
        const double q_act = need(s.q_act, "q_act", op);
        return (norm_grad * q_act * q_act * d_act +
                norm_act * std::exp2(2.0 * e_grad) * eps_sq * d_grad) /
               6.0;
    }
    const double e_act = need(s.e_act, "e_act", op);
    return eps_sq *
           (grad_hat_norm(s, op) * std::exp2(2.0 * e_act) * d_act +
            norm_act * std::exp2(2.0 * e_grad) * d_grad) /
           6.0;
}

double omega(const OperatorNode& node, Precision p, int d_l, const LossSpec& loss,
             const TensorStats& stats, int k) {
    if (p == Precision::Fp32) return 0.0;
    if (node.depth < 1 || node.depth > d_l)
        fail(ErrorKind::Domain, "operator \"" + node.id + "\" has depth " +
                                    std::to_string(node.depth) + " outside [1, " +
                                    std::to_string(d_l) + "]");
    auto it = stats.per_op.find(node.id);
    if (it == stats.per_op.end())
        fail(ErrorKind::StatsIncomplete, "operator \"" + node.id + "\" has no statistics");
    const bool parameter_free = !node.has_weight;
    const double g = loss.gamma();
    const double fwd = sigma_fwd(it->second, p, node.id, parameter_free, k);
    const double bwd = sigma_bwd(it->second, p, node.id, parameter_free, k);
    return g * g * static_cast<double>(node.depth) * fwd +
           static_cast<double>(d_l - node.depth) * bwd;
}

double PerturbationTable::omega_of(const std::string& op, Precision p) const {
    auto it = per_op.find(op);
    if (it != per_op.end()) {
        auto jt = it->second.find(p);
        if (jt != it->second.end()) return jt->second.omega;
    }
    fail(ErrorKind::Reference,
         "no perturbation score for operator \"" + op + "\" at " + precision_name(p));
}

PerturbationTable score_all(const PrecisionDag& dag, const TensorStats& stats,
                            const LossSpec& loss, int k) {
    PerturbationTable table;
    const int d_l = dag.model_depth();
    for (const auto& [id, node] : dag.nodes()) {
        std::map<Precision, ScoreEntry>& row = table.per_op[id];
        for (Precision p : node.supported_precisions) {
            ScoreEntry entry;
            entry.omega =
                node.kind == OperatorKind::Adjustable ? omega(node, p, d_l, loss, stats, k) : 0.0;
            row[p] = entry;
        }
        for (auto& [p, entry] : row) {
            const std::optional<Precision> next = next_higher_precision(p);
            if (next && row.count(*next)) entry.delta_to_next = entry.omega - row.at(*next).omega;
        }
    }
    return table;
}

nlohmann::json table_to_json(const PerturbationTable& table) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& [op, row] : table.per_op)
        for (const auto& [p, entry] : row) {
            nlohmann::json r = {{"op", op}, {"precision", precision_name(p)},
                                {"omega", entry.omega}};
            if (entry.delta_to_next) r["delta_to_next"] = *entry.delta_to_next;
            rows.push_back(std::move(r));
        }
    return rows;
}

StochasticRoundResult stochastic_round(const std::vector<double>& values, double q, double zp,
                                       std::uint64_t seed) {
    if (q <= 0) fail(ErrorKind::Domain, "stochastic rounding needs a scaling factor > 0");
    std::mt19937_64 rng(seed);
    StochasticRoundResult r;
    r.rounded.reserve(values.size());
    r.dequantized.reserve(values.size());
    for (double x : values) {
        const double xbar = (x - zp) / q;
        const double lo = std::floor(xbar);
        const double frac = xbar - lo;
        const double up = uniform01(rng) < frac ? 1.0 : 0.0;
        const std::int64_t rounded = static_cast<std::int64_t>(lo) + static_cast<std::int64_t>(up);
        r.rounded.push_back(rounded);
        r.dequantized.push_back(q * static_cast<double>(rounded) + zp);
    }
    return r;
}

std::vector<double> stochastic_round_float(const std::vector<double>& values, int e, int k,
                                           std::uint64_t seed) {
    if (k < 1) fail(ErrorKind::Domain, "mantissa bit count must be at least 1");
    const double spacing = std::exp2(static_cast<double>(e - k));
    return stochastic_round(values, spacing, 0.0, seed).dequantized;
}

} // namespace qsync
