#ifndef QSYNC_PRECISION_HPP
#define QSYNC_PRECISION_HPP

#include <optional>
#include <string>

#include "qsync/errors.hpp"

namespace qsync {

/// Numeric formats an operator kernel can execute in, ordered by bit width.
enum class Precision { Int8 = 0, Fp16 = 1, Fp32 = 2 };

enum class NumericClass { FixedPoint, FloatingPoint };

constexpr int kPrecisionCount = 3;

constexpr int bit_width(Precision p) {
    switch (p) {
        case Precision::Int8: return 8;
        case Precision::Fp16: return 16;
        case Precision::Fp32: return 32;
    }
    return 0;
}

constexpr NumericClass numeric_class(Precision p) {
    return p == Precision::Int8 ? NumericClass::FixedPoint : NumericClass::FloatingPoint;
}

/// Next-higher precision by bit width; empty above FP32.
constexpr std::optional<Precision> next_higher_precision(Precision p) {
    switch (p) {
        case Precision::Int8: return Precision::Fp16;
        case Precision::Fp16: return Precision::Fp32;
        case Precision::Fp32: return std::nullopt;
    }
    return std::nullopt;
}

inline const char* precision_name(Precision p) {
    switch (p) {
        case Precision::Int8: return "INT8";
        case Precision::Fp16: return "FP16";
        case Precision::Fp32: return "FP32";
    }
    return "?";
}

inline Precision parse_precision(const std::string& name) {
    if (name == "INT8") return Precision::Int8;
    if (name == "FP16") return Precision::Fp16;
    if (name == "FP32") return Precision::Fp32;
    fail(ErrorKind::Validation, "unknown precision \"" + name + "\"");
}

/// How an operator participates in precision planning.
enum class OperatorKind {
    Adjustable,  // compute-intensive or overflow-sensitive; precision set directly
    Dependent,   // precision dictated by unanimous input precisions
    Fixed,       // precision never changes (loss functions, data sources)
};

inline const char* operator_kind_name(OperatorKind k) {
    switch (k) {
        case OperatorKind::Adjustable: return "adjustable";
        case OperatorKind::Dependent: return "dependent";
        case OperatorKind::Fixed: return "fixed";
    }
    return "?";
}

inline OperatorKind parse_operator_kind(const std::string& name) {
    if (name == "adjustable") return OperatorKind::Adjustable;
    if (name == "dependent") return OperatorKind::Dependent;
    if (name == "fixed") return OperatorKind::Fixed;
    fail(ErrorKind::Validation, "unknown operator kind \"" + name + "\"");
}

} // namespace qsync

#endif
