#include "qsync/errors.hpp"

namespace qsync {

const char* error_kind_name(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::GraphCycle: return "graph-cycle";
        case ErrorKind::Validation: return "validation";
        case ErrorKind::Reference: return "reference";
        case ErrorKind::Domain: return "domain";
        case ErrorKind::MissingProfile: return "missing-profile";
        case ErrorKind::MissingModel: return "missing-model";
        case ErrorKind::DegenerateFit: return "degenerate-fit";
        case ErrorKind::StatsIncomplete: return "stats-incomplete";
        case ErrorKind::KindMismatch: return "kind-mismatch";
        case ErrorKind::Topology: return "topology";
        case ErrorKind::EnumerationLimit: return "enumeration-limit";
        case ErrorKind::Infeasible: return "infeasible";
        case ErrorKind::Io: return "io";
        case ErrorKind::Internal: return "internal";
    }
    return "unknown";
}

} // namespace qsync
