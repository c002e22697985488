#ifndef QSYNC_ERRORS_HPP
#define QSYNC_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace qsync {

/// Classification of every error the planner can raise. The CLI maps
/// Infeasible to exit 3, Internal to exit 4 and everything else to exit 2.
enum class ErrorKind {
    GraphCycle,        // edge relation is not acyclic
    Validation,        // schema or invariant violation in an input
    Reference,         // dangling operator / device id
    Domain,            // argument outside the operation's domain
    MissingProfile,    // no (op, precision) cost entry
    MissingModel,      // no fitted cast model for a (src, dst, scheme) key
    DegenerateFit,     // all cast samples share one tensor size
    StatsIncomplete,   // tensor statistics lack a field the indicator needs
    KindMismatch,      // operation applied to the wrong operator kind
    Topology,          // device/slot structure mismatch in the global DFG
    EnumerationLimit,  // subgraph too large for brute-force initialization
    Infeasible,        // no plan satisfies the memory/throughput constraints
    Io,                // file read/write failure
    Internal,          // invariant violation inside the planner itself
};

const char* error_kind_name(ErrorKind kind);

class Error : public std::runtime_error {
  public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(error_kind_name(kind)) + ": " + message),
          kind_(kind) {}

    ErrorKind kind() const { return kind_; }

  private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

} // namespace qsync

#endif
