#ifndef QSYNC_CLI_HPP
#define QSYNC_CLI_HPP

#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <string>

#include "qsync/indicator.hpp"

namespace qsync {

struct Config {
    std::string bundle_path;
    LossKind loss = LossKind::GenericNegone;
    std::int64_t loss_n = 1;
    int window = 50;
    std::map<std::string, std::int64_t> mem_caps;  // device id -> bytes
    std::optional<double> t_min;
    bool t_min_uniform_lowest = false;
    int b_max = 8;
    std::string out_path;
    std::string trace_out;
    std::string plan_path;
    std::string samples_path;
    std::uint64_t seed = 42;
    bool sr_check = false;
};

int cmd_indicate(const Config& config, std::ostream& out);
int cmd_replay(const Config& config, std::ostream& out);
int cmd_plan(const Config& config, std::ostream& out);
int cmd_fit_cast(const Config& config, std::ostream& out);

/// Full command-line entry point. Streams are injected so tests can capture
/// byte-exact output. Exit codes: 0 ok, 2 input error, 3 infeasible,
/// 4 internal invariant violation.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace qsync

#endif
