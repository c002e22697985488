#ifndef QSYNC_TESTS_FIXTURES_HPP
#define QSYNC_TESTS_FIXTURES_HPP

#include <random>
#include <string>
#include <vector>

#include "qsync/allocator.hpp"
#include "qsync/cost_mapper.hpp"
#include "qsync/graph.hpp"
#include "qsync/indicator.hpp"
#include "qsync/profile.hpp"
#include "qsync/replayer.hpp"

namespace qsync::testfx {

OperatorNode node(const std::string& id, OperatorKind kind, const std::string& subgraph,
                  std::int64_t output_numel, std::int64_t weight_numel,
                  std::vector<Precision> supported);

/// Cast model with all five conversion keys on exact lines.
CastCostModel simple_cast_model(double f2f_a = 1, double f2f_b = 100, double quant_a = 2,
                                double quant_b = 200, double dequant_a = 1,
                                double dequant_b = 120);

/// Chain src -> linear -> relu -> sink used for the worked casting examples:
/// src is a fixed FP32 source with 1000 output elements, linear is adjustable
/// with a 2000-element weight, relu is dependent, sink is fixed FP32.
struct ChainFixture {
    PrecisionDag dag;
    OpCostProfile costs;
    CastCostModel cast;
};
ChainFixture make_chain_fixture();

/// Two-device bundle (training "trainer" + inference "infer") with three
/// FP16-capable convolution blocks, two all-reduce slots, and statistics.
/// The training device paces the iteration, leaving the inference device
/// idle before each slot under a uniform FP16 plan.
ProfileBundle make_hybrid_bundle();

/// Uniform-FP16 inference plan for make_hybrid_bundle.
PrecisionPlan hybrid_uniform_fp16_plan(const ProfileBundle& bundle);

struct RandomGraph {
    PrecisionDag dag;
    OpCostProfile costs;
    CastCostModel cast;
};

/// Random DAG of up to max_nodes operators with mixed kinds, supported
/// precision ladders, full cost coverage and a random cast model. Dependent
/// and fixed operators carry no weights; memory is monotone in precision.
RandomGraph random_graph(std::mt19937_64& rng, int max_nodes = 30);

/// Random multi-device DFG for replayer oracle runs: up to 4 devices, up to
/// 50 events per device, up to 5 communication slots hooked to random
/// backward events (not necessarily in chronological slot order).
GlobalDfg random_global_dfg(std::mt19937_64& rng);

/// Random 2-device allocation problem with at most `max_adjustable`
/// adjustable operators, all of them scored; caps always admit the
/// lowest-precision plan. Dependent/fixed memory is precision-independent so
/// per-subgraph budgets stay achievable under cascades.
ProfileBundle random_alloc_bundle(std::mt19937_64& rng, int max_adjustable = 6);

LossSpec random_loss(std::mt19937_64& rng);

/// Sum over devices and slots of (slot start - device bucket readiness): how
/// long finished buckets sat waiting for the global slot to open.
std::int64_t device_comm_wait(const Timeline& t, const std::string& device);

} // namespace qsync::testfx

#endif
