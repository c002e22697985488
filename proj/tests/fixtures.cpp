#include "fixtures.hpp"

#include <algorithm>
#include <cmath>

#include "qsync/rng.hpp"

namespace qsync::testfx {

namespace {

int randint(std::mt19937_64& rng, int lo, int hi) {
    return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
}

std::int64_t randint64(std::mt19937_64& rng, std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
}

double randreal(std::mt19937_64& rng, double lo, double hi) {
    return lo + uniform01(rng) * (hi - lo);
}

std::string op_name(int i) {
    std::string num = std::to_string(i);
    return "op" + std::string(num.size() < 2 ? 2 - num.size() : 0, '0') + num;
}

/// First k elements of a Fisher-Yates pass over 0..n-1.
std::vector<int> sample_indices(std::mt19937_64& rng, int n, int k) {
    std::vector<int> all(n);
    for (int i = 0; i < n; ++i) all[i] = i;
    for (int i = 0; i < k; ++i) {
        int j = i + static_cast<int>(rng() % static_cast<std::uint64_t>(n - i));
        std::swap(all[i], all[j]);
    }
    all.resize(k);
    return all;
}

} // namespace

OperatorNode node(const std::string& id, OperatorKind kind, const std::string& subgraph,
                  std::int64_t output_numel, std::int64_t weight_numel,
                  std::vector<Precision> supported) {
    OperatorNode n;
    n.id = id;
    n.kind = kind;
    n.subgraph_id = subgraph;
    n.output_numel = output_numel;
    n.has_weight = weight_numel > 0;
    n.weight_numel = weight_numel;
    n.supported_precisions = std::move(supported);
    return n;
}

CastCostModel simple_cast_model(double f2f_a, double f2f_b, double quant_a, double quant_b,
                                double dequant_a, double dequant_b) {
    CastCostModel m;
    LinearModel f2f{f2f_a, f2f_b, 1.0};
    LinearModel quant{quant_a, quant_b, 1.0};
    LinearModel dequant{dequant_a, dequant_b, 1.0};
    m.set({Precision::Fp32, Precision::Fp16, CastScheme::FloatToFloat}, f2f);
    m.set({Precision::Fp16, Precision::Fp32, CastScheme::FloatToFloat}, f2f);
    m.set({Precision::Fp32, Precision::Int8, CastScheme::QuantizeFixed}, quant);
    m.set({Precision::Fp16, Precision::Int8, CastScheme::QuantizeFixed}, quant);
    m.set({Precision::Int8, Precision::Fp32, CastScheme::DequantizeFixed}, dequant);
    return m;
}

ChainFixture make_chain_fixture() {
    std::vector<Precision> all3{Precision::Int8, Precision::Fp16, Precision::Fp32};
    std::vector<OperatorNode> nodes{
        node("src", OperatorKind::Fixed, "s0", 1000, 0, {Precision::Fp32}),
        node("linear", OperatorKind::Adjustable, "s0", 800, 2000, all3),
        node("relu", OperatorKind::Dependent, "s0", 800, 0, all3),
        node("sink", OperatorKind::Fixed, "s0", 10, 0, {Precision::Fp32}),
    };
    std::vector<std::pair<std::string, std::string>> edges{
        {"src", "linear"}, {"linear", "relu"}, {"relu", "sink"}};
    std::map<std::string, Precision> fp32;
    for (const auto& n : nodes) fp32[n.id] = Precision::Fp32;

    ChainFixture f;
    f.dag = build_dag(std::move(nodes), std::move(edges), std::move(fp32));
    f.costs.set("src", Precision::Fp32, {300, 1000, 1.0 / 3.0});
    f.costs.set("linear", Precision::Fp32, {3000, 4000, 1.0 / 3.0});
    f.costs.set("linear", Precision::Fp16, {1500, 2000, 1.0 / 3.0});
    f.costs.set("linear", Precision::Int8, {900, 1000, 1.0 / 3.0});
    f.costs.set("relu", Precision::Fp32, {600, 800, 1.0 / 3.0});
    f.costs.set("relu", Precision::Fp16, {300, 400, 1.0 / 3.0});
    f.costs.set("relu", Precision::Int8, {200, 200, 1.0 / 3.0});
    f.costs.set("sink", Precision::Fp32, {150, 500, 1.0 / 3.0});
    f.cast = simple_cast_model();
    return f;
}

ProfileBundle make_hybrid_bundle() {
    std::vector<Precision> fp{Precision::Fp16, Precision::Fp32};
    std::vector<OperatorNode> nodes{
        node("data", OperatorKind::Fixed, "s0", 4096, 0, {Precision::Fp32}),
        node("conv1", OperatorKind::Adjustable, "s1", 4096, 8192, fp),
        node("relu1", OperatorKind::Dependent, "s1", 4096, 0, fp),
        node("conv2", OperatorKind::Adjustable, "s2", 4096, 16384, fp),
        node("relu2", OperatorKind::Dependent, "s2", 4096, 0, fp),
        node("conv3", OperatorKind::Adjustable, "s3", 2048, 8192, fp),
        node("loss", OperatorKind::Fixed, "s3", 16, 0, {Precision::Fp32}),
    };
    std::vector<std::pair<std::string, std::string>> edges{
        {"data", "conv1"}, {"conv1", "relu1"}, {"relu1", "conv2"},
        {"conv2", "relu2"}, {"relu2", "conv3"}, {"conv3", "loss"}};
    std::map<std::string, Precision> fp32;
    for (const auto& n : nodes) fp32[n.id] = Precision::Fp32;

    ProfileBundle b;
    b.graph = build_dag(std::move(nodes), std::move(edges), std::move(fp32));

    b.op_costs.set("data", Precision::Fp32, {50000, 1000000, 1.0 / 3.0});
    b.op_costs.set("conv1", Precision::Fp32, {2100000, 3000000, 1.0 / 3.0});
    b.op_costs.set("conv1", Precision::Fp16, {700000, 1500000, 1.0 / 3.0});
    b.op_costs.set("relu1", Precision::Fp32, {90000, 400000, 1.0 / 3.0});
    b.op_costs.set("relu1", Precision::Fp16, {60000, 200000, 1.0 / 3.0});
    b.op_costs.set("conv2", Precision::Fp32, {3000000, 5000000, 1.0 / 3.0});
    b.op_costs.set("conv2", Precision::Fp16, {1000000, 2500000, 1.0 / 3.0});
    b.op_costs.set("relu2", Precision::Fp32, {90000, 400000, 1.0 / 3.0});
    b.op_costs.set("relu2", Precision::Fp16, {60000, 200000, 1.0 / 3.0});
    b.op_costs.set("conv3", Precision::Fp32, {2400000, 3000000, 1.0 / 3.0});
    b.op_costs.set("conv3", Precision::Fp16, {800000, 1500000, 1.0 / 3.0});
    b.op_costs.set("loss", Precision::Fp32, {30000, 100000, 1.0 / 3.0});

    for (auto [src, dst] : {std::pair{Precision::Fp32, Precision::Fp16},
                            std::pair{Precision::Fp16, Precision::Fp32}}) {
        for (std::int64_t numel : {1000, 2000, 3000}) {
            b.cast_samples.push_back(
                {src, dst, CastScheme::FloatToFloat, numel, numel + 100});
        }
    }
    LinearModel f2f{1.0, 100.0, 1.0};
    b.cast_model.set({Precision::Fp32, Precision::Fp16, CastScheme::FloatToFloat}, f2f);
    b.cast_model.set({Precision::Fp16, Precision::Fp32, CastScheme::FloatToFloat}, f2f);

    TensorStats snap;
    for (const auto& [op, d_w] : std::map<std::string, double>{
             {"conv1", 8192.0}, {"conv2", 16384.0}, {"conv3", 8192.0}}) {
        OpStats s;
        s.norm_w_sq = 50.0;
        s.norm_act_sq = 400.0;
        s.norm_grad_act_sq = 20.0;
        s.d_act = 4096.0;
        s.d_w = d_w;
        s.d_grad = op == "conv3" ? 2048.0 : 4096.0;
        s.q_act = 0.05;
        s.q_w = 0.02;
        s.e_act = 1.0;
        s.e_w = 0.0;
        s.e_grad = 2.0;
        snap.per_op[op] = s;
    }
    b.tensor_stats.push_back(snap);

    for (const std::string dev : {"trainer", "infer"}) {
        b.comm.per_device[dev] = {{4000000, 400000, 98304}, {7500000, 500000, 32768}};
    }
    b.devices.push_back({"trainer", false, 32000000});
    b.devices.push_back({"infer", true, 20000000});
    return b;
}

PrecisionPlan hybrid_uniform_fp16_plan(const ProfileBundle&) {
    PrecisionPlan plan;
    plan.per_device["infer"] = {{"conv1", Precision::Fp16},
                                {"conv2", Precision::Fp16},
                                {"conv3", Precision::Fp16}};
    return plan;
}

RandomGraph random_graph(std::mt19937_64& rng, int max_nodes) {
    std::vector<Precision> all3{Precision::Int8, Precision::Fp16, Precision::Fp32};
    std::vector<Precision> fp{Precision::Fp16, Precision::Fp32};
    std::vector<Precision> fp32only{Precision::Fp32};

    int n = randint(rng, 2, max_nodes);
    std::vector<OperatorNode> nodes;
    std::vector<std::pair<std::string, std::string>> edges;
    bool any_adjustable = false;
    for (int i = 0; i < n; ++i) {
        const std::string buf = op_name(i);
        OperatorKind kind;
        int roll = randint(rng, 1, 10);
        if (roll <= 5 || (i == n - 1 && !any_adjustable))
            kind = OperatorKind::Adjustable;
        else if (roll <= 8)
            kind = OperatorKind::Dependent;
        else
            kind = OperatorKind::Fixed;
        any_adjustable = any_adjustable || kind == OperatorKind::Adjustable;

        std::vector<Precision> supported;
        if (kind == OperatorKind::Fixed) {
            supported = fp32only;
        } else if (kind == OperatorKind::Dependent) {
            supported = randint(rng, 1, 10) <= 2 ? fp32only : all3;
        } else {
            int s = randint(rng, 1, 10);
            supported = s <= 2 ? fp32only : (s <= 5 ? fp : all3);
        }
        std::int64_t weight = 0;
        if (kind == OperatorKind::Adjustable && randint(rng, 1, 10) <= 7)
            weight = randint64(rng, 10, 5000);

        nodes.push_back(node(buf, kind, i < n / 2 ? "sg0" : "sg1",
                             randint64(rng, 1, 2000), weight, supported));
        if (i > 0) {
            int k = randint(rng, 1, std::min(3, i));
            for (int p : sample_indices(rng, i, k)) edges.emplace_back(nodes[p].id, nodes[i].id);
        }
    }
    std::map<std::string, Precision> fp32;
    for (const auto& nd : nodes) fp32[nd.id] = Precision::Fp32;

    RandomGraph g;
    g.dag = build_dag(std::move(nodes), std::move(edges), std::move(fp32));
    for (const auto& [id, nd] : g.dag.nodes()) {
        std::int64_t base = randint64(rng, 500, 10000);
        std::int64_t m32 = randint64(rng, 4000, 400000);
        for (Precision p : nd.supported_precisions) {
            std::int64_t pure = base;
            if (p == Precision::Fp16) pure = base * 2 / 5 + randint64(rng, 0, 500);
            if (p == Precision::Int8) pure = base / 4 + randint64(rng, 0, 300);
            std::int64_t mem = m32;
            if (nd.kind == OperatorKind::Adjustable) {
                if (p == Precision::Fp16) mem = m32 / 2;
                if (p == Precision::Int8) mem = m32 / 4;
            }
            g.costs.set(id, p, {std::max<std::int64_t>(pure, 1), mem, 1.0 / 3.0});
        }
    }
    for (CastScheme scheme :
         {CastScheme::FloatToFloat, CastScheme::QuantizeFixed, CastScheme::DequantizeFixed}) {
        for (auto [src, dst] : {std::pair{Precision::Fp32, Precision::Fp16},
                                std::pair{Precision::Fp16, Precision::Fp32},
                                std::pair{Precision::Fp32, Precision::Int8},
                                std::pair{Precision::Fp16, Precision::Int8},
                                std::pair{Precision::Int8, Precision::Fp32}}) {
            if (cast_scheme_for(src, dst) != scheme) continue;
            g.cast.set({src, dst, scheme},
                       {randreal(rng, 0.05, 3.0), randreal(rng, 0.0, 400.0), 1.0});
        }
    }
    return g;
}

GlobalDfg random_global_dfg(std::mt19937_64& rng) {
    GlobalDfg g;
    int ndev = randint(rng, 1, 4);
    int nslots = randint(rng, 0, 5);
    for (int d = 0; d < ndev; ++d) {
        std::string dev = "dev" + std::to_string(d);
        LocalDfg local;
        int nfwd = randint(rng, 0, 5);
        for (int j = 0; j < nfwd; ++j) {
            local.events.push_back({"fwd:e" + std::to_string(j), "e" + std::to_string(j),
                                    EventPhase::Forward, randint64(rng, 1, 1000), std::nullopt});
        }
        int nbwd = randint(rng, std::max(nslots, 1), nslots + 45);
        std::vector<int> hook_at = sample_indices(rng, nbwd, nslots);
        std::map<int, int> slot_of; // event index -> slot
        for (int s = 0; s < nslots; ++s) slot_of[hook_at[s]] = s + 1;
        for (int j = 0; j < nbwd; ++j) {
            DfgEvent e{"bwd:e" + std::to_string(j), "e" + std::to_string(j),
                       EventPhase::Backward, randint64(rng, 1, 1000), std::nullopt};
            if (slot_of.count(j)) e.comm_slot = slot_of[j];
            local.events.push_back(e);
        }
        if (randint(rng, 1, 4) <= 3)
            local.events.push_back(
                {"optimizer", "", EventPhase::Optimizer, randint64(rng, 0, 500), std::nullopt});
        g.locals[dev] = std::move(local);
        std::vector<CommSlot> slots;
        for (int s = 0; s < nslots; ++s)
            slots.push_back({0, randint64(rng, 1, 500), randint64(rng, 1, 1 << 20)});
        g.comm.per_device[dev] = std::move(slots);
        if (randint(rng, 1, 2) == 1) g.inference_devices.insert(dev);
    }
    return g;
}

ProfileBundle random_alloc_bundle(std::mt19937_64& rng, int max_adjustable) {
    std::vector<Precision> all3{Precision::Int8, Precision::Fp16, Precision::Fp32};
    std::vector<Precision> fp{Precision::Fp16, Precision::Fp32};
    std::vector<Precision> fp32only{Precision::Fp32};

    int nadj = randint(rng, 1, max_adjustable);
    int ndep = randint(rng, 0, 3);
    std::vector<OperatorKind> kinds(nadj, OperatorKind::Adjustable);
    kinds.insert(kinds.end(), ndep, OperatorKind::Dependent);
    for (int i = static_cast<int>(kinds.size()) - 1; i > 0; --i) {
        int j = static_cast<int>(rng() % static_cast<std::uint64_t>(i + 1));
        std::swap(kinds[i], kinds[j]);
    }

    std::vector<OperatorNode> nodes;
    nodes.push_back(node("src", OperatorKind::Fixed, "sg0", randint64(rng, 100, 2000), 0, fp32only));
    int mid = static_cast<int>(kinds.size()) / 2;
    for (int i = 0; i < static_cast<int>(kinds.size()); ++i) {
        const std::string buf = op_name(i);
        std::string sg = i <= mid ? "sg0" : "sg1";
        if (kinds[i] == OperatorKind::Adjustable) {
            int s = randint(rng, 1, 10);
            std::vector<Precision> supported = s == 1 ? fp32only : (s <= 5 ? fp : all3);
            std::int64_t weight = randint(rng, 1, 10) <= 8 ? randint64(rng, 100, 5000) : 0;
            nodes.push_back(node(buf, kinds[i], sg, randint64(rng, 100, 2000), weight, supported));
        } else {
            std::vector<Precision> supported = randint(rng, 1, 10) <= 2 ? fp32only : all3;
            nodes.push_back(node(buf, kinds[i], sg, randint64(rng, 100, 2000), 0, supported));
        }
    }
    nodes.push_back(node("sink", OperatorKind::Fixed,
                         kinds.size() > 1 ? "sg1" : "sg0", randint64(rng, 10, 100), 0, fp32only));

    std::vector<std::pair<std::string, std::string>> edges;
    for (size_t i = 1; i < nodes.size(); ++i) edges.emplace_back(nodes[i - 1].id, nodes[i].id);
    if (nodes.size() >= 4 && randint(rng, 1, 10) <= 3) {
        size_t from = static_cast<size_t>(randint(rng, 0, static_cast<int>(nodes.size()) - 3));
        size_t to = from + 2;
        edges.emplace_back(nodes[from].id, nodes[to].id);
    }
    std::map<std::string, Precision> fp32;
    for (const auto& nd : nodes) fp32[nd.id] = Precision::Fp32;

    ProfileBundle b;
    b.graph = build_dag(std::move(nodes), std::move(edges), std::move(fp32));

    std::int64_t fp32_mem = 0;
    std::int64_t lowest_mem = 0;
    std::int64_t fp32_time = 0;
    for (const auto& [id, nd] : b.graph.nodes()) {
        std::int64_t base = randint64(rng, 200000, 2000000);
        std::int64_t m32 = randint64(rng, 100000, 2000000);
        fp32_time += base;
        std::int64_t lowest_here = m32;
        for (Precision p : nd.supported_precisions) {
            std::int64_t pure = base;
            if (p == Precision::Fp16) pure = base * randint64(rng, 35, 55) / 100;
            if (p == Precision::Int8) pure = base * randint64(rng, 20, 34) / 100;
            std::int64_t mem = m32;
            if (nd.kind == OperatorKind::Adjustable) {
                if (p == Precision::Fp16) mem = m32 / 2;
                if (p == Precision::Int8) mem = m32 / 4;
            }
            lowest_here = std::min(lowest_here, mem);
            b.op_costs.set(id, p, {std::max<std::int64_t>(pure, 1), mem, 1.0 / 3.0});
        }
        fp32_mem += m32;
        lowest_mem += lowest_here;
    }

    b.cast_model = simple_cast_model(randreal(rng, 0.5, 2.0), randreal(rng, 50.0, 200.0),
                                     randreal(rng, 1.0, 4.0), randreal(rng, 100.0, 400.0),
                                     randreal(rng, 0.5, 2.0), randreal(rng, 50.0, 300.0));

    TensorStats snap;
    for (const auto& [id, nd] : b.graph.nodes()) {
        if (nd.kind != OperatorKind::Adjustable) continue;
        OpStats s;
        if (nd.has_weight) s.norm_w_sq = randreal(rng, 1.0, 100.0);
        s.norm_act_sq = randreal(rng, 1.0, 100.0);
        s.norm_grad_act_sq = randreal(rng, 0.1, 20.0);
        if (randint(rng, 1, 2) == 1) s.norm_grad_act_hat_sq = randreal(rng, 0.1, 20.0);
        s.d_act = static_cast<double>(randint64(rng, 100, 2000));
        s.d_w = static_cast<double>(std::max<std::int64_t>(nd.weight_numel, 1));
        s.d_grad = static_cast<double>(nd.output_numel);
        s.q_act = randreal(rng, 0.02, 0.2);
        s.q_w = randreal(rng, 0.02, 0.2);
        s.e_act = static_cast<double>(randint(rng, 0, 2));
        s.e_w = static_cast<double>(randint(rng, 0, 2));
        s.e_grad = static_cast<double>(randint(rng, 0, 2));
        snap.per_op[id] = s;
    }
    b.tensor_stats.push_back(snap);

    double frac = randreal(rng, 0.05, 1.3);
    std::int64_t cap = lowest_mem + static_cast<std::int64_t>(
                                        frac * static_cast<double>(fp32_mem - lowest_mem));
    b.devices.push_back({"trainer", false, fp32_mem * 2});
    b.devices.push_back({"infer", true, std::max(cap, lowest_mem)});

    int nslots = randint(rng, 1, 2);
    for (const std::string dev : {"trainer", "infer"}) {
        std::vector<CommSlot> slots;
        for (int s = 0; s < nslots; ++s) {
            slots.push_back({randint64(rng, 0, fp32_time), randint64(rng, 50000, 500000),
                             randint64(rng, 1024, 1 << 20)});
        }
        std::sort(slots.begin(), slots.end(), [](const CommSlot& a, const CommSlot& b) {
            return a.earliest_ready_offset_ns < b.earliest_ready_offset_ns;
        });
        b.comm.per_device[dev] = std::move(slots);
    }
    return b;
}

LossSpec random_loss(std::mt19937_64& rng) {
    LossSpec loss;
    int roll = randint(rng, 1, 3);
    loss.kind = roll == 1 ? LossKind::MseMean
                          : (roll == 2 ? LossKind::CeMean : LossKind::GenericNegone);
    loss.n = randint64(rng, 1, 512);
    return loss;
}

std::int64_t device_comm_wait(const Timeline& t, const std::string& device) {
    auto it = t.slot_ready.find(device);
    if (it == t.slot_ready.end()) return 0;
    std::int64_t wait = 0;
    for (size_t n = 0; n < t.comm_start.size(); ++n) wait += t.comm_start[n] - it->second[n];
    return wait;
}

} // namespace qsync::testfx
