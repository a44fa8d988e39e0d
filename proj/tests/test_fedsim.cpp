#include <doctest.h>

#include <cmath>
#include <vector>

#include "segkit/arch.hpp"
#include "segkit/checkpoint.hpp"
#include "segkit/fedsim.hpp"
#include "segkit/train.hpp"

using namespace segkit;

namespace {

ArchSpec small_monet() {
    auto s = ArchSpec::monet();
    s.stage_widths = {8, 16, 32};
    return s;
}

FedConfig small_cfg(int nodes, int rounds, int local_epochs = 1) {
    FedConfig fc;
    fc.nodes = nodes;
    fc.rounds = rounds;
    fc.local_epochs = local_epochs;
    fc.samples_per_node = 2;
    fc.image_size = 32;
    fc.holdout_samples = 2;
    fc.node_train.batch = 2;
    fc.node_train.augment = false;  // keep the unit tests quick
    return fc;
}

}  // namespace

TEST_CASE("fedsim: traffic ledger matches rounds * nodes * 2 * payload") {
    const auto spec = small_monet();
    const std::uint64_t payload = payload_size(spec);
    struct Shape {
        int nodes, rounds;
    };
    for (auto [nodes, rounds] : {Shape{1, 2}, Shape{3, 2}, Shape{4, 1}}) {
        FedSim<float> sim(small_cfg(nodes, rounds), spec);
        CHECK(sim.payload() == payload);
        auto rep = sim.simulate();
        CHECK(rep.nodes == nodes);
        CHECK(rep.rounds == rounds);
        CHECK(rep.total_bytes ==
              static_cast<std::uint64_t>(rounds) * nodes * 2 * payload);
        REQUIRE(rep.per_round.size() == static_cast<std::size_t>(rounds));
        for (int r = 0; r < rounds; ++r) {
            CHECK(rep.per_round[static_cast<std::size_t>(r)].round == r);
            CHECK(rep.per_round[static_cast<std::size_t>(r)].bytes ==
                  static_cast<std::uint64_t>(nodes) * 2 * payload);
            CHECK(rep.per_round[static_cast<std::size_t>(r)].dice >= 0.0);
            CHECK(rep.per_round[static_cast<std::size_t>(r)].dice <= 1.0);
        }
        // per-node entries: one broadcast down, one update up, per round
        const auto& ledger = sim.ledger();
        REQUIRE(ledger.rounds.size() == static_cast<std::size_t>(rounds));
        for (const auto& round : ledger.rounds) {
            REQUIRE(round.size() == static_cast<std::size_t>(nodes));
            for (const auto& e : round) {
                CHECK(e.downlink == payload);
                CHECK(e.uplink == payload);
            }
        }
    }
}

TEST_CASE("fedsim: a single-node federation equals centralized training bitwise") {
    const auto spec = small_monet();
    auto cfg = small_cfg(1, 3, 2);

    FedSim<float> sim(cfg, spec);
    auto rep = sim.simulate();
    (void)rep;
    const std::string fed_bytes = save_checkpoint(sim.global());

    // centralized twin: same init, same shard, same training stream; the
    // optimizer restarts at every round boundary exactly like the node does
    Prng init(cfg.seed);
    auto net = build<float>(spec, init);
    SynthTask task{cfg.image_size, cfg.data_seed + 0};
    auto data = generate<float>(task, cfg.samples_per_node);
    TrainConfig tc = cfg.node_train;
    tc.scheduler = false;
    tc.seed = cfg.train_seed;
    Trainer<float> trainer(net, tc);
    for (int r = 0; r < cfg.rounds; ++r) {
        trainer.reset_optimizer();
        for (int e = 0; e < cfg.local_epochs; ++e) trainer.run_epoch(data);
    }
    CHECK(save_checkpoint(net) == fed_bytes);
}

TEST_CASE("fedsim: aggregated weights stay inside the node envelope") {
    const auto spec = small_monet();
    FedSim<float> sim(small_cfg(3, 1), spec);
    sim.run_round();

    auto global = sim.global().parameters();
    std::vector<std::vector<ParamRef<float>>> nodes;
    for (int i = 0; i < 3; ++i) nodes.push_back(sim.node_net(i).parameters());

    bool nodes_differ = false;
    for (std::size_t p = 0; p < global.size(); ++p) {
        for (std::size_t q = 0; q < global[p].value->size(); ++q) {
            float lo = (*nodes[0][p].value)[q], hi = lo;
            for (int i = 1; i < 3; ++i) {
                lo = std::min(lo, (*nodes[static_cast<std::size_t>(i)][p].value)[q]);
                hi = std::max(hi, (*nodes[static_cast<std::size_t>(i)][p].value)[q]);
            }
            nodes_differ |= lo != hi;
            CHECK((*global[p].value)[q] >= lo);
            CHECK((*global[p].value)[q] <= hi);
        }
    }
    CHECK(nodes_differ);  // the envelope test is vacuous if training is a no-op
}

TEST_CASE("fedsim: config validation") {
    const auto spec = small_monet();
    auto bad = small_cfg(0, 1);
    CHECK_THROWS_AS(FedSim<float>(bad, spec), ArgError);
    bad = small_cfg(1, 0);
    CHECK_THROWS_AS(FedSim<float>(bad, spec), ArgError);
    bad = small_cfg(1, 1);
    bad.local_epochs = 0;
    CHECK_THROWS_AS(FedSim<float>(bad, spec), ArgError);
    bad = small_cfg(1, 1);
    bad.samples_per_node = 0;
    CHECK_THROWS_AS(FedSim<float>(bad, spec), ArgError);
}

TEST_CASE("aggregate_params: weighted mean with exactness guarantees") {
    auto mk = [](float v) {
        auto t = std::make_unique<Tensor4<float>>(Shape4{1, 1, 1, 2});
        t->fill(v);
        return t;
    };
    auto g = mk(0.0f);
    auto n0 = mk(1.0f), n1 = mk(2.0f), n2 = mk(4.0f);
    std::vector<ParamRef<float>> global = {{"w", g.get(), nullptr, true}};
    std::vector<std::vector<ParamRef<float>>> nodes = {
        {{"w", n0.get(), nullptr, true}},
        {{"w", n1.get(), nullptr, true}},
        {{"w", n2.get(), nullptr, true}},
    };

    SUBCASE("weights follow sample counts") {
        aggregate_params(global, nodes, {1, 1, 2});
        CHECK((*g)[0] == doctest::Approx((1.0 + 2.0 + 2 * 4.0) / 4.0).epsilon(1e-7));
    }
    SUBCASE("all-equal inputs aggregate to the exact same value") {
        n0->fill(0.1f);
        n1->fill(0.1f);
        n2->fill(0.1f);
        aggregate_params(global, nodes, {3, 5, 7});
        CHECK((*g)[0] == 0.1f);  // bitwise: the envelope clamp pins it
    }
    SUBCASE("single node copies bitwise") {
        std::vector<std::vector<ParamRef<float>>> one = {nodes[0]};
        aggregate_params(global, one, {4});
        CHECK((*g)[0] == 1.0f);
    }
    SUBCASE("name mismatch is a contract violation") {
        std::vector<std::vector<ParamRef<float>>> wrong = {
            {{"v", n0.get(), nullptr, true}}, {{"w", n1.get(), nullptr, true}},
            {{"w", n2.get(), nullptr, true}}};
        CHECK_THROWS_AS(aggregate_params(global, wrong, {1, 1, 1}), ContractError);
    }
    SUBCASE("count/node mismatch and zero totals are argument errors") {
        CHECK_THROWS_AS(aggregate_params(global, nodes, {1, 1}), ArgError);
        CHECK_THROWS_AS(aggregate_params(global, nodes, {0, 0, 0}), ArgError);
        std::vector<std::vector<ParamRef<float>>> none;
        CHECK_THROWS_AS(aggregate_params(global, none, {}), ArgError);
    }
}
