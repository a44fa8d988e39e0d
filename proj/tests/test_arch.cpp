#include <doctest.h>

#include <cmath>
#include <map>
#include <string>

#include "segkit/arch.hpp"
#include "segkit/network.hpp"
#include "segkit/prng.hpp"

using namespace segkit;

TEST_CASE("arch: name parsing round-trips; unknown names rejected") {
    for (ArchKind k : {ArchKind::monet, ArchKind::unet16, ArchKind::unet64})
        CHECK(parse_arch(arch_name(k)) == k);
    CHECK_THROWS_AS(parse_arch("resnet"), ArgError);
    CHECK_THROWS_AS(parse_arch(""), ArgError);
}

TEST_CASE("arch: spec validation") {
    auto s = ArchSpec::monet();
    CHECK_NOTHROW(s.validate());

    auto bad_dil = s;
    bad_dil.dilations = {4, 4, 2, 1};  // not strictly decreasing
    CHECK_THROWS_AS(bad_dil.validate(), ArgError);

    auto no_tail = s;
    no_tail.dilations = {4, 3, 2};  // must end at dilation 1
    CHECK_THROWS_AS(no_tail.validate(), ArgError);

    auto bad_rate = s;
    bad_rate.dropout_rate = 1.0;
    CHECK_THROWS_AS(bad_rate.validate(), ArgError);

    auto bad_stages = s;
    bad_stages.stage_widths = {16, 32};
    CHECK_THROWS_AS(bad_stages.validate(), ArgError);

    CHECK_NOTHROW(ArchSpec::of(ArchKind::unet16).validate());
    CHECK_NOTHROW(ArchSpec::of(ArchKind::unet64).validate());
}

TEST_CASE("arch: frozen parameter counts") {
    const auto monet = count_params(ArchSpec::monet());
    CHECK(monet.trainable == 311441);
    CHECK(monet.non_trainable == 1696);
    CHECK(monet.total() == 313137);

    const auto u16 = count_params(ArchSpec::of(ArchKind::unet16));
    CHECK(u16.total() == 1947665);

    const auto u64 = count_params(ArchSpec::of(ArchKind::unet64));
    CHECK(u64.total() == 31057985);
}

TEST_CASE("arch: entry block parameter budget") {
    // 3x3 conv 1->16 (144 + 16) plus batchnorm (4 * 16) = 224
    std::size_t entry = 0;
    for (const auto& e : param_plan(ArchSpec::monet()))
        if (e.name.rfind("enc0/entry/", 0) == 0) entry += e.shape.count();
    CHECK(entry == 224);
}

TEST_CASE("arch: plan shapes pin the stage widths") {
    std::map<std::string, Shape4> plan;
    for (const auto& e : param_plan(ArchSpec::monet())) plan.emplace(e.name, e.shape);

    CHECK(plan.at("enc0/entry/conv/w") == Shape4{16, 1, 3, 3});
    CHECK(plan.at("enc1/down/conv/w") == Shape4{32, 16, 3, 3});
    CHECK(plan.at("enc2/down/conv/w") == Shape4{64, 32, 3, 3});
    CHECK(plan.at("dec1/up/deconv/w") == Shape4{64, 32, 3, 3});   // (in_c, out_c, k, k)
    CHECK(plan.at("dec1/merge/conv/w") == Shape4{32, 64, 3, 3});  // concat doubles channels
    CHECK(plan.at("dec0/up/deconv/w") == Shape4{32, 16, 3, 3});
    CHECK(plan.at("head/conv/w") == Shape4{1, 16, 1, 1});

    std::map<std::string, Shape4> uplan;
    for (const auto& e : param_plan(ArchSpec::of(ArchKind::unet64))) uplan.emplace(e.name, e.shape);
    CHECK(uplan.at("enc0/c0/conv/w") == Shape4{64, 1, 3, 3});
    CHECK(uplan.at("enc4/c0/conv/w") == Shape4{1024, 512, 3, 3});
    CHECK(uplan.at("dec3/up/deconv/w") == Shape4{1024, 512, 2, 2});  // 2x2 upsampling kernels
    CHECK(uplan.at("dec0/c0/conv/w") == Shape4{64, 128, 3, 3});
    CHECK(uplan.at("head/conv/w") == Shape4{1, 64, 1, 1});
}

TEST_CASE("arch: built network parameters match the plan exactly") {
    for (ArchKind k : {ArchKind::monet, ArchKind::unet16}) {
        const auto spec = ArchSpec::of(k);
        const auto plan = param_plan(spec);
        Prng rng(1);
        auto net = build<float>(spec, rng);
        auto params = net.parameters();
        REQUIRE(params.size() == plan.size());
        for (std::size_t i = 0; i < plan.size(); ++i) {
            CHECK(params[i].name == plan[i].name);
            CHECK(params[i].value->shape() == plan[i].shape);
            CHECK(params[i].trainable == plan[i].trainable);
        }
    }
}

TEST_CASE("arch: equal seeds build bitwise-identical networks") {
    const auto spec = ArchSpec::monet();
    Prng a(42), b(42), c(43);
    auto na = build<float>(spec, a);
    auto nb = build<float>(spec, b);
    auto nc = build<float>(spec, c);
    auto pa = na.parameters(), pb = nb.parameters(), pc = nc.parameters();
    bool all_equal_ab = true, any_diff_ac = false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        for (std::size_t q = 0; q < pa[i].value->size(); ++q) {
            all_equal_ab &= (*pa[i].value)[q] == (*pb[i].value)[q];
            any_diff_ac |= (*pa[i].value)[q] != (*pc[i].value)[q];
        }
    }
    CHECK(all_equal_ab);
    CHECK(any_diff_ac);
}

TEST_CASE("arch: receptive fields at the encoder stages") {
    const auto monet = ArchSpec::monet();
    CHECK(receptive_field(monet, 0) == 23);
    CHECK(receptive_field(monet, 1) == 65);
    CHECK(receptive_field(monet, 2) == 149);
    CHECK_THROWS_AS(receptive_field(monet, 3), ArgError);

    const auto unet = ArchSpec::of(ArchKind::unet16);
    CHECK(receptive_field(unet, 0) == 5);
    CHECK(receptive_field(unet, 1) == 11);
    CHECK(receptive_field(unet, 2) == 23);
    CHECK(receptive_field(unet, 3) == 47);
    CHECK(receptive_field(unet, 4) == 95);
}

TEST_CASE("arch: residual block impulse response is exactly 21x21") {
    Prng rng(3);
    auto net = build_rddc<float>(4, {4, 3, 2, 1}, 0.2, rng);

    // positive weights, zero biases: a tap is nonzero iff it is reachable
    for (auto& p : net.parameters()) {
        const bool is_w = p.name.size() >= 2 && p.name.rfind("/w") == p.name.size() - 2;
        const bool is_b = p.name.size() >= 2 && p.name.rfind("/b") == p.name.size() - 2;
        if (is_w)
            for (std::size_t q = 0; q < p.value->size(); ++q)
                (*p.value)[q] = std::abs((*p.value)[q]) + 0.01f;
        else if (is_b)
            p.value->fill(0.0f);
    }

    Tensor4<float> x(1, 4, 64, 64);
    for (int j = 0; j < 4; ++j) x.at(0, j, 32, 32) = 1.0f;
    auto y = net.forward(x, Mode::infer);

    const int lo = 32 - 10, hi = 32 + 10;
    for (int r = 0; r < 64; ++r)
        for (int c = 0; c < 64; ++c) {
            bool any = false;
            for (int j = 0; j < 4; ++j) any |= y.at(0, j, r, c) != 0.0f;
            const bool inside = r >= lo && r <= hi && c >= lo && c <= hi;
            CHECK(any == inside);
        }
}

TEST_CASE("arch: forward pass shapes and output range") {
    Prng rng(5);
    auto net = build<float>(ArchSpec::monet(), rng);
    Tensor4<float> x(2, 1, 64, 64);
    Prng data(6);
    x = rand_uniform<float>(data, x.shape(), 0.0, 1.0);
    Prng drop(7);
    auto y = net.forward(x, Mode::train, &drop);
    REQUIRE(y.shape() == Shape4{2, 1, 64, 64});
    for (std::size_t i = 0; i < y.size(); ++i) {
        CHECK(y[i] > 0.0f);
        CHECK(y[i] < 1.0f);
    }

    Prng urng(8);
    auto unet = build<float>(ArchSpec::of(ArchKind::unet16), urng);
    auto uy = unet.forward(x, Mode::infer);
    REQUIRE(uy.shape() == Shape4{2, 1, 64, 64});
}

TEST_CASE("arch: fresh network inference is deterministic") {
    Prng rng(9);
    auto net = build<float>(ArchSpec::monet(), rng);
    auto x = zeros<float>(Shape4{1, 1, 64, 64});
    auto y1 = net.forward(x, Mode::infer);
    auto y2 = net.forward(x, Mode::infer);
    REQUIRE(y1.shape() == y2.shape());
    for (std::size_t i = 0; i < y1.size(); ++i) CHECK(y1[i] == y2[i]);
}

TEST_CASE("arch: spatial size must survive the downsampling ladder") {
    Prng rng(10);
    auto net = build<float>(ArchSpec::monet(), rng);
    // 50 -> 25 -> 13 downsampled, but 13 deconvolves to 26 != 25: the skip
    // concat detects the mismatch instead of silently misaligning
    Tensor4<float> x(1, 1, 50, 50);
    CHECK_THROWS_AS(net.forward(x, Mode::infer), ContractError);
}
