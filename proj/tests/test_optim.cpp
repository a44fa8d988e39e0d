#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "segkit/error.hpp"
#include "segkit/optim.hpp"
#include "segkit/prng.hpp"
#include "segkit/tensor.hpp"

using namespace segkit;

namespace {

// Wraps a bare tensor as a single trainable parameter.
struct Box {
    Tensor4<double> value;
    Tensor4<double> grad;
    explicit Box(Shape4 s) : value(s), grad(s) {}
    std::vector<ParamRef<double>> refs() { return {{"w", &value, &grad, true}}; }
};

}  // namespace

TEST_CASE("nadam: two hand-traced steps on f(w) = w^2/2") {
    Box box(Shape4{1, 1, 1, 1});
    box.value[0] = 1.0;
    NadamConfig cfg;
    cfg.lr = 0.1;
    Nadam<double> opt(cfg);
    auto params = box.refs();
    opt.bind(params);

    // step 1: g = w0 = 1
    box.grad[0] = box.value[0];
    opt.step(params);
    CHECK(box.value[0] == doctest::Approx(0.81000000189999999).epsilon(1e-12));

    // step 2: g = w1
    box.grad[0] = box.value[0];
    opt.step(params);
    CHECK(box.value[0] == doctest::Approx(0.67412996634957678).epsilon(1e-12));
    CHECK(opt.step_count() == 2);
}

TEST_CASE("nadam: 200 steps shrink a 10-dim quadratic by at least 99%") {
    const std::vector<double> lam = {0.1, 0.3, 0.5, 1.0, 1.5, 2.0, 3.0, 5.0, 8.0, 10.0};
    Box box(Shape4{1, 1, 1, 10});
    for (int i = 0; i < 10; ++i) box.value[static_cast<std::size_t>(i)] = 1.0;

    auto f = [&]() {
        double s = 0;
        for (int i = 0; i < 10; ++i) {
            const double w = box.value[static_cast<std::size_t>(i)];
            s += 0.5 * lam[static_cast<std::size_t>(i)] * w * w;
        }
        return s;
    };

    NadamConfig cfg;
    cfg.lr = 0.1;
    Nadam<double> opt(cfg);
    auto params = box.refs();
    opt.bind(params);

    const double f0 = f();
    for (int t = 0; t < 200; ++t) {
        for (int i = 0; i < 10; ++i)
            box.grad[static_cast<std::size_t>(i)] =
                lam[static_cast<std::size_t>(i)] * box.value[static_cast<std::size_t>(i)];
        opt.step(params);
    }
    CHECK(f() < 0.01 * f0);
}

TEST_CASE("nadam: a non-finite gradient rejects the whole step") {
    Box box(Shape4{1, 1, 1, 3});
    for (int i = 0; i < 3; ++i) box.value[static_cast<std::size_t>(i)] = 1.0;
    Nadam<double> opt(NadamConfig{});
    auto params = box.refs();
    opt.bind(params);

    // one clean step so m/v hold non-trivial state
    box.grad.fill(0.5);
    opt.step(params);
    const double w_after = box.value[0];
    const long long t_after = opt.step_count();

    box.grad[0] = std::numeric_limits<double>::quiet_NaN();
    box.grad[1] = 0.5;
    box.grad[2] = 0.5;
    CHECK_THROWS_AS(opt.step(params), NumericError);
    CHECK(box.value[0] == w_after);  // parameters untouched
    CHECK(box.value[1] == w_after);
    CHECK(opt.step_count() == t_after);

    box.grad[0] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(opt.step(params), NumericError);
    CHECK(opt.step_count() == t_after);

    // recovery: a clean step afterwards behaves as step t_after + 1
    box.grad.fill(0.5);
    opt.step(params);
    CHECK(opt.step_count() == t_after + 1);
    CHECK(box.value[0] == box.value[1]);  // identical history -> identical update
}

TEST_CASE("nadam: step before bind and shape drift are contract errors") {
    Box box(Shape4{1, 1, 1, 2});
    Nadam<double> opt(NadamConfig{});
    auto params = box.refs();
    CHECK_THROWS_AS(opt.step(params), ContractError);
    opt.bind(params);
    Box other(Shape4{1, 1, 1, 5});
    auto wrong = other.refs();
    CHECK_THROWS_AS(opt.step(wrong), ContractError);
}

TEST_CASE("nadam: only trainable parameters move") {
    Tensor4<double> w(Shape4{1, 1, 1, 2}), gw(Shape4{1, 1, 1, 2});
    Tensor4<double> stat(Shape4{1, 1, 1, 2});
    w.fill(1.0);
    stat.fill(3.0);
    std::vector<ParamRef<double>> params = {{"w", &w, &gw, true},
                                            {"stat", &stat, nullptr, false}};
    Nadam<double> opt(NadamConfig{});
    opt.bind(params);
    gw.fill(1.0);
    opt.step(params);
    CHECK(w[0] != 1.0);
    CHECK(stat[0] == 3.0);
    CHECK(stat[1] == 3.0);
}

TEST_CASE("plateau scheduler: slow-improvement trace") {
    PlateauScheduler sched;  // factor 10, patience 2, min_delta 1e-4
    double lr = 5e-4;
    CHECK_FALSE(sched.observe(1.0, lr));   // epoch 1: first value becomes best
    CHECK_FALSE(sched.observe(0.9, lr));   // epoch 2: clear improvement
    CHECK_FALSE(sched.observe(0.91, lr));  // epoch 3: stagnation 1
    CHECK(sched.observe(0.92, lr));        // epoch 4: stagnation 2 -> reduce
    CHECK(lr == doctest::Approx(5e-5).epsilon(1e-12));
    CHECK(sched.reductions() == 1);
    CHECK(sched.best() == 0.9);
}

TEST_CASE("plateau scheduler: flat losses reduce twice in five epochs") {
    PlateauScheduler sched;
    double lr = 5e-4;
    int fired = 0;
    for (int e = 0; e < 5; ++e) fired += sched.observe(1.0, lr) ? 1 : 0;
    CHECK(fired == 2);
    CHECK(lr == doctest::Approx(5e-6).epsilon(1e-12));
    CHECK(sched.reductions() == 2);
}

TEST_CASE("plateau scheduler: improvements below min_delta do not reset patience") {
    PlateauScheduler sched;
    double lr = 1e-3;
    sched.observe(1.0, lr);
    sched.observe(1.0 - 5e-5, lr);  // within min_delta: counts as stagnation
    CHECK(sched.observe(1.0 - 9e-5, lr));
    CHECK(lr == doctest::Approx(1e-4).epsilon(1e-12));
}

TEST_CASE("plateau scheduler: rejects non-finite validation loss") {
    PlateauScheduler sched;
    double lr = 1e-3;
    CHECK_THROWS_AS(sched.observe(std::numeric_limits<double>::quiet_NaN(), lr), NumericError);
}

TEST_CASE("he init: uniform bound sqrt(6 / fan_in) and determinism") {
    Prng a(7), b(7);
    const std::size_t fan_in = 144;  // e.g. 16 channels * 3 * 3
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    CHECK(bound == doctest::Approx(0.2041241452319315).epsilon(1e-12));

    auto w1 = he_uniform_init<double>(Shape4{8, 16, 3, 3}, fan_in, a);
    auto w2 = he_uniform_init<double>(Shape4{8, 16, 3, 3}, fan_in, b);
    double lo = 1e9, hi = -1e9;
    for (std::size_t i = 0; i < w1.size(); ++i) {
        CHECK(w1[i] == w2[i]);
        lo = std::min(lo, w1[i]);
        hi = std::max(hi, w1[i]);
        CHECK(w1[i] >= -bound);
        CHECK(w1[i] < bound);
    }
    // 1152 draws should come close to both edges
    CHECK(lo < -0.9 * bound);
    CHECK(hi > 0.9 * bound);

    // conv convenience overload derives fan_in from (in_c, k, k)
    Prng c(7);
    auto w3 = he_uniform_init<double>(Shape4{8, 16, 3, 3}, c);
    for (std::size_t i = 0; i < w1.size(); ++i) CHECK(w3[i] == w1[i]);
}
