#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "segkit/datagen.hpp"
#include "segkit/error.hpp"
#include "segkit/loss.hpp"
#include "segkit/network.hpp"
#include "segkit/optim.hpp"
#include "segkit/prng.hpp"
#include "segkit/tensor.hpp"

namespace segkit {

template <typename T>
using Dataset = std::vector<SamplePair<T>>;

struct TrainConfig {
    int epochs = 50;
    int batch = 4;
    double lr = 5e-4;
    std::uint64_t seed = 0;
    bool augment = true;
    AugmentConfig aug{};
    bool scheduler = true;  // plateau decay on the monitored loss
    double sched_factor = 10.0;
    int sched_patience = 2;
    double sched_min_delta = 1e-4;
    DiceConfig dice{};
};

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_dice = 0.0;
    double lr = 0.0;
    bool lr_reduced = false;
};

namespace detail {

// Stacks per-sample (1,1,h,w) pairs into one (B,1,h,w) batch.
template <typename T>
SamplePair<T> stack_batch(const Dataset<T>& data, const std::vector<std::size_t>& order,
                          std::size_t from, std::size_t to) {
    const Shape4 s0 = data[order[from]].image.shape();
    const int b = static_cast<int>(to - from);
    SamplePair<T> out{Tensor4<T>(b, s0.c, s0.h, s0.w), Tensor4<T>(b, s0.c, s0.h, s0.w)};
    const std::size_t plane = static_cast<std::size_t>(s0.c) * s0.h * s0.w;
    for (std::size_t i = from; i < to; ++i) {
        const SamplePair<T>& s = data[order[i]];
        if (s.image.shape() != s0) throw ShapeError("stack_batch: mixed sample shapes");
        std::copy(s.image.data(), s.image.data() + plane,
                  out.image.data() + (i - from) * plane);
        std::copy(s.mask.data(), s.mask.data() + plane,
                  out.mask.data() + (i - from) * plane);
    }
    return out;
}

}  // namespace detail

// Inference-mode evaluation of a dataset: batch-global loss per eval batch
// combined into a sample-weighted mean, plus mean per-sample Dice at
// threshold 0.5. Consumes no random draws.
template <typename T>
std::pair<double, double> evaluate_dataset(Network<T>& net, const Dataset<T>& data,
                                           int batch, DiceConfig dcfg = {}) {
    if (data.empty()) throw ArgError("evaluate: empty dataset");
    if (batch < 1) throw ArgError("evaluate: batch size must be >= 1");
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    double loss_sum = 0.0, dice_sum = 0.0;
    const auto bsz = static_cast<std::size_t>(batch);
    for (std::size_t from = 0; from < order.size(); from += bsz) {
        const std::size_t to = std::min(order.size(), from + bsz);
        SamplePair<T> b = detail::stack_batch(data, order, from, to);
        Tensor4<T> pred = net.forward(b.image, Mode::infer);
        loss_sum += dice_loss(pred, b.mask, dcfg).value * static_cast<double>(to - from);
        const std::size_t plane = static_cast<std::size_t>(pred.c()) * pred.h() * pred.w();
        for (std::size_t i = from; i < to; ++i) {
            Tensor4<T> p(1, pred.c(), pred.h(), pred.w());
            Tensor4<T> g(1, pred.c(), pred.h(), pred.w());
            std::copy(pred.data() + (i - from) * plane, pred.data() + (i - from + 1) * plane,
                      p.data());
            std::copy(b.mask.data() + (i - from) * plane,
                      b.mask.data() + (i - from + 1) * plane, g.data());
            dice_sum += dice_metric(p, g);
        }
    }
    net.release_activations();
    return {loss_sum / static_cast<double>(data.size()),
            dice_sum / static_cast<double>(data.size())};
}

// One training loop around a network. The whole stochastic state lives in a
// single Prng seeded from the config, consumed in a fixed, documented order
// per epoch: (1) Fisher-Yates shuffle of the sample order, (2) per sample in
// batch order, four augmentation draws (when augmentation is on), (3) dropout
// draws inside the train-mode forward. Everything downstream (the federated
// simulator in particular) relies on this loop being the only training path,
// so identical seeds give bitwise identical parameter trajectories.
template <typename T>
class Trainer {
public:
    Trainer(Network<T>& net, TrainConfig cfg)
        : net_(net),
          cfg_(cfg),
          rng_(cfg.seed),
          opt_(NadamConfig{cfg.lr, 0.9, 0.999, 1e-8}),
          sched_(cfg.sched_factor, cfg.sched_patience, cfg.sched_min_delta),
          params_(net.parameters()) {
        if (cfg.batch < 1) throw ArgError("train: batch size must be >= 1");
        opt_.bind(params_);
    }

    const TrainConfig& config() const { return cfg_; }
    double lr() const { return opt_.lr(); }

    // Drops optimizer state and restores the configured learning rate
    // (federated nodes start every round fresh from the broadcast weights).
    void reset_optimizer() {
        opt_ = Nadam<T>(NadamConfig{cfg_.lr, 0.9, 0.999, 1e-8});
        opt_.bind(params_);
    }

    // One pass over `train`. Monitors `val` when given, otherwise the
    // training set itself; the scheduler observes the monitored loss.
    EpochStats run_epoch(const Dataset<T>& train, const Dataset<T>* val = nullptr) {
        if (train.empty()) throw ArgError("train: empty dataset");
        std::vector<std::size_t> order(train.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (std::size_t i = order.size() - 1; i > 0; --i)
            std::swap(order[i], order[rng_.uniform_index(i + 1)]);

        double loss_sum = 0.0;
        std::size_t seen = 0;
        const auto bsz = static_cast<std::size_t>(cfg_.batch);
        for (std::size_t from = 0; from < order.size(); from += bsz) {
            const std::size_t to = std::min(order.size(), from + bsz);
            SamplePair<T> batch = detail::stack_batch(train, order, from, to);
            if (cfg_.augment) {
                for (std::size_t i = from; i < to; ++i) {
                    const SamplePair<T>& s = train[order[i]];
                    SamplePair<T> aug = augment(s.image, s.mask, cfg_.aug, rng_);
                    const std::size_t plane = aug.image.size();
                    std::copy(aug.image.data(), aug.image.data() + plane,
                              batch.image.data() + (i - from) * plane);
                    std::copy(aug.mask.data(), aug.mask.data() + plane,
                              batch.mask.data() + (i - from) * plane);
                }
            }
            Tensor4<T> pred = net_.forward(batch.image, Mode::train, &rng_);
            LossResult<T> loss = dice_loss(pred, batch.mask, cfg_.dice);
            if (!std::isfinite(loss.value))
                throw NumericError("train: non-finite loss, aborting");
            net_.zero_grads();
            net_.backward(loss.grad);
            opt_.step(params_);
            loss_sum += loss.value * static_cast<double>(to - from);
            seen += to - from;
        }
        net_.release_activations();

        EpochStats st;
        st.epoch = epoch_++;
        st.train_loss = loss_sum / static_cast<double>(seen);
        const Dataset<T>& monitor = val ? *val : train;
        auto [vloss, vdice] = evaluate(monitor);
        st.val_loss = vloss;
        st.val_dice = vdice;
        if (cfg_.scheduler) {
            double lr = opt_.lr();
            st.lr_reduced = sched_.observe(st.val_loss, lr);
            opt_.set_lr(lr);
        }
        st.lr = opt_.lr();
        return st;
    }

    std::pair<double, double> evaluate(const Dataset<T>& data) {
        return evaluate_dataset(net_, data, cfg_.batch, cfg_.dice);
    }

private:
    Network<T>& net_;
    TrainConfig cfg_;
    Prng rng_;
    Nadam<T> opt_;
    PlateauScheduler sched_;
    std::vector<ParamRef<T>> params_;
    int epoch_ = 0;
};

}  // namespace segkit
