#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "segkit/error.hpp"
#include "segkit/layers.hpp"
#include "segkit/network.hpp"
#include "segkit/optim.hpp"
#include "segkit/prng.hpp"

namespace segkit {

enum class ArchKind { monet, unet16, unet64 };

inline const char* arch_name(ArchKind k) {
    switch (k) {
        case ArchKind::monet: return "monet";
        case ArchKind::unet16: return "unet16";
        case ArchKind::unet64: return "unet64";
    }
    throw ContractError("arch_name: bad kind");
}

inline ArchKind parse_arch(const std::string& s) {
    if (s == "monet") return ArchKind::monet;
    if (s == "unet16") return ArchKind::unet16;
    if (s == "unet64") return ArchKind::unet64;
    throw ArgError("unknown architecture '" + s + "' (expected monet|unet16|unet64)");
}

// Declarative description of a network family member. Defaults follow the
// reference configuration: 256x256x1 input, MoNet stage widths (16,32,64)
// across two stride-2 downsamplings, dilation schedule (4,3,2,1); U-Net-N
// doubles its base width over four downsamplings.
struct ArchSpec {
    ArchKind kind = ArchKind::monet;
    int input_channels = 1;
    std::vector<int> stage_widths;
    std::vector<int> dilations;  // per RDDC block, MoNet only
    double dropout_rate = 0.2;   // spatial dropout inside RDDC blocks
    int deconv_kernel = 3;       // upsampling kernel (2 for the U-Nets)

    static ArchSpec monet() {
        ArchSpec s;
        s.kind = ArchKind::monet;
        s.stage_widths = {16, 32, 64};
        s.dilations = {4, 3, 2, 1};
        return s;
    }

    static ArchSpec unet(int base_width, ArchKind kind) {
        ArchSpec s;
        s.kind = kind;
        s.stage_widths = {base_width, 2 * base_width, 4 * base_width,
                          8 * base_width, 16 * base_width};
        s.dilations = {};
        s.dropout_rate = 0.0;
        s.deconv_kernel = 2;
        return s;
    }

    static ArchSpec of(ArchKind kind) {
        switch (kind) {
            case ArchKind::monet: return monet();
            case ArchKind::unet16: return unet(16, ArchKind::unet16);
            case ArchKind::unet64: return unet(64, ArchKind::unet64);
        }
        throw ContractError("ArchSpec::of: bad kind");
    }

    const char* name() const { return arch_name(kind); }
    int downsample_count() const { return static_cast<int>(stage_widths.size()) - 1; }

    void validate() const {
        if (input_channels < 1) throw ArgError("arch: input_channels must be >= 1");
        const std::size_t want_stages = kind == ArchKind::monet ? 3 : 5;
        if (stage_widths.size() != want_stages)
            throw ArgError("arch: expected " + std::to_string(want_stages) + " stage widths");
        for (int w : stage_widths)
            if (w < 1) throw ArgError("arch: stage widths must be positive");
        if (kind == ArchKind::monet) {
            if (dilations.empty() || dilations.back() != 1)
                throw ArgError("arch: dilation schedule must end at 1");
            for (std::size_t i = 1; i < dilations.size(); ++i)
                if (dilations[i] >= dilations[i - 1])
                    throw ArgError("arch: dilation schedule must be strictly decreasing");
            if (dropout_rate < 0.0 || dropout_rate >= 1.0)
                throw ArgError("arch: dropout rate out of [0,1)");
        }
    }
};

// ---------------------------------------------------------------------------
// Topology emission
//
// One function walks the architecture graph and narrates it to an emitter.
// Three emitters consume the same walk: BuildEmitter materializes layers,
// PlanEmitter enumerates parameter tensors (for counting and checkpoint
// layout), RfEmitter propagates receptive-field extents. Keeping a single
// topology source guarantees that counts, checkpoints, and the network can
// never drift apart.
// ---------------------------------------------------------------------------

namespace detail {

template <class E>
int emit_conv_block(E& em, const std::string& p, int in, ConvSpec sp) {
    const int c = em.conv(p + "/conv", in, sp);
    const int b = em.batchnorm(p + "/bn", c, sp.out_channels);
    return em.elu(p + "/elu", b);
}

template <class E>
int emit_deconv_block(E& em, const std::string& p, int in, int in_c, int out_c, int k) {
    const int d = em.deconv(p + "/deconv", in, in_c, out_c, k);
    const int b = em.batchnorm(p + "/bn", d, out_c);
    return em.elu(p + "/elu", b);
}

template <class E>
int emit_rddc(E& em, const std::string& p, int in, int channels,
              const std::vector<int>& dilations, double rate) {
    int cur = in;
    for (std::size_t i = 0; i < dilations.size(); ++i) {
        const std::string bp = p + "/b" + std::to_string(i);
        cur = emit_conv_block(em, bp, cur, ConvSpec{channels, channels, 3, 1, dilations[i]});
        cur = em.dropout(bp + "/drop", cur, rate);
    }
    return em.add(p + "/res", in, cur);
}

template <class E>
int emit_arch(const ArchSpec& spec, E& em) {
    spec.validate();
    int x = em.input();
    const auto& w = spec.stage_widths;
    if (spec.kind == ArchKind::monet) {
        x = emit_conv_block(em, "enc0/entry", x, ConvSpec{spec.input_channels, w[0], 3, 1, 1});
        const int s0 = emit_rddc(em, "enc0/rddc", x, w[0], spec.dilations, spec.dropout_rate);
        em.stage_output(0, s0);
        x = emit_conv_block(em, "enc1/down", s0, ConvSpec{w[0], w[1], 3, 2, 1});
        const int s1 = emit_rddc(em, "enc1/rddc", x, w[1], spec.dilations, spec.dropout_rate);
        em.stage_output(1, s1);
        x = emit_conv_block(em, "enc2/down", s1, ConvSpec{w[1], w[2], 3, 2, 1});
        x = emit_rddc(em, "enc2/rddc", x, w[2], spec.dilations, spec.dropout_rate);
        em.stage_output(2, x);

        x = emit_deconv_block(em, "dec1/up", x, w[2], w[1], spec.deconv_kernel);
        x = em.concat("dec1/cat", x, s1, w[1], w[1]);
        x = emit_conv_block(em, "dec1/merge", x, ConvSpec{2 * w[1], w[1], 3, 1, 1});
        x = emit_rddc(em, "dec1/rddc", x, w[1], spec.dilations, spec.dropout_rate);

        x = emit_deconv_block(em, "dec0/up", x, w[1], w[0], spec.deconv_kernel);
        x = em.concat("dec0/cat", x, s0, w[0], w[0]);
        x = emit_conv_block(em, "dec0/merge", x, ConvSpec{2 * w[0], w[0], 3, 1, 1});
        x = emit_rddc(em, "dec0/rddc", x, w[0], spec.dilations, spec.dropout_rate);

        x = em.conv("head/conv", x, ConvSpec{w[0], 1, 1, 1, 1});
        return em.sigmoid("head/sigmoid", x);
    }

    // U-Net: two conv blocks per level, stride-2 entry into each deeper level,
    // 2x2 deconv + skip concat + two conv blocks per decoder level.
    const int levels = static_cast<int>(w.size());
    std::vector<int> skips;
    int in_c = spec.input_channels;
    for (int l = 0; l < levels; ++l) {
        const std::string p = "enc" + std::to_string(l);
        x = emit_conv_block(em, p + "/c0", x, ConvSpec{in_c, w[l], 3, l == 0 ? 1 : 2, 1});
        x = emit_conv_block(em, p + "/c1", x, ConvSpec{w[l], w[l], 3, 1, 1});
        em.stage_output(l, x);
        if (l < levels - 1) skips.push_back(x);
        in_c = w[l];
    }
    for (int l = levels - 2; l >= 0; --l) {
        const std::string p = "dec" + std::to_string(l);
        x = emit_deconv_block(em, p + "/up", x, w[l + 1], w[l], spec.deconv_kernel);
        x = em.concat(p + "/cat", x, skips[static_cast<std::size_t>(l)], w[l], w[l]);
        x = emit_conv_block(em, p + "/c0", x, ConvSpec{2 * w[l], w[l], 3, 1, 1});
        x = emit_conv_block(em, p + "/c1", x, ConvSpec{w[l], w[l], 3, 1, 1});
    }
    x = em.conv("head/conv", x, ConvSpec{w[0], 1, 1, 1, 1});
    return em.sigmoid("head/sigmoid", x);
}

}  // namespace detail

// Materializes layers into a Network, drawing He-uniform weights from `rng`
// in emission order (so equal seeds give checkpoint-identical networks).
template <typename T>
class BuildEmitter {
public:
    explicit BuildEmitter(Prng& rng) : rng_(rng) {}

    int input() { return 0; }

    int conv(const std::string& name, int in, ConvSpec sp) {
        auto l = std::make_unique<Conv2d<T>>(sp);
        l->weights() = he_uniform_init<T>(l->weights().shape(), rng_);
        return net_.add(name, std::move(l), {in});
    }

    int deconv(const std::string& name, int in, int in_c, int out_c, int k) {
        auto l = std::make_unique<Deconv2d<T>>(in_c, out_c, k, 2);
        const auto fan_in = static_cast<std::size_t>(in_c) * k * k;
        l->weights() = he_uniform_init<T>(l->weights().shape(), fan_in, rng_);
        return net_.add(name, std::move(l), {in});
    }

    int batchnorm(const std::string& name, int in, int channels) {
        auto l = std::make_unique<BatchNorm<T>>(channels);
        l->set_moving_stats(T(0), T(1));  // fresh nets are inference-capable
        return net_.add(name, std::move(l), {in});
    }

    int elu(const std::string& name, int in) {
        return net_.add(name, std::make_unique<Elu<T>>(), {in});
    }

    int dropout(const std::string& name, int in, double rate) {
        return net_.add(name, std::make_unique<SpatialDropout<T>>(rate), {in});
    }

    int sigmoid(const std::string& name, int in) {
        return net_.add(name, std::make_unique<Sigmoid<T>>(), {in});
    }

    int concat(const std::string& name, int a, int b, int, int) {
        return net_.add(name, std::make_unique<ConcatChannels<T>>(), {a, b});
    }

    int add(const std::string& name, int a, int b) {
        return net_.add(name, std::make_unique<AddResidual<T>>(), {a, b});
    }

    void stage_output(int, int) {}

    Network<T> take() && { return std::move(net_); }

private:
    Network<T> net_;
    Prng& rng_;
};

// One serialized parameter tensor; plan order = checkpoint order.
struct ParamEntry {
    std::string name;
    Shape4 shape;
    bool trainable;
};

struct ParamCounts {
    std::size_t trainable = 0;
    std::size_t non_trainable = 0;
    std::size_t total() const { return trainable + non_trainable; }
};

// Enumerates parameter tensors without building any layer.
class PlanEmitter {
public:
    int input() { return next_++; }

    int conv(const std::string& name, int, ConvSpec sp) {
        push(name + "/w", Shape4(sp.out_channels, sp.in_channels, sp.kernel, sp.kernel), true);
        push(name + "/b", Shape4(1, sp.out_channels, 1, 1), true);
        return next_++;
    }

    int deconv(const std::string& name, int, int in_c, int out_c, int k) {
        push(name + "/w", Shape4(in_c, out_c, k, k), true);
        push(name + "/b", Shape4(1, out_c, 1, 1), true);
        return next_++;
    }

    int batchnorm(const std::string& name, int, int channels) {
        const Shape4 s(1, channels, 1, 1);
        push(name + "/gamma", s, true);
        push(name + "/beta", s, true);
        push(name + "/moving_mean", s, false);
        push(name + "/moving_var", s, false);
        return next_++;
    }

    int elu(const std::string&, int) { return next_++; }
    int dropout(const std::string&, int, double) { return next_++; }
    int sigmoid(const std::string&, int) { return next_++; }
    int concat(const std::string&, int, int, int, int) { return next_++; }
    int add(const std::string&, int, int) { return next_++; }
    void stage_output(int, int) {}

    std::vector<ParamEntry> take() && { return std::move(entries_); }

private:
    void push(std::string name, Shape4 shape, bool trainable) {
        entries_.push_back({std::move(name), shape, trainable});
    }
    std::vector<ParamEntry> entries_;
    int next_ = 1;
};

// Propagates (extent, stride-in-input-pixels) through the graph:
// a conv grows the extent by (k-1)*dilation*jump and multiplies the jump by
// its stride; a deconv divides the jump; joins take the max extent.
class RfEmitter {
public:
    int input() {
        nodes_.push_back({1.0, 1.0});
        return 0;
    }

    int conv(const std::string&, int in, ConvSpec sp) {
        Rf r = nodes_[static_cast<std::size_t>(in)];
        r.extent += static_cast<double>(sp.kernel - 1) * sp.dilation * r.jump;
        r.jump *= sp.stride;
        return push(r);
    }

    int deconv(const std::string&, int in, int, int, int k) {
        Rf r = nodes_[static_cast<std::size_t>(in)];
        r.jump /= 2.0;
        r.extent += static_cast<double>(k - 1) * r.jump;
        return push(r);
    }

    int batchnorm(const std::string&, int in, int) { return push(nodes_[idx(in)]); }
    int elu(const std::string&, int in) { return push(nodes_[idx(in)]); }
    int dropout(const std::string&, int in, double) { return push(nodes_[idx(in)]); }
    int sigmoid(const std::string&, int in) { return push(nodes_[idx(in)]); }

    int concat(const std::string&, int a, int b, int, int) { return join(a, b); }
    int add(const std::string&, int a, int b) { return join(a, b); }

    void stage_output(int stage, int node) {
        stage_rf_[stage] = nodes_[idx(node)].extent;
    }

    const std::map<int, double>& stage_rf() const { return stage_rf_; }

private:
    struct Rf {
        double extent, jump;
    };
    static std::size_t idx(int i) { return static_cast<std::size_t>(i); }
    int push(Rf r) {
        nodes_.push_back(r);
        return static_cast<int>(nodes_.size()) - 1;
    }
    int join(int a, int b) {
        const Rf& ra = nodes_[idx(a)];
        const Rf& rb = nodes_[idx(b)];
        return push({std::max(ra.extent, rb.extent), ra.jump});
    }
    std::vector<Rf> nodes_;
    std::map<int, double> stage_rf_;
};

// ---------------------------------------------------------------------------
// Public entry points
// ---------------------------------------------------------------------------

template <typename T>
Network<T> build(const ArchSpec& spec, Prng& rng) {
    BuildEmitter<T> em(rng);
    detail::emit_arch(spec, em);
    return std::move(em).take();
}

// A bare residual dilated-conv block as its own network (used by the
// impulse-response footprint analysis).
template <typename T>
Network<T> build_rddc(int channels, const std::vector<int>& dilations, double rate,
                      Prng& rng) {
    BuildEmitter<T> em(rng);
    detail::emit_rddc(em, "rddc", em.input(), channels, dilations, rate);
    return std::move(em).take();
}

inline std::vector<ParamEntry> param_plan(const ArchSpec& spec) {
    PlanEmitter em;
    detail::emit_arch(spec, em);
    return std::move(em).take();
}

inline ParamCounts count_params(const ArchSpec& spec) {
    ParamCounts c;
    for (const ParamEntry& e : param_plan(spec)) {
        (e.trainable ? c.trainable : c.non_trainable) += e.shape.count();
    }
    return c;
}

// Receptive-field extent (pixels in the 256-sized input) of the output of
// encoder stage `at_stage` (0 = full-resolution stage).
inline int receptive_field(const ArchSpec& spec, int at_stage) {
    RfEmitter em;
    detail::emit_arch(spec, em);
    auto it = em.stage_rf().find(at_stage);
    if (it == em.stage_rf().end()) throw ArgError("receptive_field: no such stage");
    return static_cast<int>(std::lround(it->second));
}

}  // namespace segkit
