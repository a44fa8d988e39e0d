#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "segkit/layers.hpp"

namespace segkit {

// A static DAG of layers evaluated in insertion (topological) order.
// Node 0 is the input placeholder; the last node is the output. Backward
// walks the order in reverse and sums gradients at fan-out points, which is
// all the reverse-mode machinery an encoder-decoder net needs.
template <typename T>
class Network {
public:
    Network() { nodes_.push_back(Node{"input", nullptr, {}}); }

    Network(const Network& other) { *this = other; }
    Network& operator=(const Network& other) {
        nodes_.clear();
        for (const Node& n : other.nodes_)
            nodes_.push_back(Node{n.name, n.layer ? n.layer->clone() : nullptr, n.inputs});
        return *this;
    }
    Network(Network&&) noexcept = default;
    Network& operator=(Network&&) noexcept = default;

    int input_node() const { return 0; }

    int add(std::string name, std::unique_ptr<Layer<T>> layer, std::vector<int> inputs) {
        if (!layer) throw ArgError("Network::add: null layer");
        for (int id : inputs)
            if (id < 0 || id >= static_cast<int>(nodes_.size()))
                throw ArgError("Network::add: input node " + std::to_string(id) +
                               " does not exist yet");
        nodes_.push_back(Node{std::move(name), std::move(layer), std::move(inputs)});
        return static_cast<int>(nodes_.size()) - 1;
    }

    std::size_t node_count() const { return nodes_.size(); }

    template <typename L = Layer<T>>
    L& layer_at(int id) {
        return dynamic_cast<L&>(*nodes_.at(static_cast<std::size_t>(id)).layer);
    }

    // Train mode retains every activation (tests peek at intermediates via
    // activation()); inference frees each one as soon as its last consumer
    // has run, so big networks stay memory-lean while benchmarking.
    Tensor4<T> forward(const Tensor4<T>& x, Mode mode, Prng* rng = nullptr) {
        std::vector<int> uses(nodes_.size(), 0);
        if (mode == Mode::infer)
            for (const Node& n : nodes_)
                for (int src : n.inputs) ++uses[static_cast<std::size_t>(src)];

        activations_.assign(nodes_.size(), Tensor4<T>());
        activations_[0] = x;
        std::vector<const Tensor4<T>*> in;
        for (std::size_t id = 1; id < nodes_.size(); ++id) {
            in.clear();
            for (int src : nodes_[id].inputs) {
                if (activations_[static_cast<std::size_t>(src)].empty())
                    throw ContractError("Network::forward: node '" + nodes_[id].name +
                                        "' reads an unevaluated input");
                in.push_back(&activations_[static_cast<std::size_t>(src)]);
            }
            activations_[id] = nodes_[id].layer->forward(in, mode, rng);
            if (mode == Mode::infer)
                for (int src : nodes_[id].inputs) {
                    const auto s = static_cast<std::size_t>(src);
                    if (--uses[s] == 0) activations_[s] = Tensor4<T>();
                }
        }
        last_mode_ = mode;
        return activations_.back();
    }

    // Valid after a train-mode forward (inference releases these eagerly).
    const Tensor4<T>& activation(int id) const {
        const auto& a = activations_.at(static_cast<std::size_t>(id));
        if (a.empty()) throw ContractError("Network::activation: not retained");
        return a;
    }

    // Accumulates parameter gradients for the most recent train-mode forward
    // and returns the gradient with respect to the network input.
    Tensor4<T> backward(const Tensor4<T>& grad_out) {
        if (activations_.empty() || last_mode_ != Mode::train)
            throw ContractError("Network::backward: requires a preceding train-mode forward");
        std::vector<Tensor4<T>> grads(nodes_.size());
        grads.back() = grad_out;
        for (std::size_t id = nodes_.size() - 1; id >= 1; --id) {
            if (grads[id].empty()) continue;  // node does not influence the output
            std::vector<Tensor4<T>> gin = nodes_[id].layer->backward(grads[id]);
            grads[id] = Tensor4<T>();  // release as we walk back
            const auto& inputs = nodes_[id].inputs;
            for (std::size_t k = 0; k < inputs.size(); ++k) {
                auto& slot = grads[static_cast<std::size_t>(inputs[k])];
                if (slot.empty()) {
                    slot = std::move(gin[k]);
                } else {
                    if (slot.shape() != gin[k].shape())
                        throw ContractError("Network::backward: fan-out gradient shape mismatch");
                    for (std::size_t q = 0; q < slot.size(); ++q) slot[q] += gin[k][q];
                }
            }
        }
        return std::move(grads[0]);
    }

    // Deterministic parameter ordering: node order, then the layer's own
    // param order. Names are "<node>/<param>".
    std::vector<ParamRef<T>> parameters() {
        std::vector<ParamRef<T>> out;
        for (std::size_t id = 1; id < nodes_.size(); ++id)
            for (ParamRef<T> p : nodes_[id].layer->params()) {
                p.name = nodes_[id].name + "/" + p.name;
                out.push_back(p);
            }
        return out;
    }

    void zero_grads() {
        for (auto& p : parameters())
            if (p.grad) p.grad->fill(T(0));
    }

    // Drops cached activations (between epochs or before serialization).
    void release_activations() { activations_.clear(); }

private:
    struct Node {
        std::string name;
        std::unique_ptr<Layer<T>> layer;
        std::vector<int> inputs;
    };

    std::vector<Node> nodes_;
    std::vector<Tensor4<T>> activations_;
    Mode last_mode_ = Mode::infer;
};

}  // namespace segkit
