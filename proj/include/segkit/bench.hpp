#pragma once

#include <chrono>
#include <cmath>
#include <vector>

#include "segkit/network.hpp"
#include "segkit/prng.hpp"
#include "segkit/tensor.hpp"

namespace segkit {

struct BenchResult {
    int slices = 0;
    int size = 0;
    std::vector<double> seconds;  // one entry per timed repeat
    double mean = 0.0;
    double stddev = 0.0;  // sample standard deviation (n-1)
};

// Wall-clock time of `repeats` full inference passes over `slices` images of
// size x size, batch 1 per slice (clinical streaming), after one discarded
// warm-up pass. Single-threaded by construction of the engine.
template <typename T>
BenchResult bench_forward(Network<T>& net, int slices, int size, int repeats,
                          std::uint64_t input_seed = 42) {
    if (slices < 1 || repeats < 1) throw ArgError("bench: slices and repeats must be >= 1");
    Prng rng(input_seed);
    Tensor4<T> x = rand_uniform<T>(rng, Shape4(1, 1, size, size), 0.0, 1.0);

    BenchResult r;
    r.slices = slices;
    r.size = size;
    for (int rep = -1; rep < repeats; ++rep) {  // rep == -1 is the warm-up
        const auto t0 = std::chrono::steady_clock::now();
        for (int s = 0; s < slices; ++s) net.forward(x, Mode::infer);
        const auto t1 = std::chrono::steady_clock::now();
        if (rep >= 0) r.seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    net.release_activations();

    for (double s : r.seconds) r.mean += s;
    r.mean /= static_cast<double>(r.seconds.size());
    if (r.seconds.size() > 1) {
        double acc = 0.0;
        for (double s : r.seconds) acc += (s - r.mean) * (s - r.mean);
        r.stddev = std::sqrt(acc / static_cast<double>(r.seconds.size() - 1));
    }
    return r;
}

}  // namespace segkit
