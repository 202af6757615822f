#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "prunekit/nir.hpp"
#include "prunekit/tensorstore.hpp"

namespace prunekit {

class EngineError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Row-major f32 activation/image buffer, (N, C, H, W).
struct TensorBuf {
    int64_t n = 1;
    int64_t c = 0;
    int64_t h = 0;
    int64_t w = 0;
    std::vector<float> data;

    static TensorBuf zeros(int64_t n, int64_t c, int64_t h, int64_t w) {
        TensorBuf t;
        t.n = n;
        t.c = c;
        t.h = h;
        t.w = w;
        t.data.assign(static_cast<size_t>(n * c * h * w), 0.0f);
        return t;
    }
    int64_t elems() const { return n * c * h * w; }
    float* chan(int64_t ni, int64_t ci) {
        return data.data() + ((ni * c + ci) * h) * w;
    }
    const float* chan(int64_t ni, int64_t ci) const {
        return data.data() + ((ni * c + ci) * h) * w;
    }
    float& at(int64_t ni, int64_t ci, int64_t y, int64_t x) {
        return data[((ni * c + ci) * h + y) * w + x];
    }
    float at(int64_t ni, int64_t ci, int64_t y, int64_t x) const {
        return data[((ni * c + ci) * h + y) * w + x];
    }
};

// Deterministic single-threaded forward pass. Throws EngineError on input
// shape mismatch or a non-finite network output.
TensorBuf forward(const NetworkGraph& graph, const WeightStore& store,
                  const TensorBuf& input);

struct Sample {
    TensorBuf input;
    TensorBuf target;
};
using Dataset = std::vector<Sample>;

struct TrainSpec {
    enum class Loss { L1, MSE };
    Loss loss = Loss::MSE;
    double learning_rate = 0.05;
    int64_t steps_per_round = 100;
    int batch_size = 1;
    uint64_t seed = 0;
};

struct TrainResult {
    int64_t steps = 0;
    double final_loss = 0.0;
};

// One sample's loss and full gradient set (used by tests and diagnostics;
// train() uses the same backward pass internally).
struct Gradients {
    double loss = 0.0;
    std::map<std::string, Tensor> kernel;
    std::map<std::string, std::vector<float>> bias;
    TensorBuf input;
};
Gradients compute_gradients(const NetworkGraph& graph, const WeightStore& store,
                            const Sample& sample, TrainSpec::Loss loss);

// Plain mini-batch gradient descent on the selected loss. Deterministic for
// fixed (spec.seed, dataset); sample order is one seeded shuffle, then
// sequential wrap-around batches. step_cap < 0 means spec.steps_per_round.
// Throws EngineError when the loss goes non-finite.
TrainResult train(const NetworkGraph& graph, WeightStore& store, const Dataset& dataset,
                  const TrainSpec& spec, int64_t step_cap = -1);

enum class SyntheticKind { Denoise, Upscale };

// Procedural image pairs: Denoise = (clean + gaussian noise, clean),
// Upscale = (bicubic 2x downsample, clean at full size).
Dataset make_synthetic_dataset(SyntheticKind kind, uint64_t seed, int count, int size = 16,
                               int channels = 1, double noise_sigma = 0.08);

}  // namespace prunekit
