#pragma once

#include <vector>

#include "prunekit/engine.hpp"

namespace prunekit {

// 10*log10(peak^2 / MSE), MSE pooled over all channels; +infinity for
// identical images. Throws EngineError on dimension mismatch.
double psnr(const TensorBuf& a, const TensorBuf& b, double peak);

// Mean local SSIM, 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03,
// valid-mode windows, per-channel values averaged. Requires both spatial
// dims >= 11.
double ssim(const TensorBuf& a, const TensorBuf& b, double peak);

struct ImageQuality {
    double psnr = 0.0;
    double ssim = 0.0;
};

struct QualityReport {
    std::vector<ImageQuality> per_image;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
};

// Runs every pair's input through the network and scores against the
// reference. Throws EngineError naming the pair index on forward failure.
QualityReport evaluate_dataset(const NetworkGraph& graph, const WeightStore& store,
                               const Dataset& pairs, double peak);

}  // namespace prunekit
