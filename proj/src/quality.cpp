#include "prunekit/quality.hpp"

#include <array>
#include <cmath>
#include <limits>

namespace prunekit {

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kK1 = 0.01;
constexpr double kK2 = 0.03;

void check_dims(const TensorBuf& a, const TensorBuf& b) {
    if (a.n != b.n || a.c != b.c || a.h != b.h || a.w != b.w)
        throw EngineError("image dimensions differ");
    if (a.n != 1) throw EngineError("quality metrics expect single images (n=1)");
}

const std::array<double, kWindow * kWindow>& gaussian_window() {
    static const auto window = [] {
        std::array<double, kWindow * kWindow> w{};
        double total = 0.0;
        for (int y = 0; y < kWindow; ++y)
            for (int x = 0; x < kWindow; ++x) {
                const double dy = y - kWindow / 2, dx = x - kWindow / 2;
                w[y * kWindow + x] = std::exp(-(dx * dx + dy * dy) / (2.0 * kSigma * kSigma));
                total += w[y * kWindow + x];
            }
        for (double& v : w) v /= total;
        return w;
    }();
    return window;
}

}  // namespace

double psnr(const TensorBuf& a, const TensorBuf& b, double peak) {
    check_dims(a, b);
    if (peak <= 0) throw EngineError("psnr peak must be positive");
    double sq = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const double d = static_cast<double>(a.data[i]) - b.data[i];
        sq += d * d;
    }
    const double mse = sq / static_cast<double>(a.data.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

double ssim(const TensorBuf& a, const TensorBuf& b, double peak) {
    check_dims(a, b);
    if (peak <= 0) throw EngineError("ssim peak must be positive");
    if (a.h < kWindow || a.w < kWindow)
        throw EngineError("image smaller than the 11x11 SSIM window");
    const auto& win = gaussian_window();
    const double c1 = (kK1 * peak) * (kK1 * peak);
    const double c2 = (kK2 * peak) * (kK2 * peak);

    double channel_sum = 0.0;
    for (int64_t ci = 0; ci < a.c; ++ci) {
        const float* pa = a.chan(0, ci);
        const float* pb = b.chan(0, ci);
        double acc = 0.0;
        int64_t windows = 0;
        for (int64_t y = 0; y + kWindow <= a.h; ++y) {
            for (int64_t x = 0; x + kWindow <= a.w; ++x) {
                double mu_a = 0, mu_b = 0, aa = 0, bb = 0, ab = 0;
                for (int wy = 0; wy < kWindow; ++wy)
                    for (int wx = 0; wx < kWindow; ++wx) {
                        const double g = win[wy * kWindow + wx];
                        const double va = pa[(y + wy) * a.w + (x + wx)];
                        const double vb = pb[(y + wy) * b.w + (x + wx)];
                        mu_a += g * va;
                        mu_b += g * vb;
                        aa += g * (va * va);
                        bb += g * (vb * vb);
                        ab += g * (va * vb);  // associativity keeps ssim symmetric
                    }
                const double var_a = aa - mu_a * mu_a;
                const double var_b = bb - mu_b * mu_b;
                const double cov = ab - mu_a * mu_b;
                acc += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) /
                       ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
                ++windows;
            }
        }
        channel_sum += acc / static_cast<double>(windows);
    }
    return channel_sum / static_cast<double>(a.c);
}

QualityReport evaluate_dataset(const NetworkGraph& graph, const WeightStore& store,
                               const Dataset& pairs, double peak) {
    QualityReport report;
    double psnr_sum = 0.0, ssim_sum = 0.0;
    for (size_t i = 0; i < pairs.size(); ++i) {
        TensorBuf out;
        try {
            out = forward(graph, store, pairs[i].input);
        } catch (const std::exception& e) {
            throw EngineError("pair " + std::to_string(i) + ": " + e.what());
        }
        ImageQuality q;
        q.psnr = psnr(out, pairs[i].target, peak);
        q.ssim = ssim(out, pairs[i].target, peak);
        psnr_sum += q.psnr;
        ssim_sum += q.ssim;
        report.per_image.push_back(q);
    }
    if (!report.per_image.empty()) {
        report.mean_psnr = psnr_sum / static_cast<double>(report.per_image.size());
        report.mean_ssim = ssim_sum / static_cast<double>(report.per_image.size());
    }
    return report;
}

}  // namespace prunekit
