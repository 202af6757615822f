// NEON kernel variants (aarch64 baseline, no extra compile flags needed).
#if defined(__aarch64__)

#include <arm_neon.h>

#include <cmath>

#include "prunekit/kernels.hpp"

namespace prunekit::kernels {

namespace {

void axpy_neon(float* dst, const float* src, float a, size_t n) {
    const float32x4_t va = vdupq_n_f32(a);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        float32x4_t d = vld1q_f32(dst + i);
        d = vfmaq_f32(d, va, vld1q_f32(src + i));
        vst1q_f32(dst + i, d);
    }
    for (; i < n; ++i) dst[i] += a * src[i];
}

float dot_neon(const float* a, const float* b, size_t n) {
    float32x4_t acc = vdupq_n_f32(0.0f);
    size_t i = 0;
    for (; i + 4 <= n; i += 4)
        acc = vfmaq_f32(acc, vld1q_f32(a + i), vld1q_f32(b + i));
    float r = vaddvq_f32(acc);
    for (; i < n; ++i) r += a[i] * b[i];
    return r;
}

void add_neon(float* dst, const float* a, const float* b, size_t n) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4)
        vst1q_f32(dst + i, vaddq_f32(vld1q_f32(a + i), vld1q_f32(b + i)));
    for (; i < n; ++i) dst[i] = a[i] + b[i];
}

float sum_neon(const float* src, size_t n) {
    float32x4_t acc = vdupq_n_f32(0.0f);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) acc = vaddq_f32(acc, vld1q_f32(src + i));
    float r = vaddvq_f32(acc);
    for (; i < n; ++i) r += src[i];
    return r;
}

float max_abs_neon(const float* src, size_t n) {
    float32x4_t acc = vdupq_n_f32(0.0f);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) acc = vmaxq_f32(acc, vabsq_f32(vld1q_f32(src + i)));
    float m = vmaxvq_f32(acc);
    for (; i < n; ++i) {
        const float v = std::fabs(src[i]);
        if (v > m) m = v;
    }
    return m;
}

void leaky_relu_neon(float* dst, const float* src, float slope, size_t n) {
    const float32x4_t vslope = vdupq_n_f32(slope);
    const float32x4_t zero = vdupq_n_f32(0.0f);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const float32x4_t x = vld1q_f32(src + i);
        const uint32x4_t mask = vcgtq_f32(x, zero);
        vst1q_f32(dst + i, vbslq_f32(mask, x, vmulq_f32(x, vslope)));
    }
    for (; i < n; ++i) dst[i] = src[i] > 0.0f ? src[i] : slope * src[i];
}

void leaky_relu_grad_neon(float* din, const float* dout, const float* x, float slope,
                          size_t n) {
    const float32x4_t vslope = vdupq_n_f32(slope);
    const float32x4_t one = vdupq_n_f32(1.0f);
    const float32x4_t zero = vdupq_n_f32(0.0f);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const uint32x4_t mask = vcgtq_f32(vld1q_f32(x + i), zero);
        const float32x4_t factor = vbslq_f32(mask, one, vslope);
        vst1q_f32(din + i, vmulq_f32(vld1q_f32(dout + i), factor));
    }
    for (; i < n; ++i) din[i] = dout[i] * (x[i] > 0.0f ? 1.0f : slope);
}

const Kernels kNeon = {
    "neon",        axpy_neon, dot_neon,        add_neon,
    sum_neon,      max_abs_neon, leaky_relu_neon, leaky_relu_grad_neon,
};

}  // namespace

const Kernels& neon() { return kNeon; }

}  // namespace prunekit::kernels

#endif  // aarch64
