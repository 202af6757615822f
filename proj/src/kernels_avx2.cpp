// AVX2/FMA kernel variants. This translation unit is compiled with
// -mavx2 -mfma; callers must gate on avx2_supported().
#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <cmath>

#include "prunekit/kernels.hpp"

namespace prunekit::kernels {

namespace {

void axpy_avx2(float* dst, const float* src, float a, size_t n) {
    const __m256 va = _mm256_set1_ps(a);
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 d = _mm256_loadu_ps(dst + i);
        d = _mm256_fmadd_ps(va, _mm256_loadu_ps(src + i), d);
        _mm256_storeu_ps(dst + i, d);
    }
    for (; i < n; ++i) dst[i] += a * src[i];
}

float dot_avx2(const float* a, const float* b, size_t n) {
    __m256 acc = _mm256_setzero_ps();
    size_t i = 0;
    for (; i + 8 <= n; i += 8)
        acc = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc);
    alignas(32) float lanes[8];
    _mm256_store_ps(lanes, acc);
    float r = ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) +
              ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
    for (; i < n; ++i) r += a[i] * b[i];
    return r;
}

void add_avx2(float* dst, const float* a, const float* b, size_t n) {
    size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(dst + i,
                         _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) dst[i] = a[i] + b[i];
}

float sum_avx2(const float* src, size_t n) {
    __m256 acc = _mm256_setzero_ps();
    size_t i = 0;
    for (; i + 8 <= n; i += 8) acc = _mm256_add_ps(acc, _mm256_loadu_ps(src + i));
    alignas(32) float lanes[8];
    _mm256_store_ps(lanes, acc);
    float r = ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) +
              ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
    for (; i < n; ++i) r += src[i];
    return r;
}

float max_abs_avx2(const float* src, size_t n) {
    const __m256 sign_mask = _mm256_set1_ps(-0.0f);
    __m256 acc = _mm256_setzero_ps();
    size_t i = 0;
    for (; i + 8 <= n; i += 8)
        acc = _mm256_max_ps(acc, _mm256_andnot_ps(sign_mask, _mm256_loadu_ps(src + i)));
    alignas(32) float lanes[8];
    _mm256_store_ps(lanes, acc);
    float m = 0.0f;
    for (float v : lanes)
        if (v > m) m = v;
    for (; i < n; ++i) {
        const float v = std::fabs(src[i]);
        if (v > m) m = v;
    }
    return m;
}

void leaky_relu_avx2(float* dst, const float* src, float slope, size_t n) {
    const __m256 vslope = _mm256_set1_ps(slope);
    const __m256 zero = _mm256_setzero_ps();
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 x = _mm256_loadu_ps(src + i);
        const __m256 neg = _mm256_mul_ps(x, vslope);
        const __m256 mask = _mm256_cmp_ps(x, zero, _CMP_GT_OQ);
        _mm256_storeu_ps(dst + i, _mm256_blendv_ps(neg, x, mask));
    }
    for (; i < n; ++i) dst[i] = src[i] > 0.0f ? src[i] : slope * src[i];
}

void leaky_relu_grad_avx2(float* din, const float* dout, const float* x, float slope,
                          size_t n) {
    const __m256 vslope = _mm256_set1_ps(slope);
    const __m256 one = _mm256_set1_ps(1.0f);
    const __m256 zero = _mm256_setzero_ps();
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 mask = _mm256_cmp_ps(_mm256_loadu_ps(x + i), zero, _CMP_GT_OQ);
        const __m256 factor = _mm256_blendv_ps(vslope, one, mask);
        _mm256_storeu_ps(din + i, _mm256_mul_ps(_mm256_loadu_ps(dout + i), factor));
    }
    for (; i < n; ++i) din[i] = dout[i] * (x[i] > 0.0f ? 1.0f : slope);
}

const Kernels kAvx2 = {
    "avx2",        axpy_avx2, dot_avx2,        add_avx2,
    sum_avx2,      max_abs_avx2, leaky_relu_avx2, leaky_relu_grad_avx2,
};

}  // namespace

const Kernels& avx2() { return kAvx2; }

}  // namespace prunekit::kernels

#endif  // x86_64
