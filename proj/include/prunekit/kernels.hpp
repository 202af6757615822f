#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace prunekit::kernels {

// Data-parallel inner loops used by the engine and weight statistics.
// Scalar versions are the reference; SIMD variants must agree within
// 1e-6 relative (reduction order differs under FMA/lane splits).
struct Kernels {
    const char* name;

    // dst[i] += a * src[i]
    void (*axpy)(float* dst, const float* src, float a, size_t n);
    float (*dot)(const float* a, const float* b, size_t n);
    // dst[i] = a[i] + b[i]
    void (*add)(float* dst, const float* a, const float* b, size_t n);
    float (*sum)(const float* src, size_t n);
    float (*max_abs)(const float* src, size_t n);
    // dst[i] = src[i] > 0 ? src[i] : slope * src[i]   (slope 0 == relu)
    void (*leaky_relu)(float* dst, const float* src, float slope, size_t n);
    // din[i] = dout[i] * (x[i] > 0 ? 1 : slope)
    void (*leaky_relu_grad)(float* din, const float* dout, const float* x, float slope,
                            size_t n);
};

const Kernels& scalar();

// Variants present in this build (scalar always first).
std::vector<const Kernels*> available();

// Best variant for this machine, honoring the PRUNEKIT_KERNELS environment
// variable (scalar | avx2 | neon | auto) on first use.
const Kernels& active();

// Force a variant by name ("auto" or nullptr restores detection). Throws
// std::invalid_argument for names not available on this machine.
void force(const char* name);

#if defined(__x86_64__) || defined(_M_X64)
bool avx2_supported();
const Kernels& avx2();
#endif
#if defined(__aarch64__)
const Kernels& neon();
#endif

}  // namespace prunekit::kernels
