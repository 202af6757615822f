#include "prunekit/kernels.hpp"

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <stdexcept>

namespace prunekit::kernels {

namespace {

void axpy_scalar(float* dst, const float* src, float a, size_t n) {
    for (size_t i = 0; i < n; ++i) dst[i] += a * src[i];
}

float dot_scalar(const float* a, const float* b, size_t n) {
    float acc = 0.0f;
    for (size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

void add_scalar(float* dst, const float* a, const float* b, size_t n) {
    for (size_t i = 0; i < n; ++i) dst[i] = a[i] + b[i];
}

float sum_scalar(const float* src, size_t n) {
    float acc = 0.0f;
    for (size_t i = 0; i < n; ++i) acc += src[i];
    return acc;
}

float max_abs_scalar(const float* src, size_t n) {
    float m = 0.0f;
    for (size_t i = 0; i < n; ++i) {
        const float v = std::fabs(src[i]);
        if (v > m) m = v;
    }
    return m;
}

void leaky_relu_scalar(float* dst, const float* src, float slope, size_t n) {
    for (size_t i = 0; i < n; ++i) dst[i] = src[i] > 0.0f ? src[i] : slope * src[i];
}

void leaky_relu_grad_scalar(float* din, const float* dout, const float* x, float slope,
                            size_t n) {
    for (size_t i = 0; i < n; ++i) din[i] = dout[i] * (x[i] > 0.0f ? 1.0f : slope);
}

const Kernels kScalar = {
    "scalar",          axpy_scalar, dot_scalar,        add_scalar,
    sum_scalar,        max_abs_scalar, leaky_relu_scalar, leaky_relu_grad_scalar,
};

const Kernels* g_forced = nullptr;

const Kernels* detect() {
#if defined(__x86_64__) || defined(_M_X64)
    if (avx2_supported()) return &avx2();
#endif
#if defined(__aarch64__)
    return &neon();
#endif
    return &kScalar;
}

const Kernels* from_name(const char* name) {
    const std::string want(name);
    if (want == "auto") return detect();
    for (const Kernels* k : available()) {
        if (want == k->name) return k;
    }
    throw std::invalid_argument("kernel variant not available: " + want);
}

}  // namespace

const Kernels& scalar() { return kScalar; }

std::vector<const Kernels*> available() {
    std::vector<const Kernels*> out = {&kScalar};
#if defined(__x86_64__) || defined(_M_X64)
    if (avx2_supported()) out.push_back(&avx2());
#endif
#if defined(__aarch64__)
    out.push_back(&neon());
#endif
    return out;
}

const Kernels& active() {
    if (g_forced) return *g_forced;
    static const Kernels* selected = [] {
        if (const char* env = std::getenv("PRUNEKIT_KERNELS")) return from_name(env);
        return detect();
    }();
    return *selected;
}

void force(const char* name) {
    g_forced = (name == nullptr) ? nullptr : from_name(name);
}

#if defined(__x86_64__) || defined(_M_X64)
bool avx2_supported() {
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
}
#endif

}  // namespace prunekit::kernels
