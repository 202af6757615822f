#include "prunekit/engine.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "prunekit/kernels.hpp"
#include "prunekit/rng.hpp"

namespace prunekit {

namespace {

using kernels::Kernels;

struct ConvDims {
    int64_t o, i, k, stride, pad;
};

ConvDims conv_dims(const Node& n) {
    return ConvDims{n.attrs.out_channels, n.attrs.in_channels, n.attrs.kernel, n.attrs.stride,
                    n.attrs.padding};
}

void fill_bias(TensorBuf* out, const float* bias) {
    for (int64_t ni = 0; ni < out->n; ++ni)
        for (int64_t oc = 0; oc < out->c; ++oc) {
            float* row = out->chan(ni, oc);
            const float b = bias ? bias[oc] : 0.0f;
            std::fill(row, row + out->h * out->w, b);
        }
}

// Direct convolution. Stride 1 runs on row axpy kernels; other strides fall
// back to the scalar gather loop.
void conv2d_forward(const Node& node, const TensorBuf& in, const Tensor& kernel,
                    const float* bias, TensorBuf* out) {
    const ConvDims d = conv_dims(node);
    fill_bias(out, bias);
    const Kernels& kn = kernels::active();
    const int64_t hi = in.h, wi = in.w, ho = out->h, wo = out->w;
    for (int64_t ni = 0; ni < in.n; ++ni) {
        for (int64_t oc = 0; oc < d.o; ++oc) {
            for (int64_t ic = 0; ic < d.i; ++ic) {
                const float* kslice = kernel.data.data() + ((oc * d.i + ic) * d.k) * d.k;
                const float* src = in.chan(ni, ic);
                float* dst = out->chan(ni, oc);
                if (d.stride == 1) {
                    for (int64_t ky = 0; ky < d.k; ++ky) {
                        const int64_t y_lo = std::max<int64_t>(0, d.pad - ky);
                        const int64_t y_hi = std::min(ho, hi + d.pad - ky);
                        for (int64_t kx = 0; kx < d.k; ++kx) {
                            const float wv = kslice[ky * d.k + kx];
                            if (wv == 0.0f) continue;
                            const int64_t x_lo = std::max<int64_t>(0, d.pad - kx);
                            const int64_t x_hi = std::min(wo, wi + d.pad - kx);
                            if (x_hi <= x_lo) continue;
                            for (int64_t y = y_lo; y < y_hi; ++y) {
                                kn.axpy(dst + y * wo + x_lo,
                                        src + (y + ky - d.pad) * wi + (x_lo + kx - d.pad), wv,
                                        static_cast<size_t>(x_hi - x_lo));
                            }
                        }
                    }
                } else {
                    for (int64_t y = 0; y < ho; ++y)
                        for (int64_t x = 0; x < wo; ++x) {
                            float acc = 0.0f;
                            for (int64_t ky = 0; ky < d.k; ++ky) {
                                const int64_t yi = y * d.stride + ky - d.pad;
                                if (yi < 0 || yi >= hi) continue;
                                for (int64_t kx = 0; kx < d.k; ++kx) {
                                    const int64_t xi = x * d.stride + kx - d.pad;
                                    if (xi < 0 || xi >= wi) continue;
                                    acc += kslice[ky * d.k + kx] * src[yi * wi + xi];
                                }
                            }
                            dst[y * wo + x] += acc;
                        }
                }
            }
        }
    }
}

void conv2d_backward(const Node& node, const TensorBuf& in, const Tensor& kernel,
                     const TensorBuf& dout, TensorBuf* din, Tensor* dkernel,
                     std::vector<float>* dbias) {
    const ConvDims d = conv_dims(node);
    const Kernels& kn = kernels::active();
    const int64_t hi = in.h, wi = in.w, ho = dout.h, wo = dout.w;
    for (int64_t ni = 0; ni < in.n; ++ni) {
        for (int64_t oc = 0; oc < d.o; ++oc) {
            const float* dout_c = dout.chan(ni, oc);
            if (dbias) (*dbias)[oc] += kn.sum(dout_c, static_cast<size_t>(ho * wo));
            for (int64_t ic = 0; ic < d.i; ++ic) {
                const float* kslice = kernel.data.data() + ((oc * d.i + ic) * d.k) * d.k;
                float* dkslice =
                    dkernel ? dkernel->data.data() + ((oc * d.i + ic) * d.k) * d.k : nullptr;
                const float* src = in.chan(ni, ic);
                float* dsrc = din ? din->chan(ni, ic) : nullptr;
                if (d.stride == 1) {
                    for (int64_t ky = 0; ky < d.k; ++ky) {
                        const int64_t y_lo = std::max<int64_t>(0, d.pad - ky);
                        const int64_t y_hi = std::min(ho, hi + d.pad - ky);
                        for (int64_t kx = 0; kx < d.k; ++kx) {
                            const int64_t x_lo = std::max<int64_t>(0, d.pad - kx);
                            const int64_t x_hi = std::min(wo, wi + d.pad - kx);
                            if (x_hi <= x_lo) continue;
                            const size_t cnt = static_cast<size_t>(x_hi - x_lo);
                            const float wv = kslice[ky * d.k + kx];
                            float grad_w = 0.0f;
                            for (int64_t y = y_lo; y < y_hi; ++y) {
                                const float* dout_row = dout_c + y * wo + x_lo;
                                const int64_t src_off =
                                    (y + ky - d.pad) * wi + (x_lo + kx - d.pad);
                                if (dkslice) grad_w += kn.dot(dout_row, src + src_off, cnt);
                                if (dsrc && wv != 0.0f)
                                    kn.axpy(dsrc + src_off, dout_row, wv, cnt);
                            }
                            if (dkslice) dkslice[ky * d.k + kx] += grad_w;
                        }
                    }
                } else {
                    for (int64_t y = 0; y < ho; ++y)
                        for (int64_t x = 0; x < wo; ++x) {
                            const float g = dout_c[y * wo + x];
                            if (g == 0.0f) continue;
                            for (int64_t ky = 0; ky < d.k; ++ky) {
                                const int64_t yi = y * d.stride + ky - d.pad;
                                if (yi < 0 || yi >= hi) continue;
                                for (int64_t kx = 0; kx < d.k; ++kx) {
                                    const int64_t xi = x * d.stride + kx - d.pad;
                                    if (xi < 0 || xi >= wi) continue;
                                    if (dkslice)
                                        dkslice[ky * d.k + kx] += g * src[yi * wi + xi];
                                    if (dsrc) dsrc[yi * wi + xi] += g * kslice[ky * d.k + kx];
                                }
                            }
                        }
                }
            }
        }
    }
}

// Transposed convolution: every input position scatters all k*k taps.
void convt_forward(const Node& node, const TensorBuf& in, const Tensor& kernel,
                   const float* bias, TensorBuf* out) {
    const ConvDims d = conv_dims(node);
    fill_bias(out, bias);
    const int64_t hi = in.h, wi = in.w, ho = out->h, wo = out->w;
    for (int64_t ni = 0; ni < in.n; ++ni)
        for (int64_t oc = 0; oc < d.o; ++oc) {
            float* dst = out->chan(ni, oc);
            for (int64_t ic = 0; ic < d.i; ++ic) {
                const float* kslice = kernel.data.data() + ((oc * d.i + ic) * d.k) * d.k;
                const float* src = in.chan(ni, ic);
                for (int64_t y = 0; y < hi; ++y)
                    for (int64_t x = 0; x < wi; ++x) {
                        const float v = src[y * wi + x];
                        if (v == 0.0f) continue;
                        for (int64_t ky = 0; ky < d.k; ++ky) {
                            const int64_t yo = y * d.stride + ky - d.pad;
                            if (yo < 0 || yo >= ho) continue;
                            for (int64_t kx = 0; kx < d.k; ++kx) {
                                const int64_t xo = x * d.stride + kx - d.pad;
                                if (xo < 0 || xo >= wo) continue;
                                dst[yo * wo + xo] += v * kslice[ky * d.k + kx];
                            }
                        }
                    }
            }
        }
}

void convt_backward(const Node& node, const TensorBuf& in, const Tensor& kernel,
                    const TensorBuf& dout, TensorBuf* din, Tensor* dkernel,
                    std::vector<float>* dbias) {
    const ConvDims d = conv_dims(node);
    const Kernels& kn = kernels::active();
    const int64_t hi = in.h, wi = in.w, ho = dout.h, wo = dout.w;
    for (int64_t ni = 0; ni < in.n; ++ni)
        for (int64_t oc = 0; oc < d.o; ++oc) {
            const float* dout_c = dout.chan(ni, oc);
            if (dbias) (*dbias)[oc] += kn.sum(dout_c, static_cast<size_t>(ho * wo));
            for (int64_t ic = 0; ic < d.i; ++ic) {
                const float* kslice = kernel.data.data() + ((oc * d.i + ic) * d.k) * d.k;
                float* dkslice =
                    dkernel ? dkernel->data.data() + ((oc * d.i + ic) * d.k) * d.k : nullptr;
                const float* src = in.chan(ni, ic);
                float* dsrc = din ? din->chan(ni, ic) : nullptr;
                for (int64_t y = 0; y < hi; ++y)
                    for (int64_t x = 0; x < wi; ++x) {
                        float acc = 0.0f;
                        for (int64_t ky = 0; ky < d.k; ++ky) {
                            const int64_t yo = y * d.stride + ky - d.pad;
                            if (yo < 0 || yo >= ho) continue;
                            for (int64_t kx = 0; kx < d.k; ++kx) {
                                const int64_t xo = x * d.stride + kx - d.pad;
                                if (xo < 0 || xo >= wo) continue;
                                const float g = dout_c[yo * wo + xo];
                                acc += g * kslice[ky * d.k + kx];
                                if (dkslice) dkslice[ky * d.k + kx] += g * src[y * wi + x];
                            }
                        }
                        if (dsrc) dsrc[y * wi + x] += acc;
                    }
            }
        }
}

void maxpool_forward(const Node& node, const TensorBuf& in, TensorBuf* out,
                     std::vector<int32_t>* argmax) {
    const int64_t k = node.attrs.kernel, s = node.attrs.stride;
    if (argmax) argmax->assign(static_cast<size_t>(out->elems()), 0);
    for (int64_t ni = 0; ni < in.n; ++ni)
        for (int64_t ci = 0; ci < in.c; ++ci) {
            const float* src = in.chan(ni, ci);
            float* dst = out->chan(ni, ci);
            for (int64_t y = 0; y < out->h; ++y)
                for (int64_t x = 0; x < out->w; ++x) {
                    float best = -std::numeric_limits<float>::infinity();
                    int32_t best_idx = 0;
                    for (int64_t ky = 0; ky < k; ++ky)
                        for (int64_t kx = 0; kx < k; ++kx) {
                            const int64_t yi = y * s + ky, xi = x * s + kx;
                            const float v = src[yi * in.w + xi];
                            if (v > best) {  // first max wins on ties
                                best = v;
                                best_idx = static_cast<int32_t>(yi * in.w + xi);
                            }
                        }
                    dst[y * out->w + x] = best;
                    if (argmax)
                        (*argmax)[static_cast<size_t>(((ni * out->c + ci) * out->h + y) *
                                                          out->w +
                                                      x)] = best_idx;
                }
        }
}

void pixel_shuffle_forward(int r, const TensorBuf& in, TensorBuf* out) {
    for (int64_t ni = 0; ni < in.n; ++ni)
        for (int64_t co = 0; co < out->c; ++co)
            for (int64_t dy = 0; dy < r; ++dy)
                for (int64_t dx = 0; dx < r; ++dx) {
                    const float* src = in.chan(ni, co * r * r + dy * r + dx);
                    float* dst = out->chan(ni, co);
                    for (int64_t y = 0; y < in.h; ++y)
                        for (int64_t x = 0; x < in.w; ++x)
                            dst[(y * r + dy) * out->w + (x * r + dx)] = src[y * in.w + x];
                }
}

void pixel_shuffle_backward(int r, const TensorBuf& dout, TensorBuf* din) {
    for (int64_t ni = 0; ni < din->n; ++ni)
        for (int64_t co = 0; co < dout.c; ++co)
            for (int64_t dy = 0; dy < r; ++dy)
                for (int64_t dx = 0; dx < r; ++dx) {
                    float* dst = din->chan(ni, co * r * r + dy * r + dx);
                    const float* src = dout.chan(ni, co);
                    for (int64_t y = 0; y < din->h; ++y)
                        for (int64_t x = 0; x < din->w; ++x)
                            dst[y * din->w + x] += src[(y * r + dy) * dout.w + (x * r + dx)];
                }
}

struct Plan {
    std::vector<std::string> order;
    ShapeMap shapes;
    std::string output_node;
};

Plan make_plan(const NetworkGraph& graph) {
    Plan p;
    p.shapes = infer_shapes(graph);
    p.order = graph.topo_order();
    for (const Node& n : graph.nodes())
        if (n.kind == NodeKind::Output) {
            p.output_node = n.id;
            break;
        }
    return p;
}

// Forward pass over the whole graph; keeps every intermediate when
// recording (training) mode is on.
struct Activations {
    std::map<std::string, TensorBuf> outs;
    std::map<std::string, std::vector<int32_t>> pool_argmax;
};

TensorBuf run_forward(const NetworkGraph& graph, const WeightStore& store,
                      const TensorBuf& input, const Plan& plan, Activations* record) {
    const Node& input_node = graph.at(plan.order.front());
    const Shape want = plan.shapes.at(input_node.id);
    if (input.c != want.c || input.h != want.h || input.w != want.w)
        throw EngineError("input shape (" + std::to_string(input.c) + "," +
                          std::to_string(input.h) + "," + std::to_string(input.w) +
                          ") does not match graph input (" + std::to_string(want.c) + "," +
                          std::to_string(want.h) + "," + std::to_string(want.w) + ")");

    std::map<std::string, TensorBuf> outs;
    const Kernels& kn = kernels::active();
    for (const std::string& id : plan.order) {
        const Node& n = graph.at(id);
        const Shape shape = plan.shapes.at(id);
        const auto in_edges = graph.inputs_of(id);
        TensorBuf out = TensorBuf::zeros(input.n, shape.c, shape.h, shape.w);
        switch (n.kind) {
            case NodeKind::Input:
                out.data = input.data;
                break;
            case NodeKind::Output:
                out.data = outs.at(in_edges[0]->from).data;
                break;
            case NodeKind::Conv2d: {
                const Tensor& k = store.at(kernel_name(id));
                const float* bias =
                    n.attrs.has_bias ? store.at(bias_name(id)).data.data() : nullptr;
                conv2d_forward(n, outs.at(in_edges[0]->from), k, bias, &out);
                break;
            }
            case NodeKind::Conv2dTranspose: {
                const Tensor& k = store.at(kernel_name(id));
                const float* bias =
                    n.attrs.has_bias ? store.at(bias_name(id)).data.data() : nullptr;
                convt_forward(n, outs.at(in_edges[0]->from), k, bias, &out);
                break;
            }
            case NodeKind::EltwiseAdd: {
                const TensorBuf& first = outs.at(in_edges[0]->from);
                out.data = first.data;
                for (size_t i = 1; i < in_edges.size(); ++i)
                    kn.add(out.data.data(), out.data.data(),
                           outs.at(in_edges[i]->from).data.data(), out.data.size());
                break;
            }
            case NodeKind::Concat: {
                int64_t c0 = 0;
                for (const Edge* e : in_edges) {
                    const TensorBuf& part = outs.at(e->from);
                    for (int64_t ni = 0; ni < out.n; ++ni)
                        for (int64_t ci = 0; ci < part.c; ++ci)
                            std::copy(part.chan(ni, ci), part.chan(ni, ci) + part.h * part.w,
                                      out.chan(ni, c0 + ci));
                    c0 += part.c;
                }
                break;
            }
            case NodeKind::PixelShuffle:
                pixel_shuffle_forward(n.attrs.upscale, outs.at(in_edges[0]->from), &out);
                break;
            case NodeKind::LeakyRelu:
            case NodeKind::Relu: {
                const TensorBuf& src = outs.at(in_edges[0]->from);
                const float slope =
                    n.kind == NodeKind::Relu ? 0.0f : static_cast<float>(n.attrs.slope);
                kn.leaky_relu(out.data.data(), src.data.data(), slope, src.data.size());
                break;
            }
            case NodeKind::MaxPool2d: {
                std::vector<int32_t> argmax;
                maxpool_forward(n, outs.at(in_edges[0]->from), &out,
                                record ? &argmax : nullptr);
                if (record) record->pool_argmax[id] = std::move(argmax);
                break;
            }
        }
        outs[id] = std::move(out);
    }
    TensorBuf result = outs.at(plan.output_node);
    if (record) record->outs = std::move(outs);
    return result;
}

double loss_and_grad(TrainSpec::Loss loss, const TensorBuf& y, const TensorBuf& target,
                     TensorBuf* dy) {
    if (y.elems() != target.elems())
        throw EngineError("network output and target element counts differ");
    const double inv_n = 1.0 / static_cast<double>(y.elems());
    double total = 0.0;
    *dy = TensorBuf::zeros(y.n, y.c, y.h, y.w);
    for (size_t i = 0; i < y.data.size(); ++i) {
        const double diff = static_cast<double>(y.data[i]) - target.data[i];
        if (loss == TrainSpec::Loss::MSE) {
            total += diff * diff;
            dy->data[i] = static_cast<float>(2.0 * diff * inv_n);
        } else {
            total += std::fabs(diff);
            dy->data[i] = static_cast<float>((diff > 0 ? 1.0 : diff < 0 ? -1.0 : 0.0) * inv_n);
        }
    }
    return total * inv_n;
}

struct GradStore {
    std::map<std::string, Tensor> kernel;
    std::map<std::string, std::vector<float>> bias;
};

// Reverse pass; accumulates parameter gradients into *grads and, when
// requested, the gradient w.r.t. the network input.
void run_backward(const NetworkGraph& graph, const WeightStore& store, const Plan& plan,
                  const Activations& acts, const TensorBuf& dloss, GradStore* grads,
                  TensorBuf* input_grad = nullptr) {
    std::map<std::string, TensorBuf> douts;
    auto grad_of = [&](const std::string& id) -> TensorBuf& {
        auto it = douts.find(id);
        if (it == douts.end()) {
            const TensorBuf& ref = acts.outs.at(id);
            it = douts.emplace(id, TensorBuf::zeros(ref.n, ref.c, ref.h, ref.w)).first;
        }
        return it->second;
    };
    grad_of(plan.output_node).data = dloss.data;

    const Kernels& kn = kernels::active();
    for (auto rit = plan.order.rbegin(); rit != plan.order.rend(); ++rit) {
        const std::string& id = *rit;
        const Node& n = graph.at(id);
        if (n.kind == NodeKind::Input) {
            if (input_grad) *input_grad = grad_of(id);
            continue;
        }
        auto it = douts.find(id);
        if (it == douts.end()) continue;  // dead branch
        const TensorBuf& dout = it->second;
        const auto in_edges = graph.inputs_of(id);
        switch (n.kind) {
            case NodeKind::Output:
                kn.add(grad_of(in_edges[0]->from).data.data(),
                       grad_of(in_edges[0]->from).data.data(), dout.data.data(),
                       dout.data.size());
                break;
            case NodeKind::Conv2d:
            case NodeKind::Conv2dTranspose: {
                const Tensor& k = store.at(kernel_name(id));
                Tensor* dk = nullptr;
                std::vector<float>* db = nullptr;
                if (grads) {
                    auto kit = grads->kernel.find(id);
                    if (kit == grads->kernel.end()) {
                        Tensor zero;
                        zero.dims = k.dims;
                        zero.data.assign(k.data.size(), 0.0f);
                        kit = grads->kernel.emplace(id, std::move(zero)).first;
                    }
                    dk = &kit->second;
                    if (n.attrs.has_bias) {
                        auto bit = grads->bias.find(id);
                        if (bit == grads->bias.end())
                            bit = grads->bias
                                      .emplace(id, std::vector<float>(
                                                       static_cast<size_t>(n.attrs.out_channels),
                                                       0.0f))
                                      .first;
                        db = &bit->second;
                    }
                }
                const TensorBuf& in = acts.outs.at(in_edges[0]->from);
                TensorBuf& din = grad_of(in_edges[0]->from);
                if (n.kind == NodeKind::Conv2d)
                    conv2d_backward(n, in, k, dout, &din, dk, db);
                else
                    convt_backward(n, in, k, dout, &din, dk, db);
                break;
            }
            case NodeKind::EltwiseAdd:
                for (const Edge* e : in_edges) {
                    TensorBuf& din = grad_of(e->from);
                    kn.add(din.data.data(), din.data.data(), dout.data.data(),
                           dout.data.size());
                }
                break;
            case NodeKind::Concat: {
                int64_t c0 = 0;
                for (const Edge* e : in_edges) {
                    TensorBuf& din = grad_of(e->from);
                    for (int64_t ni = 0; ni < dout.n; ++ni)
                        for (int64_t ci = 0; ci < din.c; ++ci) {
                            const float* src = dout.chan(ni, c0 + ci);
                            float* dst = din.chan(ni, ci);
                            kn.add(dst, dst, src, static_cast<size_t>(din.h * din.w));
                        }
                    c0 += din.c;
                }
                break;
            }
            case NodeKind::PixelShuffle:
                pixel_shuffle_backward(n.attrs.upscale, dout, &grad_of(in_edges[0]->from));
                break;
            case NodeKind::LeakyRelu:
            case NodeKind::Relu: {
                const float slope =
                    n.kind == NodeKind::Relu ? 0.0f : static_cast<float>(n.attrs.slope);
                const TensorBuf& x = acts.outs.at(in_edges[0]->from);
                TensorBuf local = TensorBuf::zeros(dout.n, dout.c, dout.h, dout.w);
                kn.leaky_relu_grad(local.data.data(), dout.data.data(), x.data.data(), slope,
                                   dout.data.size());
                TensorBuf& din = grad_of(in_edges[0]->from);
                kn.add(din.data.data(), din.data.data(), local.data.data(), local.data.size());
                break;
            }
            case NodeKind::MaxPool2d: {
                const auto& argmax = acts.pool_argmax.at(id);
                TensorBuf& din = grad_of(in_edges[0]->from);
                for (int64_t ni = 0; ni < dout.n; ++ni)
                    for (int64_t ci = 0; ci < dout.c; ++ci) {
                        const float* g = dout.chan(ni, ci);
                        float* dst = din.chan(ni, ci);
                        const int64_t base = ((ni * dout.c + ci) * dout.h) * dout.w;
                        for (int64_t p = 0; p < dout.h * dout.w; ++p)
                            dst[argmax[static_cast<size_t>(base + p)]] += g[p];
                    }
                break;
            }
            default:
                break;
        }
    }
}

}  // namespace

TensorBuf forward(const NetworkGraph& graph, const WeightStore& store,
                  const TensorBuf& input) {
    const Plan plan = make_plan(graph);
    TensorBuf out = run_forward(graph, store, input, plan, nullptr);
    for (float v : out.data)
        if (!std::isfinite(v)) throw EngineError("non-finite network output");
    return out;
}

Gradients compute_gradients(const NetworkGraph& graph, const WeightStore& store,
                            const Sample& sample, TrainSpec::Loss loss) {
    const Plan plan = make_plan(graph);
    Activations acts;
    const TensorBuf y = run_forward(graph, store, sample.input, plan, &acts);
    TensorBuf dy;
    Gradients out;
    out.loss = loss_and_grad(loss, y, sample.target, &dy);

    GradStore grads;
    run_backward(graph, store, plan, acts, dy, &grads, &out.input);
    out.kernel = std::move(grads.kernel);
    out.bias = std::move(grads.bias);
    return out;
}

TrainResult train(const NetworkGraph& graph, WeightStore& store, const Dataset& dataset,
                  const TrainSpec& spec, int64_t step_cap) {
    if (dataset.empty()) throw EngineError("empty training dataset");
    if (spec.batch_size < 1 || spec.learning_rate <= 0 || spec.steps_per_round < 0)
        throw EngineError("invalid train spec");
    const Plan plan = make_plan(graph);
    const int64_t steps = step_cap < 0 ? spec.steps_per_round
                                       : std::min<int64_t>(spec.steps_per_round, step_cap);

    std::vector<size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), size_t{0});
    Rng rng(spec.seed);
    for (size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[static_cast<size_t>(rng.next_u64() % i)]);

    const Kernels& kn = kernels::active();
    TrainResult result;
    size_t cursor = 0;
    for (int64_t step = 0; step < steps; ++step) {
        GradStore grads;
        double batch_loss = 0.0;
        for (int b = 0; b < spec.batch_size; ++b) {
            const Sample& s = dataset[order[cursor]];
            cursor = (cursor + 1) % order.size();
            Activations acts;
            TensorBuf y = run_forward(graph, store, s.input, plan, &acts);
            TensorBuf dy;
            batch_loss += loss_and_grad(spec.loss, y, s.target, &dy);
            run_backward(graph, store, plan, acts, dy, &grads);
        }
        batch_loss /= spec.batch_size;
        if (!std::isfinite(batch_loss))
            throw EngineError("training diverged: non-finite loss at step " +
                              std::to_string(result.steps));
        const float scale = static_cast<float>(-spec.learning_rate / spec.batch_size);
        for (auto& [id, dk] : grads.kernel) {
            Tensor& k = store.at(kernel_name(id));
            kn.axpy(k.data.data(), dk.data.data(), scale, k.data.size());
        }
        for (auto& [id, db] : grads.bias) {
            Tensor& bias = store.at(bias_name(id));
            kn.axpy(bias.data.data(), db.data(), scale, bias.data.size());
        }
        result.final_loss = batch_loss;
        ++result.steps;
    }
    return result;
}

namespace {

// Smooth procedural test pattern in [0, 1].
TensorBuf pattern_image(Rng* rng, int size, int channels) {
    TensorBuf img = TensorBuf::zeros(1, channels, size, size);
    for (int ci = 0; ci < channels; ++ci) {
        const double base = rng->uniform(0.3, 0.7);
        const double gx = rng->uniform(-0.4, 0.4);
        const double gy = rng->uniform(-0.4, 0.4);
        const double fx = rng->uniform(0.5, 2.5);
        const double fy = rng->uniform(0.5, 2.5);
        const double phase = rng->uniform(0.0, 2.0 * M_PI);
        const double amp = rng->uniform(0.05, 0.2);
        const double cx = rng->uniform(0.2, 0.8) * size;
        const double cy = rng->uniform(0.2, 0.8) * size;
        const double blob_amp = rng->uniform(-0.3, 0.3);
        const double blob_sigma = rng->uniform(0.1, 0.3) * size;
        float* p = img.chan(0, ci);
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                const double u = static_cast<double>(x) / size;
                const double v = static_cast<double>(y) / size;
                double val = base + gx * (u - 0.5) + gy * (v - 0.5) +
                             amp * std::sin(2.0 * M_PI * (fx * u + fy * v) + phase);
                const double dx = x - cx, dy = y - cy;
                val += blob_amp *
                       std::exp(-(dx * dx + dy * dy) / (2.0 * blob_sigma * blob_sigma));
                p[y * size + x] = static_cast<float>(std::clamp(val, 0.0, 1.0));
            }
    }
    return img;
}

float catmull_rom(float p0, float p1, float p2, float p3, float t) {
    return 0.5f * ((2.0f * p1) + (-p0 + p2) * t + (2.0f * p0 - 5.0f * p1 + 4.0f * p2 - p3) * t * t +
                   (-p0 + 3.0f * p1 - 3.0f * p2 + p3) * t * t * t);
}

// Bicubic (Catmull-Rom) 2x downsample, half-pixel centers.
TensorBuf bicubic_down2(const TensorBuf& src) {
    const int64_t ho = src.h / 2, wo = src.w / 2;
    TensorBuf dst = TensorBuf::zeros(src.n, src.c, ho, wo);
    auto sample_row = [&](const float* row, int64_t width, double x) {
        const int64_t xi = static_cast<int64_t>(std::floor(x));
        const float t = static_cast<float>(x - xi);
        auto px = [&](int64_t i) {
            return row[std::clamp<int64_t>(i, 0, width - 1)];
        };
        return catmull_rom(px(xi - 1), px(xi), px(xi + 1), px(xi + 2), t);
    };
    std::vector<float> rows(4);
    for (int64_t ni = 0; ni < src.n; ++ni)
        for (int64_t ci = 0; ci < src.c; ++ci) {
            const float* s = src.chan(ni, ci);
            float* d = dst.chan(ni, ci);
            for (int64_t y = 0; y < ho; ++y)
                for (int64_t x = 0; x < wo; ++x) {
                    const double sy = (y + 0.5) * 2.0 - 0.5;
                    const double sx = (x + 0.5) * 2.0 - 0.5;
                    const int64_t yi = static_cast<int64_t>(std::floor(sy));
                    const float ty = static_cast<float>(sy - yi);
                    for (int64_t j = 0; j < 4; ++j) {
                        const int64_t yy = std::clamp<int64_t>(yi - 1 + j, 0, src.h - 1);
                        rows[static_cast<size_t>(j)] = sample_row(s + yy * src.w, src.w, sx);
                    }
                    d[y * wo + x] = catmull_rom(rows[0], rows[1], rows[2], rows[3], ty);
                }
        }
    return dst;
}

}  // namespace

Dataset make_synthetic_dataset(SyntheticKind kind, uint64_t seed, int count, int size,
                               int channels, double noise_sigma) {
    Dataset out;
    out.reserve(static_cast<size_t>(count));
    Rng rng(seed);
    for (int i = 0; i < count; ++i) {
        Sample s;
        if (kind == SyntheticKind::Denoise) {
            s.target = pattern_image(&rng, size, channels);
            s.input = s.target;
            for (float& v : s.input.data) v += static_cast<float>(rng.normal(noise_sigma));
        } else {
            s.target = pattern_image(&rng, size * 2, channels);
            s.input = bicubic_down2(s.target);
        }
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace prunekit
