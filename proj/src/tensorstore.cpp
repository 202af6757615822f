#include "prunekit/tensorstore.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "prunekit/kernels.hpp"
#include "prunekit/rng.hpp"

namespace prunekit {

namespace {

constexpr char kMagic[4] = {'P', 'R', 'W', 'T'};
constexpr uint32_t kVersion = 1;

void put_u16(std::vector<uint8_t>* out, uint16_t v) {
    out->push_back(static_cast<uint8_t>(v & 0xff));
    out->push_back(static_cast<uint8_t>(v >> 8));
}

void put_u32(std::vector<uint8_t>* out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out->push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

void put_f32(std::vector<uint8_t>* out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

struct Reader {
    const uint8_t* p;
    size_t left;

    void need(size_t n) const {
        if (left < n) throw IoError(IoError::Code::Truncated, "truncated weight store payload");
    }
    uint8_t u8() {
        need(1);
        uint8_t v = *p;
        ++p;
        --left;
        return v;
    }
    uint16_t u16() {
        need(2);
        uint16_t v = static_cast<uint16_t>(p[0] | (p[1] << 8));
        p += 2;
        left -= 2;
        return v;
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[i]) << (8 * i);
        p += 4;
        left -= 4;
        return v;
    }
    float f32() {
        uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::string str(size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(p), n);
        p += n;
        left -= n;
        return s;
    }
};

}  // namespace

const Tensor& WeightStore::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end())
        throw IoError(IoError::Code::DimsMismatch, "missing tensor: " + name);
    return entries_[it->second].second;
}

Tensor& WeightStore::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end())
        throw IoError(IoError::Code::DimsMismatch, "missing tensor: " + name);
    return entries_[it->second].second;
}

void WeightStore::put(const std::string& name, Tensor tensor) {
    if (tensor.elems() != tensor.data.size())
        throw IoError(IoError::Code::DimsMismatch,
                      "tensor " + name + ": dims product != element count");
    auto it = index_.find(name);
    if (it != index_.end()) {
        entries_[it->second].second = std::move(tensor);
    } else {
        index_[name] = entries_.size();
        entries_.emplace_back(name, std::move(tensor));
    }
}

std::vector<uint8_t> store_to_bytes(const WeightStore& store) {
    std::vector<uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 4);
    put_u32(&out, kVersion);
    put_u32(&out, static_cast<uint32_t>(store.size()));
    put_u32(&out, 0);  // reserved
    for (const auto& [name, t] : store.entries()) {
        put_u16(&out, static_cast<uint16_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        out.push_back(0);  // dtype f32
        out.push_back(static_cast<uint8_t>(t.dims.size()));
        for (uint32_t d : t.dims) put_u32(&out, d);
        for (float v : t.data) put_f32(&out, v);
    }
    return out;
}

WeightStore store_from_bytes(const uint8_t* data, size_t size) {
    Reader r{data, size};
    r.need(16);
    if (std::memcmp(r.p, kMagic, 4) != 0)
        throw IoError(IoError::Code::BadMagic, "bad magic, not a PRWT weight store");
    r.p += 4;
    r.left -= 4;
    const uint32_t version = r.u32();
    if (version != kVersion)
        throw IoError(IoError::Code::BadVersion,
                      "unsupported weight store version " + std::to_string(version));
    const uint32_t count = r.u32();
    r.u32();  // reserved
    WeightStore store;
    for (uint32_t i = 0; i < count; ++i) {
        const uint16_t name_len = r.u16();
        const std::string name = r.str(name_len);
        const uint8_t dtype = r.u8();
        if (dtype != 0)
            throw IoError(IoError::Code::BadDtype,
                          "unsupported dtype " + std::to_string(dtype) + " for " + name);
        const uint8_t rank = r.u8();
        Tensor t;
        t.dims.resize(rank);
        for (uint8_t d = 0; d < rank; ++d) t.dims[d] = r.u32();
        const uint64_t n = t.elems();
        r.need(n * 4);
        t.data.resize(n);
        for (uint64_t k = 0; k < n; ++k) t.data[k] = r.f32();
        store.put(name, std::move(t));
    }
    if (r.left != 0)
        throw IoError(IoError::Code::DimsMismatch, "trailing bytes after last tensor");
    return store;
}

WeightStore load_store(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(IoError::Code::File, "cannot open weight store: " + path.string());
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    return store_from_bytes(bytes.data(), bytes.size());
}

void save_store(const WeightStore& store, const std::filesystem::path& path) {
    const auto bytes = store_to_bytes(store);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(IoError::Code::File, "cannot write weight store: " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

uint64_t fnv1a(const uint8_t* data, size_t size) {
    uint64_t h = 1469598103934665603ull;
    for (size_t i = 0; i < size; ++i) {
        h ^= data[i];
        h *= 1099511628211ull;
    }
    return h;
}

uint64_t store_checksum(const WeightStore& store) {
    const auto bytes = store_to_bytes(store);
    return fnv1a(bytes.data(), bytes.size());
}

uint64_t file_checksum(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(IoError::Code::File, "cannot open file: " + path.string());
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    return fnv1a(bytes.data(), bytes.size());
}

std::vector<float> max_abs_per_output_channel(const WeightStore& store,
                                              const std::string& node_id) {
    const Tensor& k = store.at(kernel_name(node_id));
    if (k.dims.size() != 4)
        throw IoError(IoError::Code::DimsMismatch, "kernel " + node_id + " is not rank 4");
    const size_t o = k.dims[0];
    const size_t per_channel = k.dims[1] * size_t(k.dims[2]) * k.dims[3];
    std::vector<float> stats(o, 0.0f);
    const auto& kn = kernels::active();
    for (size_t c = 0; c < o; ++c)
        stats[c] = per_channel == 0 ? 0.0f : kn.max_abs(k.data.data() + c * per_channel,
                                                        per_channel);
    return stats;
}

WeightStore init_weights(const NetworkGraph& graph, uint64_t seed) {
    WeightStore store;
    Rng rng(seed);
    for (const Node& n : graph.nodes()) {
        if (!is_conv_like(n.kind)) continue;
        const NodeAttrs& a = n.attrs;
        const uint64_t fan_in = uint64_t(a.in_channels) * a.kernel * a.kernel;
        const double sigma = fan_in == 0 ? 0.0 : std::sqrt(2.0 / static_cast<double>(fan_in));
        Tensor kernel;
        kernel.dims = {static_cast<uint32_t>(a.out_channels), static_cast<uint32_t>(a.in_channels),
                       static_cast<uint32_t>(a.kernel), static_cast<uint32_t>(a.kernel)};
        kernel.data.resize(kernel.elems());
        for (float& v : kernel.data) v = static_cast<float>(rng.normal(sigma));
        store.put(kernel_name(n.id), std::move(kernel));
        if (a.has_bias) {
            Tensor bias;
            bias.dims = {static_cast<uint32_t>(a.out_channels)};
            bias.data.assign(bias.elems(), 0.0f);
            store.put(bias_name(n.id), std::move(bias));
        }
    }
    return store;
}

std::vector<std::string> check_store(const NetworkGraph& graph, const WeightStore& store) {
    std::vector<std::string> problems;
    for (const Node& n : graph.nodes()) {
        if (!is_conv_like(n.kind)) continue;
        const NodeAttrs& a = n.attrs;
        if (!store.has(kernel_name(n.id))) {
            problems.push_back(n.id + ": missing kernel tensor");
            continue;
        }
        const Tensor& k = store.at(kernel_name(n.id));
        const std::vector<uint32_t> want = {
            static_cast<uint32_t>(a.out_channels), static_cast<uint32_t>(a.in_channels),
            static_cast<uint32_t>(a.kernel), static_cast<uint32_t>(a.kernel)};
        if (k.dims != want) problems.push_back(n.id + ": kernel dims disagree with graph attrs");
        if (a.has_bias) {
            if (!store.has(bias_name(n.id))) {
                problems.push_back(n.id + ": missing bias tensor");
            } else if (store.at(bias_name(n.id)).dims !=
                       std::vector<uint32_t>{static_cast<uint32_t>(a.out_channels)}) {
                problems.push_back(n.id + ": bias length disagrees with out_channels");
            }
        }
    }
    return problems;
}

}  // namespace prunekit
