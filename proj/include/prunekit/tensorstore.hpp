#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "prunekit/nir.hpp"

namespace prunekit {

class IoError : public std::runtime_error {
public:
    enum class Code {
        BadMagic,
        BadVersion,
        BadDtype,
        Truncated,
        DimsMismatch,
        File,
    };
    IoError(Code code, const std::string& what) : std::runtime_error(what), code(code) {}
    Code code;
};

struct Tensor {
    std::vector<uint32_t> dims;  // kernel: [o, i, k, k]; bias: [o]
    std::vector<float> data;     // row-major

    uint64_t elems() const {
        uint64_t n = 1;
        for (uint32_t d : dims) n *= d;
        return n;
    }
};

// Named f32 tensors. Iteration and serialization follow insertion order so
// that a load/save cycle is byte-identical.
class WeightStore {
public:
    bool has(const std::string& name) const { return index_.count(name) != 0; }
    const Tensor& at(const std::string& name) const;
    Tensor& at(const std::string& name);
    void put(const std::string& name, Tensor tensor);
    size_t size() const { return entries_.size(); }

    const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
    std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }

private:
    std::vector<std::pair<std::string, Tensor>> entries_;
    std::map<std::string, size_t> index_;
};

// Binary container, little-endian throughout: magic "PRWT", u32 version=1,
// u32 tensor_count, u32 reserved; per tensor: u16 name_len, name bytes,
// u8 dtype (0 = f32), u8 rank, u32 dims[rank], raw f32 payload. No padding.
std::vector<uint8_t> store_to_bytes(const WeightStore& store);
WeightStore store_from_bytes(const uint8_t* data, size_t size);
WeightStore load_store(const std::filesystem::path& path);
void save_store(const WeightStore& store, const std::filesystem::path& path);

// FNV-1a over the canonical serialized bytes.
uint64_t store_checksum(const WeightStore& store);
uint64_t fnv1a(const uint8_t* data, size_t size);
uint64_t file_checksum(const std::filesystem::path& path);

inline std::string kernel_name(const std::string& node_id) { return node_id + ".kernel"; }
inline std::string bias_name(const std::string& node_id) { return node_id + ".bias"; }

// Per output channel, the max |w| over the channel's i*k*k kernel weights.
// Biases are not consulted.
std::vector<float> max_abs_per_output_channel(const WeightStore& store,
                                              const std::string& node_id);

// Fan-in-scaled normal kernels (sigma = sqrt(2 / (i*k*k))), zero biases.
// Deterministic in (graph, seed).
WeightStore init_weights(const NetworkGraph& graph, uint64_t seed);

// Store/graph consistency: every conv-like node has a kernel of matching
// (o, i, k) and, when has_bias, a bias of length o.
std::vector<std::string> check_store(const NetworkGraph& graph, const WeightStore& store);

}  // namespace prunekit
