#pragma once

#include <filesystem>

#include "prunekit/engine.hpp"

namespace prunekit {

// Binary PGM (P5) and PPM (P6), 8-bit. Pixel values load as floats in
// [0, 255]; saving clamps and rounds. Channel count must be 1 (PGM) or
// 3 (PPM) when saving.
TensorBuf load_pnm(const std::filesystem::path& path);
void save_pnm(const TensorBuf& image, const std::filesystem::path& path);

// Raw f32 tensor: magic "PRTF", u8 rank, u32 dims[rank] little-endian,
// f32 payload. Rank 3 is (C, H, W).
TensorBuf load_tensor_f32(const std::filesystem::path& path);
void save_tensor_f32(const TensorBuf& tensor, const std::filesystem::path& path);

// Dispatch on extension: .pgm/.ppm vs anything else (raw tensor).
TensorBuf load_image_any(const std::filesystem::path& path);
void save_image_any(const TensorBuf& image, const std::filesystem::path& path);

// Dataset container: sample i stored as "<i>.input" / "<i>.target" tensors
// in a PRWT weight store, rank-3 dims.
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace prunekit
