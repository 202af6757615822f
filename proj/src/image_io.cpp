#include "prunekit/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "prunekit/tensorstore.hpp"

namespace prunekit {

namespace {

int read_pnm_token(std::istream& in) {
    // Skips whitespace and '#' comments, per the netpbm header grammar.
    while (true) {
        int ch = in.peek();
        if (ch == '#') {
            std::string line;
            std::getline(in, line);
        } else if (std::isspace(ch)) {
            in.get();
        } else {
            break;
        }
    }
    int value = 0;
    in >> value;
    return value;
}

}  // namespace

TensorBuf load_pnm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(IoError::Code::File, "cannot open image: " + path.string());
    char p = 0, kind = 0;
    in.get(p);
    in.get(kind);
    if (p != 'P' || (kind != '5' && kind != '6'))
        throw IoError(IoError::Code::BadMagic, "not a binary PGM/PPM file: " + path.string());
    const int channels = kind == '5' ? 1 : 3;
    const int width = read_pnm_token(in);
    const int height = read_pnm_token(in);
    const int maxval = read_pnm_token(in);
    if (width < 1 || height < 1 || maxval != 255)
        throw IoError(IoError::Code::DimsMismatch,
                      "unsupported PNM header (8-bit only): " + path.string());
    in.get();  // single whitespace before payload
    std::vector<uint8_t> raw(static_cast<size_t>(width) * height * channels);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<size_t>(in.gcount()) != raw.size())
        throw IoError(IoError::Code::Truncated, "truncated image payload: " + path.string());
    TensorBuf img = TensorBuf::zeros(1, channels, height, width);
    for (int64_t y = 0; y < height; ++y)
        for (int64_t x = 0; x < width; ++x)
            for (int c = 0; c < channels; ++c)
                img.at(0, c, y, x) =
                    static_cast<float>(raw[(y * width + x) * channels + c]);
    return img;
}

void save_pnm(const TensorBuf& image, const std::filesystem::path& path) {
    if (image.n != 1 || (image.c != 1 && image.c != 3))
        throw IoError(IoError::Code::DimsMismatch, "PNM images must have 1 or 3 channels");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(IoError::Code::File, "cannot write image: " + path.string());
    out << (image.c == 1 ? "P5" : "P6") << "\n"
        << image.w << " " << image.h << "\n255\n";
    std::vector<uint8_t> raw(static_cast<size_t>(image.w) * image.h * image.c);
    for (int64_t y = 0; y < image.h; ++y)
        for (int64_t x = 0; x < image.w; ++x)
            for (int64_t c = 0; c < image.c; ++c) {
                const float v = std::round(image.at(0, c, y, x));
                raw[static_cast<size_t>((y * image.w + x) * image.c + c)] =
                    static_cast<uint8_t>(std::clamp(v, 0.0f, 255.0f));
            }
    out.write(reinterpret_cast<const char*>(raw.data()),
              static_cast<std::streamsize>(raw.size()));
}

TensorBuf load_tensor_f32(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(IoError::Code::File, "cannot open tensor: " + path.string());
    char magic[4] = {};
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, "PRTF", 4) != 0)
        throw IoError(IoError::Code::BadMagic, "not a PRTF tensor file: " + path.string());
    uint8_t rank = 0;
    in.read(reinterpret_cast<char*>(&rank), 1);
    if (rank != 3)
        throw IoError(IoError::Code::DimsMismatch, "expected a rank-3 (C,H,W) tensor");
    uint32_t dims[3] = {};
    for (uint32_t& d : dims) {
        uint8_t b[4];
        in.read(reinterpret_cast<char*>(b), 4);
        if (in.gcount() != 4) throw IoError(IoError::Code::Truncated, "truncated tensor header");
        d = uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
    }
    TensorBuf t = TensorBuf::zeros(1, dims[0], dims[1], dims[2]);
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * 4));
    if (static_cast<size_t>(in.gcount()) != t.data.size() * 4)
        throw IoError(IoError::Code::Truncated, "truncated tensor payload: " + path.string());
    return t;
}

void save_tensor_f32(const TensorBuf& tensor, const std::filesystem::path& path) {
    if (tensor.n != 1)
        throw IoError(IoError::Code::DimsMismatch, "tensor files hold single images (n=1)");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(IoError::Code::File, "cannot write tensor: " + path.string());
    out.write("PRTF", 4);
    const uint8_t rank = 3;
    out.write(reinterpret_cast<const char*>(&rank), 1);
    const uint32_t dims[3] = {static_cast<uint32_t>(tensor.c), static_cast<uint32_t>(tensor.h),
                              static_cast<uint32_t>(tensor.w)};
    for (uint32_t d : dims) {
        const uint8_t b[4] = {static_cast<uint8_t>(d), static_cast<uint8_t>(d >> 8),
                              static_cast<uint8_t>(d >> 16), static_cast<uint8_t>(d >> 24)};
        out.write(reinterpret_cast<const char*>(b), 4);
    }
    out.write(reinterpret_cast<const char*>(tensor.data.data()),
              static_cast<std::streamsize>(tensor.data.size() * 4));
}

TensorBuf load_image_any(const std::filesystem::path& path) {
    const auto ext = path.extension().string();
    if (ext == ".pgm" || ext == ".ppm") return load_pnm(path);
    return load_tensor_f32(path);
}

void save_image_any(const TensorBuf& image, const std::filesystem::path& path) {
    const auto ext = path.extension().string();
    if (ext == ".pgm" || ext == ".ppm")
        save_pnm(image, path);
    else
        save_tensor_f32(image, path);
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
    WeightStore store;
    for (size_t i = 0; i < dataset.size(); ++i) {
        auto to_tensor = [](const TensorBuf& buf) {
            Tensor t;
            t.dims = {static_cast<uint32_t>(buf.c), static_cast<uint32_t>(buf.h),
                      static_cast<uint32_t>(buf.w)};
            t.data = buf.data;
            return t;
        };
        store.put(std::to_string(i) + ".input", to_tensor(dataset[i].input));
        store.put(std::to_string(i) + ".target", to_tensor(dataset[i].target));
    }
    save_store(store, path);
}

Dataset load_dataset(const std::filesystem::path& path) {
    const WeightStore store = load_store(path);
    Dataset out;
    for (size_t i = 0;; ++i) {
        const std::string in_name = std::to_string(i) + ".input";
        const std::string tg_name = std::to_string(i) + ".target";
        if (!store.has(in_name)) break;
        if (!store.has(tg_name))
            throw IoError(IoError::Code::DimsMismatch, "dataset missing " + tg_name);
        auto to_buf = [&](const Tensor& t) {
            if (t.dims.size() != 3)
                throw IoError(IoError::Code::DimsMismatch, "dataset tensors must be rank 3");
            TensorBuf buf = TensorBuf::zeros(1, t.dims[0], t.dims[1], t.dims[2]);
            buf.data = t.data;
            return buf;
        };
        Sample s;
        s.input = to_buf(store.at(in_name));
        s.target = to_buf(store.at(tg_name));
        out.push_back(std::move(s));
    }
    if (out.empty()) throw IoError(IoError::Code::DimsMismatch, "dataset has no samples");
    return out;
}

}  // namespace prunekit
