#pragma once

// Raw tensor container. Single tensor record:
//   magic "TTNT", version byte 1, rank byte, rank x u64 little-endian extents,
//   then row-major 32-bit floats.
// Checkpoint file: magic "TTNC", version byte 1, u32 config-text length,
//   config text, u64 section count, then per section a u32 name length,
//   the name, and one tensor record.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "tritransnet/nn.hpp"

namespace ttn {

namespace io_detail {

inline void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = (unsigned char)(v >> (8 * i));
    os.write((const char*)b, 8);
}
inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = (unsigned char)(v >> (8 * i));
    os.write((const char*)b, 4);
}
inline std::uint64_t get_u64(std::istream& is, const std::string& path) {
    unsigned char b[8];
    if (!is.read((char*)b, 8)) throw DataError(path + ": truncated (u64 expected)");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= (std::uint64_t)b[i] << (8 * i);
    return v;
}
inline std::uint32_t get_u32(std::istream& is, const std::string& path) {
    unsigned char b[4];
    if (!is.read((char*)b, 4)) throw DataError(path + ": truncated (u32 expected)");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= (std::uint32_t)b[i] << (8 * i);
    return v;
}

}  // namespace io_detail

template <typename T>
void write_tensor_record(std::ostream& os, const Tensor<T>& t) {
    os.write("TTNT", 4);
    os.put((char)1);
    os.put((char)t.rank());
    for (long e : t.shape()) io_detail::put_u64(os, (std::uint64_t)e);
    for (T v : t.vec()) {
        float f = (float)v;
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        io_detail::put_u32(os, bits);
    }
}

template <typename T>
Tensor<T> read_tensor_record(std::istream& is, const std::string& path) {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "TTNT", 4) != 0)
        throw DataError(path + ": bad tensor magic (expected TTNT)");
    int version = is.get();
    if (version != 1) throw DataError(path + ": unsupported tensor version " + std::to_string(version));
    int rank = is.get();
    if (rank < 0 || rank > 8) throw DataError(path + ": implausible tensor rank " + std::to_string(rank));
    Shape shape(rank);
    long n = 1;
    for (int i = 0; i < rank; ++i) {
        std::uint64_t e = io_detail::get_u64(is, path);
        if (e == 0 || e > (1ull << 32)) throw DataError(path + ": implausible extent");
        shape[i] = (long)e;
        n *= shape[i];
    }
    std::vector<T> data((size_t)n);
    for (long i = 0; i < n; ++i) {
        std::uint32_t bits = io_detail::get_u32(is, path);
        float f;
        std::memcpy(&f, &bits, 4);
        data[i] = (T)f;
    }
    return Tensor<T>::from(std::move(shape), std::move(data));
}

template <typename T>
void save_checkpoint(const std::string& path, const ParamList<T>& params,
                     const std::string& config_text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write checkpoint: " + path);
    os.write("TTNC", 4);
    os.put((char)1);
    io_detail::put_u32(os, (std::uint32_t)config_text.size());
    os.write(config_text.data(), (std::streamsize)config_text.size());
    io_detail::put_u64(os, params.items.size());
    for (const auto& [name, t] : params.items) {
        io_detail::put_u32(os, (std::uint32_t)name.size());
        os.write(name.data(), (std::streamsize)name.size());
        write_tensor_record(os, t);
    }
    if (!os) throw DataError("checkpoint write failed: " + path);
}

template <typename T>
struct Checkpoint {
    std::string config_text;
    std::vector<std::pair<std::string, Tensor<T>>> sections;

    const Tensor<T>* find(const std::string& name) const {
        for (const auto& [k, t] : sections)
            if (k == name) return &t;
        return nullptr;
    }
};

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("checkpoint not found: " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "TTNC", 4) != 0)
        throw DataError(path + ": bad checkpoint magic (expected TTNC)");
    int version = is.get();
    if (version != 1) throw DataError(path + ": unsupported checkpoint version");
    Checkpoint<T> ck;
    std::uint32_t clen = io_detail::get_u32(is, path);
    ck.config_text.resize(clen);
    if (clen && !is.read(ck.config_text.data(), clen)) throw DataError(path + ": truncated config");
    std::uint64_t count = io_detail::get_u64(is, path);
    for (std::uint64_t i = 0; i < count; ++i) {
        std::uint32_t nlen = io_detail::get_u32(is, path);
        std::string name(nlen, '\0');
        if (nlen && !is.read(name.data(), nlen)) throw DataError(path + ": truncated section name");
        ck.sections.emplace_back(std::move(name), read_tensor_record<T>(is, path));
    }
    return ck;
}

// Copies checkpoint sections into live parameters, by name; every name and
// shape must match.
template <typename T>
void restore_params(const Checkpoint<T>& ck, ParamList<T>& params, const std::string& path) {
    for (auto& [name, t] : params.items) {
        const Tensor<T>* src = ck.find(name);
        if (!src) throw DataError(path + ": checkpoint missing section '" + name + "'");
        if (src->shape() != t.shape())
            throw DataError(path + ": section '" + name + "' has shape " +
                            shape_str(src->shape()) + ", model expects " + shape_str(t.shape()));
        const_cast<Tensor<T>&>(t).vec() = src->vec();
    }
}

}  // namespace ttn
