#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "tailor/digest.hpp"
#include "tailor/errors.hpp"
#include "tailor/tensor.hpp"

namespace tailor {

// Versioned binary checkpoint. Layout, all integers little-endian:
//   magic "TLRB" | u32 version | u64 step
//   u32 config length | config text
//   u32 array count
//   per array: u16 name length | name | u8 rank | u32 dims... | f64 scalars
//   u64 FNV-1a digest of every preceding byte
// Save -> load -> save round-trips byte-identically.
struct CheckpointBundle {
    static constexpr char kMagic[4] = {'T', 'L', 'R', 'B'};
    static constexpr std::uint32_t kVersion = 1;

    std::uint64_t step = 0;
    std::string config_text;
    std::vector<std::pair<std::string, Tensor>> arrays;  // insertion-ordered

    const Tensor* find(const std::string& name) const {
        for (const auto& [n, t] : arrays) {
            if (n == name) return &t;
        }
        return nullptr;
    }

    std::vector<std::uint8_t> serialize() const {
        std::vector<std::uint8_t> out;
        out.insert(out.end(), kMagic, kMagic + 4);
        put_u32(out, kVersion);
        put_u64(out, step);
        put_u32(out, static_cast<std::uint32_t>(config_text.size()));
        out.insert(out.end(), config_text.begin(), config_text.end());
        put_u32(out, static_cast<std::uint32_t>(arrays.size()));
        for (const auto& [name, t] : arrays) {
            put_u16(out, static_cast<std::uint16_t>(name.size()));
            out.insert(out.end(), name.begin(), name.end());
            out.push_back(static_cast<std::uint8_t>(t.rank()));
            for (std::size_t d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
            for (real_t v : t.data()) put_f64(out, static_cast<double>(v));
        }
        put_u64(out, fnv1a64(out.data(), out.size()));
        return out;
    }

    std::uint64_t content_digest() const {
        const auto bytes = serialize();
        // digest over the payload (excluding the trailing digest itself)
        return fnv1a64(bytes.data(), bytes.size() - 8);
    }

    void save(const std::string& path) const {
        const auto bytes = serialize();
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw IOError("cannot open " + path + " for writing");
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IOError("short write to " + path);
    }

    static CheckpointBundle load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IOError("cannot open " + path);
        std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
        return deserialize(bytes);
    }

    static CheckpointBundle deserialize(const std::vector<std::uint8_t>& bytes) {
        Reader r{bytes, 0};
        if (bytes.size() < 4 + 4 + 8 + 4 + 4 + 8) throw CorruptCheckpoint("truncated file");
        // verify trailing digest before trusting any field
        const std::uint64_t stored = read_u64_at(bytes, bytes.size() - 8);
        const std::uint64_t actual = fnv1a64(bytes.data(), bytes.size() - 8);
        if (stored != actual) throw CorruptCheckpoint("content digest mismatch");

        char magic[4];
        r.bytes_into(magic, 4);
        if (std::memcmp(magic, kMagic, 4) != 0) throw CorruptCheckpoint("bad magic");
        const std::uint32_t version = r.u32();
        if (version != kVersion) {
            throw VersionMismatch("checkpoint version " + std::to_string(version) +
                                  ", expected " + std::to_string(kVersion));
        }
        CheckpointBundle b;
        b.step = r.u64();
        const std::uint32_t config_len = r.u32();
        b.config_text.resize(config_len);
        r.bytes_into(b.config_text.data(), config_len);
        const std::uint32_t count = r.u32();
        for (std::uint32_t i = 0; i < count; ++i) {
            const std::uint16_t name_len = r.u16();
            std::string name(name_len, '\0');
            r.bytes_into(name.data(), name_len);
            const std::uint8_t rank = r.u8();
            Shape shape(rank);
            std::size_t numel = 1;
            for (std::uint8_t d = 0; d < rank; ++d) {
                shape[d] = r.u32();
                numel *= shape[d];
            }
            std::vector<real_t> data(numel);
            for (std::size_t j = 0; j < numel; ++j) data[j] = static_cast<real_t>(r.f64());
            b.arrays.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(data)));
        }
        return b;
    }

    // Copies stored arrays into a parameter struct by name. Throws
    // ShapeMismatch naming the offending array when architectures differ.
    template <typename Params>
    void apply_to(Params& params, const std::string& prefix = "") const {
        params.visit([&](const std::string& name, Tensor& t) {
            const Tensor* stored = find(prefix + name);
            if (!stored) {
                throw ShapeMismatch("checkpoint lacks array '" + prefix + name + "'");
            }
            if (stored->shape() != t.shape()) {
                throw ShapeMismatch("array '" + prefix + name + "' has shape " +
                                    detail::shape_str(stored->shape()) + ", expected " +
                                    detail::shape_str(t.shape()));
            }
            t = Tensor::from(stored->shape(), stored->data(), /*requires_grad=*/true);
        });
    }

private:
    struct Reader {
        const std::vector<std::uint8_t>& b;
        std::size_t pos;

        void bytes_into(char* dst, std::size_t n) {
            if (pos + n > b.size()) throw CorruptCheckpoint("truncated field");
            std::memcpy(dst, b.data() + pos, n);
            pos += n;
        }
        std::uint8_t u8() {
            if (pos + 1 > b.size()) throw CorruptCheckpoint("truncated field");
            return b[pos++];
        }
        std::uint16_t u16() {
            std::uint16_t v = 0;
            for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(u8()) << (8 * i);
            return v;
        }
        std::uint32_t u32() {
            std::uint32_t v = 0;
            for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
            return v;
        }
        std::uint64_t u64() {
            std::uint64_t v = 0;
            for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
            return v;
        }
        double f64() {
            std::uint64_t bits = u64();
            double d;
            std::memcpy(&d, &bits, 8);
            return d;
        }
    };

    static void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
        for (int i = 0; i < 2; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    static void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    static void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
        for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    static void put_f64(std::vector<std::uint8_t>& out, double d) {
        std::uint64_t bits;
        std::memcpy(&bits, &d, 8);
        put_u64(out, bits);
    }
    static std::uint64_t read_u64_at(const std::vector<std::uint8_t>& b, std::size_t pos) {
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[pos + i]) << (8 * i);
        return v;
    }
};

}  // namespace tailor
