#include "rmx/container_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace rmx::io {

namespace {

template <typename T>
void put_le(std::ostream& out, T value) {
    unsigned char bytes[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        bytes[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff);
    }
    out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
    unsigned char bytes[sizeof(T)];
    if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
        throw std::runtime_error("container: truncated file");
    }
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    }
    return static_cast<T>(v);
}

void put_f32(std::ostream& out, float value) {
    std::uint32_t bits;
    std::memcpy(&bits, &value, sizeof(bits));
    put_le<std::uint32_t>(out, bits);
}

float get_f32(std::istream& in) {
    const std::uint32_t bits = get_le<std::uint32_t>(in);
    float value;
    std::memcpy(&value, &bits, sizeof(value));
    return value;
}

}  // namespace

const Array* Container::find(const std::string& name) const {
    for (const auto& [n, a] : arrays) {
        if (n == name) return &a;
    }
    return nullptr;
}

const Array& Container::require(const std::string& name) const {
    const Array* a = find(name);
    if (a == nullptr) throw std::runtime_error("container: missing array '" + name + "'");
    return *a;
}

void save_container(const std::string& path, const Container& c) {
    if (c.magic.size() != 4) throw std::runtime_error("container: magic must be 4 bytes");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("container: cannot open '" + path + "' for writing");
    out.write(c.magic.data(), 4);
    put_le<std::uint32_t>(out, c.version);
    put_le<std::uint64_t>(out, c.meta_json.size());
    out.write(c.meta_json.data(), static_cast<std::streamsize>(c.meta_json.size()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(c.arrays.size()));
    for (const auto& [name, a] : c.arrays) {
        put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_le<std::uint8_t>(out, static_cast<std::uint8_t>(a.rank()));
        for (std::size_t i = 0; i < a.rank(); ++i) put_le<std::uint64_t>(out, a.dim(i));
        for (double v : a.flat()) put_f32(out, static_cast<float>(v));
    }
    if (!out) throw std::runtime_error("container: write failed for '" + path + "'");
}

Container load_container(const std::string& path, const std::string& expect_magic) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("container: cannot open '" + path + "'");
    Container c;
    char magic[4];
    if (!in.read(magic, 4)) throw std::runtime_error("container: truncated file");
    c.magic.assign(magic, 4);
    if (c.magic != expect_magic) {
        throw std::runtime_error("container: bad magic in '" + path + "' (expected " +
                                 expect_magic + ")");
    }
    c.version = get_le<std::uint32_t>(in);
    const std::uint64_t meta_len = get_le<std::uint64_t>(in);
    c.meta_json.resize(meta_len);
    if (meta_len > 0 && !in.read(c.meta_json.data(), static_cast<std::streamsize>(meta_len))) {
        throw std::runtime_error("container: truncated metadata");
    }
    const std::uint32_t n = get_le<std::uint32_t>(in);
    for (std::uint32_t i = 0; i < n; ++i) {
        const std::uint16_t name_len = get_le<std::uint16_t>(in);
        std::string name(name_len, '\0');
        if (!in.read(name.data(), name_len)) throw std::runtime_error("container: truncated name");
        const std::uint8_t rank = get_le<std::uint8_t>(in);
        std::vector<std::size_t> shape(rank);
        for (auto& d : shape) d = static_cast<std::size_t>(get_le<std::uint64_t>(in));
        Array a(shape);
        for (std::size_t j = 0; j < a.size(); ++j) a[j] = static_cast<double>(get_f32(in));
        c.add(std::move(name), std::move(a));
    }
    return c;
}

}  // namespace rmx::io
