#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "rmx/array.hpp"

namespace rmx::io {

// Versioned binary container: 4-byte magic, u32 version, a JSON metadata
// blob, then named arrays. All integers and the f32 payloads are
// little-endian on disk regardless of host order. Arrays compute in f64 in
// memory and narrow to f32 here.
struct Container {
    std::string magic;  // exactly 4 characters
    std::uint32_t version = 1;
    std::string meta_json = "{}";
    std::vector<std::pair<std::string, Array>> arrays;

    void add(std::string name, Array a) { arrays.emplace_back(std::move(name), std::move(a)); }
    const Array* find(const std::string& name) const;
    const Array& require(const std::string& name) const;
};

void save_container(const std::string& path, const Container& c);

// Loads and checks the magic; throws on any structural mismatch.
Container load_container(const std::string& path, const std::string& expect_magic);

}  // namespace rmx::io
