#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace ogs {

enum class PlyType { Int8, UInt8, Int16, UInt16, Int32, UInt32, Float32, Float64 };

struct PlyProperty {
    std::string name;
    PlyType type = PlyType::Float32;
    std::vector<double> values;
};

/// The vertex element of a PLY file, column-major. Other elements are ignored
/// on read and never written.
struct PlyVertices {
    size_t count = 0;
    std::vector<PlyProperty> properties;

    bool has(const std::string& name) const;
    const std::vector<double>& column(const std::string& name) const;
    /// Appends a column; `values.size()` must equal `count`.
    void add(std::string name, PlyType type, std::vector<double> values);
};

/// Reads ASCII, binary_little_endian, or binary_big_endian PLY.
PlyVertices read_ply(const std::filesystem::path& path);

/// Writes binary_little_endian PLY.
void write_ply(const std::filesystem::path& path, const PlyVertices& vertices);

}  // namespace ogs
