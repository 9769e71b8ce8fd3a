#include "ogs/ply.hpp"

#include "ogs/geom.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace ogs {

namespace {

struct TypeInfo {
    PlyType type;
    const char* name;
    const char* alias;
    size_t size;
};

constexpr TypeInfo kTypes[] = {
    {PlyType::Int8, "char", "int8", 1},      {PlyType::UInt8, "uchar", "uint8", 1},
    {PlyType::Int16, "short", "int16", 2},   {PlyType::UInt16, "ushort", "uint16", 2},
    {PlyType::Int32, "int", "int32", 4},     {PlyType::UInt32, "uint", "uint32", 4},
    {PlyType::Float32, "float", "float32", 4}, {PlyType::Float64, "double", "float64", 8},
};

const TypeInfo& info_of(PlyType t) {
    for (const auto& i : kTypes) {
        if (i.type == t) {
            return i;
        }
    }
    throw Error("ply: unknown type");
}

PlyType parse_type(const std::string& s, const std::filesystem::path& path) {
    for (const auto& i : kTypes) {
        if (s == i.name || s == i.alias) {
            return i.type;
        }
    }
    throw ValidationError("ply: unsupported property type '" + s + "' in " + path.string());
}

template <typename T>
T load(const char* p, bool swap) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    if (swap) {
        char b[sizeof(T)];
        std::memcpy(b, &v, sizeof(T));
        std::reverse(b, b + sizeof(T));
        std::memcpy(&v, b, sizeof(T));
    }
    return v;
}

double decode(PlyType t, const char* p, bool swap) {
    switch (t) {
        case PlyType::Int8: return load<int8_t>(p, false);
        case PlyType::UInt8: return load<uint8_t>(p, false);
        case PlyType::Int16: return load<int16_t>(p, swap);
        case PlyType::UInt16: return load<uint16_t>(p, swap);
        case PlyType::Int32: return load<int32_t>(p, swap);
        case PlyType::UInt32: return load<uint32_t>(p, swap);
        case PlyType::Float32: return load<float>(p, swap);
        case PlyType::Float64: return load<double>(p, swap);
    }
    return 0.0;
}

template <typename T>
void store(std::string& out, double v) {
    const T x = static_cast<T>(v);
    char b[sizeof(T)];
    std::memcpy(b, &x, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        std::reverse(b, b + sizeof(T));
    }
    out.append(b, sizeof(T));
}

void encode(PlyType t, double v, std::string& out) {
    switch (t) {
        case PlyType::Int8: store<int8_t>(out, v); break;
        case PlyType::UInt8: store<uint8_t>(out, v); break;
        case PlyType::Int16: store<int16_t>(out, v); break;
        case PlyType::UInt16: store<uint16_t>(out, v); break;
        case PlyType::Int32: store<int32_t>(out, v); break;
        case PlyType::UInt32: store<uint32_t>(out, v); break;
        case PlyType::Float32: store<float>(out, v); break;
        case PlyType::Float64: store<double>(out, v); break;
    }
}

}  // namespace

bool PlyVertices::has(const std::string& name) const {
    return std::any_of(properties.begin(), properties.end(), [&](const PlyProperty& p) { return p.name == name; });
}

const std::vector<double>& PlyVertices::column(const std::string& name) const {
    for (const auto& p : properties) {
        if (p.name == name) {
            return p.values;
        }
    }
    throw ValidationError("ply: missing vertex property '" + name + "'");
}

void PlyVertices::add(std::string name, PlyType type, std::vector<double> values) {
    if (values.size() != count) {
        throw ValidationError("ply: column '" + name + "' has wrong length");
    }
    properties.push_back({std::move(name), type, std::move(values)});
}

PlyVertices read_ply(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ValidationError("cannot open '" + path.string() + "'");
    }
    std::string line;
    std::getline(in, line);
    if (line.rfind("ply", 0) != 0) {
        throw ValidationError("ply: bad magic in " + path.string());
    }
    enum class Format { Ascii, Little, Big } format = Format::Ascii;
    PlyVertices out;
    bool in_vertex = false;
    bool vertex_seen = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "format") {
            std::string f;
            ls >> f;
            if (f == "ascii") {
                format = Format::Ascii;
            } else if (f == "binary_little_endian") {
                format = Format::Little;
            } else if (f == "binary_big_endian") {
                format = Format::Big;
            } else {
                throw ValidationError("ply: unknown format '" + f + "' in " + path.string());
            }
        } else if (key == "element") {
            std::string name;
            size_t n = 0;
            ls >> name >> n;
            in_vertex = name == "vertex";
            if (in_vertex) {
                if (vertex_seen || !out.properties.empty()) {
                    throw ValidationError("ply: vertex element must come first in " + path.string());
                }
                vertex_seen = true;
                out.count = n;
            } else if (!vertex_seen) {
                throw ValidationError("ply: vertex element must come first in " + path.string());
            }
        } else if (key == "property") {
            if (!in_vertex) {
                continue;
            }
            std::string type;
            ls >> type;
            if (type == "list") {
                throw ValidationError("ply: list properties on vertices are not supported in " + path.string());
            }
            std::string name;
            ls >> name;
            out.properties.push_back({name, parse_type(type, path), std::vector<double>(out.count)});
        } else if (key == "end_header") {
            break;
        }
    }
    if (!vertex_seen) {
        throw ValidationError("ply: no vertex element in " + path.string());
    }
    if (format == Format::Ascii) {
        for (size_t i = 0; i < out.count; ++i) {
            for (auto& p : out.properties) {
                if (!(in >> p.values[i])) {
                    throw ValidationError("ply: truncated ASCII data in " + path.string());
                }
            }
        }
        return out;
    }
    size_t record = 0;
    for (const auto& p : out.properties) {
        record += info_of(p.type).size;
    }
    const bool swap = (format == Format::Big) != (std::endian::native == std::endian::big);
    std::vector<char> buf(record * out.count);
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (static_cast<size_t>(in.gcount()) != buf.size()) {
        throw ValidationError("ply: truncated binary data in " + path.string() + " at byte offset " +
                    std::to_string(static_cast<long long>(in.gcount())) + " of vertex payload");
    }
    const char* p = buf.data();
    for (size_t i = 0; i < out.count; ++i) {
        for (auto& prop : out.properties) {
            prop.values[i] = decode(prop.type, p, swap);
            p += info_of(prop.type).size;
        }
    }
    return out;
}

void write_ply(const std::filesystem::path& path, const PlyVertices& v) {
    std::string out;
    out += "ply\nformat binary_little_endian 1.0\nelement vertex " + std::to_string(v.count) + "\n";
    for (const auto& p : v.properties) {
        if (p.values.size() != v.count) {
            throw ValidationError("ply: column '" + p.name + "' has wrong length");
        }
        out += std::string("property ") + info_of(p.type).name + " " + p.name + "\n";
    }
    out += "end_header\n";
    for (size_t i = 0; i < v.count; ++i) {
        for (const auto& p : v.properties) {
            encode(p.type, p.values[i], out);
        }
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw Error("cannot write '" + path.string() + "'");
    }
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

}  // namespace ogs
