#include "ogs/occupancy.hpp"

#include "ogs/log.hpp"
#include "ogs/ply.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <deque>
#include <fstream>
#include <tuple>

namespace ogs {

CellIndex GridGeometry::unravel(size_t idx) const {
    CellIndex c;
    c.i = static_cast<uint32_t>(idx % dims[0]);
    idx /= dims[0];
    c.j = static_cast<uint32_t>(idx % dims[1]);
    c.k = static_cast<uint32_t>(idx / dims[1]);
    return c;
}

Vec3 GridGeometry::cell_center(const CellIndex& c) const {
    return origin + cell_size * Vec3(c.i + 0.5, c.j + 0.5, c.k + 0.5);
}

Vec3 GridGeometry::upper_corner() const { return origin + cell_size * Vec3(dims[0], dims[1], dims[2]); }

OccupancyGrid::OccupancyGrid(const GridGeometry& g, uint32_t n_classes, uint32_t frame)
    : geometry(g),
      num_classes(n_classes),
      frame_index(frame),
      occupancy(g.cell_count(), 0.0f),
      class_probs(g.cell_count() * n_classes, n_classes > 0 ? 1.0f / static_cast<float>(n_classes) : 0.0f) {}

void OccupancyGrid::validate() const {
    const size_t n = geometry.cell_count();
    if (num_classes == 0) {
        throw ValidationError("occupancy grid: zero classes");
    }
    if (!(geometry.cell_size > 0.0)) {
        throw ValidationError("occupancy grid: cell_size must be positive");
    }
    if (occupancy.size() != n || class_probs.size() != n * num_classes) {
        throw ValidationError("occupancy grid: array sizes do not match dims");
    }
    for (size_t c = 0; c < n; ++c) {
        if (!(occupancy[c] >= 0.0f && occupancy[c] <= 1.0f)) {
            throw ValidationError("occupancy grid: occupancy outside [0,1] at cell " + std::to_string(c));
        }
        double sum = 0.0;
        for (uint32_t k = 0; k < num_classes; ++k) {
            const float p = class_prob(c, k);
            if (!(p >= 0.0f && p <= 1.0f)) {
                throw ValidationError("occupancy grid: class probability outside [0,1] at cell " + std::to_string(c));
            }
            sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-5) {
            throw ValidationError("occupancy grid: class probabilities do not sum to 1 at cell " + std::to_string(c));
        }
    }
}

// ---------------------------------------------------------------------------
// OGG1 format

namespace {

constexpr char kGridMagic[4] = {'O', 'G', 'G', '1'};

class ByteReader {
public:
    ByteReader(std::vector<char> bytes, std::filesystem::path path) : bytes_(std::move(bytes)), path_(std::move(path)) {}

    template <typename T>
    T read() {
        if (offset_ + sizeof(T) > bytes_.size()) {
            throw ValidationError("occupancy grid '" + path_.string() + "': unexpected end of file at byte offset " +
                        std::to_string(offset_));
        }
        T v;
        std::memcpy(&v, bytes_.data() + offset_, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) {
            v = byteswap_value(v);
        }
        offset_ += sizeof(T);
        return v;
    }

    size_t offset() const { return offset_; }
    const std::filesystem::path& path() const { return path_; }

private:
    template <typename T>
    static T byteswap_value(T v) {
        char b[sizeof(T)];
        std::memcpy(b, &v, sizeof(T));
        std::reverse(b, b + sizeof(T));
        std::memcpy(&v, b, sizeof(T));
        return v;
    }

    std::vector<char> bytes_;
    std::filesystem::path path_;
    size_t offset_ = 0;
};

template <typename T>
void append_le(std::string& out, T v) {
    char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        std::reverse(b, b + sizeof(T));
    }
    out.append(b, sizeof(T));
}

}  // namespace

OccupancyGrid read_occupancy_grid(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ValidationError("occupancy grid '" + path.string() + "': cannot open file");
    }
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    ByteReader r(std::move(bytes), path);
    char magic[4];
    for (char& c : magic) {
        c = r.read<char>();
    }
    if (std::memcmp(magic, kGridMagic, 4) != 0) {
        throw ValidationError("occupancy grid '" + path.string() + "': bad magic at byte offset 0");
    }
    GridGeometry g;
    for (auto& d : g.dims) {
        d = r.read<uint32_t>();
    }
    const uint32_t n_classes = r.read<uint32_t>();
    for (int a = 0; a < 3; ++a) {
        g.origin[a] = r.read<float>();
    }
    g.cell_size = r.read<float>();
    const uint32_t frame = r.read<uint32_t>();
    if (n_classes == 0 || !(g.cell_size > 0.0)) {
        throw ValidationError("occupancy grid '" + path.string() + "': invalid header ending at byte offset " +
                    std::to_string(r.offset()));
    }
    OccupancyGrid grid(g, n_classes, frame);
    const size_t n = g.cell_count();
    for (size_t c = 0; c < n; ++c) {
        grid.occupancy[c] = r.read<float>();
        for (uint32_t k = 0; k < n_classes; ++k) {
            grid.class_probs[c * n_classes + k] = r.read<float>();
        }
    }
    try {
        grid.validate();
    } catch (const ValidationError& e) {
        throw ValidationError("occupancy grid '" + path.string() + "': " + e.what());
    }
    return grid;
}

void write_occupancy_grid(const std::filesystem::path& path, const OccupancyGrid& grid) {
    grid.validate();
    std::string out(kGridMagic, 4);
    for (uint32_t d : grid.geometry.dims) {
        append_le<uint32_t>(out, d);
    }
    append_le<uint32_t>(out, grid.num_classes);
    for (int a = 0; a < 3; ++a) {
        append_le<float>(out, static_cast<float>(grid.geometry.origin[a]));
    }
    append_le<float>(out, static_cast<float>(grid.geometry.cell_size));
    append_le<uint32_t>(out, grid.frame_index);
    const size_t n = grid.geometry.cell_count();
    for (size_t c = 0; c < n; ++c) {
        append_le<float>(out, grid.occupancy[c]);
        for (uint32_t k = 0; k < grid.num_classes; ++k) {
            append_le<float>(out, grid.class_prob(c, k));
        }
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw Error("cannot write '" + path.string() + "'");
    }
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

// ---------------------------------------------------------------------------

std::vector<uint8_t> threshold_occupancy(const OccupancyGrid& grid, double tau) {
    std::vector<uint8_t> out(grid.occupancy.size());
    std::transform(grid.occupancy.begin(), grid.occupancy.end(), out.begin(),
                   [tau](float p) { return static_cast<uint8_t>(static_cast<double>(p) >= tau ? 1 : 0); });
    return out;
}

std::vector<int> semantic_argmax(const OccupancyGrid& grid) {
    const size_t n = grid.geometry.cell_count();
    std::vector<int> labels(n, 0);
    for (size_t c = 0; c < n; ++c) {
        const float* p = grid.class_probs.data() + c * grid.num_classes;
        // max_element returns the first maximum, i.e. the lowest class id on ties
        labels[c] = static_cast<int>(std::max_element(p, p + grid.num_classes) - p);
    }
    return labels;
}

LabeledLattice label_grid(const OccupancyGrid& grid, double tau) {
    return {grid.geometry, grid.frame_index, threshold_occupancy(grid, tau), semantic_argmax(grid)};
}

std::vector<ObjectComponent> extract_objects(const LabeledLattice& lattice, std::span<const int> vehicle_class_ids) {
    const GridGeometry& g = lattice.geometry;
    const size_t n = g.cell_count();
    auto is_vehicle = [&](size_t c) {
        return lattice.occupied[c] != 0 &&
               std::find(vehicle_class_ids.begin(), vehicle_class_ids.end(), lattice.labels[c]) !=
                   vehicle_class_ids.end();
    };
    std::vector<uint8_t> visited(n, 0);
    std::vector<ObjectComponent> out;
    std::deque<size_t> queue;
    for (size_t start = 0; start < n; ++start) {
        if (visited[start] != 0 || !is_vehicle(start)) {
            continue;
        }
        ObjectComponent comp;
        comp.frame_index = lattice.frame_index;
        comp.cell_size = g.cell_size;
        std::vector<size_t> members;
        visited[start] = 1;
        queue.push_back(start);
        while (!queue.empty()) {
            const size_t cur = queue.front();
            queue.pop_front();
            members.push_back(cur);
            const CellIndex c = g.unravel(cur);
            for (int dk = -1; dk <= 1; ++dk) {
                for (int dj = -1; dj <= 1; ++dj) {
                    for (int di = -1; di <= 1; ++di) {
                        const long ni = static_cast<long>(c.i) + di;
                        const long nj = static_cast<long>(c.j) + dj;
                        const long nk = static_cast<long>(c.k) + dk;
                        if (ni < 0 || nj < 0 || nk < 0 || ni >= g.dims[0] || nj >= g.dims[1] || nk >= g.dims[2]) {
                            continue;
                        }
                        const size_t nb = g.linear({static_cast<uint32_t>(ni), static_cast<uint32_t>(nj),
                                                    static_cast<uint32_t>(nk)});
                        if (visited[nb] == 0 && is_vehicle(nb)) {
                            visited[nb] = 1;
                            queue.push_back(nb);
                        }
                    }
                }
            }
        }
        std::sort(members.begin(), members.end());
        for (size_t m : members) {
            const CellIndex ci = g.unravel(m);
            comp.cells.push_back(ci);
            comp.cell_centers.push_back(g.cell_center(ci));
            comp.centroid += comp.cell_centers.back();
        }
        comp.centroid /= static_cast<double>(members.size());
        out.push_back(std::move(comp));
    }
    return out;
}

std::vector<ObjectTrack> associate_tracks(const std::vector<std::vector<ObjectComponent>>& per_frame,
                                          double match_radius) {
    std::vector<ObjectTrack> tracks;
    std::vector<size_t> active;  // tracks extended in the previous frame
    for (const auto& comps : per_frame) {
        struct Candidate {
            double dist;
            size_t track;
            size_t comp;
        };
        std::vector<Candidate> cands;
        for (size_t t : active) {
            for (size_t c = 0; c < comps.size(); ++c) {
                const double d = (tracks[t].centroids.back() - comps[c].centroid).norm();
                if (d <= match_radius) {
                    cands.push_back({d, t, c});
                }
            }
        }
        std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
            return std::tie(a.dist, a.track, a.comp) < std::tie(b.dist, b.track, b.comp);
        });
        std::vector<uint8_t> track_used(tracks.size(), 0);
        std::vector<long> comp_track(comps.size(), -1);
        for (const auto& cd : cands) {
            if (track_used[cd.track] != 0 || comp_track[cd.comp] >= 0) {
                continue;
            }
            track_used[cd.track] = 1;
            comp_track[cd.comp] = static_cast<long>(cd.track);
        }
        std::vector<size_t> next_active;
        for (size_t c = 0; c < comps.size(); ++c) {
            size_t t = 0;
            if (comp_track[c] >= 0) {
                t = static_cast<size_t>(comp_track[c]);
            } else {
                t = tracks.size();
                ObjectTrack fresh;
                fresh.id = static_cast<int>(tracks.size());
                tracks.push_back(std::move(fresh));
            }
            tracks[t].frames.push_back(comps[c].frame_index);
            tracks[t].centroids.push_back(comps[c].centroid);
            tracks[t].components.push_back(comps[c]);
            next_active.push_back(t);
        }
        std::sort(next_active.begin(), next_active.end());
        active = std::move(next_active);
    }
    return tracks;
}

bool classify_dynamic(const ObjectTrack& track, double threshold) {
    if (track.centroids.size() < 2) {
        log_warning("track " + std::to_string(track.id) + " observed in a single frame; classified static");
        return false;
    }
    for (size_t i = 1; i < track.centroids.size(); ++i) {
        if ((track.centroids[i] - track.centroids[i - 1]).norm() >= threshold) {
            return true;
        }
    }
    return false;
}

std::vector<Vec3> upsample_object(std::span<const Vec3> cell_centers, double cell_size, double target_voxel) {
    if (!(target_voxel < cell_size)) {
        log_warning("upsample_object: target voxel " + std::to_string(target_voxel) +
                    " m is not smaller than the cell size; returning cell centers");
        return {cell_centers.begin(), cell_centers.end()};
    }
    const auto s = static_cast<int>(std::ceil(cell_size / target_voxel - 1e-9));
    std::vector<Vec3> out;
    out.reserve(cell_centers.size() * static_cast<size_t>(s * s * s));
    for (const Vec3& c : cell_centers) {
        for (int a = 0; a < s; ++a) {
            for (int b = 0; b < s; ++b) {
                for (int d = 0; d < s; ++d) {
                    const Vec3 frac((d + 0.5) / s - 0.5, (b + 0.5) / s - 0.5, (a + 0.5) / s - 0.5);
                    out.push_back(c + cell_size * frac);
                }
            }
        }
    }
    return out;
}

std::optional<Vec3> project_color(const Vec3& world, const Camera& camera, const Image& image) {
    const Vec3 pc = camera.to_camera(world);
    if (!(pc.z() > 0.0)) {
        return std::nullopt;
    }
    const Vec3 h = camera.intrinsics() * pc;
    const double u = h.x() / h.z();
    const double v = h.y() / h.z();
    if (!(u >= 0.0 && v >= 0.0 && u <= image.width - 1 && v <= image.height - 1)) {
        return std::nullopt;
    }
    const int x0 = static_cast<int>(std::floor(u));
    const int y0 = static_cast<int>(std::floor(v));
    const int x1 = std::min(x0 + 1, image.width - 1);
    const int y1 = std::min(y0 + 1, image.height - 1);
    const double fx = u - x0;
    const double fy = v - y0;
    Vec3 out;
    for (int c = 0; c < 3; ++c) {
        const int ch = image.channels == 1 ? 0 : c;
        const double top = (1.0 - fx) * image.at(x0, y0, ch) + fx * image.at(x1, y0, ch);
        const double bot = (1.0 - fx) * image.at(x0, y1, ch) + fx * image.at(x1, y1, ch);
        out[c] = (1.0 - fy) * top + fy * bot;
    }
    return out;
}

std::vector<std::optional<Vec3>> colorize_points(std::span<const Vec3> points, std::span<const CameraView> views) {
    std::vector<std::optional<Vec3>> out(points.size());
    for (size_t i = 0; i < points.size(); ++i) {
        for (const auto& v : views) {
            if (auto c = project_color(points[i], *v.camera, *v.image)) {
                out[i] = c;
                break;
            }
        }
    }
    return out;
}

SemanticPointCloud grid_to_static_cloud(const LabeledLattice& lattice, std::span<const int> vehicle_class_ids) {
    SemanticPointCloud cloud;
    const size_t n = lattice.geometry.cell_count();
    for (size_t c = 0; c < n; ++c) {
        if (lattice.occupied[c] == 0 ||
            std::find(vehicle_class_ids.begin(), vehicle_class_ids.end(), lattice.labels[c]) !=
                vehicle_class_ids.end()) {
            continue;
        }
        SemanticPoint p;
        p.position = lattice.geometry.cell_center(lattice.geometry.unravel(c));
        p.label = lattice.labels[c];
        p.source = PointSource::Occupancy;
        cloud.points.push_back(p);
    }
    return cloud;
}

SemanticPointCloud merge_with_sfm(SemanticPointCloud static_cloud, const SemanticPointCloud& sfm, int unlabeled_id) {
    static_cloud.points.reserve(static_cloud.points.size() + sfm.points.size());
    for (SemanticPoint p : sfm.points) {
        p.source = PointSource::Sfm;
        p.label = unlabeled_id;
        static_cloud.points.push_back(p);
    }
    return static_cloud;
}

SemanticPointCloud read_sfm_ply(const std::filesystem::path& path, int unlabeled_id) {
    const PlyVertices v = read_ply(path);
    const auto& x = v.column("x");
    const auto& y = v.column("y");
    const auto& z = v.column("z");
    const bool has_color = v.has("red") && v.has("green") && v.has("blue");
    bool integer_color = true;
    if (has_color) {
        for (const auto& p : v.properties) {
            if (p.name == "red" && (p.type == PlyType::Float32 || p.type == PlyType::Float64)) {
                integer_color = false;
            }
        }
    }
    SemanticPointCloud cloud;
    cloud.points.reserve(v.count);
    for (size_t i = 0; i < v.count; ++i) {
        SemanticPoint p;
        p.position = {x[i], y[i], z[i]};
        if (!p.position.allFinite()) {
            throw ValidationError("sfm cloud '" + path.string() + "': non-finite position at vertex " + std::to_string(i));
        }
        if (has_color) {
            const double s = integer_color ? 1.0 / 255.0 : 1.0;
            p.color = Vec3(v.column("red")[i] * s, v.column("green")[i] * s, v.column("blue")[i] * s);
        }
        p.label = unlabeled_id;
        p.source = PointSource::Sfm;
        cloud.points.push_back(p);
    }
    return cloud;
}

}  // namespace ogs
