#pragma once

#include "ogs/camera.hpp"
#include "ogs/geom.hpp"
#include "ogs/image.hpp"

#include <array>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace ogs {

struct CellIndex {
    uint32_t i = 0;
    uint32_t j = 0;
    uint32_t k = 0;
    auto operator<=>(const CellIndex&) const = default;
};

/// Axis-aligned lattice placement. Axis i runs along world x, j along y,
/// k along z; dims = (H, W, D).
struct GridGeometry {
    std::array<uint32_t, 3> dims{0, 0, 0};
    Vec3 origin = Vec3::Zero();
    double cell_size = 1.0;

    size_t cell_count() const { return static_cast<size_t>(dims[0]) * dims[1] * dims[2]; }
    /// i fastest.
    size_t linear(const CellIndex& c) const {
        return c.i + static_cast<size_t>(dims[0]) * (c.j + static_cast<size_t>(dims[1]) * c.k);
    }
    CellIndex unravel(size_t idx) const;
    Vec3 cell_center(const CellIndex& c) const;
    Vec3 upper_corner() const;
};

/// Semantic occupancy grid for one frame. `class_probs` holds N values per
/// cell, cell-major.
struct OccupancyGrid {
    GridGeometry geometry;
    uint32_t num_classes = 0;
    uint32_t frame_index = 0;
    std::vector<float> occupancy;
    std::vector<float> class_probs;

    OccupancyGrid() = default;
    OccupancyGrid(const GridGeometry& g, uint32_t n_classes, uint32_t frame);

    float class_prob(size_t cell, uint32_t c) const { return class_probs[cell * num_classes + c]; }
    /// Throws ValidationError if sizes mismatch, probabilities leave [0, 1], or
    /// a cell's class distribution does not sum to 1 within 1e-5.
    void validate() const;
};

/// Binary "OGG1" little-endian format.
OccupancyGrid read_occupancy_grid(const std::filesystem::path& path);
void write_occupancy_grid(const std::filesystem::path& path, const OccupancyGrid& grid);

/// 1 where p >= tau.
std::vector<uint8_t> threshold_occupancy(const OccupancyGrid& grid, double tau);

/// Per-cell argmax over class probabilities; ties go to the lowest class id.
std::vector<int> semantic_argmax(const OccupancyGrid& grid);

struct LabeledLattice {
    GridGeometry geometry;
    uint32_t frame_index = 0;
    std::vector<uint8_t> occupied;
    std::vector<int> labels;
};

LabeledLattice label_grid(const OccupancyGrid& grid, double tau);

/// One 26-connected blob of occupied vehicle cells in one frame.
struct ObjectComponent {
    uint32_t frame_index = 0;
    double cell_size = 0.0;
    std::vector<CellIndex> cells;  // ascending linear index
    std::vector<Vec3> cell_centers;
    Vec3 centroid = Vec3::Zero();
};

/// Components are ordered by their smallest linear cell index.
std::vector<ObjectComponent> extract_objects(const LabeledLattice& lattice, std::span<const int> vehicle_class_ids);

struct ObjectTrack {
    int id = 0;
    std::vector<uint32_t> frames;
    std::vector<Vec3> centroids;
    std::vector<ObjectComponent> components;
    bool dynamic = false;
};

/// Greedy nearest-centroid association between consecutive frames. `per_frame`
/// is in sequence order. A track that misses a frame ends; components left
/// unmatched start new tracks.
std::vector<ObjectTrack> associate_tracks(const std::vector<std::vector<ObjectComponent>>& per_frame,
                                          double match_radius);

/// Dynamic iff some consecutive-frame centroid displacement is >= threshold.
bool classify_dynamic(const ObjectTrack& track, double threshold);

/// Subdivides each cell into ceil(cell_size / target_voxel)^3 sub-cell centers.
std::vector<Vec3> upsample_object(std::span<const Vec3> cell_centers, double cell_size, double target_voxel = 0.05);

enum class PointSource : uint8_t { Occupancy = 0, Sfm = 1 };

struct SemanticPoint {
    Vec3 position = Vec3::Zero();
    std::optional<Vec3> color;
    int label = 0;
    PointSource source = PointSource::Occupancy;
};

struct SemanticPointCloud {
    std::vector<SemanticPoint> points;
    size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
};

/// Color assigned downstream to points that no camera sees.
inline const Vec3 kUncoloredGray{0.5, 0.5, 0.5};

struct CameraView {
    const Camera* camera = nullptr;
    const Image* image = nullptr;
};

/// Projects x = K [R p + T] with perspective divide and samples the image
/// bilinearly. Empty when behind the camera or outside the image.
std::optional<Vec3> project_color(const Vec3& world, const Camera& camera, const Image& image);

/// Views are queried in order; the first valid projection wins.
std::vector<std::optional<Vec3>> colorize_points(std::span<const Vec3> points, std::span<const CameraView> views);

/// One point per occupied non-vehicle cell, at the cell center.
SemanticPointCloud grid_to_static_cloud(const LabeledLattice& lattice, std::span<const int> vehicle_class_ids);

/// Concatenates; SfM points are tagged `Sfm` and labeled `unlabeled_id`.
/// Both clouds must already be in the world frame.
SemanticPointCloud merge_with_sfm(SemanticPointCloud static_cloud, const SemanticPointCloud& sfm, int unlabeled_id);

/// x, y, z plus optional red, green, blue (0-255 integers or 0-1 floats).
SemanticPointCloud read_sfm_ply(const std::filesystem::path& path, int unlabeled_id);

}  // namespace ogs
