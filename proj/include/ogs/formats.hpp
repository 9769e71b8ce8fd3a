#pragma once

#include "ogs/camera.hpp"
#include "ogs/occupancy.hpp"
#include "ogs/optim.hpp"
#include "ogs/scene.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace ogs {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Camera manifest ("ogs-cameras-1")

struct CameraEntry {
    uint32_t frame = 0;
    int camera_id = 0;
    Camera camera;
    std::string image;  // relative to the scene's image directory
};

struct CameraManifest {
    std::vector<CameraEntry> entries;

    const CameraEntry* find(uint32_t frame, int camera_id) const;
};

CameraManifest read_camera_manifest(const fs::path& path);
void write_camera_manifest(const fs::path& path, const CameraManifest& manifest);

/// Conventional image file name for a camera at a frame.
std::string image_name(int camera_id, uint32_t frame);

// ---------------------------------------------------------------------------
// Scene manifest ("ogs-manifest-1"). Relative paths resolve against the
// manifest's directory.

struct SceneManifest {
    fs::path base_dir;
    std::vector<fs::path> grids;  // one per frame, frame i at index i
    fs::path camera_manifest;
    fs::path image_dir;
    std::optional<fs::path> sfm_ply;
    std::optional<fs::path> mask_dir;
    std::vector<std::string> classes;  // semantic id -> name
    std::vector<int> vehicle_classes;
    int unlabeled_class = 0;
    std::vector<int> holdout_cameras;
    Vec3 background = Vec3::Zero();

    uint32_t frame_count() const { return static_cast<uint32_t>(grids.size()); }
    int num_classes() const { return static_cast<int>(classes.size()); }
};

/// Throws ValidationError when a referenced path is missing, frame indices
/// are not 0..n-1, or class ids are out of range.
SceneManifest read_scene_manifest(const fs::path& path);
/// Paths are written relative to `path`'s directory when possible.
void write_scene_manifest(const fs::path& path, const SceneManifest& manifest);

// ---------------------------------------------------------------------------
// Pipeline configuration: flat JSON object, every key optional.

struct ConvertConfig {
    double occupancy_threshold = 0.5;
    double match_radius = 2.0;       // meters, track association gate
    double dynamic_threshold = 0.5;  // meters per frame
    double upsample_voxel = 0.05;    // meters
};

struct PipelineConfig {
    ConvertConfig convert;
    InitOptions init;
    TrainConfig train;
    RotationComposition composition = RotationComposition::Rigid;
};

/// Applies the keys of a JSON object on top of `config`. Unknown keys and
/// ill-typed values throw ValidationError.
void apply_config(const nlohmann::json& j, PipelineConfig& config);
PipelineConfig load_config(const fs::path& path, PipelineConfig base = {});
nlohmann::json config_to_json(const PipelineConfig& config);

// ---------------------------------------------------------------------------
// Prior files written by the convert stage

/// x, y, z, red, green, blue (float, 0-1), colored, label, source.
void write_point_cloud(const fs::path& path, const SemanticPointCloud& cloud);
SemanticPointCloud read_point_cloud(const fs::path& path);

struct TrackRecord {
    int id = 0;
    bool dynamic = false;
    int vehicle_class = 0;
    std::vector<uint32_t> frames;
    std::vector<Vec3> centroids;
    std::string points_file;  // vehicle-frame cloud, dynamic tracks only
};

/// "ogs-tracks-1" JSON.
void write_tracks(const fs::path& path, const std::vector<TrackRecord>& tracks);
std::vector<TrackRecord> read_tracks(const fs::path& path);

void write_text(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);
nlohmann::json read_json(const fs::path& path);

}  // namespace ogs
