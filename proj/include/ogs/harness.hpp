#pragma once

#include "ogs/formats.hpp"
#include "ogs/image.hpp"
#include "ogs/occupancy.hpp"
#include "ogs/optim.hpp"
#include "ogs/render.hpp"
#include "ogs/scene.hpp"

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace ogs {

// ---------------------------------------------------------------------------
// Metrics

/// Reported for identical images.
inline constexpr double kPsnrSentinel = 100.0;

double mse(const Image& x, const Image& y);

/// 10 log10(1 / MSE); kPsnrSentinel when MSE is 0.
double psnr(const Image& x, const Image& y);

struct MaskedPsnr {
    double value = 0.0;  // NaN when the mask is empty
    bool empty_mask = false;
    size_t pixels = 0;
};

/// PSNR over pixels whose single-channel mask value is > 0.5.
MaskedPsnr psnr_dym(const Image& rendered, const Image& target, const Image& mask);

struct FrameEval {
    std::string name;
    double psnr = 0.0;
    double ssim = 0.0;
    std::optional<MaskedPsnr> psnr_dym;
};

struct EvalReport {
    std::vector<FrameEval> frames;
    double psnr = 0.0;  // mean over frames
    double ssim = 0.0;
    std::optional<double> psnr_dym;  // mean over frames with a non-empty mask
    size_t empty_masks = 0;
    std::vector<std::string> errors;

    void add(FrameEval frame);
    /// Recomputes the aggregates from `frames`.
    void finalize();
    std::string to_json() const;
    std::string to_csv() const;
};

/// Literal compositing oracle: all splats sorted globally by depth (ties by
/// index), every pixel visits every splat, no tiling, no early termination.
RenderOutput reference_render(const AssembledScene& scene, const Camera& camera, const RenderSettings& settings);

// ---------------------------------------------------------------------------
// Synthetic scenes

struct SynthVehicle {
    Vec3 start = Vec3::Zero();  // box center at frame 0
    double heading = 0.0;       // yaw at frame 0, radians
    double speed = 0.0;         // meters per frame
    double yaw_rate = 0.0;      // radians per frame; nonzero gives an arc
    Vec3 size{4.0, 2.0, 1.5};
    int gaussians = 150;
    Vec3 color{0.8, 0.1, 0.1};

    bool moving() const { return speed != 0.0; }
    Pose pose_at(double t) const;
};

struct SynthConfig {
    uint64_t seed = 0;
    uint32_t frames = 10;
    int width = 160;
    int height = 100;
    double focal = 100.0;
    double ego_speed = 1.0;  // meters per frame along +x
    double camera_height = 1.6;
    double camera_pitch_deg = 5.0;
    double camera_baseline = 1.0;  // training cameras at y = +-baseline/2, holdout at y = 0
    double road_x_min = -2.0;
    double road_x_max = 50.0;
    double ground_half_width = 8.0;
    double ground_spacing = 0.5;
    double building_offset = 8.75;
    double building_height = 6.0;
    double cell_size = 0.5;
    double vehicle_grid_noise = 0.0;  // max centroid offset of moving vehicles in the grids
    Vec3 background{0.6, 0.75, 0.9};
    std::vector<SynthVehicle> vehicles = default_vehicles();
    int threads = 1;

    static std::vector<SynthVehicle> default_vehicles();
    void validate() const;
};

void apply_synth_config(const nlohmann::json& j, SynthConfig& config);
nlohmann::json synth_config_to_json(const SynthConfig& config);

struct VehicleTruth {
    int id = 0;
    bool dynamic = false;
    std::vector<Pose> poses;  // per frame, box center and yaw

    std::vector<Vec3> centers() const;
};

struct SyntheticScene {
    SynthConfig config;
    SceneModel truth;
    std::vector<VehicleTruth> vehicles;
    CameraManifest cameras;
    std::vector<int> holdout_cameras;
    std::vector<Image> images;  // parallel to cameras.entries
    std::vector<Image> masks;   // moving-vehicle coverage, 1 channel
    std::vector<OccupancyGrid> grids;
    std::vector<std::string> classes;
    std::vector<int> vehicle_classes;

    /// Ground-truth Gaussian centers in world coordinates at a frame.
    std::vector<Vec3> truth_centers(uint32_t frame) const;
};

inline constexpr int kSynthUnlabeled = 0;
inline constexpr int kSynthRoad = 1;
inline constexpr int kSynthBuilding = 2;
inline constexpr int kSynthVehicle = 3;

SyntheticScene make_synthetic(const SynthConfig& config);

/// manifest.json, cameras.json, grids/, images/, masks/, ground_truth.json,
/// truth/ (scene checkpoint) and config.json (pipeline settings for the
/// dataset).
void write_synthetic(const SyntheticScene& scene, const fs::path& dir);

std::vector<VehicleTruth> read_ground_truth(const fs::path& path);

/// Mean distance between recovered positions and the truth trajectory of a
/// fixed body point. The body-frame offset is fitted by least squares, so a
/// straight trajectory reduces to removing the mean translation offset.
double trajectory_error(const std::vector<Vec3>& recovered, const std::vector<Pose>& truth);

/// Recovered vehicle origins (base pose with delta) at the vehicle's frames,
/// compared against the truth centers at the same frames.
double vehicle_trajectory_error(const VehicleModel& vehicle, const VehicleTruth& truth);

/// Per model vehicle, the truth vehicle whose trajectory lies closest on
/// average (-1 when none shares a frame).
std::vector<int> match_vehicles(const SceneModel& model, const std::vector<VehicleTruth>& truth);

}  // namespace ogs
