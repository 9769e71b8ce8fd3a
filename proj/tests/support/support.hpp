#pragma once

// Random scene builders and independent oracles shared by the unit tests and
// the acceptance binary.

#include "ogs/occupancy.hpp"
#include "ogs/render.hpp"
#include "ogs/scene.hpp"

#include <random>
#include <string>
#include <vector>

namespace ogs::testing {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi);
Vec3 uniform_vec(Rng& rng, double lo, double hi);
Vec4 random_raw_quat(Rng& rng);  // arbitrary direction, norm in [0.5, 2]
UnitQuaternion random_unit_quat(Rng& rng);
Pose random_pose(Rng& rng, double translation_range = 5.0);

/// OpenCV-axes camera at `center` looking toward `target` (world +z up).
Camera look_at_camera(const Vec3& center, const Vec3& target, int width, int height, double focal);

/// Camera with randomized pose and intrinsics.
Camera random_camera(Rng& rng, int width, int height);

/// World point at pixel (u, v) and camera depth z.
Vec3 unproject(const Camera& camera, double u, double v, double z);

struct RandomSceneOptions {
    int street = 40;
    int vehicles = 1;
    int per_vehicle = 8;
    int frame_count = 4;
    int num_classes = 3;
    int street_sh_degree = -1;  // random in [0, 3] when negative
    int vehicle_sh_degree = 1;
    int fourier_k = 3;
    double min_log_scale = std::log(0.03);
    double max_log_scale = std::log(0.3);
    double depth_min = 2.0;
    double depth_max = 8.0;
    double pixel_margin = 0.2;  // fraction of the image size allowed outside
};

/// Street and vehicle Gaussians placed in front of `camera` at `frame`.
SceneModel random_scene(Rng& rng, const Camera& camera, uint32_t frame, const RandomSceneOptions& options = {});

double max_abs_diff(const Image& a, const Image& b);

// ---------------------------------------------------------------------------
// Finite-difference gradient check

enum class GradClass { Position, Rotation, Scale, Opacity, Sh, Fourier, DeltaRotation, DeltaTranslation };
inline constexpr GradClass kGradClasses[] = {GradClass::Position,      GradClass::Rotation,
                                             GradClass::Scale,         GradClass::Opacity,
                                             GradClass::Sh,            GradClass::Fourier,
                                             GradClass::DeltaRotation, GradClass::DeltaTranslation};
std::string grad_class_name(GradClass c);

struct GradSample {
    GradClass cls;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
    bool near_boundary = false;  // excluded: a discontinuity lies within 2h
};

struct GradCheckOptions {
    double h = 1e-4;
    int samples_per_class = 4;
    double tolerance = 1e-3;
    double abs_floor = 1e-7;  // denominators below this are treated as this
};

/// Objective L = sum(weights * rgb) for random weights. Samples random raw
/// parameters per class and compares the analytic gradient against central
/// differences. A sample is flagged near a boundary when its one-sided
/// differences disagree by more than 10%, which only happens when a skip,
/// cap or cull decision flips inside [-h, h].
std::vector<GradSample> gradient_check(const SceneModel& model, uint32_t frame, const Camera& camera,
                                       const RenderSettings& settings, Rng& rng, const GradCheckOptions& options = {});

// ---------------------------------------------------------------------------
// Occupancy oracles

OccupancyGrid random_grid(Rng& rng, const std::array<uint32_t, 3>& dims, uint32_t num_classes, double occupied_fraction,
                          uint32_t frame = 0);

/// 26-connected components of cells where pred(linear index) holds, by
/// union-find over all neighbor pairs. Returns a component id per cell
/// (-1 outside), ids in order of each component's smallest cell.
std::vector<int> brute_components(const GridGeometry& g, const std::vector<uint8_t>& member);

}  // namespace ogs::testing
