#pragma once

#include "ogs/geom.hpp"
#include "ogs/occupancy.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace ogs {

/// Optimizable parameter groups. Every group is a flat array with a fixed
/// per-Gaussian stride.
enum class ParamGroup { Position, Rotation, Scale, Opacity, Appearance, Semantic };
inline constexpr std::array<ParamGroup, 6> kParamGroups{ParamGroup::Position, ParamGroup::Rotation,
                                                        ParamGroup::Scale,    ParamGroup::Opacity,
                                                        ParamGroup::Appearance, ParamGroup::Semantic};

/// Raw (pre-activation) per-Gaussian parameters.
///   positions: 3, rotations: raw quaternion (w, x, y, z), log_scales: 3,
///   opacity_logits: 1, appearance: SH or Fourier-SH coefficients,
///   semantics: class logits.
struct GaussianSet {
    size_t count = 0;
    int appearance_stride = 3;
    int semantic_stride = 1;
    std::vector<double> positions;
    std::vector<double> rotations;
    std::vector<double> log_scales;
    std::vector<double> opacity_logits;
    std::vector<double> appearance;
    std::vector<double> semantics;

    GaussianSet() = default;
    GaussianSet(size_t n, int appearance_stride_, int semantic_stride_);

    static int stride_of(ParamGroup g, int appearance_stride, int semantic_stride);
    int stride(ParamGroup g) const { return stride_of(g, appearance_stride, semantic_stride); }
    std::vector<double>& array(ParamGroup g);
    const std::vector<double>& array(ParamGroup g) const;

    Vec3 position(size_t i) const { return {positions[3 * i], positions[3 * i + 1], positions[3 * i + 2]}; }
    Vec4 rotation(size_t i) const {
        return {rotations[4 * i], rotations[4 * i + 1], rotations[4 * i + 2], rotations[4 * i + 3]};
    }
    Vec3 log_scale(size_t i) const { return {log_scales[3 * i], log_scales[3 * i + 1], log_scales[3 * i + 2]}; }
    Vec3 scale(size_t i) const { return log_scale(i).array().exp(); }
    double opacity(size_t i) const;

    void set_position(size_t i, const Vec3& p);
    void set_rotation(size_t i, const Vec4& q);
    void set_log_scale(size_t i, const Vec3& s);

    /// Same strides, zero-filled.
    GaussianSet zeros_like() const;
    /// Appends a copy of Gaussian `i` of `src` (strides must match).
    void append_from(const GaussianSet& src, size_t i);
    /// Keeps Gaussians whose mask entry is nonzero, preserving order.
    void keep(const std::vector<uint8_t>& mask);
    /// Throws ValidationError when array lengths disagree with count.
    void validate() const;
};

struct StreetGaussians {
    int sh_degree = 3;
    int num_classes = 1;
    GaussianSet params;
};

/// Rigid per-vehicle model. Gaussians live in the vehicle frame; per frame a
/// base pose (R_t, T_t) is corrected by a learnable axis-angle dR_t and dT_t.
struct VehicleModel {
    int id = 0;
    int sh_degree = 1;
    int fourier_k = 5;
    int vehicle_class = 0;
    bool frozen = false;
    uint32_t frame_count = 1;  // sequence length used for t_norm
    GaussianSet params;
    std::vector<uint32_t> frames;
    std::vector<Pose> base_poses;
    std::vector<double> delta_rotation;     // 3 per frame slot
    std::vector<double> delta_translation;  // 3 per frame slot

    std::optional<size_t> slot_of(uint32_t frame) const;
    Vec3 delta_rotation_at(size_t slot) const;
    Vec3 delta_translation_at(size_t slot) const;
    /// Base pose with its delta applied.
    Pose posed(size_t slot) const;
    double t_norm(uint32_t frame) const { return static_cast<double>(frame) / static_cast<double>(frame_count); }
};

struct SceneModel {
    int num_classes = 1;
    RotationComposition composition = RotationComposition::Rigid;
    Vec3 background = Vec3::Zero();  // color behind all Gaussians
    StreetGaussians street;
    std::vector<VehicleModel> vehicles;

    size_t total_gaussians() const;
};

struct GaussianOrigin {
    int model = -1;  // -1 street, otherwise index into SceneModel::vehicles
    uint32_t local = 0;
};

/// World-frame Gaussians at one timestamp. SH stride is kMaxShCoeffs * 3 with
/// coefficients beyond a Gaussian's degree left at zero.
struct AssembledScene {
    static constexpr int kShStride = kMaxShCoeffs * 3;

    uint32_t frame = 0;
    int num_classes = 1;
    size_t count = 0;
    std::vector<Vec3> positions;
    std::vector<Mat3> rotations;  // world rotation matrices
    std::vector<Vec3> scales;
    std::vector<Mat3> covariances;
    std::vector<double> opacities;
    std::vector<int> sh_degrees;
    std::vector<double> sh;
    std::vector<double> semantic_logits;  // num_classes per Gaussian; vehicles use slot 0
    std::vector<int> vehicle_class;      // -1 for street Gaussians
    std::vector<GaussianOrigin> origins;

    std::span<const double> sh_of(size_t i) const {
        return {sh.data() + i * kShStride, static_cast<size_t>(kShStride)};
    }
};

AssembledScene assemble(const SceneModel& model, uint32_t frame);

/// Per-Gaussian class distribution, num_classes values per Gaussian.
std::vector<double> semantic_output(const AssembledScene& scene);

// ---------------------------------------------------------------------------
// Initialization

struct InitOptions {
    int street_sh_degree = 3;
    int vehicle_sh_degree = 1;
    int fourier_k = 5;
    double initial_opacity = 0.1;
    double label_logit = 4.0;
    double lone_point_scale = 0.1;  // when a cloud has a single point
};

/// Mean distance to the (up to) 3 nearest other points, per point.
std::vector<double> mean_knn_distance(std::span<const Vec3> points, int k = 3);

StreetGaussians init_street(const SemanticPointCloud& cloud, int num_classes, const InitOptions& options = {});

/// `local_points` are in the vehicle frame (relative to the first-frame
/// centroid, world-aligned axes). Base poses are (identity, centroid_t).
VehicleModel init_vehicle(const ObjectTrack& track, std::span<const Vec3> local_points,
                          std::span<const std::optional<Vec3>> colors, int vehicle_class, uint32_t frame_count,
                          const InitOptions& options = {});

// ---------------------------------------------------------------------------
// Gradients

/// Gradients with respect to assembled world-frame quantities. Covariance
/// gradients use the full-matrix convention dL = <G, dSigma>.
struct AssembledGradients {
    std::vector<Vec3> positions;
    std::vector<Mat3> covariances;
    std::vector<double> opacities;
    std::vector<double> sh;

    explicit AssembledGradients(size_t n = 0);
};

struct VehicleGradients {
    GaussianSet params;
    std::vector<double> delta_rotation;
    std::vector<double> delta_translation;
};

struct SceneGradients {
    GaussianSet street;
    std::vector<VehicleGradients> vehicles;

    static SceneGradients zeros_like(const SceneModel& model);
};

/// Chains assembled-space gradients back to raw model parameters (positions,
/// quaternions, log-scales, opacity logits, SH / Fourier coefficients and the
/// per-frame pose deltas), accumulating into `out`.
void assemble_backward(const SceneModel& model, const AssembledScene& scene, const AssembledGradients& grads,
                       SceneGradients& out);

// ---------------------------------------------------------------------------
// Checkpoints

/// Directory with street.ply, vehicle_<id>.ply and scene.json.
void save_scene(const std::filesystem::path& dir, const SceneModel& model);
SceneModel load_scene(const std::filesystem::path& dir);

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

}  // namespace ogs
