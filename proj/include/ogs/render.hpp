#pragma once

#include "ogs/camera.hpp"
#include "ogs/image.hpp"
#include "ogs/scene.hpp"

#include <optional>
#include <span>
#include <vector>

namespace ogs {

struct RenderSettings {
    Vec3 background = Vec3::Zero();
    double low_pass = 0.3;            // px^2 added to the projected covariance diagonal
    double alpha_cap = 0.99;
    double alpha_min = 1.0 / 255.0;   // contributions below this are skipped
    double min_transmittance = 1e-6;  // compositing stops once T drops below this
    int tile_size = 16;
    int threads = 1;
    bool render_semantics = false;
};

/// A Gaussian projected to the image plane.
struct Splat2D {
    Vec2 mean = Vec2::Zero();
    Mat2 cov = Mat2::Identity();
    Mat2 conic = Mat2::Identity();  // cov^-1
    double depth = 0.0;             // camera-frame z of the mean
    Vec3 cam_point = Vec3::Zero();
    Vec3 color = Vec3::Zero();      // clamped to [0, 1]
    double opacity = 0.0;
    uint32_t source = 0;
    // inclusive pixel bounding box of the region where alpha can reach alpha_min
    int x_min = 0, x_max = -1, y_min = 0, y_max = -1;

    bool visible() const { return x_min <= x_max && y_min <= y_max; }
};

/// Camera-frame point at which the projection Jacobian is evaluated: x/z and
/// y/z are clamped to 1.3 times the image extent so splats far outside the
/// view do not blow up.
struct JacobianPoint {
    Vec3 point;
    bool clamped_x = false;
    bool clamped_y = false;
};
JacobianPoint jacobian_point(const Camera& camera, const Vec3& cam_point);

/// 2x3 Jacobian of the perspective map at jacobian_point(cam_point).
Eigen::Matrix<double, 2, 3> ewa_jacobian(const Camera& camera, const Vec3& cam_point);

/// Projects a world-frame Gaussian: mean by perspective divide, covariance by
/// the EWA Jacobian J of the perspective map, cov' = J R Sigma R^T J^T +
/// low_pass I. Empty when the depth is outside [near, far].
std::optional<Splat2D> project_gaussian(const Vec3& mean, const Mat3& covariance, const Camera& camera,
                                        double low_pass = 0.3);

/// Sets the splat's pixel bounding box from its opacity-dependent cutoff
/// ellipse, clipped to the image.
void compute_splat_extent(Splat2D& splat, const Camera& camera, double alpha_min);

struct TileBins {
    int tile_size = 16;
    int tiles_x = 0;
    int tiles_y = 0;
    std::vector<std::vector<uint32_t>> lists;  // indices into the splat array

    size_t tile_index(int tx, int ty) const { return static_cast<size_t>(ty) * tiles_x + tx; }
};

/// Each visible splat enters every tile its bounding box overlaps. Lists are
/// sorted by ascending depth, ties by source index.
TileBins bin_tiles(std::span<const Splat2D> splats, const Camera& camera, int tile_size = 16);

struct PixelResult {
    Vec3 color = Vec3::Zero();
    double transmittance = 1.0;
    double depth = 0.0;
    int contributors = 0;
};

/// Front-to-back compositing of depth-sorted splats at one pixel.
PixelResult composite_pixel(std::span<const Splat2D> sorted, const Vec2& pixel, const RenderSettings& settings);

struct RenderOutput {
    Image rgb;
    Image depth;          // alpha-weighted camera depth
    Image transmittance;  // final T per pixel
    Image semantic;       // num_classes channels when requested
};

/// Per-Gaussian splats (invisible ones have an empty bounding box), colors
/// evaluated from SH toward the camera center.
std::vector<Splat2D> project_scene(const AssembledScene& scene, const Camera& camera, const RenderSettings& settings);

RenderOutput render(const AssembledScene& scene, const Camera& camera, const RenderSettings& settings);

struct RenderBackward {
    AssembledGradients assembled;
    std::vector<double> screen_grad_norm;  // |dL/dmean2d| in NDC units, 0 if not visible
    std::vector<uint8_t> visible;
};

/// Analytic gradients of the composited RGB with respect to the assembled
/// world-frame quantities, given dL/dRGB.
RenderBackward render_backward(const AssembledScene& scene, const Camera& camera, const RenderSettings& settings,
                               const Image& grad_rgb);

struct BackwardResult {
    SceneGradients params;
    std::vector<double> screen_grad_norm;  // per assembled Gaussian
    std::vector<uint8_t> visible;
};

/// Full backward: rendered image -> raw model parameters and pose deltas.
BackwardResult backward(const SceneModel& model, const AssembledScene& scene, const Camera& camera,
                        const RenderSettings& settings, const Image& grad_rgb);

}  // namespace ogs
