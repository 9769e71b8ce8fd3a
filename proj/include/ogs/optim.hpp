#pragma once

#include "ogs/camera.hpp"
#include "ogs/image.hpp"
#include "ogs/render.hpp"
#include "ogs/scene.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace ogs {

/// Thrown when a non-finite loss or gradient stops training.
class TrainingAbort : public Error {
public:
    using Error::Error;
};

struct LearningRates {
    double position = 1.6e-4;
    double position_final = 1.6e-6;
    double rotation = 1e-3;
    double scale = 5e-3;
    double opacity = 5e-2;
    double appearance = 2.5e-3;
    double semantic = 2.5e-3;
    double delta_rotation = 1e-3;
    double delta_translation = 5e-3;

    double for_group(ParamGroup g) const;
};

struct TrainConfig {
    int iterations = 30000;
    double lambda = 0.2;
    LearningRates lr;
    /// Multiplies the position rates by the camera extent.
    bool scale_position_lr_by_extent = true;
    int densify_interval = 100;
    int densify_from = 500;
    int densify_until = 15000;
    double densify_grad_threshold = 2e-4;
    double opacity_prune_threshold = 0.005;
    /// Split instead of clone when the largest scale exceeds this fraction of
    /// the scene extent.
    double split_scale_fraction = 0.01;
    uint64_t seed = 0;
    int eval_interval = 100;
    int checkpoint_interval = 0;  // 0: no periodic checkpoints
    bool log_wall_time = false;
    RenderSettings render;

    /// Throws ValidationError on out-of-range values.
    void validate() const;
};

// ---------------------------------------------------------------------------
// Metrics and loss

/// Mean SSIM over all valid 11x11 windows (Gaussian weights, sigma 1.5) and
/// channels. Throws ValidationError when shapes differ or the image is
/// smaller than the window.
double ssim(const Image& x, const Image& y);

struct SsimResult {
    double value = 0.0;
    Image grad;  // d value / d x
};
SsimResult ssim_with_grad(const Image& x, const Image& y);

struct LossResult {
    double value = 0.0;
    double l1 = 0.0;
    double dssim = 0.0;
    Image grad;  // dL/d rendered
};

/// (1 - lambda) * L1 + lambda * (1 - SSIM) / 2.
LossResult loss(const Image& rendered, const Image& target, double lambda);

// ---------------------------------------------------------------------------
// Adam

struct AdamMoments {
    std::vector<double> m;
    std::vector<double> v;

    void resize(size_t n) {
        m.assign(n, 0.0);
        v.assign(n, 0.0);
    }
};

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-15;
};

/// One bias-corrected Adam update; `step` is 1-based.
void adam_update(std::span<double> params, std::span<const double> grads, AdamMoments& moments, double lr, int step,
                 const AdamHyper& hyper = {});

struct ModelOptimizerState {
    std::array<AdamMoments, kParamGroups.size()> moments;
    std::vector<double> grad_accum;  // summed screen-space gradient norms
    std::vector<double> grad_count;  // number of views where visible

    void reset_for(const GaussianSet& g);
};

struct VehicleOptimizerState {
    ModelOptimizerState gaussians;
    AdamMoments delta_rotation;
    AdamMoments delta_translation;
};

struct OptimizerState {
    int step = 0;
    ModelOptimizerState street;
    std::vector<VehicleOptimizerState> vehicles;

    static OptimizerState for_model(const SceneModel& model);
    /// Throws if any moment array disagrees with its parameter array.
    void check_shapes(const SceneModel& model) const;
};

/// Applies one Adam step to every parameter group, including pose deltas of
/// non-frozen vehicles. `position_lr` overrides the scheduled position rate.
/// Throws TrainingAbort, before touching any parameter, if a gradient is
/// not finite.
void adam_step(SceneModel& model, const SceneGradients& grads, OptimizerState& state, const LearningRates& lr,
               double position_lr);

/// Accumulates screen-space gradient statistics for densification.
void accumulate_densify_stats(const AssembledScene& scene, const BackwardResult& bw, OptimizerState& state);

struct DensifyStats {
    size_t cloned = 0;
    size_t split = 0;
    size_t pruned = 0;
};

/// Clones small and splits large Gaussians whose mean screen-space gradient
/// exceeds the threshold, then removes Gaussians with opacity below the prune
/// threshold. Moments follow the parameters (new entries zeroed) and the
/// gradient statistics are reset.
DensifyStats densify_and_prune(GaussianSet& params, ModelOptimizerState& state, const TrainConfig& config,
                               double scene_extent, std::mt19937_64& rng);

/// 1.1 x the largest distance of a camera center from their mean (at least 1).
double camera_extent(std::span<const Camera> cameras);

/// Position rate with log-linear decay between the initial and final rate.
double position_lr_at(const LearningRates& lr, int iteration, int total_iterations);

// ---------------------------------------------------------------------------
// Training

struct TrainView {
    uint32_t frame = 0;
    int camera_id = 0;
    Camera camera;
    Image image;
    bool holdout = false;
};

struct Dataset {
    uint32_t frame_count = 1;
    std::vector<TrainView> views;
};

struct MetricsRow {
    int iteration = 0;
    double loss = 0.0;
    double l1 = 0.0;
    double dssim = 0.0;
    double psnr_holdout = std::numeric_limits<double>::quiet_NaN();
    size_t gaussian_count = 0;
    double wall_ms = 0.0;
};

struct TrainResult {
    std::vector<MetricsRow> log;
    bool aborted = false;
    std::string abort_reason;
    int iterations_completed = 0;
};

struct TrainCallbacks {
    std::function<void(int iteration, const SceneModel&)> on_checkpoint;
    std::function<void(const MetricsRow&)> on_metrics;
};

/// Mean PSNR of the holdout views (all views when none are held out).
double evaluate_psnr(const SceneModel& model, const Dataset& data, const RenderSettings& settings,
                     bool holdout_only = true);

/// Photometric optimization. Rows are logged at iteration 0 (losses averaged
/// over all training views), every eval_interval iterations and at the end
/// (losses averaged over the iterations since the previous row). A
/// non-finite loss or gradient ends training with `aborted` set and the model
/// left at its last good state.
TrainResult train(const Dataset& data, SceneModel& model, const TrainConfig& config,
                  const TrainCallbacks& callbacks = {});

/// CSV text with header iteration,loss,l1,dssim,psnr_holdout,gaussian_count,wall_ms.
std::string metrics_csv(const std::vector<MetricsRow>& rows);

}  // namespace ogs
