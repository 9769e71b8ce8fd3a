#include "ogs/optim.hpp"

#include "ogs/log.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

namespace ogs {

namespace {

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kSsimC1 = 0.01 * 0.01;
constexpr double kSsimC2 = 0.03 * 0.03;

std::array<double, kSsimWindow> ssim_taps() {
    std::array<double, kSsimWindow> g{};
    double sum = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
        const double d = i - kSsimWindow / 2;
        g[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
        sum += g[i];
    }
    for (double& v : g) {
        v /= sum;
    }
    return g;
}

// Single-channel planes with (w - 10) x (h - 10) valid outputs.
struct Plane {
    int w = 0;
    int h = 0;
    std::vector<double> v;
    Plane(int w_, int h_) : w(w_), h(h_), v(static_cast<size_t>(w_) * h_, 0.0) {}
    double& at(int x, int y) { return v[static_cast<size_t>(y) * w + x]; }
    double at(int x, int y) const { return v[static_cast<size_t>(y) * w + x]; }
};

Plane filter_valid(const Plane& in) {
    static const auto g = ssim_taps();
    const int ow = in.w - kSsimWindow + 1;
    const int oh = in.h - kSsimWindow + 1;
    Plane horiz(ow, in.h);
    for (int y = 0; y < in.h; ++y) {
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int a = 0; a < kSsimWindow; ++a) {
                s += g[a] * in.at(x + a, y);
            }
            horiz.at(x, y) = s;
        }
    }
    Plane out(ow, oh);
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int b = 0; b < kSsimWindow; ++b) {
                s += g[b] * horiz.at(x, y + b);
            }
            out.at(x, y) = s;
        }
    }
    return out;
}

// Adjoint of filter_valid: maps valid-region values back to the full plane.
Plane filter_adjoint(const Plane& in, int w, int h) {
    static const auto g = ssim_taps();
    Plane vert(in.w, h);
    for (int y = 0; y < in.h; ++y) {
        for (int x = 0; x < in.w; ++x) {
            const double v = in.at(x, y);
            for (int b = 0; b < kSsimWindow; ++b) {
                vert.at(x, y + b) += g[b] * v;
            }
        }
    }
    Plane out(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < in.w; ++x) {
            const double v = vert.at(x, y);
            for (int a = 0; a < kSsimWindow; ++a) {
                out.at(x + a, y) += g[a] * v;
            }
        }
    }
    return out;
}

Plane channel_plane(const Image& img, int c) {
    Plane p(img.width, img.height);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            p.at(x, y) = img.at(x, y, c);
        }
    }
    return p;
}

void check_ssim_inputs(const Image& x, const Image& y) {
    if (!x.same_shape(y)) {
        throw ValidationError("ssim: image shapes differ");
    }
    if (x.width < kSsimWindow || x.height < kSsimWindow) {
        throw ValidationError("ssim: image smaller than the 11x11 window");
    }
}

SsimResult ssim_impl(const Image& x, const Image& y, bool want_grad) {
    check_ssim_inputs(x, y);
    SsimResult result;
    if (want_grad) {
        result.grad = Image(x.width, x.height, x.channels, 0.0);
    }
    const int ow = x.width - kSsimWindow + 1;
    const int oh = x.height - kSsimWindow + 1;
    const double norm = 1.0 / (static_cast<double>(ow) * oh * x.channels);
    double total = 0.0;
    for (int c = 0; c < x.channels; ++c) {
        const Plane px = channel_plane(x, c);
        const Plane py = channel_plane(y, c);
        Plane pxx(x.width, x.height), pyy(x.width, x.height), pxy(x.width, x.height);
        for (size_t i = 0; i < px.v.size(); ++i) {
            pxx.v[i] = px.v[i] * px.v[i];
            pyy.v[i] = py.v[i] * py.v[i];
            pxy.v[i] = px.v[i] * py.v[i];
        }
        const Plane mx = filter_valid(px), my = filter_valid(py);
        const Plane exx = filter_valid(pxx), eyy = filter_valid(pyy), exy = filter_valid(pxy);
        Plane g_m(ow, oh), g_xx(ow, oh), g_xy(ow, oh);
        for (size_t i = 0; i < mx.v.size(); ++i) {
            const double a = mx.v[i], b = my.v[i];
            const double a1 = 2.0 * a * b + kSsimC1;
            const double a2 = 2.0 * (exy.v[i] - a * b) + kSsimC2;
            const double b1 = a * a + b * b + kSsimC1;
            const double b2 = (exx.v[i] - a * a) + (eyy.v[i] - b * b) + kSsimC2;
            const double s = (a1 * a2) / (b1 * b2);
            total += s;
            if (want_grad) {
                g_m.v[i] = norm * s * (2.0 * b / a1 - 2.0 * b / a2 - 2.0 * a / b1 + 2.0 * a / b2);
                g_xx.v[i] = -norm * s / b2;
                g_xy.v[i] = norm * 2.0 * s / a2;
            }
        }
        if (want_grad) {
            const Plane am = filter_adjoint(g_m, x.width, x.height);
            const Plane axx = filter_adjoint(g_xx, x.width, x.height);
            const Plane axy = filter_adjoint(g_xy, x.width, x.height);
            for (int yy = 0; yy < x.height; ++yy) {
                for (int xx = 0; xx < x.width; ++xx) {
                    result.grad.at(xx, yy, c) =
                        am.at(xx, yy) + 2.0 * px.at(xx, yy) * axx.at(xx, yy) + py.at(xx, yy) * axy.at(xx, yy);
                }
            }
        }
    }
    result.value = total * norm;
    return result;
}

bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double d) { return std::isfinite(d); });
}

void check_finite(std::span<const double> v, const std::string& what) {
    if (!all_finite(v)) {
        throw TrainingAbort("non-finite gradient in " + what);
    }
}

const char* group_name(ParamGroup g) {
    switch (g) {
        case ParamGroup::Position: return "position";
        case ParamGroup::Rotation: return "rotation";
        case ParamGroup::Scale: return "scale";
        case ParamGroup::Opacity: return "opacity";
        case ParamGroup::Appearance: return "appearance";
        case ParamGroup::Semantic: return "semantic";
    }
    return "?";
}

void check_set_finite(const GaussianSet& g, const std::string& owner) {
    for (ParamGroup group : kParamGroups) {
        check_finite(g.array(group), owner + " " + group_name(group));
    }
}

void step_set(GaussianSet& params, const GaussianSet& grads, ModelOptimizerState& st, const LearningRates& lr,
              double position_lr, int step) {
    for (size_t k = 0; k < kParamGroups.size(); ++k) {
        const ParamGroup g = kParamGroups[k];
        const double rate = g == ParamGroup::Position ? position_lr : lr.for_group(g);
        adam_update(params.array(g), grads.array(g), st.moments[k], rate, step);
    }
}

}  // namespace

double LearningRates::for_group(ParamGroup g) const {
    switch (g) {
        case ParamGroup::Position: return position;
        case ParamGroup::Rotation: return rotation;
        case ParamGroup::Scale: return scale;
        case ParamGroup::Opacity: return opacity;
        case ParamGroup::Appearance: return appearance;
        case ParamGroup::Semantic: return semantic;
    }
    return 0.0;
}

void TrainConfig::validate() const {
    if (iterations < 0) {
        throw ValidationError("config: iterations must be non-negative");
    }
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
        throw ValidationError("config: lambda must be in [0, 1]");
    }
    if (densify_interval <= 0 || eval_interval <= 0 || checkpoint_interval < 0) {
        throw ValidationError("config: intervals must be positive");
    }
    if (!(densify_grad_threshold >= 0.0) || !(opacity_prune_threshold >= 0.0 && opacity_prune_threshold < 1.0)) {
        throw ValidationError("config: invalid densification thresholds");
    }
    if (!(split_scale_fraction > 0.0)) {
        throw ValidationError("config: split_scale_fraction must be positive");
    }
    const double rates[] = {lr.position, lr.position_final, lr.rotation,       lr.scale,
                            lr.opacity,  lr.appearance,     lr.semantic,       lr.delta_rotation,
                            lr.delta_translation};
    for (double r : rates) {
        if (!(r >= 0.0) || !std::isfinite(r)) {
            throw ValidationError("config: learning rates must be finite and non-negative");
        }
    }
    if (lr.position > 0.0 && !(lr.position_final > 0.0)) {
        throw ValidationError("config: position_final must be positive");
    }
    if (render.tile_size <= 0 || render.threads <= 0) {
        throw ValidationError("config: tile_size and threads must be positive");
    }
    if (!(render.min_transmittance >= 0.0 && render.min_transmittance < 1.0)) {
        throw ValidationError("config: min_transmittance must be in [0, 1)");
    }
}

// ---------------------------------------------------------------------------

double ssim(const Image& x, const Image& y) { return ssim_impl(x, y, false).value; }

SsimResult ssim_with_grad(const Image& x, const Image& y) { return ssim_impl(x, y, true); }

LossResult loss(const Image& rendered, const Image& target, double lambda) {
    if (!rendered.same_shape(target)) {
        throw ValidationError("loss: image shapes differ");
    }
    LossResult out;
    const SsimResult s = ssim_with_grad(rendered, target);
    const double n = static_cast<double>(rendered.data.size());
    out.grad = Image(rendered.width, rendered.height, rendered.channels, 0.0);
    double l1 = 0.0;
    for (size_t i = 0; i < rendered.data.size(); ++i) {
        const double d = rendered.data[i] - target.data[i];
        l1 += std::abs(d);
        const double sign = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
        out.grad.data[i] = (1.0 - lambda) * sign / n - lambda * 0.5 * s.grad.data[i];
    }
    out.l1 = l1 / n;
    out.dssim = (1.0 - s.value) / 2.0;
    out.value = (1.0 - lambda) * out.l1 + lambda * out.dssim;
    return out;
}

// ---------------------------------------------------------------------------

void adam_update(std::span<double> params, std::span<const double> grads, AdamMoments& moments, double lr, int step,
                 const AdamHyper& hyper) {
    if (params.size() != grads.size() || moments.m.size() != params.size() || moments.v.size() != params.size()) {
        throw Error("adam: parameter, gradient and moment sizes differ");
    }
    if (step < 1) {
        throw Error("adam: step must be 1-based");
    }
    const double bc1 = 1.0 - std::pow(hyper.beta1, step);
    const double bc2 = 1.0 - std::pow(hyper.beta2, step);
    for (size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        moments.m[i] = hyper.beta1 * moments.m[i] + (1.0 - hyper.beta1) * g;
        moments.v[i] = hyper.beta2 * moments.v[i] + (1.0 - hyper.beta2) * g * g;
        const double m_hat = moments.m[i] / bc1;
        const double v_hat = moments.v[i] / bc2;
        params[i] -= lr * m_hat / (std::sqrt(v_hat) + hyper.eps);
    }
}

void ModelOptimizerState::reset_for(const GaussianSet& g) {
    for (size_t k = 0; k < kParamGroups.size(); ++k) {
        moments[k].resize(g.array(kParamGroups[k]).size());
    }
    grad_accum.assign(g.count, 0.0);
    grad_count.assign(g.count, 0.0);
}

OptimizerState OptimizerState::for_model(const SceneModel& model) {
    OptimizerState st;
    st.street.reset_for(model.street.params);
    st.vehicles.resize(model.vehicles.size());
    for (size_t v = 0; v < model.vehicles.size(); ++v) {
        st.vehicles[v].gaussians.reset_for(model.vehicles[v].params);
        st.vehicles[v].delta_rotation.resize(model.vehicles[v].delta_rotation.size());
        st.vehicles[v].delta_translation.resize(model.vehicles[v].delta_translation.size());
    }
    return st;
}

void OptimizerState::check_shapes(const SceneModel& model) const {
    auto check = [](const ModelOptimizerState& s, const GaussianSet& g) {
        for (size_t k = 0; k < kParamGroups.size(); ++k) {
            const size_t n = g.array(kParamGroups[k]).size();
            if (s.moments[k].m.size() != n || s.moments[k].v.size() != n) {
                throw Error("optimizer: moment shape mismatch");
            }
        }
        if (s.grad_accum.size() != g.count || s.grad_count.size() != g.count) {
            throw Error("optimizer: densification statistics shape mismatch");
        }
    };
    check(street, model.street.params);
    if (vehicles.size() != model.vehicles.size()) {
        throw Error("optimizer: vehicle count mismatch");
    }
    for (size_t v = 0; v < vehicles.size(); ++v) {
        check(vehicles[v].gaussians, model.vehicles[v].params);
        if (vehicles[v].delta_rotation.m.size() != model.vehicles[v].delta_rotation.size() ||
            vehicles[v].delta_translation.m.size() != model.vehicles[v].delta_translation.size()) {
            throw Error("optimizer: pose delta moment mismatch");
        }
    }
}

void adam_step(SceneModel& model, const SceneGradients& grads, OptimizerState& state, const LearningRates& lr,
               double position_lr) {
    check_set_finite(grads.street, "street");
    for (size_t v = 0; v < grads.vehicles.size(); ++v) {
        const std::string owner = "vehicle " + std::to_string(model.vehicles[v].id);
        check_set_finite(grads.vehicles[v].params, owner);
        check_finite(grads.vehicles[v].delta_rotation, owner + " delta rotation");
        check_finite(grads.vehicles[v].delta_translation, owner + " delta translation");
    }
    state.check_shapes(model);
    ++state.step;
    step_set(model.street.params, grads.street, state.street, lr, position_lr, state.step);
    for (size_t v = 0; v < model.vehicles.size(); ++v) {
        VehicleModel& vm = model.vehicles[v];
        VehicleOptimizerState& vs = state.vehicles[v];
        step_set(vm.params, grads.vehicles[v].params, vs.gaussians, lr, position_lr, state.step);
        if (!vm.frozen) {
            adam_update(vm.delta_rotation, grads.vehicles[v].delta_rotation, vs.delta_rotation, lr.delta_rotation,
                        state.step);
            adam_update(vm.delta_translation, grads.vehicles[v].delta_translation, vs.delta_translation,
                        lr.delta_translation, state.step);
        }
    }
}

void accumulate_densify_stats(const AssembledScene& scene, const BackwardResult& bw, OptimizerState& state) {
    for (size_t i = 0; i < scene.count; ++i) {
        if (!bw.visible[i]) {
            continue;
        }
        const GaussianOrigin& o = scene.origins[i];
        ModelOptimizerState& s = o.model < 0 ? state.street : state.vehicles[o.model].gaussians;
        s.grad_accum[o.local] += bw.screen_grad_norm[i];
        s.grad_count[o.local] += 1.0;
    }
}

DensifyStats densify_and_prune(GaussianSet& params, ModelOptimizerState& state, const TrainConfig& config,
                               double scene_extent, std::mt19937_64& rng) {
    DensifyStats stats;
    const size_t n0 = params.count;
    const double split_limit = config.split_scale_fraction * scene_extent;
    std::vector<uint8_t> split_parent(n0, 0);
    std::vector<size_t> to_clone, to_split;
    for (size_t i = 0; i < n0; ++i) {
        if (state.grad_count[i] <= 0.0) {
            continue;
        }
        const double mean_grad = state.grad_accum[i] / state.grad_count[i];
        if (mean_grad < config.densify_grad_threshold) {
            continue;
        }
        if (params.scale(i).maxCoeff() > split_limit) {
            to_split.push_back(i);
            split_parent[i] = 1;
        } else {
            to_clone.push_back(i);
        }
    }

    const GaussianSet original = params;
    for (size_t i : to_clone) {
        params.append_from(original, i);
    }
    std::normal_distribution<double> normal(0.0, 1.0);
    const double shrink = std::log(1.6);
    for (size_t i : to_split) {
        const Vec3 s = original.scale(i);
        const Mat3 r = rotmat_from_raw(original.rotation(i));
        for (int child = 0; child < 2; ++child) {
            Vec3 xi;
            for (int a = 0; a < 3; ++a) {
                xi[a] = normal(rng);
            }
            params.append_from(original, i);
            const size_t c = params.count - 1;
            params.set_position(c, original.position(i) + r * s.cwiseProduct(xi));
            params.set_log_scale(c, original.log_scale(i) - Vec3::Constant(shrink));
        }
    }
    stats.cloned = to_clone.size();
    stats.split = to_split.size();

    std::vector<uint8_t> keep(params.count, 1);
    for (size_t i = 0; i < n0; ++i) {
        if (split_parent[i]) {
            keep[i] = 0;
        }
    }
    for (size_t i = 0; i < params.count; ++i) {
        if (keep[i] && params.opacity(i) < config.opacity_prune_threshold) {
            keep[i] = 0;
            ++stats.pruned;
        }
    }

    // Moments: existing entries keep their values, new ones start at zero.
    for (size_t k = 0; k < kParamGroups.size(); ++k) {
        const size_t stride = static_cast<size_t>(params.stride(kParamGroups[k]));
        AdamMoments& mom = state.moments[k];
        mom.m.resize(params.count * stride, 0.0);
        mom.v.resize(params.count * stride, 0.0);
        size_t out = 0;
        for (size_t i = 0; i < params.count; ++i) {
            if (!keep[i]) {
                continue;
            }
            for (size_t j = 0; j < stride; ++j) {
                mom.m[out * stride + j] = mom.m[i * stride + j];
                mom.v[out * stride + j] = mom.v[i * stride + j];
            }
            ++out;
        }
        mom.m.resize(out * stride);
        mom.v.resize(out * stride);
    }
    params.keep(keep);
    state.grad_accum.assign(params.count, 0.0);
    state.grad_count.assign(params.count, 0.0);
    return stats;
}

double camera_extent(std::span<const Camera> cameras) {
    if (cameras.empty()) {
        return 1.0;
    }
    Vec3 mean = Vec3::Zero();
    for (const Camera& c : cameras) {
        mean += c.center();
    }
    mean /= static_cast<double>(cameras.size());
    double radius = 0.0;
    for (const Camera& c : cameras) {
        radius = std::max(radius, (c.center() - mean).norm());
    }
    return std::max(1.1 * radius, 1.0);
}

double position_lr_at(const LearningRates& lr, int iteration, int total_iterations) {
    if (lr.position <= 0.0) {
        return 0.0;
    }
    const double t = total_iterations > 0 ? std::clamp(static_cast<double>(iteration) / total_iterations, 0.0, 1.0)
                                          : 0.0;
    return std::exp(std::log(lr.position) * (1.0 - t) + std::log(lr.position_final) * t);
}

// ---------------------------------------------------------------------------

double evaluate_psnr(const SceneModel& model, const Dataset& data, const RenderSettings& settings,
                     bool holdout_only) {
    const bool any_holdout = std::any_of(data.views.begin(), data.views.end(), [](const TrainView& v) {
        return v.holdout;
    });
    double sum = 0.0;
    int n = 0;
    for (const TrainView& view : data.views) {
        if (holdout_only && any_holdout && !view.holdout) {
            continue;
        }
        const RenderOutput out = render(assemble(model, view.frame), view.camera, settings);
        double mse = 0.0;
        for (size_t i = 0; i < out.rgb.data.size(); ++i) {
            const double d = out.rgb.data[i] - view.image.data[i];
            mse += d * d;
        }
        mse /= static_cast<double>(out.rgb.data.size());
        sum += mse > 0.0 ? 10.0 * std::log10(1.0 / mse) : 100.0;
        ++n;
    }
    return n > 0 ? sum / n : std::numeric_limits<double>::quiet_NaN();
}

TrainResult train(const Dataset& data, SceneModel& model, const TrainConfig& config,
                  const TrainCallbacks& callbacks) {
    config.validate();
    std::vector<size_t> train_views;
    std::vector<Camera> cameras;
    for (size_t i = 0; i < data.views.size(); ++i) {
        if (!data.views[i].holdout) {
            train_views.push_back(i);
            cameras.push_back(data.views[i].camera);
        }
    }
    if (train_views.empty()) {
        throw ValidationError("train: no training views");
    }
    const double extent = camera_extent(cameras);
    const double position_scale = config.scale_position_lr_by_extent ? extent : 1.0;

    std::mt19937_64 rng(config.seed);
    std::uniform_int_distribution<size_t> pick(0, train_views.size() - 1);
    OptimizerState state = OptimizerState::for_model(model);
    TrainResult result;
    const auto start = std::chrono::steady_clock::now();

    auto make_row = [&](int iteration, double l, double l1, double ds) {
        MetricsRow row;
        row.iteration = iteration;
        row.loss = l;
        row.l1 = l1;
        row.dssim = ds;
        row.psnr_holdout = evaluate_psnr(model, data, config.render, true);
        row.gaussian_count = model.total_gaussians();
        if (config.log_wall_time) {
            row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        }
        result.log.push_back(row);
        if (callbacks.on_metrics) {
            callbacks.on_metrics(row);
        }
    };

    {
        double l = 0.0, l1 = 0.0, ds = 0.0;
        for (size_t idx : train_views) {
            const TrainView& view = data.views[idx];
            const RenderOutput out = render(assemble(model, view.frame), view.camera, config.render);
            const LossResult lr = loss(out.rgb, view.image, config.lambda);
            l += lr.value;
            l1 += lr.l1;
            ds += lr.dssim;
        }
        const double n = static_cast<double>(train_views.size());
        make_row(0, l / n, l1 / n, ds / n);
    }

    double acc_loss = 0.0, acc_l1 = 0.0, acc_ds = 0.0;
    int acc_n = 0;
    for (int it = 1; it <= config.iterations; ++it) {
        const TrainView& view = data.views[train_views[pick(rng)]];
        try {
            const AssembledScene scene = assemble(model, view.frame);
            const RenderOutput out = render(scene, view.camera, config.render);
            const LossResult lr = loss(out.rgb, view.image, config.lambda);
            if (!std::isfinite(lr.value)) {
                throw TrainingAbort("non-finite loss");
            }
            const BackwardResult bw = backward(model, scene, view.camera, config.render, lr.grad);
            adam_step(model, bw.params, state, config.lr, position_lr_at(config.lr, it, config.iterations) * position_scale);
            accumulate_densify_stats(scene, bw, state);
            acc_loss += lr.value;
            acc_l1 += lr.l1;
            acc_ds += lr.dssim;
            ++acc_n;
        } catch (const TrainingAbort& e) {
            result.aborted = true;
            result.abort_reason = "iteration " + std::to_string(it) + ": " + e.what();
            log_warning("training aborted at " + result.abort_reason);
            return result;
        }
        result.iterations_completed = it;

        if (it > config.densify_from && it <= config.densify_until && it % config.densify_interval == 0) {
            densify_and_prune(model.street.params, state.street, config, extent, rng);
            for (size_t v = 0; v < model.vehicles.size(); ++v) {
                densify_and_prune(model.vehicles[v].params, state.vehicles[v].gaussians, config, extent, rng);
            }
        }
        if (it % config.eval_interval == 0 || it == config.iterations) {
            make_row(it, acc_loss / acc_n, acc_l1 / acc_n, acc_ds / acc_n);
            acc_loss = acc_l1 = acc_ds = 0.0;
            acc_n = 0;
        }
        if (config.checkpoint_interval > 0 && it % config.checkpoint_interval == 0 && callbacks.on_checkpoint) {
            callbacks.on_checkpoint(it, model);
        }
    }
    return result;
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
    std::ostringstream os;
    os.precision(10);
    os << "iteration,loss,l1,dssim,psnr_holdout,gaussian_count,wall_ms\n";
    for (const MetricsRow& r : rows) {
        os << r.iteration << ',' << r.loss << ',' << r.l1 << ',' << r.dssim << ',' << r.psnr_holdout << ','
           << r.gaussian_count << ',' << r.wall_ms << '\n';
    }
    return os.str();
}

}  // namespace ogs
