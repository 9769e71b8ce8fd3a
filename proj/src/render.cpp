#include "ogs/render.hpp"

#include "ogs/parallel.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <tuple>

namespace ogs {

namespace {

/// View direction from the camera center toward a Gaussian, and the color
/// activation SH + 0.5 (unclamped).
Vec3 raw_color(const AssembledScene& scene, size_t i, const Vec3& dir) {
    double basis[kMaxShCoeffs];
    const int degree = scene.sh_degrees[i];
    sh_basis(degree, dir, basis);
    const std::span<const double> z = scene.sh_of(i);
    Vec3 c = Vec3::Constant(0.5);
    for (int b = 0; b < sh_coeff_count(degree); ++b) {
        for (int ch = 0; ch < 3; ++ch) {
            c[ch] += basis[b] * z[static_cast<size_t>(b * 3 + ch)];
        }
    }
    return c;
}

struct Contribution {
    uint32_t slot;  // position in the tile list (or splat index)
    double alpha;
    double gauss;
    double transmittance;  // before this splat
    bool capped;
};

/// Shared front-to-back loop. `get(k)` returns the k-th splat in depth order.
template <typename Get, typename OnContribution>
PixelResult composite_core(size_t n, Get&& get, const Vec2& pixel, int px, int py, bool use_bbox,
                           const RenderSettings& s, const std::vector<double>* semantic, int num_classes,
                           double* semantic_out, OnContribution&& on_contribution) {
    PixelResult r;
    double t = 1.0;
    for (size_t k = 0; k < n; ++k) {
        const Splat2D& sp = get(k);
        if (use_bbox && (px < sp.x_min || px > sp.x_max || py < sp.y_min || py > sp.y_max)) {
            continue;
        }
        const Vec2 d = pixel - sp.mean;
        const double power =
            -0.5 * (sp.conic(0, 0) * d.x() * d.x() + 2.0 * sp.conic(0, 1) * d.x() * d.y() + sp.conic(1, 1) * d.y() * d.y());
        const double g = std::exp(power);
        const double raw_alpha = sp.opacity * g;
        const bool capped = raw_alpha > s.alpha_cap;
        const double alpha = capped ? s.alpha_cap : raw_alpha;
        if (alpha < s.alpha_min) {
            continue;
        }
        const double w = alpha * t;
        r.color += w * sp.color;
        r.depth += w * sp.depth;
        if (semantic_out != nullptr) {
            const double* p = semantic->data() + static_cast<size_t>(sp.source) * static_cast<size_t>(num_classes);
            for (int c = 0; c < num_classes; ++c) {
                semantic_out[c] += w * p[c];
            }
        }
        on_contribution(Contribution{static_cast<uint32_t>(k), alpha, g, t, capped});
        ++r.contributors;
        t *= (1.0 - alpha);
        if (t < s.min_transmittance) {
            break;
        }
    }
    r.color += t * s.background;
    r.transmittance = t;
    return r;
}

}  // namespace

JacobianPoint jacobian_point(const Camera& camera, const Vec3& t) {
    const double lim = 1.3;
    const double lo_x = -lim * (camera.cx + 0.5) / camera.fx, hi_x = lim * (camera.width - 0.5 - camera.cx) / camera.fx;
    const double lo_y = -lim * (camera.cy + 0.5) / camera.fy, hi_y = lim * (camera.height - 0.5 - camera.cy) / camera.fy;
    const double rx = t.x() / t.z(), ry = t.y() / t.z();
    JacobianPoint p;
    p.clamped_x = rx < lo_x || rx > hi_x;
    p.clamped_y = ry < lo_y || ry > hi_y;
    p.point = Vec3(std::clamp(rx, lo_x, hi_x) * t.z(), std::clamp(ry, lo_y, hi_y) * t.z(), t.z());
    return p;
}

Eigen::Matrix<double, 2, 3> ewa_jacobian(const Camera& camera, const Vec3& t) {
    const Vec3 c = jacobian_point(camera, t).point;
    const double z = c.z();
    Eigen::Matrix<double, 2, 3> j;
    j << camera.fx / z, 0.0, -camera.fx * c.x() / (z * z),  //
        0.0, camera.fy / z, -camera.fy * c.y() / (z * z);
    return j;
}

namespace {

struct SplatGrad2D {
    Vec3 color = Vec3::Zero();
    double opacity = 0.0;
    Vec2 mean = Vec2::Zero();
    Mat2 conic = Mat2::Zero();  // full-matrix convention
};

}  // namespace

std::optional<Splat2D> project_gaussian(const Vec3& mean, const Mat3& covariance, const Camera& camera,
                                        double low_pass) {
    const Vec3 t = camera.to_camera(mean);
    if (!(t.z() >= camera.near && t.z() <= camera.far)) {
        return std::nullopt;
    }
    const Eigen::Matrix<double, 2, 3> m = ewa_jacobian(camera, t) * camera.rotation();
    Splat2D s;
    s.cam_point = t;
    s.depth = t.z();
    s.mean = camera.project(t);
    s.cov = m * covariance * m.transpose();
    s.cov(0, 0) += low_pass;
    s.cov(1, 1) += low_pass;
    s.cov(0, 1) = s.cov(1, 0) = 0.5 * (s.cov(0, 1) + s.cov(1, 0));
    const double det = s.cov.determinant();
    s.conic << s.cov(1, 1) / det, -s.cov(0, 1) / det, -s.cov(1, 0) / det, s.cov(0, 0) / det;
    return s;
}

void compute_splat_extent(Splat2D& s, const Camera& camera, double alpha_min) {
    s.x_min = s.y_min = 0;
    s.x_max = s.y_max = -1;
    if (!(s.opacity >= alpha_min) || !s.mean.allFinite()) {
        return;
    }
    // opacity * exp(-r^2 / 2) >= alpha_min inside the ellipse of Mahalanobis radius r
    const double r = std::sqrt(2.0 * std::log(s.opacity / alpha_min)) * (1.0 + 1e-6) + 1e-9;
    const double hx = r * std::sqrt(s.cov(0, 0));
    const double hy = r * std::sqrt(s.cov(1, 1));
    const double lo_x = std::ceil(s.mean.x() - hx), hi_x = std::floor(s.mean.x() + hx);
    const double lo_y = std::ceil(s.mean.y() - hy), hi_y = std::floor(s.mean.y() + hy);
    if (!(hi_x >= 0.0 && lo_x <= camera.width - 1 && hi_y >= 0.0 && lo_y <= camera.height - 1)) {
        return;
    }
    s.x_min = static_cast<int>(std::max(lo_x, 0.0));
    s.x_max = static_cast<int>(std::min(hi_x, static_cast<double>(camera.width - 1)));
    s.y_min = static_cast<int>(std::max(lo_y, 0.0));
    s.y_max = static_cast<int>(std::min(hi_y, static_cast<double>(camera.height - 1)));
}

TileBins bin_tiles(std::span<const Splat2D> splats, const Camera& camera, int tile_size) {
    TileBins bins;
    bins.tile_size = tile_size;
    bins.tiles_x = (camera.width + tile_size - 1) / tile_size;
    bins.tiles_y = (camera.height + tile_size - 1) / tile_size;
    bins.lists.resize(static_cast<size_t>(bins.tiles_x) * bins.tiles_y);
    for (size_t i = 0; i < splats.size(); ++i) {
        const Splat2D& s = splats[i];
        if (!s.visible()) {
            continue;
        }
        for (int ty = s.y_min / tile_size; ty <= s.y_max / tile_size; ++ty) {
            for (int tx = s.x_min / tile_size; tx <= s.x_max / tile_size; ++tx) {
                bins.lists[bins.tile_index(tx, ty)].push_back(static_cast<uint32_t>(i));
            }
        }
    }
    for (auto& list : bins.lists) {
        std::sort(list.begin(), list.end(), [&](uint32_t a, uint32_t b) {
            return std::tie(splats[a].depth, splats[a].source) < std::tie(splats[b].depth, splats[b].source);
        });
    }
    return bins;
}

PixelResult composite_pixel(std::span<const Splat2D> sorted, const Vec2& pixel, const RenderSettings& settings) {
    return composite_core(
        sorted.size(), [&](size_t k) -> const Splat2D& { return sorted[k]; }, pixel, 0, 0, false, settings, nullptr,
        0, nullptr, [](const Contribution&) {});
}

std::vector<Splat2D> project_scene(const AssembledScene& scene, const Camera& camera, const RenderSettings& settings) {
    camera.validate();
    const Vec3 center = camera.center();
    std::vector<Splat2D> splats(scene.count);
    parallel_for(scene.count, settings.threads, [&](size_t i) {
        Splat2D& out = splats[i];
        out.source = static_cast<uint32_t>(i);
        const auto s = project_gaussian(scene.positions[i], scene.covariances[i], camera, settings.low_pass);
        if (!s) {
            return;
        }
        out = *s;
        out.source = static_cast<uint32_t>(i);
        out.opacity = scene.opacities[i];
        const Vec3 dir = (scene.positions[i] - center).normalized();
        out.color = raw_color(scene, i, dir).cwiseMax(0.0).cwiseMin(1.0);
        compute_splat_extent(out, camera, settings.alpha_min);
    });
    return splats;
}

RenderOutput render(const AssembledScene& scene, const Camera& camera, const RenderSettings& settings) {
    const std::vector<Splat2D> splats = project_scene(scene, camera, settings);
    const TileBins bins = bin_tiles(splats, camera, settings.tile_size);
    RenderOutput out;
    out.rgb = Image(camera.width, camera.height, 3);
    out.depth = Image(camera.width, camera.height, 1);
    out.transmittance = Image(camera.width, camera.height, 1);
    std::vector<double> semantic;
    const int n_classes = scene.num_classes;
    if (settings.render_semantics) {
        semantic = semantic_output(scene);
        out.semantic = Image(camera.width, camera.height, n_classes);
    }
    const int ts = bins.tile_size;
    parallel_for(bins.lists.size(), settings.threads, [&](size_t tile) {
        const auto& list = bins.lists[tile];
        const int tx = static_cast<int>(tile % static_cast<size_t>(bins.tiles_x));
        const int ty = static_cast<int>(tile / static_cast<size_t>(bins.tiles_x));
        for (int py = ty * ts; py < std::min((ty + 1) * ts, camera.height); ++py) {
            for (int px = tx * ts; px < std::min((tx + 1) * ts, camera.width); ++px) {
                double* sem = settings.render_semantics ? &out.semantic.at(px, py, 0) : nullptr;
                const PixelResult r = composite_core(
                    list.size(), [&](size_t k) -> const Splat2D& { return splats[list[k]]; }, Vec2(px, py), px, py,
                    true, settings, &semantic, n_classes, sem, [](const Contribution&) {});
                for (int c = 0; c < 3; ++c) {
                    out.rgb.at(px, py, c) = r.color[c];
                }
                out.depth.at(px, py) = r.depth;
                out.transmittance.at(px, py) = r.transmittance;
            }
        }
    });
    return out;
}

RenderBackward render_backward(const AssembledScene& scene, const Camera& camera, const RenderSettings& settings,
                               const Image& grad_rgb) {
    if (grad_rgb.width != camera.width || grad_rgb.height != camera.height || grad_rgb.channels != 3) {
        throw ValidationError("render_backward: gradient image does not match the camera");
    }
    const std::vector<Splat2D> splats = project_scene(scene, camera, settings);
    const TileBins bins = bin_tiles(splats, camera, settings.tile_size);
    const int ts = bins.tile_size;

    // per-tile gradient buffers, reduced in tile order afterwards
    std::vector<std::vector<SplatGrad2D>> tile_grads(bins.lists.size());
    parallel_for(bins.lists.size(), settings.threads, [&](size_t tile) {
        const auto& list = bins.lists[tile];
        auto& buf = tile_grads[tile];
        buf.assign(list.size(), SplatGrad2D{});
        if (list.empty()) {
            return;
        }
        const int tx = static_cast<int>(tile % static_cast<size_t>(bins.tiles_x));
        const int ty = static_cast<int>(tile / static_cast<size_t>(bins.tiles_x));
        std::vector<Contribution> contribs;
        for (int py = ty * ts; py < std::min((ty + 1) * ts, camera.height); ++py) {
            for (int px = tx * ts; px < std::min((tx + 1) * ts, camera.width); ++px) {
                const Vec3 g(grad_rgb.at(px, py, 0), grad_rgb.at(px, py, 1), grad_rgb.at(px, py, 2));
                if (g.isZero(0.0)) {
                    continue;
                }
                contribs.clear();
                const Vec2 pixel(px, py);
                const PixelResult r = composite_core(
                    list.size(), [&](size_t k) -> const Splat2D& { return splats[list[k]]; }, pixel, px, py, true,
                    settings, nullptr, 0, nullptr, [&](const Contribution& c) { contribs.push_back(c); });
                Vec3 behind = r.transmittance * settings.background;
                for (auto it = contribs.rbegin(); it != contribs.rend(); ++it) {
                    const Splat2D& sp = splats[list[it->slot]];
                    SplatGrad2D& sg = buf[it->slot];
                    const double w = it->alpha * it->transmittance;
                    sg.color += w * g;
                    const double g_alpha = g.dot(it->transmittance * sp.color - behind / (1.0 - it->alpha));
                    behind += w * sp.color;
                    if (it->capped) {
                        continue;
                    }
                    sg.opacity += g_alpha * it->gauss;
                    const double g_power = g_alpha * it->alpha;
                    const Vec2 d = pixel - sp.mean;
                    sg.conic(0, 0) += -0.5 * d.x() * d.x() * g_power;
                    sg.conic(0, 1) += -0.5 * d.x() * d.y() * g_power;
                    sg.conic(1, 0) += -0.5 * d.x() * d.y() * g_power;
                    sg.conic(1, 1) += -0.5 * d.y() * d.y() * g_power;
                    sg.mean += g_power * (sp.conic * d);
                }
            }
        }
    });

    std::vector<SplatGrad2D> splat_grads(splats.size());
    for (size_t tile = 0; tile < bins.lists.size(); ++tile) {
        const auto& list = bins.lists[tile];
        for (size_t k = 0; k < list.size(); ++k) {
            SplatGrad2D& dst = splat_grads[list[k]];
            const SplatGrad2D& src = tile_grads[tile][k];
            dst.color += src.color;
            dst.opacity += src.opacity;
            dst.mean += src.mean;
            dst.conic += src.conic;
        }
    }

    RenderBackward out;
    out.assembled = AssembledGradients(scene.count);
    out.screen_grad_norm.assign(scene.count, 0.0);
    out.visible.assign(scene.count, 0);
    const Mat3 rot = camera.rotation();
    const Vec3 center = camera.center();
    parallel_for(scene.count, settings.threads, [&](size_t i) {
        const Splat2D& sp = splats[i];
        if (!sp.visible()) {
            return;
        }
        out.visible[i] = 1;
        const SplatGrad2D& sg = splat_grads[i];
        out.screen_grad_norm[i] =
            Vec2(sg.mean.x() * 0.5 * camera.width, sg.mean.y() * 0.5 * camera.height).norm();
        out.assembled.opacities[i] = sg.opacity;

        // color: SH toward the camera, +0.5, clamped
        const Vec3 v = scene.positions[i] - center;
        const double vn = v.norm();
        const Vec3 dir = v / vn;
        const int degree = scene.sh_degrees[i];
        double basis[kMaxShCoeffs];
        Vec3 basis_grad[kMaxShCoeffs];
        sh_basis_with_grad(degree, dir, basis, basis_grad);
        const Vec3 raw = raw_color(scene, i, dir);
        const std::span<const double> z = scene.sh_of(i);
        double* g_sh = out.assembled.sh.data() + i * AssembledScene::kShStride;
        Vec3 g_dir = Vec3::Zero();
        for (int ch = 0; ch < 3; ++ch) {
            if (raw[ch] < 0.0 || raw[ch] > 1.0) {
                continue;
            }
            for (int b = 0; b < sh_coeff_count(degree); ++b) {
                g_sh[b * 3 + ch] += sg.color[ch] * basis[b];
                g_dir += sg.color[ch] * z[static_cast<size_t>(b * 3 + ch)] * basis_grad[b];
            }
        }
        Vec3 g_pos = (g_dir - dir * dir.dot(g_dir)) / vn;

        // conic -> 2D covariance -> 3D covariance and Jacobian
        const Mat2 g_cov2 = -sp.conic * sg.conic * sp.conic;
        const Vec3& t = sp.cam_point;
        const double zc = t.z();
        const JacobianPoint jp = jacobian_point(camera, t);
        const Eigen::Matrix<double, 2, 3> m = ewa_jacobian(camera, t) * rot;
        const Mat3& cov = scene.covariances[i];
        out.assembled.covariances[i] = m.transpose() * g_cov2 * m;
        const Eigen::Matrix<double, 2, 3> g_m = (g_cov2 + g_cov2.transpose()) * m * cov;
        const Eigen::Matrix<double, 2, 3> g_j = g_m * rot.transpose();
        const double z2 = zc * zc, z3 = z2 * zc;
        // J02 = -fx x'/z^2 with x' = x, or x' = c z once x/z is clamped to c
        const double jx = jp.point.x(), jy = jp.point.y();
        Vec3 g_t;
        g_t.x() = jp.clamped_x ? 0.0 : -camera.fx / z2 * g_j(0, 2);
        g_t.y() = jp.clamped_y ? 0.0 : -camera.fy / z2 * g_j(1, 2);
        g_t.z() = -camera.fx / z2 * g_j(0, 0) - camera.fy / z2 * g_j(1, 1) +
                  (jp.clamped_x ? 1.0 : 2.0) * camera.fx * jx / z3 * g_j(0, 2) +
                  (jp.clamped_y ? 1.0 : 2.0) * camera.fy * jy / z3 * g_j(1, 2);
        // mean2d = (fx x / z + cx, fy y / z + cy)
        g_t.x() += sg.mean.x() * camera.fx / zc;
        g_t.y() += sg.mean.y() * camera.fy / zc;
        g_t.z() += -sg.mean.x() * camera.fx * t.x() / z2 - sg.mean.y() * camera.fy * t.y() / z2;
        g_pos += rot.transpose() * g_t;
        out.assembled.positions[i] = g_pos;
    });
    return out;
}

BackwardResult backward(const SceneModel& model, const AssembledScene& scene, const Camera& camera,
                        const RenderSettings& settings, const Image& grad_rgb) {
    RenderBackward rb = render_backward(scene, camera, settings, grad_rgb);
    BackwardResult out;
    out.params = SceneGradients::zeros_like(model);
    assemble_backward(model, scene, rb.assembled, out.params);
    out.screen_grad_norm = std::move(rb.screen_grad_norm);
    out.visible = std::move(rb.visible);
    return out;
}

}  // namespace ogs
