#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ogs::testing {

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

Vec3 uniform_vec(Rng& rng, double lo, double hi) { return {uniform(rng, lo, hi), uniform(rng, lo, hi), uniform(rng, lo, hi)}; }

Vec4 random_raw_quat(Rng& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Vec4 q(n(rng), n(rng), n(rng), n(rng));
    return q.normalized() * uniform(rng, 0.5, 2.0);
}

UnitQuaternion random_unit_quat(Rng& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    return UnitQuaternion::from_vector(Vec4(n(rng), n(rng), n(rng), n(rng)).normalized());
}

Pose random_pose(Rng& rng, double translation_range) {
    return {random_unit_quat(rng), uniform_vec(rng, -translation_range, translation_range)};
}

Camera look_at_camera(const Vec3& center, const Vec3& target, int width, int height, double focal) {
    const Vec3 f = (target - center).normalized();
    const Vec3 r = f.cross(Vec3::UnitZ()).normalized();
    const Vec3 d = f.cross(r);
    Mat3 rcw;
    rcw.row(0) = r;
    rcw.row(1) = d;
    rcw.row(2) = f;
    Camera cam;
    cam.fx = cam.fy = focal;
    cam.cx = 0.5 * (width - 1);
    cam.cy = 0.5 * (height - 1);
    cam.width = width;
    cam.height = height;
    cam.near = 0.1;
    cam.far = 100.0;
    cam.world_to_camera = {rotmat_to_quat(rcw), -rcw * center};
    return cam;
}

Camera random_camera(Rng& rng, int width, int height) {
    const Vec3 center = uniform_vec(rng, -3.0, 3.0);
    const double yaw = uniform(rng, -M_PI, M_PI);
    const double pitch = uniform(rng, -0.4, 0.4);
    const Vec3 dir(std::cos(pitch) * std::cos(yaw), std::cos(pitch) * std::sin(yaw), std::sin(pitch));
    Camera cam = look_at_camera(center, center + dir, width, height, uniform(rng, 0.7, 1.3) * width);
    cam.fy = cam.fx * uniform(rng, 0.9, 1.1);
    cam.cx += uniform(rng, -0.1, 0.1) * width;
    cam.cy += uniform(rng, -0.1, 0.1) * height;
    return cam;
}

Vec3 unproject(const Camera& camera, double u, double v, double z) {
    const Vec3 cam_point((u - camera.cx) / camera.fx * z, (v - camera.cy) / camera.fy * z, z);
    return camera.world_to_camera.inverse().apply(cam_point);
}

namespace {

Vec3 random_view_point(Rng& rng, const Camera& camera, const RandomSceneOptions& o) {
    const double u = uniform(rng, -o.pixel_margin, 1.0 + o.pixel_margin) * camera.width;
    const double v = uniform(rng, -o.pixel_margin, 1.0 + o.pixel_margin) * camera.height;
    return unproject(camera, u, v, uniform(rng, o.depth_min, o.depth_max));
}

void randomize_common(Rng& rng, GaussianSet& g, size_t i, const RandomSceneOptions& o) {
    g.set_rotation(i, random_raw_quat(rng));
    g.set_log_scale(i, Vec3(uniform(rng, o.min_log_scale, o.max_log_scale), uniform(rng, o.min_log_scale, o.max_log_scale),
                            uniform(rng, o.min_log_scale, o.max_log_scale)));
    g.opacity_logits[i] = uniform(rng, -1.5, 3.0);
    for (int s = 0; s < g.semantic_stride; ++s) {
        g.semantics[i * static_cast<size_t>(g.semantic_stride) + static_cast<size_t>(s)] = uniform(rng, -2.0, 2.0);
    }
}

}  // namespace

SceneModel random_scene(Rng& rng, const Camera& camera, uint32_t frame, const RandomSceneOptions& o) {
    std::normal_distribution<double> normal(0.0, 1.0);
    SceneModel model;
    model.num_classes = o.num_classes;
    model.background = Vec3(uniform(rng, 0, 1), uniform(rng, 0, 1), uniform(rng, 0, 1));
    model.street.num_classes = o.num_classes;
    model.street.sh_degree = o.street_sh_degree >= 0 ? o.street_sh_degree : static_cast<int>(rng() % 4);
    const int n_basis = sh_coeff_count(model.street.sh_degree);
    GaussianSet& st = model.street.params;
    st = GaussianSet(static_cast<size_t>(o.street), n_basis * 3, o.num_classes);
    for (size_t i = 0; i < st.count; ++i) {
        st.set_position(i, random_view_point(rng, camera, o));
        randomize_common(rng, st, i, o);
        for (int b = 0; b < n_basis; ++b) {
            for (int c = 0; c < 3; ++c) {
                st.appearance[i * st.appearance_stride + static_cast<size_t>(b * 3 + c)] =
                    b == 0 ? (uniform(rng, 0.1, 0.9) - 0.5) / kShC0 : 0.1 * normal(rng);
            }
        }
    }

    const uint32_t frames = static_cast<uint32_t>(std::max(o.frame_count, static_cast<int>(frame) + 1));
    for (int vi = 0; vi < o.vehicles; ++vi) {
        VehicleModel v;
        v.id = vi;
        v.sh_degree = o.vehicle_sh_degree;
        v.fourier_k = o.fourier_k;
        v.vehicle_class = o.num_classes - 1;
        v.frame_count = frames;
        const Vec3 anchor = random_view_point(rng, camera, o);
        for (uint32_t f = 0; f < frames; ++f) {
            v.frames.push_back(f);
            const UnitQuaternion yaw = UnitQuaternion::from_axis_angle(Vec3::UnitZ(), uniform(rng, -M_PI, M_PI));
            v.base_poses.push_back({yaw, anchor + uniform_vec(rng, -0.3, 0.3)});
            for (int c = 0; c < 3; ++c) {
                v.delta_rotation.push_back(uniform(rng, -0.05, 0.05));
                v.delta_translation.push_back(uniform(rng, -0.1, 0.1));
            }
        }
        const int vb = sh_coeff_count(v.sh_degree);
        const int stride = vb * 3 * v.fourier_k;
        v.params = GaussianSet(static_cast<size_t>(o.per_vehicle), stride, 1);
        for (size_t i = 0; i < v.params.count; ++i) {
            v.params.set_position(i, uniform_vec(rng, -0.8, 0.8));
            randomize_common(rng, v.params, i, o);
            for (int b = 0; b < vb; ++b) {
                for (int c = 0; c < 3; ++c) {
                    for (int j = 0; j < v.fourier_k; ++j) {
                        double value = 0.05 * normal(rng);
                        if (b == 0 && j == 0) {
                            value = (uniform(rng, 0.1, 0.9) - 0.5) / kShC0;
                        } else if (b == 0) {
                            value = 0.2 * normal(rng);
                        }
                        v.params.appearance[i * static_cast<size_t>(stride) +
                                            static_cast<size_t>((b * 3 + c) * v.fourier_k + j)] = value;
                    }
                }
            }
        }
        model.vehicles.push_back(std::move(v));
    }
    return model;
}

double max_abs_diff(const Image& a, const Image& b) {
    if (!a.same_shape(b)) {
        return std::numeric_limits<double>::infinity();
    }
    double m = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        m = std::max(m, std::abs(a.data[i] - b.data[i]));
    }
    return m;
}

// ---------------------------------------------------------------------------

std::string grad_class_name(GradClass c) {
    switch (c) {
        case GradClass::Position: return "position";
        case GradClass::Rotation: return "rotation";
        case GradClass::Scale: return "scale";
        case GradClass::Opacity: return "opacity";
        case GradClass::Sh: return "sh";
        case GradClass::Fourier: return "fourier";
        case GradClass::DeltaRotation: return "delta_rotation";
        case GradClass::DeltaTranslation: return "delta_translation";
    }
    return "?";
}

namespace {

/// A scalar slot in the model together with its analytic gradient.
struct ParamRef {
    double* value = nullptr;
    double analytic = 0.0;
};

double objective(const SceneModel& model, uint32_t frame, const Camera& camera, const RenderSettings& settings,
                 const Image& weights) {
    const Image rgb = render(assemble(model, frame), camera, settings).rgb;
    double sum = 0.0;
    for (size_t i = 0; i < rgb.data.size(); ++i) {
        sum += weights.data[i] * rgb.data[i];
    }
    return sum;
}

template <typename T>
const T& pick(Rng& rng, const std::vector<T>& v) {
    return v[static_cast<size_t>(rng() % v.size())];
}

}  // namespace

std::vector<GradSample> gradient_check(const SceneModel& model_in, uint32_t frame, const Camera& camera,
                                       const RenderSettings& settings, Rng& rng, const GradCheckOptions& options) {
    SceneModel model = model_in;
    Image weights(camera.width, camera.height, 3);
    for (double& w : weights.data) {
        w = uniform(rng, -1.0, 1.0);
    }
    const AssembledScene scene = assemble(model, frame);
    const BackwardResult bw = backward(model, scene, camera, settings, weights);

    std::vector<GaussianOrigin> street_vis, vehicle_vis;
    for (size_t i = 0; i < scene.count; ++i) {
        if (bw.visible[i]) {
            (scene.origins[i].model < 0 ? street_vis : vehicle_vis).push_back(scene.origins[i]);
        }
    }
    std::vector<size_t> active_vehicles;
    for (size_t v = 0; v < model.vehicles.size(); ++v) {
        if (model.vehicles[v].slot_of(frame)) {
            active_vehicles.push_back(v);
        }
    }

    auto group_ref = [&](const GaussianOrigin& o, ParamGroup g) {
        GaussianSet& p = o.model < 0 ? model.street.params : model.vehicles[static_cast<size_t>(o.model)].params;
        const GaussianSet& gp =
            o.model < 0 ? bw.params.street : bw.params.vehicles[static_cast<size_t>(o.model)].params;
        const auto stride = static_cast<size_t>(p.stride(g));
        const size_t idx = o.local * stride + static_cast<size_t>(rng() % stride);
        return ParamRef{&p.array(g)[idx], gp.array(g)[idx]};
    };

    std::vector<GradSample> out;
    for (GradClass cls : kGradClasses) {
        for (int s = 0; s < options.samples_per_class; ++s) {
            ParamRef ref;
            std::vector<GaussianOrigin> any_vis = street_vis;
            any_vis.insert(any_vis.end(), vehicle_vis.begin(), vehicle_vis.end());
            switch (cls) {
                case GradClass::Position:
                case GradClass::Rotation:
                case GradClass::Scale:
                case GradClass::Opacity: {
                    if (any_vis.empty()) {
                        continue;
                    }
                    const ParamGroup g = cls == GradClass::Position   ? ParamGroup::Position
                                         : cls == GradClass::Rotation ? ParamGroup::Rotation
                                         : cls == GradClass::Scale    ? ParamGroup::Scale
                                                                      : ParamGroup::Opacity;
                    ref = group_ref(pick(rng, any_vis), g);
                    break;
                }
                case GradClass::Sh:
                    if (street_vis.empty()) {
                        continue;
                    }
                    ref = group_ref(pick(rng, street_vis), ParamGroup::Appearance);
                    break;
                case GradClass::Fourier:
                    if (vehicle_vis.empty()) {
                        continue;
                    }
                    ref = group_ref(pick(rng, vehicle_vis), ParamGroup::Appearance);
                    break;
                case GradClass::DeltaRotation:
                case GradClass::DeltaTranslation: {
                    if (active_vehicles.empty()) {
                        continue;
                    }
                    const size_t v = pick(rng, active_vehicles);
                    const size_t idx = 3 * *model.vehicles[v].slot_of(frame) + rng() % 3;
                    const bool rot = cls == GradClass::DeltaRotation;
                    auto& arr = rot ? model.vehicles[v].delta_rotation : model.vehicles[v].delta_translation;
                    const auto& garr = rot ? bw.params.vehicles[v].delta_rotation : bw.params.vehicles[v].delta_translation;
                    ref = ParamRef{&arr[idx], garr[idx]};
                    break;
                }
            }
            const double base = *ref.value;
            auto eval_at = [&](double offset) {
                *ref.value = base + offset;
                const double l = objective(model, frame, camera, settings, weights);
                *ref.value = base;
                return l;
            };
            const double h = options.h;
            const double c_h = (eval_at(h) - eval_at(-h)) / (2.0 * h);
            const double c_half = (eval_at(0.5 * h) - eval_at(-0.5 * h)) / h;
            GradSample sample;
            sample.cls = cls;
            sample.analytic = ref.analytic;
            sample.numeric = c_h;
            const double scale = std::max({std::abs(c_h), std::abs(ref.analytic), options.abs_floor});
            sample.rel_error = std::abs(ref.analytic - c_h) / scale;
            // smooth objectives give central differences that agree to O(h^2);
            // a decision flip inside [-h, h] shifts one of them by the jump / h
            sample.near_boundary = std::abs(c_h - c_half) > 0.2 * options.tolerance * scale;
            out.push_back(sample);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

OccupancyGrid random_grid(Rng& rng, const std::array<uint32_t, 3>& dims, uint32_t num_classes, double occupied_fraction,
                          uint32_t frame) {
    GridGeometry g;
    g.dims = dims;
    g.origin = uniform_vec(rng, -5.0, 5.0);
    g.cell_size = uniform(rng, 0.1, 0.5);
    OccupancyGrid grid(g, num_classes, frame);
    std::vector<float> w(num_classes);
    for (size_t c = 0; c < g.cell_count(); ++c) {
        const double u = uniform(rng, 0.0, 1.0);
        grid.occupancy[c] = static_cast<float>(u < occupied_fraction ? uniform(rng, 0.5, 1.0) : uniform(rng, 0.0, 0.5));
        if (rng() % 50 == 0) {
            grid.occupancy[c] = 0.5f;  // exactly at the default threshold
        }
        float sum = 0.0f;
        const bool tie = rng() % 20 == 0;
        for (uint32_t k = 0; k < num_classes; ++k) {
            w[k] = tie ? 1.0f : static_cast<float>(uniform(rng, 0.01, 1.0));
            sum += w[k];
        }
        for (uint32_t k = 0; k < num_classes; ++k) {
            grid.class_probs[c * num_classes + k] = w[k] / sum;
        }
    }
    return grid;
}

std::vector<int> brute_components(const GridGeometry& g, const std::vector<uint8_t>& member) {
    const size_t n = g.cell_count();
    std::vector<size_t> parent(n);
    std::iota(parent.begin(), parent.end(), size_t{0});
    auto find = [&](size_t x) {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    };
    for (size_t a = 0; a < n; ++a) {
        if (!member[a]) {
            continue;
        }
        const CellIndex ca = g.unravel(a);
        for (int dk = -1; dk <= 1; ++dk) {
            for (int dj = -1; dj <= 1; ++dj) {
                for (int di = -1; di <= 1; ++di) {
                    const long i = static_cast<long>(ca.i) + di, j = static_cast<long>(ca.j) + dj,
                               k = static_cast<long>(ca.k) + dk;
                    if (i < 0 || j < 0 || k < 0 || i >= g.dims[0] || j >= g.dims[1] || k >= g.dims[2]) {
                        continue;
                    }
                    const size_t b = g.linear({static_cast<uint32_t>(i), static_cast<uint32_t>(j), static_cast<uint32_t>(k)});
                    if (member[b]) {
                        const size_t ra = find(a), rb = find(b);
                        parent[std::max(ra, rb)] = std::min(ra, rb);
                    }
                }
            }
        }
    }
    std::vector<int> id(n, -1);
    std::vector<int> root_id(n, -1);
    int next = 0;
    for (size_t a = 0; a < n; ++a) {
        if (!member[a]) {
            continue;
        }
        const size_t r = find(a);
        if (root_id[r] < 0) {
            root_id[r] = next++;
        }
        id[a] = root_id[r];
    }
    return id;
}

}  // namespace ogs::testing
