#include "ogs/harness.hpp"

#include "ogs/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

namespace ogs {

using nlohmann::json;

namespace {

void check_same_shape(const Image& x, const Image& y, const char* what) {
    if (!x.same_shape(y)) {
        throw ValidationError(std::string(what) + ": image shapes differ");
    }
}

double psnr_from_mse(double m) { return m > 0.0 ? 10.0 * std::log10(1.0 / m) : kPsnrSentinel; }

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

Vec3 vec3_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }
json vec3_to(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

// Orientation whose local z axis is `normal`.
UnitQuaternion facing(const Vec3& normal) {
    const Vec3 n = normal.normalized();
    const Vec3 helper = std::abs(n.z()) < 0.9 ? Vec3::UnitZ() : Vec3::UnitX();
    const Vec3 t1 = helper.cross(n).normalized();
    const Vec3 t2 = n.cross(t1);
    Mat3 r;
    r.col(0) = t1;
    r.col(1) = t2;
    r.col(2) = n;
    return rotmat_to_quat(r);
}

void set_gaussian(GaussianSet& g, size_t i, const Vec3& pos, const UnitQuaternion& q, const Vec3& scale,
                  double opacity) {
    g.set_position(i, pos);
    g.set_rotation(i, q.as_vector());
    g.set_log_scale(i, scale.array().log());
    g.opacity_logits[i] = logit(opacity);
}

Camera synth_camera(const SynthConfig& c, const Vec3& center) {
    const double pitch = c.camera_pitch_deg * std::numbers::pi / 180.0;
    const double cp = std::cos(pitch), sp = std::sin(pitch);
    // camera axes in world coordinates: x right, y down, z forward
    Mat3 r_cw;
    r_cw.row(0) = Vec3(0.0, -1.0, 0.0);
    r_cw.row(1) = Vec3(-sp, 0.0, -cp);
    r_cw.row(2) = Vec3(cp, 0.0, -sp);
    Camera cam;
    cam.fx = cam.fy = c.focal;
    cam.cx = 0.5 * (c.width - 1);
    cam.cy = 0.5 * (c.height - 1);
    cam.width = c.width;
    cam.height = c.height;
    cam.near = 0.1;
    cam.far = 500.0;
    cam.world_to_camera.rotation = rotmat_to_quat(r_cw);
    cam.world_to_camera.translation = -(r_cw * center);
    return cam;
}

Vec3 ground_color(double x, double y, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> jitter(-0.03, 0.03);
    Vec3 c;
    if (std::abs(y) < 5.0) {
        c = Vec3(0.32, 0.32, 0.34);
        const bool stripe = std::abs(y) < 0.3 && std::fmod(x + 100.0, 4.0) < 2.0;
        if (stripe) {
            c = Vec3(0.92, 0.9, 0.8);
        }
        c += Vec3::Constant(0.06 * std::sin(0.7 * x) * std::cos(0.9 * y));
    } else {
        c = Vec3(0.62, 0.58, 0.5) + Vec3::Constant(0.05 * std::sin(1.3 * x));
    }
    return (c + Vec3::Constant(jitter(rng))).cwiseMax(0.0).cwiseMin(1.0);
}

Vec3 building_color(double x, double z, bool left, std::mt19937_64& rng) {
    static const Vec3 facades[] = {{0.75, 0.55, 0.45}, {0.55, 0.6, 0.65}, {0.8, 0.75, 0.6}, {0.5, 0.45, 0.5}};
    std::uniform_real_distribution<double> jitter(-0.03, 0.03);
    const int block = static_cast<int>(std::floor((x + 100.0) / 8.0)) + (left ? 1 : 0);
    Vec3 c = facades[block % 4];
    const double wx = std::fmod(x + 100.0, 3.0);
    const double wz = std::fmod(z, 2.0);
    if (z > 1.0 && wx > 1.0 && wx < 2.2 && wz > 0.6 && wz < 1.6) {
        c = Vec3(0.2, 0.28, 0.38);
    }
    return (c + Vec3::Constant(jitter(rng))).cwiseMax(0.0).cwiseMin(1.0);
}

struct Surfel {
    Vec3 position;
    Vec3 normal;
    Vec3 color;
};

std::vector<Surfel> vehicle_surfels(const SynthVehicle& v, std::mt19937_64& rng) {
    const Vec3 h = 0.5 * v.size;
    struct Face {
        Vec3 normal;
        int u, w;  // in-plane axes
        double area;
    };
    std::vector<Face> faces;
    for (int axis = 0; axis < 3; ++axis) {
        const int u = (axis + 1) % 3, w = (axis + 2) % 3;
        const double area = v.size[u] * v.size[w];
        for (double sign : {1.0, -1.0}) {
            Vec3 n = Vec3::Zero();
            n[axis] = sign;
            faces.push_back({n, u, w, area});
        }
    }
    double total = 0.0;
    for (const auto& f : faces) total += f.area;
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::uniform_real_distribution<double> jitter(-0.03, 0.03);
    std::vector<Surfel> out;
    int placed = 0;
    for (size_t fi = 0; fi < faces.size(); ++fi) {
        const Face& f = faces[fi];
        int n = static_cast<int>(std::lround(v.gaussians * f.area / total));
        if (fi + 1 == faces.size()) {
            n = std::max(v.gaussians - placed, 0);
        }
        placed += n;
        for (int k = 0; k < n; ++k) {
            Vec3 p = Vec3::Zero();
            const int axis = f.normal.x() != 0.0 ? 0 : (f.normal.y() != 0.0 ? 1 : 2);
            p[axis] = f.normal[axis] * h[axis];
            p[f.u] = unit(rng) * h[f.u];
            p[f.w] = unit(rng) * h[f.w];
            Vec3 c = v.color;
            if (axis == 2) {
                c = f.normal.z() > 0.0 ? 0.85 * v.color : Vec3(0.08, 0.08, 0.08);
            } else if (p.z() > h.z() - 0.65 && p.z() < h.z() - 0.1) {
                c = Vec3(0.15, 0.18, 0.24);
            }
            c += Vec3::Constant(jitter(rng));
            out.push_back({p, f.normal, c.cwiseMax(0.0).cwiseMin(1.0)});
        }
    }
    return out;
}

GridGeometry synth_grid_geometry(const SynthConfig& c) {
    GridGeometry g;
    g.cell_size = c.cell_size;
    g.origin = Vec3(c.road_x_min - 2.0, -(c.building_offset + 1.25), -0.5 * c.cell_size);
    const Vec3 upper(c.road_x_max + 2.0, c.building_offset + 1.25, c.building_height + 1.0);
    for (int a = 0; a < 3; ++a) {
        g.dims[a] = static_cast<uint32_t>(std::ceil((upper[a] - g.origin[a]) / c.cell_size - 1e-9));
    }
    return g;
}

std::optional<size_t> cell_of(const GridGeometry& g, const Vec3& p) {
    const Vec3 f = (p - g.origin) / g.cell_size;
    std::array<uint32_t, 3> idx{};
    for (int a = 0; a < 3; ++a) {
        const double v = std::floor(f[a]);
        if (!(v >= 0.0 && v < g.dims[a])) {
            return std::nullopt;
        }
        idx[a] = static_cast<uint32_t>(v);
    }
    return g.linear({idx[0], idx[1], idx[2]});
}

std::vector<Vec3> world_centers(const SceneModel& model, uint32_t frame, bool street, bool moving_only,
                                const std::vector<VehicleTruth>* truth) {
    std::vector<Vec3> out;
    if (street) {
        for (size_t i = 0; i < model.street.params.count; ++i) {
            out.push_back(model.street.params.position(i));
        }
    }
    for (size_t v = 0; v < model.vehicles.size(); ++v) {
        if (moving_only && truth != nullptr && !(*truth)[v].dynamic) {
            continue;
        }
        const VehicleModel& vm = model.vehicles[v];
        const auto slot = vm.slot_of(frame);
        if (!slot) {
            continue;
        }
        const Pose pose = vm.posed(*slot);
        for (size_t i = 0; i < vm.params.count; ++i) {
            out.push_back(pose.apply(vm.params.position(i)));
        }
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Metrics

double mse(const Image& x, const Image& y) {
    check_same_shape(x, y, "mse");
    if (x.data.empty()) {
        throw ValidationError("mse: empty images");
    }
    double s = 0.0;
    for (size_t i = 0; i < x.data.size(); ++i) {
        const double d = x.data[i] - y.data[i];
        s += d * d;
    }
    return s / static_cast<double>(x.data.size());
}

double psnr(const Image& x, const Image& y) { return psnr_from_mse(mse(x, y)); }

MaskedPsnr psnr_dym(const Image& rendered, const Image& target, const Image& mask) {
    check_same_shape(rendered, target, "psnr_dym");
    if (mask.width != rendered.width || mask.height != rendered.height || mask.channels != 1) {
        throw ValidationError("psnr_dym: mask must be single-channel with the image size");
    }
    MaskedPsnr out;
    double s = 0.0;
    for (int y = 0; y < rendered.height; ++y) {
        for (int x = 0; x < rendered.width; ++x) {
            if (!(mask.at(x, y) > 0.5)) {
                continue;
            }
            ++out.pixels;
            for (int c = 0; c < rendered.channels; ++c) {
                const double d = rendered.at(x, y, c) - target.at(x, y, c);
                s += d * d;
            }
        }
    }
    if (out.pixels == 0) {
        out.empty_mask = true;
        out.value = std::numeric_limits<double>::quiet_NaN();
        return out;
    }
    out.value = psnr_from_mse(s / (static_cast<double>(out.pixels) * rendered.channels));
    return out;
}

void EvalReport::add(FrameEval frame) { frames.push_back(std::move(frame)); }

void EvalReport::finalize() {
    psnr = ssim = 0.0;
    psnr_dym.reset();
    empty_masks = 0;
    if (frames.empty()) {
        return;
    }
    double dym = 0.0;
    size_t dym_n = 0;
    for (const auto& f : frames) {
        psnr += f.psnr;
        ssim += f.ssim;
        if (f.psnr_dym) {
            if (f.psnr_dym->empty_mask) {
                ++empty_masks;
            } else {
                dym += f.psnr_dym->value;
                ++dym_n;
            }
        }
    }
    psnr /= static_cast<double>(frames.size());
    ssim /= static_cast<double>(frames.size());
    if (dym_n > 0) {
        psnr_dym = dym / static_cast<double>(dym_n);
    }
}

std::string EvalReport::to_json() const {
    json j;
    j["format"] = "ogs-eval-1";
    j["psnr"] = psnr;
    j["ssim"] = ssim;
    j["psnr_dym"] = psnr_dym ? json(*psnr_dym) : json(nullptr);
    j["empty_masks"] = empty_masks;
    j["psnr_sentinel"] = kPsnrSentinel;
    j["frames"] = json::array();
    for (const auto& f : frames) {
        json jf = {{"name", f.name}, {"psnr", f.psnr}, {"ssim", f.ssim}};
        if (f.psnr_dym) {
            jf["psnr_dym"] = number_or_null(f.psnr_dym->value);
            jf["mask_pixels"] = f.psnr_dym->pixels;
            if (f.psnr_dym->empty_mask) {
                jf["flags"] = json::array({"empty_mask"});
            }
        }
        j["frames"].push_back(jf);
    }
    j["errors"] = errors;
    return j.dump(2) + "\n";
}

std::string EvalReport::to_csv() const {
    std::ostringstream os;
    os.precision(10);
    os << "name,psnr,ssim,psnr_dym,mask_pixels,flags\n";
    for (const auto& f : frames) {
        os << f.name << ',' << f.psnr << ',' << f.ssim << ',';
        if (f.psnr_dym && !f.psnr_dym->empty_mask) {
            os << f.psnr_dym->value;
        }
        os << ',' << (f.psnr_dym ? f.psnr_dym->pixels : 0) << ',';
        if (f.psnr_dym && f.psnr_dym->empty_mask) {
            os << "empty_mask";
        }
        os << '\n';
    }
    os << "mean," << psnr << ',' << ssim << ',';
    if (psnr_dym) {
        os << *psnr_dym;
    }
    os << ",,\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// Oracle renderer

RenderOutput reference_render(const AssembledScene& scene, const Camera& camera, const RenderSettings& settings) {
    camera.validate();
    const Mat4 w = camera.world_to_camera.matrix();
    const Mat3 w_rot = w.topLeftCorner<3, 3>();
    const Vec3 center = w.inverse().topRightCorner<3, 1>();
    const Mat3 k = camera.intrinsics();

    struct RefSplat {
        Vec2 mean;
        Mat2 conic;
        double depth;
        Vec3 color;
        double opacity;
        size_t index;
    };
    std::vector<RefSplat> splats;
    for (size_t i = 0; i < scene.count; ++i) {
        const Vec4 ph = w * scene.positions[i].homogeneous();
        const Vec3 t = ph.head<3>() / ph.w();
        if (!(t.z() >= camera.near && t.z() <= camera.far)) {
            continue;
        }
        const Vec3 p = k * t;
        // Jacobian taken at the view ray clamped to 1.3x the image bounds
        const double u_lo = -1.3 * (camera.cx + 0.5), u_hi = 1.3 * (camera.width - 0.5 - camera.cx);
        const double v_lo = -1.3 * (camera.cy + 0.5), v_hi = 1.3 * (camera.height - 0.5 - camera.cy);
        const double u = std::clamp(camera.fx * t.x() / t.z(), u_lo, u_hi);
        const double v = std::clamp(camera.fy * t.y() / t.z(), v_lo, v_hi);
        Eigen::Matrix<double, 2, 3> j;
        j << camera.fx / t.z(), 0.0, -u / t.z(),  //
            0.0, camera.fy / t.z(), -v / t.z();
        Mat2 cov = j * w_rot * scene.covariances[i] * w_rot.transpose() * j.transpose();
        cov += settings.low_pass * Mat2::Identity();
        ShCoefficients sh(scene.sh_degrees[i]);
        const auto z = scene.sh_of(i);
        for (int b = 0; b < sh_coeff_count(sh.degree); ++b) {
            sh.coeffs[static_cast<size_t>(b)] = Vec3(z[b * 3], z[b * 3 + 1], z[b * 3 + 2]);
        }
        const Vec3 dir = (scene.positions[i] - center).normalized();
        const Vec3 color = (eval_sh(sh, dir) + Vec3::Constant(0.5)).cwiseMax(0.0).cwiseMin(1.0);
        splats.push_back({Vec2(p.x() / p.z(), p.y() / p.z()), cov.inverse(), t.z(), color, scene.opacities[i], i});
    }
    std::sort(splats.begin(), splats.end(), [](const RefSplat& a, const RefSplat& b) {
        return a.depth != b.depth ? a.depth < b.depth : a.index < b.index;
    });

    RenderOutput out;
    out.rgb = Image(camera.width, camera.height, 3);
    out.depth = Image(camera.width, camera.height, 1);
    out.transmittance = Image(camera.width, camera.height, 1);
    parallel_for(static_cast<size_t>(camera.height), settings.threads, [&](size_t row) {
        const int py = static_cast<int>(row);
        for (int px = 0; px < camera.width; ++px) {
            const Vec2 pixel(px, py);
            Vec3 color = Vec3::Zero();
            double depth = 0.0;
            double t = 1.0;
            for (const RefSplat& s : splats) {
                const Vec2 d = pixel - s.mean;
                const double power = -0.5 * d.dot(s.conic * d);
                const double alpha = std::min(settings.alpha_cap, s.opacity * std::exp(power));
                if (alpha < settings.alpha_min) {
                    continue;
                }
                color += alpha * t * s.color;
                depth += alpha * t * s.depth;
                t *= 1.0 - alpha;
            }
            color += t * settings.background;
            for (int c = 0; c < 3; ++c) {
                out.rgb.at(px, py, c) = color[c];
            }
            out.depth.at(px, py) = depth;
            out.transmittance.at(px, py) = t;
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic scenes

Pose SynthVehicle::pose_at(double t) const {
    const double yaw = heading + yaw_rate * t;
    Vec3 c = start;
    if (yaw_rate == 0.0) {
        c += speed * t * Vec3(std::cos(heading), std::sin(heading), 0.0);
    } else {
        const double r = speed / yaw_rate;
        c += r * Vec3(std::sin(yaw) - std::sin(heading), std::cos(heading) - std::cos(yaw), 0.0);
    }
    return {axis_angle_to_quat(Vec3(0.0, 0.0, yaw)), c};
}

std::vector<SynthVehicle> SynthConfig::default_vehicles() {
    SynthVehicle a;
    a.start = {12.0, -3.0, 1.05};
    a.speed = 0.8;
    a.color = {0.8, 0.15, 0.1};
    SynthVehicle b;
    b.start = {26.0, 3.0, 1.05};
    b.heading = std::numbers::pi;
    b.speed = 0.6;
    b.color = {0.1, 0.3, 0.8};
    SynthVehicle c;
    c.start = {22.0, 6.5, 1.05};
    c.color = {0.9, 0.8, 0.2};
    return {a, b, c};
}

void SynthConfig::validate() const {
    if (frames < 1 || width < 11 || height < 11 || !(focal > 0.0)) {
        throw ValidationError("synth: frames must be >= 1, images at least 11x11, focal positive");
    }
    if (!(cell_size > 0.0) || !(ground_spacing > 0.0) || !(road_x_max > road_x_min) || !(building_height > 0.0) ||
        !(ground_half_width > 0.0) || !(building_offset > ground_half_width)) {
        throw ValidationError("synth: invalid extent");
    }
    if (!(vehicle_grid_noise >= 0.0) || threads < 1) {
        throw ValidationError("synth: invalid noise or thread count");
    }
    for (const auto& v : vehicles) {
        if (v.gaussians < 1 || !(v.size.minCoeff() > 0.0)) {
            throw ValidationError("synth: vehicles need a positive size and at least one Gaussian");
        }
    }
}

void apply_synth_config(const json& j, SynthConfig& c) {
    try {
        for (const auto& [name, v] : j.items()) {
            if (name == "seed") c.seed = v.get<uint64_t>();
            else if (name == "frames") c.frames = v.get<uint32_t>();
            else if (name == "width") c.width = v.get<int>();
            else if (name == "height") c.height = v.get<int>();
            else if (name == "focal") c.focal = v.get<double>();
            else if (name == "ego_speed") c.ego_speed = v.get<double>();
            else if (name == "camera_height") c.camera_height = v.get<double>();
            else if (name == "camera_pitch_deg") c.camera_pitch_deg = v.get<double>();
            else if (name == "camera_baseline") c.camera_baseline = v.get<double>();
            else if (name == "road_x_min") c.road_x_min = v.get<double>();
            else if (name == "road_x_max") c.road_x_max = v.get<double>();
            else if (name == "ground_half_width") c.ground_half_width = v.get<double>();
            else if (name == "ground_spacing") c.ground_spacing = v.get<double>();
            else if (name == "building_offset") c.building_offset = v.get<double>();
            else if (name == "building_height") c.building_height = v.get<double>();
            else if (name == "cell_size") c.cell_size = v.get<double>();
            else if (name == "vehicle_grid_noise") c.vehicle_grid_noise = v.get<double>();
            else if (name == "background") c.background = vec3_from(v);
            else if (name == "threads") c.threads = v.get<int>();
            else if (name == "vehicles") {
                c.vehicles.clear();
                for (const auto& jv : v) {
                    SynthVehicle sv;
                    sv.start = vec3_from(jv.at("start"));
                    sv.heading = jv.value("heading", 0.0);
                    sv.speed = jv.value("speed", 0.0);
                    sv.yaw_rate = jv.value("yaw_rate", 0.0);
                    if (jv.contains("size")) sv.size = vec3_from(jv.at("size"));
                    sv.gaussians = jv.value("gaussians", sv.gaussians);
                    if (jv.contains("color")) sv.color = vec3_from(jv.at("color"));
                    c.vehicles.push_back(sv);
                }
            } else {
                throw ValidationError("synth config: unknown key '" + name + "'");
            }
        }
    } catch (const json::exception& e) {
        throw ValidationError(std::string("synth config: ") + e.what());
    }
}

json synth_config_to_json(const SynthConfig& c) {
    json vehicles = json::array();
    for (const auto& v : c.vehicles) {
        vehicles.push_back({{"start", vec3_to(v.start)},
                            {"heading", v.heading},
                            {"speed", v.speed},
                            {"yaw_rate", v.yaw_rate},
                            {"size", vec3_to(v.size)},
                            {"gaussians", v.gaussians},
                            {"color", vec3_to(v.color)}});
    }
    return {{"seed", c.seed},
            {"frames", c.frames},
            {"width", c.width},
            {"height", c.height},
            {"focal", c.focal},
            {"ego_speed", c.ego_speed},
            {"camera_height", c.camera_height},
            {"camera_pitch_deg", c.camera_pitch_deg},
            {"camera_baseline", c.camera_baseline},
            {"road_x_min", c.road_x_min},
            {"road_x_max", c.road_x_max},
            {"ground_half_width", c.ground_half_width},
            {"ground_spacing", c.ground_spacing},
            {"building_offset", c.building_offset},
            {"building_height", c.building_height},
            {"cell_size", c.cell_size},
            {"vehicle_grid_noise", c.vehicle_grid_noise},
            {"background", vec3_to(c.background)},
            {"threads", c.threads},
            {"vehicles", vehicles}};
}

std::vector<Vec3> VehicleTruth::centers() const {
    std::vector<Vec3> out;
    for (const Pose& p : poses) {
        out.push_back(p.translation);
    }
    return out;
}

std::vector<Vec3> SyntheticScene::truth_centers(uint32_t frame) const {
    return world_centers(truth, frame, true, false, nullptr);
}

SyntheticScene make_synthetic(const SynthConfig& config) {
    config.validate();
    SyntheticScene s;
    s.config = config;
    s.classes = {"unlabeled", "road", "building", "vehicle"};
    s.vehicle_classes = {kSynthVehicle};
    const int n_classes = static_cast<int>(s.classes.size());
    std::mt19937_64 rng(config.seed);

    // street: ground plane and two building slabs
    struct StreetItem {
        Vec3 pos;
        UnitQuaternion q;
        Vec3 scale;
        Vec3 color;
        int label;
    };
    std::vector<StreetItem> street;
    const double sp = config.ground_spacing;
    const double flat = 0.02;
    const int nx = static_cast<int>(std::floor((config.road_x_max - config.road_x_min) / sp + 1e-9));
    const int ny = static_cast<int>(std::floor(2.0 * config.ground_half_width / sp + 1e-9));
    for (int i = 0; i < nx; ++i) {
        const double x = config.road_x_min + (i + 0.5) * sp;
        for (int j = 0; j < ny; ++j) {
            const double y = -config.ground_half_width + (j + 0.5) * sp;
            street.push_back({Vec3(x, y, 0.0), UnitQuaternion::identity(), Vec3(0.6 * sp, 0.6 * sp, flat),
                              ground_color(x, y, rng), kSynthRoad});
        }
    }
    const int nz = static_cast<int>(std::floor(config.building_height / sp + 1e-9));
    const UnitQuaternion wall = axis_angle_to_quat(Vec3(0.5 * std::numbers::pi, 0.0, 0.0));
    for (int side = 0; side < 2; ++side) {
        const double y = side == 0 ? config.building_offset : -config.building_offset;
        for (int i = 0; i < nx; ++i) {
            const double x = config.road_x_min + (i + 0.5) * sp;
            for (int k = 1; k <= nz; ++k) {
                const double z = k * sp;
                street.push_back({Vec3(x, y, z), wall, Vec3(0.6 * sp, 0.6 * sp, flat),
                                  building_color(x, z, side == 0, rng), kSynthBuilding});
            }
        }
    }

    SceneModel& truth = s.truth;
    truth.num_classes = n_classes;
    truth.background = config.background;
    truth.street.sh_degree = 0;
    truth.street.num_classes = n_classes;
    truth.street.params = GaussianSet(street.size(), 3, n_classes);
    for (size_t i = 0; i < street.size(); ++i) {
        const StreetItem& it = street[i];
        set_gaussian(truth.street.params, i, it.pos, it.q, it.scale, 0.95);
        for (int c = 0; c < 3; ++c) {
            truth.street.params.appearance[i * 3 + c] = (it.color[c] - 0.5) / kShC0;
        }
        truth.street.params.semantics[i * n_classes + it.label] = 4.0;
    }

    for (size_t v = 0; v < config.vehicles.size(); ++v) {
        const SynthVehicle& sv = config.vehicles[v];
        const std::vector<Surfel> surfels = vehicle_surfels(sv, rng);
        VehicleModel vm;
        vm.id = static_cast<int>(v);
        vm.sh_degree = 0;
        vm.fourier_k = 1;
        vm.vehicle_class = kSynthVehicle;
        vm.frame_count = config.frames;
        vm.params = GaussianSet(surfels.size(), 3, 1);
        for (size_t i = 0; i < surfels.size(); ++i) {
            set_gaussian(vm.params, i, surfels[i].position, facing(surfels[i].normal), Vec3(0.22, 0.22, 0.03), 0.95);
            for (int c = 0; c < 3; ++c) {
                vm.params.appearance[i * 3 + c] = (surfels[i].color[c] - 0.5) / kShC0;
            }
            vm.params.semantics[i] = 4.0;
        }
        VehicleTruth vt;
        vt.id = vm.id;
        vt.dynamic = sv.moving();
        for (uint32_t f = 0; f < config.frames; ++f) {
            vm.frames.push_back(f);
            vt.poses.push_back(sv.pose_at(f));
            vm.base_poses.push_back(vt.poses.back());
            for (int a = 0; a < 3; ++a) {
                vm.delta_rotation.push_back(0.0);
                vm.delta_translation.push_back(0.0);
            }
        }
        truth.vehicles.push_back(std::move(vm));
        s.vehicles.push_back(std::move(vt));
    }

    // cameras: two training cameras and a held-out center camera per frame
    const int holdout_id = 2;
    s.holdout_cameras = {holdout_id};
    for (uint32_t f = 0; f < config.frames; ++f) {
        const double x = config.ego_speed * f;
        const double ys[] = {0.5 * config.camera_baseline, -0.5 * config.camera_baseline, 0.0};
        for (int cam = 0; cam < 3; ++cam) {
            CameraEntry e;
            e.frame = f;
            e.camera_id = cam;
            e.camera = synth_camera(config, Vec3(x, ys[cam], config.camera_height));
            e.image = image_name(cam, f);
            s.cameras.entries.push_back(std::move(e));
        }
    }

    // ground-truth images and moving-vehicle masks
    RenderSettings settings;
    settings.background = config.background;
    SceneModel movers = truth;
    movers.street.params = GaussianSet(0, 3, n_classes);
    movers.vehicles.clear();
    for (size_t v = 0; v < truth.vehicles.size(); ++v) {
        if (s.vehicles[v].dynamic) {
            movers.vehicles.push_back(truth.vehicles[v]);
        }
    }
    s.images.resize(s.cameras.entries.size());
    s.masks.resize(s.cameras.entries.size());
    parallel_for(s.cameras.entries.size(), config.threads, [&](size_t i) {
        const CameraEntry& e = s.cameras.entries[i];
        s.images[i] = reference_render(assemble(truth, e.frame), e.camera, settings).rgb;
        const RenderOutput m = render(assemble(movers, e.frame), e.camera, settings);
        Image mask(e.camera.width, e.camera.height, 1);
        for (size_t p = 0; p < mask.data.size(); ++p) {
            mask.data[p] = m.transmittance.data[p] <= 0.5 ? 1.0 : 0.0;
        }
        s.masks[i] = std::move(mask);
    });

    // occupancy grids rasterized from the ground-truth centers
    const GridGeometry geometry = synth_grid_geometry(config);
    std::vector<int> street_label(geometry.cell_count(), -1);
    for (const StreetItem& it : street) {
        if (const auto cell = cell_of(geometry, it.pos)) {
            street_label[*cell] = it.label;
        }
    }
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (uint32_t f = 0; f < config.frames; ++f) {
        std::vector<int> label = street_label;
        for (size_t v = 0; v < truth.vehicles.size(); ++v) {
            Vec3 noise = Vec3::Zero();
            if (s.vehicles[v].dynamic && config.vehicle_grid_noise > 0.0) {
                const double r = config.vehicle_grid_noise * std::sqrt(unit(rng));
                const double phi = 2.0 * std::numbers::pi * unit(rng);
                noise = Vec3(r * std::cos(phi), r * std::sin(phi), 0.0);
            }
            const VehicleModel& vm = truth.vehicles[v];
            const Pose& pose = vm.base_poses[f];
            for (size_t i = 0; i < vm.params.count; ++i) {
                if (const auto cell = cell_of(geometry, pose.apply(vm.params.position(i)) + noise)) {
                    label[*cell] = kSynthVehicle;
                }
            }
        }
        OccupancyGrid g(geometry, static_cast<uint32_t>(n_classes), f);
        const float other = 0.15f / static_cast<float>(n_classes - 1);
        for (size_t cell = 0; cell < geometry.cell_count(); ++cell) {
            float* probs = g.class_probs.data() + cell * n_classes;
            if (label[cell] < 0) {
                g.occupancy[cell] = 0.02f;
                std::fill(probs, probs + n_classes, 0.0f);
                probs[kSynthUnlabeled] = 1.0f;
            } else {
                g.occupancy[cell] = 0.9f;
                std::fill(probs, probs + n_classes, other);
                probs[label[cell]] = 0.85f;
            }
        }
        s.grids.push_back(std::move(g));
    }
    return s;
}

void write_synthetic(const SyntheticScene& s, const fs::path& dir) {
    fs::create_directories(dir / "grids");
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "masks");
    SceneManifest m;
    for (const OccupancyGrid& g : s.grids) {
        char name[64];
        std::snprintf(name, sizeof name, "grids/frame_%04u.ogg", g.frame_index);
        write_occupancy_grid(dir / name, g);
        m.grids.emplace_back(name);
    }
    for (size_t i = 0; i < s.cameras.entries.size(); ++i) {
        write_png(dir / "images" / s.cameras.entries[i].image, s.images[i]);
        write_png(dir / "masks" / s.cameras.entries[i].image, s.masks[i]);
    }
    write_camera_manifest(dir / "cameras.json", s.cameras);
    m.camera_manifest = "cameras.json";
    m.image_dir = "images";
    m.mask_dir = fs::path("masks");
    m.classes = s.classes;
    m.vehicle_classes = s.vehicle_classes;
    m.unlabeled_class = kSynthUnlabeled;
    m.holdout_cameras = s.holdout_cameras;
    m.background = s.config.background;
    write_scene_manifest(dir / "manifest.json", m);

    json vehicles = json::array();
    for (const VehicleTruth& v : s.vehicles) {
        json poses = json::array();
        for (const Pose& p : v.poses) {
            const UnitQuaternion& q = p.rotation;
            poses.push_back({{"rotation", {q.w, q.x, q.y, q.z}}, {"translation", vec3_to(p.translation)}});
        }
        vehicles.push_back({{"id", v.id}, {"dynamic", v.dynamic}, {"poses", poses}});
    }
    write_text(dir / "ground_truth.json",
               json({{"format", "ogs-groundtruth-1"}, {"synth", synth_config_to_json(s.config)}, {"vehicles", vehicles}})
                       .dump(2) +
                   "\n");
    save_scene(dir / "truth", s.truth);
    write_text(dir / "config.json", json({{"upsample_voxel", 0.5 * s.config.cell_size}}).dump(2) + "\n");
}

std::vector<VehicleTruth> read_ground_truth(const fs::path& path) {
    const json j = read_json(path);
    std::vector<VehicleTruth> out;
    try {
        for (const auto& jv : j.at("vehicles")) {
            VehicleTruth v;
            v.id = jv.at("id").get<int>();
            v.dynamic = jv.at("dynamic").get<bool>();
            for (const auto& jp : jv.at("poses")) {
                const auto& r = jp.at("rotation");
                v.poses.push_back({{r.at(0).get<double>(), r.at(1).get<double>(), r.at(2).get<double>(),
                                    r.at(3).get<double>()},
                                   vec3_from(jp.at("translation"))});
            }
            out.push_back(std::move(v));
        }
    } catch (const json::exception& e) {
        throw ValidationError("ground truth '" + path.string() + "': " + e.what());
    }
    return out;
}

double trajectory_error(const std::vector<Vec3>& recovered, const std::vector<Pose>& truth) {
    if (recovered.size() != truth.size() || recovered.empty()) {
        throw ValidationError("trajectory_error: trajectories must be non-empty and of equal length");
    }
    Vec3 offset = Vec3::Zero();
    for (size_t t = 0; t < truth.size(); ++t) {
        offset += truth[t].rotation_matrix().transpose() * (recovered[t] - truth[t].translation);
    }
    offset /= static_cast<double>(truth.size());
    double sum = 0.0;
    for (size_t t = 0; t < truth.size(); ++t) {
        sum += (recovered[t] - truth[t].apply(offset)).norm();
    }
    return sum / static_cast<double>(truth.size());
}

double vehicle_trajectory_error(const VehicleModel& vehicle, const VehicleTruth& truth) {
    std::vector<Vec3> rec;
    std::vector<Pose> gt;
    for (size_t s = 0; s < vehicle.frames.size(); ++s) {
        const uint32_t f = vehicle.frames[s];
        if (f >= truth.poses.size()) {
            continue;
        }
        rec.push_back(vehicle.posed(s).translation);
        gt.push_back(truth.poses[f]);
    }
    return trajectory_error(rec, gt);
}

std::vector<int> match_vehicles(const SceneModel& model, const std::vector<VehicleTruth>& truth) {
    std::vector<int> out;
    for (const VehicleModel& v : model.vehicles) {
        int best = -1;
        double best_d = std::numeric_limits<double>::infinity();
        for (size_t g = 0; g < truth.size(); ++g) {
            double d = 0.0;
            int n = 0;
            for (size_t s = 0; s < v.frames.size(); ++s) {
                if (v.frames[s] < truth[g].poses.size()) {
                    d += (v.base_poses[s].translation - truth[g].poses[v.frames[s]].translation).norm();
                    ++n;
                }
            }
            if (n > 0 && d / n < best_d) {
                best_d = d / n;
                best = static_cast<int>(g);
            }
        }
        out.push_back(best);
    }
    return out;
}

}  // namespace ogs
