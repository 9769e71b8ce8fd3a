#include "ogs/scene.hpp"

#include "ogs/ply.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_map>

namespace ogs {

using nlohmann::json;

// ---------------------------------------------------------------------------
// GaussianSet

GaussianSet::GaussianSet(size_t n, int appearance_stride_, int semantic_stride_)
    : count(n),
      appearance_stride(appearance_stride_),
      semantic_stride(semantic_stride_),
      positions(3 * n, 0.0),
      rotations(4 * n, 0.0),
      log_scales(3 * n, 0.0),
      opacity_logits(n, 0.0),
      appearance(n * static_cast<size_t>(appearance_stride_), 0.0),
      semantics(n * static_cast<size_t>(semantic_stride_), 0.0) {}

int GaussianSet::stride_of(ParamGroup g, int appearance_stride, int semantic_stride) {
    switch (g) {
        case ParamGroup::Position: return 3;
        case ParamGroup::Rotation: return 4;
        case ParamGroup::Scale: return 3;
        case ParamGroup::Opacity: return 1;
        case ParamGroup::Appearance: return appearance_stride;
        case ParamGroup::Semantic: return semantic_stride;
    }
    return 0;
}

std::vector<double>& GaussianSet::array(ParamGroup g) {
    return const_cast<std::vector<double>&>(std::as_const(*this).array(g));
}

const std::vector<double>& GaussianSet::array(ParamGroup g) const {
    switch (g) {
        case ParamGroup::Position: return positions;
        case ParamGroup::Rotation: return rotations;
        case ParamGroup::Scale: return log_scales;
        case ParamGroup::Opacity: return opacity_logits;
        case ParamGroup::Appearance: return appearance;
        case ParamGroup::Semantic: return semantics;
    }
    return positions;
}

double GaussianSet::opacity(size_t i) const { return sigmoid(opacity_logits[i]); }

void GaussianSet::set_position(size_t i, const Vec3& p) {
    for (int a = 0; a < 3; ++a) positions[3 * i + a] = p[a];
}

void GaussianSet::set_rotation(size_t i, const Vec4& q) {
    for (int a = 0; a < 4; ++a) rotations[4 * i + a] = q[a];
}

void GaussianSet::set_log_scale(size_t i, const Vec3& s) {
    for (int a = 0; a < 3; ++a) log_scales[3 * i + a] = s[a];
}

GaussianSet GaussianSet::zeros_like() const { return GaussianSet(count, appearance_stride, semantic_stride); }

void GaussianSet::append_from(const GaussianSet& src, size_t i) {
    for (ParamGroup g : kParamGroups) {
        const auto s = static_cast<size_t>(stride(g));
        const auto& from = src.array(g);
        auto& to = array(g);
        to.insert(to.end(), from.begin() + static_cast<std::ptrdiff_t>(i * s),
                  from.begin() + static_cast<std::ptrdiff_t>((i + 1) * s));
    }
    ++count;
}

void GaussianSet::keep(const std::vector<uint8_t>& mask) {
    size_t kept = 0;
    for (ParamGroup g : kParamGroups) {
        const auto s = static_cast<size_t>(stride(g));
        auto& a = array(g);
        size_t w = 0;
        for (size_t i = 0; i < count; ++i) {
            if (mask[i] == 0) {
                continue;
            }
            if (w != i) {
                std::copy_n(a.begin() + static_cast<std::ptrdiff_t>(i * s), s,
                            a.begin() + static_cast<std::ptrdiff_t>(w * s));
            }
            ++w;
        }
        a.resize(w * s);
        kept = w;
    }
    count = kept;
}

void GaussianSet::validate() const {
    for (ParamGroup g : kParamGroups) {
        if (array(g).size() != count * static_cast<size_t>(stride(g))) {
            throw ValidationError("GaussianSet: parameter arrays disagree with the Gaussian count");
        }
    }
}

// ---------------------------------------------------------------------------
// Vehicle model

std::optional<size_t> VehicleModel::slot_of(uint32_t frame) const {
    const auto it = std::find(frames.begin(), frames.end(), frame);
    if (it == frames.end()) {
        return std::nullopt;
    }
    return static_cast<size_t>(it - frames.begin());
}

Vec3 VehicleModel::delta_rotation_at(size_t slot) const {
    return {delta_rotation[3 * slot], delta_rotation[3 * slot + 1], delta_rotation[3 * slot + 2]};
}

Vec3 VehicleModel::delta_translation_at(size_t slot) const {
    return {delta_translation[3 * slot], delta_translation[3 * slot + 1], delta_translation[3 * slot + 2]};
}

Pose VehicleModel::posed(size_t slot) const {
    return apply_pose_delta(base_poses[slot], axis_angle_to_quat(delta_rotation_at(slot)),
                            delta_translation_at(slot));
}

size_t SceneModel::total_gaussians() const {
    size_t n = street.params.count;
    for (const auto& v : vehicles) {
        n += v.params.count;
    }
    return n;
}

// ---------------------------------------------------------------------------
// Assembly

AssembledScene assemble(const SceneModel& model, uint32_t frame) {
    AssembledScene s;
    s.frame = frame;
    s.num_classes = model.num_classes;
    size_t total = model.street.params.count;
    for (const auto& v : model.vehicles) {
        if (v.slot_of(frame)) {
            total += v.params.count;
        }
    }
    s.count = total;
    s.positions.reserve(total);
    s.rotations.reserve(total);
    s.scales.reserve(total);
    s.covariances.reserve(total);
    s.opacities.reserve(total);
    s.sh_degrees.reserve(total);
    s.sh.assign(total * AssembledScene::kShStride, 0.0);
    s.semantic_logits.assign(total * static_cast<size_t>(model.num_classes), 0.0);
    s.vehicle_class.reserve(total);
    s.origins.reserve(total);

    const GaussianSet& st = model.street.params;
    const int street_coeffs = sh_coeff_count(model.street.sh_degree) * 3;
    for (size_t i = 0; i < st.count; ++i) {
        const Mat3 r = rotmat_from_raw(st.rotation(i));
        const Vec3 sc = st.scale(i);
        const size_t out = s.positions.size();
        s.positions.push_back(st.position(i));
        s.rotations.push_back(r);
        s.scales.push_back(sc);
        const Mat3 m = r * sc.asDiagonal();
        s.covariances.push_back(m * m.transpose());
        s.opacities.push_back(st.opacity(i));
        s.sh_degrees.push_back(model.street.sh_degree);
        std::copy_n(st.appearance.begin() + static_cast<std::ptrdiff_t>(i * st.appearance_stride), street_coeffs,
                    s.sh.begin() + static_cast<std::ptrdiff_t>(out * AssembledScene::kShStride));
        std::copy_n(st.semantics.begin() + static_cast<std::ptrdiff_t>(i * st.semantic_stride), st.semantic_stride,
                    s.semantic_logits.begin() + static_cast<std::ptrdiff_t>(out * model.num_classes));
        s.vehicle_class.push_back(-1);
        s.origins.push_back({-1, static_cast<uint32_t>(i)});
    }

    for (size_t vi = 0; vi < model.vehicles.size(); ++vi) {
        const VehicleModel& v = model.vehicles[vi];
        const auto slot = v.slot_of(frame);
        if (!slot) {
            continue;
        }
        const Pose pose = v.posed(*slot);
        const Mat3 rp = pose.rotation_matrix();
        const std::vector<double> phi = fourier_basis(v.fourier_k, v.t_norm(frame));
        const int n_basis = sh_coeff_count(v.sh_degree);
        const GaussianSet& p = v.params;
        for (size_t i = 0; i < p.count; ++i) {
            const Mat3 ro = rotmat_from_raw(p.rotation(i));
            const Mat3 rw = model.composition == RotationComposition::Rigid ? Mat3(rp * ro) : Mat3(ro * rp.transpose());
            const Vec3 sc = p.scale(i);
            const size_t out = s.positions.size();
            s.positions.push_back(rp * p.position(i) + pose.translation);
            s.rotations.push_back(rw);
            s.scales.push_back(sc);
            const Mat3 m = rw * sc.asDiagonal();
            s.covariances.push_back(m * m.transpose());
            s.opacities.push_back(p.opacity(i));
            s.sh_degrees.push_back(v.sh_degree);
            const double* f = p.appearance.data() + i * static_cast<size_t>(p.appearance_stride);
            double* z = s.sh.data() + out * AssembledScene::kShStride;
            for (int b = 0; b < n_basis * 3; ++b) {
                double acc = 0.0;
                for (int j = 0; j < v.fourier_k; ++j) {
                    acc += f[b * v.fourier_k + j] * phi[static_cast<size_t>(j)];
                }
                z[b] = acc;
            }
            s.semantic_logits[out * static_cast<size_t>(model.num_classes)] = p.semantics[i];
            s.vehicle_class.push_back(v.vehicle_class);
            s.origins.push_back({static_cast<int>(vi), static_cast<uint32_t>(i)});
        }
    }
    return s;
}

std::vector<double> semantic_output(const AssembledScene& scene) {
    const auto n = static_cast<size_t>(scene.num_classes);
    std::vector<double> out(scene.count * n, 0.0);
    for (size_t i = 0; i < scene.count; ++i) {
        const double* l = scene.semantic_logits.data() + i * n;
        double* o = out.data() + i * n;
        if (scene.vehicle_class[i] < 0) {
            const double mx = *std::max_element(l, l + n);
            double sum = 0.0;
            for (size_t c = 0; c < n; ++c) {
                o[c] = std::exp(l[c] - mx);
                sum += o[c];
            }
            for (size_t c = 0; c < n; ++c) {
                o[c] /= sum;
            }
        } else {
            const double pv = sigmoid(l[0]);
            if (n == 1) {
                o[0] = 1.0;
                continue;
            }
            // non-vehicle mass is spread over the remaining classes
            for (size_t c = 0; c < n; ++c) {
                o[c] = (1.0 - pv) / static_cast<double>(n - 1);
            }
            o[static_cast<size_t>(scene.vehicle_class[i])] = pv;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Initialization

std::vector<double> mean_knn_distance(std::span<const Vec3> points, int k) {
    const size_t n = points.size();
    std::vector<double> out(n, 0.0);
    if (n < 2) {
        return out;
    }
    const auto kk = static_cast<size_t>(std::min<size_t>(static_cast<size_t>(k), n - 1));
    Vec3 lo = points[0], hi = points[0];
    for (const Vec3& p : points) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    const double extent = std::max((hi - lo).maxCoeff(), 1e-9);
    const double h = std::max(extent / std::cbrt(static_cast<double>(n)), 1e-9);
    auto cell_of = [&](const Vec3& p) {
        return Eigen::Vector3i(static_cast<int>(std::floor((p.x() - lo.x()) / h)),
                               static_cast<int>(std::floor((p.y() - lo.y()) / h)),
                               static_cast<int>(std::floor((p.z() - lo.z()) / h)));
    };
    auto key = [](const Eigen::Vector3i& c) {
        return (static_cast<int64_t>(c.x()) << 42) ^ (static_cast<int64_t>(c.y()) << 21) ^ static_cast<int64_t>(c.z());
    };
    std::unordered_map<int64_t, std::vector<uint32_t>> buckets;
    Eigen::Vector3i max_cell = Eigen::Vector3i::Zero();
    for (size_t i = 0; i < n; ++i) {
        const Eigen::Vector3i c = cell_of(points[i]);
        max_cell = max_cell.cwiseMax(c);
        buckets[key(c)].push_back(static_cast<uint32_t>(i));
    }
    const int max_ring = max_cell.maxCoeff() + 1;
    std::vector<double> best;
    for (size_t i = 0; i < n; ++i) {
        const Eigen::Vector3i c = cell_of(points[i]);
        best.clear();
        for (int r = 0; r <= max_ring; ++r) {
            for (int dz = -r; dz <= r; ++dz) {
                for (int dy = -r; dy <= r; ++dy) {
                    for (int dx = -r; dx <= r; ++dx) {
                        if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != r) {
                            continue;
                        }
                        const auto it = buckets.find(key(c + Eigen::Vector3i(dx, dy, dz)));
                        if (it == buckets.end()) {
                            continue;
                        }
                        for (uint32_t j : it->second) {
                            if (j != i) {
                                best.push_back((points[j] - points[i]).norm());
                            }
                        }
                    }
                }
            }
            if (best.size() >= kk) {
                std::nth_element(best.begin(), best.begin() + static_cast<std::ptrdiff_t>(kk - 1), best.end());
                // every unvisited point is farther than r * h
                if (best[kk - 1] <= r * h) {
                    break;
                }
            }
        }
        std::partial_sort(best.begin(), best.begin() + static_cast<std::ptrdiff_t>(kk), best.end());
        double sum = 0.0;
        for (size_t j = 0; j < kk; ++j) {
            sum += best[j];
        }
        out[i] = sum / static_cast<double>(kk);
    }
    return out;
}

namespace {

void init_common(GaussianSet& g, std::span<const Vec3> positions, const InitOptions& options) {
    const std::vector<double> d = mean_knn_distance(positions);
    for (size_t i = 0; i < g.count; ++i) {
        g.set_position(i, positions[i]);
        g.set_rotation(i, Vec4(1.0, 0.0, 0.0, 0.0));
        double s = positions.size() < 2 ? options.lone_point_scale : d[i];
        s = std::max(s, 1e-4);  // coincident points
        g.set_log_scale(i, Vec3::Constant(std::log(s)));
        g.opacity_logits[i] = logit(options.initial_opacity);
    }
}

}  // namespace

StreetGaussians init_street(const SemanticPointCloud& cloud, int num_classes, const InitOptions& options) {
    if (cloud.empty()) {
        throw ValidationError("init_street: empty point cloud");
    }
    StreetGaussians st;
    st.sh_degree = options.street_sh_degree;
    st.num_classes = num_classes;
    st.params = GaussianSet(cloud.size(), sh_coeff_count(st.sh_degree) * 3, num_classes);
    std::vector<Vec3> pos;
    pos.reserve(cloud.size());
    for (const auto& p : cloud.points) {
        pos.push_back(p.position);
    }
    init_common(st.params, pos, options);
    for (size_t i = 0; i < cloud.size(); ++i) {
        const Vec3 color = cloud.points[i].color.value_or(kUncoloredGray);
        for (int c = 0; c < 3; ++c) {
            st.params.appearance[i * static_cast<size_t>(st.params.appearance_stride) + c] = (color[c] - 0.5) / kShC0;
        }
        const int label = cloud.points[i].label;
        if (label < 0 || label >= num_classes) {
            throw ValidationError("init_street: point label out of range");
        }
        st.params.semantics[i * static_cast<size_t>(num_classes) + static_cast<size_t>(label)] = options.label_logit;
    }
    return st;
}

VehicleModel init_vehicle(const ObjectTrack& track, std::span<const Vec3> local_points,
                          std::span<const std::optional<Vec3>> colors, int vehicle_class, uint32_t frame_count,
                          const InitOptions& options) {
    if (local_points.empty()) {
        throw ValidationError("init_vehicle: empty point set");
    }
    if (track.frames.empty()) {
        throw ValidationError("init_vehicle: track has no frames");
    }
    VehicleModel v;
    v.id = track.id;
    v.sh_degree = options.vehicle_sh_degree;
    v.fourier_k = options.fourier_k;
    v.vehicle_class = vehicle_class;
    v.frame_count = std::max<uint32_t>(frame_count, 1);
    v.frozen = track.frames.size() < 2;
    const int stride = sh_coeff_count(v.sh_degree) * 3 * v.fourier_k;
    v.params = GaussianSet(local_points.size(), stride, 1);
    init_common(v.params, local_points, options);
    for (size_t i = 0; i < local_points.size(); ++i) {
        const Vec3 color = (i < colors.size() && colors[i]) ? *colors[i] : kUncoloredGray;
        for (int c = 0; c < 3; ++c) {
            // DC basis, channel c, Fourier term 0
            v.params.appearance[i * static_cast<size_t>(stride) + static_cast<size_t>(c * v.fourier_k)] =
                (color[c] - 0.5) / kShC0;
        }
        v.params.semantics[i] = options.label_logit;
    }
    v.frames = track.frames;
    for (const Vec3& c : track.centroids) {
        v.base_poses.push_back({UnitQuaternion::identity(), c});
    }
    v.delta_rotation.assign(3 * v.frames.size(), 0.0);
    v.delta_translation.assign(3 * v.frames.size(), 0.0);
    return v;
}

// ---------------------------------------------------------------------------
// Backward

AssembledGradients::AssembledGradients(size_t n)
    : positions(n, Vec3::Zero()),
      covariances(n, Mat3::Zero()),
      opacities(n, 0.0),
      sh(n * AssembledScene::kShStride, 0.0) {}

SceneGradients SceneGradients::zeros_like(const SceneModel& model) {
    SceneGradients g;
    g.street = model.street.params.zeros_like();
    for (const auto& v : model.vehicles) {
        g.vehicles.push_back({v.params.zeros_like(), std::vector<double>(v.delta_rotation.size(), 0.0),
                              std::vector<double>(v.delta_translation.size(), 0.0)});
    }
    return g;
}

void assemble_backward(const SceneModel& model, const AssembledScene& scene, const AssembledGradients& grads,
                       SceneGradients& out) {
    struct PoseAccum {
        Mat3 rotation = Mat3::Zero();  // dL/dR'
        Vec3 translation = Vec3::Zero();
        bool touched = false;
    };
    std::vector<PoseAccum> pose_grads(model.vehicles.size());
    std::vector<Pose> posed(model.vehicles.size());
    std::vector<std::vector<double>> phis(model.vehicles.size());
    for (size_t vi = 0; vi < model.vehicles.size(); ++vi) {
        const auto& v = model.vehicles[vi];
        if (const auto slot = v.slot_of(scene.frame)) {
            posed[vi] = v.posed(*slot);
            phis[vi] = fourier_basis(v.fourier_k, v.t_norm(scene.frame));
        }
    }

    for (size_t i = 0; i < scene.count; ++i) {
        const GaussianOrigin o = scene.origins[i];
        const Mat3& g_cov = grads.covariances[i];
        const Vec3& g_pos = grads.positions[i];
        const double* g_sh = grads.sh.data() + i * AssembledScene::kShStride;
        const double alpha = scene.opacities[i];
        const double g_logit = grads.opacities[i] * alpha * (1.0 - alpha);

        if (o.model < 0) {
            const GaussianSet& p = model.street.params;
            GaussianSet& g = out.street;
            const size_t j = o.local;
            const Vec4 q = p.rotation(j);
            const CovarianceGrad cg = covariance_backward(scene.rotations[i], p.log_scale(j), g_cov);
            const Vec4 gq = rotmat_backward(q, cg.rotation);
            for (int a = 0; a < 3; ++a) {
                g.positions[3 * j + a] += g_pos[a];
                g.log_scales[3 * j + a] += cg.log_scale[a];
            }
            for (int a = 0; a < 4; ++a) {
                g.rotations[4 * j + a] += gq[a];
            }
            g.opacity_logits[j] += g_logit;
            const int n = sh_coeff_count(model.street.sh_degree) * 3;
            for (int b = 0; b < n; ++b) {
                g.appearance[j * static_cast<size_t>(g.appearance_stride) + static_cast<size_t>(b)] += g_sh[b];
            }
            continue;
        }

        const auto vi = static_cast<size_t>(o.model);
        const VehicleModel& v = model.vehicles[vi];
        const GaussianSet& p = v.params;
        GaussianSet& g = out.vehicles[vi].params;
        const size_t j = o.local;
        const Mat3 rp = posed[vi].rotation_matrix();
        const Mat3 ro = rotmat_from_raw(p.rotation(j));
        const Vec3 mu_o = p.position(j);

        const CovarianceGrad cg = covariance_backward(scene.rotations[i], p.log_scale(j), g_cov);
        Mat3 g_ro;
        PoseAccum& pa = pose_grads[vi];
        pa.touched = true;
        if (model.composition == RotationComposition::Rigid) {
            // R_w = R' R_o
            pa.rotation += cg.rotation * ro.transpose();
            g_ro = rp.transpose() * cg.rotation;
        } else {
            // R_w = R_o R'^T
            pa.rotation += cg.rotation.transpose() * ro;
            g_ro = cg.rotation * rp;
        }
        // mu_w = R' mu_o + T'
        pa.rotation += g_pos * mu_o.transpose();
        pa.translation += g_pos;
        const Vec3 g_mu_o = rp.transpose() * g_pos;
        const Vec4 gq = rotmat_backward(p.rotation(j), g_ro);
        for (int a = 0; a < 3; ++a) {
            g.positions[3 * j + a] += g_mu_o[a];
            g.log_scales[3 * j + a] += cg.log_scale[a];
        }
        for (int a = 0; a < 4; ++a) {
            g.rotations[4 * j + a] += gq[a];
        }
        g.opacity_logits[j] += g_logit;
        const int n = sh_coeff_count(v.sh_degree) * 3;
        double* gf = g.appearance.data() + j * static_cast<size_t>(g.appearance_stride);
        for (int b = 0; b < n; ++b) {
            for (int t = 0; t < v.fourier_k; ++t) {
                gf[b * v.fourier_k + t] += g_sh[b] * phis[vi][static_cast<size_t>(t)];
            }
        }
    }

    for (size_t vi = 0; vi < model.vehicles.size(); ++vi) {
        const VehicleModel& v = model.vehicles[vi];
        const PoseAccum& pa = pose_grads[vi];
        if (!pa.touched || v.frozen) {
            continue;
        }
        const size_t slot = *v.slot_of(scene.frame);
        // R' = R_t dR, T' = T_t + dT
        const Mat3 g_delta_r = v.base_poses[slot].rotation_matrix().transpose() * pa.rotation;
        const Vec3 omega = v.delta_rotation_at(slot);
        const Vec4 q_delta = axis_angle_to_quat(omega).as_vector();
        const Vec3 g_omega = axis_angle_backward(omega, rotmat_backward(q_delta, g_delta_r));
        auto& vg = out.vehicles[vi];
        for (int a = 0; a < 3; ++a) {
            vg.delta_rotation[3 * slot + static_cast<size_t>(a)] += g_omega[a];
            vg.delta_translation[3 * slot + static_cast<size_t>(a)] += pa.translation[a];
        }
    }
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

PlyVertices to_ply(const GaussianSet& g, const std::string& appearance_prefix) {
    PlyVertices v;
    v.count = g.count;
    auto column = [&](const std::vector<double>& a, size_t stride, size_t k) {
        std::vector<double> c(g.count);
        for (size_t i = 0; i < g.count; ++i) {
            c[i] = a[i * stride + k];
        }
        return c;
    };
    const char* axes[] = {"x", "y", "z"};
    for (size_t a = 0; a < 3; ++a) v.add(axes[a], PlyType::Float64, column(g.positions, 3, a));
    for (size_t a = 0; a < 4; ++a) v.add("rot_" + std::to_string(a), PlyType::Float64, column(g.rotations, 4, a));
    for (size_t a = 0; a < 3; ++a) v.add("scale_" + std::to_string(a), PlyType::Float64, column(g.log_scales, 3, a));
    v.add("opacity", PlyType::Float64, g.opacity_logits);
    for (size_t a = 0; a < static_cast<size_t>(g.appearance_stride); ++a) {
        v.add(appearance_prefix + std::to_string(a), PlyType::Float64,
              column(g.appearance, static_cast<size_t>(g.appearance_stride), a));
    }
    for (size_t a = 0; a < static_cast<size_t>(g.semantic_stride); ++a) {
        v.add("sem_" + std::to_string(a), PlyType::Float64,
              column(g.semantics, static_cast<size_t>(g.semantic_stride), a));
    }
    return v;
}

GaussianSet from_ply(const PlyVertices& v, const std::string& appearance_prefix, int appearance_stride,
                     int semantic_stride) {
    GaussianSet g(v.count, appearance_stride, semantic_stride);
    auto fill = [&](std::vector<double>& a, size_t stride, size_t k, const std::string& name) {
        const auto& c = v.column(name);
        for (size_t i = 0; i < g.count; ++i) {
            a[i * stride + k] = c[i];
        }
    };
    const char* axes[] = {"x", "y", "z"};
    for (size_t a = 0; a < 3; ++a) fill(g.positions, 3, a, axes[a]);
    for (size_t a = 0; a < 4; ++a) fill(g.rotations, 4, a, "rot_" + std::to_string(a));
    for (size_t a = 0; a < 3; ++a) fill(g.log_scales, 3, a, "scale_" + std::to_string(a));
    fill(g.opacity_logits, 1, 0, "opacity");
    for (size_t a = 0; a < static_cast<size_t>(appearance_stride); ++a) {
        fill(g.appearance, static_cast<size_t>(appearance_stride), a, appearance_prefix + std::to_string(a));
    }
    for (size_t a = 0; a < static_cast<size_t>(semantic_stride); ++a) {
        fill(g.semantics, static_cast<size_t>(semantic_stride), a, "sem_" + std::to_string(a));
    }
    return g;
}

json pose_to_json(const Pose& p) {
    return {{"rotation", {p.rotation.w, p.rotation.x, p.rotation.y, p.rotation.z}},
            {"translation", {p.translation.x(), p.translation.y(), p.translation.z()}}};
}

Pose pose_from_json(const json& j) {
    const auto& r = j.at("rotation");
    const auto& t = j.at("translation");
    return {{r.at(0).get<double>(), r.at(1).get<double>(), r.at(2).get<double>(), r.at(3).get<double>()},
            {t.at(0).get<double>(), t.at(1).get<double>(), t.at(2).get<double>()}};
}

}  // namespace

void save_scene(const std::filesystem::path& dir, const SceneModel& model) {
    std::filesystem::create_directories(dir);
    write_ply(dir / "street.ply", to_ply(model.street.params, "sh_"));
    json manifest;
    manifest["format"] = "ogs-scene-1";
    manifest["num_classes"] = model.num_classes;
    manifest["rotation_composition"] = model.composition == RotationComposition::Rigid ? "rigid" : "literal";
    manifest["background"] = {model.background.x(), model.background.y(), model.background.z()};
    manifest["street"] = {{"file", "street.ply"}, {"sh_degree", model.street.sh_degree}};
    manifest["vehicles"] = json::array();
    for (const auto& v : model.vehicles) {
        const std::string file = "vehicle_" + std::to_string(v.id) + ".ply";
        write_ply(dir / file, to_ply(v.params, "fourier_"));
        json jv;
        jv["id"] = v.id;
        jv["file"] = file;
        jv["sh_degree"] = v.sh_degree;
        jv["fourier_k"] = v.fourier_k;
        jv["vehicle_class"] = v.vehicle_class;
        jv["frozen"] = v.frozen;
        jv["frame_count"] = v.frame_count;
        jv["frames"] = v.frames;
        jv["base_poses"] = json::array();
        jv["delta_rotation"] = json::array();
        jv["delta_translation"] = json::array();
        for (size_t s = 0; s < v.frames.size(); ++s) {
            jv["base_poses"].push_back(pose_to_json(v.base_poses[s]));
            const Vec3 dr = v.delta_rotation_at(s);
            const Vec3 dt = v.delta_translation_at(s);
            jv["delta_rotation"].push_back({dr.x(), dr.y(), dr.z()});
            jv["delta_translation"].push_back({dt.x(), dt.y(), dt.z()});
        }
        manifest["vehicles"].push_back(jv);
    }
    std::ofstream f(dir / "scene.json");
    if (!f) {
        throw Error("cannot write '" + (dir / "scene.json").string() + "'");
    }
    f << manifest.dump(2) << '\n';
}

SceneModel load_scene(const std::filesystem::path& dir) {
    std::ifstream f(dir / "scene.json");
    if (!f) {
        throw Error("cannot open scene manifest '" + (dir / "scene.json").string() + "'");
    }
    json manifest;
    try {
        manifest = json::parse(f);
        SceneModel model;
        if (manifest.at("format").get<std::string>() != "ogs-scene-1") {
            throw Error("unsupported scene format");
        }
        model.num_classes = manifest.at("num_classes").get<int>();
        model.composition = manifest.value("rotation_composition", std::string("rigid")) == "literal"
                                ? RotationComposition::Literal
                                : RotationComposition::Rigid;
        if (manifest.contains("background")) {
            const auto& b = manifest.at("background");
            model.background = {b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>()};
        }
        model.street.num_classes = model.num_classes;
        model.street.sh_degree = manifest.at("street").at("sh_degree").get<int>();
        model.street.params = from_ply(read_ply(dir / manifest.at("street").at("file").get<std::string>()), "sh_",
                                       sh_coeff_count(model.street.sh_degree) * 3, model.num_classes);
        for (const auto& jv : manifest.at("vehicles")) {
            VehicleModel v;
            v.id = jv.at("id").get<int>();
            v.sh_degree = jv.at("sh_degree").get<int>();
            v.fourier_k = jv.at("fourier_k").get<int>();
            v.vehicle_class = jv.at("vehicle_class").get<int>();
            v.frozen = jv.at("frozen").get<bool>();
            v.frame_count = jv.at("frame_count").get<uint32_t>();
            v.frames = jv.at("frames").get<std::vector<uint32_t>>();
            v.params = from_ply(read_ply(dir / jv.at("file").get<std::string>()), "fourier_",
                                sh_coeff_count(v.sh_degree) * 3 * v.fourier_k, 1);
            for (size_t s = 0; s < v.frames.size(); ++s) {
                v.base_poses.push_back(pose_from_json(jv.at("base_poses").at(s)));
                for (int a = 0; a < 3; ++a) {
                    v.delta_rotation.push_back(jv.at("delta_rotation").at(s).at(a).get<double>());
                    v.delta_translation.push_back(jv.at("delta_translation").at(s).at(a).get<double>());
                }
            }
            model.vehicles.push_back(std::move(v));
        }
        return model;
    } catch (const json::exception& e) {
        throw Error("scene manifest '" + (dir / "scene.json").string() + "': " + e.what());
    }
}

}  // namespace ogs
