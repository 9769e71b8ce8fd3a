#include "ogs/formats.hpp"

#include "ogs/ply.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace ogs {

using nlohmann::json;

namespace {

Vec3 vec3_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }
json vec3_to(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

fs::path resolve(const fs::path& base, const fs::path& p) { return p.is_absolute() ? p : base / p; }

std::string relative_to(const fs::path& base, const fs::path& p) {
    if (p.is_relative()) {
        return p.generic_string();
    }
    const fs::path rel = p.lexically_relative(base);
    return rel.empty() ? p.generic_string() : rel.generic_string();
}

void require_exists(const fs::path& p, const std::string& what) {
    if (!fs::exists(p)) {
        throw ValidationError(what + " '" + p.string() + "' does not exist");
    }
}

// Key table for the flat config object.
struct ConfigKey {
    std::function<void(const json&, PipelineConfig&)> set;
    std::function<json(const PipelineConfig&)> get;
};

template <typename T, typename Access>
ConfigKey key(Access access) {
    return {[access](const json& j, PipelineConfig& c) { access(c) = j.get<T>(); },
            [access](const PipelineConfig& c) { return json(access(const_cast<PipelineConfig&>(c))); }};
}

const std::map<std::string, ConfigKey>& config_keys() {
    static const std::map<std::string, ConfigKey> keys = [] {
        std::map<std::string, ConfigKey> k;
        k["occupancy_threshold"] = key<double>([](PipelineConfig& c) -> double& { return c.convert.occupancy_threshold; });
        k["match_radius"] = key<double>([](PipelineConfig& c) -> double& { return c.convert.match_radius; });
        k["dynamic_threshold"] = key<double>([](PipelineConfig& c) -> double& { return c.convert.dynamic_threshold; });
        k["upsample_voxel"] = key<double>([](PipelineConfig& c) -> double& { return c.convert.upsample_voxel; });

        k["street_sh_degree"] = key<int>([](PipelineConfig& c) -> int& { return c.init.street_sh_degree; });
        k["vehicle_sh_degree"] = key<int>([](PipelineConfig& c) -> int& { return c.init.vehicle_sh_degree; });
        k["fourier_k"] = key<int>([](PipelineConfig& c) -> int& { return c.init.fourier_k; });
        k["initial_opacity"] = key<double>([](PipelineConfig& c) -> double& { return c.init.initial_opacity; });
        k["label_logit"] = key<double>([](PipelineConfig& c) -> double& { return c.init.label_logit; });
        k["lone_point_scale"] = key<double>([](PipelineConfig& c) -> double& { return c.init.lone_point_scale; });

        k["iterations"] = key<int>([](PipelineConfig& c) -> int& { return c.train.iterations; });
        k["lambda"] = key<double>([](PipelineConfig& c) -> double& { return c.train.lambda; });
        k["lr_position"] = key<double>([](PipelineConfig& c) -> double& { return c.train.lr.position; });
        k["lr_position_final"] = key<double>([](PipelineConfig& c) -> double& { return c.train.lr.position_final; });
        k["lr_rotation"] = key<double>([](PipelineConfig& c) -> double& { return c.train.lr.rotation; });
        k["lr_scale"] = key<double>([](PipelineConfig& c) -> double& { return c.train.lr.scale; });
        k["lr_opacity"] = key<double>([](PipelineConfig& c) -> double& { return c.train.lr.opacity; });
        k["lr_appearance"] = key<double>([](PipelineConfig& c) -> double& { return c.train.lr.appearance; });
        k["lr_semantic"] = key<double>([](PipelineConfig& c) -> double& { return c.train.lr.semantic; });
        k["lr_delta_rotation"] = key<double>([](PipelineConfig& c) -> double& { return c.train.lr.delta_rotation; });
        k["lr_delta_translation"] =
            key<double>([](PipelineConfig& c) -> double& { return c.train.lr.delta_translation; });
        k["scale_position_lr_by_extent"] =
            key<bool>([](PipelineConfig& c) -> bool& { return c.train.scale_position_lr_by_extent; });
        k["densify_interval"] = key<int>([](PipelineConfig& c) -> int& { return c.train.densify_interval; });
        k["densify_from"] = key<int>([](PipelineConfig& c) -> int& { return c.train.densify_from; });
        k["densify_until"] = key<int>([](PipelineConfig& c) -> int& { return c.train.densify_until; });
        k["densify_grad_threshold"] =
            key<double>([](PipelineConfig& c) -> double& { return c.train.densify_grad_threshold; });
        k["opacity_prune_threshold"] =
            key<double>([](PipelineConfig& c) -> double& { return c.train.opacity_prune_threshold; });
        k["split_scale_fraction"] =
            key<double>([](PipelineConfig& c) -> double& { return c.train.split_scale_fraction; });
        k["seed"] = key<uint64_t>([](PipelineConfig& c) -> uint64_t& { return c.train.seed; });
        k["eval_interval"] = key<int>([](PipelineConfig& c) -> int& { return c.train.eval_interval; });
        k["checkpoint_interval"] = key<int>([](PipelineConfig& c) -> int& { return c.train.checkpoint_interval; });
        k["log_wall_time"] = key<bool>([](PipelineConfig& c) -> bool& { return c.train.log_wall_time; });

        k["threads"] = key<int>([](PipelineConfig& c) -> int& { return c.train.render.threads; });
        k["tile_size"] = key<int>([](PipelineConfig& c) -> int& { return c.train.render.tile_size; });
        k["low_pass"] = key<double>([](PipelineConfig& c) -> double& { return c.train.render.low_pass; });
        k["alpha_cap"] = key<double>([](PipelineConfig& c) -> double& { return c.train.render.alpha_cap; });
        k["alpha_min"] = key<double>([](PipelineConfig& c) -> double& { return c.train.render.alpha_min; });
        k["min_transmittance"] =
            key<double>([](PipelineConfig& c) -> double& { return c.train.render.min_transmittance; });

        k["rotation_composition"] = {
            [](const json& j, PipelineConfig& c) {
                const std::string s = j.get<std::string>();
                if (s == "rigid") {
                    c.composition = RotationComposition::Rigid;
                } else if (s == "literal") {
                    c.composition = RotationComposition::Literal;
                } else {
                    throw ValidationError("config: rotation_composition must be 'rigid' or 'literal'");
                }
            },
            [](const PipelineConfig& c) {
                return json(c.composition == RotationComposition::Rigid ? "rigid" : "literal");
            }};
        return k;
    }();
    return keys;
}

}  // namespace

// ---------------------------------------------------------------------------

const CameraEntry* CameraManifest::find(uint32_t frame, int camera_id) const {
    for (const auto& e : entries) {
        if (e.frame == frame && e.camera_id == camera_id) {
            return &e;
        }
    }
    return nullptr;
}

std::string image_name(int camera_id, uint32_t frame) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "cam%d_frame%04u.png", camera_id, frame);
    return buf;
}

CameraManifest read_camera_manifest(const fs::path& path) {
    const json j = read_json(path);
    CameraManifest m;
    try {
        if (j.at("format").get<std::string>() != "ogs-cameras-1") {
            throw ValidationError("camera manifest '" + path.string() + "': unsupported format");
        }
        for (const auto& e : j.at("frames")) {
            CameraEntry c;
            c.frame = e.at("frame_index").get<uint32_t>();
            c.camera_id = e.at("camera_id").get<int>();
            c.camera.fx = e.at("fx").get<double>();
            c.camera.fy = e.at("fy").get<double>();
            c.camera.cx = e.at("cx").get<double>();
            c.camera.cy = e.at("cy").get<double>();
            c.camera.width = e.at("width").get<int>();
            c.camera.height = e.at("height").get<int>();
            c.camera.near = e.value("near", 0.01);
            c.camera.far = e.value("far", 1000.0);
            const auto& r = e.at("rotation");
            c.camera.world_to_camera.rotation = {r.at(0).get<double>(), r.at(1).get<double>(), r.at(2).get<double>(),
                                                 r.at(3).get<double>()};
            c.camera.world_to_camera.translation = vec3_from(e.at("translation"));
            c.image = e.value("image", std::string());
            c.camera.validate();
            if (m.find(c.frame, c.camera_id) != nullptr) {
                throw ValidationError("camera manifest '" + path.string() + "': duplicate entry for camera " +
                                      std::to_string(c.camera_id) + " frame " + std::to_string(c.frame));
            }
            m.entries.push_back(std::move(c));
        }
    } catch (const json::exception& e) {
        throw ValidationError("camera manifest '" + path.string() + "': " + e.what());
    }
    return m;
}

void write_camera_manifest(const fs::path& path, const CameraManifest& manifest) {
    json frames = json::array();
    for (const auto& c : manifest.entries) {
        const UnitQuaternion& q = c.camera.world_to_camera.rotation;
        frames.push_back({{"frame_index", c.frame},
                          {"camera_id", c.camera_id},
                          {"fx", c.camera.fx},
                          {"fy", c.camera.fy},
                          {"cx", c.camera.cx},
                          {"cy", c.camera.cy},
                          {"width", c.camera.width},
                          {"height", c.camera.height},
                          {"near", c.camera.near},
                          {"far", c.camera.far},
                          {"rotation", {q.w, q.x, q.y, q.z}},
                          {"translation", vec3_to(c.camera.world_to_camera.translation)},
                          {"image", c.image}});
    }
    write_text(path, json({{"format", "ogs-cameras-1"}, {"frames", frames}}).dump(2) + "\n");
}

SceneManifest read_scene_manifest(const fs::path& path) {
    const json j = read_json(path);
    SceneManifest m;
    m.base_dir = path.parent_path();
    try {
        if (j.at("format").get<std::string>() != "ogs-manifest-1") {
            throw ValidationError("scene manifest '" + path.string() + "': unsupported format");
        }
        const auto& grids = j.at("grids");
        m.grids.resize(grids.size());
        std::vector<uint8_t> seen(grids.size(), 0);
        for (const auto& g : grids) {
            const uint32_t frame = g.at("frame").get<uint32_t>();
            if (frame >= grids.size() || seen[frame]) {
                throw ValidationError("scene manifest '" + path.string() +
                                      "': grid frame indices must be 0..n-1 without repeats");
            }
            seen[frame] = 1;
            m.grids[frame] = resolve(m.base_dir, g.at("path").get<std::string>());
            require_exists(m.grids[frame], "occupancy grid");
        }
        if (m.grids.empty()) {
            throw ValidationError("scene manifest '" + path.string() + "': no grids");
        }
        m.camera_manifest = resolve(m.base_dir, j.at("cameras").get<std::string>());
        require_exists(m.camera_manifest, "camera manifest");
        m.image_dir = resolve(m.base_dir, j.at("image_dir").get<std::string>());
        require_exists(m.image_dir, "image directory");
        if (j.contains("sfm_ply") && !j.at("sfm_ply").is_null()) {
            m.sfm_ply = resolve(m.base_dir, j.at("sfm_ply").get<std::string>());
            require_exists(*m.sfm_ply, "SfM point cloud");
        }
        if (j.contains("mask_dir") && !j.at("mask_dir").is_null()) {
            m.mask_dir = resolve(m.base_dir, j.at("mask_dir").get<std::string>());
            require_exists(*m.mask_dir, "mask directory");
        }
        m.classes = j.at("classes").get<std::vector<std::string>>();
        m.vehicle_classes = j.value("vehicle_classes", std::vector<int>{});
        m.unlabeled_class = j.value("unlabeled_class", 0);
        m.holdout_cameras = j.value("holdout_cameras", std::vector<int>{});
        if (j.contains("background")) {
            m.background = vec3_from(j.at("background"));
        }
    } catch (const json::exception& e) {
        throw ValidationError("scene manifest '" + path.string() + "': " + e.what());
    }
    const int n = m.num_classes();
    if (n < 1) {
        throw ValidationError("scene manifest '" + path.string() + "': empty class table");
    }
    auto in_range = [n](int c) { return c >= 0 && c < n; };
    if (!in_range(m.unlabeled_class) || !std::all_of(m.vehicle_classes.begin(), m.vehicle_classes.end(), in_range)) {
        throw ValidationError("scene manifest '" + path.string() + "': class id out of range");
    }
    return m;
}

void write_scene_manifest(const fs::path& path, const SceneManifest& m) {
    const fs::path base = path.parent_path();
    json grids = json::array();
    for (size_t f = 0; f < m.grids.size(); ++f) {
        grids.push_back({{"frame", f}, {"path", relative_to(base, m.grids[f])}});
    }
    json j = {{"format", "ogs-manifest-1"},
              {"grids", grids},
              {"cameras", relative_to(base, m.camera_manifest)},
              {"image_dir", relative_to(base, m.image_dir)},
              {"classes", m.classes},
              {"vehicle_classes", m.vehicle_classes},
              {"unlabeled_class", m.unlabeled_class},
              {"holdout_cameras", m.holdout_cameras},
              {"background", vec3_to(m.background)}};
    if (m.sfm_ply) {
        j["sfm_ply"] = relative_to(base, *m.sfm_ply);
    }
    if (m.mask_dir) {
        j["mask_dir"] = relative_to(base, *m.mask_dir);
    }
    write_text(path, j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------

void apply_config(const json& j, PipelineConfig& config) {
    if (!j.is_object()) {
        throw ValidationError("config: expected a JSON object");
    }
    const auto& keys = config_keys();
    for (const auto& [name, value] : j.items()) {
        const auto it = keys.find(name);
        if (it == keys.end()) {
            throw ValidationError("config: unknown key '" + name + "'");
        }
        try {
            it->second.set(value, config);
        } catch (const json::exception& e) {
            throw ValidationError("config: bad value for '" + name + "': " + e.what());
        }
    }
}

PipelineConfig load_config(const fs::path& path, PipelineConfig base) {
    apply_config(read_json(path), base);
    return base;
}

json config_to_json(const PipelineConfig& config) {
    json j = json::object();
    for (const auto& [name, k] : config_keys()) {
        j[name] = k.get(config);
    }
    return j;
}

// ---------------------------------------------------------------------------

void write_point_cloud(const fs::path& path, const SemanticPointCloud& cloud) {
    const size_t n = cloud.size();
    PlyVertices v;
    v.count = n;
    std::vector<double> cols[9];
    for (auto& c : cols) {
        c.resize(n);
    }
    for (size_t i = 0; i < n; ++i) {
        const SemanticPoint& p = cloud.points[i];
        const Vec3 color = p.color.value_or(kUncoloredGray);
        for (int a = 0; a < 3; ++a) {
            cols[a][i] = p.position[a];
            cols[3 + a][i] = color[a];
        }
        cols[6][i] = p.color ? 1.0 : 0.0;
        cols[7][i] = p.label;
        cols[8][i] = static_cast<double>(p.source);
    }
    v.add("x", PlyType::Float64, cols[0]);
    v.add("y", PlyType::Float64, cols[1]);
    v.add("z", PlyType::Float64, cols[2]);
    v.add("red", PlyType::Float32, cols[3]);
    v.add("green", PlyType::Float32, cols[4]);
    v.add("blue", PlyType::Float32, cols[5]);
    v.add("colored", PlyType::UInt8, cols[6]);
    v.add("label", PlyType::Int32, cols[7]);
    v.add("source", PlyType::UInt8, cols[8]);
    write_ply(path, v);
}

SemanticPointCloud read_point_cloud(const fs::path& path) {
    const PlyVertices v = read_ply(path);
    for (const char* name : {"x", "y", "z", "red", "green", "blue", "colored", "label", "source"}) {
        if (!v.has(name)) {
            throw ValidationError("point cloud '" + path.string() + "': missing property '" + name + "'");
        }
    }
    SemanticPointCloud cloud;
    cloud.points.resize(v.count);
    const auto &x = v.column("x"), &y = v.column("y"), &z = v.column("z");
    const auto &r = v.column("red"), &g = v.column("green"), &b = v.column("blue");
    const auto &colored = v.column("colored"), &label = v.column("label"), &source = v.column("source");
    for (size_t i = 0; i < v.count; ++i) {
        SemanticPoint& p = cloud.points[i];
        p.position = {x[i], y[i], z[i]};
        if (colored[i] != 0.0) {
            p.color = Vec3(r[i], g[i], b[i]);
        }
        p.label = static_cast<int>(label[i]);
        p.source = source[i] != 0.0 ? PointSource::Sfm : PointSource::Occupancy;
    }
    return cloud;
}

void write_tracks(const fs::path& path, const std::vector<TrackRecord>& tracks) {
    json arr = json::array();
    for (const auto& t : tracks) {
        json c = json::array();
        for (const Vec3& p : t.centroids) {
            c.push_back(vec3_to(p));
        }
        json jt = {{"id", t.id},
                   {"dynamic", t.dynamic},
                   {"vehicle_class", t.vehicle_class},
                   {"frames", t.frames},
                   {"centroids", c}};
        if (!t.points_file.empty()) {
            jt["points"] = t.points_file;
        }
        arr.push_back(jt);
    }
    write_text(path, json({{"format", "ogs-tracks-1"}, {"tracks", arr}}).dump(2) + "\n");
}

std::vector<TrackRecord> read_tracks(const fs::path& path) {
    const json j = read_json(path);
    std::vector<TrackRecord> out;
    try {
        if (j.at("format").get<std::string>() != "ogs-tracks-1") {
            throw ValidationError("tracks file '" + path.string() + "': unsupported format");
        }
        for (const auto& jt : j.at("tracks")) {
            TrackRecord t;
            t.id = jt.at("id").get<int>();
            t.dynamic = jt.at("dynamic").get<bool>();
            t.vehicle_class = jt.at("vehicle_class").get<int>();
            t.frames = jt.at("frames").get<std::vector<uint32_t>>();
            for (const auto& c : jt.at("centroids")) {
                t.centroids.push_back(vec3_from(c));
            }
            t.points_file = jt.value("points", std::string());
            if (t.frames.size() != t.centroids.size() || t.frames.empty()) {
                throw ValidationError("tracks file '" + path.string() + "': frames and centroids disagree");
            }
            out.push_back(std::move(t));
        }
    } catch (const json::exception& e) {
        throw ValidationError("tracks file '" + path.string() + "': " + e.what());
    }
    return out;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw Error("cannot write '" + path.string() + "'");
    }
    f << text;
    if (!f) {
        throw Error("write failed for '" + path.string() + "'");
    }
}

std::string read_text(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw ValidationError("cannot open '" + path.string() + "'");
    }
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

json read_json(const fs::path& path) {
    try {
        return json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        throw ValidationError("'" + path.string() + "': " + e.what());
    }
}

}  // namespace ogs
