#include "ogs/pipeline.hpp"

#include "ogs/log.hpp"
#include "ogs/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <tuple>

#include <nlohmann/json.hpp>

namespace ogs {

namespace {

using CellKey = std::tuple<long long, long long, long long>;

CellKey quantize(const Vec3& p, double cell) {
    const double q = 0.5 * cell;
    return {std::llround(p.x() / q), std::llround(p.y() / q), std::llround(p.z() / q)};
}

bool is_holdout(const SceneManifest& m, int camera_id) {
    return std::find(m.holdout_cameras.begin(), m.holdout_cameras.end(), camera_id) != m.holdout_cameras.end();
}

std::string checkpoint_name(int iteration) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "iter_%06d", iteration);
    return buf;
}

struct LoadedView {
    const CameraEntry* entry;
    Image image;
};

}  // namespace

// ---------------------------------------------------------------------------

ConvertSummary cmd_convert(const fs::path& manifest_path, const PipelineConfig& config, const fs::path& out_dir) {
    const SceneManifest m = read_scene_manifest(manifest_path);
    const ConvertConfig& cc = config.convert;
    if (!(cc.occupancy_threshold >= 0.0 && cc.occupancy_threshold <= 1.0) || !(cc.match_radius > 0.0) ||
        !(cc.dynamic_threshold >= 0.0) || !(cc.upsample_voxel > 0.0)) {
        throw ValidationError("convert: invalid thresholds");
    }
    std::vector<LabeledLattice> lattices;
    for (size_t f = 0; f < m.grids.size(); ++f) {
        const fs::path& p = m.grids[f];
        const OccupancyGrid g = read_occupancy_grid(p);
        g.validate();
        if (g.frame_index != f) {
            throw ValidationError("grid '" + p.string() + "': frame index " + std::to_string(g.frame_index) +
                                  " listed as frame " + std::to_string(f));
        }
        if (static_cast<int>(g.num_classes) != m.num_classes()) {
            throw ValidationError("grid '" + p.string() + "': class count differs from the manifest");
        }
        lattices.push_back(label_grid(g, cc.occupancy_threshold));
    }
    const CameraManifest cams = read_camera_manifest(m.camera_manifest);

    // training views, loaded once, grouped by frame in manifest order
    std::vector<LoadedView> views;
    for (const CameraEntry& e : cams.entries) {
        if (is_holdout(m, e.camera_id) || e.frame >= m.frame_count()) {
            continue;
        }
        Image img = read_png(m.image_dir / e.image);
        if (img.width != e.camera.width || img.height != e.camera.height) {
            throw ValidationError("image '" + (m.image_dir / e.image).string() + "' does not match its camera size");
        }
        views.push_back({&e, std::move(img)});
    }
    std::vector<CameraView> all_views;
    std::map<uint32_t, std::vector<CameraView>> views_by_frame;
    for (const LoadedView& v : views) {
        all_views.push_back({&v.entry->camera, &v.image});
        views_by_frame[v.entry->frame].push_back({&v.entry->camera, &v.image});
    }

    std::vector<std::vector<ObjectComponent>> per_frame;
    for (const LabeledLattice& l : lattices) {
        per_frame.push_back(extract_objects(l, m.vehicle_classes));
    }
    std::vector<ObjectTrack> tracks = associate_tracks(per_frame, cc.match_radius);
    for (ObjectTrack& t : tracks) {
        t.dynamic = classify_dynamic(t, cc.dynamic_threshold);
    }

    // static cloud: union of non-vehicle cells over frames plus static tracks
    SemanticPointCloud static_cloud;
    std::set<CellKey> seen;
    auto add_point = [&](const Vec3& p, int label, double cell) {
        if (seen.insert(quantize(p, cell)).second) {
            SemanticPoint sp;
            sp.position = p;
            sp.label = label;
            static_cloud.points.push_back(sp);
        }
    };
    for (const LabeledLattice& l : lattices) {
        for (const SemanticPoint& p : grid_to_static_cloud(l, m.vehicle_classes).points) {
            add_point(p.position, p.label, l.geometry.cell_size);
        }
    }
    auto track_label = [&](const ObjectTrack& t) {
        const ObjectComponent& c = t.components.front();
        const LabeledLattice& l = lattices[c.frame_index];
        return l.labels[l.geometry.linear(c.cells.front())];
    };
    std::vector<TrackRecord> records;
    for (const ObjectTrack& t : tracks) {
        TrackRecord r;
        r.id = t.id;
        r.dynamic = t.dynamic;
        r.vehicle_class = track_label(t);
        r.frames = t.frames;
        r.centroids = t.centroids;
        if (!t.dynamic) {
            const ObjectComponent& c = t.components.front();
            for (const Vec3& p : c.cell_centers) {
                add_point(p, r.vehicle_class, c.cell_size);
            }
        }
        records.push_back(std::move(r));
    }
    {
        std::vector<Vec3> pos;
        pos.reserve(static_cloud.size());
        for (const auto& p : static_cloud.points) {
            pos.push_back(p.position);
        }
        const auto colors = colorize_points(pos, all_views);
        for (size_t i = 0; i < colors.size(); ++i) {
            static_cloud.points[i].color = colors[i];
        }
    }
    if (m.sfm_ply) {
        static_cloud = merge_with_sfm(std::move(static_cloud), read_sfm_ply(*m.sfm_ply, m.unlabeled_class),
                                      m.unlabeled_class);
    }

    // vehicle clouds in the vehicle frame
    std::vector<std::pair<std::string, SemanticPointCloud>> vehicle_clouds;
    for (size_t ti = 0; ti < tracks.size(); ++ti) {
        const ObjectTrack& t = tracks[ti];
        if (!t.dynamic) {
            continue;
        }
        const ObjectComponent& c0 = t.components.front();
        const std::vector<Vec3> pts = upsample_object(c0.cell_centers, c0.cell_size, cc.upsample_voxel);
        SemanticPointCloud cloud;
        for (const Vec3& p : pts) {
            SemanticPoint sp;
            sp.position = p - t.centroids.front();
            sp.label = records[ti].vehicle_class;
            cloud.points.push_back(sp);
        }
        for (size_t s = 0; s < t.frames.size(); ++s) {
            const auto it = views_by_frame.find(t.frames[s]);
            if (it == views_by_frame.end()) {
                continue;
            }
            for (SemanticPoint& sp : cloud.points) {
                if (sp.color) {
                    continue;
                }
                for (const CameraView& v : it->second) {
                    if (auto col = project_color(sp.position + t.centroids[s], *v.camera, *v.image)) {
                        sp.color = col;
                        break;
                    }
                }
            }
        }
        records[ti].points_file = "vehicle_" + std::to_string(t.id) + ".ply";
        vehicle_clouds.emplace_back(records[ti].points_file, std::move(cloud));
    }

    fs::create_directories(out_dir);
    write_point_cloud(out_dir / "static.ply", static_cloud);
    for (const auto& [name, cloud] : vehicle_clouds) {
        write_point_cloud(out_dir / name, cloud);
    }
    write_tracks(out_dir / "tracks.json", records);

    ConvertSummary summary;
    summary.static_points = static_cloud.size();
    summary.tracks = tracks.size();
    for (const auto& r : records) {
        if (r.dynamic) {
            summary.dynamic_ids.push_back(r.id);
        }
    }
    return summary;
}

// ---------------------------------------------------------------------------

SceneModel initial_scene(const SceneManifest& m, const fs::path& priors_dir, const PipelineConfig& config) {
    SceneModel model;
    model.num_classes = m.num_classes();
    model.composition = config.composition;
    model.background = m.background;
    model.street = init_street(read_point_cloud(priors_dir / "static.ply"), m.num_classes(), config.init);
    for (const TrackRecord& r : read_tracks(priors_dir / "tracks.json")) {
        if (!r.dynamic) {
            continue;
        }
        if (r.points_file.empty()) {
            throw ValidationError("tracks file: dynamic track " + std::to_string(r.id) + " has no point file");
        }
        const SemanticPointCloud cloud = read_point_cloud(priors_dir / r.points_file);
        std::vector<Vec3> pts;
        std::vector<std::optional<Vec3>> colors;
        for (const auto& p : cloud.points) {
            pts.push_back(p.position);
            colors.push_back(p.color);
        }
        ObjectTrack t;
        t.id = r.id;
        t.frames = r.frames;
        t.centroids = r.centroids;
        t.dynamic = true;
        model.vehicles.push_back(init_vehicle(t, pts, colors, r.vehicle_class, m.frame_count(), config.init));
    }
    return model;
}

Dataset load_dataset(const SceneManifest& m) {
    const CameraManifest cams = read_camera_manifest(m.camera_manifest);
    Dataset data;
    data.frame_count = m.frame_count();
    for (const CameraEntry& e : cams.entries) {
        if (e.frame >= m.frame_count()) {
            throw ValidationError("camera entry for frame " + std::to_string(e.frame) + " beyond the grid sequence");
        }
        TrainView v;
        v.frame = e.frame;
        v.camera_id = e.camera_id;
        v.camera = e.camera;
        v.image = read_png(m.image_dir / e.image);
        if (v.image.width != e.camera.width || v.image.height != e.camera.height) {
            throw ValidationError("image '" + (m.image_dir / e.image).string() + "' does not match its camera size");
        }
        v.holdout = is_holdout(m, e.camera_id);
        data.views.push_back(std::move(v));
    }
    return data;
}

TrainSummary cmd_train(const fs::path& manifest_path, const fs::path& priors_dir, const PipelineConfig& config,
                       const fs::path& out_dir) {
    const SceneManifest m = read_scene_manifest(manifest_path);
    TrainConfig tc = config.train;
    tc.render.background = m.background;
    tc.validate();
    SceneModel model = initial_scene(m, priors_dir, config);
    const Dataset data = load_dataset(m);

    TrainSummary summary;
    summary.initial_gaussians = model.total_gaussians();
    const fs::path ckpt = out_dir / "checkpoints";
    save_scene(ckpt / checkpoint_name(0), model);
    write_text(out_dir / "config_used.json", config_to_json(config).dump(2) + "\n");

    TrainCallbacks callbacks;
    callbacks.on_checkpoint = [&](int it, const SceneModel& s) { save_scene(ckpt / checkpoint_name(it), s); };
    summary.result = train(data, model, tc, callbacks);
    write_text(out_dir / "metrics.csv", metrics_csv(summary.result.log));
    summary.final_gaussians = model.total_gaussians();
    if (summary.result.aborted) {
        save_scene(ckpt / "last_good", model);
        throw TrainingAbort(summary.result.abort_reason);
    }
    save_scene(out_dir / "scene", model);
    return summary;
}

// ---------------------------------------------------------------------------

RenderSummary cmd_render(const fs::path& scene_dir, const fs::path& camera_manifest, const RenderRequest& req,
                         const fs::path& out_dir) {
    const SceneModel model = load_scene(scene_dir);
    const CameraManifest cams = read_camera_manifest(camera_manifest);
    RenderSummary summary;

    std::vector<const CameraEntry*> todo;
    auto camera_wanted = [&](int id) {
        return !req.cameras || std::find(req.cameras->begin(), req.cameras->end(), id) != req.cameras->end();
    };
    if (req.frames) {
        for (uint32_t f : *req.frames) {
            bool any = false;
            for (const CameraEntry& e : cams.entries) {
                if (e.frame == f && camera_wanted(e.camera_id)) {
                    todo.push_back(&e);
                    any = true;
                }
            }
            if (!any) {
                summary.errors.push_back("frame " + std::to_string(f) + ": no camera pose in the manifest");
            }
        }
    } else {
        for (const CameraEntry& e : cams.entries) {
            if (camera_wanted(e.camera_id)) {
                todo.push_back(&e);
            }
        }
    }

    RenderSettings settings;
    settings.background = model.background;
    settings.threads = req.threads;
    settings.render_semantics = req.semantic;
    fs::create_directories(out_dir);
    for (const CameraEntry* e : todo) {
        const std::string name = image_name(e->camera_id, e->frame);
        try {
            const RenderOutput out = render(assemble(model, e->frame), e->camera, settings);
            write_png(out_dir / name, out.rgb);
            summary.written.push_back(name);
            if (req.depth) {
                const double max_depth = *std::max_element(out.depth.data.begin(), out.depth.data.end());
                Image d = out.depth;
                for (double& v : d.data) {
                    v = max_depth > 0.0 ? v / max_depth : 0.0;
                }
                fs::create_directories(out_dir / "depth");
                write_png16(out_dir / "depth" / name, d);
            }
            if (req.semantic) {
                Image labels(out.semantic.width, out.semantic.height, 1);
                for (int y = 0; y < labels.height; ++y) {
                    for (int x = 0; x < labels.width; ++x) {
                        int best = 0;
                        for (int c = 1; c < out.semantic.channels; ++c) {
                            if (out.semantic.at(x, y, c) > out.semantic.at(x, y, best)) {
                                best = c;
                            }
                        }
                        labels.at(x, y) = best / 255.0;
                    }
                }
                fs::create_directories(out_dir / "semantic");
                write_png(out_dir / "semantic" / name, labels);
            }
        } catch (const Error& err) {
            summary.errors.push_back(name + ": " + err.what());
        }
    }
    return summary;
}

EvalReport cmd_eval(const fs::path& rendered_dir, const fs::path& target_dir, const std::optional<fs::path>& mask_dir,
                    const fs::path& out_dir) {
    for (const fs::path& d : {rendered_dir, target_dir}) {
        if (!fs::is_directory(d)) {
            throw ValidationError("eval: '" + d.string() + "' is not a directory");
        }
    }
    if (mask_dir && !fs::is_directory(*mask_dir)) {
        throw ValidationError("eval: mask directory '" + mask_dir->string() + "' does not exist");
    }
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(rendered_dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".png") {
            names.push_back(entry.path().filename().string());
        }
    }
    std::sort(names.begin(), names.end());
    EvalReport report;
    for (const std::string& name : names) {
        if (!fs::exists(target_dir / name)) {
            report.errors.push_back(name + ": no counterpart in '" + target_dir.string() + "'");
            continue;
        }
        try {
            const Image x = read_png(rendered_dir / name);
            const Image y = read_png(target_dir / name);
            FrameEval f;
            f.name = name;
            f.psnr = psnr(x, y);
            f.ssim = ssim(x, y);
            if (mask_dir) {
                if (fs::exists(*mask_dir / name)) {
                    f.psnr_dym = psnr_dym(x, y, read_png(*mask_dir / name, false));
                } else {
                    report.errors.push_back(name + ": no mask in '" + mask_dir->string() + "'");
                }
            }
            report.add(std::move(f));
        } catch (const Error& e) {
            report.errors.push_back(name + ": " + e.what());
        }
    }
    if (names.empty()) {
        report.errors.push_back("no PNG files in '" + rendered_dir.string() + "'");
    }
    report.finalize();
    write_text(out_dir / "report.json", report.to_json());
    write_text(out_dir / "report.csv", report.to_csv());
    return report;
}

void cmd_synth(const SynthConfig& config, const fs::path& out_dir) {
    const SyntheticScene scene = make_synthetic(config);
    write_synthetic(scene, out_dir);
}

PipelineConfig resolve_config(const std::optional<fs::path>& config_file, const CliOverrides& flags) {
    PipelineConfig config;
    if (config_file) {
        config = load_config(*config_file, config);
    }
    if (flags.seed) {
        config.train.seed = *flags.seed;
    }
    if (flags.iterations) {
        config.train.iterations = *flags.iterations;
    }
    if (flags.threads) {
        config.train.render.threads = *flags.threads;
    }
    return config;
}

std::vector<uint32_t> parse_index_list(const std::string& text) {
    std::set<uint32_t> out;
    size_t pos = 0;
    auto parse_uint = [&](const std::string& s) -> uint32_t {
        if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos || s.size() > 9) {
            throw ValidationError("invalid index list '" + text + "'");
        }
        return static_cast<uint32_t>(std::stoul(s));
    };
    while (pos <= text.size()) {
        const size_t comma = text.find(',', pos);
        const std::string item = text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        const size_t dash = item.find('-');
        if (dash == std::string::npos) {
            out.insert(parse_uint(item));
        } else {
            const uint32_t a = parse_uint(item.substr(0, dash));
            const uint32_t b = parse_uint(item.substr(dash + 1));
            if (b < a) {
                throw ValidationError("invalid range in '" + text + "'");
            }
            for (uint32_t i = a; i <= b; ++i) {
                out.insert(i);
            }
        }
        if (comma == std::string::npos) {
            break;
        }
        pos = comma + 1;
    }
    return {out.begin(), out.end()};
}

}  // namespace ogs
