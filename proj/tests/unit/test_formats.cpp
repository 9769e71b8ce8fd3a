#include "ogs/pipeline.hpp"
#include "support.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <filesystem>

using namespace ogs;
using namespace ogs::testing;

namespace {

fs::path fresh_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST(CameraManifestFormat, RoundTrip) {
    Rng rng(1);
    CameraManifest m;
    for (uint32_t f = 0; f < 2; ++f) {
        for (int c = 0; c < 3; ++c) {
            CameraEntry e;
            e.frame = f;
            e.camera_id = c;
            e.camera = random_camera(rng, 40 + c, 30);
            e.image = image_name(c, f);
            m.entries.push_back(e);
        }
    }
    const auto dir = fresh_dir("ogs_test_cameras");
    write_camera_manifest(dir / "cameras.json", m);
    const CameraManifest back = read_camera_manifest(dir / "cameras.json");
    ASSERT_EQ(back.entries.size(), 6u);
    for (size_t i = 0; i < 6; ++i) {
        const Camera& a = m.entries[i].camera;
        const Camera& b = back.entries[i].camera;
        EXPECT_EQ(b.width, a.width);
        EXPECT_DOUBLE_EQ(b.fx, a.fx);
        EXPECT_LT((b.world_to_camera.matrix() - a.world_to_camera.matrix()).norm(), 1e-12);
        EXPECT_EQ(back.entries[i].image, m.entries[i].image);
    }
    ASSERT_NE(back.find(1, 2), nullptr);
    EXPECT_EQ(back.find(1, 2)->camera.width, 42);
    EXPECT_EQ(back.find(2, 0), nullptr);

    auto j = read_json(dir / "cameras.json");
    j["frames"].push_back(j["frames"][0]);
    write_text(dir / "dup.json", j.dump());
    EXPECT_THROW(read_camera_manifest(dir / "dup.json"), ValidationError);
    write_text(dir / "bad.json", R"({"format": "other", "frames": []})");
    EXPECT_THROW(read_camera_manifest(dir / "bad.json"), ValidationError);
    EXPECT_THROW(read_camera_manifest(dir / "missing.json"), ValidationError);
}

TEST(SceneManifestFormat, ValidatesReferences) {
    const auto dir = fresh_dir("ogs_test_manifest");
    fs::create_directories(dir / "images");
    write_text(dir / "cameras.json", R"({"format": "ogs-cameras-1", "frames": []})");
    write_text(dir / "g0.bin", "x");
    write_text(dir / "g1.bin", "x");
    SceneManifest m;
    m.base_dir = dir;
    m.grids = {dir / "g0.bin", dir / "g1.bin"};
    m.camera_manifest = dir / "cameras.json";
    m.image_dir = dir / "images";
    m.classes = {"unlabeled", "road", "car"};
    m.vehicle_classes = {2};
    m.holdout_cameras = {1};
    m.background = Vec3(0.1, 0.2, 0.3);
    write_scene_manifest(dir / "manifest.json", m);
    const SceneManifest back = read_scene_manifest(dir / "manifest.json");
    EXPECT_EQ(back.frame_count(), 2u);
    EXPECT_EQ(fs::weakly_canonical(back.grids[1]), fs::weakly_canonical(dir / "g1.bin"));
    EXPECT_EQ(back.vehicle_classes, std::vector<int>{2});
    EXPECT_EQ(back.holdout_cameras, std::vector<int>{1});
    EXPECT_EQ(back.background, m.background);
    EXPECT_EQ(read_json(dir / "manifest.json")["cameras"], "cameras.json");

    auto j = read_json(dir / "manifest.json");
    j["vehicle_classes"] = {3};
    write_text(dir / "m1.json", j.dump());
    EXPECT_THROW(read_scene_manifest(dir / "m1.json"), ValidationError);
    j = read_json(dir / "manifest.json");
    j["grids"][1]["frame"] = 5;
    write_text(dir / "m2.json", j.dump());
    EXPECT_THROW(read_scene_manifest(dir / "m2.json"), ValidationError);
    j = read_json(dir / "manifest.json");
    j["grids"][0]["path"] = "nope.bin";
    write_text(dir / "m3.json", j.dump());
    EXPECT_THROW(read_scene_manifest(dir / "m3.json"), ValidationError);
}

TEST(Config, KeysApplyAndUnknownKeysFail) {
    PipelineConfig c;
    apply_config(nlohmann::json{{"lambda", 0.5}, {"iterations", 12}, {"rotation_composition", "literal"}}, c);
    EXPECT_EQ(c.train.lambda, 0.5);
    EXPECT_EQ(c.train.iterations, 12);
    EXPECT_EQ(c.composition, RotationComposition::Literal);
    EXPECT_THROW(apply_config(nlohmann::json{{"lamda", 0.5}}, c), ValidationError);
    EXPECT_THROW(apply_config(nlohmann::json{{"iterations", "many"}}, c), ValidationError);
    EXPECT_THROW(apply_config(nlohmann::json{{"rotation_composition", "left"}}, c), ValidationError);
    EXPECT_THROW(apply_config(nlohmann::json::array(), c), ValidationError);

    PipelineConfig back;
    apply_config(config_to_json(c), back);
    EXPECT_EQ(config_to_json(back), config_to_json(c));
}

TEST(Config, FlagsOverrideFileOverrideDefaults) {
    const auto dir = fresh_dir("ogs_test_config");
    write_text(dir / "c.json", R"({"iterations": 50, "seed": 9, "lambda": 0.3})");
    const PipelineConfig defaults;
    const PipelineConfig file = resolve_config(dir / "c.json", {});
    EXPECT_EQ(file.train.iterations, 50);
    EXPECT_EQ(file.train.seed, 9u);
    EXPECT_EQ(file.train.lr.opacity, defaults.train.lr.opacity);
    const PipelineConfig flags = resolve_config(dir / "c.json", {uint64_t{4}, 7, 2});
    EXPECT_EQ(flags.train.iterations, 7);
    EXPECT_EQ(flags.train.seed, 4u);
    EXPECT_EQ(flags.train.render.threads, 2);
    EXPECT_EQ(flags.train.lambda, 0.3);
    write_text(dir / "broken.json", "{\"iterations\": ");
    EXPECT_THROW(resolve_config(dir / "broken.json", {}), ValidationError);
}

TEST(PointCloudFormat, RoundTrip) {
    SemanticPointCloud cloud;
    cloud.points.push_back({Vec3(1.25, -2, 3e-3), Vec3(0.5, 0.25, 1.0), 2, PointSource::Occupancy});
    cloud.points.push_back({Vec3(-7, 0, 1), std::nullopt, 0, PointSource::Sfm});
    const auto dir = fresh_dir("ogs_test_cloud");
    write_point_cloud(dir / "c.ply", cloud);
    const SemanticPointCloud back = read_point_cloud(dir / "c.ply");
    ASSERT_EQ(back.points.size(), 2u);
    EXPECT_EQ(back.points[0].position, cloud.points[0].position);
    ASSERT_TRUE(back.points[0].color);
    EXPECT_LT((*back.points[0].color - *cloud.points[0].color).norm(), 1e-7);
    EXPECT_FALSE(back.points[1].color);
    EXPECT_EQ(back.points[0].label, 2);
    EXPECT_EQ(back.points[1].source, PointSource::Sfm);
}

TEST(TracksFormat, RoundTrip) {
    TrackRecord t;
    t.id = 3;
    t.dynamic = true;
    t.vehicle_class = 4;
    t.frames = {0, 1, 3};
    t.centroids = {Vec3(1, 2, 3), Vec3(1.5, 2, 3), Vec3(2.5, 2, 3)};
    t.points_file = "vehicle_3.ply";
    const auto dir = fresh_dir("ogs_test_tracks");
    write_tracks(dir / "tracks.json", {t});
    const auto back = read_tracks(dir / "tracks.json");
    ASSERT_EQ(back.size(), 1u);
    EXPECT_EQ(back[0].id, 3);
    EXPECT_TRUE(back[0].dynamic);
    EXPECT_EQ(back[0].vehicle_class, 4);
    EXPECT_EQ(back[0].frames, t.frames);
    EXPECT_EQ(back[0].centroids, t.centroids);
    EXPECT_EQ(back[0].points_file, t.points_file);
}
