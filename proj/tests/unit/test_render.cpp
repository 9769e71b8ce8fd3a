#include "ogs/harness.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

using namespace ogs;
using namespace ogs::testing;

namespace {

Splat2D splat(const Vec2& mean, const Mat2& cov, double opacity, const Vec3& color, double depth, uint32_t source) {
    Splat2D s;
    s.mean = mean;
    s.cov = cov;
    s.conic = cov.inverse();
    s.opacity = opacity;
    s.color = color;
    s.depth = depth;
    s.source = source;
    return s;
}

}  // namespace

TEST(Projection, MeanMatchesHomogeneousProjection) {
    Rng rng(1);
    for (int n = 0; n < 200; ++n) {
        const Camera cam = random_camera(rng, 100, 80);
        const Vec3 p = unproject(cam, uniform(rng, 0, 100), uniform(rng, 0, 80), uniform(rng, 1, 20));
        Eigen::Matrix<double, 3, 4> rt;
        rt.leftCols<3>() = quat_to_rotmat(cam.world_to_camera.rotation);
        rt.col(3) = cam.world_to_camera.translation;
        const Vec3 h = cam.intrinsics() * rt * p.homogeneous();
        const auto s = project_gaussian(p, Mat3::Identity() * 0.01, cam);
        ASSERT_TRUE(s);
        EXPECT_LT((s->mean - h.hnormalized()).norm(), 1e-9);
        EXPECT_NEAR(s->depth, h.z(), 1e-9);
    }
}

TEST(Projection, CovarianceIsEwaWithLowPass) {
    Camera cam = look_at_camera(Vec3::Zero(), Vec3(1, 0, 0), 64, 64, 50.0);
    const Vec3 p(4, -0.5, 0.3);
    const Mat3 cov = build_covariance(Vec3(0.2, 0.1, 0.05), UnitQuaternion::from_axis_angle(Vec3(1, 2, 3).normalized(), 0.7));
    const Vec3 t = cam.to_camera(p);
    Eigen::Matrix<double, 2, 3> j;
    j << 50 / t.z(), 0, -50 * t.x() / (t.z() * t.z()), 0, 50 / t.z(), -50 * t.y() / (t.z() * t.z());
    const Mat2 expected = j * cam.rotation() * cov * cam.rotation().transpose() * j.transpose() + 0.3 * Mat2::Identity();
    const auto s = project_gaussian(p, cov, cam, 0.3);
    ASSERT_TRUE(s);
    EXPECT_LT((s->cov - expected).norm(), 1e-12);
    EXPECT_LT((s->conic * s->cov - Mat2::Identity()).norm(), 1e-12);
}

TEST(Projection, JacobianClampedFarOutsideView) {
    Camera cam = look_at_camera(Vec3::Zero(), Vec3(1, 0, 0), 64, 64, 50.0);
    // x/z = 10 in camera coordinates, far beyond 1.3x the half-width
    const Vec3 t(10.0, 0.0, 1.0);
    const JacobianPoint jp = jacobian_point(cam, t);
    EXPECT_TRUE(jp.clamped_x);
    EXPECT_FALSE(jp.clamped_y);
    EXPECT_NEAR(jp.point.x(), 1.3 * (64 - 0.5 - cam.cx) / 50.0, 1e-15);
    EXPECT_FALSE(jacobian_point(cam, Vec3(0.1, 0.1, 1.0)).clamped_x);
}

TEST(Projection, CulledOutsideClipRange) {
    Camera cam = look_at_camera(Vec3::Zero(), Vec3(1, 0, 0), 32, 32, 30.0);
    cam.near = 0.5;
    cam.far = 10.0;
    EXPECT_FALSE(project_gaussian(Vec3(0.4, 0, 0), Mat3::Identity(), cam));
    EXPECT_FALSE(project_gaussian(Vec3(-1, 0, 0), Mat3::Identity(), cam));
    EXPECT_FALSE(project_gaussian(Vec3(10.5, 0, 0), Mat3::Identity(), cam));
    EXPECT_TRUE(project_gaussian(Vec3(0.5, 0, 0), Mat3::Identity(), cam));
}

TEST(Extent, NoSkippedAlphaOutsideBoundingBox) {
    Rng rng(2);
    const Camera cam = look_at_camera(Vec3::Zero(), Vec3(1, 0, 0), 96, 96, 80.0);
    const RenderSettings rs;
    for (int n = 0; n < 300; ++n) {
        Mat2 a = Mat2::Random();
        Splat2D s = splat(Vec2(uniform(rng, -10, 106), uniform(rng, -10, 106)),
                          a * a.transpose() * uniform(rng, 1, 60) + 0.3 * Mat2::Identity(), uniform(rng, 0.001, 1.0),
                          Vec3::Ones(), 1.0, 0);
        compute_splat_extent(s, cam, rs.alpha_min);
        for (int y = 0; y < 96; ++y) {
            for (int x = 0; x < 96; ++x) {
                const bool inside = x >= s.x_min && x <= s.x_max && y >= s.y_min && y <= s.y_max;
                const Vec2 d = Vec2(x, y) - s.mean;
                const double alpha = s.opacity * std::exp(-0.5 * d.dot(s.conic * d));
                if (!inside) {
                    ASSERT_LT(alpha, rs.alpha_min);
                }
            }
        }
    }
}

TEST(Composite, OneSplatClosedForm) {
    RenderSettings rs;
    rs.background = Vec3(0.2, 0.3, 0.4);
    const Mat2 cov = (Mat2() << 4.0, 1.0, 1.0, 3.0).finished();
    const Splat2D s = splat(Vec2(5, 5), cov, 0.8, Vec3(0.9, 0.1, 0.5), 2.0, 0);
    const Vec2 px(6, 4);
    const Vec2 d = px - s.mean;
    const double det = 4.0 * 3.0 - 1.0;
    const double power = -0.5 * (3.0 * d.x() * d.x() - 2.0 * 1.0 * d.x() * d.y() + 4.0 * d.y() * d.y()) / det;
    const double alpha = 0.8 * std::exp(power);
    const PixelResult r = composite_pixel(std::vector<Splat2D>{s}, px, rs);
    for (int c = 0; c < 3; ++c) {
        EXPECT_NEAR(r.color[c], alpha * s.color[c] + (1 - alpha) * rs.background[c], 1e-12);
    }
    EXPECT_NEAR(r.transmittance, 1 - alpha, 1e-12);
    EXPECT_NEAR(r.depth, alpha * 2.0, 1e-12);
}

TEST(Composite, TwoSplatClosedFormAndCap) {
    RenderSettings rs;
    rs.background = Vec3(1, 1, 1);
    const Splat2D a = splat(Vec2(0, 0), Mat2::Identity() * 2, 0.6, Vec3(1, 0, 0), 1.0, 0);
    const Splat2D b = splat(Vec2(1, 0), Mat2::Identity() * 3, 1.0, Vec3(0, 1, 0), 2.0, 1);
    const Vec2 px(1, 0);
    const double a1 = 0.6 * std::exp(-0.5 * 1.0 / 2.0);
    const double a2 = 0.99;  // opacity 1 at the center is capped
    const PixelResult r = composite_pixel(std::vector<Splat2D>{a, b}, px, rs);
    const Vec3 expected = a1 * a.color + (1 - a1) * a2 * b.color + (1 - a1) * (1 - a2) * rs.background;
    EXPECT_LT((r.color - expected).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR(r.transmittance, (1 - a1) * (1 - a2), 1e-12);
    EXPECT_EQ(r.contributors, 2);
}

TEST(Composite, FaintSplatIsSkipped) {
    RenderSettings rs;
    const Splat2D faint = splat(Vec2(0, 0), Mat2::Identity(), 1.0 / 256.0, Vec3(1, 1, 1), 1.0, 0);
    const PixelResult r = composite_pixel(std::vector<Splat2D>{faint}, Vec2(0, 0), rs);
    EXPECT_EQ(r.contributors, 0);
    EXPECT_EQ(r.transmittance, 1.0);
}

TEST(Render, TiledMatchesReferenceOracle) {
    for (int n = 0; n < 6; ++n) {
        Rng rng(100 + static_cast<uint64_t>(n));
        const Camera cam = random_camera(rng, 72, 56);
        RandomSceneOptions opts;
        opts.street = 150;
        opts.vehicles = 2;
        opts.per_vehicle = 20;
        const SceneModel model = random_scene(rng, cam, 1, opts);
        RenderSettings rs;
        rs.background = model.background;
        const AssembledScene scene = assemble(model, 1);
        const RenderOutput tiled = render(scene, cam, rs);
        const RenderOutput ref = reference_render(scene, cam, rs);
        EXPECT_LE(max_abs_diff(tiled.rgb, ref.rgb), 1e-6);
        EXPECT_LE(max_abs_diff(tiled.transmittance, ref.transmittance), 1e-6);
    }
}

TEST(Render, ThreadCountDoesNotChangeOutputOrGradients) {
    Rng rng(5);
    const Camera cam = random_camera(rng, 70, 50);
    RandomSceneOptions opts;
    opts.street = 200;
    const SceneModel model = random_scene(rng, cam, 0, opts);
    const AssembledScene scene = assemble(model, 0);
    RenderSettings one, four;
    four.threads = 4;
    EXPECT_EQ(render(scene, cam, one).rgb.data, render(scene, cam, four).rgb.data);
    Image g(70, 50, 3);
    for (double& v : g.data) {
        v = uniform(rng, -1, 1);
    }
    const BackwardResult b1 = backward(model, scene, cam, one, g);
    const BackwardResult b4 = backward(model, scene, cam, four, g);
    EXPECT_EQ(b1.params.street.positions, b4.params.street.positions);
    EXPECT_EQ(b1.params.street.appearance, b4.params.street.appearance);
    EXPECT_EQ(b1.params.vehicles[0].delta_translation, b4.params.vehicles[0].delta_translation);
}

TEST(Render, SemanticChannelsSumToCoverage) {
    Rng rng(6);
    const Camera cam = random_camera(rng, 40, 30);
    RandomSceneOptions opts;
    opts.street = 60;
    const SceneModel model = random_scene(rng, cam, 0, opts);
    RenderSettings rs;
    rs.render_semantics = true;
    const RenderOutput out = render(assemble(model, 0), cam, rs);
    ASSERT_EQ(out.semantic.channels, model.num_classes);
    for (int y = 0; y < 30; ++y) {
        for (int x = 0; x < 40; ++x) {
            double sum = 0.0;
            for (int c = 0; c < model.num_classes; ++c) {
                sum += out.semantic.at(x, y, c);
            }
            EXPECT_NEAR(sum, 1.0 - out.transmittance.at(x, y), 1e-9);
        }
    }
}

TEST(Render, EmptySceneIsBackground) {
    Camera cam = look_at_camera(Vec3::Zero(), Vec3(1, 0, 0), 20, 10, 10);
    SceneModel model;
    model.street.sh_degree = 0;
    model.street.params = GaussianSet(0, 3, 1);
    RenderSettings rs;
    rs.background = Vec3(0.1, 0.2, 0.3);
    const RenderOutput out = render(assemble(model, 0), cam, rs);
    EXPECT_DOUBLE_EQ(out.rgb.at(3, 4, 2), 0.3);
    EXPECT_DOUBLE_EQ(out.transmittance.at(19, 9), 1.0);
}

TEST(Bins, ListsSortedByDepthThenSource) {
    Rng rng(7);
    const Camera cam = random_camera(rng, 64, 64);
    RandomSceneOptions opts;
    opts.street = 100;
    const SceneModel model = random_scene(rng, cam, 0, opts);
    auto splats = project_scene(assemble(model, 0), cam, RenderSettings{});
    splats[1].depth = splats[0].depth;  // force a tie
    const TileBins bins = bin_tiles(splats, cam, 16);
    EXPECT_EQ(bins.tiles_x, 4);
    for (const auto& list : bins.lists) {
        for (size_t k = 1; k < list.size(); ++k) {
            const Splat2D& a = splats[list[k - 1]];
            const Splat2D& b = splats[list[k]];
            EXPECT_TRUE(a.depth < b.depth || (a.depth == b.depth && a.source < b.source));
        }
    }
}
