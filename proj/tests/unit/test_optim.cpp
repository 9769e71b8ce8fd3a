#include "ogs/optim.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

using namespace ogs;
using namespace ogs::testing;

namespace {

Image random_image(Rng& rng, int w, int h, int c = 3) {
    Image img(w, h, c);
    for (double& v : img.data) {
        v = uniform(rng, 0, 1);
    }
    return img;
}

// Direct per-window SSIM: Gaussian-weighted statistics for every valid 11x11
// window, no separable filtering.
double ssim_oracle(const Image& x, const Image& y) {
    double w1[11];
    double norm = 0.0;
    for (int i = 0; i < 11; ++i) {
        w1[i] = std::exp(-((i - 5) * (i - 5)) / (2 * 1.5 * 1.5));
        norm += w1[i];
    }
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    double total = 0.0;
    int count = 0;
    for (int ch = 0; ch < x.channels; ++ch) {
        for (int oy = 0; oy + 11 <= x.height; ++oy) {
            for (int ox = 0; ox + 11 <= x.width; ++ox) {
                double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
                for (int j = 0; j < 11; ++j) {
                    for (int i = 0; i < 11; ++i) {
                        const double w = w1[i] * w1[j] / (norm * norm);
                        const double a = x.at(ox + i, oy + j, ch), b = y.at(ox + i, oy + j, ch);
                        mx += w * a;
                        my += w * b;
                        sxx += w * a * a;
                        syy += w * b * b;
                        sxy += w * a * b;
                    }
                }
                const double vx = sxx - mx * mx, vy = syy - my * my, cxy = sxy - mx * my;
                total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                ++count;
            }
        }
    }
    return total / count;
}

}  // namespace

TEST(Ssim, MatchesDirectWindowOracle) {
    Rng rng(1);
    for (int n = 0; n < 5; ++n) {
        const Image x = random_image(rng, 23, 17);
        Image y = x;
        for (double& v : y.data) {
            v = std::clamp(v + uniform(rng, -0.3, 0.3), 0.0, 1.0);
        }
        EXPECT_NEAR(ssim(x, y), ssim_oracle(x, y), 1e-12);
    }
}

TEST(Ssim, IdentityAndRangeProperties) {
    Rng rng(2);
    for (int n = 0; n < 20; ++n) {
        const Image x = random_image(rng, 16, 16);
        const Image y = random_image(rng, 16, 16);
        EXPECT_NEAR(ssim(x, x), 1.0, 1e-12);
        const double d = (1.0 - ssim(x, y)) / 2.0;
        EXPECT_GE(d, 0.0);
        EXPECT_LE(d, 1.0);
    }
    EXPECT_THROW(ssim(Image(10, 20), Image(10, 20)), ValidationError);
    EXPECT_THROW(ssim(Image(20, 20), Image(20, 21)), ValidationError);
}

TEST(Loss, ZeroForIdenticalImages) {
    Rng rng(3);
    const Image x = random_image(rng, 20, 14);
    for (double lambda : {0.0, 0.2, 1.0}) {
        const LossResult r = loss(x, x, lambda);
        EXPECT_NEAR(r.value, 0.0, 1e-12);
    }
}

TEST(Loss, CombinesL1AndDssim) {
    Rng rng(4);
    const Image x = random_image(rng, 20, 14), y = random_image(rng, 20, 14);
    double l1 = 0.0;
    for (size_t i = 0; i < x.data.size(); ++i) {
        l1 += std::abs(x.data[i] - y.data[i]);
    }
    l1 /= static_cast<double>(x.data.size());
    const LossResult r = loss(x, y, 0.2);
    EXPECT_NEAR(r.l1, l1, 1e-12);
    EXPECT_NEAR(r.dssim, (1 - ssim_oracle(x, y)) / 2, 1e-12);
    EXPECT_NEAR(r.value, 0.8 * l1 + 0.2 * r.dssim, 1e-12);
}

TEST(Loss, GradientMatchesFiniteDifferences) {
    Rng rng(5);
    const Image x = random_image(rng, 15, 13), y = random_image(rng, 15, 13);
    const LossResult r = loss(x, y, 0.2);
    const SsimResult s = ssim_with_grad(x, y);
    EXPECT_NEAR(s.value, ssim(x, y), 1e-14);
    for (int n = 0; n < 60; ++n) {
        const size_t i = rng() % x.data.size();
        if (std::abs(x.data[i] - y.data[i]) < 1e-3) {
            continue;  // L1 kink
        }
        const double h = 1e-6;
        Image xp = x, xm = x;
        xp.data[i] += h;
        xm.data[i] -= h;
        const double numeric = (loss(xp, y, 0.2).value - loss(xm, y, 0.2).value) / (2 * h);
        EXPECT_NEAR(r.grad.data[i], numeric, 1e-7 + 1e-5 * std::abs(numeric));
        const double ns = (ssim(xp, y) - ssim(xm, y)) / (2 * h);
        EXPECT_NEAR(s.grad.data[i], ns, 1e-8 + 1e-5 * std::abs(ns));
    }
}

TEST(Adam, MatchesLiteralReference) {
    Rng rng(6);
    std::vector<double> p(7), ref(7);
    for (double& v : p) {
        v = uniform(rng, -1, 1);
    }
    ref = p;
    std::vector<double> m(7, 0.0), v(7, 0.0);
    AdamMoments mom;
    mom.resize(7);
    const double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-15;
    for (int step = 1; step <= 25; ++step) {
        std::vector<double> g(7);
        for (double& x : g) {
            x = uniform(rng, -2, 2);
        }
        adam_update(p, g, mom, lr, step);
        for (size_t i = 0; i < 7; ++i) {
            m[i] = b1 * m[i] + (1 - b1) * g[i];
            v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
            const double mh = m[i] / (1 - std::pow(b1, step));
            const double vh = v[i] / (1 - std::pow(b2, step));
            ref[i] -= lr * mh / (std::sqrt(vh) + eps);
        }
    }
    for (size_t i = 0; i < 7; ++i) {
        EXPECT_NEAR(p[i], ref[i], 1e-14);
        EXPECT_NEAR(mom.m[i], m[i], 1e-14);
    }
}

TEST(Adam, NonFiniteGradientAbortsBeforeAnyUpdate) {
    Rng rng(7);
    const Camera cam = random_camera(rng, 32, 32);
    RandomSceneOptions opts;
    opts.street = 5;
    opts.per_vehicle = 3;
    SceneModel model = random_scene(rng, cam, 0, opts);
    const SceneModel before = model;
    OptimizerState state = OptimizerState::for_model(model);
    SceneGradients g = SceneGradients::zeros_like(model);
    g.street.positions[0] = 1.0;
    g.vehicles[0].delta_translation[1] = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(adam_step(model, g, state, LearningRates{}, 1e-3), TrainingAbort);
    EXPECT_EQ(model.street.params.positions, before.street.params.positions);
    EXPECT_EQ(state.step, 0);
}

TEST(Adam, FrozenVehicleKeepsPose) {
    Rng rng(8);
    const Camera cam = random_camera(rng, 32, 32);
    RandomSceneOptions opts;
    opts.street = 2;
    opts.per_vehicle = 3;
    SceneModel model = random_scene(rng, cam, 0, opts);
    model.vehicles[0].frozen = true;
    const auto dt = model.vehicles[0].delta_translation;
    const double x0 = model.vehicles[0].params.positions[0];
    OptimizerState state = OptimizerState::for_model(model);
    SceneGradients g = SceneGradients::zeros_like(model);
    for (double& x : g.vehicles[0].delta_translation) {
        x = 1.0;
    }
    g.vehicles[0].params.positions[0] = 1.0;
    adam_step(model, g, state, LearningRates{}, 1e-3);
    EXPECT_EQ(model.vehicles[0].delta_translation, dt);
    EXPECT_LT(model.vehicles[0].params.positions[0], x0);  // Gaussians still train
    state.check_shapes(model);
}

TEST(Schedule, LogLinearPositionRate) {
    LearningRates lr;
    EXPECT_NEAR(position_lr_at(lr, 0, 100), 1.6e-4, 1e-18);
    EXPECT_NEAR(position_lr_at(lr, 100, 100), 1.6e-6, 1e-18);
    EXPECT_NEAR(position_lr_at(lr, 50, 100), std::sqrt(1.6e-4 * 1.6e-6), 1e-15);
}

TEST(Schedule, CameraExtent) {
    std::vector<Camera> cams(2);
    cams[0].world_to_camera.translation = Vec3(-2, 0, 0);  // center (2, 0, 0)
    cams[1].world_to_camera.translation = Vec3(2, 0, 0);
    EXPECT_NEAR(camera_extent(cams), 2.2, 1e-12);
    cams[1].world_to_camera.translation = Vec3(-2.1, 0, 0);
    EXPECT_NEAR(camera_extent(cams), 1.0, 1e-12);
}

TEST(Densify, CloneSplitAndPrune) {
    GaussianSet g(4, 3, 1);
    for (size_t i = 0; i < 4; ++i) {
        g.set_position(i, Vec3(static_cast<double>(i), 0, 0));
        g.set_rotation(i, Vec4(1, 0, 0, 0));
        g.opacity_logits[i] = logit(0.5);
    }
    g.set_log_scale(0, Vec3::Constant(std::log(0.005)));  // small: cloned
    g.set_log_scale(1, Vec3::Constant(std::log(0.5)));    // large: split
    g.set_log_scale(2, Vec3::Constant(std::log(0.5)));    // low gradient: kept
    g.set_log_scale(3, Vec3::Constant(std::log(0.005)));
    g.opacity_logits[3] = logit(0.001);  // pruned
    ModelOptimizerState st;
    st.reset_for(g);
    for (auto& m : st.moments) {
        std::fill(m.m.begin(), m.m.end(), 1.0);
    }
    st.grad_accum = {3e-4, 6e-4, 1e-4, 0.0};
    st.grad_count = {1, 2, 1, 0};
    TrainConfig cfg;
    Rng rng(9);
    const DensifyStats s = densify_and_prune(g, st, cfg, 1.0, rng);
    EXPECT_EQ(s.cloned, 1u);
    EXPECT_EQ(s.split, 1u);
    EXPECT_EQ(s.pruned, 1u);
    // 0, 2, clone of 0, two children of 1
    ASSERT_EQ(g.count, 5u);
    EXPECT_EQ(g.position(0), Vec3(0, 0, 0));
    EXPECT_EQ(g.position(1), Vec3(2, 0, 0));
    EXPECT_EQ(g.position(2), Vec3(0, 0, 0));
    for (size_t c : {3u, 4u}) {
        EXPECT_NEAR(g.scale(c)[0], 0.5 / 1.6, 1e-12);
        EXPECT_LT((g.position(c) - Vec3(1, 0, 0)).norm(), 0.5 * 6);
    }
    const auto& pos_m = st.moments[0].m;
    ASSERT_EQ(pos_m.size(), 15u);
    EXPECT_EQ(pos_m[3], 1.0);   // kept Gaussian 2 keeps its moment
    EXPECT_EQ(pos_m[6], 0.0);   // new entries start at zero
    EXPECT_EQ(st.grad_accum, std::vector<double>(5, 0.0));
}

TEST(Metrics, CsvHeaderAndRows) {
    MetricsRow r;
    r.iteration = 10;
    r.loss = 0.5;
    r.psnr_holdout = 21.25;
    r.gaussian_count = 42;
    const std::string csv = metrics_csv({r});
    EXPECT_EQ(csv, "iteration,loss,l1,dssim,psnr_holdout,gaussian_count,wall_ms\n10,0.5,0,0,21.25,42,0\n");
}

TEST(Config, ValidateRejectsBadValues) {
    TrainConfig c;
    EXPECT_NO_THROW(c.validate());
    c.lambda = 1.5;
    EXPECT_THROW(c.validate(), ValidationError);
    c = TrainConfig{};
    c.iterations = -1;
    EXPECT_THROW(c.validate(), ValidationError);
}

namespace {

Dataset tiny_dataset(const SceneModel& truth, Rng& rng) {
    Dataset d;
    d.frame_count = 2;
    for (uint32_t f = 0; f < 2; ++f) {
        for (int c = 0; c < 3; ++c) {
            TrainView v;
            v.frame = f;
            v.camera_id = c;
            v.camera = look_at_camera(Vec3(0, c - 1.0, 0), Vec3(5, 0, 0), 40, 32, 40);
            RenderSettings rs;
            rs.background = truth.background;
            v.image = render(assemble(truth, f), v.camera, rs).rgb;
            v.holdout = c == 1;
            d.views.push_back(v);
        }
    }
    (void)rng;
    return d;
}

}  // namespace

TEST(Train, ReducesLossAndIsDeterministic) {
    Rng rng(10);
    const Camera cam = look_at_camera(Vec3::Zero(), Vec3(5, 0, 0), 40, 32, 40);
    RandomSceneOptions opts;
    opts.street = 30;
    opts.per_vehicle = 6;
    opts.frame_count = 2;
    const SceneModel truth = random_scene(rng, cam, 0, opts);
    const Dataset data = tiny_dataset(truth, rng);
    SceneModel start = truth;
    for (double& p : start.street.params.positions) {
        p += uniform(rng, -0.05, 0.05);
    }
    for (double& a : start.street.params.appearance) {
        a *= 0.5;
    }
    TrainConfig cfg;
    cfg.iterations = 60;
    cfg.eval_interval = 25;
    cfg.densify_from = 1000;
    cfg.render.background = truth.background;
    SceneModel a = start, b = start;
    const TrainResult ra = train(data, a, cfg);
    const TrainResult rb = train(data, b, cfg);
    ASSERT_EQ(ra.log.size(), 4u);  // 0, 25, 50, 60
    EXPECT_EQ(ra.log.back().iteration, 60);
    EXPECT_EQ(metrics_csv(ra.log), metrics_csv(rb.log));
    EXPECT_GT(ra.log.back().psnr_holdout, ra.log.front().psnr_holdout);
    EXPECT_FALSE(ra.aborted);
    EXPECT_EQ(a.street.params.positions, b.street.params.positions);
}

TEST(Train, DensifyingRunsAreDeterministic) {
    Rng rng(12);
    const Camera cam = look_at_camera(Vec3::Zero(), Vec3(5, 0, 0), 40, 32, 40);
    RandomSceneOptions opts;
    opts.street = 30;
    opts.frame_count = 2;
    const SceneModel truth = random_scene(rng, cam, 0, opts);
    const Dataset data = tiny_dataset(truth, rng);
    TrainConfig cfg;
    cfg.iterations = 40;
    cfg.densify_from = 5;
    cfg.densify_interval = 10;
    cfg.densify_grad_threshold = 1e-5;
    cfg.render.threads = 3;
    SceneModel a = truth, b = truth;
    const TrainResult ra = train(data, a, cfg);
    const TrainResult rb = train(data, b, cfg);
    EXPECT_GT(a.street.params.count, truth.street.params.count);
    EXPECT_EQ(metrics_csv(ra.log), metrics_csv(rb.log));
    EXPECT_EQ(a.street.params.positions, b.street.params.positions);
}

TEST(Train, NonFiniteLossAbortsCleanly) {
    Rng rng(11);
    const Camera cam = look_at_camera(Vec3::Zero(), Vec3(5, 0, 0), 40, 32, 40);
    RandomSceneOptions opts;
    opts.street = 10;
    opts.frame_count = 2;
    const SceneModel truth = random_scene(rng, cam, 0, opts);
    Dataset data = tiny_dataset(truth, rng);
    for (TrainView& v : data.views) {
        v.image.at(3, 3, 1) = std::numeric_limits<double>::quiet_NaN();
    }
    SceneModel model = truth;
    TrainConfig cfg;
    cfg.iterations = 5;
    const TrainResult r = train(data, model, cfg);
    EXPECT_TRUE(r.aborted);
    EXPECT_EQ(r.iterations_completed, 0);
    EXPECT_EQ(model.street.params.positions, truth.street.params.positions);
}
