// ogs: occupancy-prior Gaussian splatting pipeline.
//
// Exit codes: 0 success, 1 validation error, 2 runtime abort.

#include "ogs/pipeline.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <iostream>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

struct Common {
    std::string config;
    std::optional<uint64_t> seed;
    std::optional<int> iterations;
    std::optional<int> threads;
    std::string output;
};

ogs::PipelineConfig pipeline_config(const Common& c) {
    std::optional<ogs::fs::path> file;
    if (!c.config.empty()) {
        file = c.config;
    }
    return ogs::resolve_config(file, {c.seed, c.iterations, c.threads});
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Gaussian splatting with occupancy-grid priors"};
    app.require_subcommand(1);

    Common common;
    auto add_common = [&](CLI::App* cmd, bool training_flags) {
        cmd->add_option("--config", common.config, "JSON config file")->check(CLI::ExistingFile);
        cmd->add_option("--output", common.output, "Output directory")->required();
        cmd->add_option("--threads", common.threads, "Worker threads")->check(CLI::PositiveNumber);
        if (training_flags) {
            cmd->add_option("--seed", common.seed, "Random seed");
            cmd->add_option("--iterations", common.iterations, "Training iterations")->check(CLI::NonNegativeNumber);
        }
    };

    std::string manifest;
    auto* convert = app.add_subcommand("convert", "Occupancy grids to prior point clouds and vehicle tracks");
    convert->add_option("manifest", manifest, "Scene manifest")->required()->check(CLI::ExistingFile);
    add_common(convert, false);

    std::string priors;
    auto* train = app.add_subcommand("train", "Optimize the scene against the camera images");
    train->add_option("manifest", manifest, "Scene manifest")->required()->check(CLI::ExistingFile);
    train->add_option("--priors", priors, "Directory written by convert")->required()->check(CLI::ExistingDirectory);
    add_common(train, true);

    std::string scene_dir, cameras, frames, camera_ids;
    bool depth = false, semantic = false;
    auto* render = app.add_subcommand("render", "Render a scene checkpoint");
    render->add_option("scene", scene_dir, "Scene checkpoint directory")->required()->check(CLI::ExistingDirectory);
    render->add_option("--cameras", cameras, "Camera manifest")->required()->check(CLI::ExistingFile);
    render->add_option("--frames", frames, "Frame list, e.g. 0,5,7-9");
    render->add_option("--camera-ids", camera_ids, "Camera id list");
    render->add_flag("--depth", depth, "Also write 16-bit depth PNGs");
    render->add_flag("--semantic", semantic, "Also write class-id PNGs");
    add_common(render, false);

    std::string rendered, target, masks;
    auto* eval = app.add_subcommand("eval", "Compare rendered images against targets");
    eval->add_option("rendered", rendered, "Rendered image directory")->required();
    eval->add_option("target", target, "Target image directory")->required();
    eval->add_option("--masks", masks, "Moving-vehicle mask directory");
    eval->add_option("--output", common.output, "Report directory")->required();

    std::string synth_config;
    std::optional<uint32_t> frame_count;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic driving dataset");
    synth->add_option("--config", synth_config, "Synthetic scene JSON")->check(CLI::ExistingFile);
    synth->add_option("--seed", common.seed, "Random seed");
    synth->add_option("--frame-count", frame_count, "Number of frames")->check(CLI::PositiveNumber);
    synth->add_option("--threads", common.threads, "Worker threads")->check(CLI::PositiveNumber);
    synth->add_option("--output", common.output, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitValidation;
    }

    try {
        if (*convert) {
            const auto summary = ogs::cmd_convert(manifest, pipeline_config(common), common.output);
            std::cout << "static points: " << summary.static_points << ", tracks: " << summary.tracks
                      << ", dynamic vehicles: " << summary.dynamic_ids.size() << '\n';
        } else if (*train) {
            const auto summary = ogs::cmd_train(manifest, priors, pipeline_config(common), common.output);
            const auto& log = summary.result.log;
            std::cout << "iterations: " << summary.result.iterations_completed
                      << ", gaussians: " << summary.initial_gaussians << " -> " << summary.final_gaussians;
            if (!log.empty()) {
                std::cout << ", holdout PSNR: " << log.front().psnr_holdout << " -> " << log.back().psnr_holdout;
            }
            std::cout << '\n';
        } else if (*render) {
            ogs::RenderRequest req;
            if (!frames.empty()) {
                req.frames = ogs::parse_index_list(frames);
            }
            if (!camera_ids.empty()) {
                std::vector<int> ids;
                for (uint32_t id : ogs::parse_index_list(camera_ids)) {
                    ids.push_back(static_cast<int>(id));
                }
                req.cameras = ids;
            }
            req.depth = depth;
            req.semantic = semantic;
            req.threads = common.threads.value_or(1);
            const auto summary = ogs::cmd_render(scene_dir, cameras, req, common.output);
            std::cout << "rendered " << summary.written.size() << " images\n";
            for (const auto& e : summary.errors) {
                std::cerr << "error: " << e << '\n';
            }
            return summary.errors.empty() ? kExitOk : kExitRuntime;
        } else if (*eval) {
            std::optional<ogs::fs::path> mask_dir;
            if (!masks.empty()) {
                mask_dir = masks;
            }
            const auto report = ogs::cmd_eval(rendered, target, mask_dir, common.output);
            std::cout << "frames: " << report.frames.size() << ", PSNR: " << report.psnr << ", SSIM: " << report.ssim;
            if (report.psnr_dym) {
                std::cout << ", PSNR-dym: " << *report.psnr_dym;
            }
            std::cout << '\n';
            for (const auto& e : report.errors) {
                std::cerr << "error: " << e << '\n';
            }
            return report.errors.empty() ? kExitOk : kExitValidation;
        } else if (*synth) {
            ogs::SynthConfig config;
            if (!synth_config.empty()) {
                ogs::apply_synth_config(ogs::read_json(synth_config), config);
            }
            if (common.seed) {
                config.seed = *common.seed;
            }
            if (frame_count) {
                config.frames = *frame_count;
            }
            if (common.threads) {
                config.threads = *common.threads;
            }
            ogs::cmd_synth(config, common.output);
            std::cout << "wrote " << config.frames << " frames, " << config.vehicles.size() << " vehicles to "
                      << common.output << '\n';
        }
    } catch (const ogs::ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitOk;
}
