#pragma once

#include "ogs/formats.hpp"
#include "ogs/harness.hpp"

#include <optional>
#include <string>
#include <vector>

namespace ogs {

// Library entry points behind the `ogs` subcommands. Each validates its
// inputs before writing anything; failures throw ValidationError (bad input),
// TrainingAbort or Error (runtime).

struct ConvertSummary {
    size_t static_points = 0;
    size_t tracks = 0;
    std::vector<int> dynamic_ids;
};

/// Writes static.ply, vehicle_<id>.ply per dynamic track and tracks.json.
ConvertSummary cmd_convert(const fs::path& manifest, const PipelineConfig& config, const fs::path& out_dir);

struct TrainSummary {
    TrainResult result;
    size_t initial_gaussians = 0;
    size_t final_gaussians = 0;
};

/// Initializes the scene from the convert outputs in `priors_dir`, trains,
/// and writes checkpoints/iter_<n>/, scene/ and metrics.csv under `out_dir`.
/// An aborted run leaves checkpoints/last_good/ and throws TrainingAbort.
TrainSummary cmd_train(const fs::path& manifest, const fs::path& priors_dir, const PipelineConfig& config,
                       const fs::path& out_dir);

/// Builds the initial scene model from convert outputs.
SceneModel initial_scene(const SceneManifest& manifest, const fs::path& priors_dir, const PipelineConfig& config);

/// Camera entries with their images; cameras listed as held out are flagged.
Dataset load_dataset(const SceneManifest& manifest);

struct RenderRequest {
    std::optional<std::vector<uint32_t>> frames;  // all frames when empty
    std::optional<std::vector<int>> cameras;      // all cameras when empty
    bool depth = false;
    bool semantic = false;
    int threads = 1;
};

struct RenderSummary {
    std::vector<std::string> written;
    std::vector<std::string> errors;  // per-frame failures
};

/// One 8-bit PNG per camera entry; depth as 16-bit PNG normalized by the
/// image's maximum depth, semantics as 8-bit class ids.
RenderSummary cmd_render(const fs::path& scene_dir, const fs::path& camera_manifest, const RenderRequest& request,
                         const fs::path& out_dir);

/// Compares every PNG in `rendered_dir` against the same name in
/// `target_dir`; masks (same names) enable PSNR-dym. Writes report.json and
/// report.csv to `out_dir`.
EvalReport cmd_eval(const fs::path& rendered_dir, const fs::path& target_dir,
                    const std::optional<fs::path>& mask_dir, const fs::path& out_dir);

void cmd_synth(const SynthConfig& config, const fs::path& out_dir);

struct CliOverrides {
    std::optional<uint64_t> seed;
    std::optional<int> iterations;
    std::optional<int> threads;
};

/// Built-in defaults, then the config file, then command-line flags.
PipelineConfig resolve_config(const std::optional<fs::path>& config_file, const CliOverrides& flags);

/// Parses "0,5,7-9" into a sorted list of unique values.
std::vector<uint32_t> parse_index_list(const std::string& text);

}  // namespace ogs
