#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "rapose/evaldecode.hpp"
#include "run_config.hpp"

namespace rapose::cli {

enum ExitCode : int { kExitOk = 0, kExitRuntime = 1, kExitVerification = 2, kExitUsage = 64 };

/// Loads `dataset_cache` when it exists, otherwise renders and (if a cache path
/// is set) writes it.
std::vector<SyntheticSample> build_dataset(const RunConfig& cfg, int input_h, int input_w, int num_keypoints);

struct TrainOutcome {
    PoseNet<float> model;
    TrainResult result;
    double initial_mse = 0;
    double final_mse = 0;
};

/// Model init, training and before/after MSE without touching the filesystem
/// (beyond the optional dataset cache).
TrainOutcome train_run(const RunConfig& cfg, std::span<const SyntheticSample> dataset,
                       const TrainCallbacks& callbacks = {});

/// Resolves `oks_constants` for a K-keypoint model.
std::vector<double> resolve_oks_constants(const RunConfig& cfg, int num_keypoints);

ApResult evaluate_model(const PoseNet<float>& model, std::span<const SyntheticSample> dataset, const RunConfig& cfg,
                        std::vector<PosePrediction>* predictions = nullptr);

struct AblationRow {
    bool attention = true;
    HeadKind head = HeadKind::gpr;
    bool cutout = true;
    std::size_t params = 0;
    double final_loss = 0;
    double mean_ap = 0;
};

std::vector<AblationRow> run_ablation(const RunConfig& cfg, std::ostream* progress = nullptr);
void write_ablation_table(std::ostream& os, const std::vector<AblationRow>& rows);

int cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_eval(const RunConfig& cfg, const std::string& checkpoint, std::ostream& out, std::ostream& err);
/// Scores an existing prediction document against `cfg.annotations`; no model involved.
int cmd_score(const RunConfig& cfg, const std::string& predictions, std::ostream& out, std::ostream& err);
int cmd_gradcheck(const std::string& scope, std::uint64_t seed, int seeds, std::ostream& out, std::ostream& err);
int cmd_ablate(const RunConfig& cfg, std::ostream& out, std::ostream& err);

}  // namespace rapose::cli
