#include <CLI11.hpp>
#include <iostream>

#include "commands.hpp"

using namespace rapose;
using namespace rapose::cli;

namespace {

struct CommonFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<int> epochs, width, stages;
    bool no_flip = false;
    bool dump_attention = false;
    std::optional<std::string> out;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config, "key = value configuration file");
    cmd->add_option("--seed", f.seed, "seed for initialization and data order");
    cmd->add_option("--epochs", f.epochs, "training epochs");
    cmd->add_option("--width", f.width, "channels at the highest resolution");
    cmd->add_option("--stages", f.stages, "number of stages");
    cmd->add_flag("--no-flip", f.no_flip, "disable flip augmentation and flip-averaged inference");
    cmd->add_flag("--dump-attention", f.dump_attention, "write RAM weights once per epoch");
    cmd->add_option("--out", f.out, "output directory");
    cmd->add_option("overrides", f.overrides, "key=value overrides");
}

// File first, then flags, then key=value overrides.
RunConfig resolve(const CommonFlags& f) {
    RunConfig cfg = f.config.empty() ? RunConfig{} : load_run_config(f.config);
    if (f.seed) cfg.seed = *f.seed;
    if (f.epochs) cfg.train.epochs = *f.epochs;
    if (f.width) cfg.network.width = *f.width;
    if (f.stages) cfg.network.num_stages = *f.stages;
    if (f.no_flip) {
        cfg.train.flip = false;
        cfg.eval_flip = false;
    }
    if (f.dump_attention) cfg.dump_attention = true;
    if (f.out) cfg.out_dir = *f.out;
    for (const auto& o : f.overrides) {
        auto [k, v] = split_override(o);
        cfg.set(k, v);
    }
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-resolution keypoint network: train, evaluate, gradient-check and ablate"};
    app.require_subcommand(1);

    CommonFlags train_f, eval_f, ablate_f;
    auto* train = app.add_subcommand("train", "train on the synthetic set and write a checkpoint");
    add_common(train, train_f);

    auto* eval = app.add_subcommand("eval", "decode a checkpoint's predictions and print the AP table");
    add_common(eval, eval_f);
    std::string checkpoint;
    eval->add_option("--checkpoint", checkpoint, "checkpoint path (default <out>/model.ckpt)");
    std::string annotations, predictions_out;
    eval->add_option("--annotations", annotations, "annotation document (default: derived from the synthetic set)");
    std::string predictions_in;
    eval->add_option("--predictions", predictions_in, "score this prediction document instead of a checkpoint");
    eval->add_option("--predictions-out", predictions_out, "write predictions in the annotation container");

    auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient suites");
    std::string scope;
    std::uint64_t grad_seed = 0;
    int grad_seeds = 1;
    grad->add_option("scope", scope, "ops, ram, gpr or full")->required();
    grad->add_option("--seed", grad_seed, "first seed");
    grad->add_option("--seeds", grad_seeds, "number of consecutive seeds");

    auto* ablate = app.add_subcommand("ablate", "attention x head x cutout grid");
    add_common(ablate, ablate_f);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (grad->parsed()) return cmd_gradcheck(scope, grad_seed, grad_seeds, std::cout, std::cerr);
        if (train->parsed()) return cmd_train(resolve(train_f), std::cout, std::cerr);
        if (ablate->parsed()) return cmd_ablate(resolve(ablate_f), std::cout, std::cerr);
        RunConfig cfg = resolve(eval_f);
        if (!annotations.empty()) cfg.annotations = annotations;
        if (!predictions_out.empty()) cfg.predictions_out = predictions_out;
        if (!predictions_in.empty()) return cmd_score(cfg, predictions_in, std::cout, std::cerr);
        if (checkpoint.empty()) checkpoint = cfg.out_dir + "/model.ckpt";
        return cmd_eval(cfg, checkpoint, std::cout, std::cerr);
    } catch (const std::exception& e) {
        // Config files and overrides fail here, before any command runs.
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
}
