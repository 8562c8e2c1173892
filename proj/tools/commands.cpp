#include "commands.hpp"

#include <algorithm>
#include <filesystem>
#include <map>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "rapose/gradcheck.hpp"

namespace rapose::cli {
namespace fs = std::filesystem;

std::vector<SyntheticSample> build_dataset(const RunConfig& cfg, int input_h, int input_w, int num_keypoints) {
    if (!cfg.dataset_cache.empty() && fs::exists(cfg.dataset_cache)) {
        auto data = load_dataset(cfg.dataset_cache);
        for (const auto& s : data) {
            const Shape sh = s.image.shape();
            if (sh.h != input_h || sh.w != input_w || static_cast<int>(s.keypoints.size()) != num_keypoints)
                throw ValueError("dataset cache '" + cfg.dataset_cache + "' does not match the model input or K");
        }
        return data;
    }
    auto data = make_synthetic_dataset(cfg.dataset_size, input_h, input_w, num_keypoints, cfg.dataset_seed);
    if (!cfg.dataset_cache.empty()) save_dataset(cfg.dataset_cache, data);
    return data;
}

TrainOutcome train_run(const RunConfig& cfg, std::span<const SyntheticSample> dataset, const TrainCallbacks& callbacks) {
    cfg.validate();
    TrainOutcome out{PoseNet<float>::build(cfg.network, cfg.seed), {}, 0, 0};
    out.initial_mse = evaluate_mse(out.model, dataset, cfg.train.sigma);
    out.result = train_loop(out.model, dataset, cfg.effective_train(), callbacks);
    out.final_mse = evaluate_mse(out.model, dataset, cfg.train.sigma);
    return out;
}

std::vector<double> resolve_oks_constants(const RunConfig& cfg, int num_keypoints) {
    std::vector<double> k;
    if (cfg.oks_constants == "auto") k = synthetic_oks_constants(num_keypoints);
    else if (cfg.oks_constants == "coco") k = coco_keypoint_constants();
    else k = load_keypoint_constants(cfg.oks_constants);
    if (static_cast<int>(k.size()) != num_keypoints)
        throw FieldError("oks_constants", std::to_string(k.size()) + " constants for a " + std::to_string(num_keypoints) +
                                              "-keypoint model");
    return k;
}

ApResult evaluate_model(const PoseNet<float>& model, std::span<const SyntheticSample> dataset, const RunConfig& cfg,
                        std::vector<PosePrediction>* predictions) {
    const int k = model.config().num_keypoints;
    AnnotationSet gt;
    if (cfg.annotations.empty()) {
        gt = annotations_from_dataset(dataset);
    } else {
        std::ifstream in(cfg.annotations);
        if (!in) throw std::runtime_error("cannot open annotations '" + cfg.annotations + "'");
        std::stringstream ss;
        ss << in.rdbuf();
        gt = parse_annotations(ss.str());
        for (const auto& a : gt.annotations)
            if (static_cast<int>(a.keypoints.size()) != k)
                throw FieldError("num_keypoints", "annotations carry " + std::to_string(a.keypoints.size()) +
                                                      " keypoints, checkpoint predicts " + std::to_string(k));
        for (auto id : gt.image_ids)
            if (id < 0 || id >= static_cast<std::int64_t>(dataset.size()))
                throw FieldError("image_id", "image " + std::to_string(id) + " is not in the " +
                                                 std::to_string(dataset.size()) + "-image synthetic set");
    }
    OksConfig oks_cfg;
    oks_cfg.k = resolve_oks_constants(cfg, k);
    auto all = predict_poses(model, dataset, cfg.eval_flip, cfg.resolved_flip_pairs());
    std::vector<PosePrediction> preds;
    for (auto& p : all)
        if (std::find(gt.image_ids.begin(), gt.image_ids.end(), p.image_id) != gt.image_ids.end())
            preds.push_back(std::move(p));
    ApResult r = average_precision(preds, gt, oks_cfg);
    if (predictions) *predictions = std::move(preds);
    return r;
}

namespace {

std::string ablation_tag(const AblationRow& r) {
    return std::string(r.attention ? "att" : "noatt") + "_" + to_string(r.head) + "_" + (r.cutout ? "cutout" : "nocutout");
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write '" + path.string() + "'");
    os << text;
}

}  // namespace

std::vector<AblationRow> run_ablation(const RunConfig& cfg, std::ostream* progress) {
    std::vector<AblationRow> rows;
    const auto data = build_dataset(cfg, cfg.network.input_h, cfg.network.input_w, cfg.network.num_keypoints);
    for (bool attention : {true, false})
        for (HeadKind head : {HeadKind::gpr, HeadKind::rescale_sum})
            for (bool cutout : {true, false}) {
                RunConfig run = cfg;
                run.network.attention_enabled = attention;
                run.network.head = head;
                run.train.cutout = cutout;
                AblationRow row{attention, head, cutout, 0, 0, 0};
                if (progress) *progress << "ablate: training " << ablation_tag(row) << std::endl;
                TrainOutcome t = train_run(run, data);
                row.params = t.model.count_params();
                row.final_loss = t.result.log.empty() ? t.initial_mse : t.result.log.back().loss;
                row.mean_ap = evaluate_model(t.model, data, run).mean_ap;
                rows.push_back(row);
            }
    return rows;
}

void write_ablation_table(std::ostream& os, const std::vector<AblationRow>& rows) {
    const auto flags = os.flags();
    os << "attention\thead\tcutout\tparams\tfinal_loss\tmean_ap\n";
    for (const auto& r : rows)
        os << (r.attention ? "on" : "off") << '\t' << to_string(r.head) << '\t' << (r.cutout ? "on" : "off") << '\t'
           << r.params << '\t' << std::setprecision(6) << r.final_loss << '\t' << std::fixed << std::setprecision(4)
           << r.mean_ap << std::defaultfloat << '\n';
    os.flags(flags);
}

int cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    try {
        cfg.validate();
        const fs::path dir(cfg.out_dir);
        fs::create_directories(dir);
        write_text(dir / "config.cfg", cfg.to_text());
        const auto data = build_dataset(cfg, cfg.network.input_h, cfg.network.input_w, cfg.network.num_keypoints);

        std::ofstream metrics(dir / "metrics.log", std::ios::app);
        std::ofstream attention;
        if (cfg.dump_attention) attention.open(dir / "attention.txt", std::ios::app);
        TrainCallbacks cb;
        cb.on_epoch = [&](const EpochLog& e) {
            write_epoch_log(metrics, e);
            metrics.flush();
        };
        if (cfg.dump_attention)
            cb.on_attention = [&](int epoch, const std::vector<AttentionReport>& reports) {
                attention << "# epoch " << epoch << '\n';
                for (std::size_t s = 0; s < reports.size(); ++s)
                    write_attention_dump(attention, static_cast<int>(s) + 1, reports[s]);
            };
        TrainOutcome t = train_run(cfg, data, cb);
        save_checkpoint((dir / "model.ckpt").string(), t.model);
        out << "params\t" << t.model.count_params() << '\n'
            << "epochs\t" << t.result.log.size() << '\n'
            << "initial_mse\t" << std::setprecision(9) << t.initial_mse << '\n'
            << "final_mse\t" << t.final_mse << '\n';
        if (!t.result.log.empty()) out << "final_loss\t" << t.result.log.back().loss << '\n';
        out << "checkpoint\t" << (dir / "model.ckpt").string() << '\n';
        return kExitOk;
    } catch (const TrainingDiverged& e) {
        err << "error: training diverged: " << e.what() << '\n';
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
    }
    return kExitRuntime;
}

int cmd_eval(const RunConfig& cfg, const std::string& checkpoint, std::ostream& out, std::ostream& err) {
    try {
        PoseNet<float> model = load_checkpoint(checkpoint);
        const NetworkConfig& net = model.config();
        RunConfig effective = cfg;
        effective.network = net;
        const auto data = build_dataset(effective, net.input_h, net.input_w, net.num_keypoints);
        std::vector<PosePrediction> preds;
        const ApResult r = evaluate_model(model, data, effective, &preds);
        write_ap_table(out, r);
        if (!cfg.predictions_out.empty()) write_text(cfg.predictions_out, predictions_to_json(preds));
        return kExitOk;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
    }
    return kExitRuntime;
}

int cmd_score(const RunConfig& cfg, const std::string& predictions, std::ostream& out, std::ostream& err) {
    try {
        if (cfg.annotations.empty()) throw FieldError("annotations", "scoring a prediction document needs --annotations");
        auto read = [](const std::string& path) {
            std::ifstream in(path);
            if (!in) throw std::runtime_error("cannot open '" + path + "'");
            std::stringstream ss;
            ss << in.rdbuf();
            return ss.str();
        };
        const AnnotationSet gt = parse_annotations(read(cfg.annotations));
        const auto preds = parse_predictions(read(predictions));
        if (gt.annotations.empty()) throw FieldError("annotations", "no annotations to score against");
        OksConfig oks_cfg;
        oks_cfg.k = resolve_oks_constants(cfg, static_cast<int>(gt.annotations.front().keypoints.size()));
        write_ap_table(out, average_precision(preds, gt, oks_cfg));
        return kExitOk;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
    }
    return kExitRuntime;
}

int cmd_gradcheck(const std::string& scope_text, std::uint64_t seed, int seeds, std::ostream& out, std::ostream& err) {
    const auto scope = parse_grad_scope(scope_text);
    if (!scope) {
        err << "usage: gradcheck {ops|ram|gpr|full}; unknown scope '" << scope_text << "'\n";
        return kExitUsage;
    }
    if (seeds < 1) {
        err << "usage: --seeds must be >= 1\n";
        return kExitUsage;
    }
    try {
        std::vector<std::string> failing;
        out << "seed\tgroup\ttensor\tmax_rel_error\tstatus\n";
        for (int s = 0; s < seeds; ++s) {
            const GradCheckReport r = run_gradcheck(*scope, seed + static_cast<std::uint64_t>(s));
            std::map<std::string, double> worst;
            for (const auto& e : r.entries) {
                out << seed + s << '\t' << e.group << '\t' << e.name << '\t' << std::scientific << std::setprecision(3)
                    << e.max_rel_error << std::defaultfloat << '\t' << (e.passed ? "ok" : "FAIL") << '\n';
                worst[e.group] = std::max(worst[e.group], e.max_rel_error);
            }
            for (const auto& [g, w] : worst)
                out << "# seed " << seed + s << " group " << g << " max_rel_error " << std::scientific
                    << std::setprecision(3) << w << std::defaultfloat << '\n';
            for (auto& f : r.failures()) failing.push_back("seed " + std::to_string(seed + s) + ": " + f);
            if (s == 0) out << "# tolerance " << r.tolerance << '\n';
        }
        if (!failing.empty()) {
            err << "gradcheck " << scope_text << " failed for:\n";
            for (const auto& f : failing) err << "  " << f << '\n';
            return kExitVerification;
        }
        out << "gradcheck " << scope_text << " passed\n";
        return kExitOk;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
    }
    return kExitRuntime;
}

int cmd_ablate(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    try {
        cfg.validate();
        const auto rows = run_ablation(cfg, &err);
        write_ablation_table(out, rows);
        const fs::path dir(cfg.out_dir);
        fs::create_directories(dir);
        write_text(dir / "config.cfg", cfg.to_text());
        std::ostringstream table;
        write_ablation_table(table, rows);
        write_text(dir / "ablation.tsv", table.str());
        return kExitOk;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
    }
    return kExitRuntime;
}

}  // namespace rapose::cli
