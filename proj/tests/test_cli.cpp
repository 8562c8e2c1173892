#include <gtest/gtest.h>
#include <sys/wait.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "commands.hpp"

using namespace rapose;
using namespace rapose::cli;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code = -1;
    std::string out;
    std::string err;
};

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("rapose_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Run run_cli(const std::string& args, const fs::path& dir) {
    const auto o = dir / "stdout.txt", e = dir / "stderr.txt";
    const std::string cmd = std::string(RAPOSE_CLI_PATH) + " " + args + " >" + o.string() + " 2>" + e.string();
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(o), slurp(e)};
}

const char* kSmall =
    "width = 4\nnum_stages = 2\nblocks_per_stage = 1\ninput_h = 64\ninput_w = 48\nnum_keypoints = 4\n"
    "dataset_size = 4\nbatch_size = 2\nepochs = 1\n";

fs::path write_config(const fs::path& dir, const std::string& text) {
    const auto p = dir / "run.cfg";
    std::ofstream(p) << text;
    return p;
}

}  // namespace

TEST(RunConfig, TextRoundTrip) {
    RunConfig c;
    c.network.width = 8;
    c.network.head = HeadKind::rescale_sum;
    c.network.attention_enabled = false;
    c.train.lr0 = 0.0125;
    c.train.sigma = 1.75;
    c.train.cutout = false;
    c.flip_pairs = "0-1,2-3";
    c.dataset_seed = 99;
    c.eval_flip = false;
    c.seed = 12345678901234ULL;
    c.out_dir = "some/dir";
    const RunConfig back = parse_run_config(c.to_text());
    EXPECT_TRUE(back == c);
    EXPECT_EQ(back.to_text(), c.to_text());
}

TEST(RunConfig, CommentsOverridesAndErrors) {
    const auto c = parse_run_config("# comment\n\n  width = 16   # trailing\nseed=3\n");
    EXPECT_EQ(c.network.width, 16);
    EXPECT_EQ(c.seed, 3u);
    try {
        parse_run_config("widht = 3\n");
        FAIL();
    } catch (const FieldError& e) {
        EXPECT_EQ(e.field(), "widht");
    }
    try {
        parse_run_config("width = 4\nno equals sign here\n");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.position(), 10u);
    }
    EXPECT_THROW(parse_run_config("epochs = many\n"), ValueError);
    EXPECT_THROW(parse_run_config("cutout = maybe\n"), ValueError);
    EXPECT_EQ(split_override("lr0=0.5"), (std::pair<std::string, std::string>{"lr0", "0.5"}));
    EXPECT_THROW(split_override("lr0"), ValueError);
}

TEST(RunConfig, ViolationsAreCollected) {
    RunConfig c;
    c.dataset_size = 0;
    c.network.num_keypoints = 30;
    c.train.batch_size = 0;
    const auto v = c.violations();
    auto has = [&](const std::string& s) {
        for (const auto& x : v)
            if (x.find(s) != std::string::npos) return true;
        return false;
    };
    EXPECT_TRUE(has("dataset_size"));
    EXPECT_TRUE(has("num_keypoints"));
    EXPECT_TRUE(has("batch_size"));
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(CliTrain, ZeroEpochsWritesTheInitialization) {
    const auto dir = scratch("epochs0");
    const auto cfg = write_config(dir, kSmall);
    const auto r = run_cli("train --config " + cfg.string() + " --epochs 0 --seed 5 --out " + (dir / "out").string(), dir);
    ASSERT_EQ(r.code, 0) << r.err;
    const auto loaded = load_checkpoint((dir / "out" / "model.ckpt").string());
    const RunConfig rc = parse_run_config(kSmall);
    const auto init = PoseNet<float>::build(rc.network, 5);
    EXPECT_TRUE(loaded.params() == init.params());
    EXPECT_NE(r.out.find("epochs\t0"), std::string::npos);
}

TEST(CliTrain, SameSeedGivesIdenticalCheckpointBytes) {
    const auto dir = scratch("seed7");
    const auto cfg = write_config(dir, kSmall);
    std::string bytes[2];
    for (int i = 0; i < 2; ++i) {
        const auto out = dir / ("run" + std::to_string(i));
        const auto r = run_cli("train --config " + cfg.string() + " --seed 7 --out " + out.string(), dir);
        ASSERT_EQ(r.code, 0) << r.err;
        bytes[i] = slurp(out / "model.ckpt");
    }
    EXPECT_FALSE(bytes[0].empty());
    EXPECT_EQ(bytes[0], bytes[1]);

    const auto other = dir / "seed8";
    ASSERT_EQ(run_cli("train --config " + cfg.string() + " --seed 8 --out " + other.string(), dir).code, 0);
    EXPECT_NE(slurp(other / "model.ckpt"), bytes[0]);
}

TEST(CliTrain, EchoedConfigReparsesIdentically) {
    const auto dir = scratch("echo");
    const auto cfg = write_config(dir, kSmall);
    const auto out = dir / "out";
    const auto r = run_cli("train --config " + cfg.string() + " --epochs 2 --dump-attention --out " + out.string() +
                           " sigma=1.5 cutout=false",
                       dir);
    ASSERT_EQ(r.code, 0) << r.err;
    RunConfig expect = parse_run_config(kSmall);
    expect.train.epochs = 2;
    expect.train.sigma = 1.5;
    expect.train.cutout = false;
    expect.dump_attention = true;
    expect.out_dir = out.string();
    const RunConfig echoed = load_run_config((out / "config.cfg").string());
    EXPECT_TRUE(echoed == expect);

    std::ifstream metrics(out / "metrics.log");
    std::string line;
    int lines = 0;
    while (std::getline(metrics, line)) ++lines;
    EXPECT_EQ(lines, 2);
    const std::string att = slurp(out / "attention.txt");
    EXPECT_NE(att.find("# epoch 0"), std::string::npos);
    EXPECT_NE(att.find("# epoch 1"), std::string::npos);
}

TEST(CliTrain, BadInputsExitWithRuntimeError) {
    const auto dir = scratch("bad");
    const auto cfg = write_config(dir, kSmall);
    EXPECT_EQ(run_cli("train --config " + cfg.string() + " bogus_key=1 --out " + (dir / "o").string(), dir).code, 1);
    EXPECT_EQ(run_cli("train --config " + (dir / "missing.cfg").string(), dir).code, 1);
    const auto r = run_cli("train --config " + cfg.string() + " --width 0 --out " + (dir / "o").string(), dir);
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("width"), std::string::npos);
}

TEST(CliEval, GroundTruthAsPredictionsScoresOne) {
    const auto dir = scratch("gt");
    const auto data = make_synthetic_dataset(6, 64, 48, 6, 11);
    const auto gt = annotations_from_dataset(data);
    std::vector<PosePrediction> preds;
    for (const auto& a : gt.annotations) {
        PosePrediction p{a.image_id, {}, 0};
        for (const auto& k : a.keypoints) p.keypoints.push_back({k.x, k.y, 1.0});
        preds.push_back(p);
    }
    std::ofstream(dir / "gt.json") << annotations_to_json(gt);
    std::ofstream(dir / "pred.json") << predictions_to_json(preds);
    const auto r = run_cli("eval --annotations " + (dir / "gt.json").string() + " --predictions " +
                           (dir / "pred.json").string(),
                       dir);
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("mean\t1.000000"), std::string::npos) << r.out;
}

TEST(CliEval, CheckpointEvaluationAndFlipFlag) {
    const auto dir = scratch("evalckpt");
    const auto cfg = write_config(dir, kSmall);
    const auto out = dir / "out";
    ASSERT_EQ(run_cli("train --config " + cfg.string() + " --out " + out.string(), dir).code, 0);
    const auto ckpt = (out / "model.ckpt").string();
    const auto with_flip = run_cli("eval --config " + cfg.string() + " --checkpoint " + ckpt + " --predictions-out " +
                                   (dir / "p.json").string(),
                               dir);
    ASSERT_EQ(with_flip.code, 0) << with_flip.err;
    const auto without = run_cli("eval --config " + cfg.string() + " --no-flip --checkpoint " + ckpt, dir);
    ASSERT_EQ(without.code, 0) << without.err;

    // The two tables must match what the library produces with and without flip averaging.
    const auto model = load_checkpoint(ckpt);
    RunConfig rc = parse_run_config(kSmall);
    const auto data = make_synthetic_dataset(rc.dataset_size, 64, 48, 4, rc.dataset_seed);
    for (bool flip : {true, false}) {
        rc.eval_flip = flip;
        std::ostringstream expect;
        write_ap_table(expect, evaluate_model(model, data, rc));
        EXPECT_EQ((flip ? with_flip : without).out, expect.str());
    }
    EXPECT_EQ(parse_predictions(slurp(dir / "p.json")).size(), 4u);

    // Annotations with a different K are named.
    AnnotationSet wrong;
    wrong.image_ids = {0};
    Annotation a;
    a.keypoints.assign(6, LabeledKeypoint{1, 1, 2});
    a.area = 10;
    wrong.annotations = {a};
    std::ofstream(dir / "wrong.json") << annotations_to_json(wrong);
    const auto r = run_cli("eval --config " + cfg.string() + " --checkpoint " + ckpt + " --annotations " +
                           (dir / "wrong.json").string(),
                       dir);
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("num_keypoints"), std::string::npos) << r.err;
}

TEST(CliGradcheck, UsageAndSuccess) {
    const auto dir = scratch("grad");
    const auto bad = run_cli("gradcheck nonsense", dir);
    EXPECT_EQ(bad.code, 64);
    EXPECT_NE(bad.err.find("nonsense"), std::string::npos);
    EXPECT_EQ(run_cli("gradcheck", dir).code, 64);
    const auto ok = run_cli("gradcheck ops --seed 3", dir);
    EXPECT_EQ(ok.code, 0) << ok.err;
    EXPECT_NE(ok.out.find("gradcheck ops passed"), std::string::npos);
}

TEST(CliAblate, EightRowsAndSmallerAttentionOffModels) {
    const auto dir = scratch("ablate");
    const auto cfg = write_config(dir, kSmall);
    const auto r = run_cli("ablate --config " + cfg.string() + " --out " + (dir / "out").string(), dir);
    ASSERT_EQ(r.code, 0) << r.err;
    std::istringstream is(r.out);
    std::string line;
    std::getline(is, line);
    EXPECT_EQ(line, "attention\thead\tcutout\tparams\tfinal_loss\tmean_ap");
    std::vector<std::vector<std::string>> rows;
    while (std::getline(is, line)) {
        std::vector<std::string> cols;
        std::istringstream ls(line);
        std::string c;
        while (std::getline(ls, c, '\t')) cols.push_back(c);
        ASSERT_EQ(cols.size(), 6u) << line;
        rows.push_back(cols);
    }
    ASSERT_EQ(rows.size(), 8u);
    for (const auto& on : rows)
        for (const auto& off : rows)
            if (on[0] == "on" && off[0] == "off" && on[1] == off[1]) EXPECT_LT(std::stoul(off[3]), std::stoul(on[3]));
    EXPECT_EQ(slurp(dir / "out" / "ablation.tsv"), r.out);
}
