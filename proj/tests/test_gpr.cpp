#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "rapose/gpr.hpp"
#include "rapose/gradcheck.hpp"

using namespace rapose;
using TD = Tensor<double>;

namespace {

void randomize(ParameterSet<double>& params, std::mt19937_64& rng, double spread = 0.3) {
    std::uniform_real_distribution<double> d(-spread, spread);
    for (std::size_t i = 0; i < params.size(); ++i)
        for (auto& v : params.at(i).data()) v = d(rng);
}

std::vector<TD> random_pyramid(int n, int base, int levels, int h, int w, std::mt19937_64& rng) {
    std::vector<TD> out;
    for (int r = 0; r < levels; ++r) out.push_back(oracle::random_tensor({n, base << r, h >> r, w >> r}, rng));
    return out;
}

Pyramid<double> on_tape(Tape<double>& tape, const std::vector<TD>& xs) {
    Pyramid<double> p;
    for (const auto& x : xs) p.push_back(tape.constant(x));
    return p;
}

TD conv_layer(const ParameterSet<double>& p, const ConvLayer& l, const TD& x) {
    const TD* bias = l.bias ? &p[*l.bias] : nullptr;
    return l.transposed ? oracle::deconv(x, p[l.weight], bias, l.stride, l.pad)
                        : oracle::conv(x, p[l.weight], bias, l.stride, l.pad);
}

TD oracle_step(const ParameterSet<double>& p, const GprStep& s, const TD& coarse, const TD& fine) {
    const Shape fs = fine.shape();
    const TD up = oracle::add(conv_layer(p, s.project, oracle::bilinear(coarse, fs.h, fs.w)),
                              conv_layer(p, s.deconv, coarse));
    return oracle::relu(conv_layer(p, s.merge, oracle::concat(up, fine)));
}

}  // namespace

TEST(GprStep, ZeroCoarseInputLeavesOnlyTheMergeOfFineFeatures) {
    std::mt19937_64 rng(40);
    ParameterSet<double> params;
    Initializer init(1);
    const GprParams gpr = make_gpr(params, init, "gpr", 4, 2, 3);
    randomize(params, rng);
    const GprStep& s = gpr.steps[0];
    for (auto id : {*s.deconv.bias, *s.project.bias}) for (auto& v : params[id].data()) v = 0;
    const TD fine = oracle::random_tensor({1, 4, 8, 6}, rng);
    const TD coarse({1, 8, 4, 3});
    Tape<double> tape;
    auto b = bind(tape, params, false);
    auto y = gpr_step(b, s, tape.constant(coarse), tape.constant(fine));
    const TD ref = oracle::relu(conv_layer(params, s.merge, oracle::concat(TD({1, 4, 8, 6}), fine)));
    EXPECT_LT(oracle::max_abs_diff(y.value(), ref), 1e-12);
}

TEST(GprStep, ShapeFollowsFineLevel) {
    std::mt19937_64 rng(41);
    ParameterSet<double> params;
    Initializer init(2);
    const GprParams gpr = make_gpr(params, init, "gpr", 32, 3, 17);
    Tape<double> tape;
    auto b = bind(tape, params, false);
    auto y = gpr_step(b, gpr.steps[1], tape.constant(oracle::random_tensor({1, 128, 16, 12}, rng)),
                      tape.constant(oracle::random_tensor({1, 64, 32, 24}, rng)));
    EXPECT_EQ(y.shape(), (Shape{1, 64, 32, 24}));
}

TEST(GprStep, MatchesCompositionalOracleOnTwentyInstances) {
    std::mt19937_64 rng(42);
    for (int trial = 0; trial < 20; ++trial) {
        const int base = 1 + trial % 4, n = 1 + trial % 2;
        const int h = 2 * (2 + trial % 3), w = 2 * (1 + trial % 4);
        ParameterSet<double> params;
        Initializer init(trial);
        const GprParams gpr = make_gpr(params, init, "gpr", base, 2, 2);
        randomize(params, rng, 0.6);
        const TD coarse = oracle::random_tensor({n, 2 * base, h / 2, w / 2}, rng);
        const TD fine = oracle::random_tensor({n, base, h, w}, rng);
        Tape<double> tape;
        auto b = bind(tape, params, false);
        auto y = gpr_step(b, gpr.steps[0], tape.constant(coarse), tape.constant(fine));
        EXPECT_LT(oracle::max_abs_diff(y.value(), oracle_step(params, gpr.steps[0], coarse, fine)), 1e-6)
            << "trial " << trial;
    }
}

TEST(GprStep, OffByOneSpatialSizeIsRejected) {
    ParameterSet<double> params;
    Initializer init(3);
    const GprParams gpr = make_gpr(params, init, "gpr", 2, 2, 1);
    Tape<double> tape;
    auto b = bind(tape, params, false);
    try {
        gpr_step(b, gpr.steps[0], tape.constant(TD({1, 4, 4, 3})), tape.constant(TD({1, 2, 9, 6})));
        FAIL() << "expected DimensionError";
    } catch (const DimensionError& e) {
        EXPECT_EQ(e.axes(), std::vector<std::string>{"height"});
    }
    EXPECT_THROW(gpr_step(b, gpr.steps[0], tape.constant(TD({1, 4, 4, 3})), tape.constant(TD({1, 2, 8, 7}))),
                 DimensionError);
}

TEST(GprHead, SingleLevelIsFinalConv) {
    std::mt19937_64 rng(43);
    ParameterSet<double> params;
    Initializer init(4);
    const GprParams gpr = make_gpr(params, init, "gpr", 3, 1, 5);
    randomize(params, rng);
    const TD x = oracle::random_tensor({2, 3, 6, 4}, rng);
    Tape<double> tape;
    auto b = bind(tape, params, false);
    auto y = gpr_head(b, gpr, on_tape(tape, {x}));
    EXPECT_LT(oracle::max_abs_diff(y.value(), conv_layer(params, gpr.final, x)), 1e-12);
}

TEST(GprHead, ThreeLevelW32Shape) {
    std::mt19937_64 rng(44);
    ParameterSet<double> params;
    Initializer init(5);
    const GprParams gpr = make_gpr(params, init, "gpr", 32, 3, 17);
    Tape<double> tape;
    auto b = bind(tape, params, false);
    auto y = gpr_head(b, gpr, on_tape(tape, random_pyramid(1, 32, 3, 64, 48, rng)));
    EXPECT_EQ(y.shape(), (Shape{1, 17, 64, 48}));
}

TEST(GprHead, TwoLevelsMatchUnrolledComposition) {
    std::mt19937_64 rng(45);
    ParameterSet<double> params;
    Initializer init(6);
    const GprParams gpr = make_gpr(params, init, "gpr", 3, 2, 4);
    randomize(params, rng, 0.5);
    const auto xs = random_pyramid(2, 3, 2, 8, 10, rng);
    Tape<double> tape;
    auto b = bind(tape, params, false);
    auto y = gpr_head(b, gpr, on_tape(tape, xs));
    const TD ref = conv_layer(params, gpr.final, oracle_step(params, gpr.steps[0], xs[1], xs[0]));
    EXPECT_LT(oracle::max_abs_diff(y.value(), ref), 1e-12);
}

TEST(GprHeadProperty, OutputMatchesTopLevelForOneToFourLevels) {
    std::mt19937_64 rng(46);
    for (int m = 1; m <= 4; ++m) {
        ParameterSet<double> params;
        Initializer init(m);
        const GprParams g = make_gpr(params, init, "gpr", 2, m, 3);
        const RescaleSumParams r = make_rescale_sum(params, init, "rs", 2, m, 3);
        Tape<double> tape;
        auto b = bind(tape, params, false);
        const auto xs = random_pyramid(1, 2, m, 16, 24, rng);
        EXPECT_EQ(gpr_head(b, g, on_tape(tape, xs)).shape(), (Shape{1, 3, 16, 24}));
        EXPECT_EQ(rescale_sum_head(b, r, on_tape(tape, xs)).shape(), (Shape{1, 3, 16, 24}));
    }
}

TEST(GprHeadProperty, ZeroWeightLowestLevelLeavesOutputUnchanged) {
    std::mt19937_64 rng(47);
    ParameterSet<double> p2, p3;
    Initializer i2(7), i3(7);
    const GprParams g2 = make_gpr(p2, i2, "gpr", 2, 2, 3);
    const GprParams g3 = make_gpr(p3, i3, "gpr", 2, 3, 3);
    randomize(p2, rng, 0.5);
    // Shared step and final conv copied across; the extra step gets zero
    // up-sampling weights and a merge conv that passes the fine half through.
    auto copy = [&](const ConvLayer& from, const ConvLayer& to) {
        p3[to.weight] = p2[from.weight];
        p3[*to.bias] = p2[*from.bias];
    };
    copy(g2.steps[0].deconv, g3.steps[0].deconv);
    copy(g2.steps[0].project, g3.steps[0].project);
    copy(g2.steps[0].merge, g3.steps[0].merge);
    copy(g2.final, g3.final);
    const GprStep& extra = g3.steps[1];
    for (const ConvLayer* l : {&extra.deconv, &extra.project, &extra.merge}) {
        for (auto& v : p3[l->weight].data()) v = 0;
        for (auto& v : p3[*l->bias].data()) v = 0;
    }
    TD& merge = p3[extra.merge.weight];  // (c, 2c, 3, 3); channels c..2c-1 are the fine input
    const int c = merge.shape().n;
    for (int o = 0; o < c; ++o) merge.at(o, c + o, 1, 1) = 1.0;

    auto xs = random_pyramid(1, 2, 3, 16, 8, rng);
    xs[1] = oracle::relu(xs[1]);  // level features are post-ReLU in the network
    Tape<double> tape;
    auto b2 = bind(tape, p2, false);
    auto b3 = bind(tape, p3, false);
    auto y2 = gpr_head(b2, g2, on_tape(tape, {xs[0], xs[1]}));
    auto y3 = gpr_head(b3, g3, on_tape(tape, xs));
    EXPECT_LT(oracle::max_abs_diff(y2.value(), y3.value()), 1e-12);
}

TEST(RescaleSum, SingleLevelEqualsGpr) {
    std::mt19937_64 rng(48);
    ParameterSet<double> pg, pr;
    Initializer ig(8), ir(8);
    const GprParams g = make_gpr(pg, ig, "head", 3, 1, 4);
    const RescaleSumParams r = make_rescale_sum(pr, ir, "head", 3, 1, 4);
    randomize(pg, rng);
    pr = pg;
    const TD x = oracle::random_tensor({1, 3, 8, 6}, rng);
    Tape<double> tape;
    auto bg = bind(tape, pg, false);
    auto br = bind(tape, pr, false);
    EXPECT_EQ(gpr_head(bg, g, on_tape(tape, {x})).value(), rescale_sum_head(br, r, on_tape(tape, {x})).value());
}

TEST(RescaleSum, ZeroInputsGiveBroadcastFinalBias) {
    std::mt19937_64 rng(49);
    ParameterSet<double> params;
    Initializer init(9);
    const RescaleSumParams r = make_rescale_sum(params, init, "rs", 2, 3, 4);
    randomize(params, rng);
    for (const auto& l : r.project) for (auto& v : params[*l.bias].data()) v = 0;
    std::vector<TD> xs;
    for (int k = 0; k < 3; ++k) xs.push_back(TD({1, 2 << k, 8 >> k, 12 >> k}));
    Tape<double> tape;
    auto b = bind(tape, params, false);
    const auto& y = rescale_sum_head(b, r, on_tape(tape, xs)).value();
    const TD& bias = params[*r.final.bias];
    for (int k = 0; k < 4; ++k)
        for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 12; ++j) EXPECT_EQ(y.at(0, k, i, j), bias[k]);
}

TEST(RescaleSum, ThreeLevelsMatchBranchOracle) {
    std::mt19937_64 rng(50);
    ParameterSet<double> params;
    Initializer init(10);
    const RescaleSumParams r = make_rescale_sum(params, init, "rs", 3, 3, 2);
    randomize(params, rng, 0.5);
    const auto xs = random_pyramid(2, 3, 3, 16, 12, rng);
    TD acc = xs[0];
    for (int k = 1; k < 3; ++k)
        acc = oracle::add(acc, conv_layer(params, r.project[k - 1], oracle::bilinear(xs[k], 16, 12)));
    const TD ref = conv_layer(params, r.final, acc);
    Tape<double> tape;
    auto b = bind(tape, params, false);
    EXPECT_LT(oracle::max_abs_diff(rescale_sum_head(b, r, on_tape(tape, xs)).value(), ref), 1e-12);
}

TEST(GradientCheck, GprSuitePassesOnFiveSeeds) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto r = run_gradcheck(GradScope::gpr, seed);
        EXPECT_TRUE(r.passed()) << "seed " << seed << ": " << ::testing::PrintToString(r.failures());
    }
}
