#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "rapose/gradcheck.hpp"
#include "rapose/ram.hpp"

using namespace rapose;
using TD = Tensor<double>;

namespace {

struct RamFixture {
    ParameterSet<double> params;
    RamParams ram;

    RamFixture(int base, int m, int n, bool attention, std::uint64_t seed) {
        Initializer init(seed);
        ram = make_ram(params, init, "ram", base, m, n, attention);
    }

    void randomize(std::mt19937_64& rng) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            const bool affine = params.name(i).ends_with(".omega") || params.name(i).ends_with(".beta");
            std::uniform_real_distribution<double> d(affine ? -1.5 : -0.5, affine ? 1.5 : 0.5);
            for (auto& v : params.at(i).data()) v = d(rng);
        }
    }

    void set_affine(double omega, double beta) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (params.name(i).ends_with(".omega")) for (auto& v : params.at(i).data()) v = omega;
            if (params.name(i).ends_with(".beta")) for (auto& v : params.at(i).data()) v = beta;
        }
    }

    const TD& p(ParamId id) const { return params[id]; }
};

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

TD oracle_sampler(const RamFixture& f, const SamplerSpec& s, const TD& x, Shape target) {
    switch (s.kind) {
        case SamplerKind::identity: return x;
        case SamplerKind::down: {
            TD y = x;
            for (std::size_t k = 0; k < s.steps.size(); ++k) {
                const auto& l = s.steps[k];
                y = oracle::conv(y, f.p(l.weight), &f.p(*l.bias), 2, 1);
                if (k + 1 < s.steps.size()) y = oracle::relu(y);
            }
            return y;
        }
        case SamplerKind::up: {
            const auto& l = s.steps.front();
            return oracle::conv(oracle::bilinear(x, target.h, target.w), f.p(l.weight), &f.p(*l.bias), 1, 0);
        }
    }
    return x;
}

struct OracleOut {
    std::vector<TD> y;
    std::vector<std::vector<double>> e, w;
};

// Loop-level evaluation of the fusion: samplers, pooled scalars averaged over
// the batch, closed-form softmax, affine map, weighted sum.
OracleOut oracle_fuse(const RamFixture& f, const std::vector<TD>& xs) {
    OracleOut out;
    const Shape s0 = xs[0].shape();
    for (const auto& o : f.ram.outputs) {
        const Shape target{s0.n, f.ram.base_channels << o.level, s0.h >> o.level, s0.w >> o.level};
        std::vector<TD> sampled;
        std::vector<double> e;
        for (const auto& edge : o.edges) {
            sampled.push_back(oracle_sampler(f, edge.sampler, xs[edge.sampler.from_level], target));
            const TD pooled = oracle::gap(sampled.back());
            const TD s = oracle::conv(pooled, f.p(edge.aggregate->weight), &f.p(*edge.aggregate->bias), 1, 0);
            double mean = 0;
            for (int n = 0; n < s0.n; ++n) mean += s.at(n, 0, 0, 0);
            e.push_back(mean / s0.n);
        }
        const auto sm = oracle::softmax(e);
        std::vector<double> w;
        TD y(target);
        for (std::size_t h = 0; h < sampled.size(); ++h) {
            w.push_back(sm[h] * f.p(*o.omega)[h] + f.p(*o.beta)[h]);
            y = oracle::add(y, oracle::scaled(sampled[h], w.back()));
        }
        out.y.push_back(y);
        out.e.push_back(e);
        out.w.push_back(w);
    }
    return out;
}

}  // namespace

TEST(RamWeights, HandCases) {
    const std::vector<double> e0{0, 0}, one{1, 1}, zero{0, 0};
    EXPECT_EQ(ram_weights<double>(e0, one, zero), (std::vector<double>{0.5, 0.5}));

    const std::vector<double> e{3.7, -1.2, 0.4}, w0{0, 0, 0}, b{0.25, -1.5, 7.0};
    EXPECT_EQ(ram_weights<double>(e, w0, b), b);  // omega = 0 leaves beta exactly

    const std::vector<double> logs{std::log(1.0), std::log(2.0), std::log(3.0)}, three{3, 3, 3}, tenth{0.1, 0.1, 0.1};
    const auto w = ram_weights<double>(logs, three, tenth);
    EXPECT_NEAR(w[0], 0.6, 1e-12);
    EXPECT_NEAR(w[1], 1.1, 1e-12);
    EXPECT_NEAR(w[2], 1.6, 1e-12);
}

TEST(RamWeights, WeightsAreNotConfinedToUnitInterval) {
    const std::vector<double> e{0, 2}, omega{4, -3}, beta{0.5, 0};
    const auto w = ram_weights<double>(e, omega, beta);
    EXPECT_NEAR(w[0], 4.0 / (1.0 + std::exp(2.0)) + 0.5, 1e-12);
    EXPECT_LT(w[1], 0.0);
}

TEST(RamWeights, LengthMismatchIsStructured) {
    const std::vector<double> e{0, 0, 0}, two{1, 1};
    EXPECT_THROW(ram_weights<double>(e, two, two), DimensionError);
    Tape<double> tape;
    EXPECT_THROW(ram_weights(tape.constant(TD({1, 3, 1, 1})), tape.constant(TD({1, 2, 1, 1})),
                             tape.constant(TD({1, 3, 1, 1}))),
                 DimensionError);
}

TEST(RamWeightsProperty, ShiftingScalarsChangesNothing) {
    std::mt19937_64 rng(20);
    std::normal_distribution<double> d(0, 2);
    for (int trial = 0; trial < 100; ++trial) {
        const int m = 1 + trial % 5;
        std::vector<double> e(m), om(m), be(m);
        for (int h = 0; h < m; ++h) e[h] = d(rng), om[h] = d(rng), be[h] = d(rng);
        const double c = d(rng) * 10;
        std::vector<double> shifted = e;
        for (auto& v : shifted) v += c;
        const auto a = ram_weights<double>(e, om, be);
        const auto b = ram_weights<double>(shifted, om, be);
        for (int h = 0; h < m; ++h) EXPECT_NEAR(a[h], b[h], 1e-12);
    }
}

TEST(RamScalars, ZeroInputsAndBiasGiveZero) {
    RamFixture f(4, 3, 3, true, 1);
    std::mt19937_64 rng(21);
    f.randomize(rng);
    for (std::size_t i = 0; i < f.params.size(); ++i)
        if (f.params.name(i).ends_with(".bias")) for (auto& v : f.params.at(i).data()) v = 0;
    std::vector<TD> xs;
    for (int r = 0; r < 3; ++r) xs.push_back(TD({2, 4 << r, 8 >> r, 12 >> r}));
    Tape<double> tape;
    auto b = bind(tape, f.params, false);
    auto p = on_tape(tape, xs);
    for (int i = 0; i < 3; ++i) {
        auto e = ram_scalars(b, f.ram, sample_to_level(b, f.ram, p, i), i);
        ASSERT_EQ(e.value().numel(), 3u);
        for (double v : e.value().data()) EXPECT_EQ(v, 0.0);
    }
}

TEST(RamScalars, SingleInputGivesOneScalar) {
    RamFixture f(3, 1, 2, true, 2);
    std::mt19937_64 rng(22);
    Tape<double> tape;
    auto b = bind(tape, f.params, false);
    auto p = on_tape(tape, random_pyramid(1, 3, 1, 8, 6, rng));
    for (int i = 0; i < 2; ++i) EXPECT_EQ(ram_scalars(b, f.ram, sample_to_level(b, f.ram, p, i), i).value().numel(), 1u);
}

TEST(RamScalars, MatchComposedOracles) {
    std::mt19937_64 rng(23);
    RamFixture f(3, 3, 3, true, 3);
    f.randomize(rng);
    const auto xs = random_pyramid(3, 3, 3, 8, 12, rng);
    const auto ref = oracle_fuse(f, xs);
    Tape<double> tape;
    auto b = bind(tape, f.params, false);
    auto p = on_tape(tape, xs);
    for (int i = 0; i < 3; ++i) {
        auto e = ram_scalars(b, f.ram, sample_to_level(b, f.ram, p, i), i);
        for (int h = 0; h < 3; ++h) EXPECT_NEAR(e.value()[h], ref.e[i][h], 1e-12);
    }
}

TEST(RamFuse, SingleLevelUnitWeightIsIdentity) {
    RamFixture f(5, 1, 1, true, 4);
    std::mt19937_64 rng(24);
    const auto xs = random_pyramid(2, 5, 1, 6, 4, rng);
    Tape<double> tape;
    auto b = bind(tape, f.params, false);
    auto r = ram_fuse(b, f.ram, on_tape(tape, xs));
    EXPECT_EQ(r.report.levels[0].weights, std::vector<double>{1.0});
    EXPECT_EQ(r.outputs[0].value(), xs[0]);
}

TEST(RamFuse, ZeroOmegaAndBetaGiveZeroOutputs) {
    RamFixture f(3, 2, 3, true, 5);
    std::mt19937_64 rng(25);
    f.randomize(rng);
    f.set_affine(0.0, 0.0);
    Tape<double> tape;
    auto b = bind(tape, f.params, false);
    auto r = ram_fuse(b, f.ram, on_tape(tape, random_pyramid(1, 3, 2, 8, 8, rng)));
    ASSERT_EQ(r.outputs.size(), 3u);
    for (const auto& y : r.outputs)
        for (double v : y.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(RamFuse, ThreeLevelModuleMatchesCompositionalOracle) {
    std::mt19937_64 rng(26);
    RamFixture f(32, 3, 3, true, 6);
    f.randomize(rng);
    const std::vector<TD> xs{oracle::random_tensor({1, 32, 64, 48}, rng), oracle::random_tensor({1, 64, 32, 24}, rng),
                             oracle::random_tensor({1, 128, 16, 12}, rng)};
    const auto ref = oracle_fuse(f, xs);
    Tape<double> tape;
    auto b = bind(tape, f.params, false);
    auto r = ram_fuse(b, f.ram, on_tape(tape, xs));
    for (int i = 0; i < 3; ++i) {
        EXPECT_EQ(r.outputs[i].shape(), xs[i].shape());
        EXPECT_LT(oracle::max_abs_diff(r.outputs[i].value(), ref.y[i]), 1e-9);
        for (int h = 0; h < 3; ++h) EXPECT_NEAR(r.report.levels[i].weights[h], ref.w[i][h], 1e-12);
    }
}

TEST(RamFuse, GrowingModuleAddsOneLevel) {
    std::mt19937_64 rng(27);
    RamFixture f(4, 2, 3, true, 7);
    f.randomize(rng);
    const auto xs = random_pyramid(2, 4, 2, 16, 12, rng);
    const auto ref = oracle_fuse(f, xs);
    Tape<double> tape;
    auto b = bind(tape, f.params, false);
    auto r = ram_fuse(b, f.ram, on_tape(tape, xs));
    ASSERT_EQ(r.outputs.size(), 3u);
    EXPECT_EQ(r.outputs[2].shape(), (Shape{2, 16, 4, 3}));
    for (int i = 0; i < 3; ++i) EXPECT_LT(oracle::max_abs_diff(r.outputs[i].value(), ref.y[i]), 1e-10);
}

TEST(RamFuseUniform, SingleLevelIsIdentityAndPairIsSum) {
    std::mt19937_64 rng(28);
    {
        RamFixture f(3, 1, 1, false, 8);
        const auto xs = random_pyramid(1, 3, 1, 4, 4, rng);
        Tape<double> tape;
        auto b = bind(tape, f.params, false);
        EXPECT_EQ(ram_fuse_uniform(b, f.ram, on_tape(tape, xs)).outputs[0].value(), xs[0]);
    }
    {
        RamFixture f(3, 2, 1, false, 9);
        f.randomize(rng);
        const auto xs = random_pyramid(1, 3, 2, 8, 8, rng);
        Tape<double> tape;
        auto b = bind(tape, f.params, false);
        auto p = on_tape(tape, xs);
        auto sampled = sample_to_level(b, f.ram, p, 0);
        auto y = ram_fuse_uniform(b, f.ram, p).outputs[0].value();
        EXPECT_EQ(y, oracle::add(sampled[0].value(), sampled[1].value()));
    }
}

TEST(RamFuseProperty, ZeroOmegaUnitBetaEqualsUniformFusion) {
    std::mt19937_64 rng(29);
    for (int trial = 0; trial < 5; ++trial) {
        const int m = 1 + trial % 3;
        RamFixture f(2, m, std::min(m + 1, 3), true, 10 + trial);
        f.randomize(rng);
        f.set_affine(0.0, 1.0);
        const auto xs = random_pyramid(2, 2, m, 16, 8, rng);
        Tape<double> tape;
        auto b = bind(tape, f.params, false);
        auto p = on_tape(tape, xs);
        auto a = ram_fuse(b, f.ram, p);
        auto u = ram_fuse_uniform(b, f.ram, p);
        for (std::size_t i = 0; i < a.outputs.size(); ++i) EXPECT_EQ(a.outputs[i].value(), u.outputs[i].value());
    }
}

TEST(RamFuseProperty, LinearWithFrozenWeights) {
    std::mt19937_64 rng(30);
    RamFixture f(3, 3, 3, true, 11);
    f.randomize(rng);
    // Without biases every sampler is positively homogeneous.
    for (std::size_t i = 0; i < f.params.size(); ++i)
        if (f.params.name(i).ends_with(".bias")) for (auto& v : f.params.at(i).data()) v = 0;
    const auto xs = random_pyramid(1, 3, 3, 16, 8, rng);
    std::vector<TD> scaled;
    const double alpha = 2.5;
    for (const auto& x : xs) scaled.push_back(oracle::scaled(x, alpha));
    const std::vector<std::vector<double>> w{{0.3, -1.2, 2.0}, {1.0, 0.5, -0.25}, {0.7, 0.7, 0.1}};
    Tape<double> tape;
    auto b = bind(tape, f.params, false);
    auto y1 = ram_fuse_fixed(b, f.ram, on_tape(tape, xs), w);
    auto y2 = ram_fuse_fixed(b, f.ram, on_tape(tape, scaled), w);
    for (int i = 0; i < 3; ++i)
        EXPECT_LT(oracle::max_abs_diff(y2[i].value(), oracle::scaled(y1[i].value(), alpha)), 1e-10);
}

TEST(RamFuseProperty, ReportedSoftmaxSumsToOne) {
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 10; ++trial) {
        RamFixture f(2, 1 + trial % 3, 1 + (trial + 1) % 3, true, 40 + trial);
        f.randomize(rng);
        for (std::size_t i = 0; i < f.params.size(); ++i)
            for (auto& v : f.params.at(i).data()) v *= 4;  // large scalars
        Tape<double> tape;
        auto b = bind(tape, f.params, false);
        auto r = ram_fuse(b, f.ram, on_tape(tape, random_pyramid(3, 2, f.ram.num_inputs, 16, 16, rng)));
        for (const auto& lvl : r.report.levels) {
            EXPECT_NEAR(std::accumulate(lvl.softmax.begin(), lvl.softmax.end(), 0.0), 1.0, 1e-6);
            EXPECT_EQ(lvl.scalars.size(), static_cast<std::size_t>(f.ram.num_inputs));
        }
    }
}

TEST(RamParamsLayout, OneAffinePairPerEdge) {
    for (auto [m, n] : {std::pair{1, 2}, {2, 3}, {3, 3}, {4, 4}}) {
        RamFixture f(2, m, n, true, 12);
        std::size_t omegas = 0, aggregates = 0;
        for (const auto& o : f.ram.outputs) {
            omegas += f.p(*o.omega).numel();
            for (const auto& e : o.edges) aggregates += e.aggregate.has_value();
        }
        EXPECT_EQ(omegas, static_cast<std::size_t>(m * n));
        EXPECT_EQ(aggregates, static_cast<std::size_t>(m * n));
    }
    RamFixture off(2, 3, 3, false, 12);
    EXPECT_EQ(attention_param_count(off.params, off.ram), 0u);
    RamFixture on(2, 3, 3, true, 12);
    EXPECT_EQ(on.params.count() - off.params.count(), attention_param_count(on.params, on.ram));
}

TEST(RamFuse, MalformedPyramidIsRejected) {
    RamFixture f(3, 2, 2, true, 13);
    Tape<double> tape;
    auto b = bind(tape, f.params, false);
    Pyramid<double> bad{tape.constant(TD({1, 3, 8, 8})), tape.constant(TD({1, 6, 4, 3}))};
    try {
        ram_fuse(b, f.ram, bad);
        FAIL();
    } catch (const DimensionError& e) {
        EXPECT_EQ(e.axes(), std::vector<std::string>{"width"});
    }
    Pyramid<double> wrong_channels{tape.constant(TD({1, 3, 8, 8})), tape.constant(TD({1, 5, 4, 4}))};
    EXPECT_THROW(ram_fuse(b, f.ram, wrong_channels), DimensionError);
    Pyramid<double> too_few{tape.constant(TD({1, 3, 8, 8}))};
    EXPECT_THROW(ram_fuse(b, f.ram, too_few), DimensionError);
}

TEST(AttentionDump, OneLinePerEdge) {
    AttentionReport r;
    r.levels.push_back({0, {0.5, -0.5}, {0.731058579, 0.268941421}, {1.0, 0.25}});
    r.levels.push_back({1, {0.0, 0.0}, {0.5, 0.5}, {0.5, 0.5}});
    std::ostringstream os;
    write_attention_dump(os, 2, r);
    std::istringstream is(os.str());
    std::string line;
    int count = 0;
    while (std::getline(is, line)) {
        std::istringstream ls(line);
        int stage, li, lh;
        double e, s, w;
        ASSERT_TRUE(ls >> stage >> li >> lh >> e >> s >> w) << line;
        std::string rest;
        EXPECT_FALSE(ls >> rest);
        EXPECT_EQ(stage, 2);
        EXPECT_EQ(li, count / 2 + 1);
        EXPECT_EQ(lh, count % 2 + 1);
        ++count;
    }
    EXPECT_EQ(count, 4);
    EXPECT_NE(os.str().find("2 1 2 -0.5 0.268941421 0.25"), std::string::npos) << os.str();
}

TEST(GradientCheck, RamSuitePassesOnFiveSeeds) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto r = run_gradcheck(GradScope::ram, seed);
        EXPECT_TRUE(r.passed()) << "seed " << seed << ": " << ::testing::PrintToString(r.failures());
        bool saw_omega = false, saw_beta = false, saw_aggregate = false;
        for (const auto& e : r.entries) {
            saw_omega |= e.name.find("omega") != std::string::npos;
            saw_beta |= e.name.find("beta") != std::string::npos;
            saw_aggregate |= e.name.find("aggregate") != std::string::npos;
        }
        EXPECT_TRUE(saw_omega && saw_beta && saw_aggregate);
    }
}
