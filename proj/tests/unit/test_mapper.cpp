#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "tailor/gradcheck.hpp"
#include "tailor/mapper.hpp"

using namespace tailor;

namespace {

GroupRanges small_groups() { return GroupRanges{2, 1, 1}; }  // N = 4

Tensor random_stack_codes(std::size_t n, std::size_t d, unsigned seed) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> dist(-0.9, 0.9);
    std::vector<real_t> v(n * d);
    for (auto& x : v) x = dist(rng);
    return Tensor::from({n, d}, std::move(v));
}

PromptEmbedding test_prompt(const char* text = "a human wearing red upper body clothes") {
    static Lexicon lex = Lexicon::builtin();
    return embed_text(text, lex);
}

}  // namespace

TEST(PositionalEncode, DistinguishesIdenticalRows) {
    GroupRanges groups;  // default 4/4/8
    Tensor same_rows = Tensor::full({4, 8}, 0.3);
    Tensor enc = positional_encode(same_rows, groups, Group::coarse);
    // rows 0 and 1 must now differ somewhere
    bool differ = false;
    for (std::size_t j = 0; j < 8; ++j) differ = differ || enc.at(j) != enc.at(8 + j);
    EXPECT_TRUE(differ);
}

TEST(PositionalEncode, StableAcrossCalls) {
    Tensor a = positional_encoding_rows(4, 8, 16);
    Tensor b = positional_encoding_rows(4, 8, 16);
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a.at(i), b.at(i));
}

TEST(PositionalEncode, UsesAbsoluteLayerIndex) {
    // the medium group's first row is encoded as layer 4, not layer 0
    Tensor coarse = positional_encoding_rows(0, 4, 8);
    Tensor medium = positional_encoding_rows(4, 8, 8);
    bool differ = false;
    for (std::size_t j = 0; j < 8; ++j) differ = differ || coarse.at(j) != medium.at(j);
    EXPECT_TRUE(differ);
}

TEST(ModNorm, NeutralModulationStandardizes) {
    const std::size_t D = 16;
    Tensor x = random_stack_codes(5, D, 3);
    Tensor e_row = Tensor::zeros({1, kEmbedDim});
    Tensor gw = Tensor::zeros({kEmbedDim, D}), gb = Tensor::zeros({1, D});
    Tensor bw = Tensor::zeros({kEmbedDim, D}), bb = Tensor::zeros({1, D});
    Tensor y = mod_norm(x, e_row, gw, gb, bw, bb);
    for (std::size_t r = 0; r < 5; ++r) {
        double mean = 0, var = 0;
        for (std::size_t j = 0; j < D; ++j) mean += y.at(r * D + j);
        mean /= D;
        for (std::size_t j = 0; j < D; ++j) {
            const double d = y.at(r * D + j) - mean;
            var += d * d;
        }
        var /= D;
        EXPECT_NEAR(mean, 0.0, 1e-6);
        EXPECT_NEAR(std::sqrt(var), 1.0, 1e-5);
    }
}

TEST(ModNorm, ScaleInvariance) {
    const std::size_t D = 12;
    Tensor x = random_stack_codes(3, D, 4);
    Tensor x5 = mul(x, 5.0);
    PromptEmbedding e = test_prompt();
    MapperParams mp = MapperParams::init(11, D, 2, 1, small_groups());
    const auto& blk = mp.per_group[0].blocks[0];
    Tensor y1 = mod_norm(x, e, blk);
    Tensor y5 = mod_norm(x5, e, blk);
    for (std::size_t i = 0; i < y1.numel(); ++i) EXPECT_NEAR(y1.at(i), y5.at(i), 1e-5);
}

TEST(ModNorm, TextGradientMatchesFiniteDifferences) {
    const std::size_t D = 8;
    Tensor x = random_stack_codes(4, D, 5);
    MapperParams mp = MapperParams::init(12, D, 2, 1, small_groups());
    const auto& blk = mp.per_group[0].blocks[0];
    Tensor e0 = Tensor::from({1, kEmbedDim}, random_stack_codes(1, kEmbedDim, 6).data());

    auto objective = [&](const Tensor& e_probe) {
        return reduce_sum(mul(mod_norm(x, e_probe, blk.gamma_w, blk.gamma_b, blk.beta_w, blk.beta_b),
                              Tensor::full({4, D}, 0.7)))
            .item();
    };

    Tape tape;
    Tensor we = tape.watch(Tensor::from(e0.shape(), e0.data(), true));
    Tensor y = mod_norm(x, we, blk.gamma_w, blk.gamma_b, blk.beta_w, blk.beta_b);
    auto grads = tape.backward(reduce_sum(mul(y, Tensor::full({4, D}, 0.7))));

    auto res = gradcheck::check_input("mod_norm/e", e0, gradcheck::all_coords(e0), objective,
                                      grads.at(we.node()), 1e-4);
    EXPECT_TRUE(res.passed) << res.max_rel_err;
}

TEST(CrossAttention, WeightsSumToOnePerHead) {
    const std::size_t D = 16, heads = 4;
    MapperParams mp = MapperParams::init(13, D, heads, 1, small_groups());
    Tensor x = random_stack_codes(6, D, 7);
    PromptEmbedding e = test_prompt();
    AttentionTrace trace;
    cross_attention(x, e, mp.per_group[0].blocks[0], heads, &trace);
    ASSERT_EQ(trace.weight_sums.size(), heads);
    for (real_t s : trace.weight_sums) EXPECT_NEAR(s, 1.0, 1e-9);
}

TEST(CrossAttention, EqualRowsGiveUniformWeights) {
    const std::size_t D = 8, heads = 2, rows = 5;
    MapperParams mp = MapperParams::init(14, D, heads, 1, small_groups());
    Tensor x = Tensor::full({rows, D}, 0.37);
    PromptEmbedding e = test_prompt();

    // equal queries -> uniform softmax -> output rows equal the value row
    Tensor out = cross_attention(x, e, mp.per_group[0].blocks[0], heads);
    for (std::size_t r = 1; r < rows; ++r) {
        for (std::size_t j = 0; j < D; ++j) {
            EXPECT_NEAR(out.at(r * D + j), out.at(j), 1e-12);
        }
    }
}

// Closed-form oracle on a 2x2 single-head instance, computed with plain
// doubles, independent of the tensor op path.
TEST(CrossAttention, MatchesHandComputedOracle) {
    const std::size_t D = 2, heads = 1;
    MapperParams mp = MapperParams::init(15, D, heads, 1, small_groups());
    MapperBlockParams& blk = mp.per_group[0].blocks[0];
    blk.wq = Tensor::from({2, 2}, {1.0, 0.5, -0.25, 0.75});
    blk.wo = Tensor::from({2, 2}, {1.0, 0.0, 0.0, 1.0});
    std::vector<real_t> wk(kEmbedDim * 2, 0.0), wv(kEmbedDim * 2, 0.0);
    wk[0] = 0.8;   // e[0] -> k[0]
    wk[3] = -0.6;  // e[1] -> k[1]
    wv[1] = 1.5;   // e[0] -> v[1]
    wv[2] = 0.7;   // e[1] -> v[0]
    blk.wk = Tensor::from({kEmbedDim, 2}, wk);
    blk.wv = Tensor::from({kEmbedDim, 2}, wv);

    std::vector<real_t> ev(kEmbedDim, 0.0);
    ev[0] = 0.9;
    ev[1] = -0.4;
    Tensor e_row = Tensor::from({1, kEmbedDim}, ev);
    Tensor x = Tensor::from({2, 2}, {0.6, -0.2, 0.1, 0.9});

    Tensor out = cross_attention(x, e_row, blk, heads);

    // oracle
    const double k0 = 0.9 * 0.8, k1 = -0.4 * -0.6;
    const double v0 = -0.4 * 0.7, v1 = 0.9 * 1.5;
    const double q00 = 0.6 * 1.0 + -0.2 * -0.25, q01 = 0.6 * 0.5 + -0.2 * 0.75;
    const double q10 = 0.1 * 1.0 + 0.9 * -0.25, q11 = 0.1 * 0.5 + 0.9 * 0.75;
    const double s0 = (q00 * k0 + q01 * k1) / std::sqrt(2.0);
    const double s1 = (q10 * k0 + q11 * k1) / std::sqrt(2.0);
    const double m = std::max(s0, s1);
    const double w0 = std::exp(s0 - m) / (std::exp(s0 - m) + std::exp(s1 - m));
    const double w1 = 1.0 - w0;

    EXPECT_NEAR(out.at(0), w0 * v0, 1e-12);
    EXPECT_NEAR(out.at(1), w0 * v1, 1e-12);
    EXPECT_NEAR(out.at(2), w1 * v0, 1e-12);
    EXPECT_NEAR(out.at(3), w1 * v1, 1e-12);
}

TEST(MapperForward, IdentityAtInitialization) {
    const std::size_t D = 16;
    GroupRanges groups;  // 4/4/8
    MapperParams mp = MapperParams::init(17, D, 4, 2, groups);
    LatentStack w{random_stack_codes(groups.total(), D, 8), groups};
    PromptEmbedding e = test_prompt();

    Tensor dw = mapper_forward(w, e, mp);
    for (std::size_t i = 0; i < dw.numel(); ++i) EXPECT_EQ(dw.at(i), 0.0);

    Tensor w_edited = add(w.codes, dw);
    for (std::size_t i = 0; i < w_edited.numel(); ++i) EXPECT_EQ(w_edited.at(i), w.codes.at(i));
}

TEST(BaselineForward, IdentityAtInitialization) {
    const std::size_t D = 16;
    GroupRanges groups;
    BaselineMapperParams mp = BaselineMapperParams::init(18, D, 2, groups);
    LatentStack w{random_stack_codes(groups.total(), D, 9), groups};
    Tensor dw = baseline_forward(w, test_prompt(), mp);
    for (std::size_t i = 0; i < dw.numel(); ++i) EXPECT_EQ(dw.at(i), 0.0);
}

// Gradient check over every parameter of a D=4, N=4, L=1 instance.
TEST(MapperForward, AllParameterGradientsMatchFiniteDifferences) {
    const std::size_t D = 4;
    GroupRanges groups = small_groups();
    MapperParams mp = MapperParams::init(19, D, 2, 1, groups);
    // a zero projection would make most gradients trivially zero; randomize
    std::mt19937 rng(20);
    std::uniform_real_distribution<double> dist(-0.5, 0.5);
    mp.visit([&](const std::string& name, Tensor& t) {
        if (name.find("proj") != std::string::npos) {
            std::vector<real_t> v(t.numel());
            for (auto& x : v) x = dist(rng);
            t = Tensor::from(t.shape(), std::move(v), true);
        }
    });
    LatentStack w{random_stack_codes(groups.total(), D, 21), groups};
    PromptEmbedding e = test_prompt();

    auto objective_with = [&](MapperParams& probe_params) {
        Tensor dw = mapper_forward(w, e, probe_params);
        return reduce_sum(mul(dw, dw)).item();
    };

    // analytic gradients
    Tape tape;
    MapperParams watched = mp;
    std::vector<std::pair<std::string, Tensor*>> watched_list;
    watched.visit([&](const std::string& name, Tensor& t) {
        t = tape.watch(t);
        watched_list.emplace_back(name, &t);
    });
    Tensor dw = mapper_forward(w, e, watched);
    auto grads = tape.backward(reduce_sum(mul(dw, dw)));

    double worst = 0;
    std::string worst_name;
    std::size_t checked = 0;
    watched.visit([&](const std::string& name, Tensor& t) {
        const Tensor& analytic = grads.at(t.node());
        // probe a spread of coordinates per parameter
        for (std::size_t i : gradcheck::spread_coords(t.numel(), 6)) {
            const double x0 = t.at(i);
            MapperParams probe = mp;
            double fp = 0, fm = 0;
            probe.visit([&](const std::string& pname, Tensor& pt) {
                if (pname == name) pt = pt.with_value(i, x0 + gradcheck::kStep);
            });
            fp = objective_with(probe);
            probe = mp;
            probe.visit([&](const std::string& pname, Tensor& pt) {
                if (pname == name) pt = pt.with_value(i, x0 - gradcheck::kStep);
            });
            fm = objective_with(probe);
            const double numeric = (fp - fm) / (2 * gradcheck::kStep);
            const double err = gradcheck::rel_err(analytic.at(i), numeric);
            ++checked;
            if (err > worst) {
                worst = err;
                worst_name = name;
            }
        }
    });
    EXPECT_LT(worst, 1e-4) << "worst at " << worst_name << " over " << checked << " coords";
}

TEST(BaselineForward, RowPermutationEquivariance) {
    const std::size_t D = 16;
    GroupRanges groups;  // 4/4/8
    BaselineMapperParams mp = BaselineMapperParams::init(23, D, 3, groups);
    // give the final projections real values so outputs are nonzero
    std::mt19937 prng(24);
    std::uniform_real_distribution<double> dist(-0.4, 0.4);
    mp.visit([&](const std::string& name, Tensor& t) {
        if (name.find("proj") != std::string::npos) {
            std::vector<real_t> v(t.numel());
            for (auto& x : v) x = dist(prng);
            t = Tensor::from(t.shape(), std::move(v), true);
        }
    });
    Tensor codes = random_stack_codes(groups.total(), D, 25);
    PromptEmbedding e = test_prompt();
    Tensor out = baseline_forward({codes, groups}, e, mp);

    // permute rows within each group: rotate by one
    std::vector<std::size_t> perm(groups.total());
    for (Group g : kAllGroups) {
        const std::size_t b = groups.begin(g), n = groups.size(g);
        for (std::size_t i = 0; i < n; ++i) perm[b + i] = b + (i + 1) % n;
    }
    std::vector<real_t> pc(codes.numel());
    for (std::size_t r = 0; r < groups.total(); ++r)
        for (std::size_t j = 0; j < D; ++j) pc[r * D + j] = codes.at(perm[r] * D + j);
    Tensor out_perm = baseline_forward({Tensor::from(codes.shape(), pc), groups}, e, mp);

    // permuting inputs permutes outputs identically (row-wise weights
    // cannot distinguish layers); bit-exact because each row's arithmetic
    // is untouched by the permutation
    for (std::size_t r = 0; r < groups.total(); ++r) {
        for (std::size_t j = 0; j < D; ++j) {
            EXPECT_EQ(out_perm.at(r * D + j), out.at(perm[r] * D + j));
        }
    }
}

TEST(MapperForward, PositionalEncodingBreaksEquivariance) {
    const std::size_t D = 16;
    GroupRanges groups;
    MapperParams mp = MapperParams::init(26, D, 4, 2, groups);
    std::mt19937 prng(27);
    std::uniform_real_distribution<double> dist(-0.4, 0.4);
    mp.visit([&](const std::string& name, Tensor& t) {
        if (name.find("proj") != std::string::npos) {
            std::vector<real_t> v(t.numel());
            for (auto& x : v) x = dist(prng);
            t = Tensor::from(t.shape(), std::move(v), true);
        }
    });
    PromptEmbedding e = test_prompt();

    bool witness_found = false;
    for (unsigned trial = 0; trial < 20 && !witness_found; ++trial) {
        Tensor codes = random_stack_codes(groups.total(), D, 100 + trial);
        Tensor out = mapper_forward({codes, groups}, e, mp);

        std::vector<std::size_t> perm(groups.total());
        for (Group g : kAllGroups) {
            const std::size_t b = groups.begin(g), n = groups.size(g);
            for (std::size_t i = 0; i < n; ++i) perm[b + i] = b + (i + 1) % n;
        }
        std::vector<real_t> pc(codes.numel());
        for (std::size_t r = 0; r < groups.total(); ++r)
            for (std::size_t j = 0; j < D; ++j) pc[r * D + j] = codes.at(perm[r] * D + j);
        Tensor out_perm = mapper_forward({Tensor::from(codes.shape(), pc), groups}, e, mp);

        for (std::size_t r = 0; r < groups.total() && !witness_found; ++r) {
            for (std::size_t j = 0; j < D; ++j) {
                if (std::fabs(out_perm.at(r * D + j) - out.at(perm[r] * D + j)) > 1e-9) {
                    witness_found = true;
                    break;
                }
            }
        }
    }
    EXPECT_TRUE(witness_found);
}

TEST(MapperForward, GroupsProduceIndependentResiduals) {
    // different parameters per group: editing one group's projection only
    // changes that group's rows
    const std::size_t D = 8;
    GroupRanges groups{2, 2, 4};
    MapperParams mp = MapperParams::init(30, D, 2, 1, groups);
    std::vector<real_t> pv(D * D, 0.1);
    mp.per_group[2].proj_w = Tensor::from({D, D}, pv, true);  // fine group only
    LatentStack w{random_stack_codes(groups.total(), D, 31), groups};
    Tensor dw = mapper_forward(w, test_prompt(), mp);
    for (std::size_t r = 0; r < groups.total(); ++r) {
        double rowsum = 0;
        for (std::size_t j = 0; j < D; ++j) rowsum += std::fabs(dw.at(r * D + j));
        if (r < groups.begin(Group::fine)) {
            EXPECT_EQ(rowsum, 0.0) << "row " << r;
        } else {
            EXPECT_GT(rowsum, 0.0) << "row " << r;
        }
    }
}
