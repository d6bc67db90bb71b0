#include <gtest/gtest.h>

#include <cstdio>
#include <random>

#include "tailor/metrics.hpp"
#include "tailor/trainer.hpp"

using namespace tailor;

namespace {

// Tiny configuration for fast loop tests.
TrainConfig tiny_config() {
    TrainConfig c;
    c.steps = 4;
    c.batch_size = 2;
    c.n_train = 8;
    c.n_test = 4;
    c.latent_dim = 16;
    c.heads = 4;
    c.depth = 2;
    c.width = 32;
    c.height = 64;
    c.prompt_kinds = PromptKinds::texture;
    return c;
}

const GeneratorParams& tiny_gen() {
    static GeneratorParams g = GeneratorParams::build(77, 16, 32, 64);
    return g;
}

const EmbedNet& tiny_net() {
    static EmbedNet n = EmbedNet::build(tiny_gen());
    return n;
}

const Lexicon& lex() {
    static Lexicon l = Lexicon::builtin();
    return l;
}

}  // namespace

TEST(Dataset, DeterministicStreams) {
    Dataset a(5, 20, 10, lex(), BodyPart::upper, PromptKinds::mixed, 16);
    Dataset b(5, 20, 10, lex(), BodyPart::upper, PromptKinds::mixed, 16);
    for (std::size_t i = 0; i < 20; ++i) {
        Sample sa = a.train_sample(i), sb = b.train_sample(i);
        EXPECT_EQ(sa.prompt, sb.prompt);
        for (std::size_t j = 0; j < 16; ++j) EXPECT_EQ(sa.z.at(j), sb.z.at(j));
    }
}

TEST(Dataset, TrainTestStreamsDisjoint) {
    Dataset d(5, 50, 50, lex(), BodyPart::upper, PromptKinds::mixed, 8);
    for (std::size_t i = 0; i < 50; ++i) {
        Sample tr = d.train_sample(i), te = d.test_sample(i);
        bool equal = true;
        for (std::size_t j = 0; j < 8 && equal; ++j) equal = tr.z.at(j) == te.z.at(j);
        EXPECT_FALSE(equal) << "index " << i;
    }
}

TEST(Dataset, EveryPromptParses) {
    for (BodyPart part : {BodyPart::upper, BodyPart::lower}) {
        for (PromptKinds kinds : {PromptKinds::texture, PromptKinds::shape, PromptKinds::mixed}) {
            Dataset d(9, 40, 10, lex(), part, kinds, 8);
            for (std::size_t i = 0; i < 40; ++i) {
                EXPECT_NO_THROW(embed_text(d.train_sample(i).prompt, lex()));
            }
        }
    }
}

TEST(Dataset, DefaultScaleIsDocumentedToyScale) {
    TrainConfig c;
    EXPECT_EQ(c.n_train, 2000u);
    EXPECT_EQ(c.n_test, 200u);
}

TEST(Checkpoint, RoundTripByteIdentical) {
    CheckpointBundle b;
    b.step = 42;
    b.config_text = "lr = 0.0005\n";
    b.arrays.emplace_back("w1", Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}));
    b.arrays.emplace_back("b1", Tensor::from({3}, {0.1, -0.2, 0.3}));

    const std::string path = "/tmp/tailor_ckpt_test.bin";
    b.save(path);
    CheckpointBundle loaded = CheckpointBundle::load(path);
    EXPECT_EQ(loaded.step, 42u);
    EXPECT_EQ(loaded.config_text, b.config_text);
    EXPECT_EQ(b.serialize(), loaded.serialize());
    std::remove(path.c_str());
}

TEST(Checkpoint, FlippedByteIsCorrupt) {
    CheckpointBundle b;
    b.arrays.emplace_back("w", Tensor::from({2}, {1.5, -0.5}));
    auto bytes = b.serialize();
    bytes[bytes.size() / 2] ^= 0x40;
    EXPECT_THROW(CheckpointBundle::deserialize(bytes), CorruptCheckpoint);
}

TEST(Checkpoint, VersionMismatchDetected) {
    CheckpointBundle b;
    b.arrays.emplace_back("w", Tensor::from({1}, {1.0}));
    auto bytes = b.serialize();
    bytes[4] = 99;  // version field
    // recompute the trailing digest so only the version is wrong
    const std::uint64_t digest = fnv1a64(bytes.data(), bytes.size() - 8);
    for (int i = 0; i < 8; ++i) bytes[bytes.size() - 8 + i] = static_cast<std::uint8_t>(digest >> (8 * i));
    EXPECT_THROW(CheckpointBundle::deserialize(bytes), VersionMismatch);
}

TEST(Checkpoint, MismatchedArchitectureNamesOffender) {
    MapperParams mp = MapperParams::init(3, 8, 2, 1, GroupRanges{2, 1, 1});
    CheckpointBundle b;
    mp.visit([&](const std::string& name, Tensor& t) { b.arrays.emplace_back(name, t.detached()); });

    // same arch, different width: shapes differ
    MapperParams wrong = MapperParams::init(3, 8, 2, 2, GroupRanges{2, 1, 1});
    try {
        b.apply_to(wrong);
        FAIL() << "expected ShapeMismatch";
    } catch (const ShapeMismatch& e) {
        EXPECT_NE(std::string(e.what()).find("block1"), std::string::npos);
    }

    BaselineMapperParams base = BaselineMapperParams::init(3, 8, 1, GroupRanges{2, 1, 1});
    EXPECT_THROW(b.apply_to(base), ShapeMismatch);
}

TEST(Train, StepZeroLossMatchesIdentityPrediction) {
    TrainConfig c = tiny_config();
    c.steps = 1;
    TrainResult r = train(c, tiny_gen(), tiny_net(), lex());
    ASSERT_EQ(r.log.size(), 1u);

    // identity init: w' = w, so per sample the loss is
    // lambda_c * (1 - cos(E_i(G(w)), E_t(t))) + lambda_d * 1
    Dataset d(c.seed, c.n_train, c.n_test, lex(), c.target_part, c.prompt_kinds, c.latent_dim);
    const PromptEmbedding source = embed_text("a human", lex());
    double expected = 0;
    for (std::size_t j = 0; j < c.batch_size; ++j) {
        Sample s = d.train_sample(j);
        PromptEmbedding prompt = embed_text(s.prompt, lex());
        LatentStack w = map_to_w(s.z, tiny_gen(), c.psi);
        Tensor img = render(decode_params(w, tiny_gen()), tiny_gen()).image;
        const double lclip =
            1.0 - cosine(tiny_net().embed_image(img).vector, prompt.vector).item();
        expected += c.loss_weights.clip * lclip + c.loss_weights.direct * 1.0;
    }
    expected /= c.batch_size;
    EXPECT_NEAR(r.log[0].total, expected, 1e-9);
    EXPECT_NEAR(r.log[0].bg, 0.0, 1e-12);
    EXPECT_NEAR(r.log[0].norm, 0.0, 1e-12);
}

TEST(Train, DeterministicCheckpointDigest) {
    TrainConfig c = tiny_config();
    TrainResult r1 = train(c, tiny_gen(), tiny_net(), lex());
    TrainResult r2 = train(c, tiny_gen(), tiny_net(), lex());
    EXPECT_EQ(r1.checkpoint.content_digest(), r2.checkpoint.content_digest());
    // and a different seed gives a different digest
    c.seed += 1;
    TrainResult r3 = train(c, tiny_gen(), tiny_net(), lex());
    EXPECT_NE(r1.checkpoint.content_digest(), r3.checkpoint.content_digest());
}

TEST(Train, FrozenDigestsUnchanged) {
    TrainConfig c = tiny_config();
    const std::uint64_t g0 = tiny_gen().digest();
    const std::uint64_t n0 = tiny_net().digest();
    TrainResult r = train(c, tiny_gen(), tiny_net(), lex());
    EXPECT_EQ(tiny_gen().digest(), g0);
    EXPECT_EQ(tiny_net().digest(), n0);
    EXPECT_EQ(r.generator_digest, g0);
    EXPECT_EQ(r.embednet_digest, n0);
}

TEST(Train, LossLogIsFinite) {
    TrainConfig c = tiny_config();
    c.steps = 6;
    TrainResult r = train(c, tiny_gen(), tiny_net(), lex());
    ASSERT_EQ(r.log.size(), 6u);
    for (const auto& l : r.log) {
        EXPECT_TRUE(std::isfinite(l.total));
        EXPECT_TRUE(std::isfinite(l.clip));
        EXPECT_TRUE(std::isfinite(l.direct));
        EXPECT_TRUE(std::isfinite(l.bg));
        EXPECT_TRUE(std::isfinite(l.norm));
    }
}

TEST(Train, CheckpointRestoresForwardExactly) {
    TrainConfig c = tiny_config();
    TrainResult r = train(c, tiny_gen(), tiny_net(), lex());

    MapperVariant restored = load_mapper(r.checkpoint, c);
    Dataset d(c.seed, c.n_train, c.n_test, lex(), c.target_part, c.prompt_kinds, c.latent_dim);
    Sample s = d.test_sample(0);
    PromptEmbedding prompt = embed_text(s.prompt, lex());
    LatentStack w = map_to_w(s.z, tiny_gen(), c.psi);
    Tensor d1 = detail::forward_variant(r.params, w, prompt);
    Tensor d2 = detail::forward_variant(restored, w, prompt);
    for (std::size_t i = 0; i < d1.numel(); ++i) EXPECT_EQ(d1.at(i), d2.at(i));
}

// Joint training with a group-local residual: the losses of a fine-group
// edit must push exactly zero gradient into the other groups' mappers.
TEST(Train, GroupIsolationUnderGroupLocalResidual) {
    TrainConfig c = tiny_config();
    c.edit_groups = {Group::fine};
    c.prompt_kinds = PromptKinds::texture;

    Dataset d(c.seed, c.n_train, c.n_test, lex(), c.target_part, c.prompt_kinds, c.latent_dim);
    MapperVariant params = init_mapper_variant(c);
    // give every projection nonzero values so gradients would flow if wired
    auto& mp = std::get<MapperParams>(params);
    std::mt19937 prng(5);
    std::uniform_real_distribution<double> dist(-0.05, 0.05);
    mp.visit([&](const std::string& name, Tensor& t) {
        if (name.find("proj") != std::string::npos) {
            std::vector<real_t> v(t.numel());
            for (auto& x : v) x = dist(prng);
            t = Tensor::from(t.shape(), std::move(v), true);
        }
    });

    Sample s = d.train_sample(0);
    PromptEmbedding prompt = embed_text(s.prompt, lex());
    PromptEmbedding source = embed_text("a human", lex());
    EditTarget target = target_of_prompt(s.prompt, lex());
    LatentStack w = map_to_w(s.z, tiny_gen(), c.psi);

    Tape tape;
    MapperVariant watched = params;
    detail::visit_variant(watched, [&](const std::string&, Tensor& t) { t = tape.watch(t); });
    Tensor delta = detail::forward_variant(watched, w, prompt);
    delta = detail::apply_group_mask(delta, w.groups, c.edit_groups);
    EditContext ctx = make_edit_context(w, delta, prompt, source, target, tiny_gen(), tiny_net());
    auto grads = tape.backward(total_loss(ctx, c.loss_weights, tiny_gen()).total);

    double fine_grad_mass = 0;
    detail::visit_variant(watched, [&](const std::string& name, Tensor& t) {
        const Tensor& g = grads.at(t.node());
        double mass = 0;
        for (std::size_t i = 0; i < g.numel(); ++i) mass += std::fabs(g.at(i));
        if (name.find(".coarse.") != std::string::npos ||
            name.find(".medium.") != std::string::npos) {
            EXPECT_EQ(mass, 0.0) << name;
        } else {
            fine_grad_mass += mass;
        }
    });
    EXPECT_GT(fine_grad_mass, 0.0);
}

TEST(Eval, IdentityCheckpointScoresZero) {
    TrainConfig c = tiny_config();
    MapperVariant params = init_mapper_variant(c);  // identity at init
    EvalReport rep = evaluate(params, c, tiny_gen(), tiny_net(), lex(), 4, EditMode::feature);
    // equal similarities: strict inequality never fires, background is
    // untouched
    EXPECT_DOUBLE_EQ(rep.clip_acc, 0.0);
    EXPECT_DOUBLE_EQ(rep.bg_dist_mse, 0.0);
    EXPECT_DOUBLE_EQ(rep.bg_dist_proj, 0.0);
    EXPECT_EQ(rep.samples.size(), 4u);
}

TEST(Eval, ReportAggregatesMatchRecords) {
    TrainConfig c = tiny_config();
    c.steps = 3;
    TrainResult r = train(c, tiny_gen(), tiny_net(), lex());
    EvalReport rep = evaluate(r.params, c, tiny_gen(), tiny_net(), lex(), 4, EditMode::none);
    std::size_t hits = 0;
    real_t mse = 0, proj = 0;
    for (const auto& s : rep.samples) {
        hits += s.hit;
        mse += s.bg_mse;
        proj += s.bg_proj;
    }
    EXPECT_DOUBLE_EQ(rep.clip_acc, 100.0 * hits / rep.samples.size());
    EXPECT_DOUBLE_EQ(rep.bg_dist_mse, mse / rep.samples.size());
    EXPECT_DOUBLE_EQ(rep.bg_dist_proj, proj / rep.samples.size());
}
