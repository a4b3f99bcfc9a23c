#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "oracles.hpp"

using namespace mlsal;

namespace {

Tensor random_image(int s, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return oracle::random_tensor({3, s, s}, rng, 0.0, 1.0);
}

bool in_open_unit(const Tensor& t) {
    for (double v : t.storage())
        if (!(v > 0.0 && v < 1.0)) return false;
    return true;
}

struct BackboneFixture {
    ParamStore store;
    std::mt19937_64 rng{11};
    Backbone backbone = Backbone::build(BackboneConfig::tiny(), store, rng);
};

}  // namespace

TEST(Backbone, TinyPresetShapes) {
    BackboneFixture f;
    EXPECT_EQ(f.backbone.conv_count(), 13u);
    const auto blocks = f.backbone.forward(Var::constant(random_image(64, 1)));
    ASSERT_EQ(blocks.size(), 6u);
    const std::array<int, 6> sizes{64, 32, 16, 8, 4, 2};
    const std::array<std::size_t, 6> layers{2, 2, 3, 3, 3, 1};
    for (std::size_t i = 0; i < 6; ++i) {
        EXPECT_EQ(blocks[i].block_index, static_cast<int>(i));
        EXPECT_EQ(blocks[i].size(), sizes[i]);
        EXPECT_EQ(blocks[i].layers.size(), layers[i]);
        EXPECT_EQ(blocks[i].spatial_scale, 1 << i);
        for (const auto& l : blocks[i].layers) {
            EXPECT_EQ(l.value().height(), sizes[i]);
            EXPECT_TRUE(l.value().all_finite());
        }
    }
    const Tensor& b5 = blocks[5].layers[0].value();
    EXPECT_EQ(b5.shape(), (std::vector<int>{32, 2, 2}));
}

TEST(Backbone, FullPresetBlock5Shape) {
    ParamStore store;
    std::mt19937_64 rng(1);
    Backbone b = Backbone::build(BackboneConfig::full(), store, rng);
    const auto blocks = b.forward(Var::constant(Tensor(3, 256, 256, 0.5)));
    EXPECT_EQ(blocks[5].layers[0].value().shape(), (std::vector<int>{512, 8, 8}));
}

TEST(Backbone, ConfigErrors) {
    BackboneConfig c;
    c.block_widths[0] = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = BackboneConfig::tiny();
    c.input_size = 48;
    EXPECT_THROW(c.validate(), ConfigError);
    c = BackboneConfig::tiny();
    c.init_policy = InitPolicy::external_weights;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Backbone, ZeroImageFiniteAndDeterministic) {
    BackboneFixture f;
    const auto a = f.backbone.forward(Var::constant(Tensor(3, 64, 64)));
    for (const auto& b : a)
        for (const auto& l : b.layers) EXPECT_TRUE(l.value().all_finite());
    const Tensor img = random_image(64, 3);
    const auto x = f.backbone.forward(Var::constant(img));
    const auto y = f.backbone.forward(Var::constant(img));
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < x[i].layers.size(); ++j) EXPECT_EQ(x[i].layers[j].value(), y[i].layers[j].value());
}

TEST(Backbone, InputErrors) {
    BackboneFixture f;
    EXPECT_THROW(f.backbone.forward(Var::constant(Tensor(3, 32, 32))), ShapeError);
    Tensor bad(3, 64, 64);
    bad(1, 5, 5) = std::nan("");
    EXPECT_THROW(f.backbone.forward(Var::constant(bad)), ValidationError);
}

TEST(Backbone, ExternalWeightsRoundTripAndMismatch) {
    BackboneFixture f;
    Archive a;
    for (const auto& p : f.store.all()) a.put(p.name, p.var.value());
    const auto path = std::filesystem::temp_directory_path() / "mlsal_test_backbone.bin";
    a.save(path);

    BackboneConfig c;
    c.init_policy = InitPolicy::external_weights;
    c.weights_file = path.string();
    ParamStore store;
    std::mt19937_64 rng(999);
    Backbone loaded = Backbone::build(c, store, rng);
    for (const auto& p : store.all()) EXPECT_EQ(p.var.value(), f.store.at(p.name).var.value()) << p.name;

    a.put("block0.conv0.weight", Tensor(std::vector<int>{8, 3, 5, 5}));
    a.save(path);
    ParamStore store2;
    EXPECT_THROW(Backbone::build(c, store2, rng), LoadError);
    std::filesystem::remove(path);
}

TEST(Mlm, ShapesAndRange) {
    BackboneFixture f;
    const auto blocks = f.backbone.forward(Var::constant(random_image(64, 4)));
    MlmConfig cfg;
    auto mlm = MutualLearningModule::build(2, 32, cfg, f.store, f.rng);
    const MlmOutput out = mlm.forward(blocks[2]);
    ASSERT_EQ(out.students(), 3);
    for (const auto& p : out.student_predictions) {
        EXPECT_EQ(p.value().shape(), (std::vector<int>{1, 16, 16}));
        EXPECT_TRUE(in_open_unit(p.value()));
    }
    EXPECT_EQ(out.decoder_features.node(), out.student_features[0].node());
}

TEST(Mlm, SingleStudentHasNoMimicry) {
    BackboneFixture f;
    const auto blocks = f.backbone.forward(Var::constant(random_image(64, 5)));
    MlmConfig cfg;
    cfg.students = 1;
    auto mlm = MutualLearningModule::build(0, 8, cfg, f.store, f.rng);
    const MlmOutput out = mlm.forward(blocks[0]);
    ASSERT_EQ(out.students(), 1);
    std::array<double, 6> r{1, 1, 1, 1, 1, 1};
    EXPECT_EQ(mimicry_loss(std::vector<std::vector<Var>>{out.student_predictions}, r).value().item(), 0.0);
}

TEST(Mlm, SharedWeightsGiveIdenticalStudentsAndPermutationSwapsOutputs) {
    BackboneFixture f;
    const auto blocks = f.backbone.forward(Var::constant(random_image(64, 6)));
    MlmConfig cfg;
    auto mlm = MutualLearningModule::build(3, 32, cfg, f.store, f.rng);
    const std::vector<std::string> parts{"conv0.weight", "conv0.bias", "conv1.weight", "conv1.bias",
                                         "conv2.weight", "conv2.bias", "head.weight",  "head.bias"};
    auto name = [](int s, const std::string& p) { return "mlm3.student" + std::to_string(s) + "." + p; };

    const MlmOutput before = mlm.forward(blocks[3]);
    for (const auto& p : parts) {
        Tensor t0 = f.store.at(name(0, p)).var.value();
        f.store.at(name(0, p)).var.mutable_value() = f.store.at(name(1, p)).var.value();
        f.store.at(name(1, p)).var.mutable_value() = t0;
    }
    const MlmOutput swapped = mlm.forward(blocks[3]);
    EXPECT_EQ(swapped.student_predictions[0].value(), before.student_predictions[1].value());
    EXPECT_EQ(swapped.student_predictions[1].value(), before.student_predictions[0].value());
    EXPECT_EQ(swapped.student_predictions[2].value(), before.student_predictions[2].value());

    for (const auto& p : parts)
        for (int s : {1, 2}) f.store.at(name(s, p)).var.mutable_value() = f.store.at(name(0, p)).var.value();
    const MlmOutput same = mlm.forward(blocks[3]);
    EXPECT_EQ(same.student_predictions[0].value(), same.student_predictions[1].value());
    EXPECT_EQ(same.student_predictions[0].value(), same.student_predictions[2].value());
    std::array<double, 6> r{1, 1, 1, 1, 1, 1};
    EXPECT_EQ(mimicry_loss(std::vector<std::vector<Var>>{same.student_predictions}, r).value().item(), 0.0);
}

TEST(Mlm, InjectedShapeMismatch) {
    BackboneFixture f;
    const auto blocks = f.backbone.forward(Var::constant(random_image(64, 7)));
    auto mlm = MutualLearningModule::build(1, 16, MlmConfig{}, f.store, f.rng);
    EXPECT_THROW(mlm.forward(blocks[1], Var::constant(Tensor(16, 16, 16))), ShapeError);
}

TEST(Mlm, ConfigMonotonicity) {
    MlmConfig c;
    c.dilations = {1, 2, 1, 2, 2, 4};
    EXPECT_THROW(c.validate(), ConfigError);
    c = MlmConfig{};
    c.kernel_sizes[0] = 4;
    EXPECT_THROW(c.validate(), ConfigError);
    c = MlmConfig{};
    c.students = 0;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Mlm, TestBranchSelection) {
    BackboneFixture f;
    const auto blocks = f.backbone.forward(Var::constant(random_image(64, 8)));
    auto mlm = MutualLearningModule::build(0, 8, MlmConfig{}, f.store, f.rng);
    const MlmOutput out = mlm.forward(blocks[0]);
    EXPECT_EQ(select_test_branch(out, BranchPolicy::fixed(1)).node(), out.student_predictions[1].node());
    EXPECT_EQ(select_test_branch(out, BranchPolicy::fixed(1)).value(), select_test_branch(out, BranchPolicy::fixed(1)).value());
    EXPECT_EQ(BranchPolicy::seeded_random(42).resolve(3), BranchPolicy::seeded_random(42).resolve(3));
    EXPECT_THROW(select_test_branch(out, BranchPolicy::fixed(5)), ConfigError);
    // Seeded draws cover every student across seeds.
    std::set<int> seen;
    for (std::uint64_t s = 0; s < 50; ++s) seen.insert(BranchPolicy::seeded_random(s).resolve(3));
    EXPECT_EQ(seen.size(), 3u);
}

TEST(EdgeModule, ShapesAndLayerCounts) {
    BackboneFixture f;
    const auto blocks = f.backbone.forward(Var::constant(random_image(64, 9)));
    EdgeConfig cfg;
    auto em0 = EdgeModule::build(0, 8, cfg, f.store, f.rng);
    const EmOutput o = em0.forward(blocks[0]);
    EXPECT_EQ(o.edge_features.value().shape(), (std::vector<int>{16, 64, 64}));
    EXPECT_EQ(o.edge_map.value().shape(), (std::vector<int>{1, 64, 64}));
    EXPECT_TRUE(in_open_unit(o.edge_map.value()));

    EXPECT_EQ(edge_module_layers(0), 2);
    EXPECT_EQ(edge_module_layers(1), 2);
    EXPECT_EQ(edge_module_layers(2), 3);
    EXPECT_THROW(edge_module_layers(3), ConfigError);
    EXPECT_THROW(EdgeModule::build(3, 32, cfg, f.store, f.rng), ConfigError);

    auto em2 = EdgeModule::build(2, 32, cfg, f.store, f.rng);
    for (int j = 0; j < 3; ++j) EXPECT_TRUE(f.store.contains("em2.proj" + std::to_string(j) + ".weight"));
    EXPECT_FALSE(f.store.contains("em2.proj3.weight"));
    EXPECT_FALSE(f.store.contains("em0.proj2.weight"));
    // Every one of the three layers influences a_e.
    auto blocks2 = blocks;
    const Tensor base = em2.features(blocks2[2]).value();
    for (std::size_t j = 0; j < 3; ++j) {
        auto b = blocks2[2];
        Tensor t = b.layers[j].value();
        for (double& v : t.storage()) v += 0.5;
        b.layers[j] = Var::constant(t);
        EXPECT_NE(em2.features(b).value(), base) << "layer " << j;
    }
}

TEST(EdgeModule, ResidualInject) {
    BackboneFixture f;
    auto em = EdgeModule::build(0, 8, EdgeConfig{}, f.store, f.rng);
    std::mt19937_64 rng(3);
    const Tensor layer = oracle::random_tensor({8, 64, 64}, rng);
    // Zero features or zero-initialized projection: identity.
    EXPECT_EQ(em.residual_inject(Var::constant(Tensor(16, 64, 64)), Var::constant(layer)).value(), layer);
    const Tensor a = oracle::random_tensor({16, 64, 64}, rng);
    EXPECT_EQ(em.residual_inject(Var::constant(a), Var::constant(layer)).value(), layer);
    // Once trained the projection maps 16 -> 8 channels and adds.
    for (double& v : f.store.at("em0.inject.weight").var.mutable_value().storage()) v = 0.1;
    const Tensor out = em.residual_inject(Var::constant(a), Var::constant(layer)).value();
    EXPECT_EQ(out.shape(), layer.shape());
    double s = 0;
    for (int c = 0; c < 16; ++c) s += 0.1 * a(c, 3, 4);
    EXPECT_NEAR(out(5, 3, 4), layer(5, 3, 4) + s, 1e-12);
    EXPECT_THROW(em.residual_inject(Var::constant(Tensor(16, 32, 32)), Var::constant(layer)), ShapeError);
}

TEST(EdgeFusion, ShapesConstantsAndArity) {
    ParamStore store;
    std::mt19937_64 rng(1);
    EdgeConfig cfg;
    auto fusion = EdgeFusion::build(cfg, store, rng);
    std::vector<EmOutput> outs;
    for (int s : {64, 32, 16}) outs.push_back({Var::constant(Tensor(16, s, s, 0.7)), Var::constant(Tensor(1, s, s, 0.5))});
    const Tensor e = fusion.merge(outs, 64).map.value();
    EXPECT_EQ(e.shape(), (std::vector<int>{1, 64, 64}));
    EXPECT_TRUE(in_open_unit(e));
    for (double v : e.storage()) EXPECT_NEAR(v, e[0], 1e-14);
    EXPECT_EQ(fusion.merge(outs, 64).map.value(), e);
    outs.pop_back();
    EXPECT_THROW(fusion.merge(outs, 64), ShapeError);
}

TEST(Decoder, TinyPresetSizesAndRange) {
    Model m = Model::build(ModelConfig::tiny(), 1);
    const SaliencyPass p = m.forward_saliency(Var::constant(random_image(64, 10)));
    ASSERT_EQ(p.decoder.predictions.size(), 5u);
    const std::array<int, 5> sizes{4, 8, 16, 32, 64};
    for (std::size_t i = 0; i < 5; ++i) {
        EXPECT_EQ(p.decoder.predictions[i].value().shape(), (std::vector<int>{1, sizes[i], sizes[i]}));
        EXPECT_TRUE(in_open_unit(p.decoder.predictions[i].value()));
    }
    EXPECT_EQ(p.decoder.final_map.node(), p.decoder.predictions[4].node());
}

TEST(Decoder, FullResolutionChain) {
    // The 256-pixel size contract, with a narrow decoder to keep memory low.
    ParamStore store;
    std::mt19937_64 rng(2);
    Decoder d = Decoder::build(4, store, rng);
    std::vector<MlmOutput> mlm(6);
    for (int i = 0; i < 6; ++i) mlm[static_cast<std::size_t>(i)].decoder_features = Var::constant(Tensor(4, 256 >> i, 256 >> i, 0.1));
    const DecoderOutput out = d.forward(mlm);
    EXPECT_EQ(out.final_map.value().shape(), (std::vector<int>{1, 256, 256}));
}

TEST(Decoder, ShapeErrors) {
    ParamStore store;
    std::mt19937_64 rng(2);
    Decoder d = Decoder::build(4, store, rng);
    std::vector<MlmOutput> mlm(5);
    EXPECT_THROW(d.forward(mlm), ShapeError);
    mlm.resize(6);
    for (int i = 0; i < 6; ++i) mlm[static_cast<std::size_t>(i)].decoder_features = Var::constant(Tensor(4, 8, 8));
    EXPECT_THROW(d.forward(mlm), ShapeError);
}

TEST(Decoder, GradientReachesEveryMlm) {
    Model m = Model::build(ModelConfig::tiny(), 3);
    const SaliencyPass p = m.forward_saliency(Var::constant(random_image(64, 11)));
    std::mt19937_64 rng(4);
    const Tensor mask = oracle::random_mask(64, 64, 0.3, rng);
    const auto gts = make_saliency_bundle(mask);
    m.params().zero_grad();
    backward(decoder_loss(p.decoder.predictions, gts, SupervisionSchedule::make(ScheduleVariant::intertwined),
                          LossWeights{}.r_dec));
    for (int i = 0; i < 6; ++i) {
        const Tensor& g = m.params().at("mlm" + std::to_string(i) + ".student0.conv2.weight").var.grad();
        double norm = 0;
        for (double v : g.storage()) norm += v * v;
        EXPECT_GT(norm, 0.0) << "mlm " << i;
        // Non-designated students are not wired to the decoder.
        const Tensor& g1 = m.params().at("mlm" + std::to_string(i) + ".student1.conv2.weight").var.grad();
        for (double v : g1.storage()) EXPECT_EQ(v, 0.0);
    }
}

TEST(Model, SaliencyPassComputesEdgeFeaturesOnly) {
    Model m = Model::build(ModelConfig::tiny(), 5);
    m.reset_counters();
    const SaliencyPass p = m.forward_saliency(Var::constant(random_image(64, 12)));
    EXPECT_EQ(p.edge_features.size(), 3u);
    for (const auto& em : m.edge_modules()) {
        EXPECT_EQ(em.feature_calls(), 1);
        EXPECT_EQ(em.head_calls(), 0);
    }
    EXPECT_EQ(m.edge_fusion()->calls(), 0);

    m.reset_counters();
    const EdgePass e = m.forward_edge(Var::constant(random_image(64, 13)));
    for (const auto& em : m.edge_modules()) {
        EXPECT_EQ(em.feature_calls(), 1);
        EXPECT_EQ(em.head_calls(), 1);
    }
    EXPECT_EQ(m.edge_fusion()->calls(), 1);
    EXPECT_EQ(e.e_star.map.value().shape(), (std::vector<int>{1, 64, 64}));
    const std::array<int, 3> sizes{64, 32, 16};
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(e.em[i].edge_map.value().height(), sizes[i]);
}

TEST(Model, ZeroInitInjectionIsIdentityAtStart) {
    // Zero-initialized projections: MLMs 0-2 see the raw block layer at step 0.
    Model m = Model::build(ModelConfig::tiny(), 6);
    const Var img = Var::constant(random_image(64, 14));
    const SaliencyPass p = m.forward_saliency(img);
    const auto blocks = m.backbone().forward(img);
    for (int i = 0; i < 3; ++i) {
        const MlmOutput raw = m.mlm(i).forward(blocks[static_cast<std::size_t>(i)]);
        for (int k = 0; k < 3; ++k) {
            EXPECT_EQ(raw.student_predictions[static_cast<std::size_t>(k)].value(),
                      p.mlm[static_cast<std::size_t>(i)].student_predictions[static_cast<std::size_t>(k)].value());
        }
    }
}

TEST(Model, EdgesDisabled) {
    ModelConfig c;
    c.edge.enabled = false;
    Model m = Model::build(c, 1);
    EXPECT_TRUE(m.edge_modules().empty());
    EXPECT_FALSE(m.edge_fusion().has_value());
    EXPECT_THROW(m.forward_edge(Var::constant(random_image(64, 1))), ConfigError);
    const SaliencyPass p = m.forward_saliency(Var::constant(random_image(64, 1)));
    EXPECT_TRUE(p.edge_features.empty());
}

TEST(Model, ParameterGroups) {
    Model m = Model::build(ModelConfig::tiny(), 1);
    for (const auto& p : m.params().all()) {
        const bool dec = p.name.rfind("dec", 0) == 0;
        EXPECT_EQ(p.group == ParamGroup::decoder, dec) << p.name;
    }
}
