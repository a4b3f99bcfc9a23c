#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"

using namespace mlsal;

namespace {

constexpr std::array<double, 6> kOnes6{1, 1, 1, 1, 1, 1};

std::vector<Var> constants(std::initializer_list<double> values, int s = 4) {
    std::vector<Var> out;
    for (double v : values) out.push_back(Var::constant(Tensor(1, s, s, v)));
    return out;
}

// Encoder heads with every map constant at `v`.
EncoderHeads constant_heads(double v, int students, bool edges) {
    EncoderHeads h;
    for (int i = 0; i < 6; ++i) {
        auto& row = h.mlm_preds.emplace_back();
        for (int k = 0; k < students; ++k) row.push_back(Var::constant(Tensor(1, 64 >> i, 64 >> i, v)));
    }
    if (edges) {
        for (int i = 0; i < 3; ++i) h.em_preds.push_back(Var::constant(Tensor(1, 64 >> i, 64 >> i, v)));
        h.e_star = Var::constant(Tensor(1, 64, 64, v));
    }
    return h;
}

// Heads that reproduce the scheduled targets (perfect predictions).
EncoderHeads perfect_heads(const GroundTruthBundle& s, const GroundTruthBundle& e, int students) {
    const auto sched = SupervisionSchedule::make(ScheduleVariant::intertwined);
    EncoderHeads h;
    for (int i = 0; i < 6; ++i) {
        auto& row = h.mlm_preds.emplace_back();
        const Tensor& t = scheduled_target(s, assign_supervision(sched, {HeadStage::encoder, i}), i);
        for (int k = 0; k < students; ++k) row.push_back(Var::constant(t));
    }
    for (int i = 0; i < 3; ++i) h.em_preds.push_back(Var::constant(e.e_pyramid[static_cast<std::size_t>(i)]));
    h.e_star = Var::constant(e.e_pyramid[0]);
    return h;
}

Tensor square(int s) {
    Tensor m(1, s, s);
    for (int y = s / 4; y < 3 * s / 4; ++y)
        for (int x = s / 4; x < 3 * s / 4; ++x) m(0, y, x) = 1.0;
    return m;
}

}  // namespace

TEST(Bce, Examples) {
    const Tensor gt = square(16);
    EXPECT_LE(bce(gt, gt), -std::log(1.0 - 1e-7) + 1e-15);
    EXPECT_NEAR(bce(Tensor(1, 16, 16, 0.5), gt), 0.693147180559945, 1e-9);
    EXPECT_NEAR(bce(Tensor(1, 4, 4, 1e-7), Tensor(1, 4, 4, 1.0)), 16.118, 1e-3);
    EXPECT_THROW(bce(Tensor(1, 4, 4, 0.5), Tensor(1, 5, 5, 1.0)), ShapeError);
}

TEST(Mimicry, Examples) {
    std::vector<std::vector<Var>> blocks{constants({0.2, 0.6})};
    EXPECT_NEAR(mimicry_loss(blocks, kOnes6).value().item(), 0.16, 1e-15);
    blocks = {constants({0.3, 0.3, 0.3})};
    EXPECT_EQ(mimicry_loss(blocks, kOnes6).value().item(), 0.0);
    blocks = {constants({0.3})};
    EXPECT_EQ(mimicry_loss(blocks, kOnes6).value().item(), 0.0);
    EXPECT_THROW(mimicry_loss(std::vector<std::vector<Var>>{{Var::constant(Tensor(1, 2, 2)), Var::constant(Tensor(1, 3, 3))}},
                              kOnes6),
                 ShapeError);
}

TEST(Mimicry, MatchesOrderedPairDefinitionAndIsSymmetric) {
    std::mt19937_64 rng(5);
    std::vector<std::vector<Tensor>> maps(6);
    for (int i = 0; i < 6; ++i)
        for (int k = 0; k < 4; ++k) maps[static_cast<std::size_t>(i)].push_back(oracle::random_map(5, 5, rng));
    const std::array<double, 6> r{0.5, 1, 2, 0, 1.5, 1};
    double want = 0;
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t n = 0; n < 4; ++n)
            for (std::size_t m = 0; m < 4; ++m) {
                if (n == m) continue;
                double s = 0;
                for (std::size_t p = 0; p < 25; ++p) s += std::pow(maps[i][n][p] - maps[i][m][p], 2);
                want += 0.5 * r[i] * s / 25;
            }
    EXPECT_NEAR(mimicry_loss(maps, r), want, 1e-12);
    auto perm = maps;
    for (auto& b : perm) std::reverse(b.begin(), b.end());
    EXPECT_NEAR(mimicry_loss(perm, r), want, 1e-12);
}

TEST(Mimicry, GradientPullsTowardPeers) {
    Var a = Var::leaf(Tensor(1, 3, 3, 0.2));
    Var b = Var::constant(Tensor(1, 3, 3, 0.6));
    backward(mimicry_loss(std::vector<std::vector<Var>>{{a, b}}, kOnes6));
    // Descending the gradient moves a toward b.
    for (double g : a.grad().storage()) EXPECT_LT(g, 0.0);
}

TEST(EncoderLoss, UnitTermsGiveOne) {
    // L_S = L_E = L_mimicry = 1 by construction, default weights -> 1.
    Var one = ops::scalar_constant(1.0);
    const LossWeights w;
    EXPECT_DOUBLE_EQ(ops::weighted_sum({w.theta_s, w.theta_e, w.theta_m}, {one, one, one}).value().item(), 1.0);
}

TEST(EncoderLoss, CombinationIdentityAndLinearity) {
    std::mt19937_64 rng(8);
    const auto s = make_saliency_bundle(square(64));
    Tensor edge(1, 64, 64);
    for (int x = 5; x < 60; ++x) edge(0, 30, x) = 1.0;
    const auto e = make_edge_bundle(edge);
    EncoderHeads h;
    for (int i = 0; i < 6; ++i) {
        auto& row = h.mlm_preds.emplace_back();
        for (int k = 0; k < 3; ++k) row.push_back(Var::constant(oracle::random_map(64 >> i, 64 >> i, rng)));
    }
    for (int i = 0; i < 3; ++i) h.em_preds.push_back(Var::constant(oracle::random_map(64 >> i, 64 >> i, rng)));
    h.e_star = Var::constant(oracle::random_map(64, 64, rng));

    const auto sched = SupervisionSchedule::make(ScheduleVariant::intertwined);
    LossWeights w;
    const auto t = encoder_loss(h, s, &e, sched, w);
    const double ls = t.l_s.value().item(), le = t.l_e.value().item(), lm = t.l_mimicry.value().item();
    EXPECT_NEAR(t.l_enc.value().item(), 0.7 * ls + 0.2 * le + 0.1 * lm, 1e-12);

    LossWeights w2 = w;
    w2.theta_s *= 2;
    const auto t2 = encoder_loss(h, s, &e, sched, w2);
    EXPECT_NEAR(t2.l_enc.value().item() - t.l_enc.value().item(), 0.7 * ls, 1e-12);

    LossWeights w0 = w;
    w0.theta_e = 0;
    EncoderHeads h2 = h;
    h2.e_star = Var::constant(oracle::random_map(64, 64, rng));
    EXPECT_NEAR(encoder_loss(h, s, &e, sched, w0).l_enc.value().item(),
                encoder_loss(h2, s, &e, sched, w0).l_enc.value().item(), 1e-15);

    // L_S by hand: mean over students of BCE against the scheduled level.
    double want_ls = 0;
    for (std::size_t i = 0; i < 6; ++i) {
        const Tensor& target = i < 3 ? s.fc_pyramid[i] : s.s_pyramid[i];
        for (const auto& p : h.mlm_preds[i]) want_ls += bce(p.value(), target) / 3.0;
    }
    EXPECT_NEAR(ls, want_ls, 1e-12);
    double want_le = bce(h.e_star->value(), edge);
    for (std::size_t i = 0; i < 3; ++i) want_le += bce(h.em_preds[i].value(), e.e_pyramid[i]);
    EXPECT_NEAR(le, want_le, 1e-12);
}

TEST(EncoderLoss, PerfectPredictionsNearZero) {
    const auto s = make_saliency_bundle(square(64));
    Tensor edge(1, 64, 64);
    for (int y = 3; y < 60; ++y) edge(0, y, 40) = 1.0;
    const auto e = make_edge_bundle(edge);
    const auto t = encoder_loss(perfect_heads(s, e, 3), s, &e, SupervisionSchedule::make(ScheduleVariant::intertwined),
                                LossWeights{});
    EXPECT_LE(t.l_enc.value().item(), 1e-6);
}

TEST(EncoderLoss, MissingEdgePyramid) {
    const auto s = make_saliency_bundle(square(64));
    GroundTruthBundle e;
    e.e_gt = Tensor(1, 64, 64);
    EXPECT_THROW(encoder_loss(constant_heads(0.5, 2, true), s, &e, SupervisionSchedule::make(ScheduleVariant::intertwined),
                              LossWeights{}),
                 ConfigError);
    GroundTruthBundle bare;
    bare.s_gt = square(64);
    EXPECT_THROW(encoder_loss(constant_heads(0.5, 2, false), bare, nullptr,
                              SupervisionSchedule::make(ScheduleVariant::intertwined), LossWeights{}),
                 ConfigError);
}

TEST(DecoderLoss, Examples) {
    const auto s = make_saliency_bundle(square(64));
    const auto sched = SupervisionSchedule::make(ScheduleVariant::intertwined);
    std::vector<Var> half, perfect;
    for (int i = 0; i < 5; ++i) {
        const int level = 4 - i;
        half.push_back(Var::constant(Tensor(1, 64 >> level, 64 >> level, 0.5)));
        perfect.push_back(Var::constant(scheduled_target(s, assign_supervision(sched, {HeadStage::decoder, i}), level)));
    }
    EXPECT_NEAR(decoder_loss(half, s, sched, {1, 1, 1, 1, 1}).value().item(), 5 * std::log(2.0), 1e-9);
    EXPECT_NEAR(decoder_loss(half, s, sched, {1, 1, 1, 1, 1}).value().item(), 3.4657, 1e-4);
    EXPECT_EQ(decoder_loss(half, s, sched, {0, 0, 0, 0, 0}).value().item(), 0.0);
    EXPECT_LE(decoder_loss(perfect, s, sched, {1, 1, 1, 1, 1}).value().item(), 1e-6);
    // The revised variant adds FC terms on D0 and D1: 7 half-maps.
    EXPECT_NEAR(decoder_loss(half, s, SupervisionSchedule::make(ScheduleVariant::revised), {1, 1, 1, 1, 1}).value().item(),
                7 * std::log(2.0), 1e-9);
    half[2] = Var::constant(Tensor(1, 8, 8, 0.5));
    EXPECT_THROW(decoder_loss(half, s, sched, {1, 1, 1, 1, 1}), ShapeError);
    half.pop_back();
    EXPECT_THROW(decoder_loss(half, s, sched, {1, 1, 1, 1, 1}), ShapeError);
}

TEST(LossWeights, Validation) {
    LossWeights w;
    EXPECT_NO_THROW(w.validate());
    EXPECT_DOUBLE_EQ(w.theta_s, 0.7);
    EXPECT_DOUBLE_EQ(w.theta_e, 0.2);
    EXPECT_DOUBLE_EQ(w.theta_m, 0.1);
    w.r_dec[3] = -1;
    EXPECT_THROW(w.validate(), ConfigError);
}

TEST(LossLog, LineFormat) {
    std::ostringstream os;
    LossBreakdown b{1.5, 0.25, 0.0, 0.0, 2.0, 3.5};
    write_loss_line(os, 7, b);
    EXPECT_EQ(os.str(), "7 0.25 0 0 2 3.5\n");
}
