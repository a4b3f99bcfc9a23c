#pragma once

#include <array>
#include <optional>
#include <ostream>
#include <vector>

#include "mlsal/autograd.hpp"
#include "mlsal/ops.hpp"
#include "mlsal/supervision.hpp"

namespace mlsal {

struct LossWeights {
    double theta_s = 0.7;
    double theta_e = 0.2;
    double theta_m = 0.1;
    std::array<double, 6> r_s{1, 1, 1, 1, 1, 1};
    std::array<double, 3> r_e{1, 1, 1};
    std::array<double, 6> r_mlm{1, 1, 1, 1, 1, 1};
    std::array<double, 5> r_dec{1, 1, 1, 1, 1};

    void validate() const {
        auto nonneg = [](double v) { return v >= 0.0 && std::isfinite(v); };
        bool ok = nonneg(theta_s) && nonneg(theta_e) && nonneg(theta_m);
        for (double v : r_s) ok = ok && nonneg(v);
        for (double v : r_e) ok = ok && nonneg(v);
        for (double v : r_mlm) ok = ok && nonneg(v);
        for (double v : r_dec) ok = ok && nonneg(v);
        if (!ok) throw ConfigError("loss weights must be finite and nonnegative");
    }
};

struct LossBreakdown {
    double l_enc = 0.0;
    double l_s = 0.0;
    double l_e = 0.0;
    double l_mimicry = 0.0;
    double l_dec = 0.0;
    double total = 0.0;

    bool all_finite() const {
        return std::isfinite(l_enc) && std::isfinite(l_s) && std::isfinite(l_e) && std::isfinite(l_mimicry) &&
               std::isfinite(l_dec) && std::isfinite(total);
    }
};

/// Writes "step l_s l_e l_mimicry l_dec total" with round-trip precision.
inline void write_loss_line(std::ostream& os, long step, const LossBreakdown& b) {
    const auto old = os.precision(17);
    os << step << ' ' << b.l_s << ' ' << b.l_e << ' ' << b.l_mimicry << ' ' << b.l_dec << ' ' << b.total << '\n';
    os.precision(old);
}

/// Mean binary cross-entropy with predictions clamped to [1e-7, 1 - 1e-7].
inline Var bce(const Var& pred, const Tensor& gt) { return ops::bce(pred, gt); }

inline double bce(const Tensor& pred, const Tensor& gt) { return ops::bce(Var::constant(pred), gt).value().item(); }

/// 1/2 * sum_i r_i * sum_{n != m} mse(A_i^n, A_i^m), over ordered student
/// pairs. Each unordered pair appears twice, so it is accumulated once with
/// weight r_i.
inline Var mimicry_loss(const std::vector<std::vector<Var>>& all_students, const std::array<double, 6>& r_mlm) {
    if (all_students.size() > r_mlm.size()) throw ShapeError("mimicry_loss: more than 6 blocks");
    std::vector<double> coeffs;
    std::vector<Var> terms;
    for (std::size_t i = 0; i < all_students.size(); ++i) {
        const auto& maps = all_students[i];
        for (std::size_t n = 1; n < maps.size(); ++n) {
            if (!maps[n].value().same_shape(maps[0].value())) {
                throw ShapeError("mimicry_loss: ragged student maps at block " + std::to_string(i));
            }
        }
        for (std::size_t n = 0; n < maps.size(); ++n) {
            for (std::size_t m = n + 1; m < maps.size(); ++m) {
                coeffs.push_back(r_mlm[i]);
                terms.push_back(ops::mse(maps[n], maps[m]));
            }
        }
    }
    if (terms.empty()) return ops::scalar_constant(0.0);
    return ops::weighted_sum(coeffs, terms);
}

inline double mimicry_loss(const std::vector<std::vector<Tensor>>& all_students, const std::array<double, 6>& r_mlm) {
    std::vector<std::vector<Var>> vars;
    for (const auto& block : all_students) {
        auto& row = vars.emplace_back();
        for (const auto& t : block) row.push_back(Var::constant(t));
    }
    return mimicry_loss(vars, r_mlm).value().item();
}

/// Mean pairwise squared difference between the students of one block; the
/// quantity the mimicry term drives to zero.
inline double mean_pairwise_mse(const std::vector<Tensor>& maps) {
    double total = 0.0;
    int pairs = 0;
    for (std::size_t n = 0; n < maps.size(); ++n) {
        for (std::size_t m = n + 1; m < maps.size(); ++m) {
            require_same_shape(maps[n], maps[m], "mean_pairwise_mse");
            double s = 0.0;
            for (std::size_t i = 0; i < maps[n].size(); ++i) {
                const double d = maps[n][i] - maps[m][i];
                s += d * d;
            }
            total += s / static_cast<double>(maps[n].size());
            ++pairs;
        }
    }
    return pairs ? total / pairs : 0.0;
}

/// Encoder-side head outputs for one training step.
struct EncoderHeads {
    /// Six blocks of K student predictions (saliency-image pass).
    std::vector<std::vector<Var>> mlm_preds;
    /// A_e for blocks 0-2 (edge-image pass); empty when edge modules are off.
    std::vector<Var> em_preds;
    std::optional<Var> e_star;
};

struct EncoderLossTerms {
    Var l_s;
    Var l_e;
    Var l_mimicry;
    Var l_enc;
};

/// L_S   = sum_i r_s^i * mean_k bce(A_s^{i_k}, S_i) with S_i scheduled per block,
/// L_E   = sum_{i<3} r_e^i * bce(A_e^i, E_i) + bce(E*, E_0),
/// L_Enc = theta_s L_S + theta_e L_E + theta_m L_mimicry.
inline EncoderLossTerms encoder_loss(const EncoderHeads& heads, const GroundTruthBundle& sal_gts,
                                     const GroundTruthBundle* edge_gts, const SupervisionSchedule& schedule,
                                     const LossWeights& w) {
    if (heads.mlm_preds.size() != 6) throw ShapeError("encoder_loss: expected 6 MLM blocks");
    EncoderLossTerms t;

    std::vector<double> cs;
    std::vector<Var> ts;
    for (int i = 0; i < 6; ++i) {
        const auto& preds = heads.mlm_preds[static_cast<std::size_t>(i)];
        const Tensor& target =
            scheduled_target(sal_gts, assign_supervision(schedule, {HeadStage::encoder, i}), i);
        for (const Var& p : preds) {
            cs.push_back(w.r_s[static_cast<std::size_t>(i)] / static_cast<double>(preds.size()));
            ts.push_back(bce(p, target));
        }
    }
    t.l_s = ops::weighted_sum(cs, ts);

    if (!heads.em_preds.empty() || heads.e_star) {
        if (heads.em_preds.size() != 3 || !heads.e_star) {
            throw ShapeError("encoder_loss: edge pass needs three A_e maps and E*");
        }
        if (!edge_gts || edge_gts->e_pyramid.size() < 3) {
            throw ConfigError("encoder_loss: edge ground-truth pyramid is missing levels");
        }
        std::vector<double> ec;
        std::vector<Var> et;
        for (std::size_t i = 0; i < 3; ++i) {
            ec.push_back(w.r_e[i]);
            et.push_back(bce(heads.em_preds[i], edge_gts->e_pyramid[i]));
        }
        ec.push_back(1.0);
        et.push_back(bce(*heads.e_star, edge_gts->e_pyramid[0]));
        t.l_e = ops::weighted_sum(ec, et);
    } else {
        t.l_e = ops::scalar_constant(0.0);
    }

    t.l_mimicry = mimicry_loss(heads.mlm_preds, w.r_mlm);
    t.l_enc = ops::weighted_sum({w.theta_s, w.theta_e, w.theta_m}, {t.l_s, t.l_e, t.l_mimicry});
    return t;
}

/// L_Dec = sum_i r_dec^i * bce(D^i, S_{4-i}) with the ground-truth kind taken
/// from the schedule (plus the auxiliary FC terms of the revised variant).
inline Var decoder_loss(const std::vector<Var>& dec_preds, const GroundTruthBundle& gts,
                        const SupervisionSchedule& schedule, const std::array<double, 5>& r_dec) {
    if (dec_preds.size() != 5) throw ShapeError("decoder_loss: expected 5 predictions");
    std::vector<double> cs;
    std::vector<Var> ts;
    for (int i = 0; i < 5; ++i) {
        const int level = 4 - i;
        const auto& pred = dec_preds[static_cast<std::size_t>(i)];
        cs.push_back(r_dec[static_cast<std::size_t>(i)]);
        ts.push_back(bce(pred, scheduled_target(gts, assign_supervision(schedule, {HeadStage::decoder, i}), level)));
        if (schedule.decoder_extra_fc[static_cast<std::size_t>(i)]) {
            cs.push_back(r_dec[static_cast<std::size_t>(i)]);
            ts.push_back(bce(pred, scheduled_target(gts, GtKind::FC, level)));
        }
    }
    return ops::weighted_sum(cs, ts);
}

}  // namespace mlsal
