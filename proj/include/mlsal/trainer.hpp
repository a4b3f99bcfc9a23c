#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "mlsal/archive.hpp"
#include "mlsal/config.hpp"
#include "mlsal/data.hpp"
#include "mlsal/losses.hpp"
#include "mlsal/model.hpp"
#include "mlsal/optimizer.hpp"

namespace mlsal {

inline constexpr const char* kCheckpointFormat = "mlsal-checkpoint";
inline constexpr int kCheckpointVersion = 1;

inline Adam make_optimizer(const Model& model, const TrainConfig& cfg) {
    return Adam(model.params(), cfg.lr_encoder, cfg.lr_decoder, cfg.weight_decay);
}

/// Differentiable total loss of one (saliency, edge) pair.
struct Objective {
    Var total;
    LossBreakdown breakdown;
};

/// L_Enc + L_Dec for one step: the saliency image drives the MLM and decoder
/// heads, the edge image (when the model has edge modules) drives A_e and E*.
inline Objective training_objective(const Model& model, const Tensor& sal_image, const GroundTruthBundle& sal_gt,
                                    const Tensor& edge_image, const GroundTruthBundle* edge_gt,
                                    const LossWeights& weights) {
    const auto schedule = SupervisionSchedule::make(model.config().schedule);
    SaliencyPass sp = model.forward_saliency(Var::constant(sal_image));
    EncoderHeads heads;
    for (const auto& m : sp.mlm) heads.mlm_preds.push_back(m.student_predictions);
    if (model.edges_enabled()) {
        if (!edge_gt) throw ConfigError("edge modules are enabled but no edge ground truth was given");
        EdgePass ep = model.forward_edge(Var::constant(edge_image));
        for (const auto& e : ep.em) heads.em_preds.push_back(e.edge_map);
        heads.e_star = ep.e_star.map;
    }
    EncoderLossTerms enc = encoder_loss(heads, sal_gt, model.edges_enabled() ? edge_gt : nullptr, schedule, weights);
    Var l_dec = decoder_loss(sp.decoder.predictions, sal_gt, schedule, weights.r_dec);

    Objective o;
    o.total = ops::weighted_sum({1.0, 1.0}, {enc.l_enc, l_dec});
    o.breakdown.l_enc = enc.l_enc.value().item();
    o.breakdown.l_s = enc.l_s.value().item();
    o.breakdown.l_e = enc.l_e.value().item();
    o.breakdown.l_mimicry = enc.l_mimicry.value().item();
    o.breakdown.l_dec = l_dec.value().item();
    o.breakdown.total = o.total.value().item();
    return o;
}

/// Model, optimizer and step counter for one training run.
class TrainState {
public:
    explicit TrainState(const TrainConfig& cfg)
        : config_((cfg.validate(), cfg)),
          model_(Model::build(cfg.effective_model(), cfg.seed)),
          optimizer_(make_optimizer(model_, cfg)) {}

    const TrainConfig& config() const noexcept { return config_; }
    Model& model() noexcept { return model_; }
    const Model& model() const noexcept { return model_; }
    const Adam& optimizer() const noexcept { return optimizer_; }
    long step() const noexcept { return step_; }

    /// One update on a (saliency, edge) pair. The edge sample is ignored when
    /// the model has no edge modules.
    LossBreakdown train_step(const SampleRecord& sal, const SampleRecord& edge) {
        if (sal.kind != SampleKind::saliency) throw ValidationError("train_step: first sample must be a saliency sample");
        if (edge.kind != SampleKind::edge) throw ValidationError("train_step: second sample must be an edge sample");

        Objective obj = training_objective(model_, sal.image, saliency_gt(sal), edge.image,
                                           model_.edges_enabled() ? &edge_bundle(edge) : nullptr, config_.weights);
        if (!obj.breakdown.all_finite()) throw DivergenceError(step_, "non-finite loss");

        model_.params().zero_grad();
        backward(obj.total);
        optimizer_.step(model_.params());
        model_.params().zero_grad();
        ++step_;
        return obj.breakdown;
    }

    void save(Archive& a) const {
        a.set_meta("format", kCheckpointFormat);
        a.set_meta("version", std::to_string(kCheckpointVersion));
        a.set_meta("step", std::to_string(step_));
        a.set_meta("config", to_json(config_).dump());
        for (const auto& p : model_.params().all()) a.put("param." + p.name, p.var.value());
        optimizer_.save(a, model_.params());
    }

    /// Rebuilds a state from a checkpoint archive.
    static TrainState load(const Archive& a) {
        if (!a.has_meta("format") || a.meta("format") != kCheckpointFormat) throw LoadError("not a checkpoint archive");
        if (std::stoi(a.meta("version")) != kCheckpointVersion) {
            throw LoadError("unsupported checkpoint version " + a.meta("version"));
        }
        TrainConfig cfg;
        try {
            cfg = train_config_from_json(json::parse(a.meta("config")));
        } catch (const Error& e) {
            throw LoadError(std::string("checkpoint config: ") + e.what());
        } catch (const nlohmann::json::exception& e) {
            throw LoadError(std::string("checkpoint config: ") + e.what());
        }
        TrainState s(cfg);
        for (auto& p : s.model_.params().all()) {
            const std::string key = "param." + p.name;
            if (!a.contains(key)) throw LoadError("checkpoint lacks parameter " + p.name);
            const Tensor& t = a.get(key);
            if (!t.same_shape(p.var.value())) {
                throw LoadError("checkpoint parameter " + p.name + " has shape " + shape_string(t.shape()) + ", model expects " +
                                shape_string(p.var.value().shape()));
            }
            p.var.mutable_value() = t;
        }
        s.optimizer_.load(a, s.model_.params());
        s.step_ = std::stol(a.meta("step"));
        return s;
    }

private:
    const GroundTruthBundle& saliency_gt(const SampleRecord& r) {
        auto it = sal_cache_.find(r.id);
        if (it == sal_cache_.end()) it = sal_cache_.emplace(r.id, make_saliency_bundle(r.target)).first;
        return it->second;
    }

    const GroundTruthBundle& edge_bundle(const SampleRecord& r) {
        auto it = edge_cache_.find(r.id);
        if (it == edge_cache_.end()) it = edge_cache_.emplace(r.id, make_edge_bundle(r.target)).first;
        return it->second;
    }

    TrainConfig config_;
    Model model_;
    Adam optimizer_;
    long step_ = 0;
    std::map<std::string, GroundTruthBundle> sal_cache_;
    std::map<std::string, GroundTruthBundle> edge_cache_;
};

struct FitOptions {
    /// Periodic and final checkpoints go here when set.
    std::optional<std::filesystem::path> checkpoint_dir;
    /// Loss log sink ("step l_s l_e l_mimicry l_dec total" per line).
    std::ostream* log = nullptr;
    /// Continue from this checkpoint instead of a fresh initialization.
    std::optional<Archive> resume;
    /// Stop after this many steps in this call (the run length stays max_steps).
    std::optional<long> stop_after;
};

struct FitResult {
    Archive checkpoint;
    std::vector<LossBreakdown> log;
};

/// Full checkpoint: training state plus the batcher position.
inline Archive make_checkpoint(const TrainState& state, const PairedBatcher& batcher) {
    Archive a;
    state.save(a);
    a.set_meta("batcher", batcher.serialize());
    a.set_meta("seed", std::to_string(state.config().seed));
    return a;
}

inline FitResult fit(const TrainConfig& cfg, const std::vector<SampleRecord>& saliency,
                     const std::vector<SampleRecord>& edge, FitOptions opts = {}) {
    if (saliency.empty()) throw ConfigError("fit: saliency dataset is empty");
    if (edge.empty()) throw ConfigError("fit: edge dataset is empty");

    std::optional<TrainState> state;
    PairedBatcher batcher(saliency.size(), edge.size(), cfg.seed);
    if (opts.resume) {
        state.emplace(TrainState::load(*opts.resume));
        batcher.restore(opts.resume->meta("batcher"));
    } else {
        state.emplace(cfg);
    }
    const TrainConfig& run = state->config();

    auto save = [&](const std::string& name) {
        Archive a = make_checkpoint(*state, batcher);
        if (opts.checkpoint_dir) {
            std::error_code ec;
            std::filesystem::create_directories(*opts.checkpoint_dir, ec);
            a.save(*opts.checkpoint_dir / name);
        }
        return a;
    };

    FitResult out;
    long budget = opts.stop_after ? *opts.stop_after : run.max_steps;
    while (state->step() < run.max_steps && budget-- > 0) {
        const auto [si, ei] = batcher.next();
        const long step = state->step();
        LossBreakdown b = state->train_step(saliency[si], edge[ei]);
        if (opts.log) write_loss_line(*opts.log, step, b);
        out.log.push_back(b);
        if (run.checkpoint_every > 0 && state->step() % run.checkpoint_every == 0 && state->step() < run.max_steps) {
            save("step_" + std::to_string(state->step()) + ".ckpt");
        }
    }
    out.checkpoint = save("final.ckpt");
    return out;
}

struct Prediction {
    ProbabilityMap saliency;
    std::optional<ProbabilityMap> edge;
};

namespace detail {

inline Tensor resize_clamped(const Tensor& m, int h, int w) {
    Tensor r = (m.height() == h && m.width() == w) ? m : ops::resize_bilinear(m, h, w);
    for (double& v : r.storage()) v = std::clamp(v, 0.0, 1.0);
    return r;
}

}  // namespace detail

/// Saliency from the decoder's final map (decoder fed by the test branch) and
/// E* when edge modules are present, both resized to the input's size.
inline Prediction predict(const Model& model, const Tensor& image) {
    if (image.rank() != 3 || image.channels() != 3 || image.height() < 1 || image.width() < 1) {
        throw ShapeError("predict expects a 3xHxW image, got " + shape_string(image.shape()));
    }
    const int s = model.input_size();
    const Tensor x = ops::resize_bilinear(image, s, s);
    const int branch = model.config().test_branch.resolve(model.config().mlm.students);
    Prediction p;
    {
        SaliencyPass sp = model.forward_saliency(Var::constant(x), branch);
        p.saliency = detail::resize_clamped(sp.decoder.final_map.value(), image.height(), image.width());
    }
    if (model.edges_enabled()) {
        EdgePass ep = model.forward_edge(Var::constant(x));
        p.edge = detail::resize_clamped(ep.e_star.map.value(), image.height(), image.width());
    }
    return p;
}

inline Prediction predict(const Archive& checkpoint, const Tensor& image) {
    TrainState s = TrainState::load(checkpoint);
    return predict(s.model(), image);
}

/// Mean pairwise MSE among the K student maps of each block, averaged over
/// `images`. Zero for single-student models.
inline std::array<double, 6> student_disagreement(const Model& model, const std::vector<SampleRecord>& images) {
    std::array<double, 6> acc{};
    for (const auto& r : images) {
        SaliencyPass sp = model.forward_saliency(Var::constant(r.image));
        for (std::size_t i = 0; i < 6; ++i) {
            std::vector<Tensor> maps;
            for (const auto& v : sp.mlm[i].student_predictions) maps.push_back(v.value());
            acc[i] += mean_pairwise_mse(maps);
        }
    }
    for (double& v : acc) v /= static_cast<double>(std::max<std::size_t>(images.size(), 1));
    return acc;
}

}  // namespace mlsal
