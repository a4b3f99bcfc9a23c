#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "mlsal/backbone.hpp"
#include "mlsal/decoder.hpp"
#include "mlsal/edge_module.hpp"
#include "mlsal/mutual_learning.hpp"
#include "mlsal/supervision.hpp"

namespace mlsal {

struct ModelConfig {
    BackboneConfig backbone;
    MlmConfig mlm;
    EdgeConfig edge;
    ScheduleVariant schedule = ScheduleVariant::intertwined;
    /// Student whose features feed the decoder during training.
    int decoder_branch = 0;
    /// Student reported by `predict` and whose features feed the decoder there.
    BranchPolicy test_branch = BranchPolicy::fixed(0);

    static ModelConfig tiny() { return {}; }

    static ModelConfig full() {
        ModelConfig c;
        c.backbone = BackboneConfig::full();
        c.mlm.hidden_channels = 128;
        c.edge.channels = 64;
        return c;
    }

    void validate() const {
        backbone.validate();
        mlm.validate();
        edge.validate();
        if (decoder_branch < 0 || decoder_branch >= mlm.students) {
            throw ConfigError("decoder_branch must be < student count");
        }
        if (test_branch.kind == BranchPolicy::Kind::fixed) test_branch.resolve(mlm.students);
    }
};

struct SaliencyPass {
    std::vector<BlockFeatures> blocks;
    std::vector<std::optional<Var>> edge_features;  // a_e for blocks 0-2 when edge modules are on
    std::vector<MlmOutput> mlm;
    DecoderOutput decoder;
};

struct EdgePass {
    std::vector<EmOutput> em;
    MergedEdgePrediction e_star;
};

/// The full network: backbone, six MLMs, optional edge modules with their
/// fusion head, and the decoder. Owns every parameter.
class Model {
public:
    static Model build(const ModelConfig& cfg, std::uint64_t seed) {
        cfg.validate();
        Model m;
        m.config_ = cfg;
        std::mt19937_64 rng(seed);
        m.backbone_ = Backbone::build(cfg.backbone, m.params_, rng);
        const auto& widths = cfg.backbone.block_widths;
        for (int i = 0; i < 6; ++i) {
            const int cin = widths[static_cast<std::size_t>(std::min(i, 4))];
            m.mlms_.push_back(MutualLearningModule::build(i, cin, cfg.mlm, m.params_, rng));
        }
        if (cfg.edge.enabled) {
            for (int i = 0; i < 3; ++i) {
                m.ems_.push_back(EdgeModule::build(i, widths[static_cast<std::size_t>(i)], cfg.edge, m.params_, rng));
            }
            m.fusion_ = EdgeFusion::build(cfg.edge, m.params_, rng);
        }
        m.decoder_ = Decoder::build(cfg.mlm.hidden_channels, m.params_, rng);
        return m;
    }

    Model(Model&&) = default;
    Model& operator=(Model&&) = default;
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    const ModelConfig& config() const noexcept { return config_; }
    ParamStore& params() noexcept { return params_; }
    const ParamStore& params() const noexcept { return params_; }
    const Backbone& backbone() const noexcept { return backbone_; }
    const MutualLearningModule& mlm(int i) const { return mlms_.at(static_cast<std::size_t>(i)); }
    const std::vector<EdgeModule>& edge_modules() const noexcept { return ems_; }
    const std::optional<EdgeFusion>& edge_fusion() const noexcept { return fusion_; }
    const Decoder& decoder() const noexcept { return decoder_; }
    bool edges_enabled() const noexcept { return config_.edge.enabled; }
    int input_size() const noexcept { return config_.backbone.input_size; }

    /// Saliency-image pass. Edge modules contribute features only.
    SaliencyPass forward_saliency(const Var& image, int decoder_branch = -1) const {
        if (decoder_branch < 0) decoder_branch = config_.decoder_branch;
        SaliencyPass p;
        p.blocks = backbone_.forward(image);
        for (int i = 0; i < 6; ++i) {
            const auto& block = p.blocks[static_cast<std::size_t>(i)];
            std::optional<Var> injected;
            if (edges_enabled() && i < 3) {
                const EdgeModule& em = ems_[static_cast<std::size_t>(i)];
                Var a = em.features(block);
                p.edge_features.push_back(a);
                injected = em.residual_inject(a, block.layers[static_cast<std::size_t>(mlm_input_layer(i))]);
            }
            p.mlm.push_back(mlms_[static_cast<std::size_t>(i)].forward(block, injected, decoder_branch));
        }
        p.decoder = decoder_.forward(p.mlm);
        return p;
    }

    /// Edge-image pass: blocks 0-2, the three edge maps, and E*.
    EdgePass forward_edge(const Var& image) const {
        if (!edges_enabled()) throw ConfigError("edge modules are disabled in this model");
        EdgePass p;
        const auto blocks = backbone_.forward(image, 2);
        for (int i = 0; i < 3; ++i) p.em.push_back(ems_[static_cast<std::size_t>(i)].forward(blocks[static_cast<std::size_t>(i)]));
        p.e_star = fusion_->merge(p.em, input_size());
        return p;
    }

    void reset_counters() const {
        for (const auto& e : ems_) e.reset_counters();
        if (fusion_) fusion_->reset_counters();
    }

private:
    Model() = default;

    ModelConfig config_;
    ParamStore params_;
    Backbone backbone_;
    std::vector<MutualLearningModule> mlms_;
    std::vector<EdgeModule> ems_;
    std::optional<EdgeFusion> fusion_;
    Decoder decoder_;
};

}  // namespace mlsal
