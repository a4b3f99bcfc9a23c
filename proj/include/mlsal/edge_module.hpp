#pragma once

#include <random>
#include <string>
#include <vector>

#include "mlsal/backbone.hpp"
#include "mlsal/ops.hpp"
#include "mlsal/params.hpp"

namespace mlsal {

struct EdgeConfig {
    bool enabled = true;
    int channels = 16;

    void validate() const {
        if (channels < 1) throw ConfigError("edge module channels must be >= 1");
    }
};

struct EmOutput {
    Var edge_features;  // a_e
    Var edge_map;       // A_e, 1 x H x W
};

struct MergedEdgePrediction {
    Var map;  // E*, 1 x S x S
};

/// Number of backbone layers an edge module reads: both convs of blocks 0-1,
/// all three of block 2.
inline int edge_module_layers(int block_index) {
    if (block_index < 0 || block_index > 2) {
        throw ConfigError("edge modules exist only for blocks 0-2, got block " + std::to_string(block_index));
    }
    return block_index == 2 ? 3 : 2;
}

/// Edge branch on one of the first three encoder blocks.
///
/// Every consumed layer gets its own 3x3 projection; projections are summed,
/// passed through ReLU -> 3x3 conv -> ReLU to give the edge features, and a
/// 1x1 head with a logistic gives the edge map. A zero-initialized 1x1
/// projection maps the edge features back to the block width for the
/// residual link into the MLM.
class EdgeModule {
public:
    static EdgeModule build(int block_index, int block_channels, const EdgeConfig& cfg, ParamStore& store,
                            std::mt19937_64& rng) {
        cfg.validate();
        const int n = edge_module_layers(block_index);
        EdgeModule e;
        e.block_index_ = block_index;
        const std::string p = "em" + std::to_string(block_index);
        for (int j = 0; j < n; ++j) {
            e.projections_.push_back(Conv::create(store, p + ".proj" + std::to_string(j), block_channels, cfg.channels,
                                                  3, 1, ParamGroup::encoder, rng));
        }
        e.fuse_ = Conv::create(store, p + ".fuse", cfg.channels, cfg.channels, 3, 1, ParamGroup::encoder, rng);
        e.head_ = Conv::create(store, p + ".head", cfg.channels, 1, 1, 1, ParamGroup::encoder, rng);
        e.inject_ = Conv::create(store, p + ".inject", cfg.channels, block_channels, 1, 1, ParamGroup::encoder, rng,
                                 /*zero_init=*/true);
        return e;
    }

    int block_index() const noexcept { return block_index_; }

    /// a_e only; used for the saliency-image pass.
    Var features(const BlockFeatures& block) const {
        edge_module_layers(block.block_index);
        if (block.block_index != block_index_) {
            throw ConfigError("edge module " + std::to_string(block_index_) + " received block " +
                              std::to_string(block.block_index));
        }
        if (block.layers.size() < projections_.size()) throw ShapeError("block has too few layers for edge module");
        ++feature_calls_;
        Var sum = projections_[0](block.layers[0]);
        for (std::size_t j = 1; j < projections_.size(); ++j) sum = ops::add(sum, projections_[j](block.layers[j]));
        return ops::relu(fuse_(ops::relu(sum)));
    }

    /// a_e and A_e; used for the edge-image pass.
    EmOutput forward(const BlockFeatures& block) const {
        EmOutput out;
        out.edge_features = features(block);
        ++head_calls_;
        out.edge_map = ops::sigmoid(head_(out.edge_features));
        return out;
    }

    /// block_layer + P(em_features), P a learned 1x1 channel projection.
    Var residual_inject(const Var& em_features, const Var& block_layer) const {
        const Tensor& e = em_features.value();
        const Tensor& b = block_layer.value();
        if (e.rank() != 3 || b.rank() != 3 || e.height() != b.height() || e.width() != b.width()) {
            throw ShapeError("residual_inject: spatial mismatch " + shape_string(e.shape()) + " vs " +
                             shape_string(b.shape()));
        }
        if (e.channels() != inject_.in_channels() || b.channels() != inject_.out_channels()) {
            throw ShapeError("residual_inject: channel mismatch " + shape_string(e.shape()) + " vs " +
                             shape_string(b.shape()));
        }
        return ops::add(block_layer, inject_(em_features));
    }

    long feature_calls() const noexcept { return feature_calls_; }
    long head_calls() const noexcept { return head_calls_; }
    void reset_counters() const { feature_calls_ = head_calls_ = 0; }

private:
    int block_index_ = 0;
    std::vector<Conv> projections_;
    Conv fuse_;
    Conv head_;
    Conv inject_;
    mutable long feature_calls_ = 0;
    mutable long head_calls_ = 0;
};

/// Merges the three edge branches into E*: bilinear upsampling of each a_e to
/// the target size, channel concatenation, 1x1 conv, logistic.
class EdgeFusion {
public:
    static EdgeFusion build(const EdgeConfig& cfg, ParamStore& store, std::mt19937_64& rng) {
        EdgeFusion f;
        f.conv_ = Conv::create(store, "edge_fusion", 3 * cfg.channels, 1, 1, 1, ParamGroup::encoder, rng);
        return f;
    }

    MergedEdgePrediction merge(const std::vector<EmOutput>& outputs, int target_size) const {
        if (outputs.size() != 3) {
            throw ShapeError("merge_edge_maps: arity error, expected 3 edge outputs, got " +
                             std::to_string(outputs.size()));
        }
        std::vector<Var> ups;
        for (const auto& o : outputs) ups.push_back(ops::upsample_bilinear(o.edge_features, target_size, target_size));
        ++calls_;
        return {ops::sigmoid(conv_(ops::concat(ups)))};
    }

    long calls() const noexcept { return calls_; }
    void reset_counters() const { calls_ = 0; }

private:
    Conv conv_;
    mutable long calls_ = 0;
};

}  // namespace mlsal
