#pragma once

#include <array>
#include <random>
#include <string>
#include <vector>

#include "mlsal/archive.hpp"
#include "mlsal/ops.hpp"
#include "mlsal/params.hpp"

namespace mlsal {

enum class InitPolicy { random, external_weights };

/// VGG-16 encoder truncated after pool5.
struct BackboneConfig {
    /// Convolutions per block; fixed by the VGG-16 layout.
    static constexpr std::array<int, 5> convs_per_block{2, 2, 3, 3, 3};

    std::array<int, 5> block_widths{8, 16, 32, 32, 32};
    int input_size = 64;
    InitPolicy init_policy = InitPolicy::random;
    std::string weights_file;

    static BackboneConfig tiny() { return {}; }
    static BackboneConfig full() { return {{64, 128, 256, 512, 512}, 256, InitPolicy::random, {}}; }

    void validate() const {
        for (int w : block_widths) {
            if (w <= 0) throw ConfigError("backbone block widths must be positive");
        }
        if (input_size <= 0 || input_size % 32 != 0) {
            throw ConfigError("backbone input_size must be a positive multiple of 32, got " + std::to_string(input_size));
        }
        if (init_policy == InitPolicy::external_weights && weights_file.empty()) {
            throw ConfigError("init_policy external_weights requires weights_file");
        }
    }
};

/// Activations of one encoder block. Blocks 0-4 hold the post-ReLU output of
/// each convolution; block 5 holds the pool5 output alone.
struct BlockFeatures {
    int block_index = 0;
    std::vector<Var> layers;
    int spatial_scale = 1;

    int channels() const { return layers.front().value().channels(); }
    int size() const { return layers.front().value().height(); }
};

inline std::string backbone_param_name(int block, int conv, const char* kind) {
    return "block" + std::to_string(block) + ".conv" + std::to_string(conv) + "." + kind;
}

class Backbone {
public:
    static Backbone build(const BackboneConfig& config, ParamStore& store, std::mt19937_64& rng) {
        config.validate();
        Backbone b;
        b.config_ = config;
        int cin = 3;
        for (int i = 0; i < 5; ++i) {
            for (int j = 0; j < BackboneConfig::convs_per_block[static_cast<std::size_t>(i)]; ++j) {
                const int cout = config.block_widths[static_cast<std::size_t>(i)];
                b.convs_[static_cast<std::size_t>(i)].push_back(
                    Conv::create(store, "block" + std::to_string(i) + ".conv" + std::to_string(j), cin, cout, 3, 1,
                                 ParamGroup::encoder, rng));
                cin = cout;
            }
        }
        if (config.init_policy == InitPolicy::external_weights) {
            b.load_weights(Archive::load(config.weights_file));
        }
        return b;
    }

    /// Copies "block{i}.conv{j}.weight|bias" arrays into the parameters.
    void load_weights(const Archive& archive) {
        for (std::size_t i = 0; i < convs_.size(); ++i) {
            for (std::size_t j = 0; j < convs_[i].size(); ++j) {
                for (auto [kind, var] : {std::pair{"weight", convs_[i][j].weight}, std::pair{"bias", convs_[i][j].bias}}) {
                    const std::string name = backbone_param_name(static_cast<int>(i), static_cast<int>(j), kind);
                    const Tensor& src = archive.get(name);
                    if (!src.same_shape(var.value())) {
                        throw LoadError("weights file: '" + name + "' has shape " + shape_string(src.shape()) +
                                        ", expected " + shape_string(var.value().shape()));
                    }
                    var.mutable_value() = src;
                }
            }
        }
    }

    std::size_t conv_count() const {
        std::size_t n = 0;
        for (const auto& b : convs_) n += b.size();
        return n;
    }

    const BackboneConfig& config() const noexcept { return config_; }

    /// Runs blocks 0..last_block (inclusive) on a 3 x S x S image.
    std::vector<BlockFeatures> forward(const Var& image, int last_block = 5) const {
        const Tensor& img = image.value();
        if (img.rank() != 3 || img.channels() != 3 || img.height() != config_.input_size ||
            img.width() != config_.input_size) {
            throw ShapeError("backbone expects 3x" + std::to_string(config_.input_size) + "x" +
                             std::to_string(config_.input_size) + " input, got " + shape_string(img.shape()));
        }
        if (!img.all_finite()) throw ValidationError("backbone input contains non-finite values");
        if (last_block < 0 || last_block > 5) throw ConfigError("last_block must be in 0..5");

        std::vector<BlockFeatures> blocks;
        Var x = image;
        for (int i = 0; i <= std::min(last_block, 4); ++i) {
            BlockFeatures bf{i, {}, 1 << i};
            for (const Conv& c : convs_[static_cast<std::size_t>(i)]) {
                x = ops::relu(c(x));
                bf.layers.push_back(x);
            }
            blocks.push_back(std::move(bf));
            if (i < last_block) x = ops::max_pool2(x);
        }
        if (last_block == 5) blocks.push_back(BlockFeatures{5, {x}, 32});
        return blocks;
    }

private:
    BackboneConfig config_;
    std::array<std::vector<Conv>, 5> convs_;
};

}  // namespace mlsal
