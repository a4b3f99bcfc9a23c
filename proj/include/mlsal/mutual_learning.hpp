#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mlsal/backbone.hpp"
#include "mlsal/ops.hpp"
#include "mlsal/params.hpp"

namespace mlsal {

struct MlmConfig {
    int students = 3;
    std::array<int, 6> kernel_sizes{3, 3, 3, 5, 5, 5};
    std::array<int, 6> dilations{1, 1, 1, 2, 2, 4};
    int hidden_channels = 32;

    void validate() const {
        if (students < 1) throw ConfigError("MLM student count must be >= 1");
        if (hidden_channels < 1) throw ConfigError("MLM hidden_channels must be >= 1");
        for (std::size_t i = 0; i < 6; ++i) {
            if (kernel_sizes[i] < 1 || kernel_sizes[i] % 2 == 0) throw ConfigError("MLM kernel sizes must be odd");
            if (dilations[i] < 1) throw ConfigError("MLM dilations must be >= 1");
            if (i > 0 && (kernel_sizes[i] < kernel_sizes[i - 1] || dilations[i] < dilations[i - 1])) {
                throw ConfigError("MLM kernel/dilation schedule must be non-decreasing with depth");
            }
        }
    }
};

/// Which backbone layer feeds the MLM of each block: the second conv for
/// blocks 0-1, the third for blocks 2-4, and the pool5 map for block 5.
inline int mlm_input_layer(int block_index) {
    static constexpr std::array<int, 6> kLayer{1, 1, 2, 2, 2, 0};
    if (block_index < 0 || block_index > 5) throw ConfigError("block index out of range");
    return kLayer[static_cast<std::size_t>(block_index)];
}

struct MlmOutput {
    std::vector<Var> student_features;
    std::vector<Var> student_predictions;
    Var decoder_features;

    int students() const { return static_cast<int>(student_predictions.size()); }
};

/// Test-time choice of which student's prediction to report.
struct BranchPolicy {
    enum class Kind { fixed, seeded_random };
    Kind kind = Kind::fixed;
    int index = 0;
    std::uint64_t seed = 0;

    static BranchPolicy fixed(int i) { return {Kind::fixed, i, 0}; }
    static BranchPolicy seeded_random(std::uint64_t s) { return {Kind::seeded_random, 0, s}; }

    int resolve(int students) const {
        if (kind == Kind::fixed) {
            if (index < 0 || index >= students) {
                throw ConfigError("branch index " + std::to_string(index) + " out of range for " +
                                  std::to_string(students) + " students");
            }
            return index;
        }
        std::mt19937_64 rng(seed);
        return std::uniform_int_distribution<int>(0, students - 1)(rng);
    }
};

/// K parallel student branches on one encoder block. Each student is
/// conv(k, dilation) -> ReLU -> conv3x3 -> ReLU -> conv3x3, followed by a
/// 1x1 single-channel head and a logistic.
class MutualLearningModule {
public:
    static MutualLearningModule build(int block_index, int in_channels, const MlmConfig& cfg, ParamStore& store,
                                      std::mt19937_64& rng) {
        cfg.validate();
        MutualLearningModule m;
        m.block_index_ = block_index;
        m.in_channels_ = in_channels;
        const int k = cfg.kernel_sizes[static_cast<std::size_t>(block_index)];
        const int d = cfg.dilations[static_cast<std::size_t>(block_index)];
        const int h = cfg.hidden_channels;
        for (int s = 0; s < cfg.students; ++s) {
            const std::string p = "mlm" + std::to_string(block_index) + ".student" + std::to_string(s);
            Student st;
            st.convs[0] = Conv::create(store, p + ".conv0", in_channels, h, k, d, ParamGroup::encoder, rng);
            st.convs[1] = Conv::create(store, p + ".conv1", h, h, 3, 1, ParamGroup::encoder, rng);
            st.convs[2] = Conv::create(store, p + ".conv2", h, h, 3, 1, ParamGroup::encoder, rng);
            st.head = Conv::create(store, p + ".head", h, 1, 1, 1, ParamGroup::encoder, rng);
            m.students_.push_back(std::move(st));
        }
        return m;
    }

    int block_index() const noexcept { return block_index_; }
    int students() const noexcept { return static_cast<int>(students_.size()); }

    /// `injected`, when present, replaces the raw backbone layer as the
    /// student input; it is the edge-module residual sum and must match that
    /// layer's shape exactly.
    MlmOutput forward(const BlockFeatures& block, const std::optional<Var>& injected = std::nullopt,
                      int decoder_branch = 0) const {
        if (block.block_index != block_index_) {
            throw ConfigError("MLM " + std::to_string(block_index_) + " received block " +
                              std::to_string(block.block_index));
        }
        const auto layer = static_cast<std::size_t>(mlm_input_layer(block_index_));
        if (layer >= block.layers.size()) throw ShapeError("block is missing the MLM input layer");
        Var x = block.layers[layer];
        if (injected) {
            if (!injected->value().same_shape(x.value())) {
                throw ShapeError("MLM " + std::to_string(block_index_) + ": injected features " +
                                 shape_string(injected->value().shape()) + " do not match block layer " +
                                 shape_string(x.value().shape()));
            }
            x = *injected;
        }
        if (decoder_branch < 0 || decoder_branch >= students()) {
            throw ConfigError("decoder branch " + std::to_string(decoder_branch) + " out of range");
        }

        MlmOutput out;
        for (const Student& s : students_) {
            Var f = ops::relu(s.convs[0](x));
            f = ops::relu(s.convs[1](f));
            f = s.convs[2](f);
            out.student_predictions.push_back(ops::sigmoid(s.head(f)));
            out.student_features.push_back(std::move(f));
        }
        out.decoder_features = out.student_features[static_cast<std::size_t>(decoder_branch)];
        return out;
    }

private:
    struct Student {
        std::array<Conv, 3> convs;
        Conv head;
    };

    int block_index_ = 0;
    int in_channels_ = 0;
    std::vector<Student> students_;
};

/// Returns the prediction of the student chosen by `policy`.
inline const Var& select_test_branch(const MlmOutput& output, const BranchPolicy& policy) {
    return output.student_predictions[static_cast<std::size_t>(policy.resolve(output.students()))];
}

}  // namespace mlsal
