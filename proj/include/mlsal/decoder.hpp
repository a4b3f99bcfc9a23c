#pragma once

#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include "mlsal/mutual_learning.hpp"
#include "mlsal/ops.hpp"
#include "mlsal/params.hpp"

namespace mlsal {

struct DecoderOutput {
    std::vector<Var> predictions;  // D0..D4, coarse to fine
    Var final_map;                 // same node as predictions[4]
};

/// Five-stage U-shaped decoder. Stage i fuses the upsampled output of stage
/// i-1 (or of MLM5 for stage 0) with MLM_{4-i}'s features:
///   concat -> conv3x3 -> ReLU -> conv3x3 -> ReLU -> {1x1 head + logistic,
///   transposed conv x2 -> ReLU towards stage i+1}.
class Decoder {
public:
    static int width_for(int mlm_hidden) { return std::max(mlm_hidden, 32); }

    static Decoder build(int mlm_hidden, ParamStore& store, std::mt19937_64& rng) {
        Decoder d;
        d.width_ = width_for(mlm_hidden);
        d.mlm_channels_ = mlm_hidden;
        d.seed_up_ = UpConv::create(store, "dec.seed_up", mlm_hidden, d.width_, ParamGroup::decoder, rng);
        for (int i = 0; i < 5; ++i) {
            const std::string p = "dec" + std::to_string(i);
            Stage s;
            s.conv0 = Conv::create(store, p + ".conv0", d.width_ + mlm_hidden, d.width_, 3, 1, ParamGroup::decoder, rng);
            s.conv1 = Conv::create(store, p + ".conv1", d.width_, d.width_, 3, 1, ParamGroup::decoder, rng);
            s.head = Conv::create(store, p + ".head", d.width_, 1, 1, 1, ParamGroup::decoder, rng);
            if (i < 4) s.up = UpConv::create(store, p + ".up", d.width_, d.width_, ParamGroup::decoder, rng);
            d.stages_.push_back(std::move(s));
        }
        return d;
    }

    int width() const noexcept { return width_; }

    DecoderOutput forward(const std::vector<MlmOutput>& mlm) const {
        if (mlm.size() != 6) {
            throw ShapeError("decoder expects 6 MLM outputs, got " + std::to_string(mlm.size()));
        }
        for (std::size_t i = 0; i < 6; ++i) {
            const Tensor& f = mlm[i].decoder_features.value();
            if (f.rank() != 3 || f.channels() != mlm_channels_) {
                throw ShapeError("decoder: MLM " + std::to_string(i) + " features have shape " + shape_string(f.shape()));
            }
            if (i > 0) {
                const Tensor& prev = mlm[i - 1].decoder_features.value();
                if (f.height() * 2 != prev.height() || f.width() * 2 != prev.width()) {
                    throw ShapeError("decoder: MLM feature sizes must halve block to block");
                }
            }
        }

        DecoderOutput out;
        Var carry = ops::relu(seed_up_(mlm[5].decoder_features));
        for (std::size_t i = 0; i < 5; ++i) {
            const Stage& s = stages_[i];
            Var f = ops::concat({carry, mlm[4 - i].decoder_features});
            f = ops::relu(s.conv0(f));
            f = ops::relu(s.conv1(f));
            out.predictions.push_back(ops::sigmoid(s.head(f)));
            if (i < 4) carry = ops::relu(s.up(f));
        }
        out.final_map = out.predictions.back();
        return out;
    }

private:
    struct Stage {
        Conv conv0, conv1, head;
        UpConv up;
    };

    int width_ = 32;
    int mlm_channels_ = 32;
    UpConv seed_up_;
    std::vector<Stage> stages_;
};

}  // namespace mlsal
