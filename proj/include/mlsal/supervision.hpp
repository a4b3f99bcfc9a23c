#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mlsal/errors.hpp"
#include "mlsal/tensor.hpp"

namespace mlsal {

// ---------------------------------------------------------------------------
// Foreground contour extraction
// ---------------------------------------------------------------------------

struct CannyThresholds {
    /// Hysteresis thresholds as fractions of the maximum gradient magnitude.
    double low = 0.1;
    double high = 0.3;
};

inline constexpr double kCannySigma = 1.0;

namespace detail {

inline double clamped(const Tensor& t, int y, int x) {
    y = std::clamp(y, 0, t.height() - 1);
    x = std::clamp(x, 0, t.width() - 1);
    return t(0, y, x);
}

inline Tensor gaussian_blur(const Tensor& src, double sigma) {
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double norm = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[static_cast<std::size_t>(i + radius)] = std::exp(-(i * i) / (2.0 * sigma * sigma));
        norm += k[static_cast<std::size_t>(i + radius)];
    }
    for (double& v : k) v /= norm;

    Tensor tmp = Tensor::like(src), out = Tensor::like(src);
    const int h = src.height(), w = src.width();
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int i = -radius; i <= radius; ++i) s += k[static_cast<std::size_t>(i + radius)] * clamped(src, y, x + i);
            tmp(0, y, x) = s;
        }
    }
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int i = -radius; i <= radius; ++i) s += k[static_cast<std::size_t>(i + radius)] * clamped(tmp, y + i, x);
            out(0, y, x) = s;
        }
    }
    return out;
}

}  // namespace detail

inline bool is_binary(const Tensor& t) {
    for (double v : t.values()) {
        if (v != 0.0 && v != 1.0) return false;
    }
    return true;
}

/// Canny edge detector on a binary mask: Gaussian smoothing (sigma = 1),
/// Sobel gradients, non-maximum suppression along the quantized gradient
/// direction, and double-threshold hysteresis with 8-connectivity. Borders
/// are replicated, so a mask touching the frame yields no frame contour.
inline Tensor extract_foreground_contour(const Tensor& mask, CannyThresholds th = {}) {
    require_map(mask, "extract_foreground_contour");
    if (!is_binary(mask)) throw ValidationError("extract_foreground_contour: mask is not binary");
    if (!(th.low > 0.0 && th.low <= th.high)) throw ConfigError("Canny thresholds need 0 < low <= high");

    const int h = mask.height(), w = mask.width();
    Tensor out(1, h, w);
    const Tensor smooth = detail::gaussian_blur(mask, kCannySigma);

    Tensor gx(1, h, w), gy(1, h, w), mag(1, h, w);
    double max_mag = 0.0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            auto p = [&](int dy, int dx) { return detail::clamped(smooth, y + dy, x + dx); };
            const double dx = (p(-1, 1) + 2 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2 * p(0, -1) + p(1, -1));
            const double dy = (p(1, -1) + 2 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2 * p(-1, 0) + p(-1, 1));
            gx(0, y, x) = dx;
            gy(0, y, x) = dy;
            mag(0, y, x) = std::hypot(dx, dy);
            max_mag = std::max(max_mag, mag(0, y, x));
        }
    }
    if (max_mag < 1e-12) return out;

    const double low = th.low * max_mag;
    const double high = th.high * max_mag;
    auto m_at = [&](int y, int x) { return (y < 0 || y >= h || x < 0 || x >= w) ? 0.0 : mag(0, y, x); };

    // 0 = suppressed, 1 = weak candidate, 2 = strong seed.
    std::vector<unsigned char> state(static_cast<std::size_t>(h * w), 0);
    const double tan22 = std::tan(M_PI / 8.0);
    const double tan67 = std::tan(3.0 * M_PI / 8.0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double m = mag(0, y, x);
            if (m <= low) continue;
            const double ax = std::abs(gx(0, y, x)), ay = std::abs(gy(0, y, x));
            int dy = 0, dx = 0;
            if (ay <= tan22 * ax) {
                dx = 1;
            } else if (ay > tan67 * ax) {
                dy = 1;
            } else {
                dy = 1;
                dx = (gx(0, y, x) * gy(0, y, x) > 0) ? 1 : -1;
            }
            // Strict on one side, non-strict on the other: a plateau of two
            // equal maxima keeps exactly one pixel.
            if (m > m_at(y - dy, x - dx) && m >= m_at(y + dy, x + dx)) {
                state[static_cast<std::size_t>(y * w + x)] = m > high ? 2 : 1;
            }
        }
    }

    std::vector<int> stack;
    for (int i = 0; i < h * w; ++i) {
        if (state[static_cast<std::size_t>(i)] == 2) stack.push_back(i);
    }
    while (!stack.empty()) {
        const int i = stack.back();
        stack.pop_back();
        const int y = i / w, x = i % w;
        out(0, y, x) = 1.0;
        for (int dy = -1; dy <= 1; ++dy) {
            for (int dx = -1; dx <= 1; ++dx) {
                const int ny = y + dy, nx = x + dx;
                if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                auto& s = state[static_cast<std::size_t>(ny * w + nx)];
                if (s == 1) {
                    s = 2;
                    stack.push_back(ny * w + nx);
                }
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Multi-resolution ground truth
// ---------------------------------------------------------------------------

/// Level sizes S, S/2, ..., S/32 matching the six encoder blocks.
inline std::vector<int> pyramid_sizes(int input_size) {
    std::vector<int> s;
    for (int i = 0; i < 6; ++i) s.push_back(input_size >> i);
    return s;
}

/// Block-average downsampling by an integer factor, re-binarized at 0.5.
inline Tensor downsample_mask(const Tensor& mask, int factor) {
    const int h = mask.height() / factor, w = mask.width() / factor;
    Tensor out(1, h, w);
    const double area = static_cast<double>(factor) * factor;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int dy = 0; dy < factor; ++dy) {
                for (int dx = 0; dx < factor; ++dx) s += mask(0, y * factor + dy, x * factor + dx);
            }
            out(0, y, x) = (s / area) >= 0.5 ? 1.0 : 0.0;
        }
    }
    return out;
}

/// Block-max downsampling by an integer factor; keeps one-pixel curves alive.
inline Tensor downsample_max(const Tensor& map, int factor) {
    const int h = map.height() / factor, w = map.width() / factor;
    Tensor out(1, h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double m = map(0, y * factor, x * factor);
            for (int dy = 0; dy < factor; ++dy) {
                for (int dx = 0; dx < factor; ++dx) m = std::max(m, map(0, y * factor + dy, x * factor + dx));
            }
            out(0, y, x) = m;
        }
    }
    return out;
}

/// The three supervision signals and their per-block pyramids. A saliency
/// sample carries s_gt and fc_gt; an edge sample carries e_gt. Absent
/// signals are empty tensors with empty pyramids.
struct GroundTruthBundle {
    Tensor s_gt;
    Tensor fc_gt;
    std::optional<Tensor> e_gt;
    std::vector<Tensor> s_pyramid;
    std::vector<Tensor> fc_pyramid;
    std::vector<Tensor> e_pyramid;

    bool has_saliency() const { return !s_gt.empty(); }
    bool has_edge() const { return e_gt.has_value(); }
};

inline void validate_scales(const std::vector<int>& scales, int input_size) {
    if (scales.empty()) throw ConfigError("pyramid needs at least one scale");
    for (std::size_t i = 0; i < scales.size(); ++i) {
        if (scales[i] <= 0 || input_size % scales[i] != 0) {
            throw ConfigError("pyramid scale " + std::to_string(scales[i]) + " does not divide input size " +
                              std::to_string(input_size));
        }
        if (i > 0 && scales[i] >= scales[i - 1]) throw ConfigError("pyramid scales must be strictly decreasing");
    }
}

/// Fills the pyramids of every present signal at the requested sizes.
inline GroundTruthBundle build_pyramids(GroundTruthBundle bundle, const std::vector<int>& scales) {
    const Tensor& ref = bundle.has_saliency() ? bundle.s_gt : *bundle.e_gt;
    require_map(ref, "build_pyramids");
    const int input = ref.height();
    if (ref.width() != input) throw ShapeError("build_pyramids: ground truth must be square");
    validate_scales(scales, input);

    bundle.s_pyramid.clear();
    bundle.fc_pyramid.clear();
    bundle.e_pyramid.clear();
    for (int s : scales) {
        const int f = input / s;
        if (bundle.has_saliency()) {
            bundle.s_pyramid.push_back(f == 1 ? bundle.s_gt : downsample_mask(bundle.s_gt, f));
            bundle.fc_pyramid.push_back(f == 1 ? bundle.fc_gt : downsample_max(bundle.fc_gt, f));
        }
        if (bundle.has_edge()) bundle.e_pyramid.push_back(f == 1 ? *bundle.e_gt : downsample_max(*bundle.e_gt, f));
    }
    return bundle;
}

/// Saliency-sample bundle: FC-gt is extracted from the mask, then pyramids
/// are built at the six block scales.
inline GroundTruthBundle make_saliency_bundle(const Tensor& mask, CannyThresholds th = {}) {
    GroundTruthBundle b;
    b.s_gt = mask;
    b.fc_gt = extract_foreground_contour(mask, th);
    return build_pyramids(std::move(b), pyramid_sizes(mask.height()));
}

inline GroundTruthBundle make_edge_bundle(const Tensor& edge_map) {
    require_map(edge_map, "make_edge_bundle");
    GroundTruthBundle b;
    b.e_gt = edge_map;
    return build_pyramids(std::move(b), pyramid_sizes(edge_map.height()));
}

// ---------------------------------------------------------------------------
// Supervision schedule
// ---------------------------------------------------------------------------

enum class GtKind { S, FC };
enum class ScheduleVariant { intertwined, revised, all_mask };
enum class HeadStage { encoder, decoder };

struct HeadRef {
    HeadStage stage;
    int index;
};

/// Which ground truth supervises each of the 6 MLM heads and 5 decoder heads.
///
/// intertwined: encoder FC,FC,FC,S,S,S; decoder S,FC,S,FC,S.
/// revised:     encoder as intertwined; every decoder head S, with D0 and D1
///              additionally supervised by FC.
/// all_mask:    S everywhere.
struct SupervisionSchedule {
    std::array<GtKind, 6> encoder_kinds{};
    std::array<GtKind, 5> decoder_kinds{};
    std::array<bool, 5> decoder_extra_fc{};
    ScheduleVariant variant = ScheduleVariant::intertwined;

    static SupervisionSchedule make(ScheduleVariant v) {
        using enum GtKind;
        SupervisionSchedule s;
        s.variant = v;
        switch (v) {
            case ScheduleVariant::intertwined:
                s.encoder_kinds = {FC, FC, FC, S, S, S};
                s.decoder_kinds = {S, FC, S, FC, S};
                break;
            case ScheduleVariant::revised:
                s.encoder_kinds = {FC, FC, FC, S, S, S};
                s.decoder_kinds = {S, S, S, S, S};
                s.decoder_extra_fc = {true, true, false, false, false};
                break;
            case ScheduleVariant::all_mask:
                s.encoder_kinds = {S, S, S, S, S, S};
                s.decoder_kinds = {S, S, S, S, S};
                break;
        }
        return s;
    }
};

inline GtKind assign_supervision(const SupervisionSchedule& schedule, HeadRef head) {
    if (head.stage == HeadStage::encoder) {
        if (head.index < 0 || head.index >= 6) {
            throw ConfigError("encoder head index " + std::to_string(head.index) + " out of range 0..5");
        }
        return schedule.encoder_kinds[static_cast<std::size_t>(head.index)];
    }
    if (head.index < 0 || head.index >= 5) {
        throw ConfigError("decoder head index " + std::to_string(head.index) + " out of range 0..4");
    }
    return schedule.decoder_kinds[static_cast<std::size_t>(head.index)];
}

/// Ground-truth map of `kind` at pyramid `level`.
inline const Tensor& scheduled_target(const GroundTruthBundle& gts, GtKind kind, int level) {
    const auto& pyr = kind == GtKind::S ? gts.s_pyramid : gts.fc_pyramid;
    if (level < 0 || static_cast<std::size_t>(level) >= pyr.size()) {
        throw ConfigError("ground truth pyramid is missing level " + std::to_string(level));
    }
    return pyr[static_cast<std::size_t>(level)];
}

inline const char* to_string(ScheduleVariant v) {
    switch (v) {
        case ScheduleVariant::intertwined: return "intertwined";
        case ScheduleVariant::revised: return "revised";
        case ScheduleVariant::all_mask: return "all_mask";
    }
    return "?";
}

inline ScheduleVariant schedule_from_string(const std::string& s) {
    if (s == "intertwined") return ScheduleVariant::intertwined;
    if (s == "revised") return ScheduleVariant::revised;
    if (s == "all_mask" || s == "all-mask") return ScheduleVariant::all_mask;
    throw ConfigError("unknown schedule variant '" + s + "'");
}

}  // namespace mlsal
