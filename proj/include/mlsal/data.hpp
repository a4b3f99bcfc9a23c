#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mlsal/errors.hpp"
#include "mlsal/supervision.hpp"
#include "mlsal/tensor.hpp"

namespace mlsal {

enum class SampleKind { saliency, edge };

struct SampleRecord {
    Tensor image;   // 3 x H x W in [0,1]
    Tensor target;  // 1 x H x W: binary mask (saliency) or [0,1] edge map
    SampleKind kind = SampleKind::saliency;
    std::string id;
};

enum class ShapeKind { rectangle, ellipse, triangle, annulus };

inline const char* to_string(ShapeKind s) {
    switch (s) {
        case ShapeKind::rectangle: return "rectangle";
        case ShapeKind::ellipse: return "ellipse";
        case ShapeKind::triangle: return "triangle";
        case ShapeKind::annulus: return "annulus";
    }
    return "?";
}

inline ShapeKind shape_from_string(const std::string& s) {
    if (s == "rectangle") return ShapeKind::rectangle;
    if (s == "ellipse") return ShapeKind::ellipse;
    if (s == "triangle") return ShapeKind::triangle;
    if (s == "annulus") return ShapeKind::annulus;
    throw ConfigError("unknown shape '" + s + "'");
}

struct SyntheticSpec {
    static constexpr double kMinArea = 0.05;
    static constexpr double kMaxArea = 0.60;

    int count = 8;
    int canvas_size = 64;
    std::vector<ShapeKind> shapes{ShapeKind::rectangle, ShapeKind::ellipse, ShapeKind::triangle, ShapeKind::annulus};
    std::array<double, 2> fg_range{0.6, 0.95};
    std::array<double, 2> bg_range{0.05, 0.35};
    double noise = 0.05;
    std::uint64_t seed = 7;
    /// Background line segments added to each edge image.
    int clutter_lines = 3;

    void validate() const {
        if (count < 1) throw ConfigError("synthetic count must be >= 1");
        if (canvas_size < 16) throw ConfigError("synthetic canvas_size must be >= 16");
        if (shapes.empty()) throw ConfigError("synthetic shapes must be nonempty");
        for (const auto* r : {&fg_range, &bg_range}) {
            if ((*r)[0] < 0 || (*r)[1] > 1 || (*r)[0] > (*r)[1]) throw ConfigError("intensity ranges must lie in [0,1]");
        }
        const double gap = std::max(fg_range[0] - bg_range[1], bg_range[0] - fg_range[1]);
        if (gap < 0.2 - 1e-12) throw ConfigError("foreground and background ranges must be 0.2 apart");
        if (noise < 0) throw ConfigError("noise amplitude must be >= 0");
        if (clutter_lines < 0) throw ConfigError("clutter_lines must be >= 0");
    }
};

struct SyntheticDataset {
    std::vector<SampleRecord> saliency;
    std::vector<SampleRecord> edge;
};

namespace detail {

inline Tensor rasterize_shape(ShapeKind kind, int s, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto uni = [&](double a, double b) { return a + (b - a) * u(rng); };
    Tensor mask(1, s, s);
    auto fill = [&](auto&& inside) {
        for (int y = 0; y < s; ++y) {
            for (int x = 0; x < s; ++x) mask(0, y, x) = inside(x + 0.5, y + 0.5) ? 1.0 : 0.0;
        }
    };
    switch (kind) {
        case ShapeKind::rectangle: {
            const double w = std::floor(uni(0.25, 0.7) * s), h = std::floor(uni(0.25, 0.7) * s);
            const double x0 = std::floor(uni(0.0, s - w)), y0 = std::floor(uni(0.0, s - h));
            fill([&](double x, double y) { return x >= x0 && x < x0 + w && y >= y0 && y < y0 + h; });
            break;
        }
        case ShapeKind::ellipse: {
            const double cx = uni(0.3, 0.7) * s, cy = uni(0.3, 0.7) * s;
            const double rx = uni(0.12, 0.35) * s, ry = uni(0.12, 0.35) * s;
            fill([&](double x, double y) {
                const double dx = (x - cx) / rx, dy = (y - cy) / ry;
                return dx * dx + dy * dy <= 1.0;
            });
            break;
        }
        case ShapeKind::triangle: {
            const double cx = uni(0.35, 0.65) * s, cy = uni(0.35, 0.65) * s;
            const double r = uni(0.22, 0.4) * s, rot = uni(0.0, 2.0 * M_PI);
            std::array<double, 6> v{};
            for (int k = 0; k < 3; ++k) {
                const double a = rot + 2.0 * M_PI * k / 3.0 + uni(-0.3, 0.3);
                const double rr = r * uni(0.8, 1.1);
                v[static_cast<std::size_t>(2 * k)] = cx + rr * std::cos(a);
                v[static_cast<std::size_t>(2 * k + 1)] = cy + rr * std::sin(a);
            }
            auto edge = [&](int a, int b, double x, double y) {
                return (v[2 * b] - v[2 * a]) * (y - v[2 * a + 1]) - (v[2 * b + 1] - v[2 * a + 1]) * (x - v[2 * a]);
            };
            fill([&](double x, double y) {
                const double e0 = edge(0, 1, x, y), e1 = edge(1, 2, x, y), e2 = edge(2, 0, x, y);
                return (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
            });
            break;
        }
        case ShapeKind::annulus: {
            const double cx = uni(0.35, 0.65) * s, cy = uni(0.35, 0.65) * s;
            const double ro = uni(0.22, 0.38) * s, ri = ro * uni(0.45, 0.6);
            fill([&](double x, double y) {
                const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                return d2 <= ro * ro && d2 >= ri * ri;
            });
            break;
        }
    }
    return mask;
}

inline std::vector<std::pair<int, int>> bresenham(int x0, int y0, int x1, int y1) {
    std::vector<std::pair<int, int>> pts;
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
        pts.emplace_back(x0, y0);
        if (x0 == x1 && y0 == y1) break;
        const int e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            x0 += sx;
        }
        if (e2 <= dx) {
            err += dx;
            y0 += sy;
        }
    }
    return pts;
}

}  // namespace detail

inline std::string synthetic_id(int i) {
    std::ostringstream os;
    os << "synth_";
    os.width(4);
    os.fill('0');
    os << i;
    return os.str();
}

/// Seed-deterministic shape dataset. Each canvas holds one shape whose area
/// is between 5% and 60% of the canvas on a noisy background. The paired
/// edge sample is the same picture with background line clutter; its target
/// is the union of the mask contour and the clutter pixels.
inline SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto uni = [&](double a, double b) { return a + (b - a) * u(rng); };
    const int s = spec.canvas_size;

    SyntheticDataset ds;
    for (int i = 0; i < spec.count; ++i) {
        const ShapeKind kind =
            spec.shapes[std::uniform_int_distribution<std::size_t>(0, spec.shapes.size() - 1)(rng)];
        Tensor mask;
        for (int attempt = 0;; ++attempt) {
            mask = detail::rasterize_shape(kind, s, rng);
            const double area = mask.mean();
            if (area >= SyntheticSpec::kMinArea && area <= SyntheticSpec::kMaxArea) break;
            if (attempt > 1000) throw ConfigError("cannot place a shape with the required area on this canvas");
        }

        std::array<double, 3> fg{}, bg{};
        for (int c = 0; c < 3; ++c) {
            fg[static_cast<std::size_t>(c)] = uni(spec.fg_range[0], spec.fg_range[1]);
            bg[static_cast<std::size_t>(c)] = uni(spec.bg_range[0], spec.bg_range[1]);
        }
        Tensor image(3, s, s);
        for (int y = 0; y < s; ++y) {
            for (int x = 0; x < s; ++x) {
                const bool in = mask(0, y, x) > 0.5;
                for (int c = 0; c < 3; ++c) {
                    const double base = in ? fg[static_cast<std::size_t>(c)] : bg[static_cast<std::size_t>(c)];
                    image(c, y, x) = std::clamp(base + uni(-spec.noise, spec.noise), 0.0, 1.0);
                }
            }
        }

        const std::string id = synthetic_id(i);
        Tensor edge_image = image;
        Tensor edge_target = extract_foreground_contour(mask);
        for (int l = 0; l < spec.clutter_lines; ++l) {
            const int x0 = static_cast<int>(uni(0, s)), y0 = static_cast<int>(uni(0, s));
            const int x1 = static_cast<int>(uni(0, s)), y1 = static_cast<int>(uni(0, s));
            const double shade = uni(spec.fg_range[0], spec.fg_range[1]);
            for (auto [x, y] : detail::bresenham(x0, y0, x1, y1)) {
                if (x < 0 || x >= s || y < 0 || y >= s || mask(0, y, x) > 0.5) continue;
                for (int c = 0; c < 3; ++c) edge_image(c, y, x) = shade;
                edge_target(0, y, x) = 1.0;
            }
        }

        ds.saliency.push_back({std::move(image), mask, SampleKind::saliency, id});
        ds.edge.push_back({std::move(edge_image), std::move(edge_target), SampleKind::edge, id});
    }
    return ds;
}

/// Endless stream of (saliency index, edge index) pairs. Each side walks its
/// own shuffled permutation and reshuffles when exhausted, so the shorter
/// collection is recycled. One epoch is max(|saliency|, |edge|) pairs.
class PairedBatcher {
public:
    PairedBatcher(std::size_t n_saliency, std::size_t n_edge, std::uint64_t seed) {
        if (n_saliency == 0 || n_edge == 0) {
            throw ConfigError("paired batches need nonempty saliency and edge collections");
        }
        std::seed_seq seq{seed, std::uint64_t{0x5a17}};
        std::array<std::uint64_t, 2> seeds{};
        seq.generate(seeds.begin(), seeds.end());
        streams_[0] = Stream(n_saliency, seeds[0]);
        streams_[1] = Stream(n_edge, seeds[1]);
    }

    std::pair<std::size_t, std::size_t> next() { return {streams_[0].next(), streams_[1].next()}; }

    std::size_t epoch_length() const { return std::max(streams_[0].order.size(), streams_[1].order.size()); }

    std::string serialize() const {
        std::ostringstream os;
        for (const auto& s : streams_) {
            os << s.rng << '\n' << s.pos << ' ' << s.order.size();
            for (auto v : s.order) os << ' ' << v;
            os << '\n';
        }
        return os.str();
    }

    void restore(const std::string& state) {
        std::istringstream is(state);
        for (auto& s : streams_) {
            std::size_t n = 0;
            is >> s.rng >> s.pos >> n;
            s.order.resize(n);
            for (auto& v : s.order) is >> v;
        }
        if (!is) throw LoadError("corrupt batcher state");
    }

private:
    struct Stream {
        Stream() = default;
        Stream(std::size_t n, std::uint64_t seed) : rng(seed), order(n) {
            std::iota(order.begin(), order.end(), std::size_t{0});
            shuffle();
        }
        void shuffle() {
            // Fisher-Yates with explicit draws; std::shuffle is implementation-defined.
            for (std::size_t i = order.size(); i > 1; --i) {
                const std::size_t j = static_cast<std::size_t>(rng() % i);
                std::swap(order[i - 1], order[j]);
            }
            pos = 0;
        }
        std::size_t next() {
            if (pos == order.size()) shuffle();
            return order[pos++];
        }

        std::mt19937_64 rng;
        std::vector<std::size_t> order;
        std::size_t pos = 0;
    };

    std::array<Stream, 2> streams_;
};

/// Convenience over PairedBatcher for fixed-length runs.
inline std::vector<std::pair<std::size_t, std::size_t>> paired_batches(std::size_t n_saliency, std::size_t n_edge,
                                                                       std::uint64_t seed, std::size_t steps) {
    PairedBatcher b(n_saliency, n_edge, seed);
    std::vector<std::pair<std::size_t, std::size_t>> out;
    out.reserve(steps);
    for (std::size_t i = 0; i < steps; ++i) out.push_back(b.next());
    return out;
}

}  // namespace mlsal
