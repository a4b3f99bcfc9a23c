#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mlsal/errors.hpp"
#include "mlsal/tensor.hpp"

namespace mlsal {

// Binarization convention shared by every thresholded metric: a pixel is
// foreground iff p >= t and p > 0. A map of zeros therefore never has
// foreground, whatever the threshold.

inline bool is_foreground(double p, double t) { return p >= t && p > 0.0; }

/// Uniform grid t_j = j / (n - 1), j = 0..n-1.
inline std::vector<double> threshold_grid(int n) {
    if (n < 2) throw ConfigError("threshold grid needs at least 2 levels");
    std::vector<double> t(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) t[static_cast<std::size_t>(j)] = static_cast<double>(j) / (n - 1);
    return t;
}

inline constexpr int kDefaultThresholds = 255;

struct PRCurve {
    std::vector<double> thresholds;
    std::vector<double> precision;
    std::vector<double> recall;
};

struct MetricReport {
    double mean_f_beta = 0.0;
    double mae = 0.0;
    double s_measure = 0.0;
    PRCurve pr;
    double ods = 0.0;
    double ois = 0.0;
};

namespace detail {

inline void check_aligned(const std::vector<Tensor>& preds, const std::vector<Tensor>& gts, const char* what) {
    if (preds.size() != gts.size()) throw ShapeError(std::string(what) + ": prediction/ground-truth count mismatch");
    for (std::size_t i = 0; i < preds.size(); ++i) require_same_shape(preds[i], gts[i], what);
}

/// Precision with the empty-prediction convention (1 when nothing is predicted).
inline double precision_of(double tp, double predicted) { return predicted > 0 ? tp / predicted : 1.0; }
/// Recall, 0 when the ground truth is empty.
inline double recall_of(double tp, double positives) { return positives > 0 ? tp / positives : 0.0; }

// Number of entries of a sorted vector that count as foreground at t.
inline std::size_t count_foreground(const std::vector<double>& sorted, double t) {
    auto it = t > 0.0 ? std::lower_bound(sorted.begin(), sorted.end(), t)
                      : std::upper_bound(sorted.begin(), sorted.end(), 0.0);
    return static_cast<std::size_t>(sorted.end() - it);
}

}  // namespace detail

/// Dataset-level precision/recall at each threshold of a uniform grid. TP/FP
/// counts are pooled over all images before dividing. Ground-truth pixels
/// >= 0.5 are positive.
inline PRCurve pr_curve(const std::vector<Tensor>& preds, const std::vector<Tensor>& gts,
                        int n_thresholds = kDefaultThresholds) {
    detail::check_aligned(preds, gts, "pr_curve");
    std::vector<double> pos, neg;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        for (std::size_t k = 0; k < preds[i].size(); ++k) (gts[i][k] >= 0.5 ? pos : neg).push_back(preds[i][k]);
    }
    std::sort(pos.begin(), pos.end());
    std::sort(neg.begin(), neg.end());

    PRCurve c;
    c.thresholds = threshold_grid(n_thresholds);
    for (double t : c.thresholds) {
        const auto tp = static_cast<double>(detail::count_foreground(pos, t));
        const auto fp = static_cast<double>(detail::count_foreground(neg, t));
        c.precision.push_back(detail::precision_of(tp, tp + fp));
        c.recall.push_back(detail::recall_of(tp, static_cast<double>(pos.size())));
    }
    return c;
}

/// (1 + b2) P R / (b2 P + R); 0 when the denominator vanishes.
inline double f_beta(double precision, double recall, double beta_sq = 0.3) {
    if (precision < 0 || precision > 1 || recall < 0 || recall > 1) {
        throw ValidationError("f_beta: precision and recall must lie in [0,1]");
    }
    const double den = beta_sq * precision + recall;
    return den > 0 ? (1.0 + beta_sq) * precision * recall / den : 0.0;
}

/// F-measure of one map binarized at min(1, 2 * mean(map)).
inline double adaptive_f_measure(const Tensor& pred, const Tensor& gt, double beta_sq = 0.3) {
    require_same_shape(pred, gt, "adaptive_f_measure");
    const double t = std::min(1.0, 2.0 * pred.mean());
    double tp = 0, predicted = 0, positives = 0;
    for (std::size_t k = 0; k < pred.size(); ++k) {
        const bool fg = is_foreground(pred[k], t);
        const bool g = gt[k] >= 0.5;
        tp += fg && g;
        predicted += fg;
        positives += g;
    }
    return f_beta(detail::precision_of(tp, predicted), detail::recall_of(tp, positives), beta_sq);
}

/// Mean over images of the adaptive-threshold F-measure.
inline double mean_f_measure(const std::vector<Tensor>& preds, const std::vector<Tensor>& gts, double beta_sq = 0.3) {
    detail::check_aligned(preds, gts, "mean_f_measure");
    if (preds.empty()) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) s += adaptive_f_measure(preds[i], gts[i], beta_sq);
    return s / static_cast<double>(preds.size());
}

inline double mae(const Tensor& pred, const Tensor& gt) {
    require_same_shape(pred, gt, "mae");
    double s = 0.0;
    for (std::size_t k = 0; k < pred.size(); ++k) s += std::abs(pred[k] - gt[k]);
    return pred.empty() ? 0.0 : s / static_cast<double>(pred.size());
}

inline double mean_mae(const std::vector<Tensor>& preds, const std::vector<Tensor>& gts) {
    detail::check_aligned(preds, gts, "mean_mae");
    if (preds.empty()) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) s += mae(preds[i], gts[i]);
    return s / static_cast<double>(preds.size());
}

// ---------------------------------------------------------------------------
// S-measure: object-aware and region-aware structural similarity.
// ---------------------------------------------------------------------------

namespace detail {

inline constexpr double kEps = 2.220446049250313e-16;

struct Region {
    int y0, y1, x0, x1;  // half-open
    int count() const { return std::max(0, y1 - y0) * std::max(0, x1 - x0); }
};

// 2 x / (x^2 + 1 + sigma_x + eps) over the pixels where `mask` is set.
inline double object_score(const Tensor& values, const Tensor& mask) {
    double sum = 0.0, n = 0.0;
    for (std::size_t k = 0; k < values.size(); ++k) {
        if (mask[k] >= 0.5) {
            sum += values[k];
            n += 1.0;
        }
    }
    if (n == 0) return 0.0;
    const double x = sum / n;
    double var = 0.0;
    for (std::size_t k = 0; k < values.size(); ++k) {
        if (mask[k] >= 0.5) var += (values[k] - x) * (values[k] - x);
    }
    const double sigma = std::sqrt(var / (n - 1.0 + kEps));
    return 2.0 * x / (x * x + 1.0 + sigma + kEps);
}

inline double region_ssim(const Tensor& pred, const Tensor& gt, const Region& r) {
    const double n = r.count();
    double sx = 0.0, sy = 0.0;
    for (int y = r.y0; y < r.y1; ++y) {
        for (int x = r.x0; x < r.x1; ++x) {
            sx += pred(0, y, x);
            sy += gt(0, y, x);
        }
    }
    const double mx = sx / n, my = sy / n;
    double vx = 0.0, vy = 0.0, cxy = 0.0;
    for (int y = r.y0; y < r.y1; ++y) {
        for (int x = r.x0; x < r.x1; ++x) {
            const double dx = pred(0, y, x) - mx, dy = gt(0, y, x) - my;
            vx += dx * dx;
            vy += dy * dy;
            cxy += dx * dy;
        }
    }
    vx /= (n - 1.0 + kEps);
    vy /= (n - 1.0 + kEps);
    cxy /= (n - 1.0 + kEps);
    const double alpha = 4.0 * mx * my * cxy;
    const double beta = (mx * mx + my * my) * (vx + vy);
    if (alpha != 0.0) return alpha / (beta + kEps);
    if (beta == 0.0) return 1.0;
    return 0.0;
}

}  // namespace detail

/// Object-aware similarity: foreground and background object scores weighted
/// by the ground-truth foreground ratio.
inline double s_object(const Tensor& pred, const Tensor& gt) {
    require_same_shape(pred, gt, "s_object");
    Tensor fg = Tensor::like(pred), bg = Tensor::like(pred), inv = Tensor::like(gt);
    for (std::size_t k = 0; k < pred.size(); ++k) {
        const double g = gt[k] >= 0.5 ? 1.0 : 0.0;
        fg[k] = pred[k] * g;
        bg[k] = (1.0 - pred[k]) * (1.0 - g);
        inv[k] = 1.0 - g;
    }
    Tensor bin = Tensor::like(gt);
    for (std::size_t k = 0; k < gt.size(); ++k) bin[k] = gt[k] >= 0.5 ? 1.0 : 0.0;
    const double u = bin.mean();
    return u * detail::object_score(fg, bin) + (1.0 - u) * detail::object_score(bg, inv);
}

/// Region-aware similarity: the maps are split into four quadrants about the
/// ground-truth centroid and an SSIM-style score is area-weighted over them.
inline double s_region(const Tensor& pred, const Tensor& gt) {
    require_same_shape(pred, gt, "s_region");
    require_map(gt, "s_region");
    const int h = gt.height(), w = gt.width();
    double total = 0.0, sx = 0.0, sy = 0.0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double g = gt(0, y, x) >= 0.5 ? 1.0 : 0.0;
            total += g;
            sx += g * (x + 1);
            sy += g * (y + 1);
        }
    }
    int cx, cy;
    if (total == 0.0) {
        cx = static_cast<int>(std::lround(w / 2.0));
        cy = static_cast<int>(std::lround(h / 2.0));
    } else {
        cx = static_cast<int>(std::lround(sx / total));
        cy = static_cast<int>(std::lround(sy / total));
    }
    Tensor bin = Tensor::like(gt);
    for (std::size_t k = 0; k < gt.size(); ++k) bin[k] = gt[k] >= 0.5 ? 1.0 : 0.0;

    const detail::Region regions[4] = {{0, cy, 0, cx}, {0, cy, cx, w}, {cy, h, 0, cx}, {cy, h, cx, w}};
    const double area = static_cast<double>(h) * w;
    double q = 0.0;
    for (const auto& r : regions) {
        if (r.count() == 0) continue;
        q += (r.count() / area) * detail::region_ssim(pred, bin, r);
    }
    return q;
}

inline double s_measure_combine(double s_obj, double s_reg, double alpha = 0.5) {
    return alpha * s_obj + (1.0 - alpha) * s_reg;
}

/// Structure measure with the usual degenerate cases: an empty ground truth
/// scores 1 - mean(pred), a full one scores mean(pred).
inline double s_measure(const Tensor& pred, const Tensor& gt, double alpha = 0.5) {
    require_same_shape(pred, gt, "s_measure");
    double fg = 0.0;
    for (double g : gt.values()) fg += g >= 0.5;
    const double y = fg / static_cast<double>(gt.size());
    double q;
    if (y == 0.0) {
        q = 1.0 - pred.mean();
    } else if (y == 1.0) {
        q = pred.mean();
    } else {
        q = s_measure_combine(s_object(pred, gt), s_region(pred, gt), alpha);
    }
    return std::max(q, 0.0);
}

inline double mean_s_measure(const std::vector<Tensor>& preds, const std::vector<Tensor>& gts, double alpha = 0.5) {
    detail::check_aligned(preds, gts, "mean_s_measure");
    if (preds.empty()) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) s += s_measure(preds[i], gts[i], alpha);
    return s / static_cast<double>(preds.size());
}

// ---------------------------------------------------------------------------
// Edge F-measure at optimal dataset scale / optimal image scale.
// ---------------------------------------------------------------------------

/// Zhang-Suen thinning of a binary 1 x H x W map.
inline Tensor skeletonize(const Tensor& bin) {
    require_map(bin, "skeletonize");
    const int h = bin.height(), w = bin.width();
    std::vector<unsigned char> img(static_cast<std::size_t>(h * w));
    for (std::size_t k = 0; k < img.size(); ++k) img[k] = bin[k] >= 0.5;
    auto at = [&](int y, int x) -> int {
        return (y < 0 || y >= h || x < 0 || x >= w) ? 0 : img[static_cast<std::size_t>(y * w + x)];
    };
    std::vector<int> remove;
    bool changed = true;
    while (changed) {
        changed = false;
        for (int pass = 0; pass < 2; ++pass) {
            remove.clear();
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    if (!at(y, x)) continue;
                    // Neighbours P2..P9 clockwise from north.
                    const int p[8] = {at(y - 1, x), at(y - 1, x + 1), at(y, x + 1), at(y + 1, x + 1),
                                      at(y + 1, x), at(y + 1, x - 1), at(y, x - 1), at(y - 1, x - 1)};
                    int b = 0, a = 0;
                    for (int i = 0; i < 8; ++i) {
                        b += p[i];
                        a += (p[i] == 0 && p[(i + 1) % 8] == 1);
                    }
                    if (b < 2 || b > 6 || a != 1) continue;
                    if (pass == 0 && (p[0] * p[2] * p[4] != 0 || p[2] * p[4] * p[6] != 0)) continue;
                    if (pass == 1 && (p[0] * p[2] * p[6] != 0 || p[0] * p[4] * p[6] != 0)) continue;
                    remove.push_back(y * w + x);
                }
            }
            for (int i : remove) img[static_cast<std::size_t>(i)] = 0;
            changed = changed || !remove.empty();
        }
    }
    Tensor out(1, h, w);
    for (std::size_t k = 0; k < img.size(); ++k) out[k] = img[k];
    return out;
}

/// Square (Chebyshev) dilation by `radius` pixels.
inline Tensor dilate(const Tensor& bin, int radius) {
    if (radius <= 0) return bin;
    const int h = bin.height(), w = bin.width();
    Tensor rows(1, h, w), out(1, h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double m = 0.0;
            for (int dx = -radius; dx <= radius && m == 0.0; ++dx) {
                const int xx = x + dx;
                if (xx >= 0 && xx < w && bin(0, y, xx) >= 0.5) m = 1.0;
            }
            rows(0, y, x) = m;
        }
    }
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double m = 0.0;
            for (int dy = -radius; dy <= radius && m == 0.0; ++dy) {
                const int yy = y + dy;
                if (yy >= 0 && yy < h && rows(0, yy, x) >= 0.5) m = 1.0;
            }
            out(0, y, x) = m;
        }
    }
    return out;
}

/// Match counts of one thinned prediction against one ground truth.
struct EdgeCounts {
    double matched_pred = 0;
    double n_pred = 0;
    double matched_gt = 0;
    double n_gt = 0;

    EdgeCounts& operator+=(const EdgeCounts& o) {
        matched_pred += o.matched_pred;
        n_pred += o.n_pred;
        matched_gt += o.matched_gt;
        n_gt += o.n_gt;
        return *this;
    }

    double precision() const { return detail::precision_of(matched_pred, n_pred); }
    double recall() const { return detail::recall_of(matched_gt, n_gt); }
    double f() const { return f_beta(precision(), recall(), 1.0); }
};

/// Binarizes at t, thins, and matches against `gt` within `tolerance` px
/// by dilation: a predicted pixel is correct if a GT pixel lies within the
/// tolerance window, and a GT pixel is recovered if a predicted one does.
inline EdgeCounts edge_counts(const Tensor& pred, const Tensor& gt_bin, const Tensor& gt_dilated, double t,
                              int tolerance) {
    Tensor bin = Tensor::like(pred);
    for (std::size_t k = 0; k < pred.size(); ++k) bin[k] = is_foreground(pred[k], t) ? 1.0 : 0.0;
    const Tensor thin = skeletonize(bin);
    const Tensor thin_dil = dilate(thin, tolerance);
    EdgeCounts c;
    for (std::size_t k = 0; k < pred.size(); ++k) {
        const bool p = thin[k] >= 0.5, g = gt_bin[k] >= 0.5;
        c.n_pred += p;
        c.matched_pred += p && gt_dilated[k] >= 0.5;
        c.n_gt += g;
        c.matched_gt += g && thin_dil[k] >= 0.5;
    }
    return c;
}

struct EdgeScores {
    double ods = 0.0;
    double ois = 0.0;
    double ods_threshold = 0.0;
};

/// ODS: best mean F (beta = 1) over the dataset at one shared threshold.
/// OIS: mean over images of each image's best F on the same grid. Both
/// average per-image F, so OIS >= ODS holds for every dataset.
inline EdgeScores edge_ods_ois(const std::vector<Tensor>& preds, const std::vector<Tensor>& gts, int tolerance_px = 1,
                               int n_thresholds = kDefaultThresholds) {
    detail::check_aligned(preds, gts, "edge_ods_ois");
    if (tolerance_px < 0) throw ConfigError("edge tolerance must be >= 0");
    const auto grid = threshold_grid(n_thresholds);
    std::vector<double> f_sum(grid.size(), 0.0);
    double ois_sum = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        require_map(preds[i], "edge_ods_ois");
        Tensor gt_bin = Tensor::like(gts[i]);
        for (std::size_t k = 0; k < gt_bin.size(); ++k) gt_bin[k] = gts[i][k] >= 0.5 ? 1.0 : 0.0;
        const Tensor gt_dil = dilate(gt_bin, tolerance_px);
        double best = 0.0;
        for (std::size_t j = 0; j < grid.size(); ++j) {
            const double f = edge_counts(preds[i], gt_bin, gt_dil, grid[j], tolerance_px).f();
            f_sum[j] += f;
            best = std::max(best, f);
        }
        ois_sum += best;
    }
    EdgeScores s;
    if (preds.empty()) return s;
    const double n = static_cast<double>(preds.size());
    for (std::size_t j = 0; j < grid.size(); ++j) {
        if (f_sum[j] / n > s.ods) {
            s.ods = f_sum[j] / n;
            s.ods_threshold = grid[j];
        }
    }
    s.ois = ois_sum / n;
    return s;
}

// ---------------------------------------------------------------------------
// Report files
// ---------------------------------------------------------------------------

/// "key: value" lines, one per metric.
inline void write_report(const std::filesystem::path& path, const std::vector<std::pair<std::string, double>>& kv) {
    std::ofstream out(path);
    if (!out) throw StorageError("cannot write report '" + path.string() + "'");
    out.precision(10);
    for (const auto& [k, v] : kv) out << k << ": " << v << '\n';
}

inline std::vector<std::pair<std::string, double>> read_report(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot read report '" + path.string() + "'");
    std::vector<std::pair<std::string, double>> kv;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto colon = line.find(':');
        if (colon == std::string::npos) {
            throw ParseError(path.string() + ":" + std::to_string(lineno) + ": expected 'key: value'");
        }
        try {
            kv.emplace_back(line.substr(0, colon), std::stod(line.substr(colon + 1)));
        } catch (const std::exception&) {
            throw ParseError(path.string() + ":" + std::to_string(lineno) + ": bad number");
        }
    }
    return kv;
}

inline void write_pr_csv(const std::filesystem::path& path, const PRCurve& c) {
    std::ofstream out(path);
    if (!out) throw StorageError("cannot write '" + path.string() + "'");
    out.precision(10);
    out << "threshold,precision,recall\n";
    for (std::size_t i = 0; i < c.thresholds.size(); ++i) {
        out << c.thresholds[i] << ',' << c.precision[i] << ',' << c.recall[i] << '\n';
    }
}

/// Parses a "threshold,precision,recall" CSV; errors carry the line number.
inline PRCurve read_pr_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot read '" + path.string() + "'");
    PRCurve c;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (lineno == 1 && line.rfind("threshold", 0) == 0) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> v;
        while (std::getline(ss, cell, ',')) {
            try {
                std::size_t used = 0;
                v.push_back(std::stod(cell, &used));
                if (used != cell.size()) throw std::invalid_argument(cell);
            } catch (const std::exception&) {
                throw ParseError(path.string() + ":" + std::to_string(lineno) + ": bad number '" + cell + "'");
            }
        }
        if (v.size() != 3) {
            throw ParseError(path.string() + ":" + std::to_string(lineno) + ": expected 3 columns, got " +
                             std::to_string(v.size()));
        }
        if (v[1] < 0 || v[1] > 1 || v[2] < 0 || v[2] > 1) {
            throw ParseError(path.string() + ":" + std::to_string(lineno) + ": precision/recall outside [0,1]");
        }
        c.thresholds.push_back(v[0]);
        c.precision.push_back(v[1]);
        c.recall.push_back(v[2]);
    }
    if (c.thresholds.empty()) throw ParseError(path.string() + ": no PR points");
    return c;
}

}  // namespace mlsal
