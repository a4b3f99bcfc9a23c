#pragma once

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "mlsal/errors.hpp"
#include "mlsal/metrics.hpp"

namespace mlsal {

struct LabeledCurve {
    std::string label;
    PRCurve curve;
};

/// Precision (y) against recall (x) on [0,1]^2, one colored polyline per
/// curve plus a legend. Returns a BGR image.
inline cv::Mat render_pr_plot(const std::vector<LabeledCurve>& curves, int width = 640, int height = 480) {
    if (curves.empty()) throw ValidationError("plot needs at least one curve");
    static const std::vector<cv::Scalar> palette{{200, 80, 30}, {40, 40, 220}, {40, 160, 40},
                                                 {160, 40, 160}, {20, 140, 200}, {90, 90, 90}};
    const int left = 60, right = 20, top = 20, bottom = 50;
    const int pw = width - left - right, ph = height - top - bottom;
    cv::Mat img(height, width, CV_8UC3, cv::Scalar(255, 255, 255));
    auto to_px = [&](double r, double p) {
        return cv::Point(left + static_cast<int>(std::lround(r * pw)), top + static_cast<int>(std::lround((1.0 - p) * ph)));
    };

    const auto font = cv::FONT_HERSHEY_SIMPLEX;
    for (int i = 0; i <= 10; ++i) {
        const double v = i / 10.0;
        cv::line(img, to_px(v, 0), to_px(v, 1), cv::Scalar(230, 230, 230), 1);
        cv::line(img, to_px(0, v), to_px(1, v), cv::Scalar(230, 230, 230), 1);
        if (i % 2 == 0) {
            char buf[8];
            std::snprintf(buf, sizeof buf, "%.1f", v);
            cv::putText(img, buf, to_px(v, 0) + cv::Point(-10, 18), font, 0.4, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
            cv::putText(img, buf, to_px(0, v) + cv::Point(-30, 4), font, 0.4, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
        }
    }
    cv::rectangle(img, to_px(0, 1), to_px(1, 0), cv::Scalar(0, 0, 0), 1);
    cv::putText(img, "Recall", cv::Point(left + pw / 2 - 25, height - 12), font, 0.5, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
    cv::putText(img, "Precision", cv::Point(4, top - 6), font, 0.5, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);

    for (std::size_t c = 0; c < curves.size(); ++c) {
        const auto& pr = curves[c].curve;
        std::vector<cv::Point> pts;
        for (std::size_t i = 0; i < pr.recall.size(); ++i) pts.push_back(to_px(pr.recall[i], pr.precision[i]));
        const cv::Scalar color = palette[c % palette.size()];
        if (pts.size() == 1) {
            cv::circle(img, pts[0], 3, color, cv::FILLED, cv::LINE_AA);
        } else {
            cv::polylines(img, pts, false, color, 2, cv::LINE_AA);
        }
        // Legend in the lower-left corner, where PR curves rarely go.
        const cv::Point anchor(left + 12, top + ph - 14 - 20 * static_cast<int>(curves.size() - 1 - c));
        cv::line(img, anchor, anchor + cv::Point(24, 0), color, 2, cv::LINE_AA);
        cv::putText(img, curves[c].label, anchor + cv::Point(30, 4), font, 0.45, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
    }
    return img;
}

inline void write_pr_plot(const std::filesystem::path& out, const std::vector<LabeledCurve>& curves) {
    const cv::Mat img = render_pr_plot(curves);
    if (!cv::imwrite(out.string(), img)) throw StorageError("cannot write plot '" + out.string() + "'");
}

}  // namespace mlsal
