#pragma once

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <cmath>
#include <filesystem>
#include <string>

#include "mlsal/errors.hpp"
#include "mlsal/tensor.hpp"

namespace mlsal::io {

/// Reads an image as 3 x H x W RGB in [0,1]. Grayscale inputs are replicated.
inline Tensor read_image(const std::filesystem::path& path) {
    cv::Mat m = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (m.empty()) throw IngestionError("cannot read image '" + path.string() + "'");
    Tensor t(3, m.rows, m.cols);
    for (int y = 0; y < m.rows; ++y) {
        const auto* row = m.ptr<cv::Vec3b>(y);
        for (int x = 0; x < m.cols; ++x) {
            // OpenCV stores BGR.
            for (int c = 0; c < 3; ++c) t(c, y, x) = row[x][2 - c] / 255.0;
        }
    }
    return t;
}

/// Reads a single-channel map in [0,1]; color files are converted to gray.
inline Tensor read_map(const std::filesystem::path& path) {
    cv::Mat m = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
    if (m.empty()) throw IngestionError("cannot read map '" + path.string() + "'");
    Tensor t(1, m.rows, m.cols);
    for (int y = 0; y < m.rows; ++y) {
        const auto* row = m.ptr<unsigned char>(y);
        for (int x = 0; x < m.cols; ++x) t(0, y, x) = row[x] / 255.0;
    }
    return t;
}

inline unsigned char to_byte(double v) {
    return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

/// Writes a [0,1] map as 8-bit grayscale PNG with values round(255 p).
inline void write_map(const std::filesystem::path& path, const Tensor& map) {
    require_map(map, "write_map");
    cv::Mat m(map.height(), map.width(), CV_8UC1);
    for (int y = 0; y < map.height(); ++y) {
        auto* row = m.ptr<unsigned char>(y);
        for (int x = 0; x < map.width(); ++x) row[x] = to_byte(map(0, y, x));
    }
    if (!cv::imwrite(path.string(), m)) throw StorageError("cannot write '" + path.string() + "'");
}

inline void write_image(const std::filesystem::path& path, const Tensor& rgb) {
    if (rgb.rank() != 3 || rgb.channels() != 3) throw ShapeError("write_image expects 3xHxW");
    cv::Mat m(rgb.height(), rgb.width(), CV_8UC3);
    for (int y = 0; y < rgb.height(); ++y) {
        auto* row = m.ptr<cv::Vec3b>(y);
        for (int x = 0; x < rgb.width(); ++x) {
            for (int c = 0; c < 3; ++c) row[x][2 - c] = to_byte(rgb(c, y, x));
        }
    }
    if (!cv::imwrite(path.string(), m)) throw StorageError("cannot write '" + path.string() + "'");
}

}  // namespace mlsal::io
