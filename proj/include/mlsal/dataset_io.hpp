#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mlsal/data.hpp"
#include "mlsal/image_io.hpp"
#include "mlsal/ops.hpp"

namespace mlsal {

namespace fs = std::filesystem;

namespace detail {

inline bool is_image_file(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp";
}

inline std::map<std::string, fs::path> index_dir(const fs::path& dir, bool allow_subdirs) {
    std::map<std::string, fs::path> out;
    if (!fs::is_directory(dir)) return out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if ((e.is_regular_file() && is_image_file(e.path())) || (allow_subdirs && e.is_directory())) {
            out[e.is_directory() ? e.path().filename().string() : e.path().stem().string()] = e.path();
        }
    }
    return out;
}

inline Tensor resize_map(const Tensor& m, int size, bool thin_structures) {
    if (m.height() == size && m.width() == size) return m;
    if (thin_structures && m.height() == m.width() && m.height() % size == 0) {
        return downsample_max(m, m.height() / size);
    }
    return ops::resize_bilinear(m, size, size);
}

// Multi-annotator edge labels: a directory of maps averaged into one.
inline Tensor read_target(const fs::path& p) {
    if (!fs::is_directory(p)) return io::read_map(p);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(p)) {
        if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
    }
    if (files.empty()) throw IngestionError("annotation directory '" + p.string() + "' holds no maps");
    std::sort(files.begin(), files.end());
    Tensor acc = io::read_map(files[0]);
    for (std::size_t i = 1; i < files.size(); ++i) {
        Tensor t = io::read_map(files[i]);
        require_same_shape(acc, t, "annotator maps");
        for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += t[k];
    }
    for (double& v : acc.storage()) v /= static_cast<double>(files.size());
    return acc;
}

}  // namespace detail

/// Reads `root/images/*` and `root/targets/*` paired by basename, sorted by
/// id. Images and targets are resized to `input_size`; saliency masks are
/// binarized at 0.5. Edge targets may be a directory of annotator maps.
inline std::vector<SampleRecord> load_dataset(const fs::path& root, SampleKind kind, int input_size) {
    if (!fs::is_directory(root)) throw IngestionError("dataset root '" + root.string() + "' does not exist");
    const auto images = detail::index_dir(root / "images", false);
    const auto targets = detail::index_dir(root / "targets", kind == SampleKind::edge);

    std::vector<std::string> orphans;
    for (const auto& [id, _] : images) {
        if (!targets.count(id)) orphans.push_back(id + " (no target)");
    }
    for (const auto& [id, _] : targets) {
        if (!images.count(id)) orphans.push_back(id + " (no image)");
    }
    if (!orphans.empty()) {
        std::string msg = "unmatched files in '" + root.string() + "':";
        for (const auto& o : orphans) msg += " " + o;
        throw IngestionError(msg);
    }

    std::vector<SampleRecord> out;
    for (const auto& [id, img_path] : images) {
        SampleRecord r;
        r.id = id;
        r.kind = kind;
        r.image = ops::resize_bilinear(io::read_image(img_path), input_size, input_size);
        Tensor t = detail::read_target(targets.at(id));
        if (kind == SampleKind::saliency) {
            t = detail::resize_map(t, input_size, false);
            for (double& v : t.storage()) v = v >= 0.5 ? 1.0 : 0.0;
        } else {
            t = detail::resize_map(t, input_size, true);
        }
        r.target = std::move(t);
        out.push_back(std::move(r));
    }
    return out;
}

/// Writes records as `root/images/<id>.png` and `root/targets/<id>.png`.
inline void write_dataset(const std::vector<SampleRecord>& records, const fs::path& root) {
    std::error_code ec;
    fs::create_directories(root / "images", ec);
    fs::create_directories(root / "targets", ec);
    if (ec) throw StorageError("cannot create '" + root.string() + "': " + ec.message());
    for (const auto& r : records) {
        io::write_image(root / "images" / (r.id + ".png"), r.image);
        io::write_map(root / "targets" / (r.id + ".png"), r.target);
    }
}

/// `out/saliency` and `out/edge` dataset trees.
inline void write_synthetic(const SyntheticDataset& ds, const fs::path& out) {
    write_dataset(ds.saliency, out / "saliency");
    write_dataset(ds.edge, out / "edge");
}

}  // namespace mlsal
