#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "mlsal/errors.hpp"
#include "mlsal/tensor.hpp"

namespace mlsal {

/// Self-describing container of named double arrays plus string metadata.
///
/// Layout (host byte order, which is little-endian on every supported target):
///   "MLSALAR1" | u32 version | u32 n_meta | {u32 klen, key, u64 vlen, value}*
///   | u32 n_arrays | {u32 nlen, name, u32 rank, i32 dims[rank], f64 data[]}*
/// Arrays keep insertion order so two archives written from the same state
/// are byte-identical.
class Archive {
public:
    static constexpr char kMagic[8] = {'M', 'L', 'S', 'A', 'L', 'A', 'R', '1'};
    static constexpr std::uint32_t kVersion = 1;

    void set_meta(const std::string& key, std::string value) { meta_[key] = std::move(value); }

    bool has_meta(const std::string& key) const { return meta_.count(key) > 0; }

    const std::string& meta(const std::string& key) const {
        auto it = meta_.find(key);
        if (it == meta_.end()) throw LoadError("archive is missing metadata '" + key + "'");
        return it->second;
    }

    void put(const std::string& name, const Tensor& t) {
        auto it = index_.find(name);
        if (it != index_.end()) {
            arrays_[it->second].second = t;
            return;
        }
        index_[name] = arrays_.size();
        arrays_.emplace_back(name, t);
    }

    bool contains(const std::string& name) const { return index_.count(name) > 0; }

    const Tensor& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw LoadError("archive is missing array '" + name + "'");
        return arrays_[it->second].second;
    }

    const std::vector<std::pair<std::string, Tensor>>& arrays() const noexcept { return arrays_; }
    const std::map<std::string, std::string>& metadata() const noexcept { return meta_; }

    void save(const std::filesystem::path& path) const {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw StorageError("cannot open '" + path.string() + "' for writing");
        out.write(kMagic, sizeof(kMagic));
        write_pod(out, kVersion);
        write_pod(out, static_cast<std::uint32_t>(meta_.size()));
        for (const auto& [k, v] : meta_) {
            write_pod(out, static_cast<std::uint32_t>(k.size()));
            out.write(k.data(), static_cast<std::streamsize>(k.size()));
            write_pod(out, static_cast<std::uint64_t>(v.size()));
            out.write(v.data(), static_cast<std::streamsize>(v.size()));
        }
        write_pod(out, static_cast<std::uint32_t>(arrays_.size()));
        for (const auto& [name, t] : arrays_) {
            write_pod(out, static_cast<std::uint32_t>(name.size()));
            out.write(name.data(), static_cast<std::streamsize>(name.size()));
            write_pod(out, static_cast<std::uint32_t>(t.rank()));
            for (int d : t.shape()) write_pod(out, static_cast<std::int32_t>(d));
            out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
        }
        if (!out) throw StorageError("write failed for '" + path.string() + "'");
    }

    static Archive load(const std::filesystem::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw LoadError("cannot open archive '" + path.string() + "'");
        char magic[8];
        in.read(magic, sizeof(magic));
        if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
            throw LoadError("'" + path.string() + "' is not an mlsal archive");
        }
        const auto version = read_pod<std::uint32_t>(in, path);
        if (version != kVersion) throw LoadError("unsupported archive version " + std::to_string(version));
        Archive a;
        const auto n_meta = read_pod<std::uint32_t>(in, path);
        for (std::uint32_t i = 0; i < n_meta; ++i) {
            std::string k = read_string(in, read_pod<std::uint32_t>(in, path), path);
            std::string v = read_string(in, read_pod<std::uint64_t>(in, path), path);
            a.meta_[k] = std::move(v);
        }
        const auto n_arrays = read_pod<std::uint32_t>(in, path);
        for (std::uint32_t i = 0; i < n_arrays; ++i) {
            std::string name = read_string(in, read_pod<std::uint32_t>(in, path), path);
            const auto rank = read_pod<std::uint32_t>(in, path);
            if (rank > 8) throw LoadError("corrupt archive '" + path.string() + "': bad rank");
            std::vector<int> shape(rank);
            for (auto& d : shape) {
                d = read_pod<std::int32_t>(in, path);
                if (d < 0) throw LoadError("corrupt archive '" + path.string() + "': negative dim");
            }
            Tensor t(shape);
            in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
            if (!in) throw LoadError("corrupt archive '" + path.string() + "': truncated array '" + name + "'");
            a.put(name, t);
        }
        return a;
    }

private:
    template <typename T>
    static void write_pod(std::ostream& out, T v) {
        out.write(reinterpret_cast<const char*>(&v), sizeof(T));
    }

    template <typename T>
    static T read_pod(std::istream& in, const std::filesystem::path& path) {
        T v{};
        in.read(reinterpret_cast<char*>(&v), sizeof(T));
        if (!in) throw LoadError("corrupt archive '" + path.string() + "': truncated");
        return v;
    }

    static std::string read_string(std::istream& in, std::uint64_t n, const std::filesystem::path& path) {
        if (n > (1ULL << 32)) throw LoadError("corrupt archive '" + path.string() + "': oversized string");
        std::string s(n, '\0');
        in.read(s.data(), static_cast<std::streamsize>(n));
        if (!in) throw LoadError("corrupt archive '" + path.string() + "': truncated");
        return s;
    }

    std::map<std::string, std::string> meta_;
    std::vector<std::pair<std::string, Tensor>> arrays_;
    std::map<std::string, std::size_t> index_;
};

}  // namespace mlsal
