#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mlsal/errors.hpp"

namespace mlsal {

/// Cache-line aligned storage. Eigen's vectorized reductions peel a
/// different number of leading elements depending on the buffer address, so
/// fixed alignment is what makes repeated runs bitwise identical.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};

    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

    template <class U>
    bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

/// Dense row-major array of doubles with up to four dimensions.
///
/// Feature maps are rank 3 (channels x height x width). Probability maps and
/// masks are rank 3 with a single channel. Convolution weights are rank 4.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape, double fill = 0.0) : shape_(std::move(shape)) {
        for (int d : shape_) {
            if (d < 0) throw ShapeError("negative tensor dimension");
        }
        data_.assign(count(shape_), fill);
    }

    Tensor(int channels, int height, int width, double fill = 0.0)
        : Tensor(std::vector<int>{channels, height, width}, fill) {}

    static Tensor scalar(double v) { return Tensor(std::vector<int>{1}, v); }

    static Tensor like(const Tensor& other, double fill = 0.0) { return Tensor(other.shape_, fill); }

    const std::vector<int>& shape() const noexcept { return shape_; }
    int rank() const noexcept { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    // Rank-3 accessors.
    int channels() const { return dim(0); }
    int height() const { return dim(1); }
    int width() const { return dim(2); }
    int plane() const { return dim(1) * dim(2); }

    double& operator()(int c, int y, int x) {
        return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
    }
    double operator()(int c, int y, int x) const {
        return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
    }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double item() const {
        if (data_.size() != 1) throw ShapeError("item() on tensor with " + std::to_string(size()) + " elements");
        return data_[0];
    }

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }
    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }
    Buffer& storage() noexcept { return data_; }
    const Buffer& storage() const noexcept { return data_; }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    /// Returns channel `c` as a 1 x H x W tensor.
    Tensor channel(int c) const {
        Tensor out(1, height(), width());
        std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(c) * plane(), plane(), out.data_.begin());
        return out;
    }

    double sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }
    double mean() const { return data_.empty() ? 0.0 : sum() / static_cast<double>(data_.size()); }
    double min() const { return *std::min_element(data_.begin(), data_.end()); }
    double max() const { return *std::max_element(data_.begin(), data_.end()); }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    bool same_shape(const Tensor& o) const noexcept { return shape_ == o.shape_; }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

    static std::size_t count(const std::vector<int>& shape) {
        std::size_t n = 1;
        for (int d : shape) n *= static_cast<std::size_t>(d);
        return n;
    }

private:
    std::vector<int> shape_;
    Buffer data_;
};

/// C x H x W activations.
using FeatureMap = Tensor;
/// 1 x H x W map with values in [0,1].
using ProbabilityMap = Tensor;

inline std::string shape_string(const std::vector<int>& shape) {
    std::ostringstream os;
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    return os.str();
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(what) + ": shape " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
    }
}

inline void require_map(const Tensor& t, const char* what) {
    if (t.rank() != 3 || t.channels() != 1) {
        throw ShapeError(std::string(what) + ": expected 1xHxW map, got " + shape_string(t.shape()));
    }
}

}  // namespace mlsal
