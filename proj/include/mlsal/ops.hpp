#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <vector>

#include "mlsal/autograd.hpp"
#include "mlsal/tensor.hpp"

namespace mlsal::ops {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

/// Clamp used by every probability-space loss.
inline constexpr double kProbEpsilon = 1e-7;

namespace detail {

struct ConvGeometry {
    int cin, h, w, k, dilation, pad;
    int rows() const { return cin * k * k; }
    int cols() const { return h * w; }
};

inline void im2col(const double* in, const ConvGeometry& g, double* cols) {
    const int hw = g.h * g.w;
    for (int c = 0; c < g.cin; ++c) {
        const double* src = in + static_cast<std::ptrdiff_t>(c) * hw;
        for (int ky = 0; ky < g.k; ++ky) {
            for (int kx = 0; kx < g.k; ++kx) {
                double* dst = cols + static_cast<std::ptrdiff_t>((c * g.k + ky) * g.k + kx) * hw;
                const int oy = ky * g.dilation - g.pad;
                const int ox = kx * g.dilation - g.pad;
                const int x0 = std::max(0, -ox);
                const int x1 = std::min(g.w, g.w - ox);
                for (int y = 0; y < g.h; ++y) {
                    double* row = dst + static_cast<std::ptrdiff_t>(y) * g.w;
                    const int sy = y + oy;
                    if (sy < 0 || sy >= g.h || x0 >= x1) {
                        std::fill(row, row + g.w, 0.0);
                        continue;
                    }
                    std::fill(row, row + x0, 0.0);
                    std::copy(src + sy * g.w + x0 + ox, src + sy * g.w + x1 + ox, row + x0);
                    std::fill(row + x1, row + g.w, 0.0);
                }
            }
        }
    }
}

inline void col2im_add(const double* cols, const ConvGeometry& g, double* out) {
    const int hw = g.h * g.w;
    for (int c = 0; c < g.cin; ++c) {
        double* dst = out + static_cast<std::ptrdiff_t>(c) * hw;
        for (int ky = 0; ky < g.k; ++ky) {
            for (int kx = 0; kx < g.k; ++kx) {
                const double* src = cols + static_cast<std::ptrdiff_t>((c * g.k + ky) * g.k + kx) * hw;
                const int oy = ky * g.dilation - g.pad;
                const int ox = kx * g.dilation - g.pad;
                const int x0 = std::max(0, -ox);
                const int x1 = std::min(g.w, g.w - ox);
                for (int y = 0; y < g.h; ++y) {
                    const int sy = y + oy;
                    if (sy < 0 || sy >= g.h) continue;
                    const double* row = src + static_cast<std::ptrdiff_t>(y) * g.w;
                    double* drow = dst + sy * g.w + ox;
                    for (int x = x0; x < x1; ++x) drow[x] += row[x];
                }
            }
        }
    }
}

}  // namespace detail

/// Same-size 2-D convolution, stride 1. `weight` is [cout, cin, k, k] with odd
/// k; `bias` is [cout]. Padding is dilation * (k - 1) / 2.
inline Var conv2d(const Var& x, const Var& weight, const Var& bias, int dilation = 1) {
    const Tensor& in = x.value();
    const Tensor& wt = weight.value();
    if (in.rank() != 3) throw ShapeError("conv2d: input must be CxHxW, got " + shape_string(in.shape()));
    if (wt.rank() != 4 || wt.dim(2) != wt.dim(3) || wt.dim(2) % 2 == 0) {
        throw ShapeError("conv2d: weight must be [cout,cin,k,k] with odd k, got " + shape_string(wt.shape()));
    }
    if (wt.dim(1) != in.channels()) {
        throw ShapeError("conv2d: weight expects " + std::to_string(wt.dim(1)) + " input channels, got " +
                         std::to_string(in.channels()));
    }
    const int cout = wt.dim(0);
    const int k = wt.dim(2);
    const detail::ConvGeometry g{in.channels(), in.height(), in.width(), k, dilation, dilation * (k - 1) / 2};
    const bool pointwise = (k == 1);

    auto cols = std::make_shared<Buffer>();
    const double* col_ptr = in.data();
    if (!pointwise) {
        cols->resize(static_cast<std::size_t>(g.rows()) * g.cols());
        detail::im2col(in.data(), g, cols->data());
        col_ptr = cols->data();
    }

    Tensor out(cout, g.h, g.w);
    MatMap o(out.data(), cout, g.cols());
    ConstMatMap wm(wt.data(), cout, g.rows());
    ConstMatMap cm(col_ptr, g.rows(), g.cols());
    o.noalias() = wm * cm;
    Eigen::Map<const Eigen::VectorXd> b(bias.value().data(), cout);
    o.colwise() += b;

    return make_op(std::move(out), {x, weight, bias}, [g, cols, cout, pointwise](Node& self) {
        Node& xn = *self.inputs[0];
        Node& wn = *self.inputs[1];
        Node& bn = *self.inputs[2];
        ConstMatMap dout(self.grad.data(), cout, g.cols());
        const double* col_ptr = pointwise ? xn.value.data() : cols->data();
        ConstMatMap cm(col_ptr, g.rows(), g.cols());
        if (wn.requires_grad) {
            MatMap dw(wn.grad_buffer().data(), cout, g.rows());
            dw.noalias() += dout * cm.transpose();
        }
        if (bn.requires_grad) {
            Eigen::Map<Eigen::VectorXd> db(bn.grad_buffer().data(), cout);
            db += dout.rowwise().sum();
        }
        if (xn.requires_grad) {
            ConstMatMap wm(wn.value.data(), cout, g.rows());
            if (pointwise) {
                MatMap dx(xn.grad_buffer().data(), g.rows(), g.cols());
                dx.noalias() += wm.transpose() * dout;
            } else {
                RowMatrix dcols = wm.transpose() * dout;
                detail::col2im_add(dcols.data(), g, xn.grad_buffer().data());
            }
        }
    });
}

/// Transposed convolution with kernel 2 and stride 2 (exact x2 upsampling).
/// `weight` is [cin, cout, 2, 2]; `bias` is [cout].
inline Var conv_transpose2x2(const Var& x, const Var& weight, const Var& bias) {
    const Tensor& in = x.value();
    const Tensor& wt = weight.value();
    if (in.rank() != 3 || wt.rank() != 4 || wt.dim(0) != in.channels() || wt.dim(2) != 2 || wt.dim(3) != 2) {
        throw ShapeError("conv_transpose2x2: input " + shape_string(in.shape()) + " weight " +
                         shape_string(wt.shape()));
    }
    const int cin = in.channels(), cout = wt.dim(1), h = in.height(), w = in.width();
    const int hw = h * w;
    ConstMatMap wm(wt.data(), cin, cout * 4);
    ConstMatMap im(in.data(), cin, hw);
    RowMatrix y = wm.transpose() * im;  // [cout*4, hw]

    Tensor out(cout, 2 * h, 2 * w);
    const double* b = bias.value().data();
    for (int co = 0; co < cout; ++co) {
        for (int a = 0; a < 2; ++a) {
            for (int bb = 0; bb < 2; ++bb) {
                const double* row = y.data() + static_cast<std::ptrdiff_t>(co * 4 + a * 2 + bb) * hw;
                for (int iy = 0; iy < h; ++iy) {
                    for (int ix = 0; ix < w; ++ix) out(co, 2 * iy + a, 2 * ix + bb) = row[iy * w + ix] + b[co];
                }
            }
        }
    }

    return make_op(std::move(out), {x, weight, bias}, [cin, cout, h, w](Node& self) {
        Node& xn = *self.inputs[0];
        Node& wn = *self.inputs[1];
        Node& bn = *self.inputs[2];
        const int hw = h * w;
        RowMatrix dy(cout * 4, hw);
        for (int co = 0; co < cout; ++co) {
            for (int a = 0; a < 2; ++a) {
                for (int bb = 0; bb < 2; ++bb) {
                    double* row = dy.data() + static_cast<std::ptrdiff_t>(co * 4 + a * 2 + bb) * hw;
                    for (int iy = 0; iy < h; ++iy) {
                        for (int ix = 0; ix < w; ++ix) row[iy * w + ix] = self.grad(co, 2 * iy + a, 2 * ix + bb);
                    }
                }
            }
        }
        if (wn.requires_grad) {
            MatMap dw(wn.grad_buffer().data(), cin, cout * 4);
            ConstMatMap im(xn.value.data(), cin, hw);
            dw.noalias() += im * dy.transpose();
        }
        if (bn.requires_grad) {
            double* db = bn.grad_buffer().data();
            for (int co = 0; co < cout; ++co) db[co] += dy.middleRows(co * 4, 4).sum();
        }
        if (xn.requires_grad) {
            ConstMatMap wm(wn.value.data(), cin, cout * 4);
            MatMap dx(xn.grad_buffer().data(), cin, hw);
            dx.noalias() += wm * dy;
        }
    });
}

/// 2x2 max pooling with stride 2. Ties resolve to the first element in
/// row-major order.
inline Var max_pool2(const Var& x) {
    const Tensor& in = x.value();
    if (in.rank() != 3 || in.height() % 2 || in.width() % 2) {
        throw ShapeError("max_pool2: needs even spatial size, got " + shape_string(in.shape()));
    }
    const int c = in.channels(), h = in.height() / 2, w = in.width() / 2;
    Tensor out(c, h, w);
    auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
    std::size_t o = 0;
    for (int ch = 0; ch < c; ++ch) {
        for (int y = 0; y < h; ++y) {
            for (int xx = 0; xx < w; ++xx, ++o) {
                std::size_t best = (static_cast<std::size_t>(ch) * in.height() + 2 * y) * in.width() + 2 * xx;
                for (int dy = 0; dy < 2; ++dy) {
                    for (int dx = 0; dx < 2; ++dx) {
                        std::size_t idx = (static_cast<std::size_t>(ch) * in.height() + 2 * y + dy) * in.width() + 2 * xx + dx;
                        if (in[idx] > in[best]) best = idx;
                    }
                }
                out[o] = in[best];
                (*argmax)[o] = best;
            }
        }
    }
    return make_op(std::move(out), {x}, [argmax](Node& self) {
        Node& xn = *self.inputs[0];
        if (!xn.requires_grad) return;
        Tensor& g = xn.grad_buffer();
        for (std::size_t i = 0; i < argmax->size(); ++i) g[(*argmax)[i]] += self.grad[i];
    });
}

inline Var relu(const Var& x) {
    Tensor out = x.value();
    for (double& v : out.storage()) v = v > 0.0 ? v : 0.0;
    return make_op(std::move(out), {x}, [](Node& self) {
        Node& xn = *self.inputs[0];
        Tensor& g = xn.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (xn.value[i] > 0.0) g[i] += self.grad[i];
        }
    });
}

inline double logistic(double v) { return 1.0 / (1.0 + std::exp(-v)); }

inline Var sigmoid(const Var& x) {
    Tensor out = x.value();
    for (double& v : out.storage()) v = logistic(v);
    return make_op(std::move(out), {x}, [](Node& self) {
        Node& xn = *self.inputs[0];
        Tensor& g = xn.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double s = self.value[i];
            g[i] += self.grad[i] * s * (1.0 - s);
        }
    });
}

inline Var add(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "add");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
    return make_op(std::move(out), {a, b}, [](Node& self) {
        for (auto& in : self.inputs) {
            if (!in->requires_grad) continue;
            Tensor& g = in->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

/// Channel-wise concatenation of CxHxW tensors with equal spatial size.
inline Var concat(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const int h = parts[0].value().height(), w = parts[0].value().width();
    int channels = 0;
    for (const auto& p : parts) {
        if (p.value().rank() != 3 || p.value().height() != h || p.value().width() != w) {
            throw ShapeError("concat: spatial mismatch " + shape_string(p.value().shape()));
        }
        channels += p.value().channels();
    }
    Tensor out(channels, h, w);
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p.value().storage().begin(), p.value().storage().end(), out.storage().begin() + static_cast<std::ptrdiff_t>(off));
        off += p.value().size();
    }
    return make_op(std::move(out), parts, [](Node& self) {
        std::size_t off = 0;
        for (auto& in : self.inputs) {
            const std::size_t n = in->value.size();
            if (in->requires_grad) {
                Tensor& g = in->grad_buffer();
                for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[off + i];
            }
            off += n;
        }
    });
}

namespace detail {

struct LerpTap {
    int i0, i1;
    double w0, w1;
};

// Half-pixel-centre sampling, edge-clamped.
inline std::vector<LerpTap> lerp_taps(int in, int out) {
    std::vector<LerpTap> taps(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
        double src = (o + 0.5) * scale - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(in - 1));
        const int i0 = static_cast<int>(std::floor(src));
        const int i1 = std::min(i0 + 1, in - 1);
        const double f = src - i0;
        taps[static_cast<std::size_t>(o)] = {i0, i1, 1.0 - f, f};
    }
    return taps;
}

}  // namespace detail

/// Bilinear resampling of a plain tensor (no gradient tracking).
inline Tensor resize_bilinear(const Tensor& in, int out_h, int out_w) {
    if (in.height() == out_h && in.width() == out_w) return in;
    const auto ty = detail::lerp_taps(in.height(), out_h);
    const auto tx = detail::lerp_taps(in.width(), out_w);
    Tensor out(in.channels(), out_h, out_w);
    for (int c = 0; c < in.channels(); ++c) {
        for (int y = 0; y < out_h; ++y) {
            const auto& a = ty[static_cast<std::size_t>(y)];
            for (int x = 0; x < out_w; ++x) {
                const auto& b = tx[static_cast<std::size_t>(x)];
                out(c, y, x) = a.w0 * (b.w0 * in(c, a.i0, b.i0) + b.w1 * in(c, a.i0, b.i1)) +
                               a.w1 * (b.w0 * in(c, a.i1, b.i0) + b.w1 * in(c, a.i1, b.i1));
            }
        }
    }
    return out;
}

inline Var upsample_bilinear(const Var& x, int out_h, int out_w) {
    const Tensor& in = x.value();
    if (in.height() == out_h && in.width() == out_w) return x;
    Tensor out = resize_bilinear(in, out_h, out_w);
    const int ih = in.height(), iw = in.width();
    return make_op(std::move(out), {x}, [ih, iw, out_h, out_w](Node& self) {
        Node& xn = *self.inputs[0];
        const auto ty = detail::lerp_taps(ih, out_h);
        const auto tx = detail::lerp_taps(iw, out_w);
        Tensor& g = xn.grad_buffer();
        for (int c = 0; c < self.value.channels(); ++c) {
            for (int y = 0; y < out_h; ++y) {
                const auto& a = ty[static_cast<std::size_t>(y)];
                for (int xx = 0; xx < out_w; ++xx) {
                    const auto& b = tx[static_cast<std::size_t>(xx)];
                    const double d = self.grad(c, y, xx);
                    g(c, a.i0, b.i0) += d * a.w0 * b.w0;
                    g(c, a.i0, b.i1) += d * a.w0 * b.w1;
                    g(c, a.i1, b.i0) += d * a.w1 * b.w0;
                    g(c, a.i1, b.i1) += d * a.w1 * b.w1;
                }
            }
        }
    });
}

/// Mean binary cross-entropy of `pred` against a fixed target in [0,1].
/// Predictions are clamped to [eps, 1 - eps] in the forward value; the
/// backward pass evaluates the unclamped derivative at the clamped point so
/// saturated heads still receive a corrective gradient.
inline Var bce(const Var& pred, const Tensor& target) {
    require_same_shape(pred.value(), target, "bce");
    const Tensor& p = pred.value();
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double q = std::clamp(p[i], kProbEpsilon, 1.0 - kProbEpsilon);
        const double g = target[i];
        total -= g * std::log(q) + (1.0 - g) * std::log(1.0 - q);
    }
    const double n = static_cast<double>(p.size());
    return make_op(Tensor::scalar(total / n), {pred}, [target, n](Node& self) {
        Node& pn = *self.inputs[0];
        Tensor& gp = pn.grad_buffer();
        const double up = self.grad[0] / n;
        for (std::size_t i = 0; i < gp.size(); ++i) {
            const double q = std::clamp(pn.value[i], kProbEpsilon, 1.0 - kProbEpsilon);
            gp[i] += up * (q - target[i]) / (q * (1.0 - q));
        }
    });
}

/// Mean squared difference between two maps of equal shape.
inline Var mse(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "mse");
    double total = 0.0;
    for (std::size_t i = 0; i < a.value().size(); ++i) {
        const double d = a.value()[i] - b.value()[i];
        total += d * d;
    }
    const double n = static_cast<double>(a.value().size());
    return make_op(Tensor::scalar(total / n), {a, b}, [n](Node& self) {
        Node& an = *self.inputs[0];
        Node& bn = *self.inputs[1];
        const double up = 2.0 * self.grad[0] / n;
        for (std::size_t i = 0; i < an.value.size(); ++i) {
            const double d = up * (an.value[i] - bn.value[i]);
            if (an.requires_grad) an.grad_buffer()[i] += d;
            if (bn.requires_grad) bn.grad_buffer()[i] -= d;
        }
    });
}

/// sum_i coeffs[i] * terms[i] over scalar Vars, accumulated left to right.
inline Var weighted_sum(const std::vector<double>& coeffs, const std::vector<Var>& terms) {
    if (coeffs.size() != terms.size()) throw ShapeError("weighted_sum: arity mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < terms.size(); ++i) total += coeffs[i] * terms[i].value().item();
    return make_op(Tensor::scalar(total), terms, [coeffs](Node& self) {
        for (std::size_t i = 0; i < self.inputs.size(); ++i) {
            if (self.inputs[i]->requires_grad) self.inputs[i]->grad_buffer()[0] += coeffs[i] * self.grad[0];
        }
    });
}

inline Var scalar_constant(double v) { return Var::constant(Tensor::scalar(v)); }

}  // namespace mlsal::ops
