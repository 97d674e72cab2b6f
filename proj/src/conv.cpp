#include "lowpass/conv.hpp"

#include <string>

namespace lowpass {

std::string_view to_string(Padding p) {
    return p == Padding::same_circular ? "same-circular" : "same-zero";
}

Padding padding_from_string(std::string_view s) {
    if (s == "same-circular") return Padding::same_circular;
    if (s == "same-zero") return Padding::same_zero;
    throw std::invalid_argument("unknown padding mode '" + std::string(s) + "'");
}

namespace {

constexpr std::ptrdiff_t kOutside = -1;

struct ConvGeometry {
    std::size_t batch, cin, cout, h, w, kh, kw, ho, wo, stride;
    // source_row[i * kh + p] is the input row read by output row i, kernel row p
    std::vector<std::ptrdiff_t> source_row, source_col;
};

std::vector<std::ptrdiff_t> source_indices(std::size_t n_out, std::size_t n_in, std::size_t kn, std::size_t stride,
                                           Padding padding) {
    std::vector<std::ptrdiff_t> idx(n_out * kn);
    const auto half = static_cast<std::ptrdiff_t>(kn / 2);
    const auto n = static_cast<std::ptrdiff_t>(n_in);
    for (std::size_t i = 0; i < n_out; ++i) {
        for (std::size_t p = 0; p < kn; ++p) {
            std::ptrdiff_t src = static_cast<std::ptrdiff_t>(stride * i + p) - half;
            if (padding == Padding::same_circular) {
                src = ((src % n) + n) % n;
            } else if (src < 0 || src >= n) {
                src = kOutside;
            }
            idx[i * kn + p] = src;
        }
    }
    return idx;
}

ConvGeometry geometry(const std::string& op, const Shape& xs, const Shape& ks, std::size_t stride, Padding padding) {
    if (xs.size() != 4) throw ShapeError(op + ": input must be 4-D [B,C,H,W], got " + to_string(xs));
    if (ks.size() != 4) throw ShapeError(op + ": kernel must be 4-D [Cout,Cin,kh,kw], got " + to_string(ks));
    if (xs[1] != ks[1]) throw ShapeError(op, 1, xs[1], ks[1]);
    if (ks[2] % 2 == 0) throw ShapeError(op + ": kernel height " + std::to_string(ks[2]) + " must be odd");
    if (ks[3] % 2 == 0) throw ShapeError(op + ": kernel width " + std::to_string(ks[3]) + " must be odd");
    if (xs[2] < ks[2]) throw ShapeError(op + ": axis 2 (height) extent " + std::to_string(xs[2]) +
                                        " smaller than kernel height " + std::to_string(ks[2]));
    if (xs[3] < ks[3]) throw ShapeError(op + ": axis 3 (width) extent " + std::to_string(xs[3]) +
                                        " smaller than kernel width " + std::to_string(ks[3]));
    if (stride == 0) throw std::invalid_argument(op + ": stride must be positive");
    ConvGeometry g{xs[0], xs[1], ks[0], xs[2], xs[3], ks[2], ks[3],
                   (xs[2] + stride - 1) / stride, (xs[3] + stride - 1) / stride, stride, {}, {}};
    g.source_row = source_indices(g.ho, g.h, g.kh, stride, padding);
    g.source_col = source_indices(g.wo, g.w, g.kw, stride, padding);
    return g;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& k, std::size_t stride, Padding padding) {
    const auto g = geometry("conv2d", x.shape(), k.shape(), stride, padding);
    Tensor out({g.batch, g.cout, g.ho, g.wo});
    const double* xd = x.data().data();
    const double* kd = k.data().data();
    double* od = out.data().data();
    for (std::size_t b = 0; b < g.batch; ++b) {
        for (std::size_t o = 0; o < g.cout; ++o) {
            double* oplane = od + (b * g.cout + o) * g.ho * g.wo;
            for (std::size_t c = 0; c < g.cin; ++c) {
                const double* xplane = xd + (b * g.cin + c) * g.h * g.w;
                const double* kplane = kd + (o * g.cin + c) * g.kh * g.kw;
                for (std::size_t p = 0; p < g.kh; ++p) {
                    for (std::size_t q = 0; q < g.kw; ++q) {
                        const double kv = kplane[p * g.kw + q];
                        if (kv == 0.0) continue;
                        for (std::size_t i = 0; i < g.ho; ++i) {
                            const auto r = g.source_row[i * g.kh + p];
                            if (r == kOutside) continue;
                            const double* xrow = xplane + static_cast<std::size_t>(r) * g.w;
                            double* orow = oplane + i * g.wo;
                            for (std::size_t j = 0; j < g.wo; ++j) {
                                const auto s = g.source_col[j * g.kw + q];
                                if (s != kOutside) orow[j] += kv * xrow[s];
                            }
                        }
                    }
                }
            }
        }
    }
    return out;
}

Tensor conv2d_adjoint(const Tensor& grad_out, const Tensor& k, const Shape& input_shape, std::size_t stride,
                      Padding padding) {
    const auto g = geometry("conv2d_adjoint", input_shape, k.shape(), stride, padding);
    require_same_shape("conv2d_adjoint", Shape{g.batch, g.cout, g.ho, g.wo}, grad_out.shape());
    Tensor gx(input_shape);
    const double* gd = grad_out.data().data();
    const double* kd = k.data().data();
    double* xd = gx.data().data();
    for (std::size_t b = 0; b < g.batch; ++b) {
        for (std::size_t o = 0; o < g.cout; ++o) {
            const double* gplane = gd + (b * g.cout + o) * g.ho * g.wo;
            for (std::size_t c = 0; c < g.cin; ++c) {
                double* xplane = xd + (b * g.cin + c) * g.h * g.w;
                const double* kplane = kd + (o * g.cin + c) * g.kh * g.kw;
                for (std::size_t p = 0; p < g.kh; ++p) {
                    for (std::size_t q = 0; q < g.kw; ++q) {
                        const double kv = kplane[p * g.kw + q];
                        if (kv == 0.0) continue;
                        for (std::size_t i = 0; i < g.ho; ++i) {
                            const auto r = g.source_row[i * g.kh + p];
                            if (r == kOutside) continue;
                            double* xrow = xplane + static_cast<std::size_t>(r) * g.w;
                            const double* grow = gplane + i * g.wo;
                            for (std::size_t j = 0; j < g.wo; ++j) {
                                const auto s = g.source_col[j * g.kw + q];
                                if (s != kOutside) xrow[s] += kv * grow[j];
                            }
                        }
                    }
                }
            }
        }
    }
    return gx;
}

Tensor conv2d_kernel_grad(const Tensor& grad_out, const Tensor& x, const Shape& kernel_shape, std::size_t stride,
                          Padding padding) {
    const auto g = geometry("conv2d_kernel_grad", x.shape(), kernel_shape, stride, padding);
    require_same_shape("conv2d_kernel_grad", Shape{g.batch, g.cout, g.ho, g.wo}, grad_out.shape());
    Tensor gk(kernel_shape);
    const double* gd = grad_out.data().data();
    const double* xd = x.data().data();
    double* kd = gk.data().data();
    for (std::size_t b = 0; b < g.batch; ++b) {
        for (std::size_t o = 0; o < g.cout; ++o) {
            const double* gplane = gd + (b * g.cout + o) * g.ho * g.wo;
            for (std::size_t c = 0; c < g.cin; ++c) {
                const double* xplane = xd + (b * g.cin + c) * g.h * g.w;
                double* kplane = kd + (o * g.cin + c) * g.kh * g.kw;
                for (std::size_t p = 0; p < g.kh; ++p) {
                    for (std::size_t q = 0; q < g.kw; ++q) {
                        double acc = 0.0;
                        for (std::size_t i = 0; i < g.ho; ++i) {
                            const auto r = g.source_row[i * g.kh + p];
                            if (r == kOutside) continue;
                            const double* xrow = xplane + static_cast<std::size_t>(r) * g.w;
                            const double* grow = gplane + i * g.wo;
                            for (std::size_t j = 0; j < g.wo; ++j) {
                                const auto s = g.source_col[j * g.kw + q];
                                if (s != kOutside) acc += grow[j] * xrow[s];
                            }
                        }
                        kplane[p * g.kw + q] += acc;
                    }
                }
            }
        }
    }
    return gk;
}

}  // namespace lowpass
