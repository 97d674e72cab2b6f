#pragma once

// Independent reference implementations used by the tests. Nothing here calls
// into the library's conv or transform code.

#include <cmath>
#include <complex>
#include <functional>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "lowpass/tensor.hpp"

namespace oracle {

using lowpass::Shape;
using lowpass::Tensor;

// Six nested loops over b, o, c, p, q and the output grid.
inline Tensor conv2d(const Tensor& x, const Tensor& k, std::size_t stride, bool circular) {
    const std::size_t B = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
    const std::size_t O = k.extent(0), kh = k.extent(2), kw = k.extent(3);
    const long ph = static_cast<long>(kh / 2), pw = static_cast<long>(kw / 2);
    const std::size_t Ho = (H + stride - 1) / stride, Wo = (W + stride - 1) / stride;
    Tensor out({B, O, Ho, Wo});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t o = 0; o < O; ++o)
            for (std::size_t i = 0; i < Ho; ++i)
                for (std::size_t j = 0; j < Wo; ++j) {
                    double acc = 0.0;
                    for (std::size_t c = 0; c < C; ++c)
                        for (std::size_t p = 0; p < kh; ++p)
                            for (std::size_t q = 0; q < kw; ++q) {
                                long y = static_cast<long>(i * stride) + static_cast<long>(p) - ph;
                                long xx = static_cast<long>(j * stride) + static_cast<long>(q) - pw;
                                if (circular) {
                                    y = ((y % static_cast<long>(H)) + static_cast<long>(H)) % static_cast<long>(H);
                                    xx = ((xx % static_cast<long>(W)) + static_cast<long>(W)) % static_cast<long>(W);
                                } else if (y < 0 || xx < 0 || y >= static_cast<long>(H) || xx >= static_cast<long>(W)) {
                                    continue;
                                }
                                acc += x.at(b, c, static_cast<std::size_t>(y), static_cast<std::size_t>(xx)) *
                                       k.at(o, c, p, q);
                            }
                    out.at(b, o, i, j) = acc;
                }
    return out;
}

// X[ky,kx] = sum_n x[n] exp(-2 pi i <k, n> / N), four nested loops.
inline std::vector<std::complex<double>> dft2(const Tensor& x, std::size_t H, std::size_t W) {
    std::vector<std::complex<double>> X(H * W);
    for (std::size_t ky = 0; ky < H; ++ky)
        for (std::size_t kx = 0; kx < W; ++kx) {
            std::complex<double> acc = 0.0;
            for (std::size_t n = 0; n < H; ++n)
                for (std::size_t m = 0; m < W; ++m) {
                    double ang = -2.0 * std::numbers::pi *
                                 (static_cast<double>(ky * n) / static_cast<double>(H) +
                                  static_cast<double>(kx * m) / static_cast<double>(W));
                    acc += x[n * W + m] * std::polar(1.0, ang);
                }
            X[ky * W + kx] = acc;
        }
    return X;
}

// Central differences of a scalar function, one coordinate at a time.
inline Tensor finite_difference(const std::function<double(const Tensor&)>& f, const Tensor& x, double h = 1e-5) {
    Tensor g(x.shape());
    Tensor xp = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = x[i];
        xp[i] = v + h;
        const double fp = f(xp);
        xp[i] = v - h;
        const double fm = f(xp);
        xp[i] = v;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline double relative_error(const Tensor& a, const Tensor& b) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += (a[i] - b[i]) * (a[i] - b[i]);
        den += b[i] * b[i];
    }
    return std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
}

// Dense matrix of the circular stride-1 convolution acting on one [1,C,H,W] item.
inline Eigen::MatrixXd conv_matrix(const Tensor& k, std::size_t H, std::size_t W, bool circular = true) {
    const std::size_t C = k.extent(1), O = k.extent(0);
    const std::size_t n = C * H * W;
    Eigen::MatrixXd M(O * H * W, n);
    Tensor e({1, C, H, W});
    for (std::size_t j = 0; j < n; ++j) {
        e[j] = 1.0;
        Tensor col = conv2d(e, k, 1, circular);
        for (std::size_t i = 0; i < col.size(); ++i) M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = col[i];
        e[j] = 0.0;
    }
    return M;
}

inline double largest_singular_value(const Eigen::MatrixXd& M) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(M);
    return svd.singularValues()(0);
}

// Mass of every cyclic window [x, x+len) of f, summed term by term.
inline std::vector<double> window_masses(const std::vector<double>& f, std::size_t len) {
    const std::size_t n = f.size();
    std::vector<double> m(n, 0.0);
    for (std::size_t x = 0; x < n; ++x)
        for (std::size_t t = 0; t < len; ++t) m[x] += f[(x + t) % n];
    return m;
}

}  // namespace oracle
