#include "lowpass/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <stdexcept>

namespace lowpass {

Spectrum::Spectrum(std::size_t height, std::size_t width) : h_(height), w_(width), c_(height * width) {}

long signed_frequency(std::size_t k, std::size_t n) {
    const auto kk = static_cast<long>(k);
    const auto nn = static_cast<long>(n);
    return kk < nn - nn / 2 ? kk : kk - nn;
}

std::size_t wrap_frequency(long k, std::size_t n) {
    const auto nn = static_cast<long>(n);
    return static_cast<std::size_t>(((k % nn) + nn) % nn);
}

Complex& Spectrum::centered(long ky, long kx) { return (*this)(wrap_frequency(ky, h_), wrap_frequency(kx, w_)); }

const Complex& Spectrum::centered(long ky, long kx) const {
    return (*this)(wrap_frequency(ky, h_), wrap_frequency(kx, w_));
}

bool Spectrum::is_conjugate_symmetric(double tol) const {
    for (std::size_t ky = 0; ky < h_; ++ky) {
        for (std::size_t kx = 0; kx < w_; ++kx) {
            const auto& a = (*this)(ky, kx);
            const auto& b = (*this)((h_ - ky) % h_, (w_ - kx) % w_);
            if (std::abs(a - std::conj(b)) > tol) return false;
        }
    }
    return true;
}

double Spectrum::total_power() const {
    double p = 0.0;
    for (const auto& c : c_) p += std::norm(c);
    return p;
}

std::vector<double> Spectrum::magnitudes() const {
    std::vector<double> m(c_.size());
    std::transform(c_.begin(), c_.end(), m.begin(), [](const Complex& c) { return std::abs(c); });
    return m;
}

Spectrum& Spectrum::operator+=(const Spectrum& other) {
    if (other.h_ != h_ || other.w_ != w_) throw ShapeError("Spectrum::operator+=: extent mismatch");
    for (std::size_t i = 0; i < c_.size(); ++i) c_[i] += other.c_[i];
    return *this;
}

Spectrum& Spectrum::operator*=(Complex s) {
    for (auto& c : c_) c *= s;
    return *this;
}

namespace {

bool is_power_of_two(std::size_t n) { return n && !(n & (n - 1)); }

void fft_radix2(std::span<Complex> a, bool inverse) {
    const std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    const double sign = inverse ? 1.0 : -1.0;
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = sign * 2.0 * std::numbers::pi / static_cast<double>(len);
        for (std::size_t i = 0; i < n; i += len) {
            for (std::size_t k = 0; k < len / 2; ++k) {
                // exact twiddles; repeated multiplication drifts at the 1e-15 level
                const Complex w = std::polar(1.0, ang * static_cast<double>(k));
                const Complex u = a[i + k];
                const Complex v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
            }
        }
    }
}

void dft_direct(std::span<Complex> a, bool inverse) {
    const std::size_t n = a.size();
    const double sign = inverse ? 1.0 : -1.0;
    std::vector<Complex> out(n);
    for (std::size_t k = 0; k < n; ++k) {
        Complex acc = 0.0;
        for (std::size_t t = 0; t < n; ++t) {
            const double ang = sign * 2.0 * std::numbers::pi * static_cast<double>((k * t) % n) / static_cast<double>(n);
            acc += a[t] * std::polar(1.0, ang);
        }
        out[k] = acc;
    }
    std::copy(out.begin(), out.end(), a.begin());
}

void transform2(std::vector<Complex>& c, std::size_t h, std::size_t w, bool inverse) {
    for (std::size_t y = 0; y < h; ++y) fft(std::span<Complex>(c.data() + y * w, w), inverse);
    std::vector<Complex> col(h);
    for (std::size_t x = 0; x < w; ++x) {
        for (std::size_t y = 0; y < h; ++y) col[y] = c[y * w + x];
        fft(col, inverse);
        for (std::size_t y = 0; y < h; ++y) c[y * w + x] = col[y];
    }
}

void require_plane(const std::string& op, const Tensor& x) {
    if (x.rank() < 2) throw ShapeError(op + ": need at least 2 axes, got " + to_string(x.shape()));
    for (std::size_t i = 0; i + 2 < x.rank(); ++i) {
        if (x.extent(i) != 1) throw ShapeError(op, i, x.extent(i), 1);
    }
}

std::size_t plane_count(const Tensor& x) {
    if (x.rank() < 2) throw ShapeError("plane_count: need at least 2 axes, got " + to_string(x.shape()));
    return x.size() / (x.shape()[x.rank() - 2] * x.shape().back());
}

Spectrum plane_dft(const double* p, std::size_t h, std::size_t w) {
    Spectrum s(h, w);
    auto c = s.coeffs();
    for (std::size_t i = 0; i < h * w; ++i) c[i] = p[i];
    std::vector<Complex> buf(c.begin(), c.end());
    transform2(buf, h, w, false);
    std::copy(buf.begin(), buf.end(), c.begin());
    return s;
}

}  // namespace

void fft(std::span<Complex> data, bool inverse) {
    if (data.size() <= 1) return;
    if (is_power_of_two(data.size())) {
        fft_radix2(data, inverse);
    } else {
        dft_direct(data, inverse);
    }
}

Spectrum dft2(const Tensor& image) {
    require_plane("dft2", image);
    const std::size_t h = image.shape()[image.rank() - 2];
    const std::size_t w = image.shape().back();
    return plane_dft(image.data().data(), h, w);
}

std::vector<Complex> idft2_complex(const Spectrum& spectrum) {
    std::vector<Complex> buf(spectrum.coeffs().begin(), spectrum.coeffs().end());
    transform2(buf, spectrum.height(), spectrum.width(), true);
    const double scale = 1.0 / static_cast<double>(spectrum.height() * spectrum.width());
    for (auto& c : buf) c *= scale;
    return buf;
}

Tensor idft2(const Spectrum& spectrum) {
    const auto buf = idft2_complex(spectrum);
    Tensor out({spectrum.height(), spectrum.width()});
    for (std::size_t i = 0; i < buf.size(); ++i) out[i] = buf[i].real();
    return out;
}

std::vector<Spectrum> plane_spectra(const Tensor& x) {
    const std::size_t planes = plane_count(x);
    const std::size_t h = x.shape()[x.rank() - 2];
    const std::size_t w = x.shape().back();
    std::vector<Spectrum> out;
    out.reserve(planes);
    for (std::size_t p = 0; p < planes; ++p) out.push_back(plane_dft(x.data().data() + p * h * w, h, w));
    return out;
}

std::size_t FrequencyBudget::cutoff() const {
    if (extent == 0 || downsampling == 0) throw std::invalid_argument("FrequencyBudget: extent and D must be positive");
    const std::size_t twice_d = 2 * downsampling;
    return (extent + twice_d - 1) / twice_d - 1;
}

Spectrum lowpass(const Spectrum& spectrum, std::size_t u) {
    Spectrum out = spectrum;
    const auto lim = static_cast<long>(u);
    for (std::size_t ky = 0; ky < out.height(); ++ky) {
        const bool keep_y = std::labs(signed_frequency(ky, out.height())) <= lim;
        for (std::size_t kx = 0; kx < out.width(); ++kx) {
            if (!keep_y || std::labs(signed_frequency(kx, out.width())) > lim) out(ky, kx) = 0.0;
        }
    }
    return out;
}

Tensor lowpass(const Tensor& x, std::size_t u) {
    const std::size_t planes = plane_count(x);
    const std::size_t h = x.shape()[x.rank() - 2];
    const std::size_t w = x.shape().back();
    if (u > std::min(h, w) / 2) {
        throw std::invalid_argument("lowpass: cutoff " + std::to_string(u) + " exceeds floor(N/2) for shape " +
                                    to_string(x.shape()));
    }
    Tensor out(x.shape());
    for (std::size_t p = 0; p < planes; ++p) {
        const auto s = lowpass(plane_dft(x.data().data() + p * h * w, h, w), u);
        const auto back = idft2_complex(s);
        for (std::size_t i = 0; i < h * w; ++i) out[p * h * w + i] = back[i].real();
    }
    return out;
}

Tensor highpass(const Tensor& x, std::size_t u) { return x - lowpass(x, u); }

Tensor decimate(const Tensor& x, std::size_t s) {
    if (x.rank() < 2) throw ShapeError("decimate: need at least 2 axes, got " + to_string(x.shape()));
    if (s == 0) throw std::invalid_argument("decimate: factor must be positive");
    const std::size_t ah = x.rank() - 2, aw = x.rank() - 1;
    const std::size_t h = x.shape()[ah], w = x.shape()[aw];
    if (h % s) throw ShapeError("decimate: axis " + std::to_string(ah) + " extent " + std::to_string(h) +
                                " not divisible by " + std::to_string(s));
    if (w % s) throw ShapeError("decimate: axis " + std::to_string(aw) + " extent " + std::to_string(w) +
                                " not divisible by " + std::to_string(s));
    Shape shape = x.shape();
    shape[ah] = h / s;
    shape[aw] = w / s;
    Tensor out(shape);
    const std::size_t planes = plane_count(x), ho = h / s, wo = w / s;
    for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t i = 0; i < ho; ++i) {
            for (std::size_t j = 0; j < wo; ++j) out[(p * ho + i) * wo + j] = x[(p * h + s * i) * w + s * j];
        }
    }
    return out;
}

Tensor upsample_zero(const Tensor& x, std::size_t s) {
    if (x.rank() < 2) throw ShapeError("upsample_zero: need at least 2 axes, got " + to_string(x.shape()));
    if (s == 0) throw std::invalid_argument("upsample_zero: factor must be positive");
    const std::size_t ah = x.rank() - 2, aw = x.rank() - 1;
    const std::size_t h = x.shape()[ah], w = x.shape()[aw];
    Shape shape = x.shape();
    shape[ah] = h * s;
    shape[aw] = w * s;
    Tensor out(shape);
    const std::size_t planes = plane_count(x);
    for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < w; ++j) out[(p * h * s + s * i) * w * s + s * j] = x[(p * h + i) * w + j];
        }
    }
    return out;
}

Spectrum mask_spectrum(const Tensor& x) { return dft2(positive_mask(x)); }

Spectrum circular_convolve(const Spectrum& a, const Spectrum& b) {
    if (a.height() != b.height() || a.width() != b.width()) {
        throw ShapeError("circular_convolve: spectra of different extents");
    }
    const std::size_t h = a.height(), w = a.width();
    Spectrum out(h, w);
    for (std::size_t ky = 0; ky < h; ++ky) {
        for (std::size_t kx = 0; kx < w; ++kx) {
            Complex acc = 0.0;
            for (std::size_t jy = 0; jy < h; ++jy) {
                const std::size_t ry = (ky + h - jy) % h;
                for (std::size_t jx = 0; jx < w; ++jx) acc += a(jy, jx) * b(ry, (kx + w - jx) % w);
            }
            out(ky, kx) = acc;
        }
    }
    return out;
}

Spectrum relu_via_frequency(const Tensor& x) {
    require_plane("relu_via_frequency", x);
    const Spectrum m = mask_spectrum(x);
    const Spectrum xs = dft2(x);
    Spectrum z = circular_convolve(m, xs);
    z *= 1.0 / static_cast<double>(m.height() * m.width());
    return z;
}

DominanceReport dominance_check_magnitudes(std::span<const double> magnitude, std::size_t height, std::size_t width,
                                           std::size_t u) {
    if (magnitude.size() != height * width) throw ShapeError("dominance_check: magnitude field size mismatch");
    if (u > std::min(height, width) / 2) {
        throw std::invalid_argument("dominance_check: cutoff " + std::to_string(u) + " exceeds floor(N/2)");
    }
    const std::size_t wy = std::min(2 * u + 1, height);
    const std::size_t wx = std::min(2 * u + 1, width);
    // window rows start at -u; translate (ty, tx) shifts that start
    const std::size_t y0 = wrap_frequency(-static_cast<long>(u), height);
    const std::size_t x0 = wrap_frequency(-static_cast<long>(u), width);

    // row-wise circular window sums, then column-wise
    std::vector<double> rows(height * width);
    for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t tx = 0; tx < width; ++tx) {
            double s = 0.0;
            for (std::size_t b = 0; b < wx; ++b) s += magnitude[y * width + (tx + b) % width];
            rows[y * width + tx] = s;
        }
    }
    DominanceReport r;
    r.window_halfwidth = u;
    r.max_translate_mass = 0.0;
    for (std::size_t ty = 0; ty < height; ++ty) {
        for (std::size_t tx = 0; tx < width; ++tx) {
            double s = 0.0;
            for (std::size_t a = 0; a < wy; ++a) s += rows[((ty + a) % height) * width + tx];
            r.max_translate_mass = std::max(r.max_translate_mass, s);
            if (ty == y0 && tx == x0) r.dominant_mass = s;
        }
    }
    // ties within rounding of the transform count as dominant
    r.is_dominant = r.dominant_mass >= r.max_translate_mass * (1.0 - 1e-12);
    return r;
}

DominanceReport dominance_check(const Spectrum& spectrum, std::size_t u) {
    const auto m = spectrum.magnitudes();
    return dominance_check_magnitudes(m, spectrum.height(), spectrum.width(), u);
}

DominanceReport dominance_check(const Tensor& v, std::size_t u) {
    const auto spectra = plane_spectra(v);
    const std::size_t h = spectra.front().height(), w = spectra.front().width();
    std::vector<double> field(h * w, 0.0);
    for (const auto& s : spectra) {
        const auto c = s.coeffs();
        for (std::size_t i = 0; i < field.size(); ++i) field[i] += std::abs(c[i]);
    }
    return dominance_check_magnitudes(field, h, w, u);
}

std::vector<double> convolve_measures(std::span<const double> f, std::span<const double> g) {
    if (f.size() != g.size()) throw ShapeError("convolve_measures: length mismatch");
    for (double v : f) {
        if (v < 0.0) throw std::invalid_argument("convolve_measures: f has a negative entry");
    }
    for (double v : g) {
        if (v < 0.0) throw std::invalid_argument("convolve_measures: g has a negative entry");
    }
    const std::size_t n = f.size();
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t t = 0; t < n; ++t) out[i] += g[t] * f[(i + n - t) % n];
    }
    return out;
}

std::vector<double> interval_masses(std::span<const double> f, std::size_t length) {
    const std::size_t n = f.size();
    std::vector<double> out(n, 0.0);
    for (std::size_t x = 0; x < n; ++x) {
        for (std::size_t i = 0; i < length; ++i) out[x] += f[(x + i) % n];
    }
    return out;
}

std::vector<double> radial_spectrum(const Tensor& x) {
    const auto spectra = plane_spectra(x);
    const std::size_t h = spectra.front().height(), w = spectra.front().width();
    auto bin_of = [&](std::size_t ky, std::size_t kx) {
        const auto fy = static_cast<double>(signed_frequency(ky, h));
        const auto fx = static_cast<double>(signed_frequency(kx, w));
        return static_cast<std::size_t>(std::lround(std::sqrt(fy * fy + fx * fx)));
    };
    std::size_t bins = 0;
    for (std::size_t ky = 0; ky < h; ++ky) {
        for (std::size_t kx = 0; kx < w; ++kx) bins = std::max(bins, bin_of(ky, kx) + 1);
    }
    std::vector<double> power(bins, 0.0);
    for (const auto& s : spectra) {
        for (std::size_t ky = 0; ky < h; ++ky) {
            for (std::size_t kx = 0; kx < w; ++kx) power[bin_of(ky, kx)] += std::norm(s(ky, kx));
        }
    }
    return power;
}

long fold_frequency(long k, std::size_t n, std::size_t s) {
    if (s == 0 || n % s) throw std::invalid_argument("fold_frequency: factor must divide the extent");
    const std::size_t m = n / s;
    return signed_frequency(wrap_frequency(k, m), m);
}

Tensor cosine_mode(std::size_t height, std::size_t width, long ky, long kx, double phase) {
    Tensor out({height, width});
    for (std::size_t i = 0; i < height; ++i) {
        for (std::size_t j = 0; j < width; ++j) {
            // reduce the integer phase first so large k stay exact
            const auto ny = static_cast<long>(height), nx = static_cast<long>(width);
            const long py = (ky * static_cast<long>(i)) % ny;
            const long px = (kx * static_cast<long>(j)) % nx;
            const double t = static_cast<double>(py) / static_cast<double>(ny) +
                             static_cast<double>(px) / static_cast<double>(nx);
            out.at(i, j) = std::cos(2.0 * std::numbers::pi * t + phase);
        }
    }
    return out;
}

void write_spectrum_csv(std::ostream& os, const Spectrum& spectrum) {
    os << "# lowpass-lab spectrum v1\n";
    os << "k_y,k_x,re,im\n";
    os.precision(17);
    for (std::size_t ky = 0; ky < spectrum.height(); ++ky) {
        for (std::size_t kx = 0; kx < spectrum.width(); ++kx) {
            const auto& c = spectrum(ky, kx);
            os << signed_frequency(ky, spectrum.height()) << ',' << signed_frequency(kx, spectrum.width()) << ','
               << c.real() << ',' << c.imag() << '\n';
        }
    }
}

void write_radial_csv(std::ostream& os, std::span<const double> power) {
    os << "# lowpass-lab radial-spectrum v1\n";
    os << "bin,power\n";
    os.precision(17);
    for (std::size_t i = 0; i < power.size(); ++i) os << i << ',' << power[i] << '\n';
}

}  // namespace lowpass
