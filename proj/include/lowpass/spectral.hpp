#pragma once

#include <complex>
#include <iosfwd>
#include <span>
#include <vector>

#include "lowpass/tensor.hpp"

namespace lowpass {

using Complex = std::complex<double>;

/// 2-D DFT coefficients in standard layout: index (0,0) is DC, index k stands
/// for frequency k for k < ceil(N/2) and k - N otherwise.
class Spectrum {
public:
    Spectrum() = default;
    Spectrum(std::size_t height, std::size_t width);

    std::size_t height() const noexcept { return h_; }
    std::size_t width() const noexcept { return w_; }

    Complex& operator()(std::size_t ky, std::size_t kx) { return c_[ky * w_ + kx]; }
    const Complex& operator()(std::size_t ky, std::size_t kx) const { return c_[ky * w_ + kx]; }

    /// Signed-frequency accessor; ky, kx may be any integers (taken mod N).
    Complex& centered(long ky, long kx);
    const Complex& centered(long ky, long kx) const;

    std::span<Complex> coeffs() noexcept { return c_; }
    std::span<const Complex> coeffs() const noexcept { return c_; }

    /// X[-k] == conj(X[k]) for every k, within tol.
    bool is_conjugate_symmetric(double tol = 1e-9) const;
    double total_power() const;
    std::vector<double> magnitudes() const;

    Spectrum& operator+=(const Spectrum& other);
    Spectrum& operator*=(Complex s);

private:
    std::size_t h_ = 0, w_ = 0;
    std::vector<Complex> c_;
};

/// Map a standard-layout index k in [0, n) to its signed frequency.
long signed_frequency(std::size_t k, std::size_t n);
/// Map any signed frequency to its standard-layout index.
std::size_t wrap_frequency(long k, std::size_t n);

/// In-place unnormalized transform. Radix-2 Cooley-Tukey for power-of-two
/// lengths, direct O(n^2) sum otherwise.
void fft(std::span<Complex> data, bool inverse);

/// Unnormalized forward transform of a single plane (rank 2, or rank > 2 with
/// unit leading extents).
Spectrum dft2(const Tensor& image);
/// Inverse transform with the 1/(H*W) factor; returns the real part as [H,W].
Tensor idft2(const Spectrum& spectrum);
/// Inverse transform keeping complex values, used for symmetry checks.
std::vector<Complex> idft2_complex(const Spectrum& spectrum);

/// One spectrum per trailing [H,W] plane of x.
std::vector<Spectrum> plane_spectra(const Tensor& x);

/// Per-block cutoff for an extent-N axis when D more downsampling is to come:
/// u is the largest integer strictly below N / (2D).
struct FrequencyBudget {
    std::size_t extent = 0;
    std::size_t downsampling = 1;

    std::size_t u_max() const noexcept { return extent / 2; }
    std::size_t cutoff() const;
};

/// Zero every coefficient with max(|ky|,|kx|) > u. Nyquist bins of even
/// extents have |k| = N/2 and so survive only when u = N/2.
Spectrum lowpass(const Spectrum& spectrum, std::size_t u);
/// Ideal low-pass applied independently to every trailing [H,W] plane.
Tensor lowpass(const Tensor& x, std::size_t u);
/// x - lowpass(x, u).
Tensor highpass(const Tensor& x, std::size_t u);

/// Keep samples (s*i, s*j) of every trailing plane.
Tensor decimate(const Tensor& x, std::size_t s);
/// Adjoint of decimate: place samples at (s*i, s*j), zeros elsewhere.
Tensor upsample_zero(const Tensor& x, std::size_t s);

/// DFT of the ReLU activation mask I[x > 0].
Spectrum mask_spectrum(const Tensor& x);
/// (1/(H*W)) * circular convolution of mask_spectrum(x) with dft2(x), done
/// directly in the frequency domain. Equals dft2(relu(x)).
Spectrum relu_via_frequency(const Tensor& x);
/// Direct O((HW)^2) circular convolution of two spectra, unscaled.
Spectrum circular_convolve(const Spectrum& a, const Spectrum& b);

struct DominanceReport {
    std::size_t window_halfwidth = 0;
    double dominant_mass = 0.0;
    double max_translate_mass = 0.0;
    bool is_dominant = false;
};

/// Compare the coefficient-magnitude mass in the centered (2u+1)x(2u+1) window
/// against every cyclic translate of that window.
/// Masses equal to within 1e-12 relative count as a tie, which is dominant.
DominanceReport dominance_check(const Spectrum& spectrum, std::size_t u);
/// Same check for a real field; multi-plane inputs use the plane-summed
/// magnitude field.
DominanceReport dominance_check(const Tensor& v, std::size_t u);
DominanceReport dominance_check_magnitudes(std::span<const double> magnitude, std::size_t height, std::size_t width,
                                           std::size_t u);

/// Circular convolution of two nonnegative measures of equal length.
std::vector<double> convolve_measures(std::span<const double> f, std::span<const double> g);
/// Mass of every cyclic interval [x, x+length) of f, indexed by start x.
std::vector<double> interval_masses(std::span<const double> f, std::size_t length);

/// Power |X|^2 binned by round(sqrt(kx^2 + ky^2)) in the centered view, summed
/// over all planes.
std::vector<double> radial_spectrum(const Tensor& x);

/// Signed frequency that mode k of an n-sample axis aliases to after
/// decimation by s.
long fold_frequency(long k, std::size_t n, std::size_t s);

/// cos(2*pi*(ky*i/H + kx*j/W) + phase) sampled on an [H,W] grid.
Tensor cosine_mode(std::size_t height, std::size_t width, long ky, long kx, double phase = 0.0);

void write_spectrum_csv(std::ostream& os, const Spectrum& spectrum);
void write_radial_csv(std::ostream& os, std::span<const double> power);

}  // namespace lowpass
