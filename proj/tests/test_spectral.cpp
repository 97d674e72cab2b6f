#include <doctest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "lowpass/autograd.hpp"
#include "lowpass/experiments.hpp"
#include "lowpass/spectral.hpp"
#include "oracles.hpp"

using namespace lowpass;

namespace {

Tensor random_image(std::size_t h, std::size_t w, Rng& rng) { return Tensor::randn({h, w}, rng); }

double spectrum_distance(const Spectrum& a, const Spectrum& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.coeffs().size(); ++i) m = std::max(m, std::abs(a.coeffs()[i] - b.coeffs()[i]));
    return m;
}

double spectrum_norm(const Spectrum& a) {
    double m = 0.0;
    for (auto c : a.coeffs()) m = std::max(m, std::abs(c));
    return m;
}

// Zero all coefficients with max(|ky|,|kx|) > u by direct construction from modes.
Tensor band_limited(std::size_t n, std::size_t u, Rng& rng) {
    Tensor x({n, n});
    std::normal_distribution<double> nd;
    for (long ky = -static_cast<long>(u); ky <= static_cast<long>(u); ++ky)
        for (long kx = -static_cast<long>(u); kx <= static_cast<long>(u); ++kx)
            x += cosine_mode(n, n, ky, kx, nd(rng)) * nd(rng);
    return x;
}

}  // namespace

TEST_CASE("dft of delta and constant images") {
    Tensor d({4, 4});
    d.at(0, 0) = 1.0;
    Spectrum D = dft2(d);
    for (auto c : D.coeffs()) CHECK(std::abs(c - Complex(1.0)) <= 1e-15);

    Tensor c({4, 6}, 2.5);
    Spectrum C = dft2(c);
    CHECK(std::abs(C(0, 0) - Complex(2.5 * 24)) <= 1e-12);
    for (std::size_t i = 1; i < C.coeffs().size(); ++i) CHECK(std::abs(C.coeffs()[i]) <= 1e-12);
}

TEST_CASE("dft matches the brute-force oracle, including non power-of-two sizes") {
    Rng rng(20);
    for (auto [h, w] : {std::pair<std::size_t, std::size_t>{4, 4}, {8, 8}, {6, 6}, {4, 10}, {3, 5}}) {
        Tensor x = random_image(h, w, rng);
        auto want = oracle::dft2(x, h, w);
        Spectrum got = dft2(x);
        for (std::size_t i = 0; i < want.size(); ++i) CHECK(std::abs(got.coeffs()[i] - want[i]) <= 1e-9);
    }
}

TEST_CASE("inverse transform recovers the image and real spectra are conjugate symmetric") {
    Rng rng(21);
    for (std::size_t n : {2u, 5u, 8u, 16u}) {
        Tensor x = random_image(n, n, rng);
        Spectrum X = dft2(x);
        CHECK(X.is_conjugate_symmetric(1e-9));
        CHECK(oracle::max_abs_diff(idft2(X), x) <= 1e-10);
        // Parseval
        CHECK(dot(x, x) == doctest::Approx(X.total_power() / static_cast<double>(n * n)).epsilon(1e-12));
    }
}

TEST_CASE("signed frequency layout") {
    CHECK(signed_frequency(0, 8) == 0);
    CHECK(signed_frequency(3, 8) == 3);
    CHECK(signed_frequency(4, 8) == -4);
    CHECK(signed_frequency(7, 8) == -1);
    CHECK(signed_frequency(2, 5) == 2);
    CHECK(signed_frequency(3, 5) == -2);
    CHECK(wrap_frequency(-1, 8) == 7);
    CHECK(wrap_frequency(9, 8) == 1);
}

TEST_CASE("frequency budget") {
    CHECK(FrequencyBudget{16, 4}.cutoff() == 1);
    CHECK(FrequencyBudget{16, 2}.cutoff() == 3);
    CHECK(FrequencyBudget{16, 1}.cutoff() == 7);
    CHECK(FrequencyBudget{8, 2}.cutoff() == 1);
    CHECK(FrequencyBudget{12, 2}.cutoff() == 2);
    CHECK(FrequencyBudget{16, 4}.u_max() == 8);
    CHECK_THROWS(FrequencyBudget{16, 0}.cutoff());
}

TEST_CASE("lowpass is an orthogonal projection") {
    Rng rng(22);
    for (std::size_t u : {0u, 1u, 2u, 4u}) {
        Tensor x = Tensor::randn({2, 3, 8, 8}, rng), y = Tensor::randn({2, 3, 8, 8}, rng);
        Tensor hx = lowpass::lowpass(x, u);
        CHECK(oracle::max_abs_diff(lowpass::lowpass(hx, u), hx) <= 1e-12);
        CHECK(dot(hx, y) == doctest::Approx(dot(x, lowpass::lowpass(y, u))).epsilon(1e-12));
        CHECK(l2norm(hx) <= l2norm(x) + 1e-12);
        CHECK(oracle::max_abs_diff(hx + highpass(x, u), x) <= 1e-12);
    }
    // D = 1 keeps everything except the Nyquist bins.
    Tensor odd = Tensor::randn({7, 7}, rng);
    CHECK(oracle::max_abs_diff(lowpass::lowpass(odd, 3), odd) <= 1e-12);
}

TEST_CASE("lowpass keeps sub-cutoff modes and removes the rest") {
    Tensor m = cosine_mode(8, 8, 1, -2, 0.3);
    CHECK(oracle::max_abs_diff(lowpass::lowpass(m, 2), m) <= 1e-12);
    CHECK(l2norm(lowpass::lowpass(m, 1)) <= 1e-12);
    Tensor nyq = cosine_mode(8, 8, 4, 0);
    CHECK(l2norm(lowpass::lowpass(nyq, 3)) <= 1e-12);
    CHECK(oracle::max_abs_diff(lowpass::lowpass(nyq, 4), nyq) <= 1e-12);
    CHECK_THROWS(lowpass::lowpass(nyq, 5));
}

TEST_CASE("decimate bookkeeping and folding") {
    Tensor e({4, 4});
    for (std::size_t i = 0; i < 16; ++i) e[i] = static_cast<double>(i);
    Tensor d = decimate(e, 2);
    CHECK(d == Tensor({2, 2}, std::vector<double>{0, 2, 8, 10}));
    CHECK_THROWS_AS(decimate(Tensor({5, 4}), 2), ShapeError);

    CHECK(oracle::max_abs_diff(decimate(cosine_mode(8, 8, 3, 0), 2), cosine_mode(4, 4, 1, 0)) <= 1e-12);
    CHECK(oracle::max_abs_diff(decimate(cosine_mode(8, 8, 1, 0), 2), cosine_mode(4, 4, 1, 0)) <= 1e-12);

    // upsample_zero is the adjoint of decimate
    Rng rng(23);
    Tensor x = Tensor::randn({8, 8}, rng), y = Tensor::randn({4, 4}, rng);
    CHECK(dot(decimate(x, 2), y) == doctest::Approx(dot(x, upsample_zero(y, 2))));
}

TEST_CASE("fold frequency against direct sampling") {
    for (std::size_t n : {8u, 12u, 16u})
        for (std::size_t s : {2u, 4u}) {
            if (n % s) continue;
            for (long k = -static_cast<long>(n); k <= static_cast<long>(n); ++k) {
                long f = fold_frequency(k, n, s);
                const long m = static_cast<long>(n / s);
                CHECK(f >= -m / 2);
                CHECK(f < (m + 1) / 2);
                Tensor a = decimate(cosine_mode(n, n, 0, k, 0.4), s);
                Tensor b = cosine_mode(n / s, n / s, 0, f, 0.4);
                CHECK(oracle::max_abs_diff(a, b) <= 1e-9);
            }
        }
}

TEST_CASE("mask spectrum examples") {
    Rng rng(24);
    Tensor pos = Tensor::uniform({4, 4}, rng, 0.1, 1.0);
    Spectrum M = mask_spectrum(pos);
    CHECK(std::abs(M(0, 0) - Complex(16.0)) <= 1e-12);
    for (std::size_t i = 1; i < 16; ++i) CHECK(std::abs(M.coeffs()[i]) <= 1e-12);
    CHECK(spectrum_norm(mask_spectrum(pos * -1.0)) == 0.0);

    Tensor x = Tensor::randn({6, 6}, rng);
    auto want = oracle::dft2(positive_mask(x), 6, 6);
    Spectrum got = mask_spectrum(x);
    for (std::size_t i = 0; i < want.size(); ++i) CHECK(std::abs(got.coeffs()[i] - want[i]) <= 1e-9);
}

TEST_CASE("relu through the frequency domain") {
    Rng rng(25);
    Tensor pos = Tensor::uniform({4, 4}, rng, 0.1, 1.0);
    CHECK(spectrum_distance(relu_via_frequency(pos), dft2(pos)) <= 1e-12);
    CHECK(spectrum_norm(relu_via_frequency(pos * -1.0)) <= 1e-12);

    for (int t = 0; t < 5; ++t) {
        Tensor x = normalize_plane(Tensor::randn({8, 8}, rng));
        Spectrum want = dft2(relu(x));
        CHECK(spectrum_distance(relu_via_frequency(x), want) / spectrum_norm(want) <= 1e-8);
    }
}

TEST_CASE("relu jacobian in frequency is convolution with M / HW") {
    // Parameterize by the real and imaginary parts of X; the map
    // X -> dft2(relu(idft2(X))) is linear in X near x, with kernel M(x)/HW.
    Rng rng(26);
    const std::size_t n = 4;
    Tensor x = Tensor::randn({n, n}, rng);
    for (double& v : x.data())
        if (std::abs(v) < 0.1) v = 0.5;
    Spectrum M = mask_spectrum(x);
    const double hw = static_cast<double>(n * n);
    for (std::size_t k = 0; k < n * n; ++k) {
        // Perturb along a real-image direction e_k so the result stays real.
        Tensor e({n, n});
        e[k] = 1e-6;
        Spectrum E = dft2(e);
        Spectrum lhs = dft2(relu(x + e));
        Spectrum base = dft2(relu(x));
        Spectrum conv = circular_convolve(M, E);
        for (std::size_t i = 0; i < n * n; ++i) {
            Complex d = lhs.coeffs()[i] - base.coeffs()[i];
            CHECK(std::abs(d - conv.coeffs()[i] / hw) <= 1e-12);
        }
    }
}

TEST_CASE("dominance check examples") {
    Spectrum dc(8, 8);
    dc(0, 0) = 3.0;
    for (std::size_t u = 0; u <= 4; ++u) CHECK(dominance_check(dc, u).is_dominant);

    Spectrum corner(8, 8);
    corner(4, 4) = 3.0;
    for (std::size_t u = 0; u < 4; ++u) CHECK_FALSE(dominance_check(corner, u).is_dominant);

    Tensor flat({1, 8, 8}, 2.0);
    CHECK(dominance_check(flat, 1).is_dominant);
}

TEST_CASE("dominance check agrees with translate enumeration") {
    Rng rng(27);
    const std::size_t n = 8;
    for (int t = 0; t < 50; ++t) {
        Spectrum S = dft2(Tensor::randn({n, n}, rng));
        // add a random low-band bias so both outcomes occur
        S(0, 0) += Complex(std::uniform_real_distribution<double>(0, 40)(rng));
        for (std::size_t u = 0; u <= 3; ++u) {
            auto mags = S.magnitudes();
            auto mass_at = [&](long cy, long cx) {
                double m = 0;
                for (long dy = -static_cast<long>(u); dy <= static_cast<long>(u); ++dy)
                    for (long dx = -static_cast<long>(u); dx <= static_cast<long>(u); ++dx)
                        m += mags[wrap_frequency(cy + dy, n) * n + wrap_frequency(cx + dx, n)];
                return m;
            };
            const double C = mass_at(0, 0);
            double best = 0.0;
            for (long cy = 0; cy < static_cast<long>(n); ++cy)
                for (long cx = 0; cx < static_cast<long>(n); ++cx) best = std::max(best, mass_at(cy, cx));
            DominanceReport r = dominance_check(S, u);
            CHECK(r.dominant_mass == doctest::Approx(C).epsilon(1e-12));
            CHECK(r.max_translate_mass == doctest::Approx(best).epsilon(1e-12));
            CHECK(r.is_dominant == (C >= best * (1.0 - 1e-12)));
        }
    }
}

TEST_CASE("measure convolution and interval masses") {
    std::vector<double> f{0.1, 0.5, 0.2, 0.0, 0.7, 0.3};
    std::vector<double> delta(6, 0.0);
    delta[0] = 1.0;
    auto fd = convolve_measures(f, delta);
    for (std::size_t i = 0; i < 6; ++i) CHECK(fd[i] == doctest::Approx(f[i]));

    std::vector<double> uni(6, 0.5), g{0.2, 0.1, 0.3, 0.0, 0.1, 0.3};
    auto ug = convolve_measures(uni, g);
    for (std::size_t len = 1; len <= 6; ++len) {
        auto before = interval_masses(uni, len), after = interval_masses(ug, len);
        for (std::size_t x = 0; x < 6; ++x) {
            CHECK(before[x] == doctest::Approx(0.5 * static_cast<double>(len)));
            CHECK(after[x] == doctest::Approx(before[x]));
        }
        auto oracle_masses = oracle::window_masses(f, len);
        auto lib = interval_masses(f, len);
        for (std::size_t x = 0; x < 6; ++x) CHECK(lib[x] == doctest::Approx(oracle_masses[x]));
    }
    CHECK_THROWS(convolve_measures(std::vector<double>{-1.0, 1.0}, std::vector<double>{1.0, 0.0}));
}

TEST_CASE("radial spectrum bins") {
    Tensor c({1, 8, 8}, 1.0);
    auto p = radial_spectrum(c);
    CHECK(p[0] == doctest::Approx(64.0 * 64.0));
    for (std::size_t b = 1; b < p.size(); ++b) CHECK(p[b] == doctest::Approx(0.0));

    Tensor m = cosine_mode(16, 16, 3, 4);
    auto pm = radial_spectrum(m);
    double total = 0.0;
    for (double v : pm) total += v;
    CHECK(pm[5] == doctest::Approx(total));

    Rng rng(28);
    Tensor x = Tensor::randn({2, 8, 8}, rng);
    auto px = radial_spectrum(x);
    double sum = 0.0;
    for (double v : px) sum += v;
    CHECK(sum == doctest::Approx(dot(x, x) * 64.0).epsilon(1e-12));
}

TEST_CASE("nyquist reconstruction") {
    Rng rng(29);
    const std::size_t n = 16, s = 2;
    Tensor x = band_limited(n, 3, rng);
    Tensor rec = lowpass::lowpass(upsample_zero(decimate(lowpass::lowpass(x, 3), s), s) * static_cast<double>(s * s), 3);
    CHECK(oracle::max_abs_diff(rec, x) <= 1e-9);
}

TEST_CASE("spectrum csv layout") {
    Spectrum S(2, 2);
    S(1, 0) = Complex(1.0, -2.0);
    std::ostringstream os;
    write_spectrum_csv(os, S);
    std::istringstream is(os.str());
    CsvTable t = read_csv(is);
    CHECK(t.name == "spectrum");
    CHECK(t.header == std::vector<std::string>{"k_y", "k_x", "re", "im"});
    CHECK(t.rows.size() == 4);

    std::ostringstream rs;
    std::vector<double> power{1.0, 2.5};
    write_radial_csv(rs, power);
    std::istringstream ri(rs.str());
    CsvTable r = read_csv(ri);
    CHECK(r.name == "radial-spectrum");
    CHECK(r.number(1, "power") == 2.5);
}
