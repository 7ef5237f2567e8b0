#include <doctest.h>

#include <cmath>

#include "stylecl/fft.hpp"
#include "stylecl/rng.hpp"

using namespace stylecl;

namespace {

ComplexPlane random_plane(int h, int w, uint64_t seed) {
    Rng rng(seed);
    ComplexPlane p(h, w);
    for (auto& z : p.data) z = {rng.uniform(-1.0, 1.0), 0.0};
    return p;
}

double max_abs_diff(const ComplexPlane& a, const ComplexPlane& b) {
    double m = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

}  // namespace

TEST_SUITE("fft") {

TEST_CASE("constant plane concentrates in the DC bin") {
    const double c = 0.37;
    ComplexPlane p(8, 8);
    for (auto& z : p.data) z = {c, 0.0};
    ComplexPlane s = fft2(p);
    CHECK(std::abs(s.at(0, 0) - std::complex<double>(64.0 * c, 0.0)) < 1e-9);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x)
            if (y || x) CHECK(std::abs(s.at(y, x)) < 1e-9);
}

TEST_CASE("impulse at the origin transforms to all ones") {
    ComplexPlane p(4, 4);
    p.at(0, 0) = {1.0, 0.0};
    ComplexPlane s = fft2(p);
    for (const auto& z : s.data) CHECK(std::abs(z - std::complex<double>(1.0, 0.0)) < 1e-12);
}

TEST_CASE("bruteforce impulse at (1,0) gives the alternating row pattern") {
    ComplexPlane p(2, 2);
    p.at(1, 0) = {1.0, 0.0};
    ComplexPlane s = dft2_bruteforce(p);
    CHECK(std::abs(s.at(0, 0) - std::complex<double>(1.0, 0.0)) < 1e-12);
    CHECK(std::abs(s.at(0, 1) - std::complex<double>(1.0, 0.0)) < 1e-12);
    CHECK(std::abs(s.at(1, 0) - std::complex<double>(-1.0, 0.0)) < 1e-12);
    CHECK(std::abs(s.at(1, 1) - std::complex<double>(-1.0, 0.0)) < 1e-12);
}

TEST_CASE("bruteforce of the zero plane is zero") {
    ComplexPlane p(5, 7);
    ComplexPlane s = dft2_bruteforce(p);
    for (const auto& z : s.data) CHECK(std::abs(z) == 0.0);
}

TEST_CASE("bruteforce refuses oversized planes") {
    CHECK_THROWS_AS(dft2_bruteforce(ComplexPlane(33, 8)), DimensionError);
    CHECK_THROWS_AS(dft2_bruteforce(ComplexPlane(8, 33)), DimensionError);
}

TEST_CASE("zero-sized planes are rejected") {
    CHECK_THROWS_AS(ComplexPlane(0, 4), DimensionError);
}

TEST_CASE("fft2 matches the bruteforce oracle on every size up to 16") {
    for (int h = 1; h <= 16; ++h) {
        for (int w = 1; w <= 16; ++w) {
            ComplexPlane p = random_plane(h, w, 1000ULL * h + w);
            double energy = plane_energy(p);
            if (energy == 0.0) continue;
            ComplexPlane fast = fft2(p);
            ComplexPlane slow = dft2_bruteforce(p);
            CHECK(max_abs_diff(fast, slow) < 1e-6 * energy);
        }
    }
}

TEST_CASE("round trip recovers the input") {
    for (int size : {4, 8, 16, 64}) {
        ComplexPlane p = random_plane(size, size, 77 + size);
        ComplexPlane back = ifft2(fft2(p));
        double norm = std::sqrt(plane_energy(p));
        CHECK(max_abs_diff(p, back) < 1e-5 * norm);
    }
}

TEST_CASE("parseval energy equality") {
    Rng rng(42);
    Tensor3 img(64, 64, 3);
    for (float& v : img.data) v = static_cast<float>(rng.uniform());
    double spatial = tensor_energy(img);
    double spectral = 0.0;
    for (int c = 0; c < 3; ++c) spectral += plane_energy(fft2_channel(img, c));
    spectral /= 64.0 * 64.0;
    CHECK(std::abs(spatial - spectral) < 1e-4 * spatial);
}

TEST_CASE("linearity") {
    const double a = 1.7, b = -0.6;
    ComplexPlane x = random_plane(8, 8, 5);
    ComplexPlane y = random_plane(8, 8, 6);
    ComplexPlane combo(8, 8);
    for (size_t i = 0; i < combo.data.size(); ++i) combo.data[i] = a * x.data[i] + b * y.data[i];
    ComplexPlane lhs = fft2(combo);
    ComplexPlane fx = fft2(x), fy = fft2(y);
    double m = 0.0;
    for (size_t i = 0; i < lhs.data.size(); ++i)
        m = std::max(m, std::abs(lhs.data[i] - (a * fx.data[i] + b * fy.data[i])));
    CHECK(m < 1e-5 * std::sqrt(plane_energy(lhs)));
}

TEST_CASE("amp/phase decomposition basics") {
    ComplexPlane p(1, 2);
    p.at(0, 0) = {3.0, 4.0};
    p.at(0, 1) = {0.0, 0.0};
    Spectrum s = to_amp_phase({p});
    CHECK(s.amplitude.at(0, 0, 0) == doctest::Approx(5.0));
    CHECK(s.phase.at(0, 0, 0) == doctest::Approx(std::atan2(4.0, 3.0)));
    CHECK(s.amplitude.at(0, 1, 0) == 0.0f);
    CHECK(s.phase.at(0, 1, 0) == 0.0f);

    auto back = recompose(s);
    CHECK(std::abs(back[0].at(0, 0) - std::complex<double>(3.0, 4.0)) < 1e-6);
}

TEST_CASE("recompose of unit amplitude and zero phase is all ones") {
    Spectrum s{Tensor3(2, 2, 1, 1.0f), Tensor3(2, 2, 1, 0.0f)};
    auto planes = recompose(s);
    for (const auto& z : planes[0].data)
        CHECK(std::abs(z - std::complex<double>(1.0, 0.0)) < 1e-12);
}

TEST_CASE("recompose rejects negative amplitudes") {
    Spectrum s{Tensor3(2, 2, 1, -1.0f), Tensor3(2, 2, 1, 0.0f)};
    CHECK_THROWS_AS(recompose(s), InvariantError);
}

TEST_CASE("amp/phase round trip on random spectra") {
    Rng rng(9);
    ComplexPlane p(16, 16);
    for (auto& z : p.data) z = {rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)};
    Spectrum s = to_amp_phase({p});
    for (float a : s.amplitude.data) CHECK(a >= 0.0f);
    for (float ph : s.phase.data) {
        CHECK(ph <= static_cast<float>(M_PI));
        CHECK(ph > -static_cast<float>(M_PI) - 1e-6f);
    }
    auto back = recompose(s);
    double m = 0.0;
    for (size_t i = 0; i < p.data.size(); ++i)
        m = std::max(m, std::abs(back[0].data[i] - p.data[i]));
    CHECK(m < 1e-5);
}

}  // TEST_SUITE
