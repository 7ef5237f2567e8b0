#include "stylecl/fft.hpp"

#include <cmath>

namespace stylecl {

namespace {

bool is_pow2(int n) { return n >= 1 && (n & (n - 1)) == 0; }

// in-place iterative radix-2 Cooley-Tukey, unnormalized
void fft_pow2(std::vector<std::complex<double>>& a, bool inverse) {
    const int n = static_cast<int>(a.size());
    if (n <= 1) return;
    for (int i = 1, j = 0; i < n; ++i) {
        int bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (int len = 2; len <= n; len <<= 1) {
        const double ang = (inverse ? 2.0 : -2.0) * M_PI / len;
        const std::complex<double> wlen(std::cos(ang), std::sin(ang));
        for (int i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (int k = 0; k < len / 2; ++k) {
                std::complex<double> u = a[i + k];
                std::complex<double> v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
}

// Bluestein chirp-z for arbitrary length, expressed as a convolution
// carried out with radix-2 transforms of padded length
void fft_bluestein(std::vector<std::complex<double>>& a, bool inverse) {
    const int n = static_cast<int>(a.size());
    int m = 1;
    while (m < 2 * n - 1) m <<= 1;

    const double sign = inverse ? 1.0 : -1.0;
    std::vector<std::complex<double>> chirp(n);
    for (int k = 0; k < n; ++k) {
        // angle uses k^2 mod 2n to avoid precision loss on large k
        long long k2 = (static_cast<long long>(k) * k) % (2LL * n);
        double ang = sign * M_PI * static_cast<double>(k2) / n;
        chirp[k] = {std::cos(ang), std::sin(ang)};
    }

    std::vector<std::complex<double>> u(m), v(m);
    for (int k = 0; k < n; ++k) u[k] = a[k] * chirp[k];
    v[0] = std::conj(chirp[0]);
    for (int k = 1; k < n; ++k) v[k] = v[m - k] = std::conj(chirp[k]);

    fft_pow2(u, false);
    fft_pow2(v, false);
    for (int k = 0; k < m; ++k) u[k] *= v[k];
    fft_pow2(u, true);
    const double norm = 1.0 / m;
    for (int k = 0; k < n; ++k) a[k] = u[k] * norm * chirp[k];
}

void fft_1d(std::vector<std::complex<double>>& a, bool inverse) {
    if (is_pow2(static_cast<int>(a.size())))
        fft_pow2(a, inverse);
    else
        fft_bluestein(a, inverse);
}

ComplexPlane transform2d(const ComplexPlane& plane, bool inverse) {
    if (plane.h < 1 || plane.w < 1) throw DimensionError("fft2: zero-sized plane");
    ComplexPlane out = plane;
    std::vector<std::complex<double>> line;

    line.resize(plane.w);
    for (int y = 0; y < plane.h; ++y) {
        for (int x = 0; x < plane.w; ++x) line[x] = out.at(y, x);
        fft_1d(line, inverse);
        for (int x = 0; x < plane.w; ++x) out.at(y, x) = line[x];
    }
    line.resize(plane.h);
    for (int x = 0; x < plane.w; ++x) {
        for (int y = 0; y < plane.h; ++y) line[y] = out.at(y, x);
        fft_1d(line, inverse);
        for (int y = 0; y < plane.h; ++y) out.at(y, x) = line[y];
    }
    return out;
}

}  // namespace

ComplexPlane fft2(const ComplexPlane& plane) { return transform2d(plane, false); }

ComplexPlane ifft2(const ComplexPlane& plane) {
    ComplexPlane out = transform2d(plane, true);
    const double norm = 1.0 / (static_cast<double>(plane.h) * plane.w);
    for (auto& z : out.data) z *= norm;
    return out;
}

ComplexPlane fft2_channel(const TensorT<float>& img, int channel) {
    ComplexPlane p(img.h, img.w);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            p.at(y, x) = {static_cast<double>(img.at(y, x, channel)), 0.0};
    return fft2(p);
}

ComplexPlane dft2_bruteforce(const ComplexPlane& plane) {
    if (plane.h < 1 || plane.w < 1) throw DimensionError("dft2_bruteforce: zero-sized plane");
    if (plane.h > 32 || plane.w > 32)
        throw DimensionError("dft2_bruteforce: refusing plane larger than 32x32");
    ComplexPlane out(plane.h, plane.w);
    for (int u = 0; u < plane.h; ++u) {
        for (int v = 0; v < plane.w; ++v) {
            std::complex<double> acc(0.0, 0.0);
            for (int y = 0; y < plane.h; ++y) {
                for (int x = 0; x < plane.w; ++x) {
                    double ang = -2.0 * M_PI *
                                 (static_cast<double>(u) * y / plane.h +
                                  static_cast<double>(v) * x / plane.w);
                    acc += plane.at(y, x) * std::complex<double>(std::cos(ang), std::sin(ang));
                }
            }
            out.at(u, v) = acc;
        }
    }
    return out;
}

Spectrum to_amp_phase(const std::vector<ComplexPlane>& channels) {
    if (channels.empty()) throw DimensionError("to_amp_phase: no channels");
    const int h = channels[0].h, w = channels[0].w;
    const int nc = static_cast<int>(channels.size());
    Spectrum s{Tensor3(h, w, nc), Tensor3(h, w, nc)};
    for (int ch = 0; ch < nc; ++ch) {
        const ComplexPlane& p = channels[ch];
        if (p.h != h || p.w != w) throw ShapeError("to_amp_phase: channel shape mismatch");
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const std::complex<double>& z = p.at(y, x);
                double amp = std::abs(z);
                s.amplitude.at(y, x, ch) = static_cast<float>(amp);
                s.phase.at(y, x, ch) =
                    amp == 0.0 ? 0.0f : static_cast<float>(std::atan2(z.imag(), z.real()));
            }
        }
    }
    return s;
}

std::vector<ComplexPlane> recompose(const Spectrum& spec) {
    if (!spec.amplitude.same_shape(spec.phase))
        throw ShapeError("recompose: amplitude/phase shape mismatch");
    std::vector<ComplexPlane> out;
    out.reserve(spec.amplitude.c);
    for (int ch = 0; ch < spec.amplitude.c; ++ch) {
        ComplexPlane p(spec.amplitude.h, spec.amplitude.w);
        for (int y = 0; y < spec.amplitude.h; ++y) {
            for (int x = 0; x < spec.amplitude.w; ++x) {
                double amp = spec.amplitude.at(y, x, ch);
                if (amp < 0.0)
                    throw InvariantError("recompose: negative amplitude");
                double ph = spec.phase.at(y, x, ch);
                p.at(y, x) = {amp * std::cos(ph), amp * std::sin(ph)};
            }
        }
        out.push_back(std::move(p));
    }
    return out;
}

double plane_energy(const ComplexPlane& plane) {
    double e = 0.0;
    for (const auto& z : plane.data) e += std::norm(z);
    return e;
}

double tensor_energy(const Tensor3& t) {
    double e = 0.0;
    for (float v : t.data) e += static_cast<double>(v) * v;
    return e;
}

}  // namespace stylecl
