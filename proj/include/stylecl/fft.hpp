#pragma once

#include <vector>

#include "stylecl/tensor.hpp"

namespace stylecl {

// Unnormalized forward 2-D DFT. Radix-2 along power-of-two axes, Bluestein
// otherwise, so any size >= 1 works. ifft2 applies the 1/(h*w) factor.
ComplexPlane fft2(const ComplexPlane& plane);
ComplexPlane ifft2(const ComplexPlane& plane);

// forward transform of a single real channel of a Tensor3
ComplexPlane fft2_channel(const TensorT<float>& img, int channel);

// Textbook O(N^4) double-loop DFT; test reference for fft2.
// Refuses planes larger than 32 on either axis.
ComplexPlane dft2_bruteforce(const ComplexPlane& plane);

// amplitude = |z|, phase = arg(z) per bin; zero bins get phase 0
struct Spectrum {
    Tensor3 amplitude;
    Tensor3 phase;
};

Spectrum to_amp_phase(const std::vector<ComplexPlane>& channels);
std::vector<ComplexPlane> recompose(const Spectrum& spec);

// sum of squared values, accumulated in double
double plane_energy(const ComplexPlane& plane);
double tensor_energy(const Tensor3& t);

}  // namespace stylecl
