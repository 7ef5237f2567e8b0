#pragma once

#include <string>
#include <vector>

#include "stylecl/tensor.hpp"

namespace stylecl {

// Centered low-frequency window on the fftshift-ed spectrum.
// Extent is max(1, round(beta * dim)) per axis, round half up; the window is
// anchored so the top/left half-extent is the floored half.
struct StyleWindow {
    int h = 0, w = 0;        // window extents
    int row0 = 0, col0 = 0;  // top-left corner in shifted coordinates
};

StyleWindow style_window(int image_h, int image_w, double beta);

// map a shifted-spectrum index back to the raw (DC-at-origin) index
inline int from_shifted(int idx, int n) { return (idx + n - n / 2) % n; }

// Average amplitude window of one domain: the replayable "style".
struct StyleToken {
    int step_index = 0;
    double beta = 0.0;
    int window_h = 0;
    int window_w = 0;
    Tensor3 values;  // window_h x window_w x 3, shifted coordinates
};

// Per-step tokens, contiguous step indices starting at 0.
struct StyleBank {
    int image_h = 0;
    int image_w = 0;
    double beta = 0.0;
    std::vector<StyleToken> tokens;

    bool has(int step) const { return step >= 0 && step < static_cast<int>(tokens.size()); }
    const StyleToken& token(int step) const;
    int size() const { return static_cast<int>(tokens.size()); }
};

StyleToken extract_style(const std::vector<Tensor3>& images, double beta, int step_index);

// Replace the low-frequency amplitude window with the token's values,
// keep phase and the complement amplitudes, inverse-transform.
// apply_style clamps to [0,1]; the _raw variant returns the unclamped image.
Tensor3 apply_style(const Tensor3& image, const StyleToken& token);
Tensor3 apply_style_raw(const Tensor3& image, const StyleToken& token);

StyleBank bank_add(const StyleBank& bank, const StyleToken& token);

void bank_save(const StyleBank& bank, const std::string& path);
StyleBank bank_load(const std::string& path);

}  // namespace stylecl
