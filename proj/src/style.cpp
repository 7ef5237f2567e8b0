#include "stylecl/style.hpp"

#include <cmath>
#include <cstring>

#include "stylecl/bytes.hpp"
#include "stylecl/fft.hpp"

namespace stylecl {

StyleWindow style_window(int image_h, int image_w, double beta) {
    if (!(beta > 0.0 && beta < 1.0)) throw ConfigError("style_window: beta must be in (0,1)");
    StyleWindow win;
    win.h = std::max(1, static_cast<int>(std::floor(beta * image_h + 0.5)));
    win.w = std::max(1, static_cast<int>(std::floor(beta * image_w + 0.5)));
    win.row0 = image_h / 2 - (win.h - 1) / 2;
    win.col0 = image_w / 2 - (win.w - 1) / 2;
    return win;
}

const StyleToken& StyleBank::token(int step) const {
    if (!has(step)) throw ProtocolError("style bank has no token for step " + std::to_string(step));
    return tokens[static_cast<size_t>(step)];
}

StyleToken extract_style(const std::vector<Tensor3>& images, double beta, int step_index) {
    if (images.empty()) throw ProtocolError("extract_style: empty image set");
    const Tensor3& first = images.front();
    if (first.c != 3) throw ShapeError("extract_style: expected 3-channel images");
    for (const Tensor3& img : images)
        if (!img.same_shape(first)) throw ShapeError("extract_style: image shape mismatch");

    const StyleWindow win = style_window(first.h, first.w, beta);
    StyleToken token;
    token.step_index = step_index;
    token.beta = beta;
    token.window_h = win.h;
    token.window_w = win.w;
    token.values = Tensor3(win.h, win.w, 3);

    std::vector<double> acc(static_cast<size_t>(win.h) * win.w * 3, 0.0);
    for (const Tensor3& img : images) {
        for (int ch = 0; ch < 3; ++ch) {
            ComplexPlane spec = fft2_channel(img, ch);
            for (int r = 0; r < win.h; ++r) {
                const int y = from_shifted(win.row0 + r, img.h);
                for (int cidx = 0; cidx < win.w; ++cidx) {
                    const int x = from_shifted(win.col0 + cidx, img.w);
                    acc[(static_cast<size_t>(r) * win.w + cidx) * 3 + ch] +=
                        std::abs(spec.at(y, x));
                }
            }
        }
    }
    const double inv_n = 1.0 / static_cast<double>(images.size());
    for (size_t i = 0; i < acc.size(); ++i)
        token.values.data[i] = static_cast<float>(acc[i] * inv_n);
    return token;
}

static Tensor3 apply_style_impl(const Tensor3& image, const StyleToken& token, bool clamp) {
    if (image.c != 3) throw ShapeError("apply_style: expected 3-channel image");
    const StyleWindow win = style_window(image.h, image.w, token.beta);
    if (win.h != token.window_h || win.w != token.window_w)
        throw ShapeError("apply_style: token window does not match image size");

    Tensor3 out(image.h, image.w, 3);
    for (int ch = 0; ch < 3; ++ch) {
        ComplexPlane spec = fft2_channel(image, ch);
        for (int r = 0; r < win.h; ++r) {
            const int y = from_shifted(win.row0 + r, image.h);
            for (int cidx = 0; cidx < win.w; ++cidx) {
                const int x = from_shifted(win.col0 + cidx, image.w);
                std::complex<double> z = spec.at(y, x);
                double amp = std::abs(z);
                double target = token.values.at(r, cidx, ch);
                // rescale to the target amplitude; zero bins have phase 0
                spec.at(y, x) = amp == 0.0 ? std::complex<double>(target, 0.0)
                                           : z * (target / amp);
            }
        }
        ComplexPlane img = ifft2(spec);
        for (int y = 0; y < image.h; ++y) {
            for (int x = 0; x < image.w; ++x) {
                double v = img.at(y, x).real();
                if (clamp) v = std::min(1.0, std::max(0.0, v));
                out.at(y, x, ch) = static_cast<float>(v);
            }
        }
    }
    return out;
}

Tensor3 apply_style(const Tensor3& image, const StyleToken& token) {
    return apply_style_impl(image, token, true);
}

Tensor3 apply_style_raw(const Tensor3& image, const StyleToken& token) {
    return apply_style_impl(image, token, false);
}

StyleBank bank_add(const StyleBank& bank, const StyleToken& token) {
    if (token.step_index != bank.size())
        throw ProtocolError("bank_add: expected contiguous step " + std::to_string(bank.size()) +
                            ", got " + std::to_string(token.step_index));
    StyleBank out = bank;
    if (out.tokens.empty()) {
        out.beta = token.beta;
    } else {
        if (token.beta != out.beta) throw ProtocolError("bank_add: beta mismatch");
        if (token.window_h != out.tokens.front().window_h ||
            token.window_w != out.tokens.front().window_w)
            throw ProtocolError("bank_add: window size mismatch");
    }
    out.tokens.push_back(token);
    return out;
}

// ---------------------------------------------------------------------------
// bank file: magic "STYB", version u32, image_h u32, image_w u32, beta f64,
// token_count u32; per token: step u32, wh u32, ww u32, wh*ww*3 f32 values.
// All little-endian.
// ---------------------------------------------------------------------------

namespace {

constexpr char kBankMagic[4] = {'S', 'T', 'Y', 'B'};
constexpr uint32_t kBankVersion = 1;

}  // namespace

void bank_save(const StyleBank& bank, const std::string& path) {
    ByteWriter w(path);
    w.write(kBankMagic, 4);
    w.write_u32(kBankVersion);
    w.write_u32(static_cast<uint32_t>(bank.image_h));
    w.write_u32(static_cast<uint32_t>(bank.image_w));
    w.write_f64(bank.beta);
    w.write_u32(static_cast<uint32_t>(bank.tokens.size()));
    for (const StyleToken& t : bank.tokens) {
        w.write_u32(static_cast<uint32_t>(t.step_index));
        w.write_u32(static_cast<uint32_t>(t.window_h));
        w.write_u32(static_cast<uint32_t>(t.window_w));
        for (float v : t.values.data) w.write_f32(v);
    }
    w.close_checked();
}

StyleBank bank_load(const std::string& path) {
    ByteReader r(path);
    char magic[4];
    r.read(magic, 4, "magic");
    if (std::memcmp(magic, kBankMagic, 4) != 0)
        throw FormatError("bad magic in " + path + ": expected \"STYB\"");
    uint32_t version = r.read_u32("version");
    if (version != kBankVersion)
        throw FormatError("unsupported bank version " + std::to_string(version));
    StyleBank bank;
    bank.image_h = static_cast<int>(r.read_u32("image_h"));
    bank.image_w = static_cast<int>(r.read_u32("image_w"));
    bank.beta = r.read_f64("beta");
    uint32_t count = r.read_u32("token_count");
    for (uint32_t i = 0; i < count; ++i) {
        StyleToken t;
        t.step_index = static_cast<int>(r.read_u32("step_index"));
        t.window_h = static_cast<int>(r.read_u32("window_h"));
        t.window_w = static_cast<int>(r.read_u32("window_w"));
        t.beta = bank.beta;
        if (t.step_index != static_cast<int>(i))
            throw FormatError("non-contiguous step index in bank token " + std::to_string(i));
        if (t.window_h < 1 || t.window_w < 1)
            throw FormatError("invalid window dims in bank token " + std::to_string(i));
        t.values = Tensor3(t.window_h, t.window_w, 3);
        for (float& v : t.values.data) v = r.read_f32("token values");
        bank.tokens.push_back(std::move(t));
    }
    return bank;
}

}  // namespace stylecl
