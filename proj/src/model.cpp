#include "stylecl/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "stylecl/bytes.hpp"
#include "stylecl/rng.hpp"

namespace stylecl {

int SegModel::channel_of(int class_id) const {
    for (size_t i = 0; i < channel_layout.size(); ++i)
        if (channel_layout[i] == class_id) return static_cast<int>(i);
    return -1;
}

size_t SegModel::param_count() const {
    return conv1_w.size() + conv1_b.size() + conv2_w.size() + conv2_b.size() + head_w.size() +
           head_b.size();
}

SegModel init_model(uint64_t seed, int feature_width,
                    const std::vector<uint8_t>& initial_class_ids) {
    if (feature_width < 1) throw ConfigError("init_model: feature width must be >= 1");
    SegModel m;
    m.F = feature_width;
    m.C = 1 + static_cast<int>(initial_class_ids.size());
    m.channel_layout.push_back(kUnknownId);
    for (uint8_t id : initial_class_ids) m.channel_layout.push_back(id);

    Rng rng(mix_seed(seed, 0x5E61717ULL));
    auto he_fill = [&rng](std::vector<float>& v, size_t n, int fan_in) {
        v.resize(n);
        const double std = std::sqrt(2.0 / fan_in);
        for (float& p : v) p = static_cast<float>(rng.normal(0.0, std));
    };
    he_fill(m.conv1_w, static_cast<size_t>(m.F) * 3 * 9, 27);
    m.conv1_b.assign(static_cast<size_t>(m.F), 0.0f);
    he_fill(m.conv2_w, static_cast<size_t>(m.F) * m.F * 9, 9 * m.F);
    m.conv2_b.assign(static_cast<size_t>(m.F), 0.0f);
    he_fill(m.head_w, static_cast<size_t>(m.C) * m.F, m.F);
    m.head_b.assign(static_cast<size_t>(m.C), 0.0f);
    return m;
}

SegModel expand_head(const SegModel& model, const std::vector<uint8_t>& new_class_ids,
                     uint64_t seed) {
    for (uint8_t id : new_class_ids)
        if (model.channel_of(id) >= 0)
            throw ProtocolError("expand_head: class id " + std::to_string(id) +
                                " already present");
    if (new_class_ids.empty()) return model;

    SegModel m = model;
    const int c_new = m.C + static_cast<int>(new_class_ids.size());
    Rng rng(mix_seed(seed, 0xE84A7DULL));
    const float new_bias = static_cast<float>(-std::log(static_cast<double>(c_new)));
    for (uint8_t id : new_class_ids) {
        m.channel_layout.push_back(id);
        for (int f = 0; f < m.F; ++f)
            m.head_w.push_back(static_cast<float>(rng.normal(0.0, 0.01)));
        m.head_b.push_back(new_bias);
    }
    m.C = c_new;
    return m;
}

// ---------------------------------------------------------------------------
// conv kernels, planar layout [channel][h*w]
// ---------------------------------------------------------------------------

namespace {

// 3x3 "same" conv with the nine taps fused per (out, in) pair
template <typename R>
void conv3x3(int h, int w, int cin, int cout, const R* in, const float* wts,
             const float* bias, R* out) {
    const size_t hw = static_cast<size_t>(h) * w;
    for (int o = 0; o < cout; ++o) {
        R* op = out + o * hw;
        const R b = bias ? static_cast<R>(bias[o]) : R(0);
        for (size_t p = 0; p < hw; ++p) op[p] = b;
        for (int i = 0; i < cin; ++i) {
            const R* ip = in + i * hw;
            const float* wp = wts + (static_cast<size_t>(o) * cin + i) * 9;
            const R w00 = wp[0], w01 = wp[1], w02 = wp[2];
            const R w10 = wp[3], w11 = wp[4], w12 = wp[5];
            const R w20 = wp[6], w21 = wp[7], w22 = wp[8];
            for (int y = 0; y < h; ++y) {
                const R* r0 = y > 0 ? ip + static_cast<size_t>(y - 1) * w : nullptr;
                const R* r1 = ip + static_cast<size_t>(y) * w;
                const R* r2 = y < h - 1 ? ip + static_cast<size_t>(y + 1) * w : nullptr;
                R* orow = op + static_cast<size_t>(y) * w;
                if (r0 && r2) {
                    for (int x = 1; x < w - 1; ++x)
                        orow[x] += w00 * r0[x - 1] + w01 * r0[x] + w02 * r0[x + 1] +
                                   w10 * r1[x - 1] + w11 * r1[x] + w12 * r1[x + 1] +
                                   w20 * r2[x - 1] + w21 * r2[x] + w22 * r2[x + 1];
                } else if (r2) {
                    for (int x = 1; x < w - 1; ++x)
                        orow[x] += w10 * r1[x - 1] + w11 * r1[x] + w12 * r1[x + 1] +
                                   w20 * r2[x - 1] + w21 * r2[x] + w22 * r2[x + 1];
                } else if (r0) {
                    for (int x = 1; x < w - 1; ++x)
                        orow[x] += w00 * r0[x - 1] + w01 * r0[x] + w02 * r0[x + 1] +
                                   w10 * r1[x - 1] + w11 * r1[x] + w12 * r1[x + 1];
                } else {
                    for (int x = 1; x < w - 1; ++x)
                        orow[x] += w10 * r1[x - 1] + w11 * r1[x] + w12 * r1[x + 1];
                }
                const R* rows[3] = {r0, r1, r2};
                auto border = [&](int x) {
                    R acc = R(0);
                    for (int ky = 0; ky < 3; ++ky) {
                        const R* r = rows[ky];
                        if (!r) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            const int xx = x + kx - 1;
                            if (xx < 0 || xx >= w) continue;
                            acc += static_cast<R>(wp[ky * 3 + kx]) * r[xx];
                        }
                    }
                    orow[x] += acc;
                };
                border(0);
                if (w > 1) border(w - 1);
            }
        }
    }
}

// weight gradient of one (out, in) pair: nine shifted dot products
template <typename R>
void conv3x3_wgrad(int h, int w, const R* dz, const R* in, R* dw9) {
    for (int ky = 0; ky < 3; ++ky) {
        const int dy = ky - 1;
        for (int kx = 0; kx < 3; ++kx) {
            const int dx = kx - 1;
            R acc = R(0);
            const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
            const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
            for (int y = y0; y < y1; ++y) {
                const R* dzr = dz + static_cast<size_t>(y) * w;
                const R* inr = in + static_cast<size_t>(y + dy) * w + dx;
                R row = R(0);
                for (int x = x0; x < x1; ++x) row += dzr[x] * inr[x];
                acc += row;
            }
            dw9[ky * 3 + kx] += acc;
        }
    }
}

template <typename R>
void relu_inplace(R* v, size_t n) {
    for (size_t i = 0; i < n; ++i) v[i] = v[i] > R(0) ? v[i] : R(0);
}

}  // namespace

template <typename R>
TensorT<R> forward(const SegModel& model, const Tensor3& image, ForwardTrace<R>* trace) {
    if (image.c != 3) throw ShapeError("forward: expected H x W x 3 image");
    const int h = image.h, w = image.w, F = model.F, C = model.C;
    const size_t hw = static_cast<size_t>(h) * w;

    ForwardTrace<R> local;
    ForwardTrace<R>& tr = trace ? *trace : local;
    tr.h = h;
    tr.w = w;
    tr.x.resize(3 * hw);
    tr.a1.resize(static_cast<size_t>(F) * hw);
    tr.a2.resize(static_cast<size_t>(F) * hw);

    for (int c = 0; c < 3; ++c)
        for (size_t p = 0; p < hw; ++p)
            tr.x[c * hw + p] = static_cast<R>(image.data[p * 3 + c]);

    conv3x3<R>(h, w, 3, F, tr.x.data(), model.conv1_w.data(), model.conv1_b.data(),
               tr.a1.data());
    relu_inplace(tr.a1.data(), tr.a1.size());
    conv3x3<R>(h, w, F, F, tr.a1.data(), model.conv2_w.data(), model.conv2_b.data(),
               tr.a2.data());
    relu_inplace(tr.a2.data(), tr.a2.size());

    TensorT<R> logits(h, w, C);
    for (size_t p = 0; p < hw; ++p) {
        R* lp = logits.data.data() + p * C;
        for (int o = 0; o < C; ++o) lp[o] = static_cast<R>(model.head_b[o]);
    }
    for (int o = 0; o < C; ++o) {
        const float* wrow = model.head_w.data() + static_cast<size_t>(o) * F;
        for (int f = 0; f < F; ++f) {
            const R wv = static_cast<R>(wrow[f]);
            const R* ap = tr.a2.data() + static_cast<size_t>(f) * hw;
            R* lp = logits.data.data() + o;
            for (size_t p = 0; p < hw; ++p) lp[p * C] += wv * ap[p];
        }
    }
    return logits;
}

template <typename R>
ProbMapT<R> softmax_probs(const TensorT<R>& logits, const std::vector<int>& class_ids) {
    if (logits.c != static_cast<int>(class_ids.size()))
        throw ShapeError("softmax: channel count mismatch");
    ProbMapT<R> pm;
    pm.class_ids = class_ids;
    pm.probs = TensorT<R>(logits.h, logits.w, logits.c);
    const int C = logits.c;
    const size_t hw = static_cast<size_t>(logits.h) * logits.w;
    for (size_t p = 0; p < hw; ++p) {
        const R* lp = logits.data.data() + p * C;
        R* pp = pm.probs.data.data() + p * C;
        R mx = lp[0];
        for (int c = 1; c < C; ++c) mx = std::max(mx, lp[c]);
        R sum = R(0);
        for (int c = 0; c < C; ++c) {
            pp[c] = std::exp(lp[c] - mx);
            sum += pp[c];
        }
        const R inv = R(1) / sum;
        for (int c = 0; c < C; ++c) pp[c] *= inv;
    }
    return pm;
}

template <typename R>
ProbMapT<R> softmax(const SegModel& model, const TensorT<R>& logits) {
    return softmax_probs(logits, model.channel_layout);
}

template <typename R>
GradsT<R> GradsT<R>::zeros_like(const SegModel& m) {
    GradsT<R> g;
    g.conv1_w.assign(m.conv1_w.size(), R(0));
    g.conv1_b.assign(m.conv1_b.size(), R(0));
    g.conv2_w.assign(m.conv2_w.size(), R(0));
    g.conv2_b.assign(m.conv2_b.size(), R(0));
    g.head_w.assign(m.head_w.size(), R(0));
    g.head_b.assign(m.head_b.size(), R(0));
    return g;
}

template <typename R>
void GradsT<R>::add_scaled(const GradsT<R>& other, R scale) {
    auto axpy = [scale](std::vector<R>& dst, const std::vector<R>& src) {
        if (dst.size() != src.size()) throw ShapeError("grads: size mismatch");
        for (size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
    };
    axpy(conv1_w, other.conv1_w);
    axpy(conv1_b, other.conv1_b);
    axpy(conv2_w, other.conv2_w);
    axpy(conv2_b, other.conv2_b);
    axpy(head_w, other.head_w);
    axpy(head_b, other.head_b);
}

template <typename R>
GradsT<R> backward(const SegModel& model, const ForwardTrace<R>& trace,
                   const TensorT<R>& dlogits) {
    const int h = trace.h, w = trace.w, F = model.F, C = model.C;
    if (dlogits.h != h || dlogits.w != w || dlogits.c != C)
        throw ShapeError("backward: upstream gradient shape mismatch");
    const size_t hw = static_cast<size_t>(h) * w;

    GradsT<R> g = GradsT<R>::zeros_like(model);

    // head
    std::vector<R> da2(static_cast<size_t>(F) * hw, R(0));
    for (int o = 0; o < C; ++o) {
        const R* dl = dlogits.data.data() + o;
        R db = R(0);
        for (size_t p = 0; p < hw; ++p) db += dl[p * C];
        g.head_b[o] = db;
        for (int f = 0; f < F; ++f) {
            const R* ap = trace.a2.data() + static_cast<size_t>(f) * hw;
            R* dap = da2.data() + static_cast<size_t>(f) * hw;
            const R wv = static_cast<R>(model.head_w[static_cast<size_t>(o) * F + f]);
            R dw = R(0);
            for (size_t p = 0; p < hw; ++p) {
                const R d = dl[p * C];
                dw += d * ap[p];
                dap[p] += wv * d;
            }
            g.head_w[static_cast<size_t>(o) * F + f] = dw;
        }
    }

    // ReLU mask: a > 0 iff pre-activation > 0
    for (size_t i = 0; i < da2.size(); ++i)
        if (!(trace.a2[i] > R(0))) da2[i] = R(0);

    // conv2 weight/bias grads and input grad
    std::vector<R> da1(static_cast<size_t>(F) * hw, R(0));
    std::vector<R> dw9(9);
    for (int o = 0; o < F; ++o) {
        const R* dz = da2.data() + static_cast<size_t>(o) * hw;
        R db = R(0);
        for (size_t p = 0; p < hw; ++p) db += dz[p];
        g.conv2_b[o] = db;
        for (int i = 0; i < F; ++i) {
            std::fill(dw9.begin(), dw9.end(), R(0));
            conv3x3_wgrad<R>(h, w, dz, trace.a1.data() + static_cast<size_t>(i) * hw,
                             dw9.data());
            for (int k = 0; k < 9; ++k)
                g.conv2_w[(static_cast<size_t>(o) * F + i) * 9 + k] = dw9[k];
        }
    }
    // da1 = conv-transpose(da2): same kernel with (o,i) swapped and taps flipped
    {
        std::vector<float> wflip(model.conv2_w.size());
        for (int o = 0; o < F; ++o)
            for (int i = 0; i < F; ++i)
                for (int k = 0; k < 9; ++k)
                    wflip[(static_cast<size_t>(i) * F + o) * 9 + k] =
                        model.conv2_w[(static_cast<size_t>(o) * F + i) * 9 + (8 - k)];
        conv3x3<R>(h, w, F, F, da2.data(), wflip.data(), nullptr, da1.data());
    }
    for (size_t i = 0; i < da1.size(); ++i)
        if (!(trace.a1[i] > R(0))) da1[i] = R(0);

    // conv1 grads; no input gradient needed
    for (int o = 0; o < F; ++o) {
        const R* dz = da1.data() + static_cast<size_t>(o) * hw;
        R db = R(0);
        for (size_t p = 0; p < hw; ++p) db += dz[p];
        g.conv1_b[o] = db;
        for (int i = 0; i < 3; ++i) {
            std::fill(dw9.begin(), dw9.end(), R(0));
            conv3x3_wgrad<R>(h, w, dz, trace.x.data() + static_cast<size_t>(i) * hw,
                             dw9.data());
            for (int k = 0; k < 9; ++k)
                g.conv1_w[(static_cast<size_t>(o) * 3 + i) * 9 + k] = dw9[k];
        }
    }
    return g;
}

void sgd_step(SegModel& model, const Grads& grads, float lr) {
    auto update = [lr](std::vector<float>& p, const std::vector<float>& g) {
        if (p.size() != g.size()) throw ShapeError("sgd_step: gradient size mismatch");
        for (size_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
    };
    update(model.conv1_w, grads.conv1_w);
    update(model.conv1_b, grads.conv1_b);
    update(model.conv2_w, grads.conv2_w);
    update(model.conv2_b, grads.conv2_b);
    update(model.head_w, grads.head_w);
    update(model.head_b, grads.head_b);
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

namespace {
constexpr char kCkptMagic[4] = {'S', 'E', 'G', 'C'};
constexpr uint32_t kCkptVersion = 1;
}  // namespace

void save_checkpoint(const SegModel& model, const std::string& path, uint64_t schedule_hash) {
    ByteWriter w(path);
    w.write(kCkptMagic, 4);
    w.write_u32(kCkptVersion);
    w.write_u32(static_cast<uint32_t>(model.step));
    w.write_u32(static_cast<uint32_t>(model.F));
    w.write_u32(static_cast<uint32_t>(model.C));
    for (int id : model.channel_layout) w.write_u32(static_cast<uint32_t>(id));
    for (const auto* vec : {&model.conv1_w, &model.conv1_b, &model.conv2_w, &model.conv2_b,
                            &model.head_w, &model.head_b})
        for (float v : *vec) w.write_f32(v);
    w.write_u64(schedule_hash);
    w.close_checked();
}

SegModel load_checkpoint(const std::string& path, uint64_t* schedule_hash_out) {
    ByteReader r(path);
    char magic[4];
    r.read(magic, 4, "magic");
    if (std::memcmp(magic, kCkptMagic, 4) != 0)
        throw FormatError("bad magic in " + path + ": expected \"SEGC\"");
    uint32_t version = r.read_u32("version");
    if (version != kCkptVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    SegModel m;
    m.step = static_cast<int>(r.read_u32("step"));
    m.F = static_cast<int>(r.read_u32("F"));
    m.C = static_cast<int>(r.read_u32("C"));
    if (m.F < 1 || m.C < 1 || m.F > 4096 || m.C > 255)
        throw FormatError("implausible model dims in " + path);
    for (int i = 0; i < m.C; ++i)
        m.channel_layout.push_back(static_cast<int>(r.read_u32("channel_layout")));
    auto read_vec = [&r](std::vector<float>& v, size_t n, const char* what) {
        v.resize(n);
        for (float& f : v) f = r.read_f32(what);
    };
    read_vec(m.conv1_w, static_cast<size_t>(m.F) * 3 * 9, "conv1_w");
    read_vec(m.conv1_b, static_cast<size_t>(m.F), "conv1_b");
    read_vec(m.conv2_w, static_cast<size_t>(m.F) * m.F * 9, "conv2_w");
    read_vec(m.conv2_b, static_cast<size_t>(m.F), "conv2_b");
    read_vec(m.head_w, static_cast<size_t>(m.C) * m.F, "head_w");
    read_vec(m.head_b, static_cast<size_t>(m.C), "head_b");
    uint64_t hash = r.read_u64("schedule_hash");
    if (schedule_hash_out) *schedule_hash_out = hash;
    return m;
}

// explicit instantiations: float for training, double for gradient checks
template TensorT<float> forward<float>(const SegModel&, const Tensor3&, ForwardTrace<float>*);
template TensorT<double> forward<double>(const SegModel&, const Tensor3&,
                                         ForwardTrace<double>*);
template ProbMapT<float> softmax_probs<float>(const TensorT<float>&, const std::vector<int>&);
template ProbMapT<double> softmax_probs<double>(const TensorT<double>&,
                                                const std::vector<int>&);
template ProbMapT<float> softmax<float>(const SegModel&, const TensorT<float>&);
template ProbMapT<double> softmax<double>(const SegModel&, const TensorT<double>&);
template struct GradsT<float>;
template struct GradsT<double>;
template GradsT<float> backward<float>(const SegModel&, const ForwardTrace<float>&,
                                       const TensorT<float>&);
template GradsT<double> backward<double>(const SegModel&, const ForwardTrace<double>&,
                                         const TensorT<double>&);

}  // namespace stylecl
