#pragma once

#include <string>
#include <vector>

#include "stylecl/tensor.hpp"

namespace stylecl {

// Three-layer per-pixel classifier: conv3x3(3->F) + ReLU, conv3x3(F->F) +
// ReLU, conv1x1(F->C). "Same" zero padding throughout. Channel 0 is the
// shared unknown class; one channel per real class, appended in step order.
//
// Parameters are float32 (the checkpoint precision); the compute path is
// templated so training runs float and gradient checks run double.
struct SegModel {
    int F = 16;
    int C = 0;
    int step = 0;
    std::vector<int> channel_layout;  // channel -> class id, layout[0] == 0
    std::vector<float> conv1_w;       // [F][3][3][3] (out, in, ky, kx)
    std::vector<float> conv1_b;       // [F]
    std::vector<float> conv2_w;       // [F][F][3][3]
    std::vector<float> conv2_b;       // [F]
    std::vector<float> head_w;        // [C][F]
    std::vector<float> head_b;        // [C]

    int channel_of(int class_id) const;
    size_t param_count() const;
};

SegModel init_model(uint64_t seed, int feature_width,
                    const std::vector<uint8_t>& initial_class_ids);

// Appends head rows for new classes: weights N(0, 0.01^2), bias -log(C_new).
// Existing rows are untouched.
SegModel expand_head(const SegModel& model, const std::vector<uint8_t>& new_class_ids,
                     uint64_t seed);

template <typename R>
struct ForwardTrace {
    int h = 0, w = 0;
    std::vector<R> x;   // 3 planes
    std::vector<R> a1;  // F planes, post-ReLU
    std::vector<R> a2;  // F planes, post-ReLU
};

template <typename R>
TensorT<R> forward(const SegModel& model, const Tensor3& image, ForwardTrace<R>* trace);

template <typename R>
TensorT<R> forward(const SegModel& model, const Tensor3& image) {
    return forward<R>(model, image, nullptr);
}

// Per-pixel probabilities with the channel -> class id layout attached.
template <typename R>
struct ProbMapT {
    TensorT<R> probs;
    std::vector<int> class_ids;
};

using ProbMap = ProbMapT<float>;

// max-subtracted softmax over channels, per pixel
template <typename R>
ProbMapT<R> softmax_probs(const TensorT<R>& logits, const std::vector<int>& class_ids);

template <typename R>
ProbMapT<R> softmax(const SegModel& model, const TensorT<R>& logits);

template <typename R>
struct GradsT {
    std::vector<R> conv1_w, conv1_b, conv2_w, conv2_b, head_w, head_b;

    static GradsT zeros_like(const SegModel& m);
    void add_scaled(const GradsT& other, R scale);
};

using Grads = GradsT<float>;

template <typename R>
GradsT<R> backward(const SegModel& model, const ForwardTrace<R>& trace,
                   const TensorT<R>& dlogits);

void sgd_step(SegModel& model, const Grads& grads, float lr);

// teacher = immutable copy of the model at the end of a step
inline SegModel freeze(const SegModel& model) { return model; }

// checkpoint: magic "SEGC", version u32, step u32, F u32, C u32,
// channel_layout C x u32, params f32 LE in declaration order, schedule
// hash u64 trailer.
void save_checkpoint(const SegModel& model, const std::string& path, uint64_t schedule_hash);
SegModel load_checkpoint(const std::string& path, uint64_t* schedule_hash_out = nullptr);

}  // namespace stylecl
