#pragma once

#include <optional>
#include <vector>

#include "stylecl/data.hpp"
#include "stylecl/model.hpp"
#include "stylecl/style.hpp"

namespace stylecl {

// ---------------------------------------------------------------------------
// channel grouping
// ---------------------------------------------------------------------------

enum class GroupMode {
    kPastIntoU,  // past + unknown pooled; layout covers the current class set
    kNewIntoU,   // new + unknown pooled; layout covers past classes
};

template <typename R>
struct GroupedProbMapT {
    TensorT<R> probs;            // H x W x C' grouped probabilities
    std::vector<int> class_ids;  // grouped channel -> class id
    GroupMode mode = GroupMode::kPastIntoU;
    TensorT<R> source_probs;     // pre-group softmax, H x W x C
    std::vector<int> src_to_grp; // source channel -> grouped channel
};

using GroupedProbMap = GroupedProbMapT<float>;

template <typename R>
GroupedProbMapT<R> group_past_into_u(const ProbMapT<R>& probs, const ClassSchedule& schedule,
                                     int t);
template <typename R>
GroupedProbMapT<R> group_new_into_u(const ProbMapT<R>& probs, const ClassSchedule& schedule,
                                    int t);

// ---------------------------------------------------------------------------
// losses; gradients are w.r.t. the pre-group logits
// ---------------------------------------------------------------------------

template <typename R>
struct LossGrad {
    double loss = 0.0;
    TensorT<R> dlogits;
    int valid_pixels = 0;
};

template <typename R>
LossGrad<R> ce_loss(const GroupedProbMapT<R>& grouped, const LabelMap& labels,
                    uint8_t ignore_id);

struct PseudoLabelMap {
    LabelMap labels;                // over past classes, plus 0 (u) and 255 (ignore)
    std::vector<int> source_style;  // winning style index per pixel, -1 if unused
};

template <typename R>
LossGrad<R> lws_loss(const GroupedProbMapT<R>& grouped_new_into_u,
                     const PseudoLabelMap& pseudo);

template <typename R>
LossGrad<R> kd_loss(const ProbMapT<R>& teacher_probs,
                    const GroupedProbMapT<R>& grouped_new_into_u);

// ---------------------------------------------------------------------------
// style-fused pseudo-labels
// ---------------------------------------------------------------------------

// Fusion rule over per-style teacher probability maps: per pixel pick the
// style with the highest peak (ties -> lowest style index), label with the
// argmax class of that map (ties -> lowest class id). A label is kept only
// where confident (peak > tau, or within the per-class top-K fraction of
// peaks); pixels supervised by the current ground truth become u, the rest
// become ignore.
PseudoLabelMap fuse_pseudo_labels(const std::vector<ProbMap>& style_maps,
                                  const std::vector<int>& style_indices, double tau,
                                  double topk_frac, const LabelMap& current_labels);

PseudoLabelMap pseudo_label(const SegModel& teacher, const Tensor3& image,
                            const StyleBank& bank, int t, double tau, double topk_frac,
                            const LabelMap& current_labels,
                            bool include_current_style = false);

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

struct LossMask {
    bool ce_n = true;
    bool ce_o = true;
    bool lws_n = true;
    bool kd_o = true;
};

struct Lambdas {
    double ce_o = 10.0;
    double lws_n = 10.0;
    double kd_o = 10.0;
};

struct LossBreakdown {
    double l_ce_n = 0.0;
    double l_ce_o = 0.0;
    double l_lws_n = 0.0;
    double l_kd_o = 0.0;
    double total = 0.0;
    int ce_n_pixels = 0;
    int ce_o_pixels = 0;
    int lws_pixels = 0;
    int kd_pixels = 0;
};

struct LossTraceRow {
    int step = 0;
    int epoch = 0;
    int sample = 0;
    LossBreakdown losses;
};

// One sample's combined objective: loss terms, and optionally the summed
// parameter gradient for a single SGD update.
template <typename R>
struct SampleLoss {
    LossBreakdown breakdown;
    GradsT<R> grads;
};

template <typename R>
SampleLoss<R> sample_losses(const SegModel& model, int t, const Tensor3& self_view,
                            const std::vector<Tensor3>& old_views,
                            const LabelMap& step_labels, const PseudoLabelMap* pseudo,
                            const std::vector<ProbMapT<R>>* teacher_probs,
                            const ClassSchedule& schedule, const Lambdas& lambdas,
                            const LossMask& mask, bool want_grads);

struct TrainConfig {
    float lr = 0.1f;
    int epochs = 15;
    double beta = 0.01;
    double tau = 0.9;
    double topk_frac = 0.66;
    Lambdas lambdas;
    LossMask mask;
    bool stylize = true;       // self- and oldly-stylization of training views
    bool cache_views = false;  // reuse stylized views and teacher products across epochs
    bool pseudo_include_current_style = false;
    uint64_t seed = 0;
    int feature_width = 16;
};

SegModel train_step(int t, const std::vector<LabeledSample>& train, const StyleBank& bank,
                    const SegModel* teacher, SegModel model, const ClassSchedule& schedule,
                    const TrainConfig& cfg, std::vector<LossTraceRow>* trace);

// ---------------------------------------------------------------------------
// incremental protocol
// ---------------------------------------------------------------------------

struct ProtocolConfig {
    ClassSchedule schedule;
    std::vector<DomainSpec> domains;
    int h = 64;
    int w = 64;
    TrainConfig train;
};

struct ProtocolResult {
    std::vector<SegModel> checkpoints;  // model state at the end of each step
    StyleBank bank;
};

// For t = 0..T-1: extract the step style into the bank, train on step-t data
// only, freeze the result as the next teacher. Training files of a step are
// never read after the step finishes.
ProtocolResult run_protocol(const ProtocolConfig& cfg, SampleStore& store,
                            std::vector<LossTraceRow>* trace);

}  // namespace stylecl
