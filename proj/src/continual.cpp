#include "stylecl/continual.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "stylecl/rng.hpp"

namespace stylecl {

// ---------------------------------------------------------------------------
// grouping
// ---------------------------------------------------------------------------

namespace {

template <typename R>
GroupedProbMapT<R> group_impl(const ProbMapT<R>& probs, const ClassSchedule& schedule, int t,
                              GroupMode mode) {
    if (t < 0 || t >= schedule.steps()) throw ProtocolError("grouping: step out of range");

    // the source layout must be exactly u + classes of steps 0..t
    std::vector<uint8_t> expected = schedule.classes_up_to(t);
    if (probs.class_ids.size() != expected.size() + 1 || probs.class_ids[0] != kUnknownId)
        throw ProtocolError("grouping: probability map layout does not cover steps 0..t");
    for (size_t i = 0; i < expected.size(); ++i)
        if (probs.class_ids[i + 1] != expected[i])
            throw ProtocolError("grouping: probability map layout does not match schedule");

    std::set<int> current(schedule.set_at(t).begin(), schedule.set_at(t).end());
    const int C = static_cast<int>(probs.class_ids.size());

    GroupedProbMapT<R> g;
    g.mode = mode;
    g.source_probs = probs.probs;
    g.src_to_grp.assign(static_cast<size_t>(C), 0);
    g.class_ids.push_back(kUnknownId);
    for (int c = 1; c < C; ++c) {
        const int id = probs.class_ids[static_cast<size_t>(c)];
        const bool is_current = current.count(id) > 0;
        const bool keep = (mode == GroupMode::kPastIntoU) ? is_current : !is_current;
        if (keep) {
            g.src_to_grp[static_cast<size_t>(c)] = static_cast<int>(g.class_ids.size());
            g.class_ids.push_back(id);
        } else {
            g.src_to_grp[static_cast<size_t>(c)] = 0;
        }
    }

    const int Cg = static_cast<int>(g.class_ids.size());
    g.probs = TensorT<R>(probs.probs.h, probs.probs.w, Cg);
    const size_t hw = static_cast<size_t>(probs.probs.h) * probs.probs.w;
    for (size_t p = 0; p < hw; ++p) {
        const R* sp = probs.probs.data.data() + p * C;
        R* gp = g.probs.data.data() + p * Cg;
        for (int c = 0; c < C; ++c) gp[g.src_to_grp[static_cast<size_t>(c)]] += sp[c];
    }
    return g;
}

}  // namespace

template <typename R>
GroupedProbMapT<R> group_past_into_u(const ProbMapT<R>& probs, const ClassSchedule& schedule,
                                     int t) {
    return group_impl(probs, schedule, t, GroupMode::kPastIntoU);
}

template <typename R>
GroupedProbMapT<R> group_new_into_u(const ProbMapT<R>& probs, const ClassSchedule& schedule,
                                    int t) {
    return group_impl(probs, schedule, t, GroupMode::kNewIntoU);
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

namespace {

constexpr double kProbFloor = 1e-30;

template <typename R>
LossGrad<R> zero_loss(const TensorT<R>& source_probs) {
    LossGrad<R> out;
    out.dlogits = TensorT<R>(source_probs.h, source_probs.w, source_probs.c);
    return out;
}

}  // namespace

template <typename R>
LossGrad<R> ce_loss(const GroupedProbMapT<R>& grouped, const LabelMap& labels,
                    uint8_t ignore_id) {
    if (labels.h != grouped.probs.h || labels.w != grouped.probs.w)
        throw ShapeError("ce_loss: label map shape mismatch");

    // class id -> grouped channel
    int id_to_grp[256];
    std::fill(std::begin(id_to_grp), std::end(id_to_grp), -1);
    for (size_t gch = 0; gch < grouped.class_ids.size(); ++gch)
        id_to_grp[grouped.class_ids[gch]] = static_cast<int>(gch);

    LossGrad<R> out = zero_loss(grouped.source_probs);
    const int C = grouped.source_probs.c;
    const int Cg = static_cast<int>(grouped.class_ids.size());
    const size_t hw = static_cast<size_t>(labels.h) * labels.w;

    double loss = 0.0;
    int valid = 0;
    for (size_t p = 0; p < hw; ++p) {
        const uint8_t label = labels.ids[p];
        if (label == ignore_id) continue;
        const int gch = id_to_grp[label];
        if (gch < 0)
            throw LabelError("ce_loss: label id " + std::to_string(label) +
                             " outside grouped layout");
        ++valid;
        const R pg = grouped.probs.data[p * Cg + gch];
        loss -= std::log(std::max(static_cast<double>(pg), kProbFloor));

        // dL/dz_c = p_c - [c in label group] * p_c / P_g
        const R* sp = grouped.source_probs.data.data() + p * C;
        R* dp = out.dlogits.data.data() + p * C;
        const R inv_pg = R(1) / std::max(pg, static_cast<R>(kProbFloor));
        for (int c = 0; c < C; ++c) {
            const bool in_group = grouped.src_to_grp[static_cast<size_t>(c)] == gch;
            dp[c] = sp[c] - (in_group ? sp[c] * inv_pg : R(0));
        }
    }
    if (valid == 0) return zero_loss(grouped.source_probs);

    const R inv_n = R(1) / static_cast<R>(valid);
    for (R& v : out.dlogits.data) v *= inv_n;
    out.loss = loss / valid;
    out.valid_pixels = valid;
    return out;
}

template <typename R>
LossGrad<R> lws_loss(const GroupedProbMapT<R>& grouped_new_into_u,
                     const PseudoLabelMap& pseudo) {
    if (grouped_new_into_u.mode != GroupMode::kNewIntoU)
        throw ProtocolError("lws_loss: expected new-into-u grouping");
    return ce_loss(grouped_new_into_u, pseudo.labels, kIgnoreId);
}

template <typename R>
LossGrad<R> kd_loss(const ProbMapT<R>& teacher_probs,
                    const GroupedProbMapT<R>& grouped_new_into_u) {
    const GroupedProbMapT<R>& g = grouped_new_into_u;
    if (g.mode != GroupMode::kNewIntoU) throw ProtocolError("kd_loss: expected new-into-u grouping");
    if (teacher_probs.class_ids != g.class_ids)
        throw ProtocolError("kd_loss: teacher and grouped student channels differ");
    if (teacher_probs.probs.h != g.probs.h || teacher_probs.probs.w != g.probs.w)
        throw ShapeError("kd_loss: shape mismatch");

    LossGrad<R> out = zero_loss(g.source_probs);
    const int C = g.source_probs.c;
    const int Cg = static_cast<int>(g.class_ids.size());
    const size_t hw = static_cast<size_t>(g.probs.h) * g.probs.w;

    double loss = 0.0;
    for (size_t p = 0; p < hw; ++p) {
        const R* tp = teacher_probs.probs.data.data() + p * Cg;
        const R* gp = g.probs.data.data() + p * Cg;
        const R* sp = g.source_probs.data.data() + p * C;
        R* dp = out.dlogits.data.data() + p * C;

        R sum_t = R(0);
        for (int j = 0; j < Cg; ++j) {
            loss -= static_cast<double>(tp[j]) *
                    std::log(std::max(static_cast<double>(gp[j]), kProbFloor));
            sum_t += tp[j];
        }
        for (int c = 0; c < C; ++c) {
            const int j = g.src_to_grp[static_cast<size_t>(c)];
            const R ratio = tp[j] / std::max(gp[j], static_cast<R>(kProbFloor));
            dp[c] = sp[c] * (sum_t - ratio);
        }
    }
    const R inv_n = R(1) / static_cast<R>(hw);
    for (R& v : out.dlogits.data) v *= inv_n;
    out.loss = loss / static_cast<double>(hw);
    out.valid_pixels = static_cast<int>(hw);
    return out;
}

// ---------------------------------------------------------------------------
// pseudo-labels
// ---------------------------------------------------------------------------

PseudoLabelMap fuse_pseudo_labels(const std::vector<ProbMap>& style_maps,
                                  const std::vector<int>& style_indices, double tau,
                                  double topk_frac, const LabelMap& current_labels) {
    if (style_maps.empty()) throw ProtocolError("fuse_pseudo_labels: no style maps");
    if (style_maps.size() != style_indices.size())
        throw ProtocolError("fuse_pseudo_labels: style index count mismatch");
    const ProbMap& first = style_maps.front();
    for (const ProbMap& m : style_maps) {
        if (m.probs.h != first.probs.h || m.probs.w != first.probs.w ||
            m.class_ids != first.class_ids)
            throw ShapeError("fuse_pseudo_labels: style map layout mismatch");
    }
    if (current_labels.h != first.probs.h || current_labels.w != first.probs.w)
        throw ShapeError("fuse_pseudo_labels: label shape mismatch");

    const int C = static_cast<int>(first.class_ids.size());
    const size_t hw = static_cast<size_t>(first.probs.h) * first.probs.w;

    // per pixel: winning style (highest peak, lowest index on ties), then the
    // argmax class of that style's vector (lowest class id on ties)
    std::vector<float> peak(hw);
    std::vector<int> win_class(hw);
    std::vector<int> win_style(hw);
    for (size_t p = 0; p < hw; ++p) {
        float best_peak = -1.0f;
        int best_style = -1;
        int best_map = -1;
        for (size_t m = 0; m < style_maps.size(); ++m) {
            const float* probs = style_maps[m].probs.data.data() + p * C;
            float mx = probs[0];
            for (int c = 1; c < C; ++c) mx = std::max(mx, probs[c]);
            if (mx > best_peak) {
                best_peak = mx;
                best_style = style_indices[m];
                best_map = static_cast<int>(m);
            }
        }
        const float* probs = style_maps[static_cast<size_t>(best_map)].probs.data.data() + p * C;
        int best_id = first.class_ids[0];
        float best_prob = probs[0];
        for (int c = 1; c < C; ++c) {
            if (probs[c] > best_prob ||
                (probs[c] == best_prob && first.class_ids[static_cast<size_t>(c)] < best_id)) {
                best_prob = probs[c];
                best_id = first.class_ids[static_cast<size_t>(c)];
            }
        }
        peak[p] = best_peak;
        win_class[p] = best_id;
        win_style[p] = best_style;
    }

    // confidence: peak above tau, or within the top-K fraction of peaks among
    // pixels fused to the same class in this image
    std::vector<char> confident(hw, 0);
    for (size_t p = 0; p < hw; ++p)
        if (static_cast<double>(peak[p]) > tau) confident[p] = 1;
    if (topk_frac > 0.0) {
        std::map<int, std::vector<float>> peaks_by_class;
        for (size_t p = 0; p < hw; ++p) peaks_by_class[win_class[p]].push_back(peak[p]);
        std::map<int, float> threshold;
        for (auto& [cls, peaks] : peaks_by_class) {
            const size_t cutoff = static_cast<size_t>(
                std::ceil(topk_frac * static_cast<double>(peaks.size())));
            if (cutoff == 0) continue;
            std::sort(peaks.begin(), peaks.end(), std::greater<float>());
            threshold[cls] = peaks[std::min(cutoff, peaks.size()) - 1];
        }
        for (size_t p = 0; p < hw; ++p) {
            auto it = threshold.find(win_class[p]);
            if (it != threshold.end() && peak[p] >= it->second) confident[p] = 1;
        }
    }

    // refinement against the current ground truth
    PseudoLabelMap out;
    out.labels = LabelMap(first.probs.h, first.probs.w);
    out.source_style.assign(hw, -1);
    for (size_t p = 0; p < hw; ++p) {
        if (current_labels.ids[p] != kUnknownId) {
            out.labels.ids[p] = kUnknownId;
        } else if (confident[p]) {
            out.labels.ids[p] = static_cast<uint8_t>(win_class[p]);
            out.source_style[p] = win_style[p];
        } else {
            out.labels.ids[p] = kIgnoreId;
        }
    }
    return out;
}

PseudoLabelMap pseudo_label(const SegModel& teacher, const Tensor3& image,
                            const StyleBank& bank, int t, double tau, double topk_frac,
                            const LabelMap& current_labels, bool include_current_style) {
    if (t < 1) throw ProtocolError("pseudo_label: needs t >= 1");
    if (bank.size() < t) throw ProtocolError("pseudo_label: bank lacks styles 0.." +
                                             std::to_string(t - 1));
    std::vector<ProbMap> maps;
    std::vector<int> indices;
    const int last = include_current_style && bank.has(t) ? t : t - 1;
    for (int k = 0; k <= last; ++k) {
        Tensor3 view = apply_style(image, bank.token(k));
        maps.push_back(softmax<float>(teacher, forward<float>(teacher, view)));
        indices.push_back(k);
    }
    return fuse_pseudo_labels(maps, indices, tau, topk_frac, current_labels);
}

// ---------------------------------------------------------------------------
// per-sample objective
// ---------------------------------------------------------------------------

template <typename R>
SampleLoss<R> sample_losses(const SegModel& model, int t, const Tensor3& self_view,
                            const std::vector<Tensor3>& old_views,
                            const LabelMap& step_labels, const PseudoLabelMap* pseudo,
                            const std::vector<ProbMapT<R>>* teacher_probs,
                            const ClassSchedule& schedule, const Lambdas& lambdas,
                            const LossMask& mask, bool want_grads) {
    SampleLoss<R> out;
    if (want_grads) out.grads = GradsT<R>::zeros_like(model);

    const bool do_ce_n = mask.ce_n;
    const bool do_ce_o = mask.ce_o && t > 0 && lambdas.ce_o != 0.0;
    const bool do_lws = mask.lws_n && t > 0 && lambdas.lws_n != 0.0;
    const bool do_kd = mask.kd_o && t > 0 && lambdas.kd_o != 0.0;

    if ((do_ce_o || do_kd) && static_cast<int>(old_views.size()) != t)
        throw ProtocolError("sample_losses: expected one old view per past step");
    if (do_lws && !pseudo) throw ProtocolError("sample_losses: pseudo-labels missing");
    if (do_kd && (!teacher_probs || static_cast<int>(teacher_probs->size()) != t))
        throw ProtocolError("sample_losses: teacher probabilities missing");

    // self-stylized view: task CE on the new classes + hard distillation
    if (do_ce_n || do_lws) {
        ForwardTrace<R> trace;
        TensorT<R> logits = forward<R>(model, self_view, &trace);
        ProbMapT<R> probs = softmax<R>(model, logits);
        TensorT<R> dlogits(logits.h, logits.w, logits.c);
        if (do_ce_n) {
            GroupedProbMapT<R> grouped = group_past_into_u(probs, schedule, t);
            LossGrad<R> ce = ce_loss(grouped, step_labels, kIgnoreId);
            out.breakdown.l_ce_n = ce.loss;
            out.breakdown.ce_n_pixels = ce.valid_pixels;
            for (size_t i = 0; i < dlogits.data.size(); ++i) dlogits.data[i] += ce.dlogits.data[i];
        }
        if (do_lws) {
            GroupedProbMapT<R> grouped = group_new_into_u(probs, schedule, t);
            LossGrad<R> lws = lws_loss(grouped, *pseudo);
            out.breakdown.l_lws_n = lws.loss;
            out.breakdown.lws_pixels = lws.valid_pixels;
            const R lam = static_cast<R>(lambdas.lws_n);
            for (size_t i = 0; i < dlogits.data.size(); ++i)
                dlogits.data[i] += lam * lws.dlogits.data[i];
        }
        if (want_grads) out.grads.add_scaled(backward<R>(model, trace, dlogits), R(1));
    }

    // oldly-stylized views: task CE under past styles + soft distillation
    if (do_ce_o || do_kd) {
        const double inv_t = 1.0 / static_cast<double>(t);
        for (int k = 0; k < t; ++k) {
            ForwardTrace<R> trace;
            TensorT<R> logits = forward<R>(model, old_views[static_cast<size_t>(k)], &trace);
            ProbMapT<R> probs = softmax<R>(model, logits);
            TensorT<R> dlogits(logits.h, logits.w, logits.c);
            if (do_ce_o) {
                GroupedProbMapT<R> grouped = group_past_into_u(probs, schedule, t);
                LossGrad<R> ce = ce_loss(grouped, step_labels, kIgnoreId);
                out.breakdown.l_ce_o += ce.loss * inv_t;
                out.breakdown.ce_o_pixels += ce.valid_pixels;
                const R scale = static_cast<R>(lambdas.ce_o * inv_t);
                for (size_t i = 0; i < dlogits.data.size(); ++i)
                    dlogits.data[i] += scale * ce.dlogits.data[i];
            }
            if (do_kd) {
                GroupedProbMapT<R> grouped = group_new_into_u(probs, schedule, t);
                LossGrad<R> kd = kd_loss((*teacher_probs)[static_cast<size_t>(k)], grouped);
                out.breakdown.l_kd_o += kd.loss * inv_t;
                out.breakdown.kd_pixels += kd.valid_pixels;
                const R scale = static_cast<R>(lambdas.kd_o * inv_t);
                for (size_t i = 0; i < dlogits.data.size(); ++i)
                    dlogits.data[i] += scale * kd.dlogits.data[i];
            }
            if (want_grads) out.grads.add_scaled(backward<R>(model, trace, dlogits), R(1));
        }
    }

    out.breakdown.total = out.breakdown.l_ce_n + lambdas.ce_o * out.breakdown.l_ce_o +
                          lambdas.lws_n * out.breakdown.l_lws_n +
                          lambdas.kd_o * out.breakdown.l_kd_o;
    return out;
}

// ---------------------------------------------------------------------------
// per-step trainer
// ---------------------------------------------------------------------------

namespace {

struct SampleProducts {
    Tensor3 self_view;
    std::vector<Tensor3> old_views;
    PseudoLabelMap pseudo;
    std::vector<ProbMapT<float>> teacher_probs;
    bool pseudo_ready = false;
};

}  // namespace

SegModel train_step(int t, const std::vector<LabeledSample>& train, const StyleBank& bank,
                    const SegModel* teacher, SegModel model, const ClassSchedule& schedule,
                    const TrainConfig& cfg, std::vector<LossTraceRow>* trace) {
    if (train.empty()) throw ProtocolError("train_step: empty training set");
    if ((t >= 1) != (teacher != nullptr))
        throw ProtocolError("train_step: teacher must be present exactly when t >= 1");
    if (cfg.stylize && bank.size() < t + 1)
        throw ProtocolError("train_step: bank must hold styles 0..t");

    LossMask mask = cfg.mask;
    if (t == 0) mask.ce_o = mask.lws_n = mask.kd_o = false;
    const bool need_old_views =
        (mask.ce_o && cfg.lambdas.ce_o != 0.0) || (mask.kd_o && cfg.lambdas.kd_o != 0.0);
    const bool need_pseudo = mask.lws_n && cfg.lambdas.lws_n != 0.0;

    std::vector<SampleProducts> cache;
    if (cfg.cache_views) cache.resize(train.size());

    const int n = static_cast<int>(train.size());
    std::vector<int> order(static_cast<size_t>(n));
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng(mix_seed(cfg.seed, 0x0D0EULL + static_cast<uint64_t>(t), epoch));
        std::shuffle(order.begin(), order.end(), shuffle_rng.engine());

        for (int idx : order) {
            const LabeledSample& sample = train[static_cast<size_t>(idx)];
            SampleProducts fresh;
            SampleProducts& prod = cfg.cache_views ? cache[static_cast<size_t>(idx)] : fresh;

            if (!prod.pseudo_ready) {
                prod.self_view = cfg.stylize ? apply_style(sample.image, bank.token(t))
                                             : sample.image;
                if (t > 0 && (need_old_views || need_pseudo)) {
                    for (int k = 0; k < t; ++k)
                        prod.old_views.push_back(cfg.stylize
                                                     ? apply_style(sample.image, bank.token(k))
                                                     : sample.image);
                    if (need_pseudo || (mask.kd_o && cfg.lambdas.kd_o != 0.0)) {
                        std::vector<ProbMap> maps;
                        std::vector<int> indices;
                        for (int k = 0; k < t; ++k) {
                            maps.push_back(softmax<float>(
                                *teacher, forward<float>(*teacher, prod.old_views[k])));
                            indices.push_back(k);
                        }
                        prod.teacher_probs = maps;
                        if (need_pseudo) {
                            if (cfg.pseudo_include_current_style) {
                                maps.push_back(softmax<float>(
                                    *teacher, forward<float>(*teacher, prod.self_view)));
                                indices.push_back(t);
                            }
                            prod.pseudo = fuse_pseudo_labels(maps, indices, cfg.tau,
                                                             cfg.topk_frac,
                                                             sample.step_labels);
                        }
                    }
                }
                prod.pseudo_ready = true;
            }

            SampleLoss<float> result = sample_losses<float>(
                model, t, prod.self_view, prod.old_views, sample.step_labels,
                need_pseudo ? &prod.pseudo : nullptr,
                prod.teacher_probs.empty() ? nullptr : &prod.teacher_probs, schedule,
                cfg.lambdas, mask, true);
            sgd_step(model, result.grads, cfg.lr);

            if (trace) trace->push_back({t, epoch, idx, result.breakdown});
        }
    }
    return model;
}

// ---------------------------------------------------------------------------
// protocol
// ---------------------------------------------------------------------------

ProtocolResult run_protocol(const ProtocolConfig& cfg, SampleStore& store,
                            std::vector<LossTraceRow>* trace) {
    cfg.schedule.validate();
    if (cfg.schedule.steps() != static_cast<int>(cfg.domains.size()))
        throw ConfigError("run_protocol: schedule and domain sequence lengths differ");

    ProtocolResult result;
    result.bank.image_h = cfg.h;
    result.bank.image_w = cfg.w;
    result.bank.beta = cfg.train.beta;

    SegModel model;
    SegModel teacher;
    for (int t = 0; t < cfg.schedule.steps(); ++t) {
        store.set_phase("train_step_" + std::to_string(t));
        std::vector<LabeledSample> train = store.load_train(t);

        std::vector<Tensor3> images;
        images.reserve(train.size());
        for (const LabeledSample& s : train) images.push_back(s.image);
        result.bank = bank_add(result.bank, extract_style(images, cfg.train.beta, t));

        if (t == 0)
            model = init_model(cfg.train.seed, cfg.train.feature_width, cfg.schedule.set_at(0));
        else
            model = expand_head(model, cfg.schedule.set_at(t),
                                mix_seed(cfg.train.seed, 0xE4BA7DULL, t));
        model.step = t;

        TrainConfig step_cfg = cfg.train;
        model = train_step(t, train, result.bank, t > 0 ? &teacher : nullptr,
                           std::move(model), cfg.schedule, step_cfg, trace);

        teacher = freeze(model);
        result.checkpoints.push_back(model);
    }
    store.set_phase("idle");
    return result;
}

// explicit instantiations
template GroupedProbMapT<float> group_past_into_u<float>(const ProbMapT<float>&,
                                                         const ClassSchedule&, int);
template GroupedProbMapT<double> group_past_into_u<double>(const ProbMapT<double>&,
                                                           const ClassSchedule&, int);
template GroupedProbMapT<float> group_new_into_u<float>(const ProbMapT<float>&,
                                                        const ClassSchedule&, int);
template GroupedProbMapT<double> group_new_into_u<double>(const ProbMapT<double>&,
                                                          const ClassSchedule&, int);
template LossGrad<float> ce_loss<float>(const GroupedProbMapT<float>&, const LabelMap&, uint8_t);
template LossGrad<double> ce_loss<double>(const GroupedProbMapT<double>&, const LabelMap&,
                                          uint8_t);
template LossGrad<float> lws_loss<float>(const GroupedProbMapT<float>&, const PseudoLabelMap&);
template LossGrad<double> lws_loss<double>(const GroupedProbMapT<double>&,
                                           const PseudoLabelMap&);
template LossGrad<float> kd_loss<float>(const ProbMapT<float>&, const GroupedProbMapT<float>&);
template LossGrad<double> kd_loss<double>(const ProbMapT<double>&,
                                          const GroupedProbMapT<double>&);
template SampleLoss<float> sample_losses<float>(const SegModel&, int, const Tensor3&,
                                                const std::vector<Tensor3>&, const LabelMap&,
                                                const PseudoLabelMap*,
                                                const std::vector<ProbMapT<float>>*,
                                                const ClassSchedule&, const Lambdas&,
                                                const LossMask&, bool);
template SampleLoss<double> sample_losses<double>(const SegModel&, int, const Tensor3&,
                                                  const std::vector<Tensor3>&, const LabelMap&,
                                                  const PseudoLabelMap*,
                                                  const std::vector<ProbMapT<double>>*,
                                                  const ClassSchedule&, const Lambdas&,
                                                  const LossMask&, bool);

}  // namespace stylecl
