#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "stylecl/continual.hpp"
#include "stylecl/rng.hpp"

using namespace stylecl;
namespace fs = std::filesystem;

namespace {

// u + {1,2} at step 0, u + {3,4,5,6} at step 1
ClassSchedule schedule_2_4() {
    ClassSchedule s;
    s.sets = {{1, 2}, {3, 4, 5, 6}};
    s.class_names = {{1, "sky"},  {2, "road"}, {3, "building"},
                     {4, "pole"}, {5, "car"},  {6, "person"}};
    return s;
}

ClassSchedule schedule_2_2() {
    ClassSchedule s;
    s.sets = {{1, 2}, {5, 6}};
    s.class_names = {{1, "sky"}, {2, "road"}, {5, "car"}, {6, "person"}};
    return s;
}

template <typename R>
ProbMapT<R> random_probs(int h, int w, const std::vector<int>& ids, uint64_t seed) {
    Rng rng(seed);
    ProbMapT<R> pm;
    pm.class_ids = ids;
    pm.probs = TensorT<R>(h, w, static_cast<int>(ids.size()));
    const int C = pm.probs.c;
    for (size_t p = 0; p < static_cast<size_t>(h) * w; ++p) {
        R sum = R(0);
        for (int c = 0; c < C; ++c) {
            R v = static_cast<R>(rng.uniform(0.01, 1.0));
            pm.probs.data[p * C + c] = v;
            sum += v;
        }
        for (int c = 0; c < C; ++c) pm.probs.data[p * C + c] /= sum;
    }
    return pm;
}

std::vector<int> layout_0_to(int last_id) {
    std::vector<int> ids = {0};
    for (int id = 1; id <= last_id; ++id) ids.push_back(id);
    return ids;
}

LabeledSample make_sample(const DomainSpec& domain, uint64_t seed, int h, int w,
                          const std::vector<uint8_t>& class_set) {
    LabeledSample s;
    generate_scene(domain, seed, h, w, s.image, s.full_labels);
    s.step_labels = mask_labels(s.full_labels, class_set);
    return s;
}

}  // namespace

TEST_SUITE("continual") {

TEST_CASE("grouping at step zero") {
    ClassSchedule sched = schedule_2_4();
    ProbMapT<float> pm = random_probs<float>(4, 4, {0, 1, 2}, 1);
    GroupedProbMapT<float> past = group_past_into_u(pm, sched, 0);
    CHECK(past.class_ids == std::vector<int>{0, 1, 2});
    CHECK(past.probs.data == pm.probs.data);

    GroupedProbMapT<float> nw = group_new_into_u(pm, sched, 0);
    CHECK(nw.class_ids == std::vector<int>{0});
    for (float v : nw.probs.data) CHECK(v == doctest::Approx(1.0f).epsilon(1e-6));
}

TEST_CASE("uniform seven-channel grouping arithmetic") {
    ClassSchedule sched = schedule_2_4();
    ProbMapT<float> pm;
    pm.class_ids = layout_0_to(6);
    pm.probs = TensorT<float>(2, 2, 7, 1.0f / 7.0f);

    GroupedProbMapT<float> past = group_past_into_u(pm, sched, 1);
    CHECK(past.class_ids == std::vector<int>{0, 3, 4, 5, 6});
    for (size_t p = 0; p < 4; ++p) {
        CHECK(past.probs.data[p * 5] == doctest::Approx(3.0 / 7.0).epsilon(1e-6));
        for (int c = 1; c < 5; ++c)
            CHECK(past.probs.data[p * 5 + c] == doctest::Approx(1.0 / 7.0).epsilon(1e-6));
    }

    GroupedProbMapT<float> nw = group_new_into_u(pm, sched, 1);
    CHECK(nw.class_ids == std::vector<int>{0, 1, 2});
    for (size_t p = 0; p < 4; ++p)
        CHECK(nw.probs.data[p * 3] == doctest::Approx(5.0 / 7.0).epsilon(1e-6));
}

TEST_CASE("grouping conserves mass and partitions the real classes") {
    ClassSchedule sched = schedule_2_4();
    for (uint64_t seed = 0; seed < 50; ++seed) {
        ProbMapT<float> pm = random_probs<float>(6, 5, layout_0_to(6), 100 + seed);
        GroupedProbMapT<float> past = group_past_into_u(pm, sched, 1);
        GroupedProbMapT<float> nw = group_new_into_u(pm, sched, 1);
        for (size_t p = 0; p < 30; ++p) {
            float s1 = 0, s2 = 0;
            for (int c = 0; c < past.probs.c; ++c) s1 += past.probs.data[p * past.probs.c + c];
            for (int c = 0; c < nw.probs.c; ++c) s2 += nw.probs.data[p * nw.probs.c + c];
            CHECK(std::abs(s1 - 1.0f) < 1e-6f);
            CHECK(std::abs(s2 - 1.0f) < 1e-6f);
            // both pooled channels include the raw u mass
            CHECK(past.probs.data[p * past.probs.c] >= pm.probs.data[p * 7] - 1e-7f);
            CHECK(nw.probs.data[p * nw.probs.c] >= pm.probs.data[p * 7] - 1e-7f);
        }
        std::set<int> past_ids(past.class_ids.begin() + 1, past.class_ids.end());
        std::set<int> new_ids(nw.class_ids.begin() + 1, nw.class_ids.end());
        for (int id : past_ids) CHECK(!new_ids.count(id));
    }
}

TEST_CASE("grouping rejects mismatched layouts") {
    ClassSchedule sched = schedule_2_4();
    ProbMapT<float> pm = random_probs<float>(2, 2, {0, 1, 2}, 3);
    CHECK_THROWS_AS(group_past_into_u(pm, sched, 1), ProtocolError);
}

TEST_CASE("cross-entropy closed forms") {
    ClassSchedule sched = schedule_2_4();
    const std::vector<int> ids = layout_0_to(6);

    // uniform prediction: loss is log of the grouped channel count
    ProbMapT<double> uniform;
    uniform.class_ids = ids;
    uniform.probs = TensorT<double>(3, 3, 7, 1.0 / 7.0);
    LabelMap labels(3, 3, 3);
    GroupedProbMapT<double> grouped = group_past_into_u(uniform, sched, 1);
    LossGrad<double> lg = ce_loss(grouped, labels, kIgnoreId);
    CHECK(lg.loss == doctest::Approx(std::log(7.0)).epsilon(1e-6));
    CHECK(lg.valid_pixels == 9);

    // near-one-hot prediction on the labeled channel
    TensorT<double> logits(3, 3, 7, 0.0);
    for (size_t p = 0; p < 9; ++p) logits.data[p * 7 + 3] = 40.0;  // class id 3
    ProbMapT<double> hot = softmax_probs(logits, ids);
    LossGrad<double> lg2 = ce_loss(group_past_into_u(hot, sched, 1), labels, kIgnoreId);
    CHECK(lg2.loss < 1e-5);

    LabelMap bad(3, 3, 9);  // id 9 not in any layout
    CHECK_THROWS_AS(ce_loss(grouped, bad, kIgnoreId), LabelError);
}

TEST_CASE("cross-entropy gradient matches finite differences through the composite") {
    ClassSchedule sched = schedule_2_4();
    const std::vector<int> ids = layout_0_to(6);
    Rng rng(7);
    TensorT<double> logits(4, 4, 7);
    for (double& v : logits.data) v = rng.uniform(-2.0, 2.0);
    LabelMap labels(4, 4);
    for (auto& id : labels.ids) id = static_cast<uint8_t>(rng.uniform_int(3, 6));
    labels.ids[5] = kIgnoreId;
    labels.ids[9] = kUnknownId;

    auto loss_at = [&](const TensorT<double>& z) {
        return ce_loss(group_past_into_u(softmax_probs(z, ids), sched, 1), labels, kIgnoreId)
            .loss;
    };
    LossGrad<double> lg =
        ce_loss(group_past_into_u(softmax_probs(logits, ids), sched, 1), labels, kIgnoreId);
    const double eps = 1e-5;
    for (size_t i = 0; i < logits.data.size(); ++i) {
        TensorT<double> z = logits;
        z.data[i] += eps;
        double hi = loss_at(z);
        z.data[i] -= 2 * eps;
        double lo = loss_at(z);
        double fd = (hi - lo) / (2 * eps);
        CHECK(std::abs(fd - lg.dlogits.data[i]) <
              1e-4 * std::max({std::abs(fd), std::abs(lg.dlogits.data[i]), 1e-6}));
    }
}

TEST_CASE("hard distillation loss on pseudo-labels") {
    ClassSchedule sched = schedule_2_4();
    const std::vector<int> ids = layout_0_to(6);
    ProbMapT<double> pm = random_probs<double>(4, 4, ids, 11);
    GroupedProbMapT<double> grouped = group_new_into_u(pm, sched, 1);

    PseudoLabelMap ignore_all;
    ignore_all.labels = LabelMap(4, 4, kIgnoreId);
    LossGrad<double> lg = lws_loss(grouped, ignore_all);
    CHECK(lg.loss == 0.0);
    CHECK(lg.valid_pixels == 0);
    for (double v : lg.dlogits.data) CHECK(v == 0.0);

    // confident self-consistent prediction: argmax matches the pseudo-label
    TensorT<double> logits(4, 4, 7, 0.0);
    PseudoLabelMap pseudo;
    pseudo.labels = LabelMap(4, 4);
    Rng rng(12);
    for (size_t p = 0; p < 16; ++p) {
        int pick = rng.uniform_int(1, 2);  // old class ids
        pseudo.labels.ids[p] = static_cast<uint8_t>(pick);
        logits.data[p * 7 + pick] = 30.0;
    }
    GroupedProbMapT<double> g2 = group_new_into_u(softmax_probs(logits, ids), sched, 1);
    CHECK(lws_loss(g2, pseudo).loss < 1e-3);

    GroupedProbMapT<double> wrong_mode = group_past_into_u(pm, sched, 1);
    CHECK_THROWS_AS(lws_loss(wrong_mode, pseudo), ProtocolError);
}

TEST_CASE("soft distillation reduces to hard CE for a one-hot teacher") {
    ClassSchedule sched = schedule_2_4();
    const std::vector<int> ids = layout_0_to(6);
    ProbMapT<double> student = random_probs<double>(4, 4, ids, 21);
    GroupedProbMapT<double> grouped = group_new_into_u(student, sched, 1);

    // teacher == student distribution: loss equals the teacher entropy
    ProbMapT<double> same;
    same.class_ids = grouped.class_ids;
    same.probs = grouped.probs;
    double entropy = 0.0;
    for (size_t p = 0; p < 16; ++p)
        for (int c = 0; c < grouped.probs.c; ++c) {
            double q = grouped.probs.data[p * grouped.probs.c + c];
            entropy -= q * std::log(q);
        }
    entropy /= 16.0;
    CHECK(kd_loss(same, grouped).loss == doctest::Approx(entropy).epsilon(1e-9));

    // one-hot teacher on channel u
    ProbMapT<double> onehot;
    onehot.class_ids = grouped.class_ids;
    onehot.probs = TensorT<double>(4, 4, grouped.probs.c, 0.0);
    for (size_t p = 0; p < 16; ++p) onehot.probs.data[p * grouped.probs.c] = 1.0;
    LabelMap all_u(4, 4, kUnknownId);
    double hard = ce_loss(grouped, all_u, kIgnoreId).loss;
    CHECK(kd_loss(onehot, grouped).loss == doctest::Approx(hard).epsilon(1e-9));
}

TEST_CASE("soft distillation gradient matches finite differences") {
    ClassSchedule sched = schedule_2_4();
    const std::vector<int> ids = layout_0_to(6);
    Rng rng(31);
    TensorT<double> logits(3, 3, 7);
    for (double& v : logits.data) v = rng.uniform(-2.0, 2.0);
    ProbMapT<double> teacher;
    {
        ProbMapT<double> full = random_probs<double>(3, 3, ids, 32);
        GroupedProbMapT<double> gt = group_new_into_u(full, sched, 1);
        teacher.class_ids = gt.class_ids;
        teacher.probs = gt.probs;
    }
    auto loss_at = [&](const TensorT<double>& z) {
        return kd_loss(teacher, group_new_into_u(softmax_probs(z, ids), sched, 1)).loss;
    };
    LossGrad<double> lg =
        kd_loss(teacher, group_new_into_u(softmax_probs(logits, ids), sched, 1));
    const double eps = 1e-5;
    for (size_t i = 0; i < logits.data.size(); ++i) {
        TensorT<double> z = logits;
        z.data[i] += eps;
        double hi = loss_at(z);
        z.data[i] -= 2 * eps;
        double lo = loss_at(z);
        double fd = (hi - lo) / (2 * eps);
        CHECK(std::abs(fd - lg.dlogits.data[i]) <
              1e-4 * std::max({std::abs(fd), std::abs(lg.dlogits.data[i]), 1e-6}));
    }
}

TEST_CASE("pseudo-label fusion picks the style with the strongest peak") {
    const std::vector<int> ids = {0, 1, 2};
    ProbMapT<float> style0, style1;
    style0.class_ids = style1.class_ids = ids;
    style0.probs = TensorT<float>(1, 1, 3);
    style1.probs = TensorT<float>(1, 1, 3);
    // style 0 peaks 0.95 on class 1, style 1 peaks 0.80 on class 2
    style0.probs.data = {0.03f, 0.95f, 0.02f};
    style1.probs.data = {0.10f, 0.10f, 0.80f};
    LabelMap current(1, 1, kUnknownId);
    PseudoLabelMap out = fuse_pseudo_labels({style0, style1}, {0, 1}, 0.9, 0.0, current);
    CHECK(out.labels.ids[0] == 1);
    CHECK(out.source_style[0] == 0);
}

TEST_CASE("pseudo-label refinement rules") {
    const std::vector<int> ids = {0, 1, 2};
    ProbMapT<float> onehot;
    onehot.class_ids = ids;
    onehot.probs = TensorT<float>(4, 4, 3, 0.0f);
    for (size_t p = 0; p < 16; ++p) onehot.probs.data[p * 3 + 2] = 1.0f;

    // supervised pixels always become u
    LabelMap supervised(4, 4, 5);
    PseudoLabelMap all_u = fuse_pseudo_labels({onehot}, {0}, 0.9, 0.66, supervised);
    for (uint8_t id : all_u.labels.ids) CHECK(id == kUnknownId);

    // unsupervised pixels with a confident one-hot teacher get its class
    LabelMap unsupervised(4, 4, kUnknownId);
    PseudoLabelMap all_c = fuse_pseudo_labels({onehot}, {0}, 0.9, 0.66, unsupervised);
    for (uint8_t id : all_c.labels.ids) CHECK(id == 2);
}

TEST_CASE("raising tau never labels a previously ignored pixel") {
    const std::vector<int> ids = {0, 1, 2, 3};
    std::vector<ProbMap> maps = {random_probs<float>(8, 8, ids, 41),
                                 random_probs<float>(8, 8, ids, 42)};
    LabelMap current(8, 8);
    Rng rng(43);
    for (auto& id : current.ids) id = rng.uniform_int(0, 1) ? kUnknownId : 5;

    std::set<size_t> prev_labeled;
    bool first = true;
    for (double tau : {0.5, 0.7, 0.9, 0.99}) {
        PseudoLabelMap pl = fuse_pseudo_labels(maps, {0, 1}, tau, 0.0, current);
        std::set<size_t> labeled;
        for (size_t p = 0; p < pl.labels.ids.size(); ++p) {
            if (pl.labels.ids[p] != kIgnoreId && current.ids[p] == kUnknownId)
                labeled.insert(p);
            // refinement never emits an id outside the teacher layout
            if (pl.labels.ids[p] != kIgnoreId) {
                bool known = pl.labels.ids[p] == kUnknownId || pl.labels.ids[p] == 1 ||
                             pl.labels.ids[p] == 2 || pl.labels.ids[p] == 3;
                CHECK(known);
            }
            if (current.ids[p] != kUnknownId) CHECK(pl.labels.ids[p] == kUnknownId);
        }
        if (!first)
            for (size_t p : labeled) CHECK(prev_labeled.count(p));
        prev_labeled = labeled;
        first = false;
    }
}

TEST_CASE("pseudo_label drives the teacher over stored styles") {
    ClassSchedule sched = schedule_2_2();
    SegModel teacher = init_model(51, 4, {1, 2});
    teacher.head_b[1] = 50.0f;  // one-hot on class 1 everywhere

    LabeledSample s = make_sample(builtin_domains()[0], 52, 32, 32, {1, 2});
    StyleBank bank;
    bank.image_h = bank.image_w = 32;
    bank = bank_add(bank, extract_style({s.image}, 0.01, 0));

    LabelMap all_u(32, 32, kUnknownId);
    PseudoLabelMap pl = pseudo_label(teacher, s.image, bank, 1, 0.9, 0.66, all_u);
    for (uint8_t id : pl.labels.ids) CHECK(id == 1);

    StyleBank empty;
    CHECK_THROWS_AS(pseudo_label(teacher, s.image, empty, 1, 0.9, 0.66, all_u),
                    ProtocolError);
}

TEST_CASE("loss breakdown is the lambda-weighted sum") {
    ClassSchedule sched = schedule_2_2();
    std::vector<uint8_t> step1_classes = {5, 6};
    LabeledSample s = make_sample(builtin_domains()[1], 61, 32, 32, step1_classes);

    SegModel teacher = init_model(62, 4, {1, 2});
    SegModel model = expand_head(teacher, {5, 6}, 63);
    StyleBank bank;
    bank.image_h = bank.image_w = 32;
    bank = bank_add(bank, extract_style({s.image}, 0.01, 0));
    bank = bank_add(bank, extract_style({s.image}, 0.01, 1));

    Tensor3 self_view = apply_style(s.image, bank.token(1));
    std::vector<Tensor3> old_views = {apply_style(s.image, bank.token(0))};
    std::vector<ProbMapT<float>> teacher_probs = {
        softmax<float>(teacher, forward<float>(teacher, old_views[0]))};
    PseudoLabelMap pseudo = pseudo_label(teacher, s.image, bank, 1, 0.9, 0.66, s.step_labels);

    Lambdas lambdas{10.0, 10.0, 10.0};
    LossMask mask;
    SampleLoss<float> r = sample_losses<float>(model, 1, self_view, old_views, s.step_labels,
                                               &pseudo, &teacher_probs, sched, lambdas, mask,
                                               false);
    const LossBreakdown& b = r.breakdown;
    CHECK(b.total == doctest::Approx(b.l_ce_n + 10 * b.l_ce_o + 10 * b.l_lws_n +
                                     10 * b.l_kd_o)
                         .epsilon(1e-6));
    CHECK(b.l_ce_n > 0.0);
    CHECK(b.l_kd_o > 0.0);
}

TEST_CASE("combined objective gradient matches finite differences at the loss level") {
    ClassSchedule sched = schedule_2_2();
    Rng rng_data(70);
    LabeledSample s;
    s.image = Tensor3(16, 16, 3);
    for (float& v : s.image.data) v = static_cast<float>(rng_data.uniform());
    s.step_labels = LabelMap(16, 16);
    for (auto& id : s.step_labels.ids) {
        int pick = rng_data.uniform_int(0, 2);
        id = pick == 0 ? kUnknownId : static_cast<uint8_t>(4 + pick);  // u, 5 or 6
    }

    SegModel teacher = init_model(72, 4, {1, 2});
    SegModel model = expand_head(teacher, {5, 6}, 73);
    StyleBank bank;
    bank.image_h = bank.image_w = 16;
    bank = bank_add(bank, extract_style({s.image}, 0.02, 0));
    bank = bank_add(bank, extract_style({s.image}, 0.02, 1));

    Tensor3 self_view = apply_style(s.image, bank.token(1));
    std::vector<Tensor3> old_views = {apply_style(s.image, bank.token(0))};
    std::vector<ProbMapT<double>> teacher_probs = {
        softmax<double>(teacher, forward<double>(teacher, old_views[0]))};
    PseudoLabelMap pseudo = pseudo_label(teacher, s.image, bank, 1, 0.9, 0.66, s.step_labels);

    Lambdas lambdas{10.0, 10.0, 10.0};
    LossMask mask;
    auto total_at = [&](const SegModel& m) {
        return sample_losses<double>(m, 1, self_view, old_views, s.step_labels, &pseudo,
                                     &teacher_probs, sched, lambdas, mask, false)
            .breakdown.total;
    };
    SampleLoss<double> r = sample_losses<double>(model, 1, self_view, old_views, s.step_labels,
                                                 &pseudo, &teacher_probs, sched, lambdas, mask,
                                                 true);

    // ReLU on/off pattern across every view; finite differences are only
    // trusted when the pattern is stable over the probed interval
    auto pattern_of = [&](const SegModel& m) {
        std::vector<char> pat;
        for (const Tensor3* view : {&self_view, &old_views[0]}) {
            ForwardTrace<double> trace;
            forward<double>(m, *view, &trace);
            for (double a : trace.a1) pat.push_back(a > 0.0);
            for (double a : trace.a2) pat.push_back(a > 0.0);
        }
        return pat;
    };

    Rng rng(74);
    int checked = 0, skipped = 0;
    auto spot_check = [&](std::vector<float> SegModel::*field,
                          const std::vector<double>& analytic, int count) {
        for (int i = 0; i < count; ++i) {
            size_t idx =
                static_cast<size_t>(rng.uniform_int(0, static_cast<int>(analytic.size()) - 1));
            bool done = false;
            for (float eps : {1e-3f, 1e-5f}) {
                SegModel probe = model;
                const float orig = (probe.*field)[idx];
                (probe.*field)[idx] = orig + eps;
                double hi = total_at(probe);
                double theta_hi = (probe.*field)[idx];
                std::vector<char> pat_hi = pattern_of(probe);
                (probe.*field)[idx] = orig - eps;
                double lo = total_at(probe);
                if (pattern_of(probe) != pat_hi) continue;
                double fd = (hi - lo) / (theta_hi - static_cast<double>((probe.*field)[idx]));
                CHECK(std::abs(fd - analytic[idx]) <
                      1e-3 * std::max({std::abs(fd), std::abs(analytic[idx]), 1e-4}));
                done = true;
                break;
            }
            done ? ++checked : ++skipped;
        }
    };
    spot_check(&SegModel::conv1_w, r.grads.conv1_w, 8);
    spot_check(&SegModel::conv2_w, r.grads.conv2_w, 8);
    spot_check(&SegModel::head_w, r.grads.head_w, 8);
    spot_check(&SegModel::head_b, r.grads.head_b, 4);
    CHECK(checked >= 24);
    CHECK(skipped <= 4);
}

TEST_CASE("train_step at step zero activates only the task loss") {
    ClassSchedule sched = schedule_2_2();
    std::vector<LabeledSample> train;
    for (uint64_t i = 0; i < 4; ++i)
        train.push_back(make_sample(builtin_domains()[0], 80 + i, 32, 32, {1, 2}));
    StyleBank bank;
    bank.image_h = bank.image_w = 32;
    {
        std::vector<Tensor3> imgs;
        for (const auto& s : train) imgs.push_back(s.image);
        bank = bank_add(bank, extract_style(imgs, 0.01, 0));
    }
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.seed = 81;
    cfg.feature_width = 4;
    std::vector<LossTraceRow> trace;
    SegModel model = init_model(cfg.seed, cfg.feature_width, {1, 2});
    model = train_step(0, train, bank, nullptr, std::move(model), sched, cfg, &trace);
    CHECK(trace.size() == 8);
    for (const LossTraceRow& row : trace) {
        CHECK(row.losses.l_ce_o == 0.0);
        CHECK(row.losses.l_lws_n == 0.0);
        CHECK(row.losses.l_kd_o == 0.0);
        CHECK(row.losses.total == row.losses.l_ce_n);
    }
}

TEST_CASE("task loss trend is non-increasing after warmup") {
    ClassSchedule sched = schedule_2_2();
    std::vector<LabeledSample> train;
    for (uint64_t i = 0; i < 10; ++i)
        train.push_back(make_sample(builtin_domains()[0], 90 + i, 32, 32, {1, 2}));
    StyleBank bank;
    bank.image_h = bank.image_w = 32;
    {
        std::vector<Tensor3> imgs;
        for (const auto& s : train) imgs.push_back(s.image);
        bank = bank_add(bank, extract_style(imgs, 0.01, 0));
    }
    TrainConfig cfg;
    cfg.epochs = 15;
    cfg.seed = 91;
    cfg.feature_width = 8;
    cfg.lr = 0.05f;
    std::vector<LossTraceRow> trace;
    SegModel model = init_model(cfg.seed, cfg.feature_width, {1, 2});
    model = train_step(0, train, bank, nullptr, std::move(model), sched, cfg, &trace);

    std::vector<double> per_epoch(15, 0.0);
    for (const LossTraceRow& row : trace) per_epoch[static_cast<size_t>(row.epoch)] +=
        row.losses.l_ce_n / 10.0;
    auto smoothed = [&](int e) {
        return (per_epoch[e - 2] + per_epoch[e - 1] + per_epoch[e]) / 3.0;
    };
    for (int e = 4; e < 15; ++e) CHECK(smoothed(e) <= smoothed(e - 1) + 1e-9);
}

TEST_CASE("protocol with one step matches plain supervised training") {
    ClassSchedule sched;
    sched.sets = {{1, 2}};
    sched.class_names = {{1, "sky"}, {2, "road"}};
    std::vector<DomainSpec> domains = {builtin_domains()[0]};

    fs::path root = fs::temp_directory_path() / "stylecl_proto_t1";
    fs::remove_all(root);
    SampleStore store(root, true);
    StepDataset ds = build_step_dataset(sched, domains, 0, 4, 2, 1111, 32, 32);
    store.put_train(0, ds.train);

    ProtocolConfig pcfg;
    pcfg.schedule = sched;
    pcfg.domains = domains;
    pcfg.h = pcfg.w = 32;
    pcfg.train.epochs = 2;
    pcfg.train.seed = 1111;
    pcfg.train.feature_width = 4;
    ProtocolResult result = run_protocol(pcfg, store, nullptr);
    CHECK(result.bank.size() == 1);
    REQUIRE(result.checkpoints.size() == 1);

    // manual equivalent over the same on-disk samples
    std::vector<LabeledSample> train = store.load_train(0);
    std::vector<Tensor3> imgs;
    for (const auto& s : train) imgs.push_back(s.image);
    StyleBank bank;
    bank.image_h = bank.image_w = 32;
    bank = bank_add(bank, extract_style(imgs, pcfg.train.beta, 0));
    SegModel manual = init_model(pcfg.train.seed, 4, {1, 2});
    manual.step = 0;
    manual = train_step(0, train, bank, nullptr, std::move(manual), sched, pcfg.train,
                        nullptr);
    CHECK(result.checkpoints[0].conv1_w == manual.conv1_w);
    CHECK(result.checkpoints[0].head_w == manual.head_w);
    fs::remove_all(root);
}

TEST_CASE("caching stylized views does not change training") {
    ClassSchedule sched = schedule_2_2();
    std::vector<DomainSpec> domains = {builtin_domains()[0], builtin_domains()[1]};
    fs::path root = fs::temp_directory_path() / "stylecl_proto_cache";

    auto run_with = [&](bool cache) {
        fs::remove_all(root);
        SampleStore store(root, true);
        for (int t = 0; t < 2; ++t) {
            StepDataset ds = build_step_dataset(sched, domains, t, 4, 2, 2222, 32, 32);
            store.put_train(t, ds.train);
        }
        ProtocolConfig pcfg;
        pcfg.schedule = sched;
        pcfg.domains = domains;
        pcfg.h = pcfg.w = 32;
        pcfg.train.epochs = 2;
        pcfg.train.seed = 2222;
        pcfg.train.feature_width = 4;
        pcfg.train.cache_views = cache;
        return run_protocol(pcfg, store, nullptr);
    };
    ProtocolResult plain = run_with(false);
    ProtocolResult cached = run_with(true);
    for (size_t t = 0; t < 2; ++t) {
        CHECK(plain.checkpoints[t].conv1_w == cached.checkpoints[t].conv1_w);
        CHECK(plain.checkpoints[t].conv2_w == cached.checkpoints[t].conv2_w);
        CHECK(plain.checkpoints[t].head_w == cached.checkpoints[t].head_w);
    }
    fs::remove_all(root);
}

TEST_CASE("zero lambdas reproduce the self-style fine-tuning baseline bit-for-bit") {
    ClassSchedule sched = schedule_2_2();
    std::vector<DomainSpec> domains = {builtin_domains()[0], builtin_domains()[1]};
    fs::path root = fs::temp_directory_path() / "stylecl_proto_l0";

    auto run_with = [&](Lambdas lambdas, LossMask mask) {
        fs::remove_all(root);
        SampleStore store(root, true);
        for (int t = 0; t < 2; ++t) {
            StepDataset ds = build_step_dataset(sched, domains, t, 4, 2, 3333, 32, 32);
            store.put_train(t, ds.train);
        }
        ProtocolConfig pcfg;
        pcfg.schedule = sched;
        pcfg.domains = domains;
        pcfg.h = pcfg.w = 32;
        pcfg.train.epochs = 2;
        pcfg.train.seed = 3333;
        pcfg.train.feature_width = 4;
        pcfg.train.lambdas = lambdas;
        pcfg.train.mask = mask;
        return run_protocol(pcfg, store, nullptr);
    };
    ProtocolResult zero = run_with({0.0, 0.0, 0.0}, LossMask{});
    ProtocolResult ft = run_with({10.0, 10.0, 10.0}, LossMask{true, false, false, false});
    for (size_t t = 0; t < 2; ++t) {
        CHECK(zero.checkpoints[t].conv1_w == ft.checkpoints[t].conv1_w);
        CHECK(zero.checkpoints[t].conv2_w == ft.checkpoints[t].conv2_w);
        CHECK(zero.checkpoints[t].head_w == ft.checkpoints[t].head_w);
        CHECK(zero.checkpoints[t].head_b == ft.checkpoints[t].head_b);
    }
    fs::remove_all(root);
}

TEST_CASE("training never rereads earlier steps") {
    ClassSchedule sched = schedule_2_2();
    std::vector<DomainSpec> domains = {builtin_domains()[0], builtin_domains()[1]};
    fs::path root = fs::temp_directory_path() / "stylecl_proto_audit";
    fs::remove_all(root);
    SampleStore store(root, true);
    for (int t = 0; t < 2; ++t) {
        StepDataset ds = build_step_dataset(sched, domains, t, 3, 2, 4444, 32, 32);
        store.put_train(t, ds.train);
    }
    ProtocolConfig pcfg;
    pcfg.schedule = sched;
    pcfg.domains = domains;
    pcfg.h = pcfg.w = 32;
    pcfg.train.epochs = 1;
    pcfg.train.seed = 4444;
    pcfg.train.feature_width = 4;
    run_protocol(pcfg, store, nullptr);

    std::ifstream log(store.audit_path());
    std::string line;
    while (std::getline(log, line)) {
        if (line.rfind("train_step_", 0) != 0) continue;
        size_t tab1 = line.find('\t');
        int phase_step = std::stoi(line.substr(11, tab1 - 11));
        size_t tab2 = line.find('\t', tab1 + 1);
        std::string kind = line.substr(tab1 + 1, tab2 - tab1 - 1);
        if (kind != "train") continue;
        size_t tab3 = line.find('\t', tab2 + 1);
        int data_step = std::stoi(line.substr(tab2 + 1, tab3 - tab2 - 1));
        CHECK(data_step == phase_step);
    }
    fs::remove_all(root);
}

}  // TEST_SUITE
