#include "stylecl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "stylecl/rng.hpp"

namespace stylecl {

// ---------------------------------------------------------------------------
// confusion matrix / mIoU
// ---------------------------------------------------------------------------

ConfusionMatrix::ConfusionMatrix(const std::vector<uint8_t>& real_classes)
    : classes(real_classes) {
    std::sort(classes.begin(), classes.end());
    const size_t n = classes.size() + 1;
    counts.assign(n * n, 0);
}

int ConfusionMatrix::index_of(uint8_t id) const {
    if (id == kUnknownId) return k();
    auto it = std::lower_bound(classes.begin(), classes.end(), id);
    if (it == classes.end() || *it != id) return -1;
    return static_cast<int>(it - classes.begin());
}

int64_t ConfusionMatrix::at(int row, int col) const {
    return counts[static_cast<size_t>(row) * (k() + 1) + col];
}

void ConfusionMatrix::add(const LabelMap& gt, const LabelMap& pred) {
    if (gt.h != pred.h || gt.w != pred.w)
        throw ShapeError("confusion: label shape mismatch");
    const int n = k() + 1;
    for (size_t p = 0; p < gt.ids.size(); ++p) {
        const uint8_t g = gt.ids[p];
        if (g == kIgnoreId || g == kUnknownId) continue;
        const int row = index_of(g);
        if (row < 0) throw LabelError("confusion: ground-truth id outside class list");
        const int col = index_of(pred.ids[p]);
        if (col < 0) throw LabelError("confusion: predicted id outside class list");
        ++counts[static_cast<size_t>(row) * n + col];
    }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    if (other.classes != classes) throw ShapeError("confusion: class list mismatch");
    for (size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
}

int64_t ConfusionMatrix::total() const {
    return std::accumulate(counts.begin(), counts.end(), int64_t(0));
}

LabelMap predict(const SegModel& model, const Tensor3& image) {
    TensorT<float> logits = forward<float>(model, image);
    LabelMap out(image.h, image.w);
    const int C = model.C;
    for (size_t p = 0; p < out.ids.size(); ++p) {
        const float* lp = logits.data.data() + p * C;
        int best = 0;
        for (int c = 1; c < C; ++c)
            if (lp[c] > lp[best]) best = c;
        out.ids[p] = static_cast<uint8_t>(model.channel_layout[static_cast<size_t>(best)]);
    }
    return out;
}

double miou(const ConfusionMatrix& cm, const std::vector<uint8_t>& class_set) {
    const int n = cm.k() + 1;
    double sum = 0.0;
    int present = 0;
    for (uint8_t id : class_set) {
        if (id == kUnknownId) continue;
        const int ci = cm.index_of(id);
        if (ci < 0) throw LabelError("miou: class id outside confusion matrix");
        int64_t row = 0, col = 0;
        for (int j = 0; j < n; ++j) {
            row += cm.at(ci, j);
            col += cm.at(j, ci);
        }
        const int64_t tp = cm.at(ci, ci);
        const int64_t uni = row + col - tp;
        if (uni == 0) continue;  // absent from both ground truth and prediction
        sum += static_cast<double>(tp) / static_cast<double>(uni);
        ++present;
    }
    if (present == 0) throw InvariantError("miou: no classes present in the eval set");
    return sum / present;
}

double miou(const SegModel& model, const std::vector<LabeledSample>& eval_set,
            const std::vector<uint8_t>& class_set) {
    if (eval_set.empty()) throw InvariantError("miou: empty eval set");
    // the matrix must be able to index every ground-truth id, not just the
    // class set under evaluation
    std::vector<uint8_t> universe;
    for (const LabeledSample& s : eval_set)
        for (uint8_t id : s.full_labels.ids)
            if (id != kUnknownId && id != kIgnoreId) universe.push_back(id);
    for (int ch : model.channel_layout)
        if (ch != kUnknownId) universe.push_back(static_cast<uint8_t>(ch));
    universe.insert(universe.end(), class_set.begin(), class_set.end());
    std::sort(universe.begin(), universe.end());
    universe.erase(std::unique(universe.begin(), universe.end()), universe.end());

    ConfusionMatrix cm(universe);
    for (const LabeledSample& s : eval_set) cm.add(s.full_labels, predict(model, s.image));
    return miou(cm, class_set);
}

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

double delta(double miou_value, double oracle_miou) {
    if (oracle_miou <= 0.0) throw InvariantError("delta: oracle mIoU must be positive");
    return (oracle_miou - miou_value) / oracle_miou * 100.0;
}

double delta_bar(const std::vector<double>& deltas) {
    if (deltas.empty()) throw InvariantError("delta_bar: empty input");
    double s = 0.0;
    for (double d : deltas) s += d;
    return s / static_cast<double>(deltas.size());
}

GammaResult gamma_gen(const SegModel& model, const std::vector<LabeledSample>& external_set,
                      const std::vector<uint8_t>& classes_so_far,
                      const std::string& external_domain,
                      const std::vector<std::string>& training_domains) {
    GammaResult r;
    r.protocol_smell = std::find(training_domains.begin(), training_domains.end(),
                                 external_domain) != training_domains.end();
    if (r.protocol_smell)
        std::fprintf(stderr,
                     "warning: external domain \"%s\" is part of the training sequence; "
                     "generalization score is not meaningful\n",
                     external_domain.c_str());
    r.value = miou(model, external_set, classes_so_far);
    return r;
}

// ---------------------------------------------------------------------------
// oracle
// ---------------------------------------------------------------------------

SegModel train_oracle(const OracleConfig& cfg, SampleStore& store) {
    cfg.schedule.validate();
    store.set_phase("oracle");
    std::vector<LabeledSample> joint;
    for (int t = 0; t < cfg.schedule.steps(); ++t) {
        std::vector<LabeledSample> part = store.load_train(t);
        for (LabeledSample& s : part) {
            s.step_labels = s.full_labels;  // joint training sees everything
            joint.push_back(std::move(s));
        }
    }
    if (joint.empty()) throw ProtocolError("train_oracle: no training data");

    SegModel model = init_model(mix_seed(cfg.seed, 0x04AC1EULL), cfg.feature_width,
                                cfg.schedule.all_classes());
    ClassSchedule flat;  // single step holding every class: plain supervised CE
    flat.sets = {cfg.schedule.all_classes()};
    flat.class_names = cfg.schedule.class_names;

    const int n = static_cast<int>(joint.size());
    std::vector<int> order(static_cast<size_t>(n));
    LossMask ce_only;
    ce_only.ce_o = ce_only.lws_n = ce_only.kd_o = false;
    Lambdas lambdas;
    for (int epoch = 0; epoch < cfg.epochs_total; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        Rng rng(mix_seed(cfg.seed, 0x04AC1E0DULL, epoch));
        std::shuffle(order.begin(), order.end(), rng.engine());
        for (int idx : order) {
            const LabeledSample& s = joint[static_cast<size_t>(idx)];
            SampleLoss<float> r = sample_losses<float>(model, 0, s.image, {}, s.step_labels,
                                                       nullptr, nullptr, flat, lambdas,
                                                       ce_only, true);
            sgd_step(model, r.grads, cfg.lr);
        }
    }
    store.set_phase("idle");
    return model;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

namespace {

std::string fmt2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

}  // namespace

void write_report(const MetricsReport& report, const std::string& csv_path,
                  const std::string& json_path) {
    for (const auto& cell : report.cells) {
        auto dom = report.oracle_miou.find(cell.domain);
        if (dom == report.oracle_miou.end() || !dom->second.count(cell.step))
            throw InvariantError("write_report: missing oracle mIoU for step " +
                                 std::to_string(cell.step) + ", domain " + cell.domain);
    }

    std::ofstream csv(csv_path);
    if (!csv) throw IoError("cannot write " + csv_path);
    csv << "kind,step,domain,miou,delta\n";
    for (const auto& cell : report.cells)
        csv << "eval," << cell.step << "," << cell.domain << "," << fmt2(cell.miou) << ","
            << fmt2(cell.delta) << "\n";
    for (const auto& [domain, per_step] : report.oracle_miou)
        for (const auto& [step, value] : per_step)
            csv << "oracle," << step << "," << domain << "," << fmt2(value) << ",\n";
    for (const auto& [step, value] : report.delta_bar_by_step)
        csv << "delta_bar," << step << ",,," << fmt2(value) << "\n";
    for (const auto& [step, value] : report.gamma_by_step)
        csv << "gamma_gen," << step << ",," << fmt2(value) << ",\n";
    if (!csv) throw IoError("failed writing " + csv_path);

    nlohmann::json j;
    j["cells"] = nlohmann::json::array();
    for (const auto& cell : report.cells)
        j["cells"].push_back({{"step", cell.step},
                              {"domain", cell.domain},
                              {"miou", cell.miou},
                              {"delta", cell.delta}});
    j["delta_bar"] = nlohmann::json::object();
    for (const auto& [step, value] : report.delta_bar_by_step)
        j["delta_bar"][std::to_string(step)] = value;
    j["gamma_gen"] = nlohmann::json::object();
    for (const auto& [step, value] : report.gamma_by_step)
        j["gamma_gen"][std::to_string(step)] = value;
    j["oracle_miou"] = nlohmann::json::object();
    for (const auto& [domain, per_step] : report.oracle_miou) {
        nlohmann::json d = nlohmann::json::object();
        for (const auto& [step, value] : per_step) d[std::to_string(step)] = value;
        j["oracle_miou"][domain] = d;
    }
    j["dataset_fingerprint"] = report.dataset_fingerprint;

    std::ofstream js(json_path);
    if (!js) throw IoError("cannot write " + json_path);
    js << j.dump(2) << "\n";
    if (!js) throw IoError("failed writing " + json_path);
}

MetricsReport read_report(const std::string& json_path) {
    std::ifstream in(json_path);
    if (!in) throw IoError("cannot open " + json_path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("bad report json " + json_path + ": " + e.what());
    }
    MetricsReport r;
    for (const auto& cell : j.at("cells"))
        r.cells.push_back({cell.at("step").get<int>(), cell.at("domain").get<std::string>(),
                           cell.at("miou").get<double>(), cell.at("delta").get<double>()});
    for (const auto& [key, value] : j.at("delta_bar").items())
        r.delta_bar_by_step[std::stoi(key)] = value.get<double>();
    for (const auto& [key, value] : j.at("gamma_gen").items())
        r.gamma_by_step[std::stoi(key)] = value.get<double>();
    for (const auto& [domain, per_step] : j.at("oracle_miou").items())
        for (const auto& [step, value] : per_step.items())
            r.oracle_miou[domain][std::stoi(step)] = value.get<double>();
    r.dataset_fingerprint = j.at("dataset_fingerprint").get<uint64_t>();
    return r;
}

}  // namespace stylecl
