#pragma once

#include <map>
#include <string>
#include <vector>

#include "stylecl/continual.hpp"
#include "stylecl/data.hpp"
#include "stylecl/model.hpp"

namespace stylecl {

// Rows = ground truth, columns = prediction, over the real classes plus one
// trailing slot for u predictions (its row stays empty: ground truth in eval
// sets is always a real class).
struct ConfusionMatrix {
    std::vector<uint8_t> classes;       // real class ids, sorted
    std::vector<int64_t> counts;        // (K+1) x (K+1)

    explicit ConfusionMatrix(const std::vector<uint8_t>& real_classes);
    void add(const LabelMap& ground_truth, const LabelMap& prediction);
    void merge(const ConfusionMatrix& other);
    int64_t total() const;

    int index_of(uint8_t id) const;  // K for u, -1 if unknown id
    int64_t at(int row, int col) const;
    int k() const { return static_cast<int>(classes.size()); }
};

// argmax prediction over all current channels, mapped to class ids
LabelMap predict(const SegModel& model, const Tensor3& image);

// mIoU over class_set \ {u}; per class IoU = TP / (TP + FP + FN); classes
// absent from both ground truth and prediction are dropped from the mean.
double miou(const SegModel& model, const std::vector<LabeledSample>& eval_set,
            const std::vector<uint8_t>& class_set);
double miou(const ConfusionMatrix& cm, const std::vector<uint8_t>& class_set);

// relative gap to the oracle, in percent; positive = worse than oracle
double delta(double miou_value, double oracle_miou);
double delta_bar(const std::vector<double>& deltas);

struct GammaResult {
    double value = 0.0;
    bool protocol_smell = false;  // external domain appears in the training sequence
};

GammaResult gamma_gen(const SegModel& model, const std::vector<LabeledSample>& external_set,
                      const std::vector<uint8_t>& classes_so_far,
                      const std::string& external_domain,
                      const std::vector<std::string>& training_domains);

// joint training over all domains and classes with full labels; the Eq-14
// reference. Budget: sum of the per-step epochs, one pass per epoch over the
// union of the per-step training sets.
struct OracleConfig {
    ClassSchedule schedule;
    std::vector<std::string> domain_names;
    int epochs_total = 45;
    float lr = 0.1f;
    uint64_t seed = 0;
    int feature_width = 16;
};

SegModel train_oracle(const OracleConfig& cfg, SampleStore& store);

struct MetricsReport {
    struct EvalCell {
        int step = 0;
        std::string domain;
        double miou = 0.0;    // percent
        double delta = 0.0;   // percent
    };
    std::vector<EvalCell> cells;
    std::map<int, double> delta_bar_by_step;
    std::map<int, double> gamma_by_step;                      // percent
    std::map<std::string, std::map<int, double>> oracle_miou; // domain -> step -> percent
    uint64_t dataset_fingerprint = 0;
};

// report.csv / report.json with fixed schema; refuses to write when oracle
// values are missing for any evaluated (step, domain)
void write_report(const MetricsReport& report, const std::string& csv_path,
                  const std::string& json_path);
MetricsReport read_report(const std::string& json_path);

}  // namespace stylecl
