#pragma once

#include <string>
#include <vector>

#include "stylecl/config.hpp"
#include "stylecl/eval.hpp"

namespace stylecl {

struct RunOptions {
    bool overwrite = false;
    bool cache_views = false;    // reuse per-sample stylized views across epochs
    std::string data_root;       // shared dataset root; defaults to output_dir
    std::string oracle_dir;      // shared oracle; defaults to output_dir/oracle
    bool reuse_data = false;     // trust an existing complete dataset even with overwrite
    bool reuse_oracle = false;   // trust an existing oracle even with overwrite
};

// Materializes datasets for every step plus per-domain eval sets and the
// external generalization set.
void cmd_generate(const ExperimentConfig& cfg, bool overwrite);

// Full pipeline: data, oracle, incremental protocol, per-step evaluation,
// generalization score, report files.
MetricsReport cmd_run(const ExperimentConfig& cfg, const RunOptions& opts);

// Applies a stored style token to every .ppm in image_dir.
void cmd_stylize(const std::string& image_dir, const std::string& bank_path, int step_k,
                 const std::string& out_dir);

// Re-evaluates one checkpoint against the run's eval sets and oracle.
MetricsReport cmd_eval(const ExperimentConfig& cfg, const std::string& checkpoint_path);

// Re-emits report.csv from report.json in a run directory.
void cmd_report(const std::string& run_dir);

struct AblationRow {
    std::string label;
    std::vector<double> delta_bar_by_step;
    double gamma_final = 0.0;
    uint64_t dataset_fingerprint = 0;
};

// Runs each variant and/or beta value against identical datasets and a shared
// oracle; writes <output_dir>/ablation.csv.
std::vector<AblationRow> cmd_ablate(const ExperimentConfig& cfg,
                                    const std::vector<std::string>& variants,
                                    const std::vector<double>& betas,
                                    const RunOptions& opts);

}  // namespace stylecl
