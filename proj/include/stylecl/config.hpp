#pragma once

#include <array>
#include <string>
#include <vector>

#include <json.hpp>

#include "stylecl/continual.hpp"
#include "stylecl/data.hpp"

namespace stylecl {

// Experiment description; a JSON file with exactly these keys. Unknown keys
// are a hard error so ablation runs stay comparable.
struct ExperimentConfig {
    ClassSchedule schedule;
    std::vector<std::string> domain_sequence;
    std::string external_domain;
    int h = 64;
    int w = 64;
    int n_train = 200;
    int n_eval = 50;
    int epochs = 15;
    double lr = 0.1;
    double beta = 0.01;
    double tau = 0.9;
    double topk_frac = 0.66;
    std::array<double, 3> lambdas = {10.0, 10.0, 10.0};  // ce_o, lws_n, kd_o
    uint64_t seed = 1234;
    std::string variant = "full";
    std::string output_dir;

    std::vector<DomainSpec> domains() const;
    int steps() const { return schedule.steps(); }
};

ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);
void validate_config(const ExperimentConfig& cfg);

// variant name -> loss mask + stylization switch
struct VariantSpec {
    LossMask mask;
    bool stylize = true;
    bool pseudo_include_current_style = false;
};

VariantSpec parse_variant(const std::string& name);

TrainConfig make_train_config(const ExperimentConfig& cfg);

// fixed class-name registry used by config schedules
uint8_t class_id_by_name(const std::string& name);

}  // namespace stylecl
