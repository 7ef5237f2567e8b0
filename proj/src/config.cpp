#include "stylecl/config.hpp"

#include <fstream>
#include <set>

namespace stylecl {

namespace {

const std::map<std::string, uint8_t>& class_registry() {
    static const std::map<std::string, uint8_t> reg = {
        {"sky", 1}, {"road", 2}, {"building", 3}, {"pole", 4}, {"car", 5}, {"person", 6}};
    return reg;
}

bool is_pow2(int n) { return n >= 1 && (n & (n - 1)) == 0; }

}  // namespace

uint8_t class_id_by_name(const std::string& name) {
    auto it = class_registry().find(name);
    if (it == class_registry().end())
        throw ConfigError("schedule: unknown class name \"" + name + "\"");
    return it->second;
}

ExperimentConfig parse_config(const nlohmann::json& j) {
    static const std::set<std::string> known = {
        "schedule", "domain_sequence", "external_domain", "h", "w", "n_train", "n_eval",
        "epochs", "lr", "beta", "tau", "topk_frac", "lambdas", "seed", "variant",
        "output_dir"};
    if (!j.is_object()) throw ConfigError("config: expected a JSON object");
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!known.count(key)) throw ConfigError("config: unknown key \"" + key + "\"");
    }
    for (const std::string& key : known)
        if (!j.count(key)) throw ConfigError("config: missing key \"" + key + "\"");

    ExperimentConfig cfg;
    try {
        for (const auto& set : j.at("schedule")) {
            std::vector<uint8_t> ids;
            for (const auto& name : set) ids.push_back(class_id_by_name(name.get<std::string>()));
            cfg.schedule.sets.push_back(ids);
        }
        for (const auto& [name, id] : class_registry()) cfg.schedule.class_names[id] = name;
        cfg.domain_sequence = j.at("domain_sequence").get<std::vector<std::string>>();
        cfg.external_domain = j.at("external_domain").get<std::string>();
        cfg.h = j.at("h").get<int>();
        cfg.w = j.at("w").get<int>();
        cfg.n_train = j.at("n_train").get<int>();
        cfg.n_eval = j.at("n_eval").get<int>();
        cfg.epochs = j.at("epochs").get<int>();
        cfg.lr = j.at("lr").get<double>();
        cfg.beta = j.at("beta").get<double>();
        cfg.tau = j.at("tau").get<double>();
        cfg.topk_frac = j.at("topk_frac").get<double>();
        auto lambdas = j.at("lambdas").get<std::vector<double>>();
        if (lambdas.size() != 3)
            throw ConfigError("config: \"lambdas\" must hold exactly 3 values");
        std::copy(lambdas.begin(), lambdas.end(), cfg.lambdas.begin());
        cfg.seed = j.at("seed").get<uint64_t>();
        cfg.variant = j.at("variant").get<std::string>();
        cfg.output_dir = j.at("output_dir").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    validate_config(cfg);
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config " + path + ": " + e.what());
    }
    return parse_config(j);
}

void validate_config(const ExperimentConfig& cfg) {
    cfg.schedule.validate();
    // the generator emits every registry class, so the schedule must cover it
    std::set<uint8_t> covered;
    for (const auto& set : cfg.schedule.sets) covered.insert(set.begin(), set.end());
    for (const auto& [name, id] : class_registry())
        if (!covered.count(id))
            throw ConfigError("config: schedule does not cover class \"" + name + "\"");
    if (cfg.domain_sequence.size() != static_cast<size_t>(cfg.schedule.steps()))
        throw ConfigError("config: \"domain_sequence\" length must equal schedule length");
    for (const std::string& d : cfg.domain_sequence) domain_by_name(d);
    domain_by_name(cfg.external_domain);
    if (!is_pow2(cfg.h) || !is_pow2(cfg.w) || cfg.h < 32 || cfg.w < 32)
        throw ConfigError("config: \"h\" and \"w\" must be powers of two >= 32");
    if (cfg.n_train < 1) throw ConfigError("config: \"n_train\" must be >= 1");
    if (cfg.n_eval < 1) throw ConfigError("config: \"n_eval\" must be >= 1");
    if (cfg.epochs < 1) throw ConfigError("config: \"epochs\" must be >= 1");
    if (!(cfg.lr > 0.0)) throw ConfigError("config: \"lr\" must be positive");
    if (!(cfg.beta > 0.0 && cfg.beta < 1.0)) throw ConfigError("config: \"beta\" not in (0,1)");
    if (!(cfg.tau > 0.0 && cfg.tau <= 1.0)) throw ConfigError("config: \"tau\" not in (0,1]");
    if (cfg.topk_frac < 0.0 || cfg.topk_frac > 1.0)
        throw ConfigError("config: \"topk_frac\" not in [0,1]");
    for (double l : cfg.lambdas)
        if (l < 0.0) throw ConfigError("config: \"lambdas\" must be >= 0");
    if (cfg.output_dir.empty()) throw ConfigError("config: \"output_dir\" must not be empty");
    parse_variant(cfg.variant);
}

std::vector<DomainSpec> ExperimentConfig::domains() const {
    std::vector<DomainSpec> out;
    for (const std::string& name : domain_sequence) out.push_back(domain_by_name(name));
    return out;
}

VariantSpec parse_variant(const std::string& name) {
    std::string base = name;
    VariantSpec v;
    if (base.size() > 6 && base.substr(base.size() - 6) == ":plcur") {
        v.pseudo_include_current_style = true;
        base = base.substr(0, base.size() - 6);
    }
    if (base == "full") return v;
    if (base == "ft") {
        v.mask = {true, false, false, false};
        v.stylize = false;
        return v;
    }
    if (base == "ft_selfstyle") {
        v.mask = {true, false, false, false};
        return v;
    }
    if (base == "no_kd_o") {
        v.mask = {true, true, true, false};
        return v;
    }
    if (base == "no_style") {
        v.stylize = false;
        return v;
    }
    // ablation masks: '+'-joined subset of {ce_n, ce_o, lws_n, kd_o}
    v.mask = {false, false, false, false};
    size_t pos = 0;
    while (pos <= base.size()) {
        size_t next = base.find('+', pos);
        std::string term = base.substr(pos, next == std::string::npos ? next : next - pos);
        if (term == "ce_n")
            v.mask.ce_n = true;
        else if (term == "ce_o")
            v.mask.ce_o = true;
        else if (term == "lws_n")
            v.mask.lws_n = true;
        else if (term == "kd_o")
            v.mask.kd_o = true;
        else
            throw ConfigError("config: unknown variant \"" + name + "\"");
        if (next == std::string::npos) break;
        pos = next + 1;
    }
    if (!v.mask.ce_n)
        throw ConfigError("config: variant \"" + name + "\" must include ce_n");
    return v;
}

TrainConfig make_train_config(const ExperimentConfig& cfg) {
    VariantSpec v = parse_variant(cfg.variant);
    TrainConfig t;
    t.lr = static_cast<float>(cfg.lr);
    t.epochs = cfg.epochs;
    t.beta = cfg.beta;
    t.tau = cfg.tau;
    t.topk_frac = cfg.topk_frac;
    t.lambdas = {cfg.lambdas[0], cfg.lambdas[1], cfg.lambdas[2]};
    t.mask = v.mask;
    t.stylize = v.stylize;
    t.pseudo_include_current_style = v.pseudo_include_current_style;
    t.seed = cfg.seed;
    return t;
}

}  // namespace stylecl
