#include "stylecl/commands.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "stylecl/util.hpp"

namespace fs = std::filesystem;

namespace stylecl {

namespace {

void generate_into(const ExperimentConfig& cfg, SampleStore& store) {
    store.set_phase("generate");
    const std::vector<DomainSpec> domains = cfg.domains();
    for (int t = 0; t < cfg.steps(); ++t) {
        StepDataset ds = build_step_dataset(cfg.schedule, domains, t, cfg.n_train, cfg.n_eval,
                                            cfg.seed, cfg.h, cfg.w);
        store.put_train(t, ds.train);
        store.put_manifest(t, ds.manifest);
        // eval seeds are per-domain; write each domain's partition once
        store.put_eval(domains[static_cast<size_t>(t)].name,
                       ds.eval_per_domain[static_cast<size_t>(t)]);
    }
    const DomainSpec& ext = domain_by_name(cfg.external_domain);
    std::vector<LabeledSample> external(static_cast<size_t>(cfg.n_eval));
    parallel_for(cfg.n_eval, [&](int j) {
        LabeledSample s;
        generate_scene(ext, external_seed(cfg.seed, j), cfg.h, cfg.w, s.image, s.full_labels);
        s.step_labels = s.full_labels;
        external[static_cast<size_t>(j)] = std::move(s);
    });
    store.put_external(ext.name, external);
    store.set_phase("idle");
}

bool data_complete(const ExperimentConfig& cfg, const SampleStore& store) {
    for (int t = 0; t < cfg.steps(); ++t)
        if (store.count_train(t) != cfg.n_train) return false;
    for (const std::string& name : cfg.domain_sequence)
        if (!fs::exists(store.data_dir() / "eval" / name)) return false;
    return fs::exists(store.data_dir() / "external" / cfg.external_domain);
}

std::string step_ckpt_name(int t) { return "step" + std::to_string(t) + ".segc"; }

// evaluates a model over all (step-restricted class set, domain <= t) cells
double eval_miou_pct(const SegModel& model, const std::vector<LabeledSample>& eval_set,
                     const std::vector<uint8_t>& class_set) {
    return miou(model, eval_set, class_set) * 100.0;
}

struct OracleTable {
    std::map<std::string, std::map<int, double>> miou_pct;  // domain -> step -> percent
};

OracleTable evaluate_oracle(const SegModel& oracle, const ExperimentConfig& cfg,
                            SampleStore& store,
                            std::map<std::string, std::vector<LabeledSample>>& eval_cache) {
    OracleTable table;
    store.set_phase("eval_oracle");
    for (int t = 0; t < cfg.steps(); ++t) {
        const std::vector<uint8_t> classes = cfg.schedule.classes_up_to(t);
        for (int k = 0; k <= t; ++k) {
            const std::string& domain = cfg.domain_sequence[static_cast<size_t>(k)];
            if (!eval_cache.count(domain)) eval_cache[domain] = store.load_eval(domain);
            table.miou_pct[domain][t] = eval_miou_pct(oracle, eval_cache[domain], classes);
        }
    }
    store.set_phase("idle");
    return table;
}

void save_oracle_table(const OracleTable& table, const fs::path& path) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [domain, per_step] : table.miou_pct) {
        nlohmann::json d = nlohmann::json::object();
        for (const auto& [step, value] : per_step) d[std::to_string(step)] = value;
        j[domain] = d;
    }
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

OracleTable load_oracle_table(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("bad oracle table " + path.string() + ": " + e.what());
    }
    OracleTable t;
    for (const auto& [domain, per_step] : j.items())
        for (const auto& [step, value] : per_step.items())
            t.miou_pct[domain][std::stoi(step)] = value.get<double>();
    return t;
}

OracleTable ensure_oracle(const ExperimentConfig& cfg, const RunOptions& opts,
                          SampleStore& store,
                          std::map<std::string, std::vector<LabeledSample>>& eval_cache) {
    const fs::path oracle_dir =
        opts.oracle_dir.empty() ? fs::path(cfg.output_dir) / "oracle" : fs::path(opts.oracle_dir);
    const fs::path ckpt = oracle_dir / "oracle.segc";
    const fs::path table_path = oracle_dir / "oracle_miou.json";
    if ((opts.reuse_oracle || !opts.overwrite) && fs::exists(ckpt) && fs::exists(table_path))
        return load_oracle_table(table_path);

    fs::create_directories(oracle_dir);
    OracleConfig ocfg;
    ocfg.schedule = cfg.schedule;
    ocfg.domain_names = cfg.domain_sequence;
    ocfg.epochs_total = cfg.epochs * cfg.steps();
    ocfg.lr = static_cast<float>(cfg.lr);
    ocfg.seed = cfg.seed;
    SegModel oracle = train_oracle(ocfg, store);
    save_checkpoint(oracle, ckpt.string(), cfg.schedule.hash());
    OracleTable table = evaluate_oracle(oracle, cfg, store, eval_cache);
    save_oracle_table(table, table_path);
    return table;
}

void write_loss_trace(const std::vector<LossTraceRow>& trace, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "step,epoch,sample,l_ce_n,l_ce_o,l_lws_n,l_kd_o,total\n";
    char buf[256];
    for (const LossTraceRow& row : trace) {
        std::snprintf(buf, sizeof(buf), "%d,%d,%d,%.9g,%.9g,%.9g,%.9g,%.9g\n", row.step,
                      row.epoch, row.sample, row.losses.l_ce_n, row.losses.l_ce_o,
                      row.losses.l_lws_n, row.losses.l_kd_o, row.losses.total);
        out << buf;
    }
}

}  // namespace

void cmd_generate(const ExperimentConfig& cfg, bool overwrite) {
    SampleStore probe(cfg.output_dir, false);
    if (!overwrite && fs::exists(probe.data_dir()) && !fs::is_empty(probe.data_dir()))
        throw IoError("dataset already exists under " + probe.data_dir().string() +
                      "; pass --overwrite to regenerate");
    SampleStore store(cfg.output_dir, true);
    generate_into(cfg, store);
}

MetricsReport cmd_run(const ExperimentConfig& cfg, const RunOptions& opts) {
    const fs::path out_dir(cfg.output_dir);
    if (!opts.overwrite && fs::exists(out_dir / "report.json"))
        throw IoError("run outputs already exist under " + cfg.output_dir +
                      "; pass --overwrite to rerun");
    fs::create_directories(out_dir / "checkpoints");

    const fs::path data_root = opts.data_root.empty() ? out_dir : fs::path(opts.data_root);
    const bool regen = opts.overwrite && !opts.reuse_data;
    SampleStore store(data_root, regen);
    if (regen || !data_complete(cfg, store)) generate_into(cfg, store);

    std::map<std::string, std::vector<LabeledSample>> eval_cache;
    OracleTable oracle = ensure_oracle(cfg, opts, store, eval_cache);

    ProtocolConfig pcfg;
    pcfg.schedule = cfg.schedule;
    pcfg.domains = cfg.domains();
    pcfg.h = cfg.h;
    pcfg.w = cfg.w;
    pcfg.train = make_train_config(cfg);
    pcfg.train.cache_views = opts.cache_views;

    std::vector<LossTraceRow> trace;
    ProtocolResult result = run_protocol(pcfg, store, &trace);

    bank_save(result.bank, (out_dir / "bank.styb").string());
    for (int t = 0; t < cfg.steps(); ++t)
        save_checkpoint(result.checkpoints[static_cast<size_t>(t)],
                        (out_dir / "checkpoints" / step_ckpt_name(t)).string(),
                        cfg.schedule.hash());
    write_loss_trace(trace, out_dir / "loss_trace.csv");

    MetricsReport report;
    report.oracle_miou = oracle.miou_pct;
    for (int t = 0; t < cfg.steps(); ++t) {
        store.set_phase("eval_step_" + std::to_string(t));
        const SegModel& model = result.checkpoints[static_cast<size_t>(t)];
        const std::vector<uint8_t> classes = cfg.schedule.classes_up_to(t);
        std::vector<double> deltas;
        for (int k = 0; k <= t; ++k) {
            const std::string& domain = cfg.domain_sequence[static_cast<size_t>(k)];
            if (!eval_cache.count(domain)) eval_cache[domain] = store.load_eval(domain);
            MetricsReport::EvalCell cell;
            cell.step = t;
            cell.domain = domain;
            cell.miou = eval_miou_pct(model, eval_cache[domain], classes);
            cell.delta = delta(cell.miou, oracle.miou_pct.at(domain).at(t));
            deltas.push_back(cell.delta);
            report.cells.push_back(cell);
        }
        report.delta_bar_by_step[t] = delta_bar(deltas);

        std::vector<LabeledSample> external = store.load_external(cfg.external_domain);
        GammaResult gamma = gamma_gen(model, external, classes, cfg.external_domain,
                                      cfg.domain_sequence);
        report.gamma_by_step[t] = gamma.value * 100.0;
    }
    store.set_phase("idle");
    report.dataset_fingerprint = store.fingerprint();

    write_report(report, (out_dir / "report.csv").string(), (out_dir / "report.json").string());
    return report;
}

void cmd_stylize(const std::string& image_dir, const std::string& bank_path, int step_k,
                 const std::string& out_dir) {
    StyleBank bank = bank_load(bank_path);
    if (!bank.has(step_k))
        throw ProtocolError("bank has no style for step " + std::to_string(step_k));
    fs::create_directories(out_dir);
    std::vector<fs::path> inputs;
    for (const auto& entry : fs::directory_iterator(image_dir))
        if (entry.path().extension() == ".ppm") inputs.push_back(entry.path());
    if (inputs.empty()) throw IoError("no .ppm images under " + image_dir);
    std::sort(inputs.begin(), inputs.end());
    for (const fs::path& in_path : inputs) {
        Tensor3 image = read_ppm(in_path.string());
        Tensor3 styled = apply_style(image, bank.token(step_k));
        write_ppm((fs::path(out_dir) / in_path.filename()).string(), styled);
    }
}

MetricsReport cmd_eval(const ExperimentConfig& cfg, const std::string& checkpoint_path) {
    uint64_t hash = 0;
    SegModel model = load_checkpoint(checkpoint_path, &hash);
    if (hash != cfg.schedule.hash())
        throw ProtocolError("checkpoint schedule hash does not match the config schedule");
    const int t = model.step;
    if (t < 0 || t >= cfg.steps()) throw ProtocolError("checkpoint step outside the schedule");

    SampleStore store(cfg.output_dir, false);
    store.set_phase("eval_step_" + std::to_string(t));
    OracleTable oracle =
        load_oracle_table(fs::path(cfg.output_dir) / "oracle" / "oracle_miou.json");

    MetricsReport report;
    report.oracle_miou = oracle.miou_pct;
    const std::vector<uint8_t> classes = cfg.schedule.classes_up_to(t);
    std::vector<double> deltas;
    for (int k = 0; k <= t; ++k) {
        const std::string& domain = cfg.domain_sequence[static_cast<size_t>(k)];
        std::vector<LabeledSample> eval_set = store.load_eval(domain);
        MetricsReport::EvalCell cell;
        cell.step = t;
        cell.domain = domain;
        cell.miou = eval_miou_pct(model, eval_set, classes);
        cell.delta = delta(cell.miou, oracle.miou_pct.at(domain).at(t));
        deltas.push_back(cell.delta);
        report.cells.push_back(cell);
        std::printf("step %d  %-12s mIoU %6.2f  delta %6.2f\n", t, domain.c_str(), cell.miou,
                    cell.delta);
    }
    report.delta_bar_by_step[t] = delta_bar(deltas);
    std::printf("step %d  delta_bar %.2f\n", t, report.delta_bar_by_step[t]);
    store.set_phase("idle");
    report.dataset_fingerprint = store.fingerprint();
    return report;
}

void cmd_report(const std::string& run_dir) {
    const fs::path dir(run_dir);
    MetricsReport report = read_report((dir / "report.json").string());
    write_report(report, (dir / "report.csv").string(), (dir / "report.json").string());
    for (const auto& [step, value] : report.delta_bar_by_step)
        std::printf("step %d  delta_bar %.2f  gamma_gen %.2f\n", step, value,
                    report.gamma_by_step.count(step) ? report.gamma_by_step.at(step) : 0.0);
}

std::vector<AblationRow> cmd_ablate(const ExperimentConfig& cfg,
                                    const std::vector<std::string>& variants,
                                    const std::vector<double>& betas, const RunOptions& opts) {
    if (variants.empty() && betas.empty())
        throw ConfigError("ablate: no variants or betas requested");
    const fs::path root(cfg.output_dir);
    fs::create_directories(root);

    struct Job {
        std::string label;
        ExperimentConfig cfg;
    };
    std::vector<Job> jobs;
    for (const std::string& v : variants) {
        parse_variant(v);
        ExperimentConfig sub = cfg;
        sub.variant = v;
        sub.output_dir = (root / "variants" / v).string();
        jobs.push_back({v, sub});
    }
    for (double b : betas) {
        char label[32];
        std::snprintf(label, sizeof(label), "beta_%g", b);
        ExperimentConfig sub = cfg;
        sub.beta = b;
        sub.output_dir = (root / "variants" / label).string();
        validate_config(sub);
        jobs.push_back({label, sub});
    }

    // one shared dataset and oracle; variants only rebuild their own outputs
    {
        SampleStore store(root, opts.overwrite);
        if (opts.overwrite || !data_complete(cfg, store)) generate_into(cfg, store);
        if (opts.overwrite) fs::remove_all(root / "oracle");
    }
    RunOptions sub_opts = opts;
    sub_opts.data_root = root.string();
    sub_opts.oracle_dir = (root / "oracle").string();
    sub_opts.reuse_data = true;
    sub_opts.reuse_oracle = true;

    std::vector<AblationRow> rows;
    for (const Job& job : jobs) {
        std::fprintf(stderr, "[ablate] running %s\n", job.label.c_str());
        MetricsReport report = cmd_run(job.cfg, sub_opts);
        AblationRow row;
        row.label = job.label;
        for (int t = 0; t < cfg.steps(); ++t)
            row.delta_bar_by_step.push_back(report.delta_bar_by_step.at(t));
        row.gamma_final = report.gamma_by_step.at(cfg.steps() - 1);
        row.dataset_fingerprint = report.dataset_fingerprint;
        rows.push_back(row);
    }

    for (const AblationRow& row : rows)
        if (row.dataset_fingerprint != rows.front().dataset_fingerprint)
            throw InvariantError("ablate: dataset fingerprints diverged between variants");

    std::ofstream csv(root / "ablation.csv");
    if (!csv) throw IoError("cannot write ablation.csv");
    csv << "label";
    for (int t = 0; t < cfg.steps(); ++t) csv << ",delta_bar_" << t;
    csv << ",gamma_final,dataset_fingerprint\n";
    char buf[64];
    for (const AblationRow& row : rows) {
        csv << row.label;
        for (double v : row.delta_bar_by_step) {
            std::snprintf(buf, sizeof(buf), ",%.2f", v);
            csv << buf;
        }
        std::snprintf(buf, sizeof(buf), ",%.2f,%llu\n", row.gamma_final,
                      static_cast<unsigned long long>(row.dataset_fingerprint));
        csv << buf;
    }
    return rows;
}

}  // namespace stylecl
