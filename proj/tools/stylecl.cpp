#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "stylecl/commands.hpp"
#include "stylecl/util.hpp"

namespace {

stylecl::ExperimentConfig load_with_overrides(const std::string& config_path,
                                              const std::string& variant,
                                              const std::string& out_dir, long long seed) {
    stylecl::ExperimentConfig cfg = stylecl::load_config(config_path);
    if (!variant.empty()) cfg.variant = variant;
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    if (seed >= 0) cfg.seed = static_cast<uint64_t>(seed);
    stylecl::validate_config(cfg);
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"stylecl: class- and domain-incremental segmentation sandbox"};
    app.require_subcommand(1);

    std::string config_path, variant, out_dir, image_dir, bank_path, checkpoint, run_dir;
    std::string variants_csv, betas_csv;
    long long seed = -1;
    int step_k = 0;
    bool overwrite = false, cache_views = false;

    auto add_common = [&](CLI::App* cmd, bool needs_config) {
        auto* opt = cmd->add_option("--config", config_path, "experiment config JSON");
        if (needs_config) opt->required();
        cmd->add_option("--variant", variant, "method variant override");
        cmd->add_option("--out", out_dir, "output directory override");
        cmd->add_option("--seed", seed, "seed override");
        cmd->add_flag("--overwrite", overwrite, "replace existing outputs");
    };

    CLI::App* generate = app.add_subcommand("generate", "materialize datasets");
    add_common(generate, true);

    CLI::App* run = app.add_subcommand("run", "run the incremental protocol end to end");
    add_common(run, true);
    run->add_flag("--cache-views", cache_views,
                  "cache stylized views across epochs (identical results, more memory)");

    CLI::App* stylize = app.add_subcommand("stylize", "apply a stored style to a directory");
    stylize->add_option("--images", image_dir, "directory of .ppm images")->required();
    stylize->add_option("--bank", bank_path, "style bank file")->required();
    stylize->add_option("--step", step_k, "style step index")->required();
    stylize->add_option("--out", out_dir, "output directory")->required();

    CLI::App* eval = app.add_subcommand("eval", "evaluate one checkpoint");
    add_common(eval, true);
    eval->add_option("--checkpoint", checkpoint, "checkpoint path")->required();

    CLI::App* report = app.add_subcommand("report", "re-emit report files for a run");
    report->add_option("--run", run_dir, "run directory")->required();

    CLI::App* ablate = app.add_subcommand("ablate", "compare variants on identical data");
    add_common(ablate, true);
    ablate->add_option("--variants", variants_csv, "comma-separated variant names");
    ablate->add_option("--betas", betas_csv, "comma-separated beta values");
    ablate->add_flag("--cache-views", cache_views, "cache stylized views across epochs");

    CLI11_PARSE(app, argc, argv);

    try {
        if (generate->parsed()) {
            cmd_generate(load_with_overrides(config_path, variant, out_dir, seed), overwrite);
        } else if (run->parsed()) {
            stylecl::RunOptions opts;
            opts.overwrite = overwrite;
            opts.cache_views = cache_views;
            stylecl::MetricsReport rep =
                stylecl::cmd_run(load_with_overrides(config_path, variant, out_dir, seed), opts);
            for (const auto& [step, value] : rep.delta_bar_by_step)
                std::printf("step %d  delta_bar %.2f  gamma_gen %.2f\n", step, value,
                            rep.gamma_by_step.at(step));
        } else if (stylize->parsed()) {
            stylecl::cmd_stylize(image_dir, bank_path, step_k, out_dir);
        } else if (eval->parsed()) {
            stylecl::cmd_eval(load_with_overrides(config_path, variant, out_dir, seed),
                              checkpoint);
        } else if (report->parsed()) {
            stylecl::cmd_report(run_dir);
        } else if (ablate->parsed()) {
            auto split = [](const std::string& csv) {
                std::vector<std::string> out;
                size_t pos = 0;
                while (pos <= csv.size() && !csv.empty()) {
                    size_t next = csv.find(',', pos);
                    out.push_back(csv.substr(pos, next == std::string::npos ? next : next - pos));
                    if (next == std::string::npos) break;
                    pos = next + 1;
                }
                return out;
            };
            std::vector<double> betas;
            for (const std::string& b : split(betas_csv)) betas.push_back(std::stod(b));
            stylecl::RunOptions opts;
            opts.overwrite = overwrite;
            opts.cache_views = cache_views;
            auto rows = stylecl::cmd_ablate(load_with_overrides(config_path, variant, out_dir, seed),
                                            split(variants_csv), betas, opts);
            for (const auto& row : rows)
                std::printf("%-24s delta_bar_final %.2f\n", row.label.c_str(),
                            row.delta_bar_by_step.back());
        }
    } catch (const stylecl::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const stylecl::IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 3;
    } catch (const stylecl::FormatError& e) {
        std::fprintf(stderr, "format error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    }
    return 0;
}
