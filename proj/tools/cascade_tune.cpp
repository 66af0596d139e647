// cascade_tune: synthetic-phantom training pipeline for joint liver/lesion
// segmentation and pixel-wise lesion classification.
//
// Subcommands: gen-data, pretrain, finetune, evaluate, experiment.
// Exit codes: 0 success, 1 usage/config error, 2 runtime failure.

#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "cascade/common.hpp"
#include "cascade/experiment.hpp"

namespace {

cascade::ExperimentConfig resolve_config(const std::string& config_path, const std::string& out,
                                         int threads) {
    cascade::ExperimentConfig cfg =
        config_path.empty() ? cascade::default_config() : cascade::load_config(config_path);
    if (!out.empty()) cfg.out_dir = out;
    if (threads > 0) cfg.threads = threads;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cascaded liver/lesion segmentation and classification trainer"};
    app.require_subcommand(1);

    std::string config_path, out_dir, protocol, checkpoint;
    int fold = 0, threads = 0;
    std::optional<std::uint64_t> seed;
    bool force = false;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "experiment config JSON");
        sub->add_option("--out", out_dir, "output directory override");
        sub->add_option("--threads", threads, "worker threads for independent cells");
    };

    CLI::App* gen = app.add_subcommand("gen-data", "generate the synthetic phantom datasets");
    add_common(gen);
    gen->add_flag("--force", force, "overwrite existing datasets");

    CLI::App* pre = app.add_subcommand("pretrain", "train the liver and lesion stages");
    add_common(pre);

    CLI::App* fin = app.add_subcommand("finetune", "fine-tune one protocol on one fold");
    add_common(fin);
    fin->add_option("--protocol", protocol, "baseline|naive|freeze_encoder|hier_freeze|hier_unfreeze")
        ->required();
    fin->add_option("--fold", fold, "cross-validation fold index")->required();
    std::uint64_t seed_value = 0;
    CLI::Option* seed_opt = fin->add_option("--seed", seed_value, "run seed");

    CLI::App* eva = app.add_subcommand("evaluate", "run the cascade over one fold's test set");
    add_common(eva);
    eva->add_option("checkpoint", checkpoint, "fine-tuned checkpoint directory")->required();
    eva->add_option("--fold", fold, "cross-validation fold index")->required();

    CLI::App* exp = app.add_subcommand("experiment", "full protocol comparison");
    add_common(exp);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        const cascade::ExperimentConfig cfg = resolve_config(config_path, out_dir, threads);
        if (seed_opt->count() > 0) seed = seed_value;
        if (gen->parsed()) cascade::cmd_gen_data(cfg, force);
        if (pre->parsed()) cascade::cmd_pretrain(cfg);
        if (fin->parsed()) cascade::cmd_finetune(cfg, protocol, fold, seed);
        if (eva->parsed()) cascade::cmd_evaluate(cfg, checkpoint, fold);
        if (exp->parsed()) cascade::cmd_experiment(cfg);
    } catch (const cascade::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
