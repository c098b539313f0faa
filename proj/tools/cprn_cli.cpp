// Command-line surface: dataset generation, training, evaluation, ablation
// matrices, and mask export. Exit codes: 0 ok, 1 validation error, 2 runtime
// failure.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "cprn/train.hpp"

namespace fs = std::filesystem;
using namespace cprn;

namespace {

/// Relative paths land under $CPRN_OUT when it is set.
std::string resolve_out(const std::string& path) {
    if (path.empty()) return path;
    const char* root = std::getenv("CPRN_OUT");
    if (root == nullptr || *root == '\0' || fs::path(path).is_absolute()) return path;
    return (fs::path(root) / path).string();
}

struct ConfigFlags {
    std::string config_file;
    TrainConfig flags;  // values as parsed; only flags the user set are applied
};

/// Mirror every TrainConfig field as a flag; --config supplies a base file.
void add_config_options(CLI::App* cmd, ConfigFlags& cf) {
    cmd->add_option("--config", cf.config_file, "key=value config file (flags override it)");
    cmd->add_option("--variant", cf.flags.variant,
                    "holi_star|roco_only|serial|parallel_star|parallel_guided");
    cmd->add_option("--fusion", cf.flags.fusion, "eq5|f1|f2|f3|f4");
    cmd->add_option("--stages", cf.flags.stages, "pyramid stages");
    cmd->add_option("--lr", cf.flags.lr, "learning rate");
    cmd->add_option("--weight-decay", cf.flags.weight_decay, "decoupled weight decay");
    cmd->add_option("--batch-size", cf.flags.batch_size, "batch size");
    cmd->add_option("--epochs", cf.flags.epochs, "training epochs");
    cmd->add_option("--seed", cf.flags.seed, "run seed");
    cmd->add_option("--decoder-wiring", cf.flags.decoder_wiring, "consume|literal");
    cmd->add_flag("--renorm-roho,!--no-renorm-roho", cf.flags.renorm_roho,
                  "renormalize the guided attention map per pixel");
    cmd->add_flag("--ffn,!--no-ffn", cf.flags.use_ffn, "merge pathways through the FFN");
    cmd->add_flag("--ape,!--no-ape", cf.flags.use_ape, "learned absolute position embedding");
    cmd->add_option("--dropout", cf.flags.dropout, "FFN dropout probability");
    cmd->add_option("--channels", cf.flags.channels, "feature channels");
    cmd->add_option("--d-l", cf.flags.d_l, "token embedding width");
    cmd->add_option("--t-max", cf.flags.t_max, "maximum expression length");
    cmd->add_option("--stop-at-val-iou", cf.flags.stop_at_val_iou,
                    "stop early when validation overall IoU reaches this");
}

TrainConfig merge_config(const CLI::App* cmd, const ConfigFlags& cf) {
    TrainConfig cfg;
    if (!cf.config_file.empty()) cfg = TrainConfig::from_kv_file(cf.config_file);
    auto set_if = [&](const char* flag, auto member) {
        if (cmd->count(flag) > 0) cfg.*member = cf.flags.*member;
    };
    set_if("--variant", &TrainConfig::variant);
    set_if("--fusion", &TrainConfig::fusion);
    set_if("--stages", &TrainConfig::stages);
    set_if("--lr", &TrainConfig::lr);
    set_if("--weight-decay", &TrainConfig::weight_decay);
    set_if("--batch-size", &TrainConfig::batch_size);
    set_if("--epochs", &TrainConfig::epochs);
    set_if("--seed", &TrainConfig::seed);
    set_if("--decoder-wiring", &TrainConfig::decoder_wiring);
    set_if("--renorm-roho", &TrainConfig::renorm_roho);
    set_if("--ffn", &TrainConfig::use_ffn);
    set_if("--ape", &TrainConfig::use_ape);
    set_if("--dropout", &TrainConfig::dropout);
    set_if("--channels", &TrainConfig::channels);
    set_if("--d-l", &TrainConfig::d_l);
    set_if("--t-max", &TrainConfig::t_max);
    set_if("--stop-at-val-iou", &TrainConfig::stop_at_val_iou);
    return cfg;
}

void write_reports(const EvalResult& res, const std::string& out_dir) {
    for (const auto& split : res.splits) {
        std::cout << "[" << split.name << "]\n" << to_kv_text(split.report);
    }
    if (out_dir.empty()) return;
    fs::create_directories(out_dir);
    for (const auto& split : res.splits) {
        std::ofstream txt(fs::path(out_dir) / ("report_" + split.name + ".txt"));
        txt << to_kv_text(split.report);
        std::ofstream js(fs::path(out_dir) / ("report_" + split.name + ".json"));
        js << to_json_text(split.report) << "\n";
    }
}

TrainConfig config_for_checkpoint(const CLI::App* cmd, const ConfigFlags& cf,
                                  const std::string& checkpoint) {
    if (!cf.config_file.empty() || cmd->count("--variant") > 0) {
        return merge_config(cmd, cf);
    }
    const fs::path side = fs::path(checkpoint).parent_path() / "config.txt";
    if (fs::exists(side)) {
        return TrainConfig::from_kv_file(side.string());
    }
    return merge_config(cmd, cf);
}

int run(int argc, char** argv) {
    CLI::App app{"Collaborative position reasoning segmentation, desk scale"};
    app.require_subcommand(1);

    // generate
    auto* gen = app.add_subcommand("generate", "build a synthetic referring-segmentation dataset");
    synth::GenConfig gcfg;
    std::string gen_out;
    int grid = 64;
    gen->add_option("--out", gen_out, "dataset directory")->required();
    gen->add_option("--count", gcfg.count, "number of samples")->required();
    gen->add_option("--seed", gcfg.seed, "generator seed");
    gen->add_option("--grid", grid, "square image extent");
    gen->add_option("--small-fraction", gcfg.small_fraction, "forced small-referent fraction");
    gen->add_option("--complex-fraction", gcfg.complex_fraction, "forced long-expression fraction");
    gen->add_option("--min-objects", gcfg.min_objects, "minimum objects per scene");
    gen->add_option("--max-objects", gcfg.max_objects, "maximum objects per scene");

    // train
    auto* tr = app.add_subcommand("train", "train a model");
    ConfigFlags tr_cf;
    std::string tr_data, tr_val, tr_out;
    tr->add_option("--data", tr_data, "training dataset directory")->required();
    tr->add_option("--val", tr_val, "validation dataset directory");
    tr->add_option("--out", tr_out, "output directory (checkpoint, loss curve)")->required();
    add_config_options(tr, tr_cf);

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "evaluate a checkpoint");
    ConfigFlags ev_cf;
    std::string ev_ckpt, ev_data, ev_out, ev_splits = "all", ev_export;
    ev->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
    ev->add_option("--data", ev_data, "dataset directory")->required();
    ev->add_option("--splits", ev_splits, "comma list: all,small_scale,complex_language");
    ev->add_option("--out", ev_out, "directory for report files");
    ev->add_option("--export-masks", ev_export, "write predicted masks (PGM) here");
    add_config_options(ev, ev_cf);

    // ablate
    auto* ab = app.add_subcommand("ablate", "train and compare a variant matrix");
    ConfigFlags ab_cf;
    std::string ab_data, ab_val, ab_out, ab_mode = "variants";
    std::string ab_list;
    int ab_seeds = 1;
    ab->add_option("--data", ab_data, "training dataset directory")->required();
    ab->add_option("--val", ab_val, "validation dataset directory")->required();
    ab->add_option("--out", ab_out, "directory for the comparison report");
    ab->add_option("--mode", ab_mode, "variants|fusions");
    ab->add_option("--list", ab_list, "comma list of variants (defaults per mode)");
    ab->add_option("--seeds", ab_seeds, "repeat with seed, seed+1, ... and report each run");
    add_config_options(ab, ab_cf);

    // export-masks
    auto* ex = app.add_subcommand("export-masks", "write predicted masks for a dataset");
    ConfigFlags ex_cf;
    std::string ex_ckpt, ex_data, ex_out;
    ex->add_option("--checkpoint", ex_ckpt, "checkpoint file")->required();
    ex->add_option("--data", ex_data, "dataset directory")->required();
    ex->add_option("--out", ex_out, "directory for PGM masks")->required();
    add_config_options(ex, ex_cf);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    if (gen->parsed()) {
        gcfg.h = grid;
        gcfg.w = grid;
        const std::string dir = resolve_out(gen_out);
        synth::Dataset ds = synth::generate(gcfg);
        synth::save_dataset(ds, dir);
        std::cout << "wrote " << ds.samples.size() << " samples to " << dir << "\n";
        std::cout << "small_scale=" << synth::small_scale_indices(ds).size()
                  << " complex_language=" << synth::complex_language_indices(ds).size() << "\n";
        return 0;
    }

    if (tr->parsed()) {
        TrainConfig cfg = merge_config(tr, tr_cf);
        cfg.data_dir = tr_data;
        cfg.val_dir = tr_val;
        cfg.out_dir = resolve_out(tr_out);
        cfg.validate();
        TrainResult res = train(cfg);
        std::cout << "epochs_run=" << res.train_loss.size() << "\n";
        std::cout << "final_train_loss=" << (res.train_loss.empty() ? 0.0 : res.train_loss.back())
                  << "\n";
        if (res.best_epoch >= 0) {
            std::cout << "best_epoch=" << res.best_epoch
                      << " best_val_overall_iou=" << res.best_overall_iou << "\n";
        }
        if (!res.checkpoint_path.empty()) {
            std::cout << "checkpoint=" << res.checkpoint_path << "\n";
        }
        return 0;
    }

    auto load_runtime = [](const TrainConfig& cfg, const synth::Dataset& ds,
                           const std::string& ckpt) {
        auto rt = make_runtime(cfg, ds.h, ds.w);
        rt->store.load(ckpt);
        return rt;
    };

    if (ev->parsed()) {
        synth::Dataset ds = synth::load_dataset(ev_data);
        TrainConfig cfg = config_for_checkpoint(ev, ev_cf, ev_ckpt);
        auto rt = load_runtime(cfg, ds, ev_ckpt);
        std::vector<std::string> splits;
        std::stringstream ss(ev_splits);
        std::string item;
        while (std::getline(ss, item, ',')) {
            if (!item.empty()) splits.push_back(item);
        }
        EvalResult res = evaluate(*rt, ds, splits, resolve_out(ev_export));
        write_reports(res, resolve_out(ev_out));
        return 0;
    }

    if (ab->parsed()) {
        synth::Dataset train_ds = synth::load_dataset(ab_data);
        synth::Dataset val_ds = synth::load_dataset(ab_val);
        TrainConfig base = merge_config(ab, ab_cf);
        std::vector<std::string> names;
        if (!ab_list.empty()) {
            std::stringstream ss(ab_list);
            std::string item;
            while (std::getline(ss, item, ',')) {
                if (!item.empty()) names.push_back(item);
            }
        } else if (ab_mode == "fusions") {
            names = {"eq5", "f1", "f2", "f3", "f4"};
        } else {
            names = {"holi_star", "roco_only", "serial", "parallel_star", "parallel_guided"};
        }
        std::ostringstream full;
        for (int s = 0; s < ab_seeds; ++s) {
            TrainConfig cfg = base;
            cfg.seed = base.seed + static_cast<std::uint64_t>(s);
            AblateReport rep = ab_mode == "fusions"
                                   ? ablate_fusions(cfg, names, train_ds, val_ds)
                                   : ablate_variants(cfg, names, train_ds, val_ds);
            full << "# seed " << cfg.seed << "\n" << rep.table << rep.deltas << "\n";
        }
        std::cout << full.str();
        const std::string out = resolve_out(ab_out);
        if (!out.empty()) {
            fs::create_directories(out);
            std::ofstream f(fs::path(out) / "ablation.txt");
            f << full.str();
        }
        return 0;
    }

    if (ex->parsed()) {
        synth::Dataset ds = synth::load_dataset(ex_data);
        TrainConfig cfg = config_for_checkpoint(ex, ex_cf, ex_ckpt);
        auto rt = load_runtime(cfg, ds, ex_ckpt);
        evaluate(*rt, ds, {"all"}, resolve_out(ex_out));
        std::cout << "wrote masks for " << ds.samples.size() << " samples\n";
        return 0;
    }

    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
