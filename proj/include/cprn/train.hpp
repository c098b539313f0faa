#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cprn/metrics.hpp"
#include "cprn/model.hpp"
#include "cprn/optim.hpp"
#include "cprn/synth.hpp"

namespace cprn {

/// Everything a run needs; persisted verbatim next to checkpoints.
struct TrainConfig {
    std::string variant = "parallel_guided";
    std::string fusion = "eq5";
    int stages = 4;
    double lr = 1e-3;
    double weight_decay = 0.01;
    int batch_size = 8;
    int epochs = 30;
    std::uint64_t seed = 1;
    std::string decoder_wiring = "consume";
    bool renorm_roho = false;
    bool use_ffn = true;
    bool use_ape = true;
    double dropout = 0.1;
    int channels = 32;
    int d_l = 32;
    int t_max = 20;
    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    double lr_decay_power = 0.9;  // polynomial schedule
    double stop_at_val_iou = -1;  // early stop once validation overall IoU reaches this
    std::string data_dir;
    std::string val_dir;
    std::string out_dir;

    void validate() const;  // ConfigError on any bad field
    std::string to_kv() const;
    static TrainConfig from_kv_text(const std::string& text);
    static TrainConfig from_kv_file(const std::string& path);
};

/// A constructed model with its parameters; stable address for Model's store pointer.
struct Runtime {
    ModelConfig mcfg;
    ParameterStore store;
    std::optional<Model> model;
};

std::unique_ptr<Runtime> make_runtime(const TrainConfig& cfg, int image_h, int image_w);

struct TrainResult {
    std::vector<double> train_loss;        // per epoch
    std::vector<double> val_overall_iou;   // per epoch, empty without val data
    std::vector<double> val_mean_iou;
    double best_overall_iou = -1.0;
    int best_epoch = -1;
    std::string checkpoint_path;  // best-by-overall-IoU, empty without out_dir
    double seconds = 0.0;
};

/// Full training loop; deterministic in cfg.seed. Writes loss.csv, config.txt
/// and the best checkpoint under cfg.out_dir when set. A NaN loss aborts with
/// the offending batch id in the message.
TrainResult train(const TrainConfig& cfg, const synth::Dataset& train_ds,
                  const synth::Dataset* val_ds, Runtime* runtime = nullptr);
/// Convenience: loads datasets from cfg.data_dir / cfg.val_dir.
TrainResult train(const TrainConfig& cfg);

struct SplitReport {
    std::string name;
    MetricReport report;
};

struct EvalResult {
    std::vector<SplitReport> splits;  // "all" plus any requested subsets
    const MetricReport& at(const std::string& name) const;
};

/// Evaluate a runtime on a dataset. Splits: "all", "small_scale",
/// "complex_language". Writes predicted masks as PGM under export_dir if set.
EvalResult evaluate(Runtime& rt, const synth::Dataset& ds,
                    const std::vector<std::string>& splits = {"all"},
                    const std::string& export_dir = "");

/// Per-sample score maps in eval mode (exposed for tests).
Tensor eval_forward(Runtime& rt, const synth::Sample& sample);

struct AblateRow {
    std::string name;
    EvalResult eval;
};

struct AblateReport {
    std::vector<AblateRow> rows;
    std::string table;   // variant x metrics
    std::string deltas;  // signed differences against the first row
};

/// Train each named stage variant with a shared seed and dataset, evaluate on
/// the validation set, and lay the results out as a comparison table.
AblateReport ablate_variants(const TrainConfig& base, const std::vector<std::string>& variants,
                             const synth::Dataset& train_ds, const synth::Dataset& val_ds);

/// Same matrix over the axis-fusion functions (eq5, f1..f4).
AblateReport ablate_fusions(const TrainConfig& base, const std::vector<std::string>& kinds,
                            const synth::Dataset& train_ds, const synth::Dataset& val_ds);

}  // namespace cprn
