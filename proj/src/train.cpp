#include "cprn/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace cprn {

namespace fs = std::filesystem;

// --- config -------------------------------------------------------------------

void TrainConfig::validate() const {
    variant_from_string(variant);
    fuse_from_string(fusion);
    decoder::wiring_from_string(decoder_wiring);
    if (stages < 1 || stages > 6) throw ConfigError("config: stages out of range");
    if (!(lr >= 0)) throw ConfigError("config: lr must be >= 0");
    if (!(weight_decay >= 0)) throw ConfigError("config: weight_decay must be >= 0");
    if (batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("config: epochs must be >= 1");
    if (dropout < 0 || dropout >= 1) throw ConfigError("config: dropout must be in [0, 1)");
    if (channels < 1 || d_l < 1) throw ConfigError("config: channel extents must be >= 1");
    if (t_max < 1) throw ConfigError("config: t_max must be >= 1");
    if (lr_decay_power < 0) throw ConfigError("config: lr_decay_power must be >= 0");
}

std::string TrainConfig::to_kv() const {
    std::ostringstream os;
    os << "variant=" << variant << "\n";
    os << "fusion=" << fusion << "\n";
    os << "stages=" << stages << "\n";
    os << "lr=" << lr << "\n";
    os << "weight_decay=" << weight_decay << "\n";
    os << "batch_size=" << batch_size << "\n";
    os << "epochs=" << epochs << "\n";
    os << "seed=" << seed << "\n";
    os << "decoder_wiring=" << decoder_wiring << "\n";
    os << "renorm_roho=" << (renorm_roho ? 1 : 0) << "\n";
    os << "use_ffn=" << (use_ffn ? 1 : 0) << "\n";
    os << "use_ape=" << (use_ape ? 1 : 0) << "\n";
    os << "dropout=" << dropout << "\n";
    os << "channels=" << channels << "\n";
    os << "d_l=" << d_l << "\n";
    os << "t_max=" << t_max << "\n";
    os << "beta1=" << beta1 << "\n";
    os << "beta2=" << beta2 << "\n";
    os << "adam_eps=" << adam_eps << "\n";
    os << "lr_decay_power=" << lr_decay_power << "\n";
    os << "stop_at_val_iou=" << stop_at_val_iou << "\n";
    os << "data_dir=" << data_dir << "\n";
    os << "val_dir=" << val_dir << "\n";
    os << "out_dir=" << out_dir << "\n";
    return os.str();
}

TrainConfig TrainConfig::from_kv_text(const std::string& text) {
    TrainConfig cfg;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("config line without '=': " + line);
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        try {
            if (key == "variant") cfg.variant = val;
            else if (key == "fusion") cfg.fusion = val;
            else if (key == "stages") cfg.stages = std::stoi(val);
            else if (key == "lr") cfg.lr = std::stod(val);
            else if (key == "weight_decay") cfg.weight_decay = std::stod(val);
            else if (key == "batch_size") cfg.batch_size = std::stoi(val);
            else if (key == "epochs") cfg.epochs = std::stoi(val);
            else if (key == "seed") cfg.seed = std::stoull(val);
            else if (key == "decoder_wiring") cfg.decoder_wiring = val;
            else if (key == "renorm_roho") cfg.renorm_roho = std::stoi(val) != 0;
            else if (key == "use_ffn") cfg.use_ffn = std::stoi(val) != 0;
            else if (key == "use_ape") cfg.use_ape = std::stoi(val) != 0;
            else if (key == "dropout") cfg.dropout = std::stod(val);
            else if (key == "channels") cfg.channels = std::stoi(val);
            else if (key == "d_l") cfg.d_l = std::stoi(val);
            else if (key == "t_max") cfg.t_max = std::stoi(val);
            else if (key == "beta1") cfg.beta1 = std::stod(val);
            else if (key == "beta2") cfg.beta2 = std::stod(val);
            else if (key == "adam_eps") cfg.adam_eps = std::stod(val);
            else if (key == "lr_decay_power") cfg.lr_decay_power = std::stod(val);
            else if (key == "stop_at_val_iou") cfg.stop_at_val_iou = std::stod(val);
            else if (key == "data_dir") cfg.data_dir = val;
            else if (key == "val_dir") cfg.val_dir = val;
            else if (key == "out_dir") cfg.out_dir = val;
            else throw ConfigError("unknown config key: " + key);
        } catch (const std::invalid_argument&) {
            throw ConfigError("bad value for config key " + key + ": " + val);
        } catch (const std::out_of_range&) {
            throw ConfigError("bad value for config key " + key + ": " + val);
        }
    }
    return cfg;
}

TrainConfig TrainConfig::from_kv_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << is.rdbuf();
    return from_kv_text(buf.str());
}

std::unique_ptr<Runtime> make_runtime(const TrainConfig& cfg, int image_h, int image_w) {
    cfg.validate();
    auto rt = std::make_unique<Runtime>();
    rt->mcfg.image_h = image_h;
    rt->mcfg.image_w = image_w;
    rt->mcfg.channels = cfg.channels;
    rt->mcfg.d_l = cfg.d_l;
    rt->mcfg.t_max = cfg.t_max;
    rt->mcfg.stages = cfg.stages;
    rt->mcfg.stage.variant = variant_from_string(cfg.variant);
    rt->mcfg.stage.fuse = fuse_from_string(cfg.fusion);
    rt->mcfg.stage.use_ffn = cfg.use_ffn;
    rt->mcfg.stage.use_ape = cfg.use_ape;
    rt->mcfg.stage.renorm_roho = cfg.renorm_roho;
    rt->mcfg.stage.dropout_p = static_cast<real>(cfg.dropout);
    rt->mcfg.wiring = decoder::wiring_from_string(cfg.decoder_wiring);
    rt->store = ParameterStore(cfg.seed);
    rt->model.emplace(rt->mcfg, rt->store);
    return rt;
}

// --- data plumbing --------------------------------------------------------------

namespace {

struct PreparedData {
    std::vector<Tensor> images;
    std::vector<Tensor> truths;
};

PreparedData prepare(const synth::Dataset& ds, int t_max) {
    if (ds.samples.empty()) throw ValueError("dataset is empty");
    PreparedData out;
    out.images.reserve(ds.samples.size());
    out.truths.reserve(ds.samples.size());
    for (const auto& s : ds.samples) {
        if (static_cast<int>(s.tokens.size()) > t_max) {
            throw ConfigError("sample " + std::to_string(s.id) + " exceeds t_max");
        }
        if (s.tokens.empty()) throw ValueError("sample " + std::to_string(s.id) +
                                               " has an empty expression");
        out.images.push_back(Tensor::leaf({ds.h, ds.w, 3}, std::vector<real>(s.image.begin(),
                                                                             s.image.end())));
        std::vector<real> tr(s.truth.size());
        for (size_t i = 0; i < tr.size(); ++i) tr[i] = s.truth[i] ? real(1) : real(0);
        out.truths.push_back(Tensor::leaf({ds.h, ds.w}, std::move(tr)));
    }
    return out;
}

std::vector<size_t> shuffled_indices(size_t n, Rng rng) {
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    for (size_t i = n; i > 1; --i) {
        std::swap(idx[i - 1], idx[rng.below(i)]);
    }
    return idx;
}

MetricReport eval_records(Runtime& rt, const synth::Dataset& ds, const PreparedData& data,
                          const std::vector<size_t>& subset) {
    std::vector<SegmentationRecord> records(subset.size());
    std::vector<std::exception_ptr> errors(subset.size());
#pragma omp parallel for schedule(dynamic)
    for (long k = 0; k < static_cast<long>(subset.size()); ++k) {
        try {
            const size_t i = subset[static_cast<size_t>(k)];
            ForwardCtx ctx;
            Tensor score = rt.model->forward(data.images[i], ds.samples[i].tokens, ctx);
            records[static_cast<size_t>(k)] =
                SegmentationRecord::from_masks(binarize(score), ds.samples[i].truth);
        } catch (...) {
            errors[static_cast<size_t>(k)] = std::current_exception();
        }
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return metrics(records);
}

std::vector<size_t> all_indices(size_t n) {
    std::vector<size_t> out(n);
    for (size_t i = 0; i < n; ++i) out[i] = i;
    return out;
}

}  // namespace

// --- training loop -----------------------------------------------------------------

TrainResult train(const TrainConfig& cfg, const synth::Dataset& train_ds,
                  const synth::Dataset* val_ds, Runtime* runtime) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();

    std::unique_ptr<Runtime> owned;
    Runtime* rt = runtime;
    if (rt == nullptr) {
        owned = make_runtime(cfg, train_ds.h, train_ds.w);
        rt = owned.get();
    }

    PreparedData data = prepare(train_ds, cfg.t_max);
    std::optional<PreparedData> val_data;
    if (val_ds != nullptr) val_data = prepare(*val_ds, cfg.t_max);

    AdamWConfig ocfg;
    ocfg.lr = static_cast<real>(cfg.lr);
    ocfg.beta1 = static_cast<real>(cfg.beta1);
    ocfg.beta2 = static_cast<real>(cfg.beta2);
    ocfg.eps = static_cast<real>(cfg.adam_eps);
    ocfg.weight_decay = static_cast<real>(cfg.weight_decay);
    AdamW opt(rt->store, ocfg);

    const size_t n = train_ds.samples.size();
    const auto names = rt->store.names();
    const long steps_per_epoch = static_cast<long>((n + cfg.batch_size - 1) / cfg.batch_size);
    const long total_steps = steps_per_epoch * cfg.epochs;

    const Rng shuffle_root = Rng(cfg.seed).fork(0x5A);
    const Rng dropout_root = Rng(cfg.seed).fork(0xD0);

    TrainResult result;
    if (!cfg.out_dir.empty()) {
        fs::create_directories(cfg.out_dir);
        std::ofstream cf(fs::path(cfg.out_dir) / "config.txt");
        cf << cfg.to_kv();
    }

    long step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const std::vector<size_t> order = shuffled_indices(n, shuffle_root.fork(
            static_cast<std::uint64_t>(epoch)));
        const Rng epoch_dropout = dropout_root.fork(static_cast<std::uint64_t>(epoch));

        double epoch_loss = 0.0;
        for (long b = 0; b < steps_per_epoch; ++b) {
            const size_t lo = static_cast<size_t>(b) * cfg.batch_size;
            const size_t hi = std::min(n, lo + cfg.batch_size);
            const long bs = static_cast<long>(hi - lo);

            std::vector<double> losses(static_cast<size_t>(bs), 0.0);
            std::vector<Gradients> grads(static_cast<size_t>(bs));
            std::vector<std::exception_ptr> errors(static_cast<size_t>(bs));

#pragma omp parallel for schedule(dynamic)
            for (long k = 0; k < bs; ++k) {
                try {
                    const size_t i = order[lo + static_cast<size_t>(k)];
                    Rng drng = epoch_dropout.fork(static_cast<std::uint64_t>(i));
                    GradTape tape;
                    TapeScope scope(tape);
                    ForwardCtx ctx{true, &drng};
                    Tensor score = rt->model->forward(data.images[i], train_ds.samples[i].tokens, ctx);
                    Tensor loss = bce_loss(score, data.truths[i]);
                    losses[static_cast<size_t>(k)] = static_cast<double>(loss.item());
                    grads[static_cast<size_t>(k)] = backward(loss);
                } catch (...) {
                    errors[static_cast<size_t>(k)] = std::current_exception();
                }
            }
            for (auto& e : errors) {
                if (e) std::rethrow_exception(e);
            }
            for (long k = 0; k < bs; ++k) {
                if (!std::isfinite(losses[static_cast<size_t>(k)])) {
                    const size_t i = order[lo + static_cast<size_t>(k)];
                    throw ValueError("NaN loss in epoch " + std::to_string(epoch) + ", batch " +
                                     std::to_string(b) + " (sample id " +
                                     std::to_string(train_ds.samples[i].id) + ")");
                }
                epoch_loss += losses[static_cast<size_t>(k)];
            }

            // ordered reduction: fixed sample order within fixed parameter order
            std::map<std::string, std::vector<real>> total;
            const real inv_bs = real(1) / static_cast<real>(bs);
            for (const auto& name : names) {
                const Tensor& p = rt->store.get(name);
                std::vector<real> g(p.data().size(), real(0));
                bool any = false;
                for (long k = 0; k < bs; ++k) {
                    const auto& gk = grads[static_cast<size_t>(k)];
                    if (!gk.has(p)) continue;
                    const auto& gv = gk.at(p);
                    for (size_t j = 0; j < g.size(); ++j) g[j] += gv[j];
                    any = true;
                }
                if (any) {
                    for (auto& v : g) v *= inv_bs;
                    total.emplace(name, std::move(g));
                }
            }

            const real frac = total_steps > 0
                                  ? real(1) - static_cast<real>(step) / static_cast<real>(total_steps)
                                  : real(1);
            const real lr_t = static_cast<real>(cfg.lr) *
                              std::pow(std::max(frac, real(0)), static_cast<real>(cfg.lr_decay_power));
            opt.step(total, lr_t);
            ++step;
        }
        result.train_loss.push_back(epoch_loss / static_cast<double>(n));

        if (val_ds != nullptr) {
            MetricReport rep = eval_records(*rt, *val_ds, *val_data, all_indices(val_ds->samples.size()));
            result.val_overall_iou.push_back(rep.overall_iou);
            result.val_mean_iou.push_back(rep.mean_iou);
            if (rep.overall_iou > result.best_overall_iou) {
                result.best_overall_iou = rep.overall_iou;
                result.best_epoch = epoch;
                if (!cfg.out_dir.empty()) {
                    result.checkpoint_path = (fs::path(cfg.out_dir) / "best.ckpt").string();
                    rt->store.save(result.checkpoint_path);
                }
            }
            if (cfg.stop_at_val_iou > 0 && rep.overall_iou >= cfg.stop_at_val_iou) {
                break;
            }
        }
    }

    if (val_ds == nullptr && !cfg.out_dir.empty()) {
        result.checkpoint_path = (fs::path(cfg.out_dir) / "last.ckpt").string();
        rt->store.save(result.checkpoint_path);
    }

    if (!cfg.out_dir.empty()) {
        std::ofstream csv(fs::path(cfg.out_dir) / "loss.csv");
        csv << "epoch,train_loss";
        if (!result.val_overall_iou.empty()) csv << ",val_overall_iou,val_mean_iou";
        csv << "\n";
        for (size_t e = 0; e < result.train_loss.size(); ++e) {
            csv << e << "," << result.train_loss[e];
            if (e < result.val_overall_iou.size()) {
                csv << "," << result.val_overall_iou[e] << "," << result.val_mean_iou[e];
            }
            csv << "\n";
        }
    }

    result.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

TrainResult train(const TrainConfig& cfg) {
    cfg.validate();
    if (cfg.data_dir.empty()) throw ConfigError("train: data_dir is required");
    synth::Dataset tr = synth::load_dataset(cfg.data_dir);
    std::optional<synth::Dataset> val;
    if (!cfg.val_dir.empty()) val = synth::load_dataset(cfg.val_dir);
    return train(cfg, tr, val ? &*val : nullptr);
}

// --- evaluation ----------------------------------------------------------------------

const MetricReport& EvalResult::at(const std::string& name) const {
    for (const auto& s : splits) {
        if (s.name == name) return s.report;
    }
    throw ConfigError("no such evaluation split: " + name);
}

Tensor eval_forward(Runtime& rt, const synth::Sample& sample) {
    ForwardCtx ctx;
    Tensor image = Tensor::leaf({rt.mcfg.image_h, rt.mcfg.image_w, 3},
                                std::vector<real>(sample.image.begin(), sample.image.end()));
    return rt.model->forward(image, sample.tokens, ctx);
}

EvalResult evaluate(Runtime& rt, const synth::Dataset& ds, const std::vector<std::string>& splits,
                    const std::string& export_dir) {
    PreparedData data = prepare(ds, rt.mcfg.t_max);
    EvalResult out;
    for (const auto& name : splits) {
        std::vector<size_t> subset;
        if (name == "all") {
            subset = all_indices(ds.samples.size());
        } else if (name == "small_scale") {
            subset = synth::small_scale_indices(ds);
        } else if (name == "complex_language") {
            subset = synth::complex_language_indices(ds);
        } else {
            throw ConfigError("unknown split: " + name);
        }
        if (subset.empty()) throw ValueError("split '" + name + "' selects no samples");
        out.splits.push_back({name, eval_records(rt, ds, data, subset)});
    }
    if (!export_dir.empty()) {
        fs::create_directories(export_dir);
        char name[32];
        for (size_t i = 0; i < ds.samples.size(); ++i) {
            ForwardCtx ctx;
            Tensor score = rt.model->forward(data.images[i], ds.samples[i].tokens, ctx);
            std::snprintf(name, sizeof(name), "%06d", ds.samples[i].id);
            synth::write_pgm((fs::path(export_dir) / (std::string(name) + "_pred.pgm")).string(),
                             binarize(score), ds.h, ds.w);
        }
    }
    return out;
}

// --- ablation ------------------------------------------------------------------------

namespace {

std::string format_table(const std::vector<AblateRow>& rows, const std::vector<double>& pre_cols) {
    std::ostringstream os;
    os << std::left;
    os.setf(std::ios::fixed);
    os.precision(4);
    os.width(18);
    os << "method";
    for (double x : pre_cols) {
        std::ostringstream h;
        h << "P@" << x;
        os.width(9);
        os << h.str();
    }
    os.width(13);
    os << "overall_iou";
    os.width(9);
    os << "mean_iou";
    os << "\n";
    for (const auto& row : rows) {
        const auto& rep = row.eval.at("all");
        os.width(18);
        os << row.name;
        for (double x : pre_cols) {
            os.width(9);
            os << rep.pre_at.at(x);
        }
        os.width(13);
        os << rep.overall_iou;
        os.width(9);
        os << rep.mean_iou;
        os << "\n";
    }
    return os.str();
}

std::string format_deltas(const std::vector<AblateRow>& rows) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(4);
    if (rows.size() < 2) return "";
    const auto& base = rows.front();
    for (size_t i = 1; i < rows.size(); ++i) {
        const auto& r = rows[i];
        os << r.name << " - " << base.name << ": ";
        os << "overall_iou " << std::showpos
           << (r.eval.at("all").overall_iou - base.eval.at("all").overall_iou);
        os << ", mean_iou " << (r.eval.at("all").mean_iou - base.eval.at("all").mean_iou);
        os << std::noshowpos << "\n";
    }
    return os.str();
}

AblateReport ablate_impl(const TrainConfig& base, const std::vector<std::string>& names,
                         bool is_fusion, const synth::Dataset& train_ds,
                         const synth::Dataset& val_ds, const std::vector<double>& pre_cols) {
    if (names.size() < 2) throw ConfigError("ablate: need at least two variants");
    AblateReport rep;
    for (const auto& name : names) {
        TrainConfig cfg = base;
        cfg.out_dir.clear();
        if (is_fusion) {
            cfg.fusion = name;
        } else {
            cfg.variant = name;
        }
        cfg.validate();
        auto rt = make_runtime(cfg, train_ds.h, train_ds.w);
        train(cfg, train_ds, &val_ds, rt.get());
        std::vector<std::string> splits = {"all"};
        if (!synth::small_scale_indices(val_ds).empty()) splits.push_back("small_scale");
        if (!synth::complex_language_indices(val_ds).empty()) splits.push_back("complex_language");
        rep.rows.push_back({name, evaluate(*rt, val_ds, splits)});
    }
    rep.table = format_table(rep.rows, pre_cols);
    rep.deltas = format_deltas(rep.rows);
    return rep;
}

}  // namespace

AblateReport ablate_variants(const TrainConfig& base, const std::vector<std::string>& variants,
                             const synth::Dataset& train_ds, const synth::Dataset& val_ds) {
    return ablate_impl(base, variants, false, train_ds, val_ds, {0.5, 0.6, 0.7, 0.8, 0.9});
}

AblateReport ablate_fusions(const TrainConfig& base, const std::vector<std::string>& kinds,
                            const synth::Dataset& train_ds, const synth::Dataset& val_ds) {
    return ablate_impl(base, kinds, true, train_ds, val_ds, {0.5, 0.7, 0.9});
}

}  // namespace cprn
