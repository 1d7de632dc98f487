#include "resmatch/distill.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include "json.hpp"
#include "resmatch/errors.hpp"
#include "resmatch/metrics.hpp"
#include "resmatch/ops.hpp"
#include "resmatch/recovery.hpp"
#include "resmatch/resample.hpp"
#include "resmatch/util.hpp"

#ifndef RESMATCH_BUILD_ID
#define RESMATCH_BUILD_ID "unknown"
#endif

namespace resmatch {

using ordered_json = nlohmann::ordered_json;

std::pair<int, int> partition_budget(int budget, int arc_count) {
    if (arc_count < 0) throw ConfigError("partition_budget: arc_count must be >= 0");
    if (budget < arc_count + 1)
        throw ConfigError("partition_budget: budget " + std::to_string(budget) +
                          " is below arc_count+1 = " + std::to_string(arc_count + 1));
    const int b = budget / (arc_count + 1);
    return {b, budget - arc_count * b};
}

std::pair<int, int> mro_target(std::pair<int, int> current, int d_ds, int d_orig) {
    if (current.first == d_ds && current.second == d_ds) return {d_orig, d_orig};
    return {d_ds, d_ds};
}

Tensor arc_merge(const Tensor& x, const Tensor& source_patches, float alpha) {
    if (!(alpha >= 0.0f && alpha <= 1.0f))
        throw ContractError("arc_merge: alpha must be in [0,1]");
    if (alpha == 1.0f) return x.clone();
    Tensor resampled = resample(source_patches, x.dim(2), x.dim(3));
    if (alpha == 0.0f) return resampled;
    Tensor out = Tensor::zeros(x.dims());
    auto os = out.f32();
    const auto xs = x.f32();
    const auto ps = resampled.f32();
    for (std::size_t i = 0; i < os.size(); ++i)
        os[i] = alpha * xs[i] + (1.0f - alpha) * ps[i];
    return out;
}

// ---------------------------------------------------------------------------
// Patch initialization

Tensor PatchBank::rows(const std::vector<int64_t>& which) const {
    std::vector<int> dims = images.dims();
    dims[0] = static_cast<int>(which.size());
    Tensor out = Tensor::zeros(dims);
    const int64_t row = images.numel() / images.dim(0);
    for (std::size_t i = 0; i < which.size(); ++i)
        std::memcpy(out.f32().data() + static_cast<int64_t>(i) * row,
                    images.f32().data() + which[i] * row,
                    static_cast<std::size_t>(row) * sizeof(float));
    return out;
}

PatchBank init_patches(const LabeledDataset& train, const TrainedModel& teacher,
                       const DistillConfig& cfg) {
    cfg.validate();
    const int cells = cfg.grid * cfg.grid;
    if (cfg.d_orig % cfg.grid != 0)
        throw ConfigError("d_orig must be divisible by the patch grid");
    const int cell_size = cfg.d_orig / cfg.grid;
    const int c = train.images.dim(1);
    const int src_h = train.images.dim(2);
    const int src_w = train.images.dim(3);

    PatchBank bank;
    bank.num_classes = train.num_classes;
    bank.ipc = cfg.ipc;
    bank.channels = c;
    bank.d_orig = cfg.d_orig;
    bank.grid = cfg.grid;
    bank.images = Tensor::zeros({train.num_classes * cfg.ipc, c, cfg.d_orig, cfg.d_orig});
    bank.labels.resize(static_cast<std::size_t>(train.num_classes) * cfg.ipc);

    for (int cls = 0; cls < train.num_classes; ++cls) {
        std::vector<int> pool = train.class_indices(cls);
        if (static_cast<int>(pool.size()) < cfg.ipc * cells)
            throw DataError("class " + std::to_string(cls) + " has only " +
                            std::to_string(pool.size()) + " images, patch init needs " +
                            std::to_string(cfg.ipc * cells));
        auto pick_rng = make_rng(cfg.seed, static_cast<uint64_t>(cls), 0xBEEFull);
        std::shuffle(pool.begin(), pool.end(), pick_rng);

        for (int slot = 0; slot < cfg.ipc; ++slot) {
            PatchProvenance prov;
            prov.cls = cls;
            prov.slot = slot;
            const int64_t row = bank.slot_row(cls, slot);
            bank.labels[static_cast<std::size_t>(row)] = cls;

            for (int cell = 0; cell < cells; ++cell) {
                const int source = pool[static_cast<std::size_t>(slot * cells + cell)];
                auto rng = make_rng(cfg.seed, static_cast<uint64_t>(cls),
                                    static_cast<uint64_t>(slot), static_cast<uint64_t>(cell));
                Tensor source_img = take_sample(train.images, source);

                // Candidate crops, each resampled to the cell size.
                Tensor cands = Tensor::zeros({cfg.patch_candidates, c, cell_size, cell_size});
                std::vector<std::array<int, 4>> boxes(
                    static_cast<std::size_t>(cfg.patch_candidates));
                for (int cand = 0; cand < cfg.patch_candidates; ++cand) {
                    const int min_side = std::max(4, (std::min(src_h, src_w) + 1) / 2);
                    std::uniform_int_distribution<int> side_d(min_side, std::min(src_h, src_w));
                    const int side = side_d(rng);
                    std::uniform_int_distribution<int> y_d(0, src_h - side), x_d(0, src_w - side);
                    const int y0 = y_d(rng), x0 = x_d(rng);
                    boxes[static_cast<std::size_t>(cand)] = {y0, x0, side, side};
                    Tensor crop = Tensor::zeros({1, c, side, side});
                    for (int ch = 0; ch < c; ++ch)
                        for (int i = 0; i < side; ++i)
                            std::memcpy(crop.f32().data() +
                                            (static_cast<int64_t>(ch) * side + i) * side,
                                        source_img.f32().data() +
                                            (static_cast<int64_t>(ch) * src_h + y0 + i) * src_w + x0,
                                        static_cast<std::size_t>(side) * sizeof(float));
                    Tensor resized = resample(crop, cell_size, cell_size);
                    std::memcpy(cands.f32().data() +
                                    static_cast<int64_t>(cand) * c * cell_size * cell_size,
                                resized.f32().data(),
                                static_cast<std::size_t>(c * cell_size * cell_size) * sizeof(float));
                }

                Tensor probs = ops::softmax(eval_logits(teacher, cands));
                int winner = 0;
                float best = probs.at(static_cast<int64_t>(0) * probs.dim(1) + cls);
                for (int cand = 1; cand < cfg.patch_candidates; ++cand) {
                    const float score = probs.at(static_cast<int64_t>(cand) * probs.dim(1) + cls);
                    if (score > best) {  // strict: first candidate wins ties
                        best = score;
                        winner = cand;
                    }
                }

                // Paste the winner into its grid cell.
                const int cy = (cell / cfg.grid) * cell_size;
                const int cx = (cell % cfg.grid) * cell_size;
                for (int ch = 0; ch < c; ++ch)
                    for (int i = 0; i < cell_size; ++i)
                        std::memcpy(
                            bank.images.f32().data() +
                                ((row * c + ch) * cfg.d_orig + cy + i) * cfg.d_orig + cx,
                            cands.f32().data() +
                                ((static_cast<int64_t>(winner) * c + ch) * cell_size + i) *
                                    cell_size,
                            static_cast<std::size_t>(cell_size) * sizeof(float));

                prov.source_indices.push_back(source);
                prov.crop_boxes.push_back(boxes[static_cast<std::size_t>(winner)]);
                prov.winner_candidate.push_back(winner);
                prov.scores.push_back(best);
            }
            bank.provenance.push_back(std::move(prov));
        }
    }
    return bank;
}

// ---------------------------------------------------------------------------
// Core optimization loop (Algorithm 1)

GroupResult distill_group(const DistillConfig& cfg, const std::vector<const TrainedModel*>& teachers,
                          const Tensor& patches, const std::vector<int>& labels,
                          const std::vector<int>& classes, const std::vector<int64_t>& bank_rows,
                          const TrainedModel* entropy_teacher) {
    cfg.validate();
    if (teachers.empty()) throw ContractError("distill_group: need at least one teacher");
    const auto [stage_steps, final_steps] = partition_budget(cfg.budget, cfg.arc_count);
    const PrecisionPolicy policy = cfg.policy();

    GroupResult result;
    result.classes = classes;
    result.bank_rows = bank_rows;

    Tensor x = resample(patches, cfg.d_ds, cfg.d_ds);
    AdamState adam = AdamState::for_shape(x.dims(), cfg.lr, cfg.beta1, cfg.beta2, cfg.epsilon);

    int global_step = 0;
    auto lr_at = [&](int t_stage, int stage_len) {
        if (cfg.scheduler == LrSchedule::none) return cfg.lr;
        const bool whole = cfg.scheduler_horizon == ScheduleHorizon::whole;
        const float num = static_cast<float>(whole ? global_step : t_stage);
        const float den = static_cast<float>(whole ? cfg.budget : std::max(stage_len, 1));
        return cfg.lr * 0.5f * (1.0f + std::cos(std::numbers::pi_v<float> * num / den));
    };

    auto entropy_point = [&]() {
        EntropyPoint pt;
        pt.step = global_step;
        pt.pixel_bits = pixel_entropy(x, 64);
        const TrainedModel* fe = entropy_teacher ? entropy_teacher : teachers[0];
        pt.feature_bits = feature_entropy(*fe, x);
        result.entropy_trace.push_back(pt);
    };

    auto run_steps = [&](int count, int stage_index) {
        for (int t = 0; t < count; ++t) {
            adam.lr = lr_at(t, count);
            try {
                RecoveryResult rec = recovery_loss(teachers, x, labels, cfg.lambda, policy);
                grad_step(x, rec.grad, adam);
                ++global_step;
                ++result.grad_steps;
                result.loss_trace.push_back({global_step, rec.report.ce, rec.report.d_global,
                                             rec.report.total, rec.report.precision_overflows});
            } catch (const NumericError& e) {
                throw NumericError(e.term(), e.precision_mode(),
                                   "stage " + std::to_string(stage_index) + ", step " +
                                       std::to_string(global_step + 1));
            }
        }
    };

    entropy_point();
    for (int i = 1; i <= cfg.arc_count; ++i) {
        result.stage_resolutions.push_back(x.dim(2));
        run_steps(stage_steps, i);
        const auto target = mro_target({x.dim(2), x.dim(3)}, cfg.d_ds, cfg.d_orig);
        if (target.first != x.dim(2) || target.second != x.dim(3)) {
            x = resample(x, target.first, target.second);
            adam.reset_for_shape(x.dims());
        }
        if (cfg.arc_enabled) {
            x = arc_merge(x, patches, cfg.merge_ratio);
            ++result.arc_merges;
        }
        entropy_point();
    }
    result.stage_resolutions.push_back(x.dim(2));
    run_steps(final_steps, cfg.arc_count + 1);
    entropy_point();

    // Export guard: even arc counts end downsampled.
    if (x.dim(2) != cfg.d_orig || x.dim(3) != cfg.d_orig) x = resample(x, cfg.d_orig, cfg.d_orig);
    result.images = x;
    return result;
}

GroupResult distill_class(const DistillConfig& cfg, const std::vector<const TrainedModel*>& teachers,
                          const PatchBank& bank, int cls, const TrainedModel* entropy_teacher) {
    std::vector<int64_t> rows;
    std::vector<int> labels;
    for (int slot = 0; slot < bank.ipc; ++slot) {
        rows.push_back(bank.slot_row(cls, slot));
        labels.push_back(cls);
    }
    return distill_group(cfg, teachers, bank.rows(rows), labels, {cls}, rows, entropy_teacher);
}

// ---------------------------------------------------------------------------
// Whole-set runs

DistilledSet run_distillation(const DistillConfig& cfg,
                              const std::vector<const TrainedModel*>& teachers,
                              const DatasetPair& data, int workers) {
    cfg.validate();
    if (teachers.empty()) throw ContractError("run_distillation: need at least one teacher");
    const auto t0 = std::chrono::steady_clock::now();
    const LabeledDataset& train = data.train;
    if (train.size() == 0) throw DataError("run_distillation: empty training split");
    if (cfg.ipc == 1 && train.num_classes < 2)
        throw ConfigError("ipc=1 with a single class cannot form a batch of >= 2");

    // Early shape check: every teacher must accept both resolutions.
    for (const auto* teacher : teachers) {
        for (int d : {cfg.d_ds, cfg.d_orig}) {
            Tensor probe = Tensor::zeros({2, train.images.dim(1), d, d});
            (void)forward_logits(*teacher, probe, RunMode::eval);
        }
    }

    DistilledSet set;
    set.num_classes = train.num_classes;
    set.ipc = cfg.ipc;
    set.d_orig = cfg.d_orig;
    set.norm = train.norm;
    set.bank = init_patches(train, *teachers[0], cfg);
    set.labels = set.bank.labels;

    // Half16 teachers are prepared once and shared read-only by all jobs.
    std::vector<TrainedModel> casted;
    std::vector<const TrainedModel*> effective = teachers;
    if (cfg.params_precision == Precision::half16) {
        casted.reserve(teachers.size());
        for (std::size_t i = 0; i < teachers.size(); ++i) {
            casted.push_back(teachers[i]->cast_params(Precision::half16));
            effective[i] = &casted.back();
        }
    }

    // Jobs: one class per group, except ipc=1 where all classes share one
    // batch so BN train-mode statistics stay meaningful.
    std::vector<std::vector<int>> groups_of_classes;
    if (cfg.ipc >= 2) {
        for (int cls = 0; cls < train.num_classes; ++cls) groups_of_classes.push_back({cls});
    } else {
        std::vector<int> all(static_cast<std::size_t>(train.num_classes));
        for (int cls = 0; cls < train.num_classes; ++cls) all[static_cast<std::size_t>(cls)] = cls;
        groups_of_classes.push_back(std::move(all));
    }

    set.groups.resize(groups_of_classes.size());
    run_parallel(static_cast<int>(groups_of_classes.size()), workers, [&](int gi) {
        const auto& classes = groups_of_classes[static_cast<std::size_t>(gi)];
        std::vector<int64_t> rows;
        std::vector<int> labels;
        for (int cls : classes)
            for (int slot = 0; slot < cfg.ipc; ++slot) {
                rows.push_back(set.bank.slot_row(cls, slot));
                labels.push_back(cls);
            }
        set.groups[static_cast<std::size_t>(gi)] = distill_group(
            cfg, effective, set.bank.rows(rows), labels, classes, rows, teachers[0]);
    });

    // Assemble and clamp to the dataset's normalized pixel range.
    set.images = Tensor::zeros(set.bank.images.dims());
    const int64_t row_elems = set.images.numel() / set.images.dim(0);
    for (const auto& group : set.groups) {
        set.total_grad_steps += group.grad_steps;
        set.total_arc_merges += group.arc_merges;
        for (std::size_t i = 0; i < group.bank_rows.size(); ++i)
            std::memcpy(set.images.f32().data() + group.bank_rows[i] * row_elems,
                        group.images.f32().data() + static_cast<int64_t>(i) * row_elems,
                        static_cast<std::size_t>(row_elems) * sizeof(float));
    }
    const int channels = set.images.dim(1);
    const int64_t hw = static_cast<int64_t>(set.images.dim(2)) * set.images.dim(3);
    auto pix = set.images.f32();
    for (int n = 0; n < set.images.dim(0); ++n)
        for (int ch = 0; ch < channels; ++ch) {
            const float lo = (0.0f - set.norm.mean[static_cast<std::size_t>(ch)]) /
                             set.norm.stddev[static_cast<std::size_t>(ch)];
            const float hi = (1.0f - set.norm.mean[static_cast<std::size_t>(ch)]) /
                             set.norm.stddev[static_cast<std::size_t>(ch)];
            float* p = pix.data() + (static_cast<int64_t>(n) * channels + ch) * hw;
            for (int64_t i = 0; i < hw; ++i) p[i] = std::clamp(p[i], lo, hi);
        }

    set.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return set;
}

// ---------------------------------------------------------------------------
// On-disk layout

namespace {

void write_csv(const std::filesystem::path& path, const std::string& header,
               const std::function<void(std::ostream&)>& body) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write trace file: " + path.string());
    out << header << "\n";
    body(out);
}

}  // namespace

void write_distilled_set(const DistilledSet& set, const DistillConfig& cfg,
                         const std::vector<TeacherRef>& teachers, const std::string& data_path,
                         const std::string& data_digest, const std::filesystem::path& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir / "images");
    fs::create_directories(out_dir / "traces");

    for (int cls = 0; cls < set.num_classes; ++cls) {
        fs::create_directories(out_dir / "images" / std::to_string(cls));
        for (int slot = 0; slot < set.ipc; ++slot) {
            const int64_t row = set.bank.slot_row(cls, slot);
            Tensor img = take_sample(set.images, static_cast<int>(row));
            const auto stem = out_dir / "images" / std::to_string(cls) / std::to_string(slot);
            save_fdrt(img, stem.string() + ".fdrt");
            if (img.dim(0) == 3) export_ppm(img, set.norm, stem.string() + ".ppm");
        }
    }

    for (const auto& group : set.groups) {
        for (int cls : group.classes) {
            write_csv(out_dir / "traces" / (std::to_string(cls) + ".csv"),
                      "step,ce,d_global,total,precision_overflow_count", [&](std::ostream& os) {
                          os.precision(9);
                          for (const auto& row : group.loss_trace)
                              os << row.step << "," << row.ce << "," << row.d_global << ","
                                 << row.total << "," << row.overflows << "\n";
                      });
            write_csv(out_dir / "traces" / (std::to_string(cls) + ".entropy.csv"),
                      "step,pixel_entropy_bits,feature_entropy_bits", [&](std::ostream& os) {
                          os.precision(12);
                          for (const auto& row : group.entropy_trace)
                              os << row.step << "," << row.pixel_bits << "," << row.feature_bits
                                 << "\n";
                      });
        }
    }

    ordered_json manifest;
    manifest["format"] = "resmatch-run";
    manifest["version"] = 1;
    manifest["tool_version"] = "0.1.0";
    manifest["build_id"] = RESMATCH_BUILD_ID;
    manifest["config_text"] = serialize_config(cfg);
    manifest["data"] = ordered_json{{"path", data_path}, {"digest", data_digest}};
    ordered_json tj = ordered_json::array();
    for (const auto& t : teachers)
        tj.push_back(ordered_json{{"path", t.path}, {"digest", t.digest}, {"arch", t.arch}});
    manifest["teachers"] = tj;
    manifest["decisions"] = ordered_json{
        {"lambda", cfg.lambda},
        {"scheduler_horizon", cfg.scheduler_horizon == ScheduleHorizon::whole ? "whole" : "per_stage"},
        {"teacher_aggregation", "mean"},
        {"patch_rule", "confidence-scored random crops, first-wins ties"},
        {"clamp", "normalized range at export only"}};
    manifest["num_classes"] = set.num_classes;
    manifest["ipc"] = set.ipc;
    manifest["d_orig"] = set.d_orig;
    manifest["normalization"] = ordered_json{{"mean", set.norm.mean}, {"std", set.norm.stddev}};
    manifest["instrumentation"] = [&] {
        ordered_json inst;
        inst["grad_steps"] = set.total_grad_steps;
        inst["arc_merges"] = set.total_arc_merges;
        ordered_json stages = ordered_json::array();
        for (const auto& g : set.groups)
            stages.push_back(ordered_json{{"classes", g.classes},
                                          {"stage_resolutions", g.stage_resolutions}});
        inst["groups"] = stages;
        return inst;
    }();
    manifest["wall_seconds"] = set.wall_seconds;

    std::ofstream out(out_dir / "manifest.json");
    if (!out) throw IoError("cannot write run manifest: " + (out_dir / "manifest.json").string());
    out << manifest.dump(2) << "\n";
}

std::string digest_checkpoint(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> files;
    files.push_back(dir / "manifest.json");
    for (const auto& entry : std::filesystem::directory_iterator(dir / "tensors"))
        files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& f : files) {
        const std::string name = f.filename().string();
        h = fnv1a64(name.data(), name.size(), h);
        const std::string d = digest_file(f);
        h = fnv1a64(d.data(), d.size(), h);
    }
    return "fnv1a64:" + hex64(h);
}

DistilledSet distill_from_paths(const DistillConfig& cfg,
                                const std::vector<std::filesystem::path>& teacher_ckpts,
                                const std::filesystem::path& out_dir, int workers) {
    if (cfg.data.empty()) throw ConfigError("distill: config has no 'data' path");
    if (teacher_ckpts.empty()) throw ConfigError("distill: need at least one teacher checkpoint");
    DatasetPair data = load_dataset(cfg.data);

    std::vector<TrainedModel> models;
    models.reserve(teacher_ckpts.size());
    std::vector<const TrainedModel*> ptrs;
    std::vector<TeacherRef> refs;
    for (const auto& path : teacher_ckpts) {
        models.push_back(load_checkpoint(path));
        refs.push_back({path.string(), digest_checkpoint(path), arch_name(models.back().spec.arch)});
    }
    for (const auto& m : models) ptrs.push_back(&m);

    DistilledSet set = run_distillation(cfg, ptrs, data, workers);
    if (!out_dir.empty())
        write_distilled_set(set, cfg, refs, cfg.data, data.train.digest(), out_dir);
    return set;
}

ManifestRun read_run_manifest(const std::filesystem::path& manifest_file) {
    std::ifstream in(manifest_file);
    if (!in) throw IoError("cannot open run manifest: " + manifest_file.string());
    ordered_json manifest = ordered_json::parse(in);
    if (manifest.value("format", "") != "resmatch-run")
        throw FormatError("not a run manifest: " + manifest_file.string(), 0);
    ManifestRun run;
    run.cfg = parse_config(manifest.at("config_text").get<std::string>());
    for (const auto& t : manifest.at("teachers"))
        run.teachers.emplace_back(t.at("path").get<std::string>());
    return run;
}

DistilledDir load_distilled_dir(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw IoError("cannot open run manifest: " + (dir / "manifest.json").string());
    ordered_json manifest = ordered_json::parse(in);
    if (manifest.value("format", "") != "resmatch-run")
        throw FormatError("not a run manifest: " + (dir / "manifest.json").string(), 0);
    DistilledDir out;
    out.num_classes = manifest.at("num_classes").get<int>();
    out.ipc = manifest.at("ipc").get<int>();
    out.norm.mean = manifest.at("normalization").at("mean").get<std::vector<float>>();
    out.norm.stddev = manifest.at("normalization").at("std").get<std::vector<float>>();
    for (int cls = 0; cls < out.num_classes; ++cls)
        for (int slot = 0; slot < out.ipc; ++slot) {
            Tensor img = load_fdrt(dir / "images" / std::to_string(cls) /
                                   (std::to_string(slot) + ".fdrt"));
            if (!out.images.defined() || out.images.ndim() != 4) {
                std::vector<int> dims = {out.num_classes * out.ipc, img.dim(0), img.dim(1),
                                         img.dim(2)};
                out.images = Tensor::zeros(dims);
            }
            put_sample(out.images, cls * out.ipc + slot, img);
            out.labels.push_back(cls);
        }
    return out;
}

}  // namespace resmatch
