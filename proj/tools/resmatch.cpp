// Command-line front end: dataset generation, teacher pretraining, the
// distillation loop itself, student post-evaluation and diagnostics.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "resmatch/config.hpp"
#include "resmatch/data.hpp"
#include "resmatch/distill.hpp"
#include "resmatch/errors.hpp"
#include "resmatch/evaluate.hpp"
#include "resmatch/metrics.hpp"
#include "resmatch/model.hpp"
#include "resmatch/pretrain.hpp"
#include "resmatch/util.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;
using namespace resmatch;

namespace {

void write_json(const ordered_json& j, const std::string& path) {
    if (path.empty() || path == "-") {
        std::cout << j.dump(2) << "\n";
        return;
    }
    std::ofstream out(path);
    if (!out) throw IoError("cannot write output file: " + path);
    out << j.dump(2) << "\n";
}

int run(int argc, char** argv) {
    CLI::App app{"resmatch: data residual matching distillation"};
    app.require_subcommand(1);

    // --- gen-data ---
    auto* gen = app.add_subcommand("gen-data", "generate or ingest a dataset directory");
    std::string gen_out;
    uint64_t gen_seed = 7;
    int gen_classes = 8, gen_per_class = 200, gen_size = 32;
    std::vector<std::string> gen_cifar_train, gen_cifar_test;
    std::string gen_variant = "cifar10";
    gen->add_option("--out", gen_out, "output dataset directory")->required();
    gen->add_option("--seed", gen_seed, "generator seed");
    gen->add_option("--classes", gen_classes, "number of shape classes");
    gen->add_option("--per-class", gen_per_class, "images per class (train+test)");
    gen->add_option("--size", gen_size, "image side length");
    gen->add_option("--from-cifar", gen_cifar_train, "CIFAR binary train files");
    gen->add_option("--cifar-test", gen_cifar_test, "CIFAR binary test files");
    gen->add_option("--variant", gen_variant, "cifar10 or cifar100");

    // --- pretrain ---
    auto* pre = app.add_subcommand("pretrain", "train a teacher on a dataset");
    std::string pre_data, pre_out, pre_arch = "cnn-m";
    PretrainHyper pre_hyper;
    pre->add_option("--data", pre_data, "dataset directory")->required();
    pre->add_option("--out", pre_out, "checkpoint directory")->required();
    pre->add_option("--arch", pre_arch, "cnn-s, cnn-m or cnn-l");
    pre->add_option("--epochs", pre_hyper.epochs, "training epochs");
    pre->add_option("--batch", pre_hyper.batch, "batch size");
    pre->add_option("--lr", pre_hyper.lr, "peak learning rate");
    pre->add_option("--seed", pre_hyper.seed, "init and shuffle seed");

    // --- distill ---
    auto* dis = app.add_subcommand("distill", "optimize a distilled dataset");
    std::string dis_config, dis_manifest, dis_out, dis_data;
    std::vector<std::string> dis_teachers;
    int dis_workers = 0;
    dis->add_option("--config", dis_config, "flat key=value config file");
    dis->add_option("--manifest", dis_manifest, "rerun from a previous run manifest");
    dis->add_option("--teachers", dis_teachers, "teacher checkpoint directories");
    dis->add_option("--data", dis_data, "dataset directory (overrides config key)");
    dis->add_option("--out", dis_out, "output directory")->required();
    dis->add_option("--workers", dis_workers, "worker cap (default RESMATCH_WORKERS)");

    // --- eval ---
    auto* ev = app.add_subcommand("eval", "train students on a distilled set");
    std::string ev_distilled, ev_teacher, ev_student = "cnn-s", ev_testset, ev_out;
    int ev_seeds = 3;
    StudentHyper ev_hyper;
    bool ev_hard = false;
    float ev_temperature = 1.0f;
    ev->add_option("--distilled", ev_distilled, "distilled output directory")->required();
    ev->add_option("--teacher", ev_teacher, "teacher checkpoint for soft labels")->required();
    ev->add_option("--student", ev_student, "student architecture");
    ev->add_option("--testset", ev_testset, "dataset directory with the test split")->required();
    ev->add_option("--seeds", ev_seeds, "number of student seeds");
    ev->add_option("--epochs", ev_hyper.epochs, "student epochs");
    ev->add_option("--eta", ev_hyper.eta, "cosine horizon multiplier (1 or 2)");
    ev->add_option("--lr", ev_hyper.lr, "student base learning rate");
    ev->add_option("--temperature", ev_temperature, "soft label temperature");
    ev->add_flag("--hard-labels", ev_hard, "train on hard labels instead of soft labels");
    ev->add_option("--out", ev_out, "report JSON (default stdout)");

    // --- metrics ---
    auto* met = app.add_subcommand("metrics", "entropy diagnostics of distilled images");
    std::string met_images, met_teacher, met_out, met_data;
    int met_bins = 64;
    met->add_option("--images", met_images, "distilled output directory")->required();
    met->add_option("--teacher", met_teacher, "teacher checkpoint")->required();
    met->add_option("--bins", met_bins, "pixel histogram bins");
    met->add_option("--data", met_data, "dataset directory (adds the entropy bound)");
    met->add_option("--out", met_out, "metrics JSON (default stdout)");

    // --- cost ---
    auto* cost = app.add_subcommand("cost", "analytic vs measured MRO cost ratio");
    std::string cost_config, cost_arch = "cnn-m", cost_out;
    int cost_classes = 8;
    cost->add_option("--config", cost_config, "flat key=value config file")->required();
    cost->add_option("--arch", cost_arch, "model used for the measured MAC counts");
    cost->add_option("--classes", cost_classes, "classifier width of that model");
    cost->add_option("--out", cost_out, "cost JSON (default stdout)");

    CLI11_PARSE(app, argc, argv);

    if (*gen) {
        DatasetPair data;
        if (!gen_cifar_train.empty()) {
            const CifarVariant variant =
                gen_variant == "cifar100" ? CifarVariant::cifar100 : CifarVariant::cifar10;
            std::vector<fs::path> train(gen_cifar_train.begin(), gen_cifar_train.end());
            std::vector<fs::path> test(gen_cifar_test.begin(), gen_cifar_test.end());
            data = load_cifar(train, test, variant);
        } else {
            data = gen_synthetic(gen_seed, {gen_classes, gen_per_class, gen_size});
        }
        save_dataset(data, gen_out);
        std::cout << "wrote " << data.train.size() << " train / " << data.test.size()
                  << " test images to " << gen_out << "\n";
        return 0;
    }

    if (*pre) {
        DatasetPair data = load_dataset(pre_data);
        ModelSpec spec;
        spec.arch = arch_from_name(pre_arch);
        spec.in_channels = data.train.images.dim(1);
        spec.in_h = data.train.images.dim(2);
        spec.in_w = data.train.images.dim(3);
        spec.num_classes = data.train.num_classes;
        TrainedModel model = pretrain(build_model(spec, pre_hyper.seed), data, pre_hyper);
        save_checkpoint(model, pre_out);
        std::cout << "pretrained " << pre_arch << ": train acc "
                  << model.provenance.train_accuracy << ", test acc "
                  << model.provenance.test_accuracy << ", saved to " << pre_out << "\n";
        return 0;
    }

    if (*dis) {
        DistillConfig cfg;
        std::vector<fs::path> teachers;
        if (!dis_manifest.empty()) {
            ManifestRun run = read_run_manifest(dis_manifest);
            cfg = run.cfg;
            teachers = run.teachers;
        } else if (!dis_config.empty()) {
            cfg = load_config(dis_config);
            for (const auto& t : dis_teachers) teachers.emplace_back(t);
        } else {
            throw ConfigError("distill: need --config or --manifest");
        }
        if (!dis_data.empty()) cfg.data = dis_data;
        const int workers = dis_workers > 0 ? dis_workers : default_workers();
        DistilledSet set = distill_from_paths(cfg, teachers, dis_out, workers);
        std::cout << "distilled " << set.num_classes << " classes x " << set.ipc << " ipc in "
                  << set.wall_seconds << "s (" << set.total_grad_steps << " grad steps, "
                  << set.total_arc_merges << " merges) -> " << dis_out << "\n";
        return 0;
    }

    if (*ev) {
        DistilledDir distilled = load_distilled_dir(ev_distilled);
        TrainedModel teacher = load_checkpoint(ev_teacher);
        DatasetPair data = load_dataset(ev_testset);
        if (data.test.size() == 0) throw DataError("eval: dataset has no test split");
        ModelSpec spec = teacher.spec;
        spec.arch = arch_from_name(ev_student);
        std::optional<SoftLabelSet> soft;
        if (!ev_hard) soft = generate_soft_labels(teacher, distilled.images, ev_temperature);
        std::vector<uint64_t> seeds;
        for (int i = 0; i < ev_seeds; ++i) seeds.push_back(static_cast<uint64_t>(100 + i));
        EvalReport report = train_student(spec, distilled.images, distilled.labels, soft, ev_hyper,
                                          data.test, seeds, default_workers());
        ordered_json j;
        j["student"] = arch_name(report.student.arch);
        j["label_mode"] = report.label_mode;
        j["seeds"] = report.seeds;
        j["accuracies"] = report.accuracies;
        j["mean"] = report.mean;
        j["stddev"] = report.stddev;
        j["hyper"] = ordered_json{{"epochs", report.hyper.epochs},
                                  {"batch", report.hyper.batch},
                                  {"lr", report.hyper.lr},
                                  {"eta", report.hyper.eta},
                                  {"weight_decay", report.hyper.weight_decay}};
        write_json(j, ev_out);
        return 0;
    }

    if (*met) {
        DistilledDir distilled = load_distilled_dir(met_images);
        TrainedModel teacher = load_checkpoint(met_teacher);
        ordered_json j;
        j["pixel_entropy_bits"] = pixel_entropy(distilled.images, met_bins);
        j["feature_entropy_bits"] = feature_entropy(teacher, distilled.images);
        j["bins"] = met_bins;
        if (!met_data.empty()) {
            DatasetPair data = load_dataset(met_data);
            EntropyBound bound = entropy_bound(teacher, data.train.images,
                                               distilled.images.dim(0));
            j["h_max_nats"] = bound.h_max_nats;
            j["bound_nats"] = bound.bound_nats;
            j["set_size"] = distilled.images.dim(0);
        }
        write_json(j, met_out);
        return 0;
    }

    if (*cost) {
        DistillConfig cfg = load_config(cost_config);
        ModelSpec spec;
        spec.arch = arch_from_name(cost_arch);
        spec.in_h = cfg.d_orig;
        spec.in_w = cfg.d_orig;
        spec.num_classes = cost_classes;
        TrainedModel model = build_model(spec, 0);
        CostReport rep = mro_cost_report(model, cfg.budget, cfg.arc_count, cfg.d_ds, cfg.d_orig);
        ordered_json j;
        j["B"] = rep.budget;
        j["k"] = rep.arc_count;
        j["b"] = rep.stage_steps;
        j["r"] = rep.r;
        j["analytic_ratio"] = rep.analytic_ratio;
        j["measured_flops_mro"] = rep.measured_flops_mro;
        j["measured_flops_baseline"] = rep.measured_flops_baseline;
        j["measured_ratio"] = rep.measured_ratio;
        j["model"] = cost_arch;
        write_json(j, cost_out);
        return 0;
    }

    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
