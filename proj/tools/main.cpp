// Command-line experiment runner: dataset generation, training, evaluation,
// ablation sweeps, and teacher/student distillation.
//
// Exit codes: 0 success, 1 usage/config error, 2 runtime/data error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "segdetail/checkpoint.hpp"
#include "segdetail/data.hpp"
#include "segdetail/eval.hpp"
#include "segdetail/experiment.hpp"
#include "segdetail/network.hpp"
#include "segdetail/pnm.hpp"
#include "segdetail/train.hpp"

namespace fs = std::filesystem;
using namespace segdetail;
using json = nlohmann::json;

namespace {

std::string default_out_root() {
    const char* env = std::getenv("SEGDETAIL_OUT");
    return env ? env : ".";
}

std::string resolve_out(const std::string& out, const std::string& fallback_name) {
    if (!out.empty()) return out;
    return (fs::path(default_out_root()) / fallback_name).string();
}

// Records the exact invocation next to the outputs.
void write_run_manifest(const std::string& dir, int argc, char** argv) {
    fs::create_directories(dir);
    json m;
    json args = json::array();
    for (int i = 0; i < argc; ++i) args.push_back(argv[i]);
    m["argv"] = args;
    std::ofstream out(fs::path(dir) / "run_manifest.json");
    out << m.dump(2) << "\n";
}

struct SceneFlags {
    SceneSpec spec;
    void attach(CLI::App* cmd) {
        cmd->add_option("--classes", spec.num_classes, "Number of classes (class 0 is background)")
            ->capture_default_str();
        cmd->add_option("--canvas", spec.height, "Canvas height and width in pixels")
            ->capture_default_str();
        cmd->add_option("--shapes-min", spec.min_shapes, "Minimum shapes per scene")
            ->capture_default_str();
        cmd->add_option("--shapes-max", spec.max_shapes, "Maximum shapes per scene")
            ->capture_default_str();
        cmd->add_option("--jitter", spec.color_jitter, "Per-shape color jitter")
            ->capture_default_str();
        cmd->add_option("--noise", spec.noise_sigma, "Per-pixel Gaussian noise sigma")
            ->capture_default_str();
    }
    SceneSpec finish() {
        spec.width = spec.height;
        return spec;
    }
};

struct CoarsenFlags {
    CoarsenSpec spec;
    void attach(CLI::App* cmd) {
        cmd->add_option("--erode", spec.erosion_radius,
                        "Erosion radius; the eroded band becomes ignore")
            ->capture_default_str();
        cmd->add_option("--drop", spec.drop_probability,
                        "Probability that a region is left fully unlabeled")
            ->capture_default_str();
        cmd->add_option("--bleed", spec.bleed_probability,
                        "Per-region probability of a one-pixel mislabeled band")
            ->capture_default_str();
    }
};

struct NetFlags {
    NetworkConfig cfg;
    std::string injection = "none";
    void attach(CLI::App* cmd) {
        cmd->add_option("--injection", injection,
                        "Injection point: none | before-pool | after-pool | after-final")
            ->capture_default_str();
        cmd->add_option("--embed-width", cfg.embed_width, "1x1 embedding filter count")
            ->capture_default_str();
        cmd->add_option("--encoder-channels", cfg.encoder_channels,
                        "Encoder channel widths")
            ->delimiter(',')
            ->capture_default_str();
        cmd->add_option("--ppm-bins", cfg.ppm_bins, "Pyramid pooling bin sizes")
            ->delimiter(',')
            ->capture_default_str();
        cmd->add_option("--downsample", cfg.encoder_downsample, "Encoder downsample factor")
            ->capture_default_str();
    }
    NetworkConfig finish(int num_classes, std::uint32_t seed) {
        cfg.injection = parse_injection(injection);
        cfg.num_classes = num_classes;
        cfg.seed = seed;
        cfg.validate();
        return cfg;
    }
};

struct TrainFlags {
    TrainConfig cfg;
    void attach(CLI::App* cmd) {
        cmd->add_option("--lr", cfg.base_lr, "Initial learning rate")->capture_default_str();
        cmd->add_option("--power", cfg.poly_power, "Polynomial decay power")
            ->capture_default_str();
        cmd->add_option("--momentum", cfg.momentum, "SGD momentum")->capture_default_str();
        cmd->add_option("--batch", cfg.batch_size, "Mini-batch size")->capture_default_str();
        cmd->add_option("--iters", cfg.total_iters, "Total training iterations")
            ->capture_default_str();
        cmd->add_option("--crop", cfg.crop, "Training crop size")->capture_default_str();
        cmd->add_option("--eval-every", cfg.eval_every,
                        "Validation period in iterations (0 = final only)")
            ->capture_default_str();
    }
};

void write_report(const std::string& dir, const std::string& stem, const EvalReport& report) {
    fs::create_directories(dir);
    std::ofstream kv(fs::path(dir) / (stem + ".txt"));
    kv << report.to_kv();
    std::ofstream csv(fs::path(dir) / (stem + ".csv"));
    csv << report.csv_header() << "\n" << report.csv_row() << "\n";
}

int cmd_gen(const std::string& out, SceneSpec scene, CoarsenSpec coarsen_spec, int count,
            std::uint32_t seed) {
    Dataset ds = generate_dataset(scene, coarsen_spec, count, seed);
    write_dataset(out, ds);
    const CoarseStats stats = coarse_stats(ds);
    const EvalReport baseline = evaluate_coarse_baseline(ds);
    std::ofstream rep(fs::path(out) / "gen_report.txt");
    rep.precision(17);
    rep << "count=" << count << "\n"
        << "coverage=" << stats.coverage << "\n"
        << "precision=" << stats.precision << "\n"
        << "coarse_baseline_miou=" << baseline.miou << "\n";
    std::cout << "wrote " << count << " triplets to " << out << " (coverage "
              << stats.coverage << ", precision " << stats.precision
              << ", coarse-baseline mIoU " << baseline.miou << ")\n";
    return 0;
}

int cmd_train(const std::string& model_kind, const std::string& data_dir,
              const std::string& val_dir, const std::string& out, NetFlags& net_flags,
              TrainConfig train_cfg, std::uint32_t seed) {
    const ModelKind kind = parse_model_kind(model_kind);
    if (!fs::exists(fs::path(data_dir) / "manifest.json"))
        throw ConfigError("dataset not found: " + data_dir);
    Dataset train_ds = read_dataset(data_dir);
    std::optional<Dataset> val_ds;
    if (!val_dir.empty()) val_ds = read_dataset(val_dir);

    NetworkConfig net = net_flags.finish(train_ds.num_classes, seed);
    if (kind == ModelKind::Detailer && net.injection == InjectionPoint::None)
        net.injection = InjectionPoint::AfterFinal;
    if (kind == ModelKind::Classifier && net.injection != InjectionPoint::None)
        throw ConfigError("classifier model requires --injection none");
    train_cfg.seed = seed;
    train_cfg.validate();

    MiniPsp<float> model(net);
    TrainResult result = train(kind, model, train_ds, val_ds ? &*val_ds : nullptr, train_cfg);
    fs::create_directories(out);
    save_checkpoint((fs::path(out) / "checkpoint").string(), model);
    write_metrics_csv((fs::path(out) / "metrics.csv").string(), result.log);
    std::cout << "trained " << model_kind << " for " << train_cfg.total_iters
              << " iters; final loss " << result.log.back().loss << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir, bool composite_mode,
             const std::string& out) {
    MiniPsp<float> model = load_checkpoint(ckpt);
    Dataset ds = read_dataset(data_dir);
    if (ds.num_classes != model.cfg.num_classes)
        throw ConfigError("checkpoint has " + std::to_string(model.cfg.num_classes) +
                          " classes but dataset has " + std::to_string(ds.num_classes));
    const bool use_coarse = model.cfg.injection != InjectionPoint::None;
    const EvalReport report = evaluate_model(model, ds, use_coarse, composite_mode);
    write_report(out, composite_mode ? "report_composite" : "report", report);
    std::cout << "mIoU " << report.miou << " (coverage " << report.coverage
              << ", precision " << report.precision << ")\n";
    return 0;
}

int cmd_distill(const std::string& teacher_ckpt, const std::string& data_dir,
                const std::string& val_dir, const std::string& out, NetFlags& net_flags,
                TrainConfig train_cfg, std::uint32_t seed) {
    MiniPsp<float> teacher = load_checkpoint(teacher_ckpt);
    if (teacher.cfg.injection == InjectionPoint::None)
        throw ConfigError("teacher checkpoint is a classifier; distillation needs a detailer");
    Dataset train_ds = read_dataset(data_dir);
    Dataset val_ds = read_dataset(val_dir.empty() ? data_dir : val_dir);

    NetworkConfig student = net_flags.finish(train_ds.num_classes, seed);
    student.injection = InjectionPoint::None;
    train_cfg.seed = seed;

    DistillResult res = distill(teacher, train_ds, val_ds, student, train_cfg);

    // Baseline: the same student trained on the raw coarse masks.
    Dataset coarse_ds = train_ds;
    for (auto& item : coarse_ds.items) item.fine = item.coarse;
    MiniPsp<float> coarse_student(student);
    train(ModelKind::Classifier, coarse_student, coarse_ds, nullptr, train_cfg);
    const EvalReport coarse_report = evaluate_model(coarse_student, val_ds, false, false);

    fs::create_directories(out);
    save_checkpoint((fs::path(out) / "student_checkpoint").string(), *res.student);
    const fs::path mask_dir = fs::path(out) / "detailed_masks";
    fs::create_directories(mask_dir);
    for (std::size_t i = 0; i < res.detailed_masks.size(); ++i) {
        char id[16];
        std::snprintf(id, sizeof(id), "%06zu", i);
        write_pgm((mask_dir / (std::string(id) + "_detailed.pgm")).string(),
                  res.detailed_masks[i]);
    }
    std::ofstream rep(fs::path(out) / "distill_report.txt");
    rep.precision(17);
    rep << "student_on_detailed_miou=" << res.student_report.miou << "\n"
        << "student_on_coarse_miou=" << coarse_report.miou << "\n"
        << "difference=" << res.student_report.miou - coarse_report.miou << "\n";
    std::cout << "student-on-detailed mIoU " << res.student_report.miou
              << " vs student-on-coarse " << coarse_report.miou << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "segdetail: coarse-to-fine segmentation experiments.\n"
        "Emitted CSV schemas: metrics.csv (iter,lr,loss,val_miou); report.csv\n"
        "(miou,precision,coverage,iou_<c>...); sweep tables table1.csv\n"
        "(size,model,stat,miou), table3.csv (resolution,size,stat,miou),\n"
        "table4.csv (injection,stat,miou), table5.csv (embed_width,stat,miou),\n"
        "where stat is seed-<s>, mean, or stddev.\n"
        "SEGDETAIL_OUT sets the default output root."};
    app.require_subcommand(1);

    // gen
    auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
    SceneFlags gen_scene;
    CoarsenFlags gen_coarsen;
    int gen_count = 50;
    std::uint32_t gen_seed = 1;
    std::string gen_out;
    gen_scene.attach(gen);
    gen_coarsen.attach(gen);
    gen->add_option("--count", gen_count, "Number of triplets")->capture_default_str();
    gen->add_option("--seed", gen_seed, "Generator seed")->capture_default_str();
    gen->add_option("--out", gen_out, "Output directory");

    // train
    auto* tr = app.add_subcommand("train", "Train a classifier or detailer");
    std::string tr_model = "classifier", tr_data, tr_val, tr_out;
    std::uint32_t tr_seed = 1;
    NetFlags tr_net;
    TrainFlags tr_train;
    tr->add_option("--model", tr_model, "classifier | detailer")->capture_default_str();
    tr->add_option("--data", tr_data, "Training dataset directory")->required();
    tr->add_option("--val", tr_val, "Validation dataset directory");
    tr->add_option("--out", tr_out, "Output directory");
    tr->add_option("--seed", tr_seed, "Training and init seed")->capture_default_str();
    tr_net.attach(tr);
    tr_train.attach(tr);

    // eval
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
    std::string ev_ckpt, ev_data, ev_out;
    bool ev_composite = false;
    ev->add_option("--ckpt", ev_ckpt, "Checkpoint directory")->required();
    ev->add_option("--data", ev_data, "Dataset directory")->required();
    ev->add_flag("--composite", ev_composite,
                 "Overlay coarse labels onto the prediction before scoring");
    ev->add_option("--out", ev_out, "Output directory");

    // sweep
    auto* sw = app.add_subcommand("sweep", "Run the table-analog experiment sweep");
    ExperimentPlan plan;
    SceneFlags sw_scene;
    CoarsenFlags sw_coarsen;
    NetFlags sw_net;
    TrainFlags sw_train;
    std::string sw_out;
    std::vector<std::string> sw_injections = {"before-pool", "after-pool", "after-final"};
    sw->add_option("--sizes", plan.dataset_sizes, "Training-set sizes")
        ->delimiter(',')->capture_default_str();
    sw->add_option("--resolutions", plan.resolutions, "Canvas resolutions")
        ->delimiter(',')->capture_default_str();
    sw->add_option("--injections", sw_injections, "Injection points to ablate")
        ->delimiter(',')->capture_default_str();
    sw->add_option("--embed-widths", plan.embed_widths, "Embedding widths to ablate")
        ->delimiter(',')->capture_default_str();
    sw->add_option("--seeds", plan.seeds, "Seeds (distinct)")
        ->delimiter(',')->capture_default_str();
    sw->add_option("--val-size", plan.val_size, "Validation split size")
        ->capture_default_str();
    sw->add_option("--out", sw_out, "Output directory");
    sw_scene.attach(sw);
    sw_coarsen.attach(sw);
    sw_net.attach(sw);
    sw_train.attach(sw);

    // distill
    auto* di = app.add_subcommand("distill", "Distill a detailer into a coarse-free student");
    std::string di_teacher, di_data, di_val, di_out;
    std::uint32_t di_seed = 1;
    NetFlags di_net;
    TrainFlags di_train;
    di->add_option("--teacher", di_teacher, "Detailer checkpoint directory")->required();
    di->add_option("--data", di_data, "Training dataset directory")->required();
    di->add_option("--val", di_val, "Validation dataset directory");
    di->add_option("--out", di_out, "Output directory");
    di->add_option("--seed", di_seed, "Student training seed")->capture_default_str();
    di_net.attach(di);
    di_train.attach(di);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed()) {
            const std::string out = resolve_out(gen_out, "dataset");
            write_run_manifest(out, argc, argv);
            return cmd_gen(out, gen_scene.finish(), gen_coarsen.spec, gen_count, gen_seed);
        }
        if (tr->parsed()) {
            const std::string out = resolve_out(tr_out, "train_run");
            write_run_manifest(out, argc, argv);
            return cmd_train(tr_model, tr_data, tr_val, out, tr_net, tr_train.cfg, tr_seed);
        }
        if (ev->parsed()) {
            const std::string out = resolve_out(ev_out, "eval_run");
            write_run_manifest(out, argc, argv);
            return cmd_eval(ev_ckpt, ev_data, ev_composite, out);
        }
        if (sw->parsed()) {
            plan.out_dir = resolve_out(sw_out, "sweep_run");
            write_run_manifest(plan.out_dir, argc, argv);
            plan.injections.clear();
            for (const auto& s : sw_injections) plan.injections.push_back(parse_injection(s));
            plan.scene = sw_scene.finish();
            plan.coarsen = sw_coarsen.spec;
            plan.base_net = sw_net.cfg;  // injection applied per row
            plan.base_net.num_classes = plan.scene.num_classes;
            plan.base_train = sw_train.cfg;
            run_sweep(plan);
            std::cout << "sweep complete: " << plan.out_dir << "\n";
            return 0;
        }
        if (di->parsed()) {
            const std::string out = resolve_out(di_out, "distill_run");
            write_run_manifest(out, argc, argv);
            return cmd_distill(di_teacher, di_data, di_val, out, di_net, di_train.cfg, di_seed);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const ArgumentError& e) {
        std::cerr << "argument error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
