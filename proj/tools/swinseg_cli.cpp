// Command-line front end: inference, two-stage training, evaluation,
// profiling, and synthetic-data generation.
//
// Exit codes: 0 success, 2 validation/format/usage error, 3 numeric failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "swinseg/checkpoint.hpp"
#include "swinseg/profile.hpp"
#include "swinseg/synthetic.hpp"
#include "swinseg/trainer.hpp"
#include "swinseg/version.hpp"

namespace fs = std::filesystem;
using namespace swinseg;

namespace {

constexpr uint64_t kInferStream = 0x1FE25EEDull;

std::string read_text(const std::string& path) {
    const std::vector<uint8_t> bytes = read_file_bytes(path);
    return std::string(bytes.begin(), bytes.end());
}

void write_text(const std::string& path, const std::string& text) {
    FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw DataError("cannot write " + path);
    std::fwrite(text.data(), 1, text.size(), f);
    std::fclose(f);
}

void check_mode(const std::string& mode) {
    if (mode != "box" && mode != "box+points" && mode != "box+points+scribble")
        throw ContractError("unknown prompt mode \"" + mode +
                            "\" (expected box, box+points, or box+points+scribble)");
}

ParamStore<float> load_model(const std::string& path) {
    ParamStore<float> store;
    load_checkpoint(path, store, nullptr);
    return store;
}

// Builds per-teacher-spec: "frozen[:SEED]" for an in-process frozen random
// reference encoder, otherwise a directory of pre-saved embeddings.
std::unique_ptr<Teacher> open_teacher(const std::string& spec, const ModelConfig& cfg) {
    if (spec == "frozen" || spec.rfind("frozen:", 0) == 0) {
        uint64_t seed = 4242;
        if (spec.size() > 7) seed = std::stoull(spec.substr(7));
        return std::make_unique<FrozenTeacher>(cfg, seed);
    }
    if (!fs::is_directory(spec)) throw DataError("teacher directory not found: " + spec);
    return std::make_unique<DirTeacher>(spec);
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

struct InferArgs {
    std::string model, input, output;
    std::string mode = "box+points+scribble";
    uint64_t seed = 0;
    double nsd_tol = 2.0;
};

int run_infer(const InferArgs& a) {
    check_mode(a.mode);
    const ParamStore<float> store = load_model(a.model);
    const DirDataset data(a.input);
    fs::create_directories(a.output);
    const Segmenter segment = model_segmenter(store, a.mode);

    EvalReport report;
    bool scored_all = true;
    for (size_t i = 0; i < data.size(); ++i) {
        const CaseRecord rec = data.get(i);
        Rng rng(Rng::mix(Rng::mix(a.seed, kInferStream), fnv1a(data.id(i))));
        const size_t plane = static_cast<size_t>(rec.height) * static_cast<size_t>(rec.width);
        const auto t0 = std::chrono::steady_clock::now();

        // Predict every box; later boxes overwrite earlier ones (label k+1).
        std::vector<uint8_t> segs(plane * static_cast<size_t>(rec.depth), 0);
        std::vector<std::vector<uint8_t>> eval_pred(rec.boxes.size());
        std::vector<std::optional<int64_t>> eval_slice(rec.boxes.size());
        for (size_t k = 0; k < rec.boxes.size(); ++k)
            if (rec.gts) eval_slice[k] = eval_slice_for_box(rec, k);

        if (!rec.is_3d) {
            for (size_t k = 0; k < rec.boxes.size(); ++k) {
                const std::vector<uint8_t> mask = segment(rec, std::nullopt, k, rng);
                for (size_t p = 0; p < plane; ++p)
                    if (mask[p]) segs[p] = static_cast<uint8_t>(k + 1);
                if (rec.gts) eval_pred[k] = mask;
            }
        } else {
            for (int64_t d = 0; d < rec.depth; ++d)
                for (size_t k = 0; k < rec.boxes.size(); ++k) {
                    const std::vector<uint8_t> mask = segment(rec, d, k, rng);
                    uint8_t* out = segs.data() + static_cast<size_t>(d) * plane;
                    for (size_t p = 0; p < plane; ++p)
                        if (mask[p]) out[p] = static_cast<uint8_t>(k + 1);
                    if (rec.gts && eval_slice[k] && *eval_slice[k] == d) eval_pred[k] = mask;
                }
        }

        Npz out;
        const Shape shape = rec.is_3d ? Shape{rec.depth, rec.height, rec.width}
                                      : Shape{rec.height, rec.width};
        out.add("segs", make_npy_u8(shape, segs));
        npz_write_file((fs::path(a.output) / (data.id(i) + ".npz")).string(), out);

        if (rec.gts) {
            double dsum = 0.0, nsum = 0.0;
            for (size_t k = 0; k < rec.boxes.size(); ++k) {
                const std::vector<uint8_t> gt = box_gt_mask(rec, eval_slice[k], k);
                dsum += dsc(eval_pred[k], gt);
                nsum += nsd(eval_pred[k], gt, rec.height, rec.width, a.nsd_tol);
            }
            const double secs =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            const double nb = static_cast<double>(rec.boxes.size());
            report.rows.push_back(EvalRow{data.id(i), dsum / nb, nsum / nb, secs});
        } else {
            scored_all = false;
        }
        std::cout << "wrote " << data.id(i) << ".npz\n";
    }

    if (scored_all && !report.rows.empty()) std::cout << report.summary_json() << "\n";
    return 0;
}

struct TrainArgs {
    std::string config, data, out;
    std::string init, resume;
};

int run_train(const TrainArgs& a) {
    TrainConfig cfg = TrainConfig::from_json(read_text(a.config));
    cfg.stage = "finetune";
    cfg.validate();
    if (!a.init.empty() && !a.resume.empty())
        throw ContractError("--init and --resume are mutually exclusive");

    const auto data = open_dataset(a.data);
    ParamStore<float> store(cfg.model);
    store.init(cfg.seed);
    if (!a.init.empty()) {
        load_checkpoint(a.init, store, nullptr);
        if (!(store.config() == cfg.model))
            throw CheckpointError("initial checkpoint was trained at a different model config");
    }
    const TrainResult res = finetune_stage(store, *data, cfg, a.out, &std::cout, a.resume);
    std::cout << "{\"steps\":" << res.steps_done << ",\"final_loss\":"
              << (res.loss_curve.empty() ? 0.0 : res.loss_curve.back())
              << ",\"best_val_dsc\":" << res.best_val_dsc << "}\n";
    return 0;
}

struct DistillArgs {
    std::string teacher, config, out;
    std::string data = "synthetic:500";
    std::string resume;
};

int run_distill(const DistillArgs& a) {
    TrainConfig cfg = TrainConfig::from_json(read_text(a.config));
    cfg.stage = "distill";
    cfg.validate();
    const auto data = open_dataset(a.data);
    const auto teacher = open_teacher(a.teacher, cfg.model);
    ParamStore<float> store(cfg.model);
    store.init(cfg.seed);
    const TrainResult res = distill_stage(store, *data, *teacher, cfg, a.out, &std::cout, a.resume);
    std::cout << "{\"steps\":" << res.steps_done << ",\"final_loss\":"
              << (res.loss_curve.empty() ? 0.0 : res.loss_curve.back()) << "}\n";
    return 0;
}

struct EvalArgs {
    std::string model, data, report;
    std::string mode = "box+points+scribble";
    uint64_t seed = 0;
    double nsd_tol = 2.0;
};

int run_eval(const EvalArgs& a) {
    check_mode(a.mode);
    const ParamStore<float> store = load_model(a.model);
    const auto data = open_dataset(a.data);
    const EvalReport rep = evaluate_dataset(store, *data, a.mode, a.nsd_tol, a.seed);
    write_text(a.report, rep.to_csv());
    std::cout << rep.summary_json() << "\n";
    return 0;
}

int run_profile(const std::string& config_path) {
    ModelConfig cfg = ModelConfig::full();
    if (!config_path.empty()) cfg = ModelConfig::from_json(read_text(config_path));
    cfg.validate();
    std::cout << profile_report(cfg);
    return 0;
}

struct SynthArgs {
    int count = 0;
    std::string out;
    uint64_t seed = 20240601;
};

int run_synth(const SynthArgs& a) {
    if (a.count <= 0) throw ContractError("--count must be positive");
    fs::create_directories(a.out);
    for (int i = 0; i < a.count; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "synth_%06d.npz", i);
        npz_write_file((fs::path(a.out) / name).string(),
                       synthetic_case_npz(Rng::mix(a.seed, static_cast<uint64_t>(i))));
    }
    std::cout << "wrote " << a.count << " cases to " << a.out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"swinseg: promptable image segmentation (encoder-distilled, box-prompted)"};
    app.set_version_flag("--version", std::string("swinseg ") + version());
    app.require_subcommand(1);

    InferArgs infer;
    auto* sc_infer = app.add_subcommand("infer", "segment every case of a directory");
    sc_infer->add_option("--model", infer.model, "checkpoint (.npz)")->required();
    sc_infer->add_option("--input", infer.input, "directory of case .npz files")->required();
    sc_infer->add_option("--output", infer.output, "directory for mask .npz files")->required();
    sc_infer->add_option("--mode", infer.mode, "box | box+points | box+points+scribble");
    sc_infer->add_option("--seed", infer.seed, "prompt sampling seed");
    sc_infer->add_option("--nsd-tol", infer.nsd_tol, "NSD tolerance in pixels");

    TrainArgs train;
    auto* sc_train = app.add_subcommand("train", "stage-2 fine-tuning");
    sc_train->add_option("--config", train.config, "training config (.json)")->required();
    sc_train->add_option("--data", train.data, "case directory or synthetic:COUNT[:SEED]")
        ->required();
    sc_train->add_option("--out", train.out, "output checkpoint (.npz)")->required();
    sc_train->add_option("--init", train.init, "start from these weights (e.g. distilled)");
    sc_train->add_option("--resume", train.resume, "continue an interrupted run");

    DistillArgs distill;
    auto* sc_distill = app.add_subcommand("distill", "stage-1 encoder distillation");
    sc_distill->add_option("--teacher", distill.teacher,
                           "embedding directory, or frozen[:SEED] for a frozen random teacher")
        ->required();
    sc_distill->add_option("--config", distill.config, "training config (.json)")->required();
    sc_distill->add_option("--out", distill.out, "output checkpoint (.npz)")->required();
    sc_distill->add_option("--data", distill.data, "case directory or synthetic:COUNT[:SEED]");
    sc_distill->add_option("--resume", distill.resume, "continue an interrupted run");

    EvalArgs eval;
    auto* sc_eval = app.add_subcommand("eval", "score a model on a dataset");
    sc_eval->add_option("--model", eval.model, "checkpoint (.npz)")->required();
    sc_eval->add_option("--data", eval.data, "case directory or synthetic:COUNT[:SEED]")
        ->required();
    sc_eval->add_option("--report", eval.report, "output CSV path")->required();
    sc_eval->add_option("--mode", eval.mode, "box | box+points | box+points+scribble");
    sc_eval->add_option("--seed", eval.seed, "prompt sampling seed");
    sc_eval->add_option("--nsd-tol", eval.nsd_tol, "NSD tolerance in pixels");

    std::string profile_config;
    auto* sc_profile = app.add_subcommand("profile", "print parameter/FLOP budgets");
    sc_profile->add_option("--config", profile_config, "model config (.json); default full size");

    SynthArgs synth;
    auto* sc_synth = app.add_subcommand("synth", "generate synthetic cases");
    sc_synth->add_option("--count", synth.count, "number of cases")->required();
    sc_synth->add_option("--out", synth.out, "output directory")->required();
    sc_synth->add_option("--seed", synth.seed, "pool seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (sc_infer->parsed()) return run_infer(infer);
        if (sc_train->parsed()) return run_train(train);
        if (sc_distill->parsed()) return run_distill(distill);
        if (sc_eval->parsed()) return run_eval(eval);
        if (sc_profile->parsed()) return run_profile(profile_config);
        if (sc_synth->parsed()) return run_synth(synth);
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
