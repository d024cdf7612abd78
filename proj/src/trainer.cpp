#include "swinseg/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <ostream>

#include <json.hpp>

#include "swinseg/losses.hpp"
#include "swinseg/model.hpp"
#include "swinseg/prompts.hpp"
#include "swinseg/synthetic.hpp"

namespace swinseg {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// datasets
// ---------------------------------------------------------------------------

SyntheticDataset::SyntheticDataset(int count, uint64_t seed) : seed_(seed) {
    if (count <= 0) throw ContractError("synthetic dataset: count must be positive");
    ids_.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "synth_%06d", i);
        ids_.emplace_back(buf);
    }
}

CaseRecord SyntheticDataset::get(size_t i) const {
    return gen_synthetic_case(Rng::mix(seed_, static_cast<uint64_t>(i)));
}

DirDataset::DirDataset(const std::string& dir) : dir_(dir) {
    if (!fs::is_directory(dir_)) throw DataError("dataset directory not found: " + dir_);
    for (const auto& entry : fs::directory_iterator(dir_)) {
        if (entry.path().extension() == ".npz") ids_.push_back(entry.path().stem().string());
    }
    std::sort(ids_.begin(), ids_.end());
    if (ids_.empty()) throw DataError("dataset directory has no .npz cases: " + dir_);
}

CaseRecord DirDataset::get(size_t i) const {
    return read_case_npz(dir_ + "/" + ids_[i] + ".npz");
}

void MemoryDataset::add(std::string id, CaseRecord rec) {
    ids_.push_back(std::move(id));
    recs_.push_back(std::move(rec));
}

std::unique_ptr<Dataset> open_dataset(const std::string& source) {
    if (source.rfind("synthetic:", 0) == 0) {
        const std::string rest = source.substr(10);
        const size_t colon = rest.find(':');
        const int count = std::stoi(rest.substr(0, colon));
        const uint64_t seed =
            colon == std::string::npos ? 20240601ull : std::stoull(rest.substr(colon + 1));
        return std::make_unique<SyntheticDataset>(count, seed);
    }
    return std::make_unique<DirDataset>(source);
}

// ---------------------------------------------------------------------------
// teachers
// ---------------------------------------------------------------------------

Tensor<float> DirTeacher::embedding(const std::string& case_id, const PreparedInput&) {
    const std::string path = dir_ + "/" + case_id + ".npz";
    if (!fs::exists(path)) throw DataError("no teacher embedding for case " + case_id);
    const Npz npz = npz_read_file(path);
    if (!npz.has("embedding"))
        throw DataError("teacher archive for case " + case_id + " has no 'embedding' entry");
    const NpyArray& arr = npz.at("embedding");
    if (arr.shape.size() != 3)
        throw DataError("teacher embedding for case " + case_id + " is not (C,h,w)");
    auto t = make_tensor<float>(arr.shape);
    std::copy(arr.f32(), arr.f32() + arr.numel(), t->data.begin());
    return t;
}

FrozenTeacher::FrozenTeacher(const ModelConfig& cfg, uint64_t seed) : store_(cfg) {
    store_.init(seed);
}

Tensor<float> FrozenTeacher::embedding(const std::string&, const PreparedInput& prep) {
    Graph<float> g(false);
    return encoder_forward(g, store_, image_tensor<float>(prep), false).embedding;
}

// ---------------------------------------------------------------------------
// training configuration
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
    model.validate();
    if (stage != "distill" && stage != "finetune")
        throw ContractError("train config: stage must be distill or finetune");
    if (steps <= 0 || batch_size <= 0) throw ContractError("train config: steps/batch_size must be positive");
    if (lr <= 0.0) throw ContractError("train config: lr must be positive");
    if (val_every <= 0 || val_count < 0) throw ContractError("train config: bad validation cadence");
    if (log_every <= 0) throw ContractError("train config: log_every must be positive");
}

std::string TrainConfig::to_json() const {
    nlohmann::json j;
    j["model"] = nlohmann::json::parse(model.to_json());
    j["stage"] = stage;
    j["seed"] = seed;
    j["steps"] = steps;
    j["batch_size"] = batch_size;
    j["lr"] = lr;
    j["weight_decay"] = weight_decay;
    j["plateau"] = {{"factor", plateau.factor},
                    {"patience", plateau.patience},
                    {"min_delta", plateau.min_delta},
                    {"lr_min", plateau.lr_min}};
    j["val_every"] = val_every;
    j["val_count"] = val_count;
    j["prompt_mode"] = prompt_mode;
    j["log_every"] = log_every;
    return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("train config: invalid JSON: ") + e.what());
    }
    TrainConfig c;
    try {
        if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model").dump());
        if (j.contains("stage")) c.stage = j.at("stage").get<std::string>();
        if (j.contains("seed")) c.seed = j.at("seed").get<uint64_t>();
        if (j.contains("steps")) c.steps = j.at("steps").get<int>();
        if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<int>();
        if (j.contains("lr")) c.lr = j.at("lr").get<double>();
        if (j.contains("weight_decay")) c.weight_decay = j.at("weight_decay").get<double>();
        if (j.contains("plateau")) {
            const auto& p = j.at("plateau");
            if (p.contains("factor")) c.plateau.factor = p.at("factor").get<double>();
            if (p.contains("patience")) c.plateau.patience = p.at("patience").get<int>();
            if (p.contains("min_delta")) c.plateau.min_delta = p.at("min_delta").get<double>();
            if (p.contains("lr_min")) c.plateau.lr_min = p.at("lr_min").get<double>();
        }
        if (j.contains("val_every")) c.val_every = j.at("val_every").get<int>();
        if (j.contains("val_count")) c.val_count = j.at("val_count").get<int>();
        if (j.contains("prompt_mode")) c.prompt_mode = j.at("prompt_mode").get<std::string>();
        if (j.contains("log_every")) c.log_every = j.at("log_every").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("train config: bad field: ") + e.what());
    }
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// shared pieces
// ---------------------------------------------------------------------------

SampleChoice sample_case(const Dataset& data, size_t train_count, Rng& rng) {
    if (train_count == 0 || train_count > data.size())
        throw ContractError("sample_case: bad training pool size");
    SampleChoice c;
    c.case_idx = static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(train_count)));
    const CaseRecord rec = data.get(c.case_idx);
    const int64_t s = sample_slice(rec, rng);
    if (rec.is_3d) c.slice = s;
    return c;
}

std::vector<uint8_t> box_gt_mask(const CaseRecord& rec, std::optional<int64_t> slice,
                                 size_t box_idx) {
    if (!rec.gts) throw DataError("case has no ground truth");
    const auto labels = gt_slice(*rec.gts, rec.is_3d, slice.value_or(0));
    return gt_mask_for_box(labels, rec.height, rec.width, rec.boxes[box_idx]);
}

std::optional<int64_t> eval_slice_for_box(const CaseRecord& rec, size_t box_idx) {
    if (!rec.is_3d) return std::nullopt;
    int64_t best_d = 0, best_count = -1;
    for (int64_t d = 0; d < rec.depth; ++d) {
        const auto gt = box_gt_mask(rec, d, box_idx);
        int64_t count = 0;
        for (uint8_t v : gt) count += v != 0;
        if (count > best_count) {
            best_count = count;
            best_d = d;
        }
    }
    return best_d;
}

namespace {

// Distinct per-purpose stream keys so draws never alias across uses.
constexpr uint64_t kStreamDistill = 0xD157AA01ull;
constexpr uint64_t kTrainStream = 0xF17E0AA0ull;
constexpr uint64_t kValStream = 0x7A11DA7Aull;
constexpr uint64_t kEvalStream = 0xE7A1CA5Eull;

void check_finite(double v, const char* what, int64_t step) {
    if (!std::isfinite(v))
        throw NumericError(std::string(what) + " is not finite at step " + std::to_string(step));
}

std::vector<std::string> group_names(const ParamStore<float>& store, ParamGroup group) {
    std::vector<std::string> out;
    for (const std::string& n : store.trainable_names())
        if (param_group(n) == group) out.push_back(n);
    return out;
}

CheckpointMeta make_meta(int64_t step, const AdamW& opt, const PlateauScheduler& sched) {
    CheckpointMeta meta;
    meta.step = step;
    meta.lr = opt.lr();
    meta.plateau_best = sched.best();
    meta.plateau_bad = sched.bad();
    return meta;
}

// One training sample's loss (recorded into g); gt prepared at model size.
Tensor<float> sample_loss(Graph<float>& g, ParamStore<float>& store, const TrainConfig& cfg,
                          const CaseRecord& rec, std::optional<int64_t> slice, Rng& rng,
                          LossBreakdown* breakdown) {
    const int s = cfg.model.img_size;
    PreparedInput prep = prepare_case(rec, slice, s);
    const size_t box_idx =
        rec.boxes.size() == 1 ? 0
                              : static_cast<size_t>(rng.uniform_int(
                                    static_cast<int64_t>(rec.boxes.size())));
    std::vector<uint8_t> gt0 = box_gt_mask(rec, slice, box_idx);
    std::vector<uint8_t> gt = prepare_gt(gt0, rec.height, rec.width, prep.scale, s);
    random_flip(prep, &gt, rng);

    const std::vector<float> plane = intensity_plane(prep);
    const PromptSet prompts =
        make_prompts(prep.boxes[box_idx], plane.data(), s, PromptMode::Train, rng);
    const PromptUse use = prompt_use_from_mode(cfg.prompt_mode);
    auto out = model_forward(g, store, image_tensor<float>(prep), prompts, use, true);
    return total_loss(g, out.dec.mask_logits, out.dec.iou_pred, gt, breakdown);
}

std::vector<uint8_t> infer_box(const ParamStore<float>& store, const std::string& prompt_mode,
                               const CaseRecord& rec, std::optional<int64_t> slice,
                               size_t box_idx, Rng& rng) {
    const int s = store.config().img_size;
    const PreparedInput prep = prepare_case(rec, slice, s);
    const std::vector<float> plane = intensity_plane(prep);
    const PromptSet prompts =
        make_prompts(prep.boxes[box_idx], plane.data(), s, PromptMode::Infer, rng);
    Graph<float> g(false);
    const auto out = model_forward(g, store, image_tensor<float>(prep), prompts,
                                   prompt_use_from_mode(prompt_mode), false);
    if (!tensor_finite(*out.dec.mask_logits) || !tensor_finite(*out.dec.iou_pred))
        throw NumericError("non-finite model output during inference");
    return postprocess_mask(out.dec.mask_logits, prep);
}

// Mean DSC over the held-out tail with infer-mode prompts.
double validation_dsc(const ParamStore<float>& store, const Dataset& data, const TrainConfig& cfg,
                      int round) {
    const size_t n = data.size();
    const size_t val = std::min<size_t>(static_cast<size_t>(cfg.val_count), n);
    if (val == 0) return 0.0;
    double total = 0.0;
    size_t scored = 0;
    for (size_t i = n - val; i < n; ++i) {
        const CaseRecord rec = data.get(i);
        Rng rng(Rng::mix(Rng::mix(cfg.seed, kValStream ^ static_cast<uint64_t>(round)),
                         fnv1a(data.id(i))));
        std::optional<int64_t> slice;
        if (rec.is_3d) slice = sample_slice(rec, rng);
        for (size_t k = 0; k < rec.boxes.size(); ++k) {
            const auto pred = infer_box(store, cfg.prompt_mode, rec, slice, k, rng);
            total += dsc(pred, box_gt_mask(rec, slice, k));
            ++scored;
        }
    }
    return scored ? total / static_cast<double>(scored) : 0.0;
}

}  // namespace

// ---------------------------------------------------------------------------
// stage 1: distillation
// ---------------------------------------------------------------------------

TrainResult distill_stage(ParamStore<float>& store, const Dataset& data, Teacher& teacher,
                          const TrainConfig& cfg, const std::string& out_path, std::ostream* log,
                          const std::string& resume_path) {
    cfg.validate();
    if (data.size() == 0) throw ContractError("distill_stage: empty dataset");

    int64_t start_step = 0;
    if (!resume_path.empty()) load_checkpoint(resume_path, store, nullptr);
    AdamW opt(group_names(store, ParamGroup::Encoder),
              store, AdamWConfig{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
    PlateauScheduler sched(cfg.plateau);
    if (!resume_path.empty()) {
        const CheckpointMeta meta = load_checkpoint(resume_path, store, &opt);
        opt.set_lr(meta.lr);
        sched.restore(meta.plateau_best, meta.plateau_bad);
        start_step = meta.step;
    }

    TrainResult res;
    double best_loss = std::numeric_limits<double>::infinity();
    for (int64_t step = start_step; step < cfg.steps; ++step) {
        Rng rng(Rng::mix(cfg.seed, kStreamDistill ^ static_cast<uint64_t>(step)));
        store.zero_grads();
        double step_loss = 0.0;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const SampleChoice pick = sample_case(data, data.size(), rng);
            const CaseRecord rec = data.get(pick.case_idx);
            const PreparedInput prep = prepare_case(rec, pick.slice, cfg.model.img_size);
            const Tensor<float> target = teacher.embedding(data.id(pick.case_idx), prep);

            Graph<float> g;
            auto student = encoder_forward(g, store, image_tensor<float>(prep), true).embedding;
            auto loss = mul_scalar(g, distill_loss(g, student, target),
                                   1.0f / static_cast<float>(cfg.batch_size));
            check_finite(loss->data[0], "distillation loss", step);
            g.backward(loss);
            step_loss += loss->data[0];
        }
        opt.step(store);
        res.loss_curve.push_back(step_loss);
        if (log && ((step + 1) % cfg.log_every == 0 || step == start_step))
            (*log) << "distill step " << (step + 1) << "/" << cfg.steps << " loss " << step_loss
                   << "\n";
        if (step_loss < best_loss) {
            best_loss = step_loss;
            save_checkpoint(out_path + ".best", store, &opt, make_meta(step + 1, opt, sched));
        }
    }
    res.steps_done = cfg.steps;
    save_checkpoint(out_path, store, &opt, make_meta(cfg.steps, opt, sched));
    return res;
}

// ---------------------------------------------------------------------------
// stage 2: fine-tuning
// ---------------------------------------------------------------------------

TrainResult finetune_stage(ParamStore<float>& store, const Dataset& data, const TrainConfig& cfg,
                           const std::string& out_path, std::ostream* log,
                           const std::string& resume_path) {
    cfg.validate();
    const size_t n = data.size();
    if (n == 0) throw ContractError("finetune_stage: empty dataset");
    const size_t val = std::min<size_t>(static_cast<size_t>(cfg.val_count), n > 1 ? n - 1 : 0);
    const size_t train_count = n - val;

    int64_t start_step = 0;
    if (!resume_path.empty()) load_checkpoint(resume_path, store, nullptr);
    AdamW opt(store.trainable_names(), store,
              AdamWConfig{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
    PlateauScheduler sched(cfg.plateau);
    if (!resume_path.empty()) {
        const CheckpointMeta meta = load_checkpoint(resume_path, store, &opt);
        opt.set_lr(meta.lr);
        sched.restore(meta.plateau_best, meta.plateau_bad);
        start_step = meta.step;
    }

    TrainResult res;
    for (int64_t step = start_step; step < cfg.steps; ++step) {
        Rng rng(Rng::mix(cfg.seed, kTrainStream ^ static_cast<uint64_t>(step)));
        store.zero_grads();
        double step_loss = 0.0;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const SampleChoice pick = sample_case(data, train_count, rng);
            const CaseRecord rec = data.get(pick.case_idx);
            Graph<float> g;
            auto loss = sample_loss(g, store, cfg, rec, pick.slice, rng, nullptr);
            loss = mul_scalar(g, loss, 1.0f / static_cast<float>(cfg.batch_size));
            check_finite(loss->data[0], "training loss", step);
            g.backward(loss);
            step_loss += loss->data[0];
        }
        opt.step(store);
        res.loss_curve.push_back(step_loss);

        const int64_t done = step + 1;
        if (log && (done % cfg.log_every == 0 || step == start_step))
            (*log) << "train step " << done << "/" << cfg.steps << " loss " << step_loss
                   << " lr " << opt.lr() << "\n";

        if (val > 0 && done % cfg.val_every == 0) {
            const int round = static_cast<int>(done / cfg.val_every);
            const double vd = validation_dsc(store, data, cfg, round);
            res.val_dsc.push_back(vd);
            opt.set_lr(sched.update(1.0 - vd, opt.lr()));
            if (log) (*log) << "validation round " << round << " mean dsc " << vd << " lr "
                            << opt.lr() << "\n";
            if (vd > res.best_val_dsc) {
                res.best_val_dsc = vd;
                save_checkpoint(out_path + ".best", store, &opt, make_meta(done, opt, sched));
            }
        }
    }
    res.steps_done = cfg.steps;
    save_checkpoint(out_path, store, &opt, make_meta(cfg.steps, opt, sched));
    return res;
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

EvalReport evaluate_with(const Segmenter& segment, const Dataset& data, double nsd_tol,
                         uint64_t seed) {
    if (data.size() == 0) throw ContractError("evaluate_with: empty dataset");
    EvalReport report;
    for (size_t i = 0; i < data.size(); ++i) {
        const CaseRecord rec = data.get(i);
        Rng rng(Rng::mix(Rng::mix(seed, kEvalStream), fnv1a(data.id(i))));
        const auto t0 = std::chrono::steady_clock::now();
        double dsum = 0.0, nsum = 0.0;
        for (size_t k = 0; k < rec.boxes.size(); ++k) {
            const std::optional<int64_t> slice = eval_slice_for_box(rec, k);
            const std::vector<uint8_t> gt = box_gt_mask(rec, slice, k);
            const std::vector<uint8_t> pred = segment(rec, slice, k, rng);
            if (pred.size() != gt.size())
                throw DimError("segmenter returned a mask of the wrong size for case " +
                               data.id(i));
            dsum += dsc(pred, gt);
            nsum += nsd(pred, gt, rec.height, rec.width, nsd_tol);
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const double nb = static_cast<double>(rec.boxes.size());
        report.rows.push_back(EvalRow{data.id(i), dsum / nb, nsum / nb, secs});
    }
    return report;
}

Segmenter model_segmenter(const ParamStore<float>& store, const std::string& prompt_mode) {
    return [&store, prompt_mode](const CaseRecord& rec, std::optional<int64_t> slice,
                                 size_t box_idx, Rng& rng) {
        return infer_box(store, prompt_mode, rec, slice, box_idx, rng);
    };
}

EvalReport evaluate_dataset(const ParamStore<float>& store, const Dataset& data,
                            const std::string& prompt_mode, double nsd_tol, uint64_t seed) {
    return evaluate_with(model_segmenter(store, prompt_mode), data, nsd_tol, seed);
}

}  // namespace swinseg
