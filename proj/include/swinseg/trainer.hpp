#pragma once

// Training harness: dataset abstractions, teacher embedding sources for the
// distillation stage, the two-stage training loop (encoder distillation, then
// full-model fine-tuning with prompt supervision), and dataset evaluation.

#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "swinseg/checkpoint.hpp"
#include "swinseg/config.hpp"
#include "swinseg/dataio.hpp"
#include "swinseg/metrics.hpp"
#include "swinseg/optim.hpp"
#include "swinseg/params.hpp"
#include "swinseg/preprocess.hpp"

namespace swinseg {

// ---------------------------------------------------------------------------
// datasets
// ---------------------------------------------------------------------------

class Dataset {
  public:
    virtual ~Dataset() = default;
    virtual size_t size() const = 0;
    virtual const std::string& id(size_t i) const = 0;
    virtual CaseRecord get(size_t i) const = 0;
};

// Cases generated on demand; case i is fully determined by (seed, i).
class SyntheticDataset final : public Dataset {
  public:
    SyntheticDataset(int count, uint64_t seed);
    size_t size() const override { return ids_.size(); }
    const std::string& id(size_t i) const override { return ids_[i]; }
    CaseRecord get(size_t i) const override;

  private:
    uint64_t seed_;
    std::vector<std::string> ids_;
};

// All *.npz files of a directory, sorted by name; ids are the file stems.
class DirDataset final : public Dataset {
  public:
    explicit DirDataset(const std::string& dir);  // DataError when empty
    size_t size() const override { return ids_.size(); }
    const std::string& id(size_t i) const override { return ids_[i]; }
    CaseRecord get(size_t i) const override;

  private:
    std::string dir_;
    std::vector<std::string> ids_;
};

// In-memory cases (tests and small fixtures).
class MemoryDataset final : public Dataset {
  public:
    void add(std::string id, CaseRecord rec);
    size_t size() const override { return ids_.size(); }
    const std::string& id(size_t i) const override { return ids_[i]; }
    CaseRecord get(size_t i) const override { return recs_[i]; }

  private:
    std::vector<std::string> ids_;
    std::vector<CaseRecord> recs_;
};

// Builds a dataset from a CLI-style source: "synthetic:COUNT[:SEED]" or a
// directory path.
std::unique_ptr<Dataset> open_dataset(const std::string& source);

// ---------------------------------------------------------------------------
// teachers (distillation targets)
// ---------------------------------------------------------------------------

class Teacher {
  public:
    virtual ~Teacher() = default;
    // Embedding for one prepared input; (C, h, w), constant data.
    virtual Tensor<float> embedding(const std::string& case_id, const PreparedInput& prep) = 0;
};

// Pre-saved embeddings: <dir>/<case_id>.npz entry "embedding" (C,h,w) f32.
class DirTeacher final : public Teacher {
  public:
    explicit DirTeacher(std::string dir) : dir_(std::move(dir)) {}
    Tensor<float> embedding(const std::string& case_id, const PreparedInput& prep) override;

  private:
    std::string dir_;
};

// Frozen randomly-initialized reference encoder; the desk-scale stand-in for
// a pre-trained teacher. Deterministic in (config, seed, input).
class FrozenTeacher final : public Teacher {
  public:
    FrozenTeacher(const ModelConfig& cfg, uint64_t seed);
    Tensor<float> embedding(const std::string& case_id, const PreparedInput& prep) override;
    const ParamStore<float>& store() const { return store_; }

  private:
    ParamStore<float> store_;
};

// ---------------------------------------------------------------------------
// training configuration
// ---------------------------------------------------------------------------

struct TrainConfig {
    ModelConfig model = ModelConfig::tiny();
    std::string stage = "finetune";  // "distill" | "finetune"
    uint64_t seed = 1234;
    int steps = 2000;       // optimizer steps
    int batch_size = 4;     // samples accumulated per step
    double lr = 2e-4;
    double weight_decay = 0.01;
    PlateauConfig plateau{0.5, 2, 1e-4, 1e-6};
    int val_every = 200;    // steps between validation rounds (finetune)
    int val_count = 16;     // held-out cases taken from the end of the dataset
    std::string prompt_mode = "box+points+scribble";
    int log_every = 50;

    void validate() const;  // ContractError on bad values
    std::string to_json() const;
    static TrainConfig from_json(const std::string& text);
};

struct TrainResult {
    std::vector<double> loss_curve;  // mean sample loss per optimizer step
    std::vector<double> val_dsc;     // per validation round
    double best_val_dsc = 0.0;
    int64_t steps_done = 0;
};

// ---------------------------------------------------------------------------
// stages
// ---------------------------------------------------------------------------

// Case + slice choice for one step; uniform over the first `train_count`
// cases, slice via sample_slice.
struct SampleChoice {
    size_t case_idx = 0;
    std::optional<int64_t> slice;
};
SampleChoice sample_case(const Dataset& data, size_t train_count, Rng& rng);

// Stage 1: trains encoder parameters only (prompt encoder and decoder are
// untouched) against teacher embeddings under mean-L1. Saves the final
// checkpoint to out_path and the best-loss checkpoint to out_path + ".best".
TrainResult distill_stage(ParamStore<float>& store, const Dataset& data, Teacher& teacher,
                          const TrainConfig& cfg, const std::string& out_path,
                          std::ostream* log = nullptr, const std::string& resume_path = "");

// Stage 2: full-model training with train-mode prompts; periodic validation
// with infer-mode prompts on the held-out tail drives the plateau scheduler.
TrainResult finetune_stage(ParamStore<float>& store, const Dataset& data,
                           const TrainConfig& cfg, const std::string& out_path,
                           std::ostream* log = nullptr, const std::string& resume_path = "");

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

// Binary ground truth for one box: majority non-zero label within the box
// footprint, at the original resolution of the given slice.
std::vector<uint8_t> box_gt_mask(const CaseRecord& rec, std::optional<int64_t> slice,
                                 size_t box_idx);

// Slice with the largest ground truth for one box of a 3D case (lowest index
// on ties); nullopt for 2D cases.
std::optional<int64_t> eval_slice_for_box(const CaseRecord& rec, size_t box_idx);

// Produces a binary mask at the original (slice) resolution for one box of a
// case. Injectable so the harness can be verified against oracle segmenters.
using Segmenter = std::function<std::vector<uint8_t>(
    const CaseRecord& rec, std::optional<int64_t> slice, size_t box_idx, Rng& rng)>;

// Per-box comparison against the box's majority-label ground-truth mask,
// averaged per case; wall time recorded per case. For 3D cases each box is
// evaluated on the slice where its ground truth is largest.
EvalReport evaluate_with(const Segmenter& segment, const Dataset& data, double nsd_tol,
                         uint64_t seed);

// The model as a segmenter: preprocess, infer-mode prompts, forward,
// postprocess back to the original resolution.
Segmenter model_segmenter(const ParamStore<float>& store, const std::string& prompt_mode);

EvalReport evaluate_dataset(const ParamStore<float>& store, const Dataset& data,
                            const std::string& prompt_mode, double nsd_tol, uint64_t seed);

}  // namespace swinseg
