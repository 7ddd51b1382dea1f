#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "selfteach/checkpoint.hpp"
#include "selfteach/config.hpp"
#include "selfteach/metrics.hpp"
#include "selfteach/records.hpp"
#include "selfteach/scorer.hpp"

namespace selfteach {

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

enum class DatasetRole { kTargetV, kWeakW, kEval };
const char* to_string(DatasetRole role);
DatasetRole dataset_role_from_string(std::string_view s);

struct DatasetRef {
  std::string name;
  std::filesystem::path path;
  DatasetRole role = DatasetRole::kTargetV;
  Task task = Task::kMultipleChoice;
};

// Instances plus their encodings under one vocabulary and max_len.
struct Dataset {
  DatasetRef ref;
  std::vector<WeakMCInstance> mc;
  std::vector<ExtractiveInstance> spans;

  std::vector<EncodedMC> mc_encoded;
  std::vector<EncodedSpan> span_encoded;
  // Gold token span per instance; nullopt when truncation cut the answer.
  std::vector<std::optional<std::pair<std::size_t, std::size_t>>> gold_tokens;

  std::size_t size() const { return ref.task == Task::kMultipleChoice ? mc.size() : spans.size(); }
  const std::string& id(std::size_t i) const { return ref.task == Task::kMultipleChoice ? mc[i].id : spans[i].id; }
  bool encoded() const { return !mc_encoded.empty() || !span_encoded.empty() || size() == 0; }
};

// Target datasets must carry provenance "clean".
Dataset load_dataset(const DatasetRef& ref);
Dataset make_dataset(DatasetRef ref, std::vector<WeakMCInstance> instances);
Dataset make_dataset(DatasetRef ref, std::vector<ExtractiveInstance> instances);

// Characters in dataset order: question, options, context per instance.
Vocabulary build_vocabulary(const std::vector<const Dataset*>& datasets);
void encode_dataset(Dataset& dataset, const Vocabulary& vocab, std::size_t max_len);

// Instances with these indices, encodings included.
Dataset subset(const Dataset& dataset, const std::vector<std::size_t>& indices, std::string name);

// Seeded shuffle of [0, n) cut into `parts` contiguous pieces whose sizes
// differ by at most one.
std::vector<std::vector<std::size_t>> split_near_equal(std::size_t n, std::size_t parts, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Soft labels
// ---------------------------------------------------------------------------

struct SoftRecord {
  std::string id;
  std::vector<double> soft;        // multiple choice
  std::vector<double> soft_start;  // extractive
  std::vector<double> soft_end;
};

// In memory the vectors are always dense; with topk > 0 the file stores only
// the k largest (renormalized) entries as [index, prob] pairs.
struct SoftLabelFile {
  std::string id;  // content digest of the serialized file
  std::string teacher_id;
  std::string dataset;
  Task task = Task::kMultipleChoice;
  double lambda = 0.5;
  std::size_t topk = 0;
  std::vector<SoftRecord> records;

  // Throws DataError naming the id when absent.
  const SoftRecord& at(const std::string& id) const;
  // Rebuilds the id index; DataError on an id collision.
  void reindex();

 private:
  std::map<std::string, std::size_t> index_;
};

// One record per trainable instance, s = lambda * hard + (1 - lambda) * p.
// Extractive instances whose answer was truncated away have no hard label and
// are skipped. The checkpoint is only read.
SoftLabelFile gen_soft_labels(const Checkpoint& teacher, const Dataset& dataset, double lambda,
                              std::size_t topk = 0, int jobs = 1);

// Serializes, sets file.id from the written bytes and returns it.
std::string write_soft_labels(const std::filesystem::path& path, SoftLabelFile& file);
SoftLabelFile read_soft_labels(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

// Accuracy for multiple choice; exact_match and f1 for extractive. The dataset
// must be encoded with the checkpoint's vocabulary and max_len.
std::vector<EvalReport> evaluate(const ScorerParams& params, const Dataset& dataset, std::uint64_t seed,
                                 const std::string& split, int jobs = 1);
// Encodes a copy of the dataset with the checkpoint's vocabulary first.
std::vector<EvalReport> evaluate(const Checkpoint& ckpt, const Dataset& dataset, std::uint64_t seed,
                                 const std::string& split, int jobs = 1);

// ---------------------------------------------------------------------------
// Manifest and stages
// ---------------------------------------------------------------------------

struct StageEpochs {
  std::size_t teacher = 1;
  std::size_t student = 1;
  std::size_t expert = 0;  // 0 = task default
};

std::size_t default_expert_epochs(Task task);

struct PipelineManifest {
  Task task = Task::kMultipleChoice;
  std::vector<DatasetRef> datasets;
  double lambda = 0.5;
  StageEpochs epochs;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::string preset = "desk";
  ScorerConfig scorer;
  std::filesystem::path checkpoint_dir;  // the run directory

  bool baseline = true;                  // also train the V-only hard-label baseline
  bool expert_taught_by_teacher = false;  // expert uses T's soft labels of V
  bool warm_start_student = false;        // student initialized from T
  bool extra_expert_round = false;        // expert re-taught by the expert once more
  std::size_t multi_teacher_splits = 0;   // >= 2 adds the multi-teacher baseline
  std::size_t topk_soft = 0;              // span soft labels only
  int jobs = 1;

  // Throws ConfigError on any broken invariant.
  void validate() const;
  std::size_t expert_epochs() const { return epochs.expert ? epochs.expert : default_expert_epochs(task); }
};

// Relative dataset paths and checkpoint_dir resolve against base_dir. Unknown
// keys are rejected.
PipelineManifest manifest_from_json(const Json& j, const std::filesystem::path& base_dir = {});
PipelineManifest read_manifest(const std::filesystem::path& path);
Json to_json(const PipelineManifest& m);
// Digest of everything except the run directory.
std::string manifest_hash(const PipelineManifest& m);

enum class LabelKind { kHard, kSoft };
enum class InitKind { kFresh, kFromStudent, kFromTeacher, kFromCheckpoint };
const char* to_string(LabelKind kind);
const char* to_string(InitKind kind);

struct EpochMetric {
  std::string stage;
  std::size_t epoch = 0;
  std::string split;
  std::string metric;
  double value = 0.0;
  std::uint64_t seed = 0;
};
Json to_json(const EpochMetric& m);

struct StageRecord {
  std::string stage;
  std::uint64_t seed = 0;
  LabelKind labels = LabelKind::kHard;
  InitKind init = InitKind::kFresh;
  std::string checkpoint_id;
  std::string parent_id;
  std::vector<std::string> soft_file_ids;
  std::vector<std::string> datasets;
  std::size_t n_train = 0;
  std::size_t n_skipped = 0;  // extractive instances whose answer was truncated
  std::size_t epochs = 0;
  std::vector<EpochMetric> metrics;
};
Json to_json(const StageRecord& r);
StageRecord stage_record_from_json(const Json& j);

// One block of training data: a dataset with hard labels or with soft labels.
struct TrainingPart {
  const Dataset* data = nullptr;
  const SoftLabelFile* soft = nullptr;  // null = hard labels
};

struct StageSpec {
  std::string stage;
  std::uint64_t seed = 0;
  InitKind init = InitKind::kFresh;
  const Checkpoint* init_from = nullptr;  // required unless init is fresh
  std::vector<TrainingPart> parts;
  std::size_t epochs = 1;
};

// Per-seed final evaluation of every stage that was run.
struct RunReport {
  std::vector<std::uint64_t> seeds;
  // stage -> metric -> value per seed (seed order)
  std::map<std::string, std::map<std::string, std::vector<double>>> values;
};
Json to_json(const RunReport& r);

// Owns one run directory. Construction loads and encodes every dataset,
// builds the shared vocabulary, takes the directory lock and writes
// manifest.json. Completed stages are found on disk and not re-run.
class Pipeline {
 public:
  explicit Pipeline(PipelineManifest manifest, std::string config_echo = {});
  ~Pipeline();
  Pipeline(const Pipeline&) = delete;
  Pipeline& operator=(const Pipeline&) = delete;

  const PipelineManifest& manifest() const { return manifest_; }
  const std::string& hash() const { return hash_; }
  const Vocabulary& vocab() const { return vocab_; }
  const Dataset& target() const;
  std::vector<const Dataset*> weak() const;
  const Dataset* eval_set() const;

  // Shared training primitive: trains, evaluates per epoch and persists the
  // checkpoint, stage record and metrics lines.
  Checkpoint run_stage(const StageSpec& spec, LabelKind labels);

  // Soft labels of `dataset` produced by the checkpoint of `stage`; generated
  // and persisted on first use, then read back from disk.
  SoftLabelFile soft_labels(std::uint64_t seed, const std::string& stage, const Dataset& dataset);

  // Loads a completed stage; ConfigError when it has not run.
  Checkpoint require_stage(std::uint64_t seed, const std::string& stage) const;
  bool stage_done(std::uint64_t seed, const std::string& stage) const;
  std::optional<StageRecord> stage_record(std::uint64_t seed, const std::string& stage) const;

  Checkpoint train_baseline(std::uint64_t seed);
  Checkpoint train_teacher(std::uint64_t seed);
  Checkpoint train_student(std::uint64_t seed);
  Checkpoint train_expert(std::uint64_t seed);
  Checkpoint train_extra_expert(std::uint64_t seed);
  // Stages "teacher_<W_i>" and "student"; returns S*.
  Checkpoint integrate_sources(std::uint64_t seed);
  // Stages "mt_teacher_<i>", "mt_student" and "mt_expert"; returns the expert.
  Checkpoint multi_teacher_baseline(std::uint64_t seed, std::size_t n_splits);
  // Hard V+W then hard fine-tune on V: stages "control_teacher", "control".
  Checkpoint hard_control(std::uint64_t seed);

  // Every configured stage for every seed, then report.json.
  RunReport run();

  std::filesystem::path checkpoint_path(std::uint64_t seed, const std::string& stage) const;
  std::filesystem::path soft_path(std::uint64_t seed, const std::string& stage, const std::string& dataset) const;
  std::filesystem::path record_path(std::uint64_t seed, const std::string& stage) const;
  std::filesystem::path metrics_path() const;

 private:
  Checkpoint finish_expert(std::uint64_t seed, const std::string& stage, const std::string& init_stage,
                           const std::string& teacher_stage);
  std::vector<double> final_metrics(const StageRecord& record, const std::string& metric) const;

  PipelineManifest manifest_;
  std::string hash_;
  std::vector<std::unique_ptr<Dataset>> datasets_;
  std::vector<std::unique_ptr<Dataset>> derived_;  // multi-teacher splits
  Vocabulary vocab_;
  std::filesystem::path lock_path_;
};

}  // namespace selfteach
