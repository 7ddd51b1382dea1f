#include "selfteach/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "selfteach/digest.hpp"
#include "selfteach/distill_math.hpp"
#include "selfteach/errors.hpp"
#include "selfteach/optimizer.hpp"
#include "selfteach/parallel.hpp"
#include "selfteach/unicode.hpp"

namespace selfteach {
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

const char* to_string(DatasetRole role) {
  switch (role) {
    case DatasetRole::kTargetV: return "target_V";
    case DatasetRole::kWeakW: return "weak_W";
    case DatasetRole::kEval: return "eval";
  }
  return "?";
}

DatasetRole dataset_role_from_string(std::string_view s) {
  if (s == "target_V") return DatasetRole::kTargetV;
  if (s == "weak_W") return DatasetRole::kWeakW;
  if (s == "eval") return DatasetRole::kEval;
  throw ConfigError("unknown dataset role \"" + std::string(s) + "\"");
}

namespace {

void check_target_provenance(const Dataset& d) {
  if (d.ref.role != DatasetRole::kTargetV) return;
  for (const auto& mc : d.mc) {
    if (mc.provenance != Provenance::kClean) {
      throw DataError("target dataset " + d.ref.name + ": instance " + mc.id + " has provenance \"weak\"");
    }
  }
}

}  // namespace

Dataset make_dataset(DatasetRef ref, std::vector<WeakMCInstance> instances) {
  if (ref.task != Task::kMultipleChoice) throw ContractError("dataset " + ref.name + ": expected multiple choice");
  Dataset d;
  d.ref = std::move(ref);
  d.mc = std::move(instances);
  check_target_provenance(d);
  return d;
}

Dataset make_dataset(DatasetRef ref, std::vector<ExtractiveInstance> instances) {
  if (ref.task != Task::kExtractive) throw ContractError("dataset " + ref.name + ": expected extractive");
  Dataset d;
  d.ref = std::move(ref);
  d.spans = std::move(instances);
  return d;
}

Dataset load_dataset(const DatasetRef& ref) {
  if (ref.task == Task::kMultipleChoice) return make_dataset(ref, read_weak_mc(ref.path));
  return make_dataset(ref, read_extractive(ref.path));
}

Vocabulary build_vocabulary(const std::vector<const Dataset*>& datasets) {
  Vocabulary vocab;
  for (const Dataset* d : datasets) {
    for (const auto& mc : d->mc) {
      vocab.add_utf8(mc.question);
      for (const auto& o : mc.options) vocab.add_utf8(o);
      vocab.add_utf8(mc.context);
    }
    for (const auto& ex : d->spans) {
      vocab.add_utf8(ex.question);
      vocab.add_utf8(ex.context);
    }
  }
  return vocab;
}

void encode_dataset(Dataset& d, const Vocabulary& vocab, std::size_t max_len) {
  d.mc_encoded.clear();
  d.span_encoded.clear();
  d.gold_tokens.clear();
  for (const auto& mc : d.mc) d.mc_encoded.push_back(encode_mc(mc, vocab, max_len));
  for (const auto& ex : d.spans) {
    d.span_encoded.push_back(encode_span(ex.question, ex.context, vocab, max_len));
    d.gold_tokens.push_back(answer_tokens(d.span_encoded.back(), ex.answer_start, ex.answer_end));
  }
}

Dataset subset(const Dataset& d, const std::vector<std::size_t>& indices, std::string name) {
  Dataset out;
  out.ref = d.ref;
  out.ref.name = std::move(name);
  for (std::size_t i : indices) {
    if (i >= d.size()) throw ContractError("subset: index out of range");
    if (d.ref.task == Task::kMultipleChoice) {
      out.mc.push_back(d.mc[i]);
      if (!d.mc_encoded.empty()) out.mc_encoded.push_back(d.mc_encoded[i]);
    } else {
      out.spans.push_back(d.spans[i]);
      if (!d.span_encoded.empty()) {
        out.span_encoded.push_back(d.span_encoded[i]);
        out.gold_tokens.push_back(d.gold_tokens[i]);
      }
    }
  }
  return out;
}

std::vector<std::vector<std::size_t>> split_near_equal(std::size_t n, std::size_t parts, std::uint64_t seed) {
  if (parts < 1) throw ConfigError("split_near_equal: need at least one part");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out(parts);
  std::size_t pos = 0;
  for (std::size_t p = 0; p < parts; ++p) {
    const std::size_t size = n / parts + (p < n % parts ? 1 : 0);
    out[p].assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                  order.begin() + static_cast<std::ptrdiff_t>(pos + size));
    pos += size;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Soft labels
// ---------------------------------------------------------------------------

const SoftRecord& SoftLabelFile::at(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) {
    throw DataError("soft-label file " + this->id + " (" + dataset + "): missing soft record for instance " + id);
  }
  return records[it->second];
}

void SoftLabelFile::reindex() {
  index_.clear();
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!index_.emplace(records[i].id, i).second) {
      throw DataError("soft-label file for " + dataset + ": id collision on " + records[i].id);
    }
  }
}

namespace {

void require_same_task(const ScorerParams& params, const Dataset& d) {
  if (params.task != d.ref.task) {
    throw ContractError(std::string("checkpoint task ") + to_string(params.task) + " does not match dataset " +
                        d.ref.name + " task " + to_string(d.ref.task));
  }
}

void require_encoded(const Dataset& d) {
  if (!d.encoded()) throw ContractError("dataset " + d.ref.name + " has not been encoded");
}

Json sparse_json(const std::vector<double>& dense) {
  Json pairs = Json::array();
  for (std::size_t i = 0; i < dense.size(); ++i) {
    if (dense[i] != 0.0) pairs.push_back(Json::array({i, dense[i]}));
  }
  return pairs;
}

std::vector<double> dense_from_json(const Json& pairs, std::size_t length) {
  std::vector<double> dense(length, 0.0);
  for (const auto& p : pairs) {
    const auto i = p.at(0).get<std::size_t>();
    if (i >= length) throw DataError("soft record index out of range");
    dense[i] = p.at(1).get<double>();
  }
  return dense;
}

}  // namespace

SoftLabelFile gen_soft_labels(const Checkpoint& teacher, const Dataset& d, double lambda, std::size_t topk,
                              int jobs) {
  require_same_task(teacher.params, d);
  require_encoded(d);
  if (lambda < 0.0 || lambda > 1.0) throw ConfigError("lambda must lie in [0, 1]");
  SoftLabelFile file;
  file.teacher_id = teacher.id;
  file.dataset = d.ref.name;
  file.task = d.ref.task;
  file.lambda = lambda;
  file.topk = d.ref.task == Task::kExtractive ? topk : 0;

  std::vector<std::optional<SoftRecord>> slots(d.size());
  parallel_for(d.size(), jobs, [&](std::size_t i) {
    SoftRecord rec;
    rec.id = d.id(i);
    if (d.ref.task == Task::kMultipleChoice) {
      const auto p = forward_mc(teacher.params, d.mc_encoded[i]);
      const auto h = HardLabelMC::one_hot(d.mc[i].options.size(), static_cast<std::size_t>(d.mc[i].answer_index));
      rec.soft = blend_mc(h, p, lambda, teacher.id).s;
    } else {
      if (!d.gold_tokens[i]) return;
      const auto p = forward_span(teacher.params, d.span_encoded[i]);
      const HardLabelSpan h{d.span_encoded[i].tokens.size(), d.gold_tokens[i]->first, d.gold_tokens[i]->second};
      auto s = blend_span(h, p, lambda, teacher.id);
      if (file.topk > 0) {
        s.s_start = sparsify_topk(s.s_start, file.topk);
        s.s_end = sparsify_topk(s.s_end, file.topk);
      }
      rec.soft_start = std::move(s.s_start);
      rec.soft_end = std::move(s.s_end);
    }
    slots[i] = std::move(rec);
  });
  for (auto& s : slots) {
    if (s) file.records.push_back(std::move(*s));
  }
  file.reindex();
  return file;
}

std::string write_soft_labels(const fs::path& path, SoftLabelFile& file) {
  std::string bytes;
  for (const auto& r : file.records) {
    Json j;
    j["id"] = r.id;
    j["dataset"] = file.dataset;
    j["teacher_id"] = file.teacher_id;
    j["lambda"] = file.lambda;
    if (file.task == Task::kMultipleChoice) {
      j["soft"] = r.soft;
    } else if (file.topk > 0) {
      j["length"] = r.soft_start.size();
      j["topk"] = file.topk;
      j["soft_start"] = sparse_json(r.soft_start);
      j["soft_end"] = sparse_json(r.soft_end);
    } else {
      j["soft_start"] = r.soft_start;
      j["soft_end"] = r.soft_end;
    }
    bytes += j.dump();
    bytes += '\n';
  }
  write_file(path, bytes);
  file.id = "soft-" + sha256_hex(bytes).substr(0, 16);
  return file.id;
}

SoftLabelFile read_soft_labels(const fs::path& path) {
  SoftLabelFile file;
  file.dataset = path.stem().string();
  bool first = true;
  for_each_jsonl(path, [&](const Json& j, std::size_t) {
    SoftRecord r;
    r.id = j.at("id").get<std::string>();
    const auto teacher = j.at("teacher_id").get<std::string>();
    const auto lambda = j.at("lambda").get<double>();
    const auto dataset = j.value("dataset", file.dataset);
    if (first) {
      file.teacher_id = teacher;
      file.lambda = lambda;
      file.dataset = dataset;
      file.task = j.contains("soft") ? Task::kMultipleChoice : Task::kExtractive;
      file.topk = j.value("topk", std::size_t{0});
      first = false;
    } else if (teacher != file.teacher_id || lambda != file.lambda) {
      throw DataError("record " + r.id + " has a different teacher or lambda than the rest of the file");
    }
    if (file.task == Task::kMultipleChoice) {
      r.soft = j.at("soft").get<std::vector<double>>();
    } else if (j.contains("length")) {
      const auto length = j.at("length").get<std::size_t>();
      r.soft_start = dense_from_json(j.at("soft_start"), length);
      r.soft_end = dense_from_json(j.at("soft_end"), length);
    } else {
      r.soft_start = j.at("soft_start").get<std::vector<double>>();
      r.soft_end = j.at("soft_end").get<std::vector<double>>();
    }
    file.records.push_back(std::move(r));
  });
  file.id = "soft-" + sha256_hex(read_file(path)).substr(0, 16);
  file.reindex();
  return file;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

std::vector<EvalReport> evaluate(const ScorerParams& params, const Dataset& d, std::uint64_t seed,
                                 const std::string& split, int jobs) {
  require_same_task(params, d);
  require_encoded(d);
  if (d.size() == 0) throw DataError("evaluate: dataset " + d.ref.name + " is empty");
  if (d.ref.task == Task::kMultipleChoice) {
    std::vector<int> pred(d.size()), gold(d.size());
    parallel_for(d.size(), jobs, [&](std::size_t i) {
      const auto p = forward_mc(params, d.mc_encoded[i]);
      pred[i] = static_cast<int>(std::max_element(p.probs.begin(), p.probs.end()) - p.probs.begin());
      gold[i] = d.mc[i].answer_index;
    });
    return {{"accuracy", accuracy(pred, gold), d.size(), seed, split}};
  }
  std::vector<double> em(d.size()), f1(d.size());
  parallel_for(d.size(), jobs, [&](std::size_t i) {
    const auto& ex = d.spans[i];
    const auto p = forward_span(params, d.span_encoded[i]);
    const auto [start, end] = decode_span(d.span_encoded[i], p);
    const std::u32string context = text::decode(ex.context);
    const std::string pred = text::encode(context.substr(static_cast<std::size_t>(start),
                                                         static_cast<std::size_t>(end - start)));
    em[i] = exact_match(pred, ex.answer_text);
    f1[i] = char_f1(pred, ex.answer_text);
  });
  double em_sum = 0.0, f1_sum = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    em_sum += em[i];
    f1_sum += f1[i];
  }
  const double n = static_cast<double>(d.size());
  return {{"exact_match", 100.0 * em_sum / n, d.size(), seed, split}, {"f1", 100.0 * f1_sum / n, d.size(), seed, split}};
}

std::vector<EvalReport> evaluate(const Checkpoint& ckpt, const Dataset& d, std::uint64_t seed,
                                 const std::string& split, int jobs) {
  require_same_task(ckpt.params, d);
  if (!ckpt.vocab) throw CheckpointError("checkpoint " + ckpt.id + " carries no vocabulary");
  Dataset copy = d;
  encode_dataset(copy, *ckpt.vocab, ckpt.max_len);
  return evaluate(ckpt.params, copy, seed, split, jobs);
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

std::size_t default_expert_epochs(Task task) { return task == Task::kMultipleChoice ? 8 : 2; }

void PipelineManifest::validate() const {
  if (lambda < 0.0 || lambda > 1.0) throw ConfigError("manifest: lambda must lie in [0, 1]");
  if (epochs.teacher < 1 || epochs.student < 1) throw ConfigError("manifest: stage epochs must be >= 1");
  if (seeds.empty()) throw ConfigError("manifest: at least one seed is required");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ConfigError("manifest: duplicate seed");
  }
  if (scorer.d_emb < 1 || scorer.max_len < 4 || scorer.batch_size < 1 || !(scorer.lr > 0.0)) {
    throw ConfigError("manifest: invalid scorer settings");
  }
  if (jobs < 1) throw ConfigError("manifest: jobs must be >= 1");
  std::size_t targets = 0, weak = 0;
  std::set<std::string> names;
  for (const auto& d : datasets) {
    if (d.name.empty() || d.name.find_first_not_of(
                              "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_.-") != std::string::npos) {
      throw ConfigError("manifest: dataset name \"" + d.name + "\" must match [A-Za-z0-9_.-]+");
    }
    if (!names.insert(d.name).second) throw ConfigError("manifest: duplicate dataset name " + d.name);
    if (d.task != task) {
      throw ConfigError("manifest: dataset " + d.name + " is " + to_string(d.task) + " but the run is " +
                        to_string(task) + "; mixed-task runs are rejected");
    }
    targets += d.role == DatasetRole::kTargetV;
    weak += d.role == DatasetRole::kWeakW;
  }
  if (targets != 1) throw ConfigError("manifest: exactly one target_V dataset is required");
  if (multi_teacher_splits == 1) throw ConfigError("manifest: multi_teacher_splits must be 0 or >= 2");
  if (multi_teacher_splits >= 2 && weak != 1) {
    throw ConfigError("manifest: the multi-teacher baseline needs exactly one weak_W dataset");
  }
  if (expert_taught_by_teacher && weak >= 2) {
    throw ConfigError("manifest: expert_taught_by_teacher needs a single weak source");
  }
}

namespace {

const std::set<std::string> kManifestKeys = {
    "task", "datasets", "lambda", "epochs", "seeds", "preset", "scorer", "checkpoint_dir", "baseline",
    "expert_taught_by_teacher", "warm_start_student", "extra_expert_round", "multi_teacher_splits", "topk_soft",
    "jobs"};

void reject_unknown(const Json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError(where + ": unknown key \"" + key + "\"");
  }
}

fs::path resolve(const fs::path& base, const fs::path& p) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return (base / p).lexically_normal();
}

}  // namespace

PipelineManifest manifest_from_json(const Json& j, const fs::path& base_dir) {
  reject_unknown(j, kManifestKeys, "manifest");
  PipelineManifest m;
  try {
    m.task = task_from_string(j.at("task").get<std::string>());
    m.preset = j.value("preset", m.preset);
    m.scorer = scorer_preset(m.preset);
    for (const auto& dj : j.at("datasets")) {
      reject_unknown(dj, {"name", "path", "role", "task"}, "manifest dataset");
      DatasetRef ref;
      ref.name = dj.at("name").get<std::string>();
      ref.path = resolve(base_dir, dj.at("path").get<std::string>());
      ref.role = dataset_role_from_string(dj.at("role").get<std::string>());
      ref.task = dj.contains("task") ? task_from_string(dj.at("task").get<std::string>()) : m.task;
      m.datasets.push_back(std::move(ref));
    }
    m.lambda = j.value("lambda", m.lambda);
    if (j.contains("epochs")) {
      const auto& e = j.at("epochs");
      reject_unknown(e, {"teacher", "student", "expert"}, "manifest epochs");
      m.epochs.teacher = e.value("teacher", m.epochs.teacher);
      m.epochs.student = e.value("student", m.epochs.student);
      m.epochs.expert = e.value("expert", m.epochs.expert);
    }
    if (j.contains("seeds")) m.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("scorer")) {
      const auto& s = j.at("scorer");
      reject_unknown(s, {"d_emb", "max_len", "lr", "batch_size"}, "manifest scorer");
      m.scorer.d_emb = s.value("d_emb", m.scorer.d_emb);
      m.scorer.max_len = s.value("max_len", m.scorer.max_len);
      m.scorer.lr = s.value("lr", m.scorer.lr);
      m.scorer.batch_size = s.value("batch_size", m.scorer.batch_size);
    }
    if (j.contains("checkpoint_dir")) m.checkpoint_dir = resolve(base_dir, j.at("checkpoint_dir").get<std::string>());
    m.baseline = j.value("baseline", m.baseline);
    m.expert_taught_by_teacher = j.value("expert_taught_by_teacher", m.expert_taught_by_teacher);
    m.warm_start_student = j.value("warm_start_student", m.warm_start_student);
    m.extra_expert_round = j.value("extra_expert_round", m.extra_expert_round);
    m.multi_teacher_splits = j.value("multi_teacher_splits", m.multi_teacher_splits);
    m.topk_soft = j.value("topk_soft", m.topk_soft);
    m.jobs = j.value("jobs", m.jobs);
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("manifest: ") + e.what());
  }
  m.validate();
  return m;
}

PipelineManifest read_manifest(const fs::path& path) {
  Json j;
  try {
    j = Json::parse(read_file(path));
  } catch (const Json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return manifest_from_json(j, path.parent_path());
}

Json to_json(const PipelineManifest& m) {
  Json j;
  j["task"] = to_string(m.task);
  j["datasets"] = Json::array();
  for (const auto& d : m.datasets) {
    j["datasets"].push_back(
        {{"name", d.name}, {"path", d.path.string()}, {"role", to_string(d.role)}, {"task", to_string(d.task)}});
  }
  j["lambda"] = m.lambda;
  j["epochs"] = {{"teacher", m.epochs.teacher}, {"student", m.epochs.student}, {"expert", m.expert_epochs()}};
  j["seeds"] = m.seeds;
  j["preset"] = m.preset;
  j["scorer"] = {{"d_emb", m.scorer.d_emb},
                 {"max_len", m.scorer.max_len},
                 {"lr", m.scorer.lr},
                 {"batch_size", m.scorer.batch_size}};
  j["checkpoint_dir"] = m.checkpoint_dir.string();
  j["baseline"] = m.baseline;
  j["expert_taught_by_teacher"] = m.expert_taught_by_teacher;
  j["warm_start_student"] = m.warm_start_student;
  j["extra_expert_round"] = m.extra_expert_round;
  j["multi_teacher_splits"] = m.multi_teacher_splits;
  j["topk_soft"] = m.topk_soft;
  j["jobs"] = m.jobs;
  return j;
}

std::string manifest_hash(const PipelineManifest& m) {
  Json j = to_json(m);
  j.erase("checkpoint_dir");
  j.erase("jobs");
  return sha256_hex(j.dump()).substr(0, 16);
}

// ---------------------------------------------------------------------------
// Stage records
// ---------------------------------------------------------------------------

const char* to_string(LabelKind kind) { return kind == LabelKind::kHard ? "hard" : "soft"; }

const char* to_string(InitKind kind) {
  switch (kind) {
    case InitKind::kFresh: return "fresh";
    case InitKind::kFromStudent: return "from_student";
    case InitKind::kFromTeacher: return "from_teacher";
    case InitKind::kFromCheckpoint: return "from_checkpoint";
  }
  return "?";
}

namespace {

LabelKind label_kind_from_string(const std::string& s) {
  if (s == "hard") return LabelKind::kHard;
  if (s == "soft") return LabelKind::kSoft;
  throw DataError("unknown label kind \"" + s + "\"");
}

InitKind init_kind_from_string(const std::string& s) {
  for (auto k : {InitKind::kFresh, InitKind::kFromStudent, InitKind::kFromTeacher, InitKind::kFromCheckpoint}) {
    if (s == to_string(k)) return k;
  }
  throw DataError("unknown init kind \"" + s + "\"");
}

}  // namespace

Json to_json(const EpochMetric& m) {
  Json j;
  j["stage"] = m.stage;
  j["epoch"] = m.epoch;
  j["split"] = m.split;
  j["metric"] = m.metric;
  j["value"] = m.value;
  j["seed"] = m.seed;
  return j;
}

Json to_json(const StageRecord& r) {
  Json j;
  j["stage"] = r.stage;
  j["seed"] = r.seed;
  j["label"] = to_string(r.labels);
  j["init"] = to_string(r.init);
  j["checkpoint_id"] = r.checkpoint_id;
  j["parent_id"] = r.parent_id;
  j["soft_file_ids"] = r.soft_file_ids;
  j["datasets"] = r.datasets;
  j["n_train"] = r.n_train;
  j["n_skipped"] = r.n_skipped;
  j["epochs"] = r.epochs;
  j["metrics"] = Json::array();
  for (const auto& m : r.metrics) j["metrics"].push_back(to_json(m));
  return j;
}

StageRecord stage_record_from_json(const Json& j) {
  StageRecord r;
  r.stage = j.at("stage").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.labels = label_kind_from_string(j.at("label").get<std::string>());
  r.init = init_kind_from_string(j.at("init").get<std::string>());
  r.checkpoint_id = j.at("checkpoint_id").get<std::string>();
  r.parent_id = j.at("parent_id").get<std::string>();
  r.soft_file_ids = j.at("soft_file_ids").get<std::vector<std::string>>();
  r.datasets = j.at("datasets").get<std::vector<std::string>>();
  r.n_train = j.at("n_train").get<std::size_t>();
  r.n_skipped = j.at("n_skipped").get<std::size_t>();
  r.epochs = j.at("epochs").get<std::size_t>();
  for (const auto& mj : j.at("metrics")) {
    r.metrics.push_back({mj.at("stage").get<std::string>(), mj.at("epoch").get<std::size_t>(),
                         mj.at("split").get<std::string>(), mj.at("metric").get<std::string>(),
                         mj.at("value").get<double>(), mj.at("seed").get<std::uint64_t>()});
  }
  return r;
}

Json to_json(const RunReport& r) {
  Json j;
  j["seeds"] = r.seeds;
  j["stages"] = Json::object();
  for (const auto& [stage, metrics] : r.values) {
    for (const auto& [metric, values] : metrics) {
      const auto agg = aggregate_seeds(values);
      j["stages"][stage][metric] = {{"values", values},
                                    {"mean", agg.mean},
                                    {"stddev", agg.stddev},
                                    {"mean_1dp", round1(agg.mean)},
                                    {"stddev_1dp", round1(agg.stddev)}};
    }
  }
  return j;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace {

void axpy(ParamGradients& acc, const ParamGradients& g, double weight) {
  auto dst = acc.arrays();
  const auto src = g.arrays();
  for (std::size_t a = 0; a < dst.size(); ++a) {
    for (std::size_t i = 0; i < dst[a].data.size(); ++i) dst[a].data[i] += weight * src[a].data[i];
  }
}

// Mean-loss gradients. With jobs > 1 the batch is cut into `jobs` contiguous
// chunks whose results are combined in chunk order, so results depend on jobs
// but never on thread timing.
template <class Example>
GradientResult batch_gradients(const ScorerParams& params, const std::vector<Example>& batch, int jobs) {
  const std::size_t chunks = std::min<std::size_t>(batch.size(), static_cast<std::size_t>(std::max(jobs, 1)));
  if (chunks <= 1) return gradients(params, std::span<const Example>(batch));
  std::vector<GradientResult> parts(chunks);
  const std::size_t per = (batch.size() + chunks - 1) / chunks;
  parallel_for(chunks, jobs, [&](std::size_t c) {
    const std::size_t begin = c * per;
    const std::size_t end = std::min(batch.size(), begin + per);
    if (begin < end) parts[c] = gradients(params, std::span<const Example>(batch.data() + begin, end - begin));
  });
  GradientResult total;
  total.grads = ParamGradients::zeros(params.task, params.vocab_size, params.d_emb);
  const double n = static_cast<double>(batch.size());
  for (std::size_t c = 0; c < chunks; ++c) {
    const std::size_t begin = c * per;
    const std::size_t end = std::min(batch.size(), begin + per);
    if (begin >= end) continue;
    const double w = static_cast<double>(end - begin) / n;
    axpy(total.grads, parts[c].grads, w);
    total.loss += w * parts[c].loss;
  }
  return total;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch)};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

template <class Example>
void train_epochs(ScorerParams& params, const std::vector<Example>& examples, const StageSpec& spec,
                  const ScorerConfig& cfg, int jobs, const std::function<void(std::size_t, double)>& on_epoch) {
  AdamState state = AdamState::zeros_like(params.task, params.vocab_size, params.d_emb);
  std::vector<Example> batch;
  for (std::size_t epoch = 1; epoch <= spec.epochs; ++epoch) {
    const auto order = epoch_order(examples.size(), spec.seed, epoch);
    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      batch.clear();
      for (std::size_t k = begin; k < end; ++k) batch.push_back(examples[order[k]]);
      const auto result = batch_gradients(params, batch, jobs);
      opt_step(params, result.grads, state, cfg.lr);
      loss_sum += result.loss * static_cast<double>(end - begin);
    }
    on_epoch(epoch, examples.empty() ? 0.0 : loss_sum / static_cast<double>(examples.size()));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

Pipeline::Pipeline(PipelineManifest manifest, std::string config_echo) : manifest_(std::move(manifest)) {
  manifest_.validate();
  if (manifest_.checkpoint_dir.empty()) throw ConfigError("manifest: checkpoint_dir is required");
  hash_ = manifest_hash(manifest_);

  for (const auto& ref : manifest_.datasets) datasets_.push_back(std::make_unique<Dataset>(load_dataset(ref)));
  if (target().size() == 0) throw ConfigError("target dataset " + target().ref.name + " is empty");
  std::vector<const Dataset*> all;
  for (const auto& d : datasets_) all.push_back(d.get());
  vocab_ = build_vocabulary(all);
  for (auto& d : datasets_) encode_dataset(*d, vocab_, manifest_.scorer.max_len);

  const fs::path dir = manifest_.checkpoint_dir;
  fs::create_directories(dir);
  const fs::path manifest_file = dir / "manifest.json";
  if (fs::exists(manifest_file)) {
    const auto existing = manifest_from_json(Json::parse(read_file(manifest_file)));
    if (manifest_hash(existing) != hash_) {
      throw ConfigError("run directory " + dir.string() + " belongs to a different manifest");
    }
  }

  lock_path_ = dir / ".lock";
  const int fd = ::open(lock_path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    const std::string reason = errno == EEXIST ? "another run holds " + lock_path_.string() +
                                                     " (remove it if no run is active)"
                                               : std::strerror(errno);
    lock_path_.clear();
    throw ConfigError("cannot lock run directory: " + reason);
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] auto written = ::write(fd, pid.data(), pid.size());
  ::close(fd);

  try {
    write_file(manifest_file, to_json(manifest_).dump(2) + "\n");
    if (!config_echo.empty()) write_file(dir / "config.txt", config_echo);
  } catch (...) {
    fs::remove(lock_path_);
    throw;
  }
}

Pipeline::~Pipeline() {
  if (!lock_path_.empty()) {
    std::error_code ec;
    fs::remove(lock_path_, ec);
  }
}

const Dataset& Pipeline::target() const {
  for (const auto& d : datasets_) {
    if (d->ref.role == DatasetRole::kTargetV) return *d;
  }
  throw ConfigError("no target dataset");
}

std::vector<const Dataset*> Pipeline::weak() const {
  std::vector<const Dataset*> out;
  for (const auto& d : datasets_) {
    if (d->ref.role == DatasetRole::kWeakW) out.push_back(d.get());
  }
  return out;
}

const Dataset* Pipeline::eval_set() const {
  for (const auto& d : datasets_) {
    if (d->ref.role == DatasetRole::kEval) return d.get();
  }
  return nullptr;
}

fs::path Pipeline::checkpoint_path(std::uint64_t seed, const std::string& stage) const {
  return manifest_.checkpoint_dir / "checkpoints" / ("seed" + std::to_string(seed)) / (stage + ".ckpt");
}

fs::path Pipeline::soft_path(std::uint64_t seed, const std::string& stage, const std::string& dataset) const {
  return manifest_.checkpoint_dir / "softlabels" / ("seed" + std::to_string(seed)) /
         (stage + "__" + dataset + ".jsonl");
}

fs::path Pipeline::record_path(std::uint64_t seed, const std::string& stage) const {
  return manifest_.checkpoint_dir / "stages" / ("seed" + std::to_string(seed)) / (stage + ".json");
}

fs::path Pipeline::metrics_path() const { return manifest_.checkpoint_dir / "metrics.jsonl"; }

bool Pipeline::stage_done(std::uint64_t seed, const std::string& stage) const {
  return fs::exists(record_path(seed, stage)) && fs::exists(checkpoint_path(seed, stage));
}

std::optional<StageRecord> Pipeline::stage_record(std::uint64_t seed, const std::string& stage) const {
  if (!fs::exists(record_path(seed, stage))) return std::nullopt;
  return stage_record_from_json(Json::parse(read_file(record_path(seed, stage))));
}

Checkpoint Pipeline::require_stage(std::uint64_t seed, const std::string& stage) const {
  if (!stage_done(seed, stage)) {
    throw ConfigError("stage " + stage + " (seed " + std::to_string(seed) + ") has not completed");
  }
  Checkpoint ckpt = load_checkpoint(checkpoint_path(seed, stage), manifest_.task);
  if (ckpt.lineage.manifest_hash != hash_) {
    throw ConfigError("checkpoint " + ckpt.id + " was produced under a different manifest");
  }
  return ckpt;
}

Checkpoint Pipeline::run_stage(const StageSpec& spec, LabelKind labels) {
  if (stage_done(spec.seed, spec.stage)) return require_stage(spec.seed, spec.stage);
  if (spec.epochs < 1) throw ConfigError("stage " + spec.stage + ": epochs must be >= 1");

  StageRecord record;
  record.stage = spec.stage;
  record.seed = spec.seed;
  record.labels = labels;
  record.init = spec.init;
  record.epochs = spec.epochs;

  ScorerParams params;
  if (spec.init == InitKind::kFresh) {
    params = ScorerParams::initialize(manifest_.task, vocab_.size(), manifest_.scorer.d_emb, spec.seed);
  } else {
    if (!spec.init_from) throw ConfigError("stage " + spec.stage + ": no initialization checkpoint");
    const auto& init = spec.init_from->params;
    if (init.task != manifest_.task) {
      throw ContractError("stage " + spec.stage + ": init checkpoint " + spec.init_from->id + " has task " +
                          to_string(init.task));
    }
    if (init.vocab_size != vocab_.size() || init.d_emb != manifest_.scorer.d_emb) {
      throw ContractError("stage " + spec.stage + ": init checkpoint " + spec.init_from->id + " has other shapes");
    }
    params = init;
    record.parent_id = spec.init_from->id;
  }

  std::vector<McExample> mc;
  std::vector<SpanExample> span;
  for (const auto& part : spec.parts) {
    const Dataset& d = *part.data;
    if ((part.soft != nullptr) != (labels == LabelKind::kSoft)) {
      throw ContractError("stage " + spec.stage + ": mixed hard and soft parts");
    }
    record.datasets.push_back(d.ref.name);
    if (part.soft) record.soft_file_ids.push_back(part.soft->id);
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (manifest_.task == Task::kMultipleChoice) {
        McExample ex{d.mc[i].id, d.mc_encoded[i], {}, part.soft != nullptr};
        const std::size_t m = d.mc[i].options.size();
        if (part.soft) {
          ex.target = part.soft->at(d.mc[i].id).soft;
          if (ex.target.size() != m) throw ContractError("soft record " + ex.id + " has the wrong option count");
        } else {
          ex.target = HardLabelMC::one_hot(m, static_cast<std::size_t>(d.mc[i].answer_index)).h;
        }
        mc.push_back(std::move(ex));
      } else {
        if (!d.gold_tokens[i]) {
          ++record.n_skipped;
          continue;
        }
        SpanExample ex;
        ex.id = d.spans[i].id;
        ex.input = d.span_encoded[i];
        ex.gold_start = d.gold_tokens[i]->first;
        ex.gold_end = d.gold_tokens[i]->second;
        if (part.soft) {
          const auto& rec = part.soft->at(ex.id);
          if (rec.soft_start.size() != ex.input.tokens.size() || rec.soft_end.size() != ex.input.tokens.size()) {
            throw ContractError("soft record " + ex.id + " does not match the encoded length");
          }
          ex.target_start = rec.soft_start;
          ex.target_end = rec.soft_end;
          ex.soft = true;
        }
        span.push_back(std::move(ex));
      }
    }
  }
  record.n_train = manifest_.task == Task::kMultipleChoice ? mc.size() : span.size();
  if (record.n_train == 0) throw ConfigError("stage " + spec.stage + ": no training instances");

  const Dataset* eval = eval_set();
  const auto on_epoch = [&](std::size_t epoch, double loss) {
    record.metrics.push_back({spec.stage, epoch, "train", "loss", loss, spec.seed});
    if (eval) {
      for (const auto& r : evaluate(params, *eval, spec.seed, "test", manifest_.jobs)) {
        record.metrics.push_back({spec.stage, epoch, "test", r.metric, r.value, spec.seed});
      }
    }
  };
  if (manifest_.task == Task::kMultipleChoice) {
    train_epochs(params, mc, spec, manifest_.scorer, manifest_.jobs, on_epoch);
  } else {
    train_epochs(params, span, spec, manifest_.scorer, manifest_.jobs, on_epoch);
  }

  Checkpoint ckpt;
  ckpt.params = std::move(params);
  ckpt.id = spec.stage + "-s" + std::to_string(spec.seed) + "-" + params_digest(ckpt.params).substr(0, 12);
  ckpt.vocab = vocab_;
  ckpt.max_len = manifest_.scorer.max_len;
  ckpt.lineage = {spec.stage, hash_, record.parent_id, record.soft_file_ids};
  record.checkpoint_id = ckpt.id;

  save_checkpoint(checkpoint_path(spec.seed, spec.stage), ckpt);
  // The record marks completion; metrics lines follow it.
  write_file(record_path(spec.seed, spec.stage), to_json(record).dump(2) + "\n");
  std::ofstream out(metrics_path(), std::ios::app | std::ios::binary);
  for (const auto& m : record.metrics) out << to_json(m).dump() << '\n';
  if (!out) throw DataError("cannot append to " + metrics_path().string());
  return ckpt;
}

SoftLabelFile Pipeline::soft_labels(std::uint64_t seed, const std::string& stage, const Dataset& dataset) {
  const fs::path path = soft_path(seed, stage, dataset.ref.name);
  if (!fs::exists(path)) {
    const Checkpoint teacher = require_stage(seed, stage);
    SoftLabelFile file = gen_soft_labels(teacher, dataset, manifest_.lambda, manifest_.topk_soft, manifest_.jobs);
    write_soft_labels(path, file);
  }
  return read_soft_labels(path);
}

Checkpoint Pipeline::train_baseline(std::uint64_t seed) {
  StageSpec spec{"baseline", seed, InitKind::kFresh, nullptr, {{&target(), nullptr}}, manifest_.expert_epochs()};
  return run_stage(spec, LabelKind::kHard);
}

Checkpoint Pipeline::train_teacher(std::uint64_t seed) {
  const auto w = weak();
  if (w.size() > 1) throw ConfigError("train_teacher: several weak sources; use integrate_sources");
  StageSpec spec{"teacher", seed, InitKind::kFresh, nullptr, {{&target(), nullptr}}, manifest_.epochs.teacher};
  for (const Dataset* d : w) spec.parts.push_back({d, nullptr});
  return run_stage(spec, LabelKind::kHard);
}

Checkpoint Pipeline::train_student(std::uint64_t seed) {
  if (stage_done(seed, "student")) return require_stage(seed, "student");
  const auto w = weak();
  if (w.size() > 1) throw ConfigError("train_student: several weak sources; use integrate_sources");
  const Checkpoint teacher = require_stage(seed, "teacher");
  std::vector<SoftLabelFile> files;
  files.reserve(1 + w.size());
  files.push_back(soft_labels(seed, "teacher", target()));
  for (const Dataset* d : w) files.push_back(soft_labels(seed, "teacher", *d));

  StageSpec spec{"student", seed, InitKind::kFresh, nullptr, {}, manifest_.epochs.student};
  if (manifest_.warm_start_student) {
    spec.init = InitKind::kFromTeacher;
    spec.init_from = &teacher;
  }
  spec.parts.push_back({&target(), &files[0]});
  for (std::size_t i = 0; i < w.size(); ++i) spec.parts.push_back({w[i], &files[i + 1]});
  return run_stage(spec, LabelKind::kSoft);
}

Checkpoint Pipeline::finish_expert(std::uint64_t seed, const std::string& stage, const std::string& init_stage,
                                   const std::string& teacher_stage) {
  if (stage_done(seed, stage)) return require_stage(seed, stage);
  const Checkpoint init = require_stage(seed, init_stage);
  const SoftLabelFile soft = soft_labels(seed, teacher_stage, target());
  const InitKind kind = init_stage.find("student") != std::string::npos ? InitKind::kFromStudent
                                                                         : InitKind::kFromCheckpoint;
  StageSpec spec{stage, seed, kind, &init, {{&target(), &soft}}, manifest_.expert_epochs()};
  return run_stage(spec, LabelKind::kSoft);
}

Checkpoint Pipeline::train_expert(std::uint64_t seed) {
  return finish_expert(seed, "expert", "student", manifest_.expert_taught_by_teacher ? "teacher" : "student");
}

Checkpoint Pipeline::train_extra_expert(std::uint64_t seed) { return finish_expert(seed, "expert2", "expert", "expert"); }

Checkpoint Pipeline::integrate_sources(std::uint64_t seed) {
  const auto w = weak();
  if (w.size() < 2) throw ConfigError("integrate_sources needs at least two weak sources; use the plain path");
  std::vector<std::string> teachers;
  for (const Dataset* d : w) {
    teachers.push_back("teacher_" + d->ref.name);
    StageSpec spec{teachers.back(), seed, InitKind::kFresh, nullptr, {{&target(), nullptr}, {d, nullptr}},
                   manifest_.epochs.teacher};
    run_stage(spec, LabelKind::kHard);
  }
  if (stage_done(seed, "student")) return require_stage(seed, "student");
  // Order: soft(T_i, W_i) for every i, then soft(T_i, V) for every i.
  std::vector<SoftLabelFile> files;
  files.reserve(2 * w.size());
  for (std::size_t i = 0; i < w.size(); ++i) files.push_back(soft_labels(seed, teachers[i], *w[i]));
  for (std::size_t i = 0; i < w.size(); ++i) files.push_back(soft_labels(seed, teachers[i], target()));
  StageSpec spec{"student", seed, InitKind::kFresh, nullptr, {}, manifest_.epochs.student};
  for (std::size_t i = 0; i < w.size(); ++i) spec.parts.push_back({w[i], &files[i]});
  for (std::size_t i = 0; i < w.size(); ++i) spec.parts.push_back({&target(), &files[w.size() + i]});
  return run_stage(spec, LabelKind::kSoft);
}

Checkpoint Pipeline::multi_teacher_baseline(std::uint64_t seed, std::size_t n_splits) {
  if (n_splits < 2) throw ConfigError("multi_teacher_baseline needs n_splits >= 2");
  const auto w = weak();
  if (w.size() != 1) throw ConfigError("multi_teacher_baseline needs exactly one weak source");
  const auto splits = split_near_equal(w[0]->size(), n_splits, seed);
  std::vector<std::unique_ptr<Dataset>> parts;
  std::vector<std::string> teachers;
  for (std::size_t i = 0; i < n_splits; ++i) {
    parts.push_back(std::make_unique<Dataset>(subset(*w[0], splits[i], w[0]->ref.name + "_part" + std::to_string(i))));
    teachers.push_back("mt_teacher_" + std::to_string(i));
    StageSpec spec{teachers.back(), seed, InitKind::kFresh, nullptr, {{&target(), nullptr}, {parts.back().get(), nullptr}},
                   manifest_.epochs.teacher};
    run_stage(spec, LabelKind::kHard);
  }
  if (!stage_done(seed, "mt_student")) {
    std::vector<SoftLabelFile> files;
    files.reserve(2 * n_splits);
    for (std::size_t i = 0; i < n_splits; ++i) files.push_back(soft_labels(seed, teachers[i], *parts[i]));
    for (std::size_t i = 0; i < n_splits; ++i) files.push_back(soft_labels(seed, teachers[i], target()));
    StageSpec spec{"mt_student", seed, InitKind::kFresh, nullptr, {}, manifest_.epochs.student};
    for (std::size_t i = 0; i < n_splits; ++i) spec.parts.push_back({parts[i].get(), &files[i]});
    for (std::size_t i = 0; i < n_splits; ++i) spec.parts.push_back({&target(), &files[n_splits + i]});
    run_stage(spec, LabelKind::kSoft);
  }
  return finish_expert(seed, "mt_expert", "mt_student", "mt_student");
}

Checkpoint Pipeline::hard_control(std::uint64_t seed) {
  StageSpec first{"control_teacher", seed, InitKind::kFresh, nullptr, {{&target(), nullptr}}, manifest_.epochs.teacher};
  for (const Dataset* d : weak()) first.parts.push_back({d, nullptr});
  const Checkpoint teacher = run_stage(first, LabelKind::kHard);
  StageSpec second{"control", seed, InitKind::kFromTeacher, &teacher, {{&target(), nullptr}},
                   manifest_.expert_epochs()};
  return run_stage(second, LabelKind::kHard);
}

std::vector<double> Pipeline::final_metrics(const StageRecord& record, const std::string& metric) const {
  std::vector<double> out;
  for (const auto& m : record.metrics) {
    if (m.split == "test" && m.metric == metric && m.epoch == record.epochs) out.push_back(m.value);
  }
  return out;
}

RunReport Pipeline::run() {
  RunReport report;
  report.seeds = manifest_.seeds;
  std::vector<std::string> order;
  const auto note = [&](std::uint64_t seed, const std::string& stage) {
    if (std::find(order.begin(), order.end(), stage) == order.end()) order.push_back(stage);
    const auto record = stage_record(seed, stage);
    if (!record) return;
    for (const char* metric : {"accuracy", "exact_match", "f1"}) {
      for (double v : final_metrics(*record, metric)) report.values[stage][metric].push_back(v);
    }
  };
  for (std::uint64_t seed : manifest_.seeds) {
    std::string stage;
    try {
      if (manifest_.baseline) {
        stage = "baseline";
        train_baseline(seed);
        note(seed, stage);
      }
      if (weak().size() >= 2) {
        stage = "integrate_sources";
        integrate_sources(seed);
        for (const Dataset* d : weak()) note(seed, "teacher_" + d->ref.name);
      } else {
        stage = "teacher";
        train_teacher(seed);
        note(seed, "teacher");
        stage = "student";
        train_student(seed);
      }
      note(seed, "student");
      stage = "expert";
      train_expert(seed);
      note(seed, "expert");
      if (manifest_.extra_expert_round) {
        stage = "expert2";
        train_extra_expert(seed);
        note(seed, "expert2");
      }
      if (manifest_.multi_teacher_splits >= 2) {
        stage = "multi_teacher";
        multi_teacher_baseline(seed, manifest_.multi_teacher_splits);
        note(seed, "mt_expert");
      }
    } catch (const Error& e) {
      // Completed stages stay on disk; the failing one is named.
      throw Error(e.code(), "stage " + stage + " (seed " + std::to_string(seed) + ") failed: " + e.what());
    }
  }
  write_file(manifest_.checkpoint_dir / "report.json", to_json(report).dump(2) + "\n");
  return report;
}

}  // namespace selfteach
