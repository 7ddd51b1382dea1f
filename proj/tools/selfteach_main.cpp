// Command-line entry point: forge, stats, coverage, run, teach, softlabels,
// eval and synth.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include "selfteach/config.hpp"
#include "selfteach/context_forge.hpp"
#include "selfteach/errors.hpp"
#include "selfteach/pipeline.hpp"
#include "selfteach/qa_corpus.hpp"
#include "selfteach/records.hpp"
#include "selfteach/retrieval.hpp"
#include "selfteach/synthetic.hpp"

namespace fs = std::filesystem;
using namespace selfteach;

namespace {

// Flags shared by every subcommand; each maps onto a RunConfig key.
struct CommonFlags {
  std::optional<std::string> config;
  std::optional<std::string> seed;
  std::optional<std::string> jobs;
  std::optional<std::string> lambda;
  std::optional<std::string> epochs;
  std::optional<std::string> max_len;
  std::optional<std::string> backend;
  std::optional<std::string> topk_soft;
  bool clean_context = false;
  bool extractive = false;
  std::vector<std::string> sets;  // --set key=value

  void attach(CLI::App* app) {
    app->add_option("--config", config, "flat key=value config file");
    app->add_option("--seed", seed, "random seed");
    app->add_option("--jobs", jobs, "intra-stage parallelism");
    app->add_option("--lambda", lambda, "soft-label mixing weight in [0,1]");
    app->add_option("--epochs", epochs, "expert-stage epochs");
    app->add_option("--max-len", max_len, "maximum sequence length");
    app->add_option("--backend", backend, "retrieval backend")->check(CLI::IsMember({"local", "http"}));
    app->add_option("--topk-soft", topk_soft, "keep the k largest span soft-label entries (0 = dense)");
    app->add_flag("--clean-context", clean_context, "also emit contexts with wrong options removed");
    app->add_flag("--extractive", extractive, "also emit extractive instances");
    app->add_option("--set", sets, "override any config key (key=value)");
  }

  RunConfig resolve() const {
    RunConfig cfg;
    if (config) cfg.merge_file(*config);
    const auto put = [&](const char* key, const std::optional<std::string>& v) {
      if (v) cfg.set(key, *v);
    };
    put("seed", seed);
    put("jobs", jobs);
    put("lambda", lambda);
    put("epochs_expert", epochs);
    put("max_len", max_len);
    put("backend", backend);
    put("topk_soft", topk_soft);
    if (clean_context) cfg.set("clean_context", "true");
    if (extractive) cfg.set("extractive", "true");
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got \"" + kv + "\"");
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    return cfg;
  }
};

int as_int(const RunConfig& cfg, const char* key, std::int64_t min) {
  const auto v = cfg.get_int(key);
  if (v < min) throw ConfigError(std::string("config key ") + key + " must be >= " + std::to_string(min));
  return static_cast<int>(v);
}

std::unique_ptr<SearchBackend> make_backend(const RunConfig& cfg) {
  if (cfg.get("backend") == "local") {
    if (cfg.get("corpus").empty()) throw ConfigError("the local backend needs corpus=<documents.jsonl>");
    return std::make_unique<LocalBackend>(read_documents(cfg.get("corpus")));
  }
  HttpBackendConfig http;
  http.endpoint_template = cfg.get("endpoint");
  if (http.endpoint_template.empty()) throw ConfigError("the http backend needs endpoint=<url template>");
  http.results_per_page = as_int(cfg, "results_per_page", 1);
  http.result_path = cfg.get("result_path");
  http.text_field = cfg.get("text_field");
  http.id_field = cfg.get("id_field");
  return std::make_unique<HttpBackend>(http);
}

int cmd_forge(const fs::path& qa_path, const fs::path& out_dir, const RunConfig& cfg) {
  const auto parsed = parse_qa(qa_path);
  const auto qa = dedupe(parsed);
  auto backend = make_backend(cfg);
  std::unique_ptr<SnippetCache> cache;
  if (!cfg.get("cache_dir").empty()) cache = std::make_unique<SnippetCache>(cfg.get("cache_dir"));

  ForgeOptions options;
  options.k = as_int(cfg, "k", 1);
  options.extractive = cfg.get_bool("extractive");
  options.clean_context = cfg.get_bool("clean_context");
  options.jobs = as_int(cfg, "jobs", 1);
  const ForgeOutput out = forge(qa, *backend, cache.get(), options);

  write_jsonl(out_dir / "weak_mc.jsonl", to_json_rows(out.weak));
  if (options.extractive) write_jsonl(out_dir / "extractive.jsonl", to_json_rows(out.extractive));
  if (options.clean_context) write_jsonl(out_dir / "weak_mc_clean.jsonl", to_json_rows(out.cleaned));
  Json summary = to_json(out.summary);
  summary["duplicates_removed"] = parsed.size() - qa.size();
  write_file(out_dir / "forge_summary.json", summary.dump(2) + "\n");
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int cmd_stats(const fs::path& dataset) {
  const auto instances = read_weak_mc(dataset);
  std::cout << to_json(corpus_stats(instances)).dump(2) << "\n";
  return 0;
}

int cmd_coverage(const fs::path& qa_path, const fs::path& subjects_path) {
  std::vector<std::string> titles;
  for (const auto& qa : parse_qa(qa_path)) {
    if (qa.exam_title) titles.push_back(*qa.exam_title);
  }
  std::vector<std::string> subjects;
  std::ifstream in(subjects_path);
  if (!in) throw DataError("cannot open " + subjects_path.string());
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) subjects.push_back(line);
  }
  std::cout << to_json(estimate_subject_coverage(titles, subjects)).dump(2) << "\n";
  return 0;
}

// Config keys that were set explicitly override the manifest.
PipelineManifest apply_config(PipelineManifest m, const RunConfig& cfg, const std::optional<std::string>& out) {
  if (cfg.is_set("preset")) m.scorer = scorer_preset(m.preset = cfg.get("preset"));
  if (cfg.is_set("d_emb")) m.scorer.d_emb = static_cast<std::size_t>(as_int(cfg, "d_emb", 1));
  if (cfg.is_set("max_len")) m.scorer.max_len = static_cast<std::size_t>(as_int(cfg, "max_len", 4));
  if (cfg.is_set("lr")) m.scorer.lr = cfg.get_double("lr");
  if (cfg.is_set("batch_size")) m.scorer.batch_size = static_cast<std::size_t>(as_int(cfg, "batch_size", 1));
  if (cfg.is_set("seed")) m.seeds = {static_cast<std::uint64_t>(as_int(cfg, "seed", 0))};
  if (cfg.is_set("lambda")) m.lambda = cfg.get_double("lambda");
  if (cfg.is_set("epochs_teacher")) m.epochs.teacher = static_cast<std::size_t>(as_int(cfg, "epochs_teacher", 1));
  if (cfg.is_set("epochs_student")) m.epochs.student = static_cast<std::size_t>(as_int(cfg, "epochs_student", 1));
  if (cfg.is_set("epochs_expert")) m.epochs.expert = static_cast<std::size_t>(as_int(cfg, "epochs_expert", 1));
  if (cfg.is_set("topk_soft")) m.topk_soft = static_cast<std::size_t>(as_int(cfg, "topk_soft", 0));
  if (cfg.is_set("jobs")) m.jobs = as_int(cfg, "jobs", 1);
  if (out) m.checkpoint_dir = *out;
  m.validate();
  return m;
}

int cmd_run(const fs::path& manifest_path, const RunConfig& cfg, const std::optional<std::string>& out) {
  const auto manifest = apply_config(read_manifest(manifest_path), cfg, out);
  Pipeline pipeline(manifest, cfg.dump());
  const RunReport report = pipeline.run();
  std::cout << to_json(report).dump(2) << "\n";
  return 0;
}

int cmd_teach(const fs::path& manifest_path, const std::string& stage, std::size_t splits, const RunConfig& cfg,
              const std::optional<std::string>& out) {
  const auto manifest = apply_config(read_manifest(manifest_path), cfg, out);
  Pipeline pipeline(manifest, cfg.dump());
  for (std::uint64_t seed : manifest.seeds) {
    Checkpoint ckpt;
    if (stage == "baseline") ckpt = pipeline.train_baseline(seed);
    else if (stage == "teacher") ckpt = pipeline.train_teacher(seed);
    else if (stage == "student") ckpt = pipeline.train_student(seed);
    else if (stage == "expert") ckpt = pipeline.train_expert(seed);
    else if (stage == "expert2") ckpt = pipeline.train_extra_expert(seed);
    else if (stage == "integrate") ckpt = pipeline.integrate_sources(seed);
    else if (stage == "multi_teacher") ckpt = pipeline.multi_teacher_baseline(seed, splits);
    else if (stage == "control") ckpt = pipeline.hard_control(seed);
    else throw ConfigError("unknown stage \"" + stage + "\"");
    std::cout << Json{{"seed", seed}, {"stage", stage}, {"checkpoint_id", ckpt.id}}.dump() << "\n";
  }
  return 0;
}

Dataset load_for_checkpoint(const Checkpoint& ckpt, const fs::path& path, DatasetRole role) {
  DatasetRef ref{path.stem().string(), path, role, ckpt.params.task};
  return load_dataset(ref);
}

int cmd_softlabels(const fs::path& ckpt_path, const fs::path& dataset_path, const fs::path& out_path,
                   const RunConfig& cfg) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  if (!ckpt.vocab) throw CheckpointError(ckpt_path.string() + " carries no vocabulary");
  Dataset d = load_for_checkpoint(ckpt, dataset_path, DatasetRole::kWeakW);
  encode_dataset(d, *ckpt.vocab, ckpt.max_len);
  SoftLabelFile file = gen_soft_labels(ckpt, d, cfg.get_double("lambda"),
                                       static_cast<std::size_t>(as_int(cfg, "topk_soft", 0)), as_int(cfg, "jobs", 1));
  write_soft_labels(out_path, file);
  std::cout << Json{{"soft_file_id", file.id}, {"records", file.records.size()}, {"teacher_id", file.teacher_id}}.dump()
            << "\n";
  return 0;
}

int cmd_eval(const fs::path& ckpt_path, const fs::path& dataset_path, const std::string& split,
             const std::optional<std::string>& out, const RunConfig& cfg) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const Dataset d = load_for_checkpoint(ckpt, dataset_path, DatasetRole::kEval);
  const auto seed = static_cast<std::uint64_t>(as_int(cfg, "seed", 0));
  Json j = Json::array();
  for (const auto& r : evaluate(ckpt, d, seed, split, as_int(cfg, "jobs", 1))) j.push_back(to_json(r));
  if (out) write_file(*out, j.dump(2) + "\n");
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_synth(const fs::path& out_dir, const RunConfig& cfg, std::size_t n_train, std::size_t n_test,
              std::size_t n_weak) {
  synthetic::CorpusConfig c;
  c.seed = static_cast<std::uint64_t>(as_int(cfg, "seed", 0));
  c.n_train = n_train;
  c.n_test = n_test;
  c.n_weak = n_weak;
  const auto corpus = synthetic::generate(c);
  write_jsonl(out_dir / "train.jsonl", to_json_rows(corpus.train));
  write_jsonl(out_dir / "test.jsonl", to_json_rows(corpus.test));
  write_jsonl(out_dir / "weak.jsonl", to_json_rows(corpus.weak));
  Json manifest;
  manifest["task"] = "multiple_choice";
  manifest["datasets"] = Json::array({{{"name", "V"}, {"path", "train.jsonl"}, {"role", "target_V"}},
                                      {{"name", "W"}, {"path", "weak.jsonl"}, {"role", "weak_W"}},
                                      {{"name", "test"}, {"path", "test.jsonl"}, {"role", "eval"}}});
  manifest["checkpoint_dir"] = "run";
  write_file(out_dir / "manifest.json", manifest.dump(2) + "\n");
  std::cout << Json{{"train", corpus.train.size()}, {"test", corpus.test.size()}, {"weak", corpus.weak.size()}}.dump()
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"selfteach: weakly-supervised reading comprehension with self-teaching"};
  app.require_subcommand(1);

  CommonFlags flags;
  std::string qa_path, out_dir, dataset, manifest, stage = "teacher", checkpoint, subjects, split = "test";
  std::optional<std::string> out_opt;
  std::size_t splits = 2, n_train = 500, n_test = 500, n_weak = 5000;

  auto* forge_cmd = app.add_subcommand("forge", "build weak MRC datasets from QA records");
  forge_cmd->add_option("qa", qa_path, "QA records (JSONL)")->required();
  forge_cmd->add_option("--out", out_dir, "output directory")->required();
  flags.attach(forge_cmd);

  auto* stats_cmd = app.add_subcommand("stats", "corpus statistics of a weak multiple-choice dataset");
  stats_cmd->add_option("dataset", dataset, "weak MC dataset (JSONL)")->required();

  auto* coverage_cmd = app.add_subcommand("coverage", "subject coverage of exam titles");
  coverage_cmd->add_option("qa", qa_path, "QA records (JSONL)")->required();
  coverage_cmd->add_option("--subjects", subjects, "subject list, one per line")->required();

  auto* run_cmd = app.add_subcommand("run", "full self-teaching run for every seed");
  run_cmd->add_option("manifest", manifest, "run manifest (JSON)")->required();
  run_cmd->add_option("--out", out_opt, "run directory (overrides the manifest)");
  flags.attach(run_cmd);

  auto* teach_cmd = app.add_subcommand("teach", "run one stage");
  teach_cmd->add_option("manifest", manifest, "run manifest (JSON)")->required();
  teach_cmd->add_option("--stage", stage, "baseline|teacher|student|expert|expert2|integrate|multi_teacher|control");
  teach_cmd->add_option("--splits", splits, "multi-teacher split count");
  teach_cmd->add_option("--out", out_opt, "run directory (overrides the manifest)");
  flags.attach(teach_cmd);

  auto* soft_cmd = app.add_subcommand("softlabels", "blend a checkpoint's predictions into soft labels");
  soft_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  soft_cmd->add_option("--dataset", dataset, "dataset (JSONL)")->required();
  soft_cmd->add_option("--out", out_dir, "soft-label file (JSONL)")->required();
  flags.attach(soft_cmd);

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--dataset", dataset, "dataset (JSONL)")->required();
  eval_cmd->add_option("--split", split, "split name recorded in the report");
  eval_cmd->add_option("--out", out_opt, "report file (JSON)");
  flags.attach(eval_cmd);

  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic corpus and manifest");
  synth_cmd->add_option("--out", out_dir, "output directory")->required();
  synth_cmd->add_option("--n-train", n_train);
  synth_cmd->add_option("--n-test", n_test);
  synth_cmd->add_option("--n-weak", n_weak);
  flags.attach(synth_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ExitCode::kUsage);
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    if (name == "stats") return cmd_stats(dataset);
    if (name == "coverage") return cmd_coverage(qa_path, subjects);
    const RunConfig cfg = flags.resolve();
    if (name == "forge") return cmd_forge(qa_path, out_dir, cfg);
    if (name == "run") return cmd_run(manifest, cfg, out_opt);
    if (name == "teach") return cmd_teach(manifest, stage, splits, cfg, out_opt);
    if (name == "softlabels") return cmd_softlabels(checkpoint, dataset, out_dir, cfg);
    if (name == "eval") return cmd_eval(checkpoint, dataset, split, out_opt, cfg);
    if (name == "synth") return cmd_synth(out_dir, cfg, n_train, n_test, n_weak);
  } catch (const Error& e) {
    std::cerr << "selfteach " << name << ": " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const Json::exception& e) {
    std::cerr << "selfteach " << name << ": malformed JSON: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kData);
  } catch (const std::exception& e) {
    std::cerr << "selfteach " << name << ": " << e.what() << "\n";
    return static_cast<int>(ExitCode::kData);
  }
  return static_cast<int>(ExitCode::kUsage);
}
