#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "embedkit/config.hpp"
#include "embedkit/data.hpp"
#include "embedkit/errors.hpp"
#include "embedkit/evalkit.hpp"
#include "embedkit/synthesis.hpp"
#include "embedkit/toybench.hpp"

namespace {

using namespace embedkit;
namespace fs = std::filesystem;

// Exit codes: 0 success, 1 usage, 2 data/format, 3 numeric/training.
struct UsageError {
  std::string message;
};

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::dimension:
    case ErrorKind::degenerate_input:
      return 3;
    default:
      return 2;
  }
}

struct CommonOpts {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint32_t> threads;
};

void add_common(CLI::App* sub, CommonOpts& opts) {
  sub->add_option("--config", opts.config_path,
                  "Run configuration (JSON); defaults apply when omitted")
      ->check(CLI::ExistingFile);
  sub->add_option("--seed", opts.seed,
                  "Override the config seed (flags > config > defaults)");
  sub->add_option("--threads", opts.threads,
                  "Worker thread cap; 1 forces fully serial execution");
}

// flags > config file > built-in defaults
RunConfig resolve_config(const CommonOpts& opts) {
  RunConfig cfg = opts.config_path.empty() ? RunConfig{}
                                           : load_run_config(opts.config_path);
  if (opts.seed.has_value()) cfg.seed = *opts.seed;
  if (opts.threads.has_value()) cfg.threads = *opts.threads;
  if (cfg.threads < 1) {
    throw UsageError{"--threads must be >= 1"};
  }
  set_worker_threads(cfg.threads);
  return cfg;
}

std::vector<std::string> read_corpus_lines(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    raise(ErrorKind::io, "cannot open corpus file " + path.string());
  }
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

std::string step_name(const std::string& prefix, std::uint64_t step) {
  std::ostringstream name;
  name << prefix << "-" << std::setw(6) << std::setfill('0') << step
       << ".ckpt";
  return name.str();
}

void write_series(const std::vector<Checkpoint>& series, const fs::path& dir,
                  const std::string& prefix) {
  fs::create_directories(dir);
  for (const Checkpoint& ck : series) {
    save_checkpoint(ck, dir / step_name(prefix, ck.step));
  }
  save_checkpoint(series.back(), dir / "final.ckpt");
}

EncoderParams load_encoder_or_init(const std::string& model_path,
                                   const RunConfig& cfg) {
  if (model_path.empty()) {
    return encoder_from_config(cfg, Seed{cfg.seed});
  }
  return encoder_from_checkpoint(load_checkpoint(model_path));
}

int run_synth(const CommonOpts& common, const std::string& corpus_path,
              const std::string& personas_path, const std::string& out_path,
              const std::string& remote_endpoint,
              const std::string& remote_path, int remote_timeout_ms) {
  RunConfig cfg = resolve_config(common);
  const std::vector<std::string> corpus = read_corpus_lines(corpus_path);
  const std::vector<Persona> personas = read_personas(personas_path);
  EncoderParams params = encoder_from_config(cfg, Seed{cfg.seed});
  std::unique_ptr<GeneratorClient> gen;
  if (remote_endpoint.empty()) {
    gen = std::make_unique<MockGenerator>(Seed{cfg.seed});
  } else {
    gen = std::make_unique<RemoteGenerator>(RemoteGeneratorConfig{
        remote_endpoint, remote_path, remote_timeout_ms});
  }
  std::vector<PairRecord> records =
      synthesize_corpus(corpus, personas, params, *gen,
                        cfg.synthesis.language, cfg.synthesis.personas_per_doc);
  write_pairs(records, out_path);
  std::cerr << "synth: wrote " << records.size() << " records to "
            << out_path << "\n";
  return 0;
}

int run_filter(const CommonOpts& common, const std::string& in_path,
               const std::string& out_path, const std::string& model_path,
               std::optional<double> threshold) {
  RunConfig cfg = resolve_config(common);
  if (threshold.has_value()) cfg.filter.threshold = *threshold;
  std::vector<PairRecord> pairs = read_pairs(in_path);
  EncoderParams params = load_encoder_or_init(model_path, cfg);
  FilterOptions options;
  options.threshold = cfg.filter.threshold;
  options.presample_fraction = cfg.filter.presample_fraction;
  options.seed = Seed{cfg.seed};
  FilterResult result = filter_pairs(pairs, params, options);
  write_pairs(result.kept, out_path);
  std::cout << "kept=" << result.kept.size()
            << " dropped=" << result.dropped_count
            << " sampled=" << result.sampled_count << "\n";
  return 0;
}

int run_mine(const CommonOpts& common, const std::string& in_path,
             const std::string& corpus_path, std::uint32_t k,
             const std::string& out_path, const std::string& model_path) {
  RunConfig cfg = resolve_config(common);
  std::vector<PairRecord> pairs = read_pairs(in_path);
  std::vector<std::string> corpus = read_corpus_lines(corpus_path);
  EncoderParams params = load_encoder_or_init(model_path, cfg);
  std::size_t shortfalls = 0;
  std::vector<PairRecord> mined;
  mined.reserve(pairs.size());
  for (const PairRecord& rec : pairs) {
    MineResult result = mine_hard_negatives(rec, corpus, params, k);
    if (result.shortfall) ++shortfalls;
    mined.push_back(std::move(result.record));
  }
  write_pairs(mined, out_path);
  std::cout << "records=" << mined.size() << " k=" << k
            << " shortfall=" << shortfalls << "\n";
  return 0;
}

int run_train_embed(const CommonOpts& common, const std::string& stage1_path,
                    const std::string& stage2_path,
                    const std::string& out_dir, bool skip_stage1) {
  RunConfig cfg = resolve_config(common);
  if (!skip_stage1 && stage1_path.empty()) {
    throw UsageError{"train-embed needs --stage1 (or pass --skip-stage1)"};
  }
  StagePlan plan;
  std::vector<PairExample> stage1_data;
  if (!skip_stage1) {
    plan.stage1 = cfg.stage1;
    stage1_data = to_examples(read_pairs(stage1_path));
  }
  plan.stage2 = cfg.stage2;
  std::vector<PairExample> stage2_data = to_examples(read_pairs(stage2_path));
  EncoderParams initial = encoder_from_config(cfg, Seed{cfg.seed});
  TrainResult result = train_embedding(initial, plan, stage1_data,
                                       stage2_data, Seed{cfg.seed});
  write_series(result.checkpoints, out_dir, "embed");
  std::cerr << "train-embed: " << result.checkpoints.size()
            << " checkpoints in " << out_dir << "\n";
  return 0;
}

// SFT instances from a pair file: the positive document labeled yes, every
// negative labeled no.
std::vector<RerankInstance> instances_from_pairs(
    const std::vector<PairRecord>& pairs) {
  std::vector<RerankInstance> out;
  for (const PairRecord& rec : pairs) {
    out.push_back(make_instance(rec.instruction, rec.query, rec.positive,
                                RerankLabel::yes));
    for (const std::string& neg : rec.negatives) {
      out.push_back(
          make_instance(rec.instruction, rec.query, neg, RerankLabel::no));
    }
  }
  return out;
}

int run_train_rerank(const CommonOpts& common, const std::string& data_path,
                     const std::string& out_dir,
                     const std::string& encoder_path) {
  RunConfig cfg = resolve_config(common);
  std::vector<RerankInstance> data =
      instances_from_pairs(read_pairs(data_path));
  EncoderParams encoder = load_encoder_or_init(encoder_path, cfg);
  RerankParams initial = init_rerank_params(Seed{cfg.seed}, encoder);
  RerankTrainResult result =
      train_reranker(initial, cfg.rerank, data, Seed{cfg.seed});
  write_series(result.checkpoints, out_dir, "rerank");
  std::cerr << "train-rerank: " << result.checkpoints.size()
            << " checkpoints in " << out_dir << "\n";
  return 0;
}

int run_merge(const CommonOpts& common,
              const std::vector<std::string>& input_paths,
              const std::string& out_path, std::vector<double> t_schedule,
              bool per_tensor_flag, bool whole_vector_flag) {
  RunConfig cfg = resolve_config(common);
  if (input_paths.size() < 2) {
    throw UsageError{"merge needs at least 2 --inputs"};
  }
  if (t_schedule.empty()) t_schedule = cfg.merge.t_schedule;
  if (!t_schedule.empty() && t_schedule.size() != input_paths.size() - 1) {
    throw UsageError{"merge needs inputs-1 --t values"};
  }
  MergePlan plan;
  for (const std::string& path : input_paths) {
    plan.inputs.push_back(load_checkpoint(path));
  }
  plan.t_schedule = t_schedule.empty()
                        ? default_t_schedule(plan.inputs.size())
                        : std::move(t_schedule);
  plan.per_tensor = per_tensor_flag
                        ? true
                        : (whole_vector_flag ? false : cfg.merge.per_tensor);
  Checkpoint merged = merge_checkpoints(plan);
  save_checkpoint(merged, out_path);
  std::cerr << "merge: wrote " << out_path << " (step " << merged.step
            << ")\n";
  return 0;
}

int run_eval(const CommonOpts& common, const std::string& model_path,
             const std::string& task_dir, const std::string& out_path,
             const std::string& rerank_path,
             std::optional<std::uint32_t> topk) {
  RunConfig cfg = resolve_config(common);
  if (topk.has_value()) cfg.eval.k_retrieve = *topk;
  EvalTask task = load_task(task_dir);
  EncoderParams params = encoder_from_checkpoint(load_checkpoint(model_path));
  const std::string digest = config_digest(cfg);
  EvalReport report;
  if (rerank_path.empty()) {
    report = evaluate_retrieval(params, task, cfg.eval.k_metric, digest);
  } else {
    RerankParams reranker =
        rerank_from_checkpoint(load_checkpoint(rerank_path));
    report = evaluate_rerank_pipeline(params, reranker, task,
                                      cfg.eval.k_retrieve, cfg.eval.k_metric,
                                      digest);
  }
  write_report(report, out_path);
  std::cerr << "eval: mean ndcg@" << report.k_metric << " "
            << report.mean_ndcg << ", mrr " << report.mean_mrr
            << ", recall@" << report.k_metric << " " << report.mean_recall
            << " (" << report.wall_time_seconds << "s) -> " << out_path
            << "\n";
  return 0;
}

int run_ablate(const CommonOpts& common, const std::string& stage1_path,
               const std::string& stage2_path, const std::string& task_dir,
               const std::string& out_dir) {
  RunConfig cfg = resolve_config(common);
  AblationInputs inputs;
  inputs.initial = encoder_from_config(cfg, Seed{cfg.seed});
  inputs.stage1_config = cfg.stage1;
  inputs.stage2_config = cfg.stage2;
  inputs.stage1_data = to_examples(read_pairs(stage1_path));
  inputs.stage2_data = to_examples(read_pairs(stage2_path));
  inputs.task = load_task(task_dir);
  inputs.k_metric = cfg.eval.k_metric;
  inputs.merge_last_k = cfg.merge.last_k;
  inputs.merge_per_tensor = cfg.merge.per_tensor;
  std::map<std::string, AblationRun> runs = run_ablation(
      default_ablation_settings(), inputs, Seed{cfg.seed});
  fs::create_directories(out_dir);
  for (const auto& [label, run] : runs) {
    const fs::path path = fs::path(out_dir) / (label + ".json");
    write_report(run.report, path);
    std::cerr << "ablate: " << label << " mean ndcg@"
              << run.report.k_metric << " " << run.report.mean_ndcg << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "embedkit: train, filter, merge, and evaluate toy text embedding and "
      "reranking models"};
  app.require_subcommand(1);

  CommonOpts synth_common;
  std::string synth_corpus, synth_personas, synth_out, synth_endpoint;
  std::string synth_remote_path = "/generate";
  int synth_timeout = 10000;
  CLI::App* synth =
      app.add_subcommand("synth", "Two-stage synthetic pair generation");
  add_common(synth, synth_common);
  synth->add_option("--corpus", synth_corpus,
                    "Document corpus, one document per line")
      ->required()
      ->check(CLI::ExistingFile);
  synth->add_option("--personas", synth_personas, "Persona library (JSONL)")
      ->required()
      ->check(CLI::ExistingFile);
  synth->add_option("--out", synth_out, "Output pair file (JSONL)")
      ->required();
  synth->add_option("--remote-endpoint", synth_endpoint,
                    "Generator base URL; the offline mock runs when omitted");
  synth->add_option("--remote-path", synth_remote_path,
                    "Generator HTTP path");
  synth->add_option("--remote-timeout-ms", synth_timeout,
                    "Generator timeout in milliseconds");

  CommonOpts filter_common;
  std::string filter_in, filter_out, filter_model;
  std::optional<double> filter_threshold;
  CLI::App* filter = app.add_subcommand(
      "filter", "Keep pairs whose query/positive cosine clears a threshold");
  add_common(filter, filter_common);
  filter->add_option("--in", filter_in, "Input pair file (JSONL)")
      ->required()
      ->check(CLI::ExistingFile);
  filter->add_option("--out", filter_out, "Output pair file (JSONL)")
      ->required();
  filter->add_option("--model", filter_model,
                     "Embedding checkpoint; a seed-initialized encoder is "
                     "used when omitted")
      ->check(CLI::ExistingFile);
  filter->add_option("--threshold", filter_threshold,
                     "Keep strictly above this cosine");

  CommonOpts mine_common;
  std::string mine_in, mine_corpus, mine_out, mine_model;
  std::uint32_t mine_k = 1;
  CLI::App* mine =
      app.add_subcommand("mine", "Append mined hard negatives to pairs");
  add_common(mine, mine_common);
  mine->add_option("--in", mine_in, "Input pair file (JSONL)")
      ->required()
      ->check(CLI::ExistingFile);
  mine->add_option("--corpus", mine_corpus,
                   "Candidate pool, one document per line")
      ->required()
      ->check(CLI::ExistingFile);
  mine->add_option("--k", mine_k, "Negatives to mine per record")
      ->required();
  mine->add_option("--out", mine_out, "Output pair file (JSONL)")
      ->required();
  mine->add_option("--model", mine_model,
                   "Embedding checkpoint; a seed-initialized encoder is "
                   "used when omitted")
      ->check(CLI::ExistingFile);

  CommonOpts te_common;
  std::string te_stage1, te_stage2, te_out_dir;
  bool te_skip_stage1 = false;
  CLI::App* train_embed = app.add_subcommand(
      "train-embed", "Two-stage contrastive training of the encoder");
  add_common(train_embed, te_common);
  train_embed
      ->add_option("--stage1", te_stage1,
                   "Weakly supervised pair file (JSONL)")
      ->check(CLI::ExistingFile);
  train_embed
      ->add_option("--stage2", te_stage2, "Supervised pair file (JSONL)")
      ->required()
      ->check(CLI::ExistingFile);
  train_embed->add_option("--out-dir", te_out_dir, "Checkpoint directory")
      ->required();
  train_embed->add_flag("--skip-stage1", te_skip_stage1,
                        "Skip the weakly supervised stage");

  CommonOpts tr_common;
  std::string tr_data, tr_out_dir, tr_encoder;
  CLI::App* train_rerank = app.add_subcommand(
      "train-rerank",
      "Supervised training of the yes/no reranker head (single stage)");
  add_common(train_rerank, tr_common);
  train_rerank->add_option("--data", tr_data, "Labeled pair file (JSONL)")
      ->required()
      ->check(CLI::ExistingFile);
  train_rerank->add_option("--out-dir", tr_out_dir, "Checkpoint directory")
      ->required();
  train_rerank
      ->add_option("--encoder", tr_encoder,
                   "Embedding checkpoint for the frozen featurizer; a "
                   "seed-initialized encoder is used when omitted")
      ->check(CLI::ExistingFile);

  CommonOpts merge_common;
  std::vector<std::string> merge_inputs;
  std::string merge_out;
  std::vector<double> merge_t;
  bool merge_per_tensor = false;
  bool merge_whole_vector = false;
  CLI::App* merge =
      app.add_subcommand("merge", "Chained slerp merge of checkpoints");
  add_common(merge, merge_common);
  merge->add_option("--inputs", merge_inputs, "Checkpoint files, in order")
      ->required()
      ->expected(-1);
  merge->add_option("--out", merge_out, "Merged checkpoint path")
      ->required();
  merge->add_option("--t", merge_t,
                    "Interpolation schedule (inputs-1 values in [0,1]); "
                    "defaults to the running average 1/2, 1/3, ...");
  merge->add_flag("--per-tensor", merge_per_tensor,
                  "Interpolate each tensor segment separately");
  merge->add_flag("--whole-vector", merge_whole_vector,
                  "Interpolate the full parameter vector at once");

  CommonOpts eval_common;
  std::string eval_model, eval_task_dir, eval_out, eval_rerank;
  std::optional<std::uint32_t> eval_topk;
  CLI::App* eval_cmd = app.add_subcommand(
      "eval", "Retrieval (and optional rerank) evaluation on a task");
  add_common(eval_cmd, eval_common);
  eval_cmd->add_option("--model", eval_model, "Embedding checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  eval_cmd
      ->add_option("--task-dir", eval_task_dir,
                   "Directory with queries.jsonl, corpus.jsonl, qrels.jsonl")
      ->required()
      ->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--out", eval_out, "Report path (JSON)")->required();
  eval_cmd->add_option("--rerank", eval_rerank, "Reranker checkpoint")
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--topk", eval_topk,
                       "Candidates retrieved before reranking");

  CommonOpts ablate_common;
  std::string ab_stage1, ab_stage2, ab_task_dir, ab_out_dir;
  CLI::App* ablate = app.add_subcommand(
      "ablate", "Train and evaluate the four pipeline variants");
  add_common(ablate, ablate_common);
  ablate
      ->add_option("--stage1", ab_stage1,
                   "Weakly supervised pair file (JSONL)")
      ->required()
      ->check(CLI::ExistingFile);
  ablate->add_option("--stage2", ab_stage2, "Supervised pair file (JSONL)")
      ->required()
      ->check(CLI::ExistingFile);
  ablate
      ->add_option("--task-dir", ab_task_dir,
                   "Directory with queries.jsonl, corpus.jsonl, qrels.jsonl")
      ->required()
      ->check(CLI::ExistingDirectory);
  ablate->add_option("--out-dir", ab_out_dir, "Report directory")
      ->required();

  try {
    app.parse(argc, argv);
    if (synth->parsed()) {
      return run_synth(synth_common, synth_corpus, synth_personas, synth_out,
                       synth_endpoint, synth_remote_path, synth_timeout);
    }
    if (filter->parsed()) {
      return run_filter(filter_common, filter_in, filter_out, filter_model,
                        filter_threshold);
    }
    if (mine->parsed()) {
      return run_mine(mine_common, mine_in, mine_corpus, mine_k, mine_out,
                      mine_model);
    }
    if (train_embed->parsed()) {
      return run_train_embed(te_common, te_stage1, te_stage2, te_out_dir,
                             te_skip_stage1);
    }
    if (train_rerank->parsed()) {
      return run_train_rerank(tr_common, tr_data, tr_out_dir, tr_encoder);
    }
    if (merge->parsed()) {
      return run_merge(merge_common, merge_inputs, merge_out, merge_t,
                       merge_per_tensor, merge_whole_vector);
    }
    if (eval_cmd->parsed()) {
      return run_eval(eval_common, eval_model, eval_task_dir, eval_out,
                      eval_rerank, eval_topk);
    }
    if (ablate->parsed()) {
      return run_ablate(ablate_common, ab_stage1, ab_stage2, ab_task_dir,
                        ab_out_dir);
    }
    std::cerr << "error: no subcommand\n";
    return 1;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.message << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
