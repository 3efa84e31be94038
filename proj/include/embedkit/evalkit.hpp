#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "embedkit/contrastive.hpp"
#include "embedkit/data.hpp"
#include "embedkit/encoder.hpp"
#include "embedkit/reranker.hpp"

namespace embedkit {

struct EvalQuery {
  std::string qid;
  std::string instruction;
  std::string text;
};

struct EvalDoc {
  std::string doc_id;
  std::string text;
};

// Retrieval task: queries, corpus, and graded relevance judgments.
struct EvalTask {
  std::vector<EvalQuery> queries;
  std::vector<EvalDoc> corpus;
  // qid -> doc_id -> grade (>= 0; > 0 counts as relevant)
  std::map<std::string, std::map<std::string, std::int64_t>> qrels;
};

// Enforces unique ids, nonempty texts, qrels referencing existing ids, and
// at least one positive judgment per query.
void validate_task(const EvalTask& task);

// Directory layout: queries.jsonl, corpus.jsonl, qrels.jsonl.
EvalTask load_task(const std::filesystem::path& dir);
void save_task(const EvalTask& task, const std::filesystem::path& dir);

using Ranking = std::vector<std::string>;  // doc_ids, best first

// Exhaustive cosine search per query; ties break by ascending doc_id.
std::map<std::string, Ranking> retrieve(const EncoderParams& params,
                                        const EvalTask& task,
                                        std::uint32_t k);

// DCG with gain 2^grade - 1 and discount log2(rank + 1); 0 when the query
// has no relevant documents at all.
double ndcg_at_k(const Ranking& ranking,
                 const std::map<std::string, std::int64_t>& rels,
                 std::uint32_t k);
// Reciprocal rank of the first relevant document in the given list.
double mrr(const Ranking& ranking,
           const std::map<std::string, std::int64_t>& rels);
double recall_at_k(const Ranking& ranking,
                   const std::map<std::string, std::int64_t>& rels,
                   std::uint32_t k);

struct QueryMetrics {
  double ndcg = 0.0;
  double mrr = 0.0;
  double recall = 0.0;
};

struct EvalReport {
  std::map<std::string, QueryMetrics> per_query;
  double mean_ndcg = 0.0;
  double mean_mrr = 0.0;
  double mean_recall = 0.0;
  std::uint32_t k_metric = 10;
  std::string config_digest;
  // Logged for humans only; deliberately left out of the serialized form so
  // identical runs produce identical report bytes.
  double wall_time_seconds = 0.0;
};

EvalReport evaluate_retrieval(const EncoderParams& params,
                              const EvalTask& task, std::uint32_t k = 10,
                              const std::string& config_digest = "");

// Pluggable candidate scorer, for oracle/identity baselines.
using RerankScorer = std::function<double(
    const EvalQuery& query, const std::string& doc_id,
    const std::string& doc_text)>;

// Retrieve top-k_retrieve with the embedding model, reorder with the
// reranker (score descending, doc_id ascending), then score at k_metric.
EvalReport evaluate_rerank_pipeline(const EncoderParams& embed_params,
                                    const RerankParams& rerank_params,
                                    const EvalTask& task,
                                    std::uint32_t k_retrieve = 100,
                                    std::uint32_t k_metric = 10,
                                    const std::string& config_digest = "");
EvalReport evaluate_rerank_pipeline(const EncoderParams& embed_params,
                                    const RerankScorer& scorer,
                                    const EvalTask& task,
                                    std::uint32_t k_retrieve = 100,
                                    std::uint32_t k_metric = 10,
                                    const std::string& config_digest = "");

// Sorted-key JSON document; wall_time_seconds is excluded.
std::string report_to_json(const EvalReport& report);
void write_report(const EvalReport& report,
                  const std::filesystem::path& path);
EvalReport read_report(const std::filesystem::path& path);

enum class AblationLabel : std::uint8_t {
  only_synthetic,
  no_synthetic,
  no_merge,
  full,
};

std::string to_string(AblationLabel label);
AblationLabel ablation_label_from_string(const std::string& s);

// Stage toggles for one training variant; label <-> toggles is bijective
// (see ablation_setting).
struct AblationSetting {
  AblationLabel label = AblationLabel::full;
  bool use_stage1 = true;
  bool use_stage2 = true;
  bool use_merge = true;
};

// Canonical toggles for a label.
AblationSetting ablation_setting(AblationLabel label);
// full, no_merge, no_synthetic, only_synthetic.
std::vector<AblationSetting> default_ablation_settings();

struct AblationInputs {
  EncoderParams initial;
  StageConfig stage1_config;
  StageConfig stage2_config;
  std::vector<PairExample> stage1_data;  // weakly supervised (synthetic)
  std::vector<PairExample> stage2_data;  // supervised
  EvalTask task;
  std::uint32_t k_metric = 10;
  // Merge pool: the last merge_last_k checkpoints with step > 0 (the
  // initial state never participates); merging is skipped when fewer than
  // two qualify.
  std::uint32_t merge_last_k = 3;
  bool merge_per_tensor = false;
};

struct AblationRun {
  EvalReport report;
  Checkpoint model;      // the checkpoint that was evaluated
  Checkpoint pre_merge;  // final training state before any merging
};

// Trains one variant per setting from the same initial params, data, and
// seed, evaluates each on the same task, keyed by label.
std::map<std::string, AblationRun> run_ablation(
    const std::vector<AblationSetting>& settings,
    const AblationInputs& inputs, Seed seed);

}  // namespace embedkit
