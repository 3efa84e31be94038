#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "embedkit/checkpoint.hpp"
#include "embedkit/encoder.hpp"

namespace embedkit {

enum class RerankLabel : std::uint8_t { no = 0, yes = 1 };

struct RerankInstance {
  std::string instruction;
  std::string query;
  std::string document;
  std::string rendered_prompt;
  std::optional<RerankLabel> label;
};

// Renders the chat-template prompt; deterministic from the three texts.
std::string render_prompt(const std::string& instruction,
                          const std::string& query,
                          const std::string& document);

RerankInstance make_instance(const std::string& instruction,
                             const std::string& query,
                             const std::string& document,
                             std::optional<RerankLabel> label = std::nullopt);

// Pointwise scorer: hashed n-grams of the rendered prompt concatenated with
// the elementwise product of the query and document embeddings, mapped to
// two logits by `head`. The encoder is a frozen featurizer here; only the
// head trains. Logit order is fixed as (no, yes) everywhere, including
// serialized checkpoints.
struct RerankParams {
  EncoderParams encoder;
  Mat64 head;  // 2 x joint_dim; row 0 = "no", row 1 = "yes"

  std::uint32_t joint_dim() const {
    return encoder.feature_dim + encoder.embed_dim;
  }
};

struct Logits {
  double no = 0.0;
  double yes = 0.0;
};

RerankParams init_rerank_params(Seed seed, const EncoderParams& encoder);

Logits rerank_logits(const RerankParams& params,
                     const RerankInstance& instance);

// e^yes / (e^yes + e^no) via a stable two-way softmax.
double score_from_logits(double logit_yes, double logit_no);

double rerank_loss(const RerankParams& params, const RerankInstance& instance);

// Gradient w.r.t. the head, row-major (no row first), length 2 * joint_dim.
Vec64 rerank_grad(const RerankParams& params, const RerankInstance& instance);

struct RerankStageConfig {
  std::uint64_t steps = 200;
  double learning_rate = 0.5;
  double momentum = 0.9;
  std::uint32_t batch_n = 16;
  std::uint64_t checkpoint_every = 50;
};

struct RerankTrainResult {
  std::vector<Checkpoint> checkpoints;
  RerankParams final_params;
};

// Single supervised stage (no weakly supervised phase). Deterministic per
// seed; every instance must carry a label.
RerankTrainResult train_reranker(const RerankParams& initial,
                                 const RerankStageConfig& config,
                                 const std::vector<RerankInstance>& data,
                                 Seed seed);

struct ScoredCandidate {
  std::string doc_id;
  double score = 0.0;  // in [0, 1]
};

// Scores every candidate and sorts by score descending, ties broken by
// ascending doc_id.
std::vector<ScoredCandidate> rerank(
    const RerankParams& params, const std::string& instruction,
    const std::string& query,
    const std::vector<std::pair<std::string, std::string>>& candidates);

// One JSON-escaped prompt per line, so external models can score the same
// instances out-of-band.
void export_prompts(const std::vector<RerankInstance>& instances,
                    const std::filesystem::path& path);

Checkpoint rerank_to_checkpoint(const RerankParams& params,
                                std::uint64_t step);
RerankParams rerank_from_checkpoint(const Checkpoint& ck);

}  // namespace embedkit
