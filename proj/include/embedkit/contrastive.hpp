#pragma once

#include <optional>
#include <string>
#include <vector>

#include "embedkit/checkpoint.hpp"
#include "embedkit/encoder.hpp"
#include "embedkit/numeric.hpp"

namespace embedkit {

// One training instance: instruction, query, positive document, hard
// negatives. Queries are embedded through format_query; documents as-is.
struct PairExample {
  std::string instruction;
  std::string query;
  std::string positive;
  std::vector<std::string> negatives;
};

struct TrainingBatch {
  std::vector<PairExample> items;

  std::size_t size() const { return items.size(); }
  std::size_t negatives_per_item() const {
    return items.empty() ? 0 : items.front().negatives.size();
  }
};

// Throws on invariant violations: empty batch, ragged negative counts, or a
// positive duplicated among its own negatives.
void validate_batch(const TrainingBatch& batch);

// All pairwise scores one batch contributes to the partition function,
// plus the 0/1 false-negative masks. d_j always means the j-th item's
// positive document. Mask diagonals are stored as 0 (the j != i sums never
// read them).
struct SimilarityBlock {
  Vec64 s_pos;   // N           s(q_i, d_i+)
  Mat64 s_neg;   // N x K       s(q_i, d_{i,k}-)
  Mat64 s_qq;    // N x N       s(q_i, q_j)
  Mat64 s_dd;    // N x N       s(d_i+, d_j)
  Mat64 s_qd;    // N x N       s(q_i, d_j)
  Mat64 m_neg;   // masks, same shapes as the score families
  Mat64 m_qq;
  Mat64 m_dd;
  Mat64 m_qd;

  std::size_t n() const { return s_pos.size(); }
  std::size_t k() const { return s_neg.cols; }
};

struct LossReport {
  double loss = 0.0;
  Vec64 per_item_log_terms;  // log Z_i - s_pos_i / tau, one per item
  std::size_t masked_neg = 0;
  std::size_t masked_qq = 0;
  std::size_t masked_dd = 0;
  std::size_t masked_qd = 0;
};

// 0 iff the candidate outscores the positive by more than the margin or is
// the positive text verbatim. The margin comparison is strict: a score of
// exactly s_pos + 0.1 keeps the mask at 1.
int mask_factor(double s_ij, double s_pos_i, const std::string& d_j_text,
                const std::string& d_pos_i_text);

inline constexpr double kFalseNegativeMargin = 0.1;

SimilarityBlock similarity_block(const EncoderParams& params,
                                 const TrainingBatch& batch,
                                 std::optional<std::uint32_t> target_dim =
                                     std::nullopt);

// Z_i evaluated in log space; exponentiated only here, for callers that
// want the raw partition value.
double partition(std::size_t i, const SimilarityBlock& block, double tau);
double log_partition(std::size_t i, const SimilarityBlock& block, double tau);

// Loss over a precomputed block; masks are constants of the forward pass.
LossReport loss_from_block(const SimilarityBlock& block, double tau);

struct LossOptions {
  double tau = 0.05;
  // When non-empty, the loss is the mean of the objective evaluated at each
  // prefix dimension (embeddings re-truncated and renormalized per dim).
  std::vector<std::uint32_t> mrl_dims;
};

LossReport loss(const EncoderParams& params, const TrainingBatch& batch,
                double tau);
LossReport loss(const EncoderParams& params, const TrainingBatch& batch,
                const LossOptions& options);

// Gradient w.r.t. every encoder parameter, aligned with flatten_params.
// Mask entries are recomputed in the forward pass and excluded from
// differentiation.
Vec64 grad(const EncoderParams& params, const TrainingBatch& batch,
           double tau);
Vec64 grad(const EncoderParams& params, const TrainingBatch& batch,
           const LossOptions& options);

struct StageConfig {
  std::uint64_t steps = 200;
  double learning_rate = 0.5;
  double momentum = 0.9;
  double tau = 0.05;
  std::uint32_t batch_n = 8;
  std::uint32_t batch_k = 1;
  std::uint64_t checkpoint_every = 50;
  std::vector<std::uint32_t> mrl_dims;  // empty = single full-dim loss
};

struct StagePlan {
  std::optional<StageConfig> stage1;  // weakly supervised
  StageConfig stage2;                 // supervised fine-tuning
};

struct TrainResult {
  std::vector<Checkpoint> checkpoints;  // step 0, cadence points, stage ends
  EncoderParams final_params;
};

// SGD with momentum over both stages sequentially, starting from `initial`.
// Velocity resets at the stage boundary. Fully deterministic per seed:
// batches come from a seeded shuffle, cycled as needed, with partial tails
// dropped. Stage data must hold at least batch_n records when the stage
// runs.
TrainResult train_embedding(const EncoderParams& initial,
                            const StagePlan& plan,
                            const std::vector<PairExample>& stage1_data,
                            const std::vector<PairExample>& stage2_data,
                            Seed seed);

}  // namespace embedkit
