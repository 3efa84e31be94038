#include "embedkit/reranker.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <span>

#include "embedkit/errors.hpp"
#include "json.hpp"

namespace embedkit {

namespace {

constexpr const char* kSystemBlock =
    "<|im_start|>system\n"
    "Judge whether the Document meets the requirements based on the Query "
    "and the Instruct provided. Note that the answer can only be \"yes\" "
    "or \"no\".<|im_end|>\n";

void check_head_shape(const RerankParams& params) {
  if (params.head.rows != 2 || params.head.cols != params.joint_dim()) {
    raise(ErrorKind::dimension, "reranker: head must be 2 x (F + D)");
  }
}

// Joint feature vector: hashed n-grams of the rendered prompt in the first
// F slots, elementwise product of the two unit embeddings in the last D.
struct JointFeatures {
  FeatureVector prompt_fv;
  Vec64 qd;
};

JointFeatures joint_features(const RerankParams& params,
                             const RerankInstance& instance,
                             const Vec64* query_unit) {
  const EncoderParams& enc = params.encoder;
  JointFeatures jf;
  jf.prompt_fv = featurize(instance.rendered_prompt, enc.feature_dim,
                           enc.ngram_lo, enc.ngram_hi);
  // Unit-scale the lexical block so both feature families feed the head at
  // comparable magnitudes regardless of prompt length.
  double norm_sq = 0.0;
  for (double w : jf.prompt_fv.weights) norm_sq += w * w;
  if (norm_sq > 0.0) {
    const double inv = 1.0 / std::sqrt(norm_sq);
    for (double& w : jf.prompt_fv.weights) w *= inv;
  }
  Vec64 q = query_unit != nullptr
                ? *query_unit
                : embed(enc, format_query(instance.instruction,
                                          instance.query));
  Vec64 d = embed(enc, instance.document);
  jf.qd.resize(enc.embed_dim);
  for (std::size_t j = 0; j < jf.qd.size(); ++j) jf.qd[j] = q[j] * d[j];
  return jf;
}

Logits logits_from_features(const RerankParams& params,
                            const JointFeatures& jf) {
  const std::size_t offset = params.encoder.feature_dim;
  double acc[2] = {0.0, 0.0};
  for (int c = 0; c < 2; ++c) {
    auto row = params.head.row(c);
    double s = 0.0;
    for (std::size_t t = 0; t < jf.prompt_fv.nnz(); ++t) {
      s += row[jf.prompt_fv.indices[t]] * jf.prompt_fv.weights[t];
    }
    for (std::size_t j = 0; j < jf.qd.size(); ++j) {
      s += row[offset + j] * jf.qd[j];
    }
    acc[c] = s;
  }
  return Logits{acc[0], acc[1]};
}

}  // namespace

std::string render_prompt(const std::string& instruction,
                          const std::string& query,
                          const std::string& document) {
  if (query.empty()) {
    raise(ErrorKind::invalid_input, "render_prompt: empty query");
  }
  if (document.empty()) {
    raise(ErrorKind::invalid_input, "render_prompt: empty document");
  }
  std::string out;
  out.reserve(256 + instruction.size() + query.size() + document.size());
  out += kSystemBlock;
  out += "<|im_start|>user\n";
  out += "<Instruct>: ";
  out += instruction;
  out += "\n<Query>: ";
  out += query;
  out += "\n<Document>: ";
  out += document;
  out += "<|im_end|>\n";
  out += "<|im_start|>assistant\n";
  out += "<think>\n\n</think>\n\n";
  return out;
}

RerankInstance make_instance(const std::string& instruction,
                             const std::string& query,
                             const std::string& document,
                             std::optional<RerankLabel> label) {
  RerankInstance inst;
  inst.instruction = instruction;
  inst.query = query;
  inst.document = document;
  inst.rendered_prompt = render_prompt(instruction, query, document);
  inst.label = label;
  return inst;
}

RerankParams init_rerank_params(Seed seed, const EncoderParams& encoder) {
  RerankParams params;
  params.encoder = encoder;
  const std::uint32_t joint = encoder.feature_dim + encoder.embed_dim;
  params.head = Mat64(2, joint);
  Rng rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(joint));
  for (double& x : params.head.values) {
    x = bound * (2.0 * rng.next_double() - 1.0);
  }
  return params;
}

Logits rerank_logits(const RerankParams& params,
                     const RerankInstance& instance) {
  check_head_shape(params);
  return logits_from_features(params,
                              joint_features(params, instance, nullptr));
}

double score_from_logits(double logit_yes, double logit_no) {
  if (!std::isfinite(logit_yes) || !std::isfinite(logit_no)) {
    raise(ErrorKind::invalid_input, "score_from_logits: non-finite logit");
  }
  const double diff = logit_no - logit_yes;  // score = 1 / (1 + e^diff)
  if (diff >= 0.0) {
    const double e = std::exp(-diff);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(diff));
}

namespace {

// log(1 + e^x) without overflow on either side.
double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

}  // namespace

double rerank_loss(const RerankParams& params,
                   const RerankInstance& instance) {
  if (!instance.label.has_value()) {
    raise(ErrorKind::invalid_input, "rerank_loss: instance has no label");
  }
  const Logits lg = rerank_logits(params, instance);
  const double margin = *instance.label == RerankLabel::yes
                            ? lg.no - lg.yes
                            : lg.yes - lg.no;
  return softplus(margin);
}

Vec64 rerank_grad(const RerankParams& params,
                  const RerankInstance& instance) {
  if (!instance.label.has_value()) {
    raise(ErrorKind::invalid_input, "rerank_grad: instance has no label");
  }
  check_head_shape(params);
  const JointFeatures jf = joint_features(params, instance, nullptr);
  const Logits lg = logits_from_features(params, jf);
  const double p_yes = score_from_logits(lg.yes, lg.no);
  const double target_yes = *instance.label == RerankLabel::yes ? 1.0 : 0.0;
  // d loss / d logit_c = softmax_c − one_hot(label)_c
  const double coef[2] = {(1.0 - p_yes) - (1.0 - target_yes),
                          p_yes - target_yes};
  const std::size_t joint = params.joint_dim();
  const std::size_t offset = params.encoder.feature_dim;
  Vec64 g(2 * joint, 0.0);
  for (int c = 0; c < 2; ++c) {
    const std::size_t base = static_cast<std::size_t>(c) * joint;
    for (std::size_t t = 0; t < jf.prompt_fv.nnz(); ++t) {
      g[base + jf.prompt_fv.indices[t]] += coef[c] * jf.prompt_fv.weights[t];
    }
    for (std::size_t j = 0; j < jf.qd.size(); ++j) {
      g[base + offset + j] += coef[c] * jf.qd[j];
    }
  }
  return g;
}

namespace {

class InstanceCursor {
 public:
  InstanceCursor(const std::vector<RerankInstance>& data, Rng rng)
      : data_(data), rng_(rng), order_(data.size()) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    pos_ = order_.size();  // force a shuffle on first use
  }

  std::vector<const RerankInstance*> next(std::uint32_t n) {
    if (pos_ + n > order_.size()) {  // drop the partial tail
      rng_.shuffle(order_);
      pos_ = 0;
    }
    std::vector<const RerankInstance*> batch;
    batch.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
      batch.push_back(&data_[order_[pos_++]]);
    }
    return batch;
  }

 private:
  const std::vector<RerankInstance>& data_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

}  // namespace

RerankTrainResult train_reranker(const RerankParams& initial,
                                 const RerankStageConfig& config,
                                 const std::vector<RerankInstance>& data,
                                 Seed seed) {
  check_head_shape(initial);
  if (data.empty()) {
    raise(ErrorKind::invalid_input, "train_reranker: empty data stream");
  }
  for (const RerankInstance& inst : data) {
    if (!inst.label.has_value()) {
      raise(ErrorKind::invalid_input,
            "train_reranker: unlabeled instance in training data");
    }
  }
  RerankTrainResult result;
  result.final_params = initial;
  result.checkpoints.push_back(rerank_to_checkpoint(initial, 0));
  if (config.steps == 0) return result;
  if (data.size() < config.batch_n) {
    raise(ErrorKind::invalid_input,
          "train_reranker: data smaller than batch_n");
  }
  InstanceCursor cursor(data, Rng(seed));
  RerankParams& params = result.final_params;
  Vec64 velocity(params.head.values.size(), 0.0);
  for (std::uint64_t s = 0; s < config.steps; ++s) {
    auto batch = cursor.next(config.batch_n);
    Vec64 g(velocity.size(), 0.0);
    for (const RerankInstance* inst : batch) {
      Vec64 gi = rerank_grad(params, *inst);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gi[i];
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (std::size_t i = 0; i < velocity.size(); ++i) {
      velocity[i] =
          config.momentum * velocity[i] - config.learning_rate * inv * g[i];
      params.head.values[i] += velocity[i];
    }
    const std::uint64_t step = s + 1;
    if (config.checkpoint_every > 0 && step % config.checkpoint_every == 0 &&
        step < config.steps) {
      result.checkpoints.push_back(rerank_to_checkpoint(params, step));
    }
  }
  result.checkpoints.push_back(rerank_to_checkpoint(params, config.steps));
  return result;
}

std::vector<ScoredCandidate> rerank(
    const RerankParams& params, const std::string& instruction,
    const std::string& query,
    const std::vector<std::pair<std::string, std::string>>& candidates) {
  check_head_shape(params);
  if (candidates.empty()) {
    raise(ErrorKind::invalid_input, "rerank: empty candidate list");
  }
  const Vec64 q = embed(params.encoder, format_query(instruction, query));
  std::vector<ScoredCandidate> out;
  out.reserve(candidates.size());
  for (const auto& [doc_id, text] : candidates) {
    RerankInstance inst = make_instance(instruction, query, text);
    Logits lg = logits_from_features(params, joint_features(params, inst, &q));
    out.push_back({doc_id, score_from_logits(lg.yes, lg.no)});
  }
  std::sort(out.begin(), out.end(),
            [](const ScoredCandidate& a, const ScoredCandidate& b) {
              if (a.score != b.score) return a.score > b.score;
              return a.doc_id < b.doc_id;
            });
  return out;
}

void export_prompts(const std::vector<RerankInstance>& instances,
                    const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    raise(ErrorKind::io, "export_prompts: cannot open " + path.string());
  }
  for (const RerankInstance& inst : instances) {
    out << nlohmann::json(inst.rendered_prompt).dump() << "\n";
  }
  if (!out) {
    raise(ErrorKind::io, "export_prompts: write failed for " + path.string());
  }
}

Checkpoint rerank_to_checkpoint(const RerankParams& params,
                                std::uint64_t step) {
  Checkpoint ck;
  ck.kind = ModelKind::reranker;
  ck.feature_dim = params.encoder.feature_dim;
  ck.embed_dim = params.encoder.embed_dim;
  ck.arch = params.encoder.arch;
  ck.ngram_lo = params.encoder.ngram_lo;
  ck.ngram_hi = params.encoder.ngram_hi;
  ck.joint_dim = params.joint_dim();
  ck.step = step;
  ck.params_flat = flatten_params(params.encoder);
  ck.params_flat.insert(ck.params_flat.end(), params.head.values.begin(),
                        params.head.values.end());
  return ck;
}

RerankParams rerank_from_checkpoint(const Checkpoint& ck) {
  if (ck.kind != ModelKind::reranker) {
    raise(ErrorKind::incompatible_checkpoint,
          "rerank_from_checkpoint: checkpoint is not a reranker model");
  }
  if (ck.joint_dim != ck.feature_dim + ck.embed_dim) {
    raise(ErrorKind::incompatible_checkpoint,
          "rerank_from_checkpoint: joint_dim does not match F + D");
  }
  RerankParams params;
  params.encoder.feature_dim = ck.feature_dim;
  params.encoder.embed_dim = ck.embed_dim;
  params.encoder.arch = ck.arch;
  params.encoder.ngram_lo = ck.ngram_lo;
  params.encoder.ngram_hi = ck.ngram_hi;
  params.encoder.projection = Mat64(ck.feature_dim, ck.embed_dim);
  if (ck.arch == ArchTag::mlp1) {
    params.encoder.hidden_w = Mat64(ck.embed_dim, ck.embed_dim);
    params.encoder.hidden_b.assign(ck.embed_dim, 0.0);
  }
  const std::size_t enc_n = params.encoder.param_count();
  const std::size_t head_n = 2 * static_cast<std::size_t>(ck.joint_dim);
  if (ck.params_flat.size() != enc_n + head_n) {
    raise(ErrorKind::incompatible_checkpoint,
          "rerank_from_checkpoint: parameter count mismatch");
  }
  unflatten_params(params.encoder,
                   std::span<const double>(ck.params_flat.data(), enc_n));
  params.head = Mat64(2, ck.joint_dim);
  std::copy(ck.params_flat.begin() + static_cast<std::ptrdiff_t>(enc_n),
            ck.params_flat.end(), params.head.values.begin());
  return params;
}

}  // namespace embedkit
