#include "embedkit/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace embedkit {

void validate_batch(const TrainingBatch& batch) {
  if (batch.items.empty()) {
    raise(ErrorKind::invalid_input, "batch: empty");
  }
  const std::size_t k = batch.items.front().negatives.size();
  for (const PairExample& item : batch.items) {
    if (item.negatives.size() != k) {
      raise(ErrorKind::invalid_input,
            "batch: negative counts differ across items");
    }
    if (item.query.empty() || item.positive.empty()) {
      raise(ErrorKind::invalid_input, "batch: empty query or positive");
    }
    for (const std::string& neg : item.negatives) {
      if (neg == item.positive) {
        raise(ErrorKind::invalid_input,
              "batch: positive text duplicated among its negatives");
      }
    }
  }
}

int mask_factor(double s_ij, double s_pos_i, const std::string& d_j_text,
                const std::string& d_pos_i_text) {
  if (s_ij > s_pos_i + kFalseNegativeMargin) return 0;
  if (d_j_text == d_pos_i_text) return 0;
  return 1;
}

namespace {

// Forward state of one embedded text, kept around for backprop.
struct Trace {
  FeatureVector fv;
  Vec64 a;  // projection output, length D
  Vec64 z;  // pre-normalization embedding, length D (== a for linear arch)
};

Trace encode_trace(const EncoderParams& params, const std::string& text) {
  Trace t;
  t.fv = featurize(text, params.feature_dim, params.ngram_lo, params.ngram_hi);
  const std::uint32_t D = params.embed_dim;
  t.a.assign(D, 0.0);
  for (std::size_t i = 0; i < t.fv.nnz(); ++i) {
    const double w = t.fv.weights[i];
    const double* row = params.projection.values.data() +
                        static_cast<std::size_t>(t.fv.indices[i]) * D;
    for (std::uint32_t c = 0; c < D; ++c) t.a[c] += w * row[c];
  }
  if (params.arch == ArchTag::linear) {
    t.z = t.a;
  } else {
    t.z.assign(D, 0.0);
    for (std::uint32_t r = 0; r < D; ++r) {
      double s = params.hidden_b[r];
      const double* row = params.hidden_w.values.data() + r * D;
      for (std::uint32_t c = 0; c < D; ++c) s += row[c] * t.a[c];
      t.z[r] = std::tanh(s);
    }
  }
  return t;
}

// Unit embedding of the first `dim` coordinates, plus the prefix norm.
struct UnitView {
  Vec64 u;
  double norm = 0.0;
};

UnitView unit_at_dim(const Vec64& z, std::uint32_t dim) {
  UnitView v;
  v.u.assign(z.begin(), z.begin() + dim);
  v.norm = l2_norm(v.u);
  if (v.norm == 0.0) {
    raise(ErrorKind::degenerate_input,
          "embed: zero-norm embedding (empty or degenerate text)");
  }
  for (double& x : v.u) x /= v.norm;
  return v;
}

// Instance layout inside a batch: queries [0,N), positives [N,2N),
// negatives [2N + i*K + k].
struct BatchTraces {
  std::vector<Trace> traces;
  std::size_t n = 0;
  std::size_t k = 0;

  std::size_t query(std::size_t i) const { return i; }
  std::size_t positive(std::size_t i) const { return n + i; }
  std::size_t negative(std::size_t i, std::size_t kk) const {
    return 2 * n + i * k + kk;
  }
};

BatchTraces trace_batch(const EncoderParams& params,
                        const TrainingBatch& batch) {
  validate_batch(batch);
  BatchTraces bt;
  bt.n = batch.size();
  bt.k = batch.negatives_per_item();
  bt.traces.reserve(bt.n * (2 + bt.k));
  for (const PairExample& item : batch.items) {
    bt.traces.push_back(encode_trace(
        params, format_query(item.instruction, item.query)));
  }
  for (const PairExample& item : batch.items) {
    bt.traces.push_back(encode_trace(params, item.positive));
  }
  for (const PairExample& item : batch.items) {
    for (const std::string& neg : item.negatives) {
      bt.traces.push_back(encode_trace(params, neg));
    }
  }
  return bt;
}

SimilarityBlock block_from_units(const std::vector<UnitView>& units,
                                 const BatchTraces& bt,
                                 const TrainingBatch& batch) {
  const std::size_t N = bt.n;
  const std::size_t K = bt.k;
  SimilarityBlock blk;
  blk.s_pos.assign(N, 0.0);
  blk.s_neg = Mat64(N, K);
  blk.s_qq = Mat64(N, N);
  blk.s_dd = Mat64(N, N);
  blk.s_qd = Mat64(N, N);
  blk.m_neg = Mat64(N, K);
  blk.m_qq = Mat64(N, N);
  blk.m_dd = Mat64(N, N);
  blk.m_qd = Mat64(N, N);

  auto score = [&](std::size_t x, std::size_t y) {
    double c = dot(std::span<const double>(units[x].u),
                   std::span<const double>(units[y].u));
    return std::clamp(c, -1.0, 1.0);
  };

  for (std::size_t i = 0; i < N; ++i) {
    blk.s_pos[i] = score(bt.query(i), bt.positive(i));
  }
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t kk = 0; kk < K; ++kk) {
      blk.s_neg.at(i, kk) = score(bt.query(i), bt.negative(i, kk));
    }
    for (std::size_t j = 0; j < N; ++j) {
      blk.s_qq.at(i, j) = i == j ? 1.0 : score(bt.query(i), bt.query(j));
      blk.s_dd.at(i, j) = i == j ? 1.0 : score(bt.positive(i), bt.positive(j));
      blk.s_qd.at(i, j) = score(bt.query(i), bt.positive(j));
    }
  }
  for (std::size_t i = 0; i < N; ++i) {
    const std::string& pos_i = batch.items[i].positive;
    for (std::size_t kk = 0; kk < K; ++kk) {
      blk.m_neg.at(i, kk) = mask_factor(blk.s_neg.at(i, kk), blk.s_pos[i],
                                        batch.items[i].negatives[kk], pos_i);
    }
    for (std::size_t j = 0; j < N; ++j) {
      if (i == j) continue;  // diagonals stay 0
      blk.m_qq.at(i, j) = mask_factor(blk.s_qq.at(i, j), blk.s_pos[i],
                                      batch.items[j].query, pos_i);
      blk.m_dd.at(i, j) = mask_factor(blk.s_dd.at(i, j), blk.s_pos[i],
                                      batch.items[j].positive, pos_i);
      blk.m_qd.at(i, j) = mask_factor(blk.s_qd.at(i, j), blk.s_pos[i],
                                      batch.items[j].positive, pos_i);
    }
  }
  return blk;
}

std::vector<UnitView> units_at_dim(const BatchTraces& bt, std::uint32_t dim) {
  std::vector<UnitView> units;
  units.reserve(bt.traces.size());
  for (const Trace& t : bt.traces) units.push_back(unit_at_dim(t.z, dim));
  return units;
}

}  // namespace

SimilarityBlock similarity_block(const EncoderParams& params,
                                 const TrainingBatch& batch,
                                 std::optional<std::uint32_t> target_dim) {
  BatchTraces bt = trace_batch(params, batch);
  std::uint32_t dim = target_dim.value_or(params.embed_dim);
  if (dim < 8 || dim > params.embed_dim) {
    raise(ErrorKind::invalid_input, "similarity_block: bad target_dim");
  }
  return block_from_units(units_at_dim(bt, dim), bt, batch);
}

double log_partition(std::size_t i, const SimilarityBlock& block, double tau) {
  if (tau <= 0.0) {
    raise(ErrorKind::invalid_input, "partition: tau must be positive");
  }
  const std::size_t N = block.n();
  const std::size_t K = block.k();
  std::vector<double> terms;
  terms.reserve(1 + K + 3 * N);
  terms.push_back(block.s_pos[i] / tau);
  for (std::size_t kk = 0; kk < K; ++kk) {
    if (block.m_neg.at(i, kk) != 0.0) terms.push_back(block.s_neg.at(i, kk) / tau);
  }
  for (std::size_t j = 0; j < N; ++j) {
    if (j == i) continue;
    if (block.m_qq.at(i, j) != 0.0) terms.push_back(block.s_qq.at(i, j) / tau);
    if (block.m_dd.at(i, j) != 0.0) terms.push_back(block.s_dd.at(i, j) / tau);
    if (block.m_qd.at(i, j) != 0.0) terms.push_back(block.s_qd.at(i, j) / tau);
  }
  return log_sum_exp(terms);
}

double partition(std::size_t i, const SimilarityBlock& block, double tau) {
  return std::exp(log_partition(i, block, tau));
}

LossReport loss_from_block(const SimilarityBlock& block, double tau) {
  const std::size_t N = block.n();
  LossReport rep;
  rep.per_item_log_terms.assign(N, 0.0);
  for (std::size_t i = 0; i < N; ++i) {
    rep.per_item_log_terms[i] =
        log_partition(i, block, tau) - block.s_pos[i] / tau;
    rep.loss += rep.per_item_log_terms[i];
  }
  rep.loss /= static_cast<double>(N);
  auto count_zeros = [](const Mat64& m, bool skip_diag) {
    std::size_t z = 0;
    for (std::size_t r = 0; r < m.rows; ++r) {
      for (std::size_t c = 0; c < m.cols; ++c) {
        if (skip_diag && r == c) continue;
        if (m.at(r, c) == 0.0) ++z;
      }
    }
    return z;
  };
  rep.masked_neg = count_zeros(block.m_neg, false);
  rep.masked_qq = count_zeros(block.m_qq, true);
  rep.masked_dd = count_zeros(block.m_dd, true);
  rep.masked_qd = count_zeros(block.m_qd, true);
  return rep;
}

namespace {

std::vector<std::uint32_t> effective_dims(const EncoderParams& params,
                                          const LossOptions& options) {
  if (options.mrl_dims.empty()) return {params.embed_dim};
  for (std::uint32_t d : options.mrl_dims) {
    if (d < 8 || d > params.embed_dim) {
      raise(ErrorKind::invalid_input, "loss: mrl dim out of range");
    }
  }
  return options.mrl_dims;
}

}  // namespace

LossReport loss(const EncoderParams& params, const TrainingBatch& batch,
                const LossOptions& options) {
  if (options.tau <= 0.0) {
    raise(ErrorKind::invalid_input, "loss: tau must be positive");
  }
  BatchTraces bt = trace_batch(params, batch);
  std::vector<std::uint32_t> dims = effective_dims(params, options);
  LossReport total;
  total.per_item_log_terms.assign(bt.n, 0.0);
  for (std::uint32_t dim : dims) {
    SimilarityBlock blk = block_from_units(units_at_dim(bt, dim), bt, batch);
    LossReport rep = loss_from_block(blk, options.tau);
    total.loss += rep.loss;
    for (std::size_t i = 0; i < bt.n; ++i) {
      total.per_item_log_terms[i] += rep.per_item_log_terms[i];
    }
    total.masked_neg += rep.masked_neg;
    total.masked_qq += rep.masked_qq;
    total.masked_dd += rep.masked_dd;
    total.masked_qd += rep.masked_qd;
  }
  const double scale = 1.0 / static_cast<double>(dims.size());
  total.loss *= scale;
  for (double& x : total.per_item_log_terms) x *= scale;
  return total;
}

LossReport loss(const EncoderParams& params, const TrainingBatch& batch,
                double tau) {
  LossOptions opts;
  opts.tau = tau;
  return loss(params, batch, opts);
}

namespace {

// d(loss)/d(score) for every score family, holding masks constant.
struct ScoreGrads {
  Vec64 g_pos;
  Mat64 g_neg;
  Mat64 g_qq;
  Mat64 g_dd;
  Mat64 g_qd;
};

ScoreGrads score_grads(const SimilarityBlock& blk, double tau, double scale) {
  const std::size_t N = blk.n();
  const std::size_t K = blk.k();
  ScoreGrads g;
  g.g_pos.assign(N, 0.0);
  g.g_neg = Mat64(N, K);
  g.g_qq = Mat64(N, N);
  g.g_dd = Mat64(N, N);
  g.g_qd = Mat64(N, N);
  const double inv = scale / (static_cast<double>(N) * tau);
  for (std::size_t i = 0; i < N; ++i) {
    const double log_z = log_partition(i, blk, tau);
    const double w_pos = std::exp(blk.s_pos[i] / tau - log_z);
    g.g_pos[i] = inv * (w_pos - 1.0);
    for (std::size_t kk = 0; kk < K; ++kk) {
      if (blk.m_neg.at(i, kk) != 0.0) {
        g.g_neg.at(i, kk) = inv * std::exp(blk.s_neg.at(i, kk) / tau - log_z);
      }
    }
    for (std::size_t j = 0; j < N; ++j) {
      if (j == i) continue;
      if (blk.m_qq.at(i, j) != 0.0) {
        g.g_qq.at(i, j) = inv * std::exp(blk.s_qq.at(i, j) / tau - log_z);
      }
      if (blk.m_dd.at(i, j) != 0.0) {
        g.g_dd.at(i, j) = inv * std::exp(blk.s_dd.at(i, j) / tau - log_z);
      }
      if (blk.m_qd.at(i, j) != 0.0) {
        g.g_qd.at(i, j) = inv * std::exp(blk.s_qd.at(i, j) / tau - log_z);
      }
    }
  }
  return g;
}

void axpy(Vec64& acc, double c, const Vec64& v) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += c * v[i];
}

}  // namespace

Vec64 grad(const EncoderParams& params, const TrainingBatch& batch,
           const LossOptions& options) {
  if (options.tau <= 0.0) {
    raise(ErrorKind::invalid_input, "grad: tau must be positive");
  }
  BatchTraces bt = trace_batch(params, batch);
  std::vector<std::uint32_t> dims = effective_dims(params, options);
  const double dim_scale = 1.0 / static_cast<double>(dims.size());
  const std::uint32_t D = params.embed_dim;
  const std::size_t n_inst = bt.traces.size();

  // Accumulated d(loss)/dz per instance, full D.
  std::vector<Vec64> g_z(n_inst, Vec64(D, 0.0));

  for (std::uint32_t dim : dims) {
    std::vector<UnitView> units = units_at_dim(bt, dim);
    SimilarityBlock blk = block_from_units(units, bt, batch);
    ScoreGrads sg = score_grads(blk, options.tau, dim_scale);

    std::vector<Vec64> g_u(n_inst, Vec64(dim, 0.0));
    const std::size_t N = bt.n;
    const std::size_t K = bt.k;
    for (std::size_t i = 0; i < N; ++i) {
      const std::size_t qi = bt.query(i);
      const std::size_t di = bt.positive(i);
      axpy(g_u[qi], sg.g_pos[i], units[di].u);
      axpy(g_u[di], sg.g_pos[i], units[qi].u);
      for (std::size_t kk = 0; kk < K; ++kk) {
        const double c = sg.g_neg.at(i, kk);
        if (c == 0.0) continue;
        const std::size_t ni = bt.negative(i, kk);
        axpy(g_u[qi], c, units[ni].u);
        axpy(g_u[ni], c, units[qi].u);
      }
      for (std::size_t j = 0; j < N; ++j) {
        if (j == i) continue;
        const std::size_t qj = bt.query(j);
        const std::size_t dj = bt.positive(j);
        if (double c = sg.g_qq.at(i, j); c != 0.0) {
          axpy(g_u[qi], c, units[qj].u);
          axpy(g_u[qj], c, units[qi].u);
        }
        if (double c = sg.g_dd.at(i, j); c != 0.0) {
          axpy(g_u[di], c, units[dj].u);
          axpy(g_u[dj], c, units[di].u);
        }
        if (double c = sg.g_qd.at(i, j); c != 0.0) {
          axpy(g_u[qi], c, units[dj].u);
          axpy(g_u[dj], c, units[qi].u);
        }
      }
    }

    // Through normalization: g_z_prefix = (g_u - (g_u . u) u) / ||z_prefix||.
    for (std::size_t t = 0; t < n_inst; ++t) {
      const UnitView& uv = units[t];
      double gu_dot_u = dot(g_u[t], uv.u);
      for (std::uint32_t c = 0; c < dim; ++c) {
        g_z[t][c] += (g_u[t][c] - gu_dot_u * uv.u[c]) / uv.norm;
      }
    }
  }

  // Through the encoder into the flat parameter gradient.
  Vec64 flat(params.param_count(), 0.0);
  const std::size_t proj_size = static_cast<std::size_t>(params.feature_dim) * D;
  for (std::size_t t = 0; t < n_inst; ++t) {
    const Trace& tr = bt.traces[t];
    Vec64 g_a(D, 0.0);
    if (params.arch == ArchTag::mlp1) {
      Vec64 g_pre(D, 0.0);
      for (std::uint32_t r = 0; r < D; ++r) {
        g_pre[r] = g_z[t][r] * (1.0 - tr.z[r] * tr.z[r]);
      }
      double* gw = flat.data() + proj_size;
      double* gb = flat.data() + proj_size + static_cast<std::size_t>(D) * D;
      for (std::uint32_t r = 0; r < D; ++r) {
        const double gp = g_pre[r];
        if (gp == 0.0) continue;
        double* gw_row = gw + static_cast<std::size_t>(r) * D;
        const double* w_row = params.hidden_w.values.data() +
                              static_cast<std::size_t>(r) * D;
        for (std::uint32_t c = 0; c < D; ++c) {
          gw_row[c] += gp * tr.a[c];
          g_a[c] += w_row[c] * gp;
        }
        gb[r] += gp;
      }
    } else {
      g_a = g_z[t];
    }
    for (std::size_t f = 0; f < tr.fv.nnz(); ++f) {
      const double w = tr.fv.weights[f];
      double* gp_row =
          flat.data() + static_cast<std::size_t>(tr.fv.indices[f]) * D;
      for (std::uint32_t c = 0; c < D; ++c) gp_row[c] += w * g_a[c];
    }
  }
  return flat;
}

Vec64 grad(const EncoderParams& params, const TrainingBatch& batch,
           double tau) {
  LossOptions opts;
  opts.tau = tau;
  return grad(params, batch, opts);
}

namespace {

class BatchCursor {
 public:
  BatchCursor(const std::vector<PairExample>& data, Rng rng)
      : data_(data), rng_(rng), order_(data.size()) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    pos_ = order_.size();  // force a shuffle on first use
  }

  TrainingBatch next(std::uint32_t n, std::uint32_t k) {
    if (pos_ + n > order_.size()) {  // drop the partial tail
      rng_.shuffle(order_);
      pos_ = 0;
    }
    TrainingBatch batch;
    batch.items.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
      const PairExample& rec = data_[order_[pos_++]];
      if (rec.negatives.size() < k) {
        raise(ErrorKind::invalid_input,
              "train: record has fewer negatives than batch_k; mine "
              "negatives first");
      }
      PairExample item = rec;
      item.negatives.assign(rec.negatives.begin(), rec.negatives.begin() + k);
      batch.items.push_back(std::move(item));
    }
    return batch;
  }

 private:
  const std::vector<PairExample>& data_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

void apply_update(EncoderParams& params, const Vec64& velocity) {
  std::size_t off = 0;
  for (double& x : params.projection.values) x += velocity[off++];
  if (params.arch == ArchTag::mlp1) {
    for (double& x : params.hidden_w.values) x += velocity[off++];
    for (double& x : params.hidden_b) x += velocity[off++];
  }
}

void run_stage(EncoderParams& params, const StageConfig& cfg,
               const std::vector<PairExample>& data, Rng stage_rng,
               std::uint64_t& global_step, std::vector<Checkpoint>& out) {
  if (cfg.steps == 0) return;
  if (data.empty()) {
    raise(ErrorKind::invalid_input, "train_embedding: empty data stream");
  }
  if (data.size() < cfg.batch_n) {
    raise(ErrorKind::invalid_input,
          "train_embedding: stage data smaller than batch_n");
  }
  LossOptions opts;
  opts.tau = cfg.tau;
  opts.mrl_dims = cfg.mrl_dims;
  BatchCursor cursor(data, stage_rng);
  Vec64 velocity(params.param_count(), 0.0);
  for (std::uint64_t s = 0; s < cfg.steps; ++s) {
    TrainingBatch batch = cursor.next(cfg.batch_n, cfg.batch_k);
    Vec64 g = grad(params, batch, opts);
    for (std::size_t i = 0; i < velocity.size(); ++i) {
      velocity[i] = cfg.momentum * velocity[i] - cfg.learning_rate * g[i];
    }
    apply_update(params, velocity);
    ++global_step;
    if (cfg.checkpoint_every > 0 && global_step % cfg.checkpoint_every == 0 &&
        s + 1 < cfg.steps) {
      out.push_back(to_checkpoint(params, global_step));
    }
  }
  out.push_back(to_checkpoint(params, global_step));
}

}  // namespace

TrainResult train_embedding(const EncoderParams& initial,
                            const StagePlan& plan,
                            const std::vector<PairExample>& stage1_data,
                            const std::vector<PairExample>& stage2_data,
                            Seed seed) {
  TrainResult result;
  result.final_params = initial;
  result.checkpoints.push_back(to_checkpoint(initial, 0));
  Rng rng(seed);
  Rng rng_stage1 = rng.split();
  Rng rng_stage2 = rng.split();
  std::uint64_t step = 0;
  if (plan.stage1.has_value()) {
    run_stage(result.final_params, *plan.stage1, stage1_data, rng_stage1,
              step, result.checkpoints);
  }
  run_stage(result.final_params, plan.stage2, stage2_data, rng_stage2, step,
            result.checkpoints);
  return result;
}

}  // namespace embedkit
