#include "embedkit/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace embedkit {

std::string format_query(const std::string& instruction,
                         const std::string& query) {
  if (query.empty()) {
    raise(ErrorKind::invalid_input, "format_query: empty query");
  }
  std::string out;
  out.reserve(instruction.size() + query.size() + 16);
  if (!instruction.empty()) {
    out += instruction;
    out += ' ';
  }
  out += query;
  out += "<|endoftext|>";
  return out;
}

namespace {

// FNV-1a over the n-gram bytes.
std::uint64_t fnv1a(const char* data, std::size_t n) {
  std::uint64_t h = 14695981039346656037ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

FeatureVector featurize(const std::string& text, std::uint32_t feature_dim,
                        std::uint32_t ngram_lo, std::uint32_t ngram_hi) {
  if (feature_dim < 256) {
    raise(ErrorKind::invalid_input, "featurize: feature_dim must be >= 256");
  }
  if (ngram_lo < 1 || ngram_lo > ngram_hi || ngram_hi > 5) {
    raise(ErrorKind::invalid_input,
          "featurize: need 1 <= ngram_lo <= ngram_hi <= 5");
  }
  std::map<std::uint32_t, double> counts;
  for (std::uint32_t n = ngram_lo; n <= ngram_hi; ++n) {
    if (text.size() < n) continue;
    for (std::size_t i = 0; i + n <= text.size(); ++i) {
      std::uint32_t idx =
          static_cast<std::uint32_t>(fnv1a(text.data() + i, n) % feature_dim);
      counts[idx] += 1.0;
    }
  }
  FeatureVector fv;
  fv.feature_dim = feature_dim;
  fv.indices.reserve(counts.size());
  fv.weights.reserve(counts.size());
  for (const auto& [idx, w] : counts) {
    fv.indices.push_back(idx);
    fv.weights.push_back(w);
  }
  return fv;
}

Vec64 embed_pre_norm(const EncoderParams& params, const FeatureVector& fv) {
  if (fv.feature_dim != params.feature_dim) {
    raise(ErrorKind::dimension, "embed: feature space mismatch");
  }
  const std::uint32_t D = params.embed_dim;
  Vec64 a(D, 0.0);
  for (std::size_t t = 0; t < fv.nnz(); ++t) {
    const double w = fv.weights[t];
    const double* row = params.projection.values.data() +
                        static_cast<std::size_t>(fv.indices[t]) * D;
    for (std::uint32_t c = 0; c < D; ++c) a[c] += w * row[c];
  }
  if (params.arch == ArchTag::linear) return a;
  Vec64 z(D, 0.0);
  for (std::uint32_t r = 0; r < D; ++r) {
    double s = params.hidden_b[r];
    const double* row = params.hidden_w.values.data() + r * D;
    for (std::uint32_t c = 0; c < D; ++c) s += row[c] * a[c];
    z[r] = std::tanh(s);
  }
  return z;
}

Vec64 embed_pre_norm(const EncoderParams& params, const std::string& text) {
  return embed_pre_norm(
      params, featurize(text, params.feature_dim, params.ngram_lo,
                        params.ngram_hi));
}

Vec64 embed(const EncoderParams& params, const std::string& text,
            std::optional<std::uint32_t> target_dim) {
  std::uint32_t d = target_dim.value_or(params.embed_dim);
  if (d < 8 || d > params.embed_dim) {
    raise(ErrorKind::invalid_input,
          "embed: target_dim must satisfy 8 <= target_dim <= D");
  }
  Vec64 z = embed_pre_norm(params, text);
  z.resize(d);
  return l2_normalize(z);
}

EncoderParams init_params(Seed seed, std::uint32_t feature_dim,
                          std::uint32_t embed_dim, ArchTag arch,
                          std::uint32_t ngram_lo, std::uint32_t ngram_hi) {
  if (embed_dim < 8 || feature_dim < embed_dim) {
    raise(ErrorKind::invalid_input,
          "init_params: need D >= 8 and F >= D");
  }
  if (ngram_lo < 1 || ngram_lo > ngram_hi || ngram_hi > 5) {
    raise(ErrorKind::invalid_input,
          "init_params: need 1 <= ngram_lo <= ngram_hi <= 5");
  }
  EncoderParams p;
  p.feature_dim = feature_dim;
  p.embed_dim = embed_dim;
  p.arch = arch;
  p.ngram_lo = ngram_lo;
  p.ngram_hi = ngram_hi;
  Rng rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(feature_dim));
  p.projection = Mat64(feature_dim, embed_dim);
  for (double& x : p.projection.values) x = rng.uniform(-bound, bound);
  if (arch == ArchTag::mlp1) {
    p.hidden_w = Mat64(embed_dim, embed_dim);
    for (double& x : p.hidden_w.values) x = rng.uniform(-bound, bound);
    p.hidden_b.assign(embed_dim, 0.0);
    for (double& x : p.hidden_b) x = rng.uniform(-bound, bound);
  }
  return p;
}

Vec64 flatten_params(const EncoderParams& params) {
  Vec64 flat;
  flat.reserve(params.param_count());
  flat.insert(flat.end(), params.projection.values.begin(),
              params.projection.values.end());
  if (params.arch == ArchTag::mlp1) {
    flat.insert(flat.end(), params.hidden_w.values.begin(),
                params.hidden_w.values.end());
    flat.insert(flat.end(), params.hidden_b.begin(), params.hidden_b.end());
  }
  return flat;
}

void unflatten_params(EncoderParams& params, std::span<const double> flat) {
  if (flat.size() != params.param_count()) {
    raise(ErrorKind::dimension, "unflatten_params: length mismatch");
  }
  std::size_t off = 0;
  std::copy_n(flat.begin(), params.projection.values.size(),
              params.projection.values.begin());
  off += params.projection.values.size();
  if (params.arch == ArchTag::mlp1) {
    std::copy_n(flat.begin() + off, params.hidden_w.values.size(),
                params.hidden_w.values.begin());
    off += params.hidden_w.values.size();
    std::copy_n(flat.begin() + off, params.hidden_b.size(),
                params.hidden_b.begin());
  }
}

}  // namespace embedkit
