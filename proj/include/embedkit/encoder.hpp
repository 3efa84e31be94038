#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "embedkit/numeric.hpp"

namespace embedkit {

// Sparse hashed-n-gram representation of a text. Indices are strictly
// increasing; weights are raw n-gram multiplicities (collisions add up).
struct FeatureVector {
  std::vector<std::uint32_t> indices;
  Vec64 weights;
  std::uint32_t feature_dim = 0;

  std::size_t nnz() const { return indices.size(); }
};

enum class ArchTag : std::uint32_t { linear = 0, mlp1 = 1 };

// Trainable encoder: hashed byte n-grams -> linear projection
// (-> optional tanh layer) -> prefix truncation -> l2 normalization.
struct EncoderParams {
  std::uint32_t feature_dim = 0;  // F
  std::uint32_t embed_dim = 0;    // D
  ArchTag arch = ArchTag::mlp1;
  std::uint32_t ngram_lo = 2;
  std::uint32_t ngram_hi = 4;

  Mat64 projection;  // F x D
  Mat64 hidden_w;    // D x D, mlp1 only
  Vec64 hidden_b;    // D, mlp1 only

  std::size_t param_count() const {
    std::size_t n = static_cast<std::size_t>(feature_dim) * embed_dim;
    if (arch == ArchTag::mlp1) {
      n += static_cast<std::size_t>(embed_dim) * embed_dim + embed_dim;
    }
    return n;
  }
};

struct QueryInput {
  std::string instruction;
  std::string query;
};

// "{instruction} {query}<|endoftext|>"; no leading space when the
// instruction is empty. Documents are embedded as-is, without this wrapper.
std::string format_query(const std::string& instruction,
                         const std::string& query);

FeatureVector featurize(const std::string& text, std::uint32_t feature_dim,
                        std::uint32_t ngram_lo, std::uint32_t ngram_hi);

// Full-dimension output before truncation and normalization.
Vec64 embed_pre_norm(const EncoderParams& params, const std::string& text);
Vec64 embed_pre_norm(const EncoderParams& params, const FeatureVector& fv);

// Unit-norm embedding, optionally truncated to the first target_dim
// coordinates before renormalizing.
Vec64 embed(const EncoderParams& params, const std::string& text,
            std::optional<std::uint32_t> target_dim = std::nullopt);

EncoderParams init_params(Seed seed, std::uint32_t feature_dim,
                          std::uint32_t embed_dim, ArchTag arch,
                          std::uint32_t ngram_lo = 2,
                          std::uint32_t ngram_hi = 4);

// Canonical flattening: projection row-major, then hidden_w row-major,
// then hidden_b. Checkpoints and gradient vectors share this order.
Vec64 flatten_params(const EncoderParams& params);
void unflatten_params(EncoderParams& params, std::span<const double> flat);

}  // namespace embedkit
