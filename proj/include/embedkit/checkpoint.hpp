#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "embedkit/encoder.hpp"
#include "embedkit/numeric.hpp"

namespace embedkit {

enum class ModelKind : std::uint8_t { embedding = 0, reranker = 1 };

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

// One saved model state. params_flat follows the canonical flattening of
// the owning arch (see flatten_params; rerankers append the head row-major,
// row 0 = "no", row 1 = "yes"). Files store parameters as little-endian
// 32-bit floats; in-memory math stays 64-bit.
struct Checkpoint {
  ModelKind kind = ModelKind::embedding;
  std::uint32_t feature_dim = 0;
  std::uint32_t embed_dim = 0;
  ArchTag arch = ArchTag::mlp1;
  std::uint32_t ngram_lo = 2;
  std::uint32_t ngram_hi = 4;
  std::uint32_t joint_dim = 0;  // reranker only, 0 otherwise
  std::uint64_t step = 0;
  Vec64 params_flat;
  std::uint32_t format_version = kCheckpointFormatVersion;

  bool same_arch(const Checkpoint& other) const {
    return kind == other.kind && feature_dim == other.feature_dim &&
           embed_dim == other.embed_dim && arch == other.arch &&
           ngram_lo == other.ngram_lo && ngram_hi == other.ngram_hi &&
           joint_dim == other.joint_dim;
  }
};

struct MergePlan {
  std::vector<Checkpoint> inputs;   // >= 2, identical kind and arch
  std::vector<double> t_schedule;   // length == inputs.size() - 1
  bool per_tensor = false;          // slerp each tensor segment separately
};

// Great-circle interpolation between a and b. Falls back to linear
// interpolation when the angle is within 1e-7 of 0 or pi.
Vec64 slerp(std::span<const double> a, std::span<const double> b, double t);

// Running t = 1/2, 1/3, ..., 1/k collapses a chain into the spherical
// analog of an evenly weighted average.
std::vector<double> default_t_schedule(std::size_t n_inputs);

Checkpoint merge_checkpoints(const MergePlan& plan);

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Byte length of the fixed file header that precedes the f32 parameters.
std::size_t checkpoint_header_size();

Checkpoint to_checkpoint(const EncoderParams& params, std::uint64_t step);
EncoderParams encoder_from_checkpoint(const Checkpoint& ck);

// Offsets of tensor boundaries within params_flat, for per-tensor merging.
std::vector<std::size_t> tensor_segments(const Checkpoint& ck);

}  // namespace embedkit
