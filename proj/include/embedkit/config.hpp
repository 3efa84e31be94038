#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "embedkit/contrastive.hpp"
#include "embedkit/encoder.hpp"
#include "embedkit/reranker.hpp"

namespace embedkit {

inline constexpr std::uint32_t kConfigVersion = 1;

// Declarative run configuration. A config file may set any subset of
// fields; everything else keeps these defaults, and command-line flags
// override the file (flags > config > defaults).
struct RunConfig {
  std::uint32_t config_version = kConfigVersion;
  std::uint64_t seed = 42;
  std::uint32_t threads = 1;

  struct Encoder {
    std::uint32_t feature_dim = 65536;
    std::uint32_t embed_dim = 64;
    ArchTag arch = ArchTag::mlp1;
    std::uint32_t ngram_lo = 2;
    std::uint32_t ngram_hi = 4;
  } encoder;

  StageConfig stage1;  // weakly supervised pre-training
  StageConfig stage2;  // supervised fine-tuning
  RerankStageConfig rerank;

  struct Merge {
    std::uint32_t last_k = 3;
    bool per_tensor = false;
    std::vector<double> t_schedule;  // empty = running-average default
  } merge;

  struct Filter {
    double threshold = 0.7;
    std::optional<double> presample_fraction;
  } filter;

  struct Synthesis {
    std::string language = "en";
    std::uint32_t personas_per_doc = 5;
  } synthesis;

  struct Eval {
    std::uint32_t k_retrieve = 100;
    std::uint32_t k_metric = 10;
  } eval;
};

std::string to_string(ArchTag arch);
ArchTag arch_from_string(const std::string& s);

// Strict parse: unknown fields anywhere are rejected; missing fields keep
// defaults; a config_version other than kConfigVersion is refused.
RunConfig load_run_config(const std::filesystem::path& path);
RunConfig run_config_from_json_text(const std::string& text);

// Canonical (sorted-key, fully materialized) JSON dump.
std::string run_config_to_json(const RunConfig& config);

// FNV-1a over the canonical dump, as 16 hex digits; stamped into reports.
std::string config_digest(const RunConfig& config);

// Seeded encoder initialization from the config's arch block.
EncoderParams encoder_from_config(const RunConfig& config, Seed seed);

}  // namespace embedkit
