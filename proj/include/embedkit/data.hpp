#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "embedkit/contrastive.hpp"
#include "embedkit/encoder.hpp"

namespace embedkit {

enum class TaskTag : std::uint8_t { retrieval, bitext, sts, classification };
enum class PairSource : std::uint8_t { synthetic, labeled };

std::string to_string(TaskTag tag);
std::string to_string(PairSource source);
TaskTag task_tag_from_string(const std::string& s);
PairSource pair_source_from_string(const std::string& s);

// One training pair: an (optionally instructed) query, its positive
// document, and zero or more hard negatives.
struct PairRecord {
  std::string instruction;
  std::string query;
  std::string positive;
  std::vector<std::string> negatives;
  TaskTag task_tag = TaskTag::retrieval;
  std::string language = "en";  // BCP-47-style tag
  PairSource source = PairSource::labeled;
};

// Enforces: nonempty query/positive/language, no negative equal to the
// positive (exact bytes).
void validate_record(const PairRecord& record);

// Training view of a record (task metadata stripped).
PairExample to_example(const PairRecord& record);
std::vector<PairExample> to_examples(const std::vector<PairRecord>& records);

// Line-delimited JSON, one object per line, all seven fields present,
// unknown fields rejected. Parse errors carry the 1-based line number.
std::vector<PairRecord> read_pairs(const std::filesystem::path& path);
void write_pairs(const std::vector<PairRecord>& records,
                 const std::filesystem::path& path);

struct FilterOptions {
  double threshold = 0.7;  // strict: keep iff cosine > threshold
  // When set, a seeded random subset of (fraction * n) records, rounded to
  // nearest, is considered; the rest are skipped before scoring.
  std::optional<double> presample_fraction;
  Seed seed{0};
};

struct FilterResult {
  std::vector<PairRecord> kept;  // input order preserved
  std::size_t dropped_count = 0;
  std::size_t sampled_count = 0;  // kept.size() + dropped_count
};

// The keep rule on an already-computed similarity, exposed so the strict
// boundary is testable in isolation.
inline bool filter_keeps(double cosine_value, double threshold) {
  return cosine_value > threshold;
}

// Cosine between the formatted-query embedding and the positive embedding.
double pair_cosine(const EncoderParams& params, const PairRecord& record);

FilterResult filter_pairs(const std::vector<PairRecord>& pairs,
                          const EncoderParams& params,
                          const FilterOptions& options = {});

struct MineResult {
  PairRecord record;
  bool shortfall = false;  // fewer than k negatives were available
};

// Appends the top-k corpus texts by cosine to the formatted query,
// excluding exact matches of the positive and deduplicating against
// existing negatives. Ties break by ascending corpus index.
MineResult mine_hard_negatives(const PairRecord& record,
                               const std::vector<std::string>& corpus,
                               const EncoderParams& params, std::uint32_t k);

struct Persona {
  std::string id;
  std::string description;
};

std::vector<Persona> read_personas(const std::filesystem::path& path);
void write_personas(const std::vector<Persona>& personas,
                    const std::filesystem::path& path);

// Top-k personas by cosine(embed(document), embed(description)); ties by
// ascending id; k past the library size returns the full ranking.
std::vector<Persona> select_personas(const std::string& document,
                                     const std::vector<Persona>& library,
                                     const EncoderParams& params,
                                     std::uint32_t k = 5);

}  // namespace embedkit
