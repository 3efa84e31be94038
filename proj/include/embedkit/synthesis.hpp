#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "embedkit/data.hpp"

namespace embedkit {

enum class QuestionType : std::uint8_t {
  keywords,
  acquire_knowledge,
  summary,
  yes_or_no,
  background,
};

enum class Difficulty : std::uint8_t { high_school, university, phd };

std::string to_string(QuestionType type);
std::string to_string(Difficulty difficulty);
QuestionType question_type_from_string(const std::string& s);
Difficulty difficulty_from_string(const std::string& s);

// Target query length in words, derived from difficulty (the stage-1 reply
// carries only character/type/difficulty).
std::uint32_t length_from_difficulty(Difficulty difficulty);

// Output of the configuration stage; drives the query-generation stage.
struct SynthesisConfig {
  std::string character;
  QuestionType question_type = QuestionType::keywords;
  Difficulty difficulty = Difficulty::high_school;
  std::uint32_t length_words = 10;
  std::string language = "en";  // query language; corpus shares the tag
};

// prompt -> generated text. Implementations must return or throw within a
// bounded time; they never hang.
class GeneratorClient {
 public:
  virtual ~GeneratorClient() = default;
  virtual std::string generate(const std::string& prompt) = 0;
};

// Stage templates, rendered byte-for-byte (including the original
// "Requirment"/"Languange" spellings in stage 2). The {character} slot of
// stage 1 receives the candidate list, one "- id: description" line each.
std::string render_stage1_prompt(const std::string& language,
                                 const std::string& passage,
                                 const std::vector<Persona>& candidates);
std::string render_stage2_prompt(const SynthesisConfig& config,
                                 const std::string& passage);

inline constexpr int kGeneratorRetries = 3;

// Stage 1: ask the generator to pick character/question type/difficulty for
// the document; retries kGeneratorRetries times on unparseable replies.
SynthesisConfig synth_configure(const std::string& document,
                                const std::vector<Persona>& personas,
                                GeneratorClient& gen,
                                const std::string& language);

// Stage 2: generate the query and wrap it into a synthetic PairRecord whose
// positive is the document.
PairRecord synth_query(const SynthesisConfig& config,
                       const std::string& document, GeneratorClient& gen);

// Both stages over a whole corpus: per document, top-k persona selection,
// configuration, then query generation.
std::vector<PairRecord> synthesize_corpus(
    const std::vector<std::string>& corpus,
    const std::vector<Persona>& personas, const EncoderParams& params,
    GeneratorClient& gen, const std::string& language,
    std::uint32_t personas_per_doc = 5);

// Offline generator: replies are a pure function of (seed, prompt). Stage-1
// prompts get a valid config JSON; stage-2 prompts get a query built from
// the passage's most frequent words, padded to the requested length.
class MockGenerator : public GeneratorClient {
 public:
  explicit MockGenerator(Seed seed) : seed_(seed) {}
  std::string generate(const std::string& prompt) override;

 private:
  Seed seed_;
};

struct RemoteGeneratorConfig {
  std::string base_url;         // e.g. "http://127.0.0.1:8080"
  std::string path = "/generate";
  int timeout_ms = 10000;
};

inline constexpr const char* kGeneratorTokenEnv = "EMBEDKIT_GENERATOR_TOKEN";

// HTTP client: POST {"prompt": ...} to base_url+path, expects
// {"text": ...}. Bearer token read from EMBEDKIT_GENERATOR_TOKEN when set.
class RemoteGenerator : public GeneratorClient {
 public:
  explicit RemoteGenerator(RemoteGeneratorConfig config);
  std::string generate(const std::string& prompt) override;

 private:
  RemoteGeneratorConfig config_;
};

}  // namespace embedkit
