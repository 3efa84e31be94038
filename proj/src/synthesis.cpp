#include "embedkit/synthesis.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <map>
#include <sstream>

#include "embedkit/errors.hpp"
#include "httplib.h"
#include "json.hpp"

namespace embedkit {

using nlohmann::json;

std::string to_string(QuestionType type) {
  switch (type) {
    case QuestionType::keywords: return "keywords";
    case QuestionType::acquire_knowledge: return "acquire_knowledge";
    case QuestionType::summary: return "summary";
    case QuestionType::yes_or_no: return "yes_or_no";
    case QuestionType::background: return "background";
  }
  raise(ErrorKind::invalid_input, "unknown question type");
}

std::string to_string(Difficulty difficulty) {
  switch (difficulty) {
    case Difficulty::high_school: return "high_school";
    case Difficulty::university: return "university";
    case Difficulty::phd: return "phd";
  }
  raise(ErrorKind::invalid_input, "unknown difficulty");
}

QuestionType question_type_from_string(const std::string& s) {
  if (s == "keywords") return QuestionType::keywords;
  if (s == "acquire_knowledge") return QuestionType::acquire_knowledge;
  if (s == "summary") return QuestionType::summary;
  if (s == "yes_or_no") return QuestionType::yes_or_no;
  if (s == "background") return QuestionType::background;
  raise(ErrorKind::parse, "unknown question type \"" + s + "\"");
}

Difficulty difficulty_from_string(const std::string& s) {
  if (s == "high_school") return Difficulty::high_school;
  if (s == "university") return Difficulty::university;
  if (s == "phd") return Difficulty::phd;
  raise(ErrorKind::parse, "unknown difficulty \"" + s + "\"");
}

std::uint32_t length_from_difficulty(Difficulty difficulty) {
  switch (difficulty) {
    case Difficulty::high_school: return 10;
    case Difficulty::university: return 20;
    case Difficulty::phd: return 30;
  }
  raise(ErrorKind::invalid_input, "unknown difficulty");
}

namespace {

// Both templates are kept byte-for-byte as printed, including the
// "Requirment" and "Languange" spellings in stage 2.
constexpr const char* kStage1Template =
    R"(Given a **Passage** and **Character**, select the appropriate option from three fields: Character, Question_Type, Difficulty, and return the output in JSON format.
First, select the Character who are likely to be interested in the Passage from the candidates. Then select the Question_Type that the Character might ask about the Passage; Finally, choose the Difficulty of the possible question based on the Passage, the Character, and the Question_Type.
Character: Given by input **Character**

Question_Type:
- keywords: ...
- acquire_knowledge: ...
- summary: ...
- yes_or_no: ...
- background: ...

Difficulty:
- high_school: ...
- university: ...
- phd: ...

Here are some examples
<Example1> <Example2> <Example3>

Now, generate the **output** based on the **Passage** and **Character** from user, the **Passage** will be in {language} language and the **Character** will be in English.
Ensure to generate only the JSON output with content in English.

**Passage**:
{passage}
**Character**:
{character}
)";

constexpr const char* kStage2Template =
    R"(Given a **Character**, **Passage**, and **Requirement**, generate a query from the **Character**'s perspective that satisfies the **Requirement** and can be used to retrieve the **Passage**. Please return the result in JSON format.

Here is an example:
<example>

Now, generate the **output** based on the **Character**, **Passage** and **Requirement** from user, the **Passage** will be in {corpus_language} language, the **Character** and **Requirement** will be in English.
Ensure to generate only the JSON output, with the key in English and the value in {queries_language} language.

**Character**
{character}
**Passage**
{passage}
**Requirment**
- Type: {type};
- Difficulty: {difficulty};
- Length: the length of the generated sentences should be {length} words;
- Languange: the language in which the results are generated should be {language} language;
)";

// Single pass over the template: every "{slot}" with a known key is
// substituted, everything else (including braces inside inserted values)
// is copied literally.
std::string render_template(
    const std::string& tmpl,
    const std::map<std::string, std::string>& slots) {
  std::string out;
  out.reserve(tmpl.size() + 128);
  std::size_t at = 0;
  while (at < tmpl.size()) {
    if (tmpl[at] == '{') {
      std::size_t close = tmpl.find('}', at + 1);
      if (close != std::string::npos) {
        auto it = slots.find(tmpl.substr(at + 1, close - at - 1));
        if (it != slots.end()) {
          out += it->second;
          at = close + 1;
          continue;
        }
      }
    }
    out += tmpl[at++];
  }
  return out;
}

std::string instruction_for(QuestionType type) {
  switch (type) {
    case QuestionType::keywords:
      return "Given keywords, retrieve the passage they describe.";
    case QuestionType::acquire_knowledge:
      return "Given a knowledge-seeking question, retrieve the passage "
             "that answers it.";
    case QuestionType::summary:
      return "Given a summary request, retrieve the passage being "
             "summarized.";
    case QuestionType::yes_or_no:
      return "Given a yes-or-no question, retrieve the passage that "
             "decides it.";
    case QuestionType::background:
      return "Given a question, retrieve the passage that provides its "
             "background.";
  }
  raise(ErrorKind::invalid_input, "unknown question type");
}

SynthesisConfig parse_stage1_reply(const std::string& reply,
                                   const std::string& language) {
  json j;
  try {
    j = json::parse(reply);
  } catch (const json::exception& e) {
    raise(ErrorKind::parse, std::string("stage-1 reply: ") + e.what());
  }
  if (!j.is_object() || !j.contains("Character") ||
      !j.contains("Question_Type") || !j.contains("Difficulty")) {
    raise(ErrorKind::parse,
          "stage-1 reply: need Character, Question_Type, Difficulty");
  }
  SynthesisConfig cfg;
  try {
    cfg.character = j.at("Character").get<std::string>();
    cfg.question_type =
        question_type_from_string(j.at("Question_Type").get<std::string>());
    cfg.difficulty =
        difficulty_from_string(j.at("Difficulty").get<std::string>());
  } catch (const json::exception& e) {
    raise(ErrorKind::parse, std::string("stage-1 reply: ") + e.what());
  }
  if (cfg.character.empty()) {
    raise(ErrorKind::parse, "stage-1 reply: empty Character");
  }
  cfg.length_words = length_from_difficulty(cfg.difficulty);
  cfg.language = language;
  return cfg;
}

std::string parse_stage2_reply(const std::string& reply) {
  json j;
  try {
    j = json::parse(reply);
  } catch (const json::exception& e) {
    raise(ErrorKind::parse, std::string("stage-2 reply: ") + e.what());
  }
  const char* key = j.is_object() && j.contains("Query") ? "Query"
                    : j.is_object() && j.contains("query") ? "query"
                                                           : nullptr;
  if (key == nullptr) {
    raise(ErrorKind::parse, "stage-2 reply: no Query field");
  }
  std::string query;
  try {
    query = j.at(key).get<std::string>();
  } catch (const json::exception& e) {
    raise(ErrorKind::parse, std::string("stage-2 reply: ") + e.what());
  }
  if (query.empty()) {
    raise(ErrorKind::parse, "stage-2 reply: empty query");
  }
  return query;
}

// Runs render -> generate -> parse with bounded retries on parse failures;
// other errors (transport and the like) propagate immediately.
template <typename ParseFn>
auto generate_with_retries(GeneratorClient& gen, const std::string& prompt,
                           ParseFn parse) {
  std::string last_reply;
  std::string last_error;
  for (int attempt = 0; attempt <= kGeneratorRetries; ++attempt) {
    last_reply = gen.generate(prompt);
    try {
      return parse(last_reply);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::parse) throw;
      last_error = e.what();
    }
  }
  raise(ErrorKind::generation,
        "generator reply unusable after " +
            std::to_string(kGeneratorRetries + 1) + " attempts (" +
            last_error + "); last reply: " + last_reply);
}

}  // namespace

std::string render_stage1_prompt(const std::string& language,
                                 const std::string& passage,
                                 const std::vector<Persona>& candidates) {
  if (passage.empty()) {
    raise(ErrorKind::invalid_input, "stage-1 prompt: empty passage");
  }
  if (candidates.empty()) {
    raise(ErrorKind::invalid_input, "stage-1 prompt: no candidate personas");
  }
  std::string character;
  for (const Persona& p : candidates) {
    if (!character.empty()) character += "\n";
    character += "- " + p.id + ": " + p.description;
  }
  return render_template(kStage1Template, {{"language", language},
                                           {"passage", passage},
                                           {"character", character}});
}

std::string render_stage2_prompt(const SynthesisConfig& config,
                                 const std::string& passage) {
  if (passage.empty()) {
    raise(ErrorKind::invalid_input, "stage-2 prompt: empty passage");
  }
  // A single language tag flows through the whole pipeline, so the corpus
  // and query language slots coincide.
  return render_template(kStage2Template,
                         {{"corpus_language", config.language},
                          {"queries_language", config.language},
                          {"language", config.language},
                          {"character", config.character},
                          {"passage", passage},
                          {"type", to_string(config.question_type)},
                          {"difficulty", to_string(config.difficulty)},
                          {"length", std::to_string(config.length_words)}});
}

SynthesisConfig synth_configure(const std::string& document,
                                const std::vector<Persona>& personas,
                                GeneratorClient& gen,
                                const std::string& language) {
  const std::string prompt =
      render_stage1_prompt(language, document, personas);
  return generate_with_retries(gen, prompt, [&](const std::string& reply) {
    return parse_stage1_reply(reply, language);
  });
}

PairRecord synth_query(const SynthesisConfig& config,
                       const std::string& document, GeneratorClient& gen) {
  const std::string prompt = render_stage2_prompt(config, document);
  const std::string query =
      generate_with_retries(gen, prompt, parse_stage2_reply);
  PairRecord rec;
  rec.instruction = instruction_for(config.question_type);
  rec.query = query;
  rec.positive = document;
  rec.task_tag = TaskTag::retrieval;
  rec.language = config.language;
  rec.source = PairSource::synthetic;
  validate_record(rec);
  return rec;
}

std::vector<PairRecord> synthesize_corpus(
    const std::vector<std::string>& corpus,
    const std::vector<Persona>& personas, const EncoderParams& params,
    GeneratorClient& gen, const std::string& language,
    std::uint32_t personas_per_doc) {
  if (corpus.empty()) {
    raise(ErrorKind::invalid_input, "synthesize_corpus: empty corpus");
  }
  std::vector<PairRecord> out;
  out.reserve(corpus.size());
  for (const std::string& doc : corpus) {
    std::vector<Persona> top =
        select_personas(doc, personas, params, personas_per_doc);
    SynthesisConfig cfg = synth_configure(doc, top, gen, language);
    out.push_back(synth_query(cfg, doc, gen));
  }
  return out;
}

namespace {

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char b : text) {
    h ^= b;
    h *= 1099511628211ull;
  }
  return h;
}

// "- id: description" lines rendered by render_stage1_prompt.
std::vector<std::string> candidate_descriptions(const std::string& prompt) {
  std::vector<std::string> out;
  const std::string marker = "**Character**:\n";
  std::size_t at = prompt.find(marker);
  if (at == std::string::npos) return out;
  std::istringstream lines(prompt.substr(at + marker.size()));
  std::string line;
  while (std::getline(lines, line)) {
    if (!line.starts_with("- ")) continue;
    std::size_t sep = line.find(": ");
    out.push_back(sep == std::string::npos ? line.substr(2)
                                           : line.substr(sep + 2));
  }
  return out;
}

std::string passage_between(const std::string& prompt) {
  const std::string open = "\n**Passage**\n";
  const std::string close = "\n**Requirment**\n";
  std::size_t lo = prompt.find(open);
  if (lo == std::string::npos) return {};
  lo += open.size();
  std::size_t hi = prompt.find(close, lo);
  if (hi == std::string::npos) return {};
  return prompt.substr(lo, hi - lo);
}

std::uint32_t requested_length(const std::string& prompt) {
  const std::string marker = "should be ";
  std::size_t at = prompt.find(marker);
  if (at == std::string::npos) return 10;
  at += marker.size();
  std::uint32_t n = 0;
  while (at < prompt.size() && std::isdigit(
             static_cast<unsigned char>(prompt[at]))) {
    n = n * 10 + static_cast<std::uint32_t>(prompt[at] - '0');
    ++at;
  }
  return n == 0 ? 10 : n;
}

// Most frequent words first, ties by first appearance; cycled to reach the
// requested word count so the query always shares vocabulary with the
// passage.
std::string query_from_passage(const std::string& passage,
                               std::uint32_t length_words) {
  std::vector<std::string> order;
  std::map<std::string, std::size_t> count;
  std::istringstream words(passage);
  std::string w;
  while (words >> w) {
    if (count[w]++ == 0) order.push_back(w);
  }
  if (order.empty()) return "empty passage";
  std::stable_sort(order.begin(), order.end(),
                   [&](const std::string& a, const std::string& b) {
                     return count[a] > count[b];
                   });
  std::string query;
  for (std::uint32_t i = 0; i < length_words; ++i) {
    if (i > 0) query += ' ';
    query += order[i % order.size()];
  }
  return query;
}

}  // namespace

std::string MockGenerator::generate(const std::string& prompt) {
  if (prompt.starts_with("Given a **Passage** and **Character**,")) {
    std::vector<std::string> candidates = candidate_descriptions(prompt);
    Rng rng(Seed{seed_.value ^ fnv1a64(prompt)});
    const std::string character =
        candidates.empty()
            ? "curious reader"
            : candidates[rng.next_below(candidates.size())];
    static const char* kTypes[] = {"keywords", "acquire_knowledge",
                                   "summary", "yes_or_no", "background"};
    static const char* kLevels[] = {"high_school", "university", "phd"};
    return json{{"Character", character},
                {"Question_Type", kTypes[rng.next_below(5)]},
                {"Difficulty", kLevels[rng.next_below(3)]}}
        .dump();
  }
  if (prompt.starts_with("Given a **Character**, **Passage**,")) {
    const std::string passage = passage_between(prompt);
    return json{{"Query",
                 query_from_passage(passage, requested_length(prompt))}}
        .dump();
  }
  return "{}";  // unknown prompt shape; callers will report a parse failure
}

RemoteGenerator::RemoteGenerator(RemoteGeneratorConfig config)
    : config_(std::move(config)) {
  if (config_.base_url.empty()) {
    raise(ErrorKind::invalid_input, "remote generator: empty base url");
  }
}

std::string RemoteGenerator::generate(const std::string& prompt) {
  httplib::Client client(config_.base_url);
  client.set_connection_timeout(0, config_.timeout_ms * 1000);
  client.set_read_timeout(0, config_.timeout_ms * 1000);
  httplib::Headers headers;
  if (const char* token = std::getenv(kGeneratorTokenEnv)) {
    headers.emplace("Authorization", std::string("Bearer ") + token);
  }
  auto res = client.Post(config_.path, headers,
                         json{{"prompt", prompt}}.dump(),
                         "application/json");
  if (!res) {
    raise(ErrorKind::generation,
          "remote generator: transport error (" +
              httplib::to_string(res.error()) + ")");
  }
  if (res->status != 200) {
    raise(ErrorKind::generation, "remote generator: HTTP status " +
                                     std::to_string(res->status));
  }
  try {
    json j = json::parse(res->body);
    return j.at("text").get<std::string>();
  } catch (const json::exception& e) {
    raise(ErrorKind::generation,
          std::string("remote generator: malformed reply body: ") +
              e.what());
  }
}

}  // namespace embedkit
