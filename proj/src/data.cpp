#include "embedkit/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <unordered_set>

#include "embedkit/errors.hpp"
#include "json.hpp"

namespace embedkit {

using nlohmann::json;

std::string to_string(TaskTag tag) {
  switch (tag) {
    case TaskTag::retrieval: return "retrieval";
    case TaskTag::bitext: return "bitext";
    case TaskTag::sts: return "sts";
    case TaskTag::classification: return "classification";
  }
  raise(ErrorKind::invalid_input, "unknown task tag");
}

std::string to_string(PairSource source) {
  switch (source) {
    case PairSource::synthetic: return "synthetic";
    case PairSource::labeled: return "labeled";
  }
  raise(ErrorKind::invalid_input, "unknown pair source");
}

TaskTag task_tag_from_string(const std::string& s) {
  if (s == "retrieval") return TaskTag::retrieval;
  if (s == "bitext") return TaskTag::bitext;
  if (s == "sts") return TaskTag::sts;
  if (s == "classification") return TaskTag::classification;
  raise(ErrorKind::parse, "unknown task_tag \"" + s + "\"");
}

PairSource pair_source_from_string(const std::string& s) {
  if (s == "synthetic") return PairSource::synthetic;
  if (s == "labeled") return PairSource::labeled;
  raise(ErrorKind::parse, "unknown source \"" + s + "\"");
}

void validate_record(const PairRecord& record) {
  if (record.query.empty()) {
    raise(ErrorKind::invalid_input, "pair record: empty query");
  }
  if (record.positive.empty()) {
    raise(ErrorKind::invalid_input, "pair record: empty positive");
  }
  if (record.language.empty()) {
    raise(ErrorKind::invalid_input, "pair record: empty language tag");
  }
  for (const std::string& neg : record.negatives) {
    if (neg == record.positive) {
      raise(ErrorKind::invalid_input,
            "pair record: negative duplicates the positive text");
    }
  }
}

PairExample to_example(const PairRecord& record) {
  validate_record(record);
  return PairExample{record.instruction, record.query, record.positive,
                     record.negatives};
}

std::vector<PairExample> to_examples(const std::vector<PairRecord>& records) {
  std::vector<PairExample> out;
  out.reserve(records.size());
  for (const PairRecord& rec : records) out.push_back(to_example(rec));
  return out;
}

namespace {

const std::unordered_set<std::string> kPairKeys = {
    "instruction", "query",    "positive", "negatives",
    "task_tag",    "language", "source"};

PairRecord record_from_json(const json& j, std::size_t line_no) {
  const std::string where = "pairs: line " + std::to_string(line_no) + ": ";
  if (!j.is_object()) {
    raise(ErrorKind::parse, where + "expected a JSON object");
  }
  for (const auto& item : j.items()) {
    if (!kPairKeys.contains(item.key())) {
      raise(ErrorKind::parse, where + "unknown field \"" + item.key() + "\"");
    }
  }
  for (const std::string& key : kPairKeys) {
    if (!j.contains(key)) {
      raise(ErrorKind::parse, where + "missing field \"" + key + "\"");
    }
  }
  PairRecord rec;
  try {
    rec.instruction = j.at("instruction").get<std::string>();
    rec.query = j.at("query").get<std::string>();
    rec.positive = j.at("positive").get<std::string>();
    rec.negatives = j.at("negatives").get<std::vector<std::string>>();
    rec.task_tag = task_tag_from_string(j.at("task_tag").get<std::string>());
    rec.language = j.at("language").get<std::string>();
    rec.source = pair_source_from_string(j.at("source").get<std::string>());
  } catch (const json::exception& e) {
    raise(ErrorKind::parse, where + e.what());
  } catch (const Error& e) {
    raise(ErrorKind::parse, where + e.what());
  }
  try {
    validate_record(rec);
  } catch (const Error& e) {
    raise(ErrorKind::parse, where + e.what());
  }
  return rec;
}

json record_to_json(const PairRecord& rec) {
  return json{{"instruction", rec.instruction},
              {"query", rec.query},
              {"positive", rec.positive},
              {"negatives", rec.negatives},
              {"task_tag", to_string(rec.task_tag)},
              {"language", rec.language},
              {"source", to_string(rec.source)}};
}

}  // namespace

std::vector<PairRecord> read_pairs(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    raise(ErrorKind::io, "read_pairs: cannot open " + path.string());
  }
  std::vector<PairRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      raise(ErrorKind::parse,
            "pairs: line " + std::to_string(line_no) + ": " + e.what());
    }
    out.push_back(record_from_json(j, line_no));
  }
  return out;
}

void write_pairs(const std::vector<PairRecord>& records,
                 const std::filesystem::path& path) {
  for (const PairRecord& rec : records) validate_record(rec);
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    raise(ErrorKind::io, "write_pairs: cannot open " + path.string());
  }
  for (const PairRecord& rec : records) {
    out << record_to_json(rec).dump() << "\n";
  }
  if (!out) {
    raise(ErrorKind::io, "write_pairs: write failed for " + path.string());
  }
}

double pair_cosine(const EncoderParams& params, const PairRecord& record) {
  Vec64 q = embed(params, format_query(record.instruction, record.query));
  Vec64 d = embed(params, record.positive);
  return cosine(q, d);
}

FilterResult filter_pairs(const std::vector<PairRecord>& pairs,
                          const EncoderParams& params,
                          const FilterOptions& options) {
  if (!(options.threshold > -1.0 && options.threshold < 1.0)) {
    raise(ErrorKind::invalid_input,
          "filter_pairs: threshold must lie in (-1, 1)");
  }
  std::vector<std::size_t> picked(pairs.size());
  std::iota(picked.begin(), picked.end(), std::size_t{0});
  if (options.presample_fraction.has_value()) {
    const double f = *options.presample_fraction;
    if (!(f > 0.0 && f <= 1.0)) {
      raise(ErrorKind::invalid_input,
            "filter_pairs: presample fraction must lie in (0, 1]");
    }
    const auto want = static_cast<std::size_t>(
        std::llround(f * static_cast<double>(pairs.size())));
    Rng rng(options.seed);
    rng.shuffle(picked);
    picked.resize(std::min(want, pairs.size()));
    std::sort(picked.begin(), picked.end());  // restore input order
  }
  FilterResult result;
  result.sampled_count = picked.size();
  for (std::size_t idx : picked) validate_record(pairs[idx]);
  Vec64 cosines(picked.size());
  parallel_for(picked.size(), [&](std::size_t i) {
    cosines[i] = pair_cosine(params, pairs[picked[i]]);
  });
  for (std::size_t i = 0; i < picked.size(); ++i) {
    if (filter_keeps(cosines[i], options.threshold)) {
      result.kept.push_back(pairs[picked[i]]);
    } else {
      ++result.dropped_count;
    }
  }
  return result;
}

MineResult mine_hard_negatives(const PairRecord& record,
                               const std::vector<std::string>& corpus,
                               const EncoderParams& params, std::uint32_t k) {
  validate_record(record);
  if (k < 1) {
    raise(ErrorKind::invalid_input, "mine_hard_negatives: k must be >= 1");
  }
  if (corpus.empty()) {
    raise(ErrorKind::invalid_input, "mine_hard_negatives: empty corpus");
  }
  const Vec64 q =
      embed(params, format_query(record.instruction, record.query));
  Vec64 scores(corpus.size());
  parallel_for(corpus.size(), [&](std::size_t i) {
    scores[i] = cosine(q, embed(params, corpus[i]));
  });
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  MineResult result;
  result.record = record;
  std::unordered_set<std::string> seen(record.negatives.begin(),
                                       record.negatives.end());
  std::uint32_t added = 0;
  for (std::size_t idx : order) {
    if (added == k) break;
    const std::string& text = corpus[idx];
    if (text == record.positive || seen.contains(text)) continue;
    result.record.negatives.push_back(text);
    seen.insert(text);
    ++added;
  }
  result.shortfall = added < k;
  return result;
}

namespace {

const std::unordered_set<std::string> kPersonaKeys = {"id", "description"};

}  // namespace

std::vector<Persona> read_personas(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    raise(ErrorKind::io, "read_personas: cannot open " + path.string());
  }
  std::vector<Persona> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where =
        "personas: line " + std::to_string(line_no) + ": ";
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      raise(ErrorKind::parse, where + e.what());
    }
    if (!j.is_object()) {
      raise(ErrorKind::parse, where + "expected a JSON object");
    }
    for (const auto& item : j.items()) {
      if (!kPersonaKeys.contains(item.key())) {
        raise(ErrorKind::parse,
              where + "unknown field \"" + item.key() + "\"");
      }
    }
    Persona p;
    try {
      p.id = j.at("id").get<std::string>();
      p.description = j.at("description").get<std::string>();
    } catch (const json::exception& e) {
      raise(ErrorKind::parse, where + e.what());
    }
    if (p.id.empty() || p.description.empty()) {
      raise(ErrorKind::parse, where + "persona needs nonempty id and "
                                      "description");
    }
    out.push_back(std::move(p));
  }
  return out;
}

void write_personas(const std::vector<Persona>& personas,
                    const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    raise(ErrorKind::io, "write_personas: cannot open " + path.string());
  }
  for (const Persona& p : personas) {
    out << json{{"id", p.id}, {"description", p.description}}.dump() << "\n";
  }
  if (!out) {
    raise(ErrorKind::io, "write_personas: write failed for " + path.string());
  }
}

std::vector<Persona> select_personas(const std::string& document,
                                     const std::vector<Persona>& library,
                                     const EncoderParams& params,
                                     std::uint32_t k) {
  if (library.empty()) {
    raise(ErrorKind::invalid_input, "select_personas: empty library");
  }
  if (k < 1) {
    raise(ErrorKind::invalid_input, "select_personas: k must be >= 1");
  }
  const Vec64 doc = embed(params, document);
  Vec64 scores(library.size());
  for (std::size_t i = 0; i < library.size(); ++i) {
    if (library[i].description.empty()) {
      raise(ErrorKind::invalid_input,
            "select_personas: persona \"" + library[i].id +
                "\" has an empty description");
    }
    scores[i] = cosine(doc, embed(params, library[i].description));
  }
  std::vector<std::size_t> order(library.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return library[a].id < library[b].id;
  });
  std::vector<Persona> out;
  const std::size_t take = std::min<std::size_t>(k, library.size());
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) out.push_back(library[order[i]]);
  return out;
}

}  // namespace embedkit
