#include "embedkit/toybench.hpp"

#include <algorithm>
#include <string>

#include "embedkit/errors.hpp"

namespace embedkit {

namespace {

char index_char(std::uint32_t i) {
  return static_cast<char>('a' + i % 26);
}

std::string query_word(std::uint32_t topic, std::uint32_t i) {
  return std::string("qz") + index_char(topic) + index_char(i);
}

std::string doc_word(std::uint32_t topic, std::uint32_t i) {
  return std::string("vx") + index_char(topic) + index_char(i);
}

std::string filler_word(std::uint32_t i) {
  return std::string("ff") + index_char(i / 26) + index_char(i % 26);
}

std::string padded_id(char prefix, std::uint32_t i) {
  std::string digits = std::to_string(i);
  return prefix + std::string(4 - std::min<std::size_t>(4, digits.size()),
                              '0') +
         digits;
}

std::string sample_query_text(const ToyBenchSpec& spec, std::uint32_t topic,
                              Rng& rng) {
  std::string text;
  for (std::uint32_t w = 0; w < spec.words_per_query; ++w) {
    if (w > 0) text += ' ';
    // First word always carries the topic so every query is answerable.
    if (w > 0 && rng.next_double() < spec.query_filler_rate) {
      text += filler_word(
          static_cast<std::uint32_t>(rng.next_below(spec.filler_vocab)));
    } else {
      text += query_word(
          topic, static_cast<std::uint32_t>(
                     rng.next_below(spec.query_vocab_per_topic)));
    }
  }
  return text;
}

std::string sample_doc_text(const ToyBenchSpec& spec, std::uint32_t topic,
                            Rng& rng) {
  std::string text;
  for (std::uint32_t w = 0; w < spec.words_per_doc; ++w) {
    if (w > 0) text += ' ';
    // First word always carries the topic so every document is on-topic.
    if (w == 0 || rng.next_double() < 0.65) {
      text += doc_word(topic, static_cast<std::uint32_t>(rng.next_below(
                                  spec.doc_vocab_per_topic)));
    } else {
      text += filler_word(
          static_cast<std::uint32_t>(rng.next_below(spec.filler_vocab)));
    }
  }
  return text;
}

// Keyword stuffing: the topic's query vocabulary with a dash of filler.
std::string sample_spam_text(const ToyBenchSpec& spec, std::uint32_t topic,
                             Rng& rng) {
  std::string text;
  for (std::uint32_t w = 0; w < spec.words_per_doc; ++w) {
    if (w > 0) text += ' ';
    if (w == 0 || rng.next_double() < 0.8) {
      text += query_word(topic, static_cast<std::uint32_t>(rng.next_below(
                                    spec.query_vocab_per_topic)));
    } else {
      text += filler_word(
          static_cast<std::uint32_t>(rng.next_below(spec.filler_vocab)));
    }
  }
  return text;
}

}  // namespace

ToyBench make_toybench(const ToyBenchSpec& spec, Seed seed) {
  if (spec.topics < 2) {
    raise(ErrorKind::invalid_input, "toybench: need at least 2 topics");
  }
  if (spec.docs_per_topic < 1 || spec.queries_per_topic < 1 ||
      spec.words_per_doc < 1 || spec.words_per_query < 1 ||
      spec.query_vocab_per_topic < 1 || spec.doc_vocab_per_topic < 1 ||
      spec.filler_vocab < 1) {
    raise(ErrorKind::invalid_input, "toybench: counts must be positive");
  }
  if (spec.query_filler_rate < 0.0 || spec.query_filler_rate >= 1.0) {
    raise(ErrorKind::invalid_input,
          "toybench: query_filler_rate must be in [0, 1)");
  }
  if (spec.negatives_per_pair >
      static_cast<std::size_t>(spec.topics - 1) * spec.docs_per_topic) {
    raise(ErrorKind::invalid_input,
          "toybench: negatives_per_pair exceeds the off-topic corpus");
  }
  if (spec.spam_negatives_per_pair > spec.spam_docs_per_topic) {
    raise(ErrorKind::invalid_input,
          "toybench: spam_negatives_per_pair exceeds spam_docs_per_topic");
  }
  Rng rng(seed);
  ToyBench bench;
  std::vector<std::uint32_t> doc_topic;

  std::uint32_t doc_index = 0;
  for (std::uint32_t t = 0; t < spec.topics; ++t) {
    for (std::uint32_t d = 0; d < spec.docs_per_topic; ++d) {
      EvalDoc doc{padded_id('d', doc_index++), sample_doc_text(spec, t, rng)};
      bench.corpus_texts.push_back(doc.text);
      bench.task.corpus.push_back(std::move(doc));
      doc_topic.push_back(t);
    }
  }
  // Spam lives after the on-topic corpus; doc_topic records the topic it
  // imitates, never a relevance judgment.
  const std::size_t normal_count = bench.task.corpus.size();
  for (std::uint32_t t = 0; t < spec.topics; ++t) {
    for (std::uint32_t s = 0; s < spec.spam_docs_per_topic; ++s) {
      EvalDoc doc{padded_id('d', doc_index++), sample_spam_text(spec, t, rng)};
      bench.corpus_texts.push_back(doc.text);
      bench.task.corpus.push_back(std::move(doc));
      doc_topic.push_back(t);
    }
  }

  std::uint32_t query_index = 0;
  for (std::uint32_t t = 0; t < spec.topics; ++t) {
    for (std::uint32_t q = 0; q < spec.queries_per_topic; ++q) {
      EvalQuery query{padded_id('q', query_index++), spec.instruction,
                      sample_query_text(spec, t, rng)};
      auto& rels = bench.task.qrels[query.qid];
      for (std::size_t d = 0; d < normal_count; ++d) {
        if (doc_topic[d] == t) rels[bench.task.corpus[d].doc_id] = 1;
      }
      bench.task.queries.push_back(std::move(query));
    }
  }

  for (std::uint32_t t = 0; t < spec.topics; ++t) {
    for (std::uint32_t p = 0; p < spec.train_pairs_per_topic; ++p) {
      PairRecord rec;
      rec.instruction = spec.instruction;
      rec.query = sample_query_text(spec, t, rng);
      const std::size_t pos =
          t * spec.docs_per_topic + rng.next_below(spec.docs_per_topic);
      rec.positive = bench.task.corpus[pos].text;
      // Cross-topic negatives first (the contrastive stage reads the first
      // batch_k of them), then same-topic spam for the reranker.
      while (rec.negatives.size() < spec.negatives_per_pair) {
        const std::size_t neg = rng.next_below(normal_count);
        if (doc_topic[neg] == t) continue;
        const std::string& text = bench.task.corpus[neg].text;
        if (std::find(rec.negatives.begin(), rec.negatives.end(), text) !=
            rec.negatives.end()) {
          continue;
        }
        rec.negatives.push_back(text);
      }
      const std::size_t spam_base =
          normal_count + static_cast<std::size_t>(t) * spec.spam_docs_per_topic;
      const std::size_t target =
          rec.negatives.size() + spec.spam_negatives_per_pair;
      while (rec.negatives.size() < target) {
        const std::size_t neg =
            spam_base + rng.next_below(spec.spam_docs_per_topic);
        const std::string& text = bench.task.corpus[neg].text;
        if (std::find(rec.negatives.begin(), rec.negatives.end(), text) !=
            rec.negatives.end()) {
          continue;
        }
        rec.negatives.push_back(text);
      }
      rec.task_tag = TaskTag::retrieval;
      rec.language = spec.language;
      rec.source = PairSource::labeled;
      bench.train_pairs.push_back(std::move(rec));
    }
  }

  std::uint32_t persona_index = 0;
  for (std::uint32_t t = 0; t < spec.topics; ++t) {
    for (std::uint32_t p = 0; p < spec.personas_per_topic; ++p) {
      Persona persona;
      persona.id = padded_id('p', persona_index++);
      persona.description = "a specialist who reads " + doc_word(t, 0) +
                            " " + doc_word(t, 1) + " " + doc_word(t, 2) +
                            " papers every day";
      bench.personas.push_back(std::move(persona));
    }
  }

  validate_task(bench.task);
  return bench;
}

}  // namespace embedkit
