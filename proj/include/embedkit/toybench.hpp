#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "embedkit/data.hpp"
#include "embedkit/evalkit.hpp"

namespace embedkit {

// Shape of the generated cluster benchmark. Each topic owns two disjoint
// vocabularies: queries draw only from the topic's query vocabulary, while
// documents mix the topic's document vocabulary with a filler pool shared
// across topics. A purely lexical encoder therefore starts out near chance
// on query->document retrieval and must learn the cross-vocabulary mapping
// from the paired data.
struct ToyBenchSpec {
  std::uint32_t topics = 10;
  std::uint32_t docs_per_topic = 14;
  std::uint32_t queries_per_topic = 4;      // evaluation queries
  std::uint32_t train_pairs_per_topic = 20; // supervised pairs
  std::uint32_t negatives_per_pair = 2;     // distinct off-topic negatives
  std::uint32_t words_per_doc = 12;
  std::uint32_t words_per_query = 5;
  std::uint32_t query_vocab_per_topic = 8;
  std::uint32_t doc_vocab_per_topic = 8;
  std::uint32_t filler_vocab = 30;
  // Chance that a non-leading query word is off-topic filler. Keeps the
  // benchmark away from a perfect-score ceiling so ranking comparisons
  // stay informative.
  double query_filler_rate = 0.35;
  // Keyword-stuffed documents written in a topic's *query* vocabulary;
  // relevant to nothing. They sit next to the topic's queries in any
  // lexical embedding space, so retrieval alone cannot demote them — a
  // reranker trained with them as labeled negatives can.
  std::uint32_t spam_docs_per_topic = 2;
  std::uint32_t spam_negatives_per_pair = 1;  // same-topic spam, after the
                                              // cross-topic negatives
  std::uint32_t personas_per_topic = 1;
  std::string language = "en";
  std::string instruction =
      "Given a search query, retrieve the passage on the same topic.";
};

struct ToyBench {
  EvalTask task;
  std::vector<PairRecord> train_pairs;    // labeled, one hard negative each
  std::vector<std::string> corpus_texts;  // document texts, for synthesis
  std::vector<Persona> personas;          // topic-aligned role library
};

ToyBench make_toybench(const ToyBenchSpec& spec, Seed seed);

}  // namespace embedkit
