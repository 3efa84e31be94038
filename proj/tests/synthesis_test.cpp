#include <cstdlib>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "doctest.h"
#include "embedkit/synthesis.hpp"
#include "httplib.h"
#include "json.hpp"

using namespace embedkit;

namespace {

std::size_t word_count(const std::string& text) {
  std::istringstream in(text);
  std::string w;
  std::size_t n = 0;
  while (in >> w) ++n;
  return n;
}

const std::vector<Persona> kCandidates = {
    {"p-1", "a lighthouse keeper with a telescope"},
    {"p-2", "an apprentice glassblower"},
    {"p-3", "a retired orchestra conductor"},
};

// Generator stub with a scripted reply sequence.
class ScriptedGenerator : public GeneratorClient {
 public:
  explicit ScriptedGenerator(std::vector<std::string> replies)
      : replies_(std::move(replies)) {}

  std::string generate(const std::string&) override {
    ++calls;
    if (calls <= replies_.size()) return replies_[calls - 1];
    return replies_.back();
  }

  std::size_t calls = 0;

 private:
  std::vector<std::string> replies_;
};

class ThrowingGenerator : public GeneratorClient {
 public:
  std::string generate(const std::string&) override {
    ++calls;
    raise(ErrorKind::io, "socket fell over");
  }
  std::size_t calls = 0;
};

// Local HTTP endpoint for the remote-generator tests.
struct TestServer {
  httplib::Server svr;
  int port = 0;
  std::thread thread;

  void start() {
    port = svr.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    thread = std::thread([this] { svr.listen_after_bind(); });
    svr.wait_until_ready();
  }

  std::string url() const { return "http://127.0.0.1:" + std::to_string(port); }

  ~TestServer() {
    svr.stop();
    if (thread.joinable()) thread.join();
  }
};

}  // namespace

TEST_SUITE("synthesis") {

TEST_CASE("enum names and difficulty lengths") {
  for (QuestionType t :
       {QuestionType::keywords, QuestionType::acquire_knowledge,
        QuestionType::summary, QuestionType::yes_or_no,
        QuestionType::background}) {
    CHECK(question_type_from_string(to_string(t)) == t);
  }
  for (Difficulty d :
       {Difficulty::high_school, Difficulty::university, Difficulty::phd}) {
    CHECK(difficulty_from_string(to_string(d)) == d);
  }
  CHECK_THROWS_AS(question_type_from_string("trivia"), Error);
  CHECK_THROWS_AS(difficulty_from_string("kindergarten"), Error);

  CHECK(length_from_difficulty(Difficulty::high_school) == 10);
  CHECK(length_from_difficulty(Difficulty::university) == 20);
  CHECK(length_from_difficulty(Difficulty::phd) == 30);
}

TEST_CASE("stage-1 prompt renders the exact template") {
  const std::string prompt =
      render_stage1_prompt("fr", "The tide tables of 1893.", kCandidates);

  CHECK(prompt.starts_with(
      "Given a **Passage** and **Character**, select the appropriate option "
      "from three fields: Character, Question_Type, Difficulty, and return "
      "the output in JSON format.\n"));
  CHECK(prompt.find("Question_Type:\n- keywords: ...\n- acquire_knowledge: "
                    "...\n- summary: ...\n- yes_or_no: ...\n- background: "
                    "...\n") != std::string::npos);
  CHECK(prompt.find("Difficulty:\n- high_school: ...\n- university: ...\n- "
                    "phd: ...\n") != std::string::npos);
  CHECK(prompt.find("Here are some examples\n<Example1> <Example2> "
                    "<Example3>\n") != std::string::npos);
  // Language slot substituted; character list one "- id: description" line
  // per candidate, in order.
  CHECK(prompt.find("the **Passage** will be in fr language and the "
                    "**Character** will be in English.") !=
        std::string::npos);
  CHECK(prompt.ends_with(
      "**Passage**:\nThe tide tables of 1893.\n"
      "**Character**:\n"
      "- p-1: a lighthouse keeper with a telescope\n"
      "- p-2: an apprentice glassblower\n"
      "- p-3: a retired orchestra conductor\n"));

  CHECK_THROWS_AS(render_stage1_prompt("en", "", kCandidates), Error);
  CHECK_THROWS_AS(render_stage1_prompt("en", "passage", {}), Error);
}

TEST_CASE("stage-2 prompt renders the exact template, spelling intact") {
  SynthesisConfig cfg;
  cfg.character = "a retired orchestra conductor";
  cfg.question_type = QuestionType::summary;
  cfg.difficulty = Difficulty::phd;
  cfg.length_words = 30;
  cfg.language = "de";
  const std::string prompt = render_stage2_prompt(cfg, "Score annotations.");

  CHECK(prompt.starts_with(
      "Given a **Character**, **Passage**, and **Requirement**, generate a "
      "query from the **Character**'s perspective that satisfies the "
      "**Requirement** and can be used to retrieve the **Passage**. Please "
      "return the result in JSON format.\n"));
  CHECK(prompt.find("the **Passage** will be in de language, the "
                    "**Character** and **Requirement** will be in English.") !=
        std::string::npos);
  CHECK(prompt.find("with the key in English and the value in de "
                    "language.") != std::string::npos);
  CHECK(prompt.find("**Character**\na retired orchestra conductor\n"
                    "**Passage**\nScore annotations.\n") != std::string::npos);
  // The requirement block keeps its historical spellings.
  CHECK(prompt.ends_with(
      "**Requirment**\n"
      "- Type: summary;\n"
      "- Difficulty: phd;\n"
      "- Length: the length of the generated sentences should be 30 words;\n"
      "- Languange: the language in which the results are generated should "
      "be de language;\n"));

  CHECK_THROWS_AS(render_stage2_prompt(cfg, ""), Error);
}

TEST_CASE("mock generator is a pure function of seed and prompt") {
  MockGenerator a(Seed{5});
  MockGenerator b(Seed{5});
  const std::string prompt =
      render_stage1_prompt("en", "A passage about canal locks.", kCandidates);
  CHECK(a.generate(prompt) == b.generate(prompt));
  // Stateless across calls: repeating the same prompt repeats the reply.
  CHECK(a.generate(prompt) == b.generate(prompt));

  auto j = nlohmann::json::parse(a.generate(prompt));
  CHECK(j.contains("Character"));
  CHECK_NOTHROW(question_type_from_string(j.at("Question_Type")));
  CHECK_NOTHROW(difficulty_from_string(j.at("Difficulty")));
}

TEST_CASE("synth_configure fills the config from the reply") {
  MockGenerator gen(Seed{9});
  SynthesisConfig cfg = synth_configure("A passage about canal locks.",
                                        kCandidates, gen, "en");
  bool known = false;
  for (const Persona& p : kCandidates) {
    if (cfg.character == p.description) known = true;
  }
  CHECK(known);
  CHECK(cfg.length_words == length_from_difficulty(cfg.difficulty));
  CHECK(cfg.language == "en");
}

TEST_CASE("synth_query produces a synthetic retrieval record") {
  SynthesisConfig cfg;
  cfg.character = "an apprentice glassblower";
  cfg.question_type = QuestionType::yes_or_no;
  cfg.difficulty = Difficulty::university;
  cfg.length_words = 20;
  cfg.language = "en";
  const std::string document =
      "Annealing relieves internal stress in blown glass by slow cooling.";

  MockGenerator gen(Seed{10});
  PairRecord rec = synth_query(cfg, document, gen);
  CHECK(rec.positive == document);
  CHECK(rec.source == PairSource::synthetic);
  CHECK(rec.task_tag == TaskTag::retrieval);
  CHECK(rec.language == "en");
  CHECK(rec.negatives.empty());
  CHECK(word_count(rec.query) == 20);
  CHECK(rec.instruction ==
        "Given a yes-or-no question, retrieve the passage that decides it.");

  cfg.question_type = QuestionType::keywords;
  CHECK(synth_query(cfg, document, gen).instruction ==
        "Given keywords, retrieve the passage they describe.");
}

TEST_CASE("parse failures retry, then surface the last reply") {
  ScriptedGenerator gen({"not json at all"});
  try {
    synth_configure("doc text", kCandidates, gen, "en");
    FAIL("expected a generation error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::generation);
    std::string what = e.what();
    CHECK(what.find("4 attempts") != std::string::npos);
    CHECK(what.find("last reply: not json at all") != std::string::npos);
  }
  CHECK(gen.calls == 1 + kGeneratorRetries);
}

TEST_CASE("a late valid reply succeeds on the final attempt") {
  const std::string good = nlohmann::json{{"Character", "someone"},
                                          {"Question_Type", "summary"},
                                          {"Difficulty", "phd"}}
                               .dump();
  ScriptedGenerator gen({"junk", "{}", "[1]", good});
  SynthesisConfig cfg = synth_configure("doc text", kCandidates, gen, "en");
  CHECK(gen.calls == 4);
  CHECK(cfg.character == "someone");
  CHECK(cfg.question_type == QuestionType::summary);
  CHECK(cfg.length_words == 30);
}

TEST_CASE("non-parse generator errors propagate immediately") {
  ThrowingGenerator gen;
  try {
    synth_configure("doc text", kCandidates, gen, "en");
    FAIL("expected the transport error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::io);
  }
  CHECK(gen.calls == 1);  // no retries on non-parse failures
}

TEST_CASE("empty stage-1 character is rejected") {
  const std::string empty_character =
      nlohmann::json{{"Character", ""},
                     {"Question_Type", "summary"},
                     {"Difficulty", "phd"}}
          .dump();
  ScriptedGenerator gen({empty_character});
  CHECK_THROWS_AS(synth_configure("doc", kCandidates, gen, "en"), Error);
  CHECK(gen.calls == 1 + kGeneratorRetries);  // treated as a parse failure
}

TEST_CASE("synthesize_corpus covers every document") {
  std::vector<std::string> corpus;
  for (int i = 0; i < 20; ++i) {
    corpus.push_back("document " + std::to_string(i) +
                     " about subject " + std::to_string(i % 4));
  }
  EncoderParams enc = init_params(Seed{71}, 512, 16, ArchTag::linear);
  MockGenerator gen(Seed{72});
  std::vector<PairRecord> records =
      synthesize_corpus(corpus, kCandidates, enc, gen, "en");
  REQUIRE(records.size() == corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    CHECK(records[i].positive == corpus[i]);
    CHECK(records[i].source == PairSource::synthetic);
    CHECK_NOTHROW(validate_record(records[i]));
  }
  CHECK_THROWS_AS(synthesize_corpus({}, kCandidates, enc, gen, "en"), Error);
}

TEST_CASE("remote generator round-trips through a local endpoint") {
  TestServer server;
  std::string seen_prompt;
  std::string seen_auth;
  server.svr.Post("/generate", [&](const httplib::Request& req,
                                   httplib::Response& res) {
    auto body = nlohmann::json::parse(req.body);
    seen_prompt = body.at("prompt").get<std::string>();
    seen_auth = req.get_header_value("Authorization");
    res.set_content(nlohmann::json{{"text", "reply for: " + seen_prompt}}
                        .dump(),
                    "application/json");
  });
  server.start();

  setenv(kGeneratorTokenEnv, "token-123", 1);
  RemoteGenerator gen(RemoteGeneratorConfig{server.url(), "/generate", 2000});
  CHECK(gen.generate("hello endpoint") == "reply for: hello endpoint");
  CHECK(seen_prompt == "hello endpoint");
  CHECK(seen_auth == "Bearer token-123");
  unsetenv(kGeneratorTokenEnv);

  CHECK(gen.generate("second call") == "reply for: second call");
  CHECK(seen_auth.empty());  // no header once the token is gone
}

TEST_CASE("remote generator surfaces HTTP and body failures") {
  TestServer server;
  server.svr.Post("/fail", [](const httplib::Request&, httplib::Response& res) {
    res.status = 500;
    res.set_content("boom", "text/plain");
  });
  server.svr.Post("/junk", [](const httplib::Request&, httplib::Response& res) {
    res.set_content("this is not json", "text/plain");
  });
  server.start();

  RemoteGenerator bad_status(
      RemoteGeneratorConfig{server.url(), "/fail", 2000});
  try {
    bad_status.generate("x");
    FAIL("expected a generation error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::generation);
    CHECK(std::string(e.what()).find("500") != std::string::npos);
  }

  RemoteGenerator bad_body(RemoteGeneratorConfig{server.url(), "/junk", 2000});
  try {
    bad_body.generate("x");
    FAIL("expected a generation error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::generation);
  }

  CHECK_THROWS_AS(RemoteGenerator(RemoteGeneratorConfig{"", "/x", 100}),
                  Error);
}

TEST_CASE("remote generator reports transport errors") {
  // Nothing listens on the server's port once it is stopped.
  int dead_port;
  {
    TestServer server;
    server.start();
    dead_port = server.port;
  }
  RemoteGenerator gen(RemoteGeneratorConfig{
      "http://127.0.0.1:" + std::to_string(dead_port), "/generate", 2000});
  try {
    gen.generate("x");
    FAIL("expected a generation error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::generation);
  }
}

}  // TEST_SUITE
