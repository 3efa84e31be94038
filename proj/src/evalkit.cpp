#include "embedkit/evalkit.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <unordered_set>

#include "embedkit/errors.hpp"
#include "json.hpp"

namespace embedkit {

using nlohmann::json;

namespace {

json parse_line(const std::string& line, const std::string& file,
                std::size_t line_no) {
  try {
    return json::parse(line);
  } catch (const json::exception& e) {
    raise(ErrorKind::parse,
          file + ": line " + std::to_string(line_no) + ": " + e.what());
  }
}

// Strict JSONL object reader: exactly the given keys, nothing else.
void check_keys(const json& j, const std::set<std::string>& keys,
                const std::string& where) {
  if (!j.is_object()) {
    raise(ErrorKind::parse, where + "expected a JSON object");
  }
  for (const auto& item : j.items()) {
    if (!keys.contains(item.key())) {
      raise(ErrorKind::parse, where + "unknown field \"" + item.key() + "\"");
    }
  }
  for (const std::string& key : keys) {
    if (!j.contains(key)) {
      raise(ErrorKind::parse, where + "missing field \"" + key + "\"");
    }
  }
}

template <typename PerLine>
void for_each_jsonl(const std::filesystem::path& path,
                    const std::string& file, PerLine fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    raise(ErrorKind::io, "cannot open " + path.string());
  }
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = file + ": line " + std::to_string(line_no) + ": ";
    fn(parse_line(line, file, line_no), where);
  }
}

std::string get_string(const json& j, const char* key,
                       const std::string& where) {
  try {
    return j.at(key).get<std::string>();
  } catch (const json::exception& e) {
    raise(ErrorKind::parse, where + e.what());
  }
}

}  // namespace

void validate_task(const EvalTask& task) {
  if (task.queries.empty()) {
    raise(ErrorKind::invalid_input, "eval task: no queries");
  }
  if (task.corpus.empty()) {
    raise(ErrorKind::invalid_input, "eval task: empty corpus");
  }
  std::unordered_set<std::string> qids;
  for (const EvalQuery& q : task.queries) {
    if (q.qid.empty() || q.text.empty()) {
      raise(ErrorKind::invalid_input, "eval task: query needs qid and text");
    }
    if (!qids.insert(q.qid).second) {
      raise(ErrorKind::invalid_input, "eval task: duplicate qid " + q.qid);
    }
  }
  std::unordered_set<std::string> doc_ids;
  for (const EvalDoc& d : task.corpus) {
    if (d.doc_id.empty() || d.text.empty()) {
      raise(ErrorKind::invalid_input,
            "eval task: corpus entry needs doc_id and text");
    }
    if (!doc_ids.insert(d.doc_id).second) {
      raise(ErrorKind::invalid_input,
            "eval task: duplicate doc_id " + d.doc_id);
    }
  }
  for (const auto& [qid, rels] : task.qrels) {
    if (!qids.contains(qid)) {
      raise(ErrorKind::invalid_input,
            "eval task: qrels reference unknown qid " + qid);
    }
    bool has_positive = false;
    for (const auto& [doc_id, grade] : rels) {
      if (!doc_ids.contains(doc_id)) {
        raise(ErrorKind::invalid_input,
              "eval task: qrels reference unknown doc_id " + doc_id);
      }
      if (grade < 0) {
        raise(ErrorKind::invalid_input,
              "eval task: negative grade for " + qid + "/" + doc_id);
      }
      has_positive = has_positive || grade > 0;
    }
    if (!has_positive) {
      raise(ErrorKind::invalid_input,
            "eval task: no positive judgment for qid " + qid);
    }
  }
  for (const EvalQuery& q : task.queries) {
    if (!task.qrels.contains(q.qid)) {
      raise(ErrorKind::invalid_input,
            "eval task: no judgments for qid " + q.qid);
    }
  }
}

EvalTask load_task(const std::filesystem::path& dir) {
  EvalTask task;
  for_each_jsonl(dir / "queries.jsonl", "queries",
                 [&](const json& j, const std::string& where) {
                   check_keys(j, {"qid", "instruction", "text"}, where);
                   task.queries.push_back(
                       {get_string(j, "qid", where),
                        get_string(j, "instruction", where),
                        get_string(j, "text", where)});
                 });
  for_each_jsonl(dir / "corpus.jsonl", "corpus",
                 [&](const json& j, const std::string& where) {
                   check_keys(j, {"doc_id", "text"}, where);
                   task.corpus.push_back({get_string(j, "doc_id", where),
                                          get_string(j, "text", where)});
                 });
  for_each_jsonl(
      dir / "qrels.jsonl", "qrels",
      [&](const json& j, const std::string& where) {
        check_keys(j, {"qid", "doc_id", "grade"}, where);
        std::int64_t grade = 0;
        try {
          grade = j.at("grade").get<std::int64_t>();
        } catch (const json::exception& e) {
          raise(ErrorKind::parse, where + e.what());
        }
        const std::string qid = get_string(j, "qid", where);
        const std::string doc_id = get_string(j, "doc_id", where);
        auto [it, inserted] = task.qrels[qid].emplace(doc_id, grade);
        if (!inserted) {
          raise(ErrorKind::parse,
                where + "duplicate judgment for " + qid + "/" + doc_id);
        }
      });
  validate_task(task);
  return task;
}

void save_task(const EvalTask& task, const std::filesystem::path& dir) {
  validate_task(task);
  std::filesystem::create_directories(dir);
  auto open = [](const std::filesystem::path& p) {
    std::ofstream out(p, std::ios::binary);
    if (!out) raise(ErrorKind::io, "cannot open " + p.string());
    return out;
  };
  {
    std::ofstream out = open(dir / "queries.jsonl");
    for (const EvalQuery& q : task.queries) {
      out << json{{"qid", q.qid},
                  {"instruction", q.instruction},
                  {"text", q.text}}
                 .dump()
          << "\n";
    }
  }
  {
    std::ofstream out = open(dir / "corpus.jsonl");
    for (const EvalDoc& d : task.corpus) {
      out << json{{"doc_id", d.doc_id}, {"text", d.text}}.dump() << "\n";
    }
  }
  {
    std::ofstream out = open(dir / "qrels.jsonl");
    for (const auto& [qid, rels] : task.qrels) {
      for (const auto& [doc_id, grade] : rels) {
        out << json{{"qid", qid}, {"doc_id", doc_id}, {"grade", grade}}
                   .dump()
            << "\n";
      }
    }
  }
}

namespace {

// Rank corpus indices for one query embedding: cosine desc, doc_id asc.
Ranking rank_corpus(const Vec64& query_vec, const EvalTask& task,
                    const std::vector<Vec64>& doc_vecs, std::uint32_t k) {
  Vec64 scores(task.corpus.size());
  for (std::size_t i = 0; i < doc_vecs.size(); ++i) {
    scores[i] = cosine(query_vec, doc_vecs[i]);
  }
  std::vector<std::size_t> order(task.corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return task.corpus[a].doc_id < task.corpus[b].doc_id;
  });
  const std::size_t take = std::min<std::size_t>(k, order.size());
  Ranking out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) {
    out.push_back(task.corpus[order[i]].doc_id);
  }
  return out;
}

std::vector<Vec64> embed_corpus(const EncoderParams& params,
                                const EvalTask& task) {
  std::vector<Vec64> out(task.corpus.size());
  parallel_for(task.corpus.size(), [&](std::size_t i) {
    out[i] = embed(params, task.corpus[i].text);
  });
  return out;
}

}  // namespace

std::map<std::string, Ranking> retrieve(const EncoderParams& params,
                                        const EvalTask& task,
                                        std::uint32_t k) {
  if (k < 1) {
    raise(ErrorKind::invalid_input, "retrieve: k must be >= 1");
  }
  if (task.corpus.empty()) {
    raise(ErrorKind::invalid_input, "retrieve: empty corpus");
  }
  const std::vector<Vec64> doc_vecs = embed_corpus(params, task);
  std::map<std::string, Ranking> out;
  for (const EvalQuery& q : task.queries) {
    Vec64 qv = embed(params, format_query(q.instruction, q.text));
    out[q.qid] = rank_corpus(qv, task, doc_vecs, k);
  }
  return out;
}

double ndcg_at_k(const Ranking& ranking,
                 const std::map<std::string, std::int64_t>& rels,
                 std::uint32_t k) {
  if (k < 1) {
    raise(ErrorKind::invalid_input, "ndcg_at_k: k must be >= 1");
  }
  std::vector<std::int64_t> grades;
  for (const auto& [doc_id, grade] : rels) {
    (void)doc_id;
    if (grade > 0) grades.push_back(grade);
  }
  if (grades.empty()) return 0.0;
  std::sort(grades.begin(), grades.end(), std::greater<>());
  auto gain = [](std::int64_t g) {
    return std::pow(2.0, static_cast<double>(g)) - 1.0;
  };
  double dcg = 0.0;
  const std::size_t depth = std::min<std::size_t>(k, ranking.size());
  for (std::size_t r = 0; r < depth; ++r) {
    auto it = rels.find(ranking[r]);
    if (it == rels.end() || it->second <= 0) continue;
    dcg += gain(it->second) / std::log2(static_cast<double>(r) + 2.0);
  }
  double idcg = 0.0;
  const std::size_t ideal_depth = std::min<std::size_t>(k, grades.size());
  for (std::size_t r = 0; r < ideal_depth; ++r) {
    idcg += gain(grades[r]) / std::log2(static_cast<double>(r) + 2.0);
  }
  return dcg / idcg;
}

double mrr(const Ranking& ranking,
           const std::map<std::string, std::int64_t>& rels) {
  for (std::size_t r = 0; r < ranking.size(); ++r) {
    auto it = rels.find(ranking[r]);
    if (it != rels.end() && it->second > 0) {
      return 1.0 / (static_cast<double>(r) + 1.0);
    }
  }
  return 0.0;
}

double recall_at_k(const Ranking& ranking,
                   const std::map<std::string, std::int64_t>& rels,
                   std::uint32_t k) {
  if (k < 1) {
    raise(ErrorKind::invalid_input, "recall_at_k: k must be >= 1");
  }
  std::size_t total = 0;
  for (const auto& [doc_id, grade] : rels) {
    (void)doc_id;
    if (grade > 0) ++total;
  }
  if (total == 0) return 0.0;
  std::size_t hits = 0;
  const std::size_t depth = std::min<std::size_t>(k, ranking.size());
  for (std::size_t r = 0; r < depth; ++r) {
    auto it = rels.find(ranking[r]);
    if (it != rels.end() && it->second > 0) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

namespace {

const std::map<std::string, std::int64_t> kNoRels;

const std::map<std::string, std::int64_t>& rels_for(const EvalTask& task,
                                                    const std::string& qid) {
  auto it = task.qrels.find(qid);
  return it == task.qrels.end() ? kNoRels : it->second;
}

EvalReport report_from_rankings(
    const EvalTask& task, const std::map<std::string, Ranking>& rankings,
    std::uint32_t k_metric, const std::string& config_digest) {
  EvalReport report;
  report.k_metric = k_metric;
  report.config_digest = config_digest;
  for (const auto& [qid, ranking] : rankings) {
    const auto& rels = rels_for(task, qid);
    QueryMetrics m;
    m.ndcg = ndcg_at_k(ranking, rels, k_metric);
    m.mrr = mrr(ranking, rels);
    m.recall = recall_at_k(ranking, rels, k_metric);
    report.per_query.emplace(qid, m);
  }
  for (const auto& [qid, m] : report.per_query) {
    (void)qid;
    report.mean_ndcg += m.ndcg;
    report.mean_mrr += m.mrr;
    report.mean_recall += m.recall;
  }
  const double n = static_cast<double>(report.per_query.size());
  if (n > 0) {
    report.mean_ndcg /= n;
    report.mean_mrr /= n;
    report.mean_recall /= n;
  }
  return report;
}

}  // namespace

EvalReport evaluate_retrieval(const EncoderParams& params,
                              const EvalTask& task, std::uint32_t k,
                              const std::string& config_digest) {
  validate_task(task);
  const auto start = std::chrono::steady_clock::now();
  EvalReport report = report_from_rankings(task, retrieve(params, task, k),
                                           k, config_digest);
  report.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  return report;
}

EvalReport evaluate_rerank_pipeline(const EncoderParams& embed_params,
                                    const RerankScorer& scorer,
                                    const EvalTask& task,
                                    std::uint32_t k_retrieve,
                                    std::uint32_t k_metric,
                                    const std::string& config_digest) {
  validate_task(task);
  const auto start = std::chrono::steady_clock::now();
  std::map<std::string, const EvalQuery*> by_qid;
  for (const EvalQuery& q : task.queries) by_qid.emplace(q.qid, &q);
  std::map<std::string, std::string> doc_text;
  for (const EvalDoc& d : task.corpus) doc_text.emplace(d.doc_id, d.text);
  std::map<std::string, Ranking> reranked;
  for (auto& [qid, ranking] : retrieve(embed_params, task, k_retrieve)) {
    const EvalQuery& q = *by_qid.at(qid);
    std::vector<std::pair<double, std::string>> scored;
    scored.reserve(ranking.size());
    for (const std::string& doc_id : ranking) {
      scored.emplace_back(scorer(q, doc_id, doc_text.at(doc_id)), doc_id);
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    Ranking& out = reranked[qid];
    out.reserve(scored.size());
    for (const auto& [score, doc_id] : scored) {
      (void)score;
      out.push_back(doc_id);
    }
  }
  EvalReport report =
      report_from_rankings(task, reranked, k_metric, config_digest);
  report.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  return report;
}

EvalReport evaluate_rerank_pipeline(const EncoderParams& embed_params,
                                    const RerankParams& rerank_params,
                                    const EvalTask& task,
                                    std::uint32_t k_retrieve,
                                    std::uint32_t k_metric,
                                    const std::string& config_digest) {
  // Per-query embedding of the instructed query is shared across its
  // candidates via rerank(); route through the scorer overload for the
  // ordering, but compute scores with the real model.
  std::map<std::string, std::map<std::string, double>> scores;
  std::map<std::string, const EvalQuery*> by_qid;
  for (const EvalQuery& q : task.queries) by_qid.emplace(q.qid, &q);
  std::map<std::string, std::string> doc_text;
  for (const EvalDoc& d : task.corpus) doc_text.emplace(d.doc_id, d.text);
  validate_task(task);
  for (auto& [qid, ranking] : retrieve(embed_params, task, k_retrieve)) {
    const EvalQuery& q = *by_qid.at(qid);
    std::vector<std::pair<std::string, std::string>> candidates;
    candidates.reserve(ranking.size());
    for (const std::string& doc_id : ranking) {
      candidates.emplace_back(doc_id, doc_text.at(doc_id));
    }
    for (const ScoredCandidate& sc :
         rerank(rerank_params, q.instruction, q.text, candidates)) {
      scores[qid].emplace(sc.doc_id, sc.score);
    }
  }
  return evaluate_rerank_pipeline(
      embed_params,
      [&](const EvalQuery& q, const std::string& doc_id,
          const std::string& text) {
        (void)text;
        return scores.at(q.qid).at(doc_id);
      },
      task, k_retrieve, k_metric, config_digest);
}

std::string report_to_json(const EvalReport& report) {
  json per_query = json::object();
  for (const auto& [qid, m] : report.per_query) {
    per_query[qid] = {
        {"ndcg", m.ndcg}, {"mrr", m.mrr}, {"recall", m.recall}};
  }
  json j = {{"config_digest", report.config_digest},
            {"k_metric", report.k_metric},
            {"means",
             {{"ndcg", report.mean_ndcg},
              {"mrr", report.mean_mrr},
              {"recall", report.mean_recall}}},
            {"per_query", per_query}};
  return j.dump(2) + "\n";
}

void write_report(const EvalReport& report,
                  const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    raise(ErrorKind::io, "write_report: cannot open " + path.string());
  }
  out << report_to_json(report);
  if (!out) {
    raise(ErrorKind::io, "write_report: write failed for " + path.string());
  }
}

EvalReport read_report(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    raise(ErrorKind::io, "read_report: cannot open " + path.string());
  }
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    raise(ErrorKind::parse, "report " + path.string() + ": " + e.what());
  }
  EvalReport report;
  try {
    report.config_digest = j.at("config_digest").get<std::string>();
    report.k_metric = j.at("k_metric").get<std::uint32_t>();
    report.mean_ndcg = j.at("means").at("ndcg").get<double>();
    report.mean_mrr = j.at("means").at("mrr").get<double>();
    report.mean_recall = j.at("means").at("recall").get<double>();
    for (const auto& item : j.at("per_query").items()) {
      QueryMetrics m;
      m.ndcg = item.value().at("ndcg").get<double>();
      m.mrr = item.value().at("mrr").get<double>();
      m.recall = item.value().at("recall").get<double>();
      report.per_query.emplace(item.key(), m);
    }
  } catch (const json::exception& e) {
    raise(ErrorKind::parse, "report " + path.string() + ": " + e.what());
  }
  return report;
}

std::string to_string(AblationLabel label) {
  switch (label) {
    case AblationLabel::only_synthetic: return "only_synthetic";
    case AblationLabel::no_synthetic: return "no_synthetic";
    case AblationLabel::no_merge: return "no_merge";
    case AblationLabel::full: return "full";
  }
  raise(ErrorKind::invalid_input, "unknown ablation label");
}

AblationLabel ablation_label_from_string(const std::string& s) {
  if (s == "only_synthetic") return AblationLabel::only_synthetic;
  if (s == "no_synthetic") return AblationLabel::no_synthetic;
  if (s == "no_merge") return AblationLabel::no_merge;
  if (s == "full") return AblationLabel::full;
  raise(ErrorKind::parse, "unknown ablation label \"" + s + "\"");
}

AblationSetting ablation_setting(AblationLabel label) {
  switch (label) {
    case AblationLabel::only_synthetic:
      return {label, true, false, false};
    case AblationLabel::no_synthetic:
      return {label, false, true, true};
    case AblationLabel::no_merge:
      return {label, true, true, false};
    case AblationLabel::full:
      return {label, true, true, true};
  }
  raise(ErrorKind::invalid_input, "unknown ablation label");
}

std::vector<AblationSetting> default_ablation_settings() {
  return {ablation_setting(AblationLabel::full),
          ablation_setting(AblationLabel::no_merge),
          ablation_setting(AblationLabel::no_synthetic),
          ablation_setting(AblationLabel::only_synthetic)};
}

namespace {

void check_setting(const AblationSetting& s) {
  const AblationSetting canon = ablation_setting(s.label);
  if (s.use_stage1 != canon.use_stage1 || s.use_stage2 != canon.use_stage2 ||
      s.use_merge != canon.use_merge) {
    raise(ErrorKind::invalid_input,
          "ablation: toggles do not match label " + to_string(s.label));
  }
}

}  // namespace

std::map<std::string, AblationRun> run_ablation(
    const std::vector<AblationSetting>& settings,
    const AblationInputs& inputs, Seed seed) {
  if (settings.empty()) {
    raise(ErrorKind::invalid_input, "ablation: no settings");
  }
  validate_task(inputs.task);
  std::map<std::string, AblationRun> out;
  for (const AblationSetting& setting : settings) {
    check_setting(setting);
    const std::string label = to_string(setting.label);
    if (out.contains(label)) {
      raise(ErrorKind::invalid_input, "ablation: duplicate setting " + label);
    }
    StagePlan plan;
    if (setting.use_stage1) plan.stage1 = inputs.stage1_config;
    plan.stage2 = inputs.stage2_config;
    if (!setting.use_stage2) plan.stage2.steps = 0;
    TrainResult trained = train_embedding(
        inputs.initial, plan, inputs.stage1_data, inputs.stage2_data, seed);
    AblationRun run;
    run.pre_merge = trained.checkpoints.back();
    run.model = run.pre_merge;
    if (setting.use_merge) {
      std::vector<Checkpoint> pool;
      for (const Checkpoint& ck : trained.checkpoints) {
        if (ck.step > 0) pool.push_back(ck);
      }
      if (pool.size() > inputs.merge_last_k) {
        pool.erase(pool.begin(),
                   pool.end() - static_cast<std::ptrdiff_t>(
                                    inputs.merge_last_k));
      }
      if (pool.size() >= 2) {
        MergePlan merge_plan;
        merge_plan.inputs = std::move(pool);
        merge_plan.t_schedule = default_t_schedule(merge_plan.inputs.size());
        merge_plan.per_tensor = inputs.merge_per_tensor;
        run.model = merge_checkpoints(merge_plan);
      }
    }
    run.report =
        evaluate_retrieval(encoder_from_checkpoint(run.model), inputs.task,
                           inputs.k_metric, label);
    out.emplace(label, std::move(run));
  }
  return out;
}

}  // namespace embedkit
