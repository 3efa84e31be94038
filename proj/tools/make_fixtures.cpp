// Generates the deterministic fixture bundle used by the acceptance tests:
// a toy retrieval task, pair files, pretrained checkpoints, the run config
// that produced them, and a golden evaluation report.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "embedkit/config.hpp"
#include "embedkit/data.hpp"
#include "embedkit/evalkit.hpp"
#include "embedkit/synthesis.hpp"
#include "embedkit/toybench.hpp"

namespace fs = std::filesystem;
using namespace embedkit;

namespace {

RunConfig fixture_config() {
  RunConfig cfg;
  cfg.seed = 42;
  cfg.threads = 1;
  cfg.encoder.feature_dim = 2048;
  cfg.encoder.embed_dim = 16;
  cfg.encoder.arch = ArchTag::linear;

  cfg.stage1.steps = 150;
  cfg.stage1.learning_rate = 0.01;
  cfg.stage1.batch_n = 8;
  cfg.stage1.batch_k = 0;  // synthetic pairs train on in-batch negatives
  cfg.stage1.checkpoint_every = 50;

  cfg.stage2.steps = 300;
  cfg.stage2.learning_rate = 0.04;
  cfg.stage2.batch_n = 8;
  cfg.stage2.batch_k = 1;
  cfg.stage2.checkpoint_every = 60;

  cfg.rerank.steps = 400;
  cfg.rerank.learning_rate = 0.3;
  cfg.rerank.batch_n = 16;

  cfg.merge.last_k = 3;
  return cfg;
}

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorKind::io, "cannot open " + path.string());
  for (const std::string& line : lines) out << line << "\n";
}

std::vector<RerankInstance> rerank_instances(
    const std::vector<PairRecord>& pairs) {
  std::vector<RerankInstance> out;
  for (const PairRecord& rec : pairs) {
    out.push_back(make_instance(rec.instruction, rec.query, rec.positive,
                                RerankLabel::yes));
    for (const std::string& neg : rec.negatives) {
      out.push_back(
          make_instance(rec.instruction, rec.query, neg, RerankLabel::no));
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: make_fixtures <out-dir>\n";
    return 1;
  }
  try {
    const fs::path dir = argv[1];
    fs::create_directories(dir);

    const RunConfig cfg = fixture_config();
    {
      std::ofstream out(dir / "toytask.json", std::ios::binary);
      out << run_config_to_json(cfg);
    }

    const ToyBench bench = make_toybench(ToyBenchSpec{}, Seed{cfg.seed});
    save_task(bench.task, dir / "toytask");
    write_lines(dir / "corpus.txt", bench.corpus_texts);
    write_personas(bench.personas, dir / "personas.jsonl");
    write_pairs(bench.train_pairs, dir / "supervised_pairs.jsonl");

    const EncoderParams initial = encoder_from_config(cfg, Seed{cfg.seed});
    MockGenerator gen(Seed{cfg.seed});
    const std::vector<PairRecord> synthetic = synthesize_corpus(
        bench.corpus_texts, bench.personas, initial, gen,
        cfg.synthesis.language, cfg.synthesis.personas_per_doc);
    write_pairs(synthetic, dir / "stage1_pairs.jsonl");

    AblationInputs inputs;
    inputs.initial = initial;
    inputs.stage1_config = cfg.stage1;
    inputs.stage2_config = cfg.stage2;
    inputs.stage1_data = to_examples(synthetic);
    inputs.stage2_data = to_examples(bench.train_pairs);
    inputs.task = bench.task;
    inputs.k_metric = cfg.eval.k_metric;
    inputs.merge_last_k = cfg.merge.last_k;
    inputs.merge_per_tensor = cfg.merge.per_tensor;
    const auto runs =
        run_ablation(default_ablation_settings(), inputs, Seed{cfg.seed});

    const EvalReport untrained =
        evaluate_retrieval(initial, bench.task, cfg.eval.k_metric);
    write_report(untrained, dir / "untrained_report.json");
    std::cerr << "untrained mean ndcg@" << cfg.eval.k_metric << ": "
              << untrained.mean_ndcg << "\n";
    for (const auto& [label, run] : runs) {
      write_report(run.report, dir / ("ablate-" + label + ".json"));
      std::cerr << label << " mean ndcg@" << cfg.eval.k_metric << ": "
                << run.report.mean_ndcg << "\n";
    }

    const Checkpoint embed_ck = runs.at("full").model;
    save_checkpoint(embed_ck, dir / "toy-embed.ckpt");
    const EncoderParams trained = encoder_from_checkpoint(embed_ck);

    const RerankTrainResult rr =
        train_reranker(init_rerank_params(Seed{cfg.seed}, trained),
                       cfg.rerank, rerank_instances(bench.train_pairs),
                       Seed{cfg.seed});
    save_checkpoint(rr.checkpoints.back(), dir / "toy-rerank.ckpt");

    const EvalReport golden = evaluate_retrieval(
        trained, bench.task, cfg.eval.k_metric, config_digest(cfg));
    write_report(golden, dir / "eval_report.json");

    const EvalReport reranked = evaluate_rerank_pipeline(
        trained, rr.final_params, bench.task, cfg.eval.k_retrieve,
        cfg.eval.k_metric, config_digest(cfg));
    std::cerr << "embed-only mean ndcg@" << cfg.eval.k_metric << ": "
              << golden.mean_ndcg << "\n";
    std::cerr << "reranked   mean ndcg@" << cfg.eval.k_metric << ": "
              << reranked.mean_ndcg << "\n";
    std::cerr << "fixtures written to " << dir << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "make_fixtures: " << e.what() << "\n";
    return 1;
  }
}
