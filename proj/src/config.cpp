#include "embedkit/config.hpp"

#include <fstream>
#include <set>

#include "embedkit/errors.hpp"
#include "json.hpp"

namespace embedkit {

using nlohmann::json;

std::string to_string(ArchTag arch) {
  switch (arch) {
    case ArchTag::linear: return "linear";
    case ArchTag::mlp1: return "mlp1";
  }
  raise(ErrorKind::invalid_input, "unknown arch tag");
}

ArchTag arch_from_string(const std::string& s) {
  if (s == "linear") return ArchTag::linear;
  if (s == "mlp1") return ArchTag::mlp1;
  raise(ErrorKind::parse, "unknown arch \"" + s + "\"");
}

namespace {

void check_object(const json& j, const std::set<std::string>& keys,
                  const std::string& where) {
  if (!j.is_object()) {
    raise(ErrorKind::parse, "config: " + where + " must be an object");
  }
  for (const auto& item : j.items()) {
    if (!keys.contains(item.key())) {
      raise(ErrorKind::parse,
            "config: unknown field \"" + where + "." + item.key() + "\"");
    }
  }
}

template <typename T>
void maybe(const json& j, const char* key, T& slot,
           const std::string& where) {
  if (!j.contains(key)) return;
  try {
    slot = j.at(key).get<T>();
  } catch (const json::exception& e) {
    raise(ErrorKind::parse,
          "config: field \"" + where + "." + key + "\": " + e.what());
  }
}

void apply_stage(const json& j, StageConfig& stage,
                 const std::string& where) {
  check_object(j,
               {"steps", "learning_rate", "momentum", "tau", "batch_n",
                "batch_k", "checkpoint_every", "mrl_dims"},
               where);
  maybe(j, "steps", stage.steps, where);
  maybe(j, "learning_rate", stage.learning_rate, where);
  maybe(j, "momentum", stage.momentum, where);
  maybe(j, "tau", stage.tau, where);
  maybe(j, "batch_n", stage.batch_n, where);
  maybe(j, "batch_k", stage.batch_k, where);
  maybe(j, "checkpoint_every", stage.checkpoint_every, where);
  maybe(j, "mrl_dims", stage.mrl_dims, where);
}

}  // namespace

RunConfig run_config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    raise(ErrorKind::parse, std::string("config: ") + e.what());
  }
  check_object(j,
               {"config_version", "seed", "threads", "encoder", "stage1",
                "stage2", "rerank", "merge", "filter", "synthesis", "eval"},
               "<root>");
  RunConfig cfg;
  maybe(j, "config_version", cfg.config_version, "<root>");
  if (cfg.config_version != kConfigVersion) {
    raise(ErrorKind::format_version,
          "config: unsupported config_version " +
              std::to_string(cfg.config_version));
  }
  maybe(j, "seed", cfg.seed, "<root>");
  maybe(j, "threads", cfg.threads, "<root>");
  if (j.contains("encoder")) {
    const json& e = j.at("encoder");
    check_object(
        e, {"feature_dim", "embed_dim", "arch", "ngram_lo", "ngram_hi"},
        "encoder");
    maybe(e, "feature_dim", cfg.encoder.feature_dim, "encoder");
    maybe(e, "embed_dim", cfg.encoder.embed_dim, "encoder");
    if (e.contains("arch")) {
      std::string arch;
      maybe(e, "arch", arch, "encoder");
      cfg.encoder.arch = arch_from_string(arch);
    }
    maybe(e, "ngram_lo", cfg.encoder.ngram_lo, "encoder");
    maybe(e, "ngram_hi", cfg.encoder.ngram_hi, "encoder");
  }
  if (j.contains("stage1")) apply_stage(j.at("stage1"), cfg.stage1, "stage1");
  if (j.contains("stage2")) apply_stage(j.at("stage2"), cfg.stage2, "stage2");
  if (j.contains("rerank")) {
    const json& r = j.at("rerank");
    check_object(r,
                 {"steps", "learning_rate", "momentum", "batch_n",
                  "checkpoint_every"},
                 "rerank");
    maybe(r, "steps", cfg.rerank.steps, "rerank");
    maybe(r, "learning_rate", cfg.rerank.learning_rate, "rerank");
    maybe(r, "momentum", cfg.rerank.momentum, "rerank");
    maybe(r, "batch_n", cfg.rerank.batch_n, "rerank");
    maybe(r, "checkpoint_every", cfg.rerank.checkpoint_every, "rerank");
  }
  if (j.contains("merge")) {
    const json& m = j.at("merge");
    check_object(m, {"last_k", "per_tensor", "t_schedule"}, "merge");
    maybe(m, "last_k", cfg.merge.last_k, "merge");
    maybe(m, "per_tensor", cfg.merge.per_tensor, "merge");
    maybe(m, "t_schedule", cfg.merge.t_schedule, "merge");
  }
  if (j.contains("filter")) {
    const json& f = j.at("filter");
    check_object(f, {"threshold", "presample_fraction"}, "filter");
    maybe(f, "threshold", cfg.filter.threshold, "filter");
    if (f.contains("presample_fraction") &&
        !f.at("presample_fraction").is_null()) {
      double fraction = 0.0;
      maybe(f, "presample_fraction", fraction, "filter");
      cfg.filter.presample_fraction = fraction;
    }
  }
  if (j.contains("synthesis")) {
    const json& s = j.at("synthesis");
    check_object(s, {"language", "personas_per_doc"}, "synthesis");
    maybe(s, "language", cfg.synthesis.language, "synthesis");
    maybe(s, "personas_per_doc", cfg.synthesis.personas_per_doc, "synthesis");
  }
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    check_object(e, {"k_retrieve", "k_metric"}, "eval");
    maybe(e, "k_retrieve", cfg.eval.k_retrieve, "eval");
    maybe(e, "k_metric", cfg.eval.k_metric, "eval");
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    raise(ErrorKind::io, "config: cannot open " + path.string());
  }
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return run_config_from_json_text(text);
}

namespace {

json stage_to_json(const StageConfig& s) {
  return {{"steps", s.steps},
          {"learning_rate", s.learning_rate},
          {"momentum", s.momentum},
          {"tau", s.tau},
          {"batch_n", s.batch_n},
          {"batch_k", s.batch_k},
          {"checkpoint_every", s.checkpoint_every},
          {"mrl_dims", s.mrl_dims}};
}

}  // namespace

std::string run_config_to_json(const RunConfig& cfg) {
  json j = {
      {"config_version", cfg.config_version},
      {"seed", cfg.seed},
      {"threads", cfg.threads},
      {"encoder",
       {{"feature_dim", cfg.encoder.feature_dim},
        {"embed_dim", cfg.encoder.embed_dim},
        {"arch", to_string(cfg.encoder.arch)},
        {"ngram_lo", cfg.encoder.ngram_lo},
        {"ngram_hi", cfg.encoder.ngram_hi}}},
      {"stage1", stage_to_json(cfg.stage1)},
      {"stage2", stage_to_json(cfg.stage2)},
      {"rerank",
       {{"steps", cfg.rerank.steps},
        {"learning_rate", cfg.rerank.learning_rate},
        {"momentum", cfg.rerank.momentum},
        {"batch_n", cfg.rerank.batch_n},
        {"checkpoint_every", cfg.rerank.checkpoint_every}}},
      {"merge",
       {{"last_k", cfg.merge.last_k},
        {"per_tensor", cfg.merge.per_tensor},
        {"t_schedule", cfg.merge.t_schedule}}},
      {"filter",
       {{"threshold", cfg.filter.threshold},
        {"presample_fraction", cfg.filter.presample_fraction.has_value()
                                   ? json(*cfg.filter.presample_fraction)
                                   : json(nullptr)}}},
      {"synthesis",
       {{"language", cfg.synthesis.language},
        {"personas_per_doc", cfg.synthesis.personas_per_doc}}},
      {"eval",
       {{"k_retrieve", cfg.eval.k_retrieve},
        {"k_metric", cfg.eval.k_metric}}}};
  return j.dump(2) + "\n";
}

std::string config_digest(const RunConfig& cfg) {
  const std::string canonical = run_config_to_json(cfg);
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char b : canonical) {
    h ^= b;
    h *= 1099511628211ull;
  }
  static const char* hex = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = hex[h & 0xF];
    h >>= 4;
  }
  return out;
}

EncoderParams encoder_from_config(const RunConfig& cfg, Seed seed) {
  return init_params(seed, cfg.encoder.feature_dim, cfg.encoder.embed_dim,
                     cfg.encoder.arch, cfg.encoder.ngram_lo,
                     cfg.encoder.ngram_hi);
}

}  // namespace embedkit
