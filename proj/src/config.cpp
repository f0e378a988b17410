#include "kinject/config.hpp"

#include "kinject/errors.hpp"

namespace kinject {

void validate(const PipelineConfig& cfg) {
  validate(cfg.decode);
  if (cfg.n_nonparametric == 0) throw InvalidArgument("n_nonparametric must be >= 1");
  if (cfg.per_phrase == 0) throw InvalidArgument("per_phrase must be >= 1");
  if (cfg.B == 0) throw InvalidArgument("B must be >= 1");
  if (!(cfg.beta_init > 0.0 && cfg.beta_init <= 1.0)) throw InvalidArgument("beta_init must be in (0, 1]");
  if (!(cfg.top_p > 0.0 && cfg.top_p <= 1.0)) throw InvalidArgument("top_p must be in (0, 1]");
  if (cfg.workers == 0) throw InvalidArgument("workers must be >= 1");
  if (!(cfg.generator_timeout > 0.0)) throw InvalidArgument("generator_timeout must be positive");
}

nlohmann::json to_json(const PipelineConfig& cfg) {
  const auto& d = cfg.decode;
  return {
      {"alpha", d.alpha},
      {"lambda", d.lambda},
      {"gamma", d.gamma},
      {"iterations", d.iterations},
      {"step_size", d.step_size},
      {"tau", d.tau},
      {"max_len", d.max_len},
      {"deterministic_final", d.deterministic_final},
      {"n_nonparametric", cfg.n_nonparametric},
      {"per_phrase", cfg.per_phrase},
      {"max_keyphrases", cfg.max_keyphrases},
      {"top_p", cfg.top_p},
      {"use_parametric", cfg.use_parametric},
      {"use_nonparametric", cfg.use_nonparametric},
      {"B", cfg.B},
      {"beta_init", cfg.beta_init},
      {"history_turns", cfg.history_turns},
      {"seed", cfg.seed},
      {"workers", cfg.workers},
      {"vocab", cfg.vocab_path.generic_string()},
      {"model", cfg.model_path.generic_string()},
      {"scorer", (cfg.scorer_path.empty() ? cfg.model_path : cfg.scorer_path).generic_string()},
      {"generator", (cfg.generator_path.empty() ? cfg.model_path : cfg.generator_path).generic_string()},
      {"head", cfg.head_path.generic_string()},
      {"index", cfg.index_path.generic_string()},
      {"stopwords", cfg.stopwords_path.generic_string()},
      {"blocklist", cfg.blocklist_path.generic_string()},
      {"generator_url", cfg.generator_url},
      {"generator_timeout", cfg.generator_timeout},
  };
}

PipelineConfig resolve_paths(PipelineConfig cfg, const std::filesystem::path& base) {
  for (auto* p : {&cfg.vocab_path, &cfg.model_path, &cfg.scorer_path, &cfg.generator_path,
                  &cfg.head_path, &cfg.index_path, &cfg.stopwords_path, &cfg.blocklist_path}) {
    if (!p->empty() && p->is_relative()) *p = base / *p;
  }
  return cfg;
}

}  // namespace kinject
