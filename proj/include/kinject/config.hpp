#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "kinject/decoding.hpp"

namespace kinject {

struct PipelineConfig {
  DecodeConfig decode;

  // Knowledge acquisition
  std::size_t n_nonparametric = 100;
  std::size_t per_phrase = 5;
  std::size_t max_keyphrases = 2;
  double top_p = 0.95;
  bool use_parametric = true;
  bool use_nonparametric = true;

  // Selection
  std::size_t B = 5;
  double beta_init = 1.0;

  std::size_t history_turns = 0;  // 0 keeps the whole history
  std::uint64_t seed = 0;
  std::size_t workers = 1;

  // Artifacts, relative to the data directory unless absolute. Empty
  // scorer/generator paths fall back to model_path.
  std::filesystem::path vocab_path = "vocab.txt";
  std::filesystem::path model_path = "lm.bin";
  std::filesystem::path scorer_path;
  std::filesystem::path generator_path;
  std::filesystem::path head_path = "head.bin";
  std::filesystem::path index_path = "reviews.idx";
  std::filesystem::path stopwords_path = "stopwords.txt";
  std::filesystem::path blocklist_path = "blocklist.txt";

  // Optional external parametric source
  std::string generator_url;
  double generator_timeout = 10.0;
};

/// Throws InvalidArgument on an out-of-range value.
void validate(const PipelineConfig& cfg);

/// Every field, with the scorer/generator paths resolved.
nlohmann::json to_json(const PipelineConfig& cfg);

/// Relative artifact paths are resolved against `base`.
PipelineConfig resolve_paths(PipelineConfig cfg, const std::filesystem::path& base);

}  // namespace kinject
