#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ojfa/shortcut.hpp"
#include "ojfa/transformer.hpp"

#include "json.hpp"

namespace ojfa {

struct ModelSection {
  std::string path;  // existing OJFW file; empty means generate from `config`
  TransformerConfig config;
  std::optional<std::uint64_t> seed;
};

struct CorpusSection {
  std::string source = "synthetic";  // synthetic | text | ojfc
  std::string path;                  // text file, or train OJFC for imports
  std::string test_path;             // optional test OJFC for imports
  std::size_t num_texts = 2000;
  std::size_t min_len = 16;
  std::size_t max_len = 64;
  std::size_t positions_per_text = 1;
  double train_fraction = 0.75;
  std::optional<std::uint64_t> seed;
};

struct EvalSection {
  std::vector<std::string> strategies = {"ojfa", "arbitrary", "joint", "identity",
                                         "full_multi_jump"};
  std::vector<std::uint32_t> arbitrary_levels;  // empty: every level
  std::vector<double> lambdas = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  double score_temperature = 5e-4;
  std::size_t early_exit_inputs = 200;
};

struct RunConfig {
  std::uint64_t seed = 20240601;
  unsigned threads = 0;
  std::string out_dir = "out";
  std::size_t rank = 0;  // 0: DefaultRank(H)
  ModelSection model;
  CorpusSection corpus;
  TrainSettings train;
  std::optional<std::uint64_t> train_seed;
  EvalSection eval;

  std::uint64_t ModelSeed() const;
  std::uint64_t CorpusSeed() const;
  std::uint64_t TrainSeed() const;

  // Unknown keys and type errors are reported together as a ConfigError.
  static RunConfig FromJson(const nlohmann::json& j);
  nlohmann::json ToJson() const;
  // Collects every violated constraint into one ConfigError.
  void Validate() const;
};

// Sets `dotted.key` in `j`. The value is parsed as JSON when possible and
// kept as a string otherwise.
void ApplyOverride(nlohmann::json& j, const std::string& dotted_key, const std::string& value);

nlohmann::json LoadJsonFile(const std::string& path);

}  // namespace ojfa
