#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ojfa/corpus.hpp"
#include "ojfa/select.hpp"
#include "ojfa/shortcut.hpp"
#include "ojfa/transformer.hpp"

#include "json.hpp"

namespace ojfa {

inline constexpr double kProbabilityFloor = 1e-12;

// Fraction of rows whose argmax agrees (ties to the smallest token id).
double Precision(const Matrix& shortcut_logits, const Matrix& final_logits);
// Mean of -ln p_shortcut(argmax final), p from a temperature-1 softmax and
// clamped below at kProbabilityFloor.
double Surprisal(const Matrix& shortcut_logits, const Matrix& final_logits);

enum class StrategyKind { kOjfa, kArbitrary, kJoint, kIdentity, kFullMultiJump };

// Which approximation of h^K is fed to the head at each exit level. Jump
// pointers are non-owning.
struct StrategySpec {
  StrategyKind kind = StrategyKind::kIdentity;
  const LowRankJump* jump = nullptr;  // ojfa, arbitrary, joint
  const JumpBank* bank = nullptr;     // full_multi_jump

  static StrategySpec Ojfa(const LowRankJump& j) { return {StrategyKind::kOjfa, &j, nullptr}; }
  static StrategySpec Arbitrary(const LowRankJump& j) {
    return {StrategyKind::kArbitrary, &j, nullptr};
  }
  static StrategySpec Joint(const LowRankJump& j) { return {StrategyKind::kJoint, &j, nullptr}; }
  static StrategySpec Identity() { return {}; }
  static StrategySpec FullMultiJump(const JumpBank& b) {
    return {StrategyKind::kFullMultiJump, nullptr, &b};
  }

  // "ojfa", "arbitrary_m<level>", "joint", "identity", "full_multi_jump".
  std::string Name() const;
};

struct LevelMetrics {
  double precision = 0.0;
  double surprisal = 0.0;
  std::size_t n_records = 0;
};

struct StrategyResult {
  std::string name;
  std::vector<LevelMetrics> levels;  // exit levels 0..K-1

  double MeanPrecision() const;
  double MeanSurprisal() const;
};

// Shortcut approximations of h^K from exit level k under `spec`.
Matrix ApproximateFinal(const StrategySpec& spec, const HiddenCorpus& corpus, std::size_t level);

// Fixed exits: every level is evaluated against the model's own final
// prediction.
StrategyResult EvaluateStrategy(const StrategySpec& spec, const TransformerWeights& weights,
                                const HiddenCorpus& test, unsigned threads = 1);

// Shortcuts consulted by the early-exit policy: one jump per level, a single
// reused jump, or neither (identity).
struct ExitShortcuts {
  const JumpBank* per_level = nullptr;
  const LowRankJump* single = nullptr;
};

struct EarlyExitResult {
  std::size_t exit_level = 0;  // K means the full pass completed
  Token predicted = 0;
  std::vector<double> logits;
};

// Walks levels 0..K-1 and exits at the first whose shortcut prediction has
// max softmax probability >= lambda; otherwise finishes the pass. Predicts
// the token after the last input token.
EarlyExitResult EarlyExitRun(const TransformerWeights& weights, const ExitShortcuts& shortcuts,
                             std::span<const Token> tokens, double lambda);

struct EarlyExitSummary {
  double lambda = 0.0;
  double mean_exit_level = 0.0;
  double agreement = 0.0;  // fraction matching the full-pass prediction
  std::size_t n_inputs = 0;
};

struct EvalReport {
  std::size_t num_levels = 0;
  std::vector<StrategyResult> strategies;
  std::vector<std::uint32_t> score_levels;
  std::vector<double> score_distribution;
  std::vector<EarlyExitSummary> early_exit;
  nlohmann::json metadata = nlohmann::json::object();

  nlohmann::json ToJson() const;
};

// Writes report.csv, report.json, precision.svg, surprisal.svg,
// sscs_softmax.svg and, when present, early_exit.csv into out_dir.
std::vector<std::filesystem::path> EmitReport(const EvalReport& report,
                                              const std::filesystem::path& out_dir);

std::string ReportCsv(const EvalReport& report);
std::string LineChartSvg(const EvalReport& report, bool precision);
std::string ScoreChartSvg(const EvalReport& report);

}  // namespace ojfa
