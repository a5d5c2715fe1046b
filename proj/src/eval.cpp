#include "ojfa/eval.hpp"

#include <algorithm>
#include <cmath>

#include "ojfa/error.hpp"

namespace ojfa {
namespace {

void CheckSameShape(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error("logit batches differ in shape: " + a.shape() + " vs " + b.shape());
  }
  if (a.rows() == 0) throw Error("empty logit batch");
}

double MaxProbability(std::span<const double> logits) {
  const auto p = Softmax(logits);
  return *std::max_element(p.begin(), p.end());
}

}  // namespace

double Precision(const Matrix& shortcut_logits, const Matrix& final_logits) {
  CheckSameShape(shortcut_logits, final_logits);
  if (final_logits.cols() < 2) throw Error("precision needs a vocabulary of at least 2");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < final_logits.rows(); ++i)
    hits += Argmax(shortcut_logits.row(i)) == Argmax(final_logits.row(i));
  return static_cast<double>(hits) / static_cast<double>(final_logits.rows());
}

double Surprisal(const Matrix& shortcut_logits, const Matrix& final_logits) {
  CheckSameShape(shortcut_logits, final_logits);
  double total = 0.0;
  for (std::size_t i = 0; i < final_logits.rows(); ++i) {
    const auto row = shortcut_logits.row(i);
    const std::size_t target = Argmax(final_logits.row(i));
    // log-softmax directly so tiny probabilities keep full precision
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double v : row) sum += std::exp(v - mx);
    const double log_p = row[target] - mx - std::log(sum);
    total += -std::max(log_p, std::log(kProbabilityFloor));
  }
  return total / static_cast<double>(final_logits.rows());
}

std::string StrategySpec::Name() const {
  switch (kind) {
    case StrategyKind::kOjfa: return "ojfa";
    case StrategyKind::kArbitrary:
      return "arbitrary_m" + std::to_string(jump != nullptr ? jump->level : 0);
    case StrategyKind::kJoint: return "joint";
    case StrategyKind::kIdentity: return "identity";
    case StrategyKind::kFullMultiJump: return "full_multi_jump";
  }
  return "unknown";
}

double StrategyResult::MeanPrecision() const {
  double s = 0.0;
  for (const auto& l : levels) s += l.precision;
  return levels.empty() ? 0.0 : s / static_cast<double>(levels.size());
}

double StrategyResult::MeanSurprisal() const {
  double s = 0.0;
  for (const auto& l : levels) s += l.surprisal;
  return levels.empty() ? 0.0 : s / static_cast<double>(levels.size());
}

Matrix ApproximateFinal(const StrategySpec& spec, const HiddenCorpus& corpus, std::size_t level) {
  Matrix h = corpus.LevelMatrix(level);
  switch (spec.kind) {
    case StrategyKind::kIdentity:
      return h;
    case StrategyKind::kOjfa:
    case StrategyKind::kArbitrary:
    case StrategyKind::kJoint:
      if (spec.jump == nullptr) throw Error("strategy " + spec.Name() + " has no jump");
      return ReuseApproximation(*spec.jump, h);
    case StrategyKind::kFullMultiJump: {
      if (spec.bank == nullptr) throw Error("full_multi_jump strategy has no bank");
      const LowRankJump* j = spec.bank->Find(static_cast<std::uint32_t>(level));
      if (j == nullptr) {
        throw Error("full_multi_jump bank is missing the jump for level " + std::to_string(level));
      }
      return ReuseApproximation(*j, h);
    }
  }
  throw Error("unknown strategy kind");
}

StrategyResult EvaluateStrategy(const StrategySpec& spec, const TransformerWeights& weights,
                                const HiddenCorpus& test, unsigned threads) {
  test.Validate();
  if (test.hidden_dim != weights.config.hidden_dim || test.num_blocks != weights.config.num_blocks) {
    throw Error("corpus (H=" + std::to_string(test.hidden_dim) + ", K=" +
                std::to_string(test.num_blocks) + ") does not match the model (H=" +
                std::to_string(weights.config.hidden_dim) + ", K=" +
                std::to_string(weights.config.num_blocks) + ")");
  }
  const Matrix final_logits = HeadBatch(weights, test.FinalMatrix());
  StrategyResult result;
  result.name = spec.Name();
  result.levels.resize(test.num_blocks);
  ParallelFor(test.num_blocks, threads, [&](std::size_t k) {
    const Matrix logits = HeadBatch(weights, ApproximateFinal(spec, test, k));
    result.levels[k] = {Precision(logits, final_logits), Surprisal(logits, final_logits),
                        test.size()};
  });
  return result;
}

EarlyExitResult EarlyExitRun(const TransformerWeights& weights, const ExitShortcuts& shortcuts,
                             std::span<const Token> tokens, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw Error("lambda must lie in [0, 1]");
  const std::size_t K = weights.config.num_blocks;
  Matrix state = Embed(weights, tokens);
  const std::size_t last = state.rows() - 1;
  EarlyExitResult out;
  for (std::size_t k = 0; k < K; ++k) {
    std::vector<double> approx(state.row(last).begin(), state.row(last).end());
    if (shortcuts.single != nullptr) {
      approx = ReuseApproximation(*shortcuts.single, approx);
    } else if (shortcuts.per_level != nullptr) {
      approx = ReuseApproximation(shortcuts.per_level->At(static_cast<std::uint32_t>(k)), approx);
    }
    auto logits = Head(weights, approx);
    if (MaxProbability(logits) >= lambda) {
      out.exit_level = k;
      out.predicted = static_cast<Token>(Argmax(logits));
      out.logits = std::move(logits);
      return out;
    }
    ApplyBlock(weights, k, state);
  }
  out.exit_level = K;
  out.logits = Head(weights, state.row(last));
  out.predicted = static_cast<Token>(Argmax(out.logits));
  return out;
}

nlohmann::json EvalReport::ToJson() const {
  nlohmann::json j;
  j["metadata"] = metadata;
  j["num_levels"] = num_levels;
  auto& strategies_json = j["strategies"] = nlohmann::json::array();
  for (const auto& s : strategies) {
    nlohmann::json sj;
    sj["strategy"] = s.name;
    sj["mean_precision"] = s.MeanPrecision();
    sj["mean_surprisal"] = s.MeanSurprisal();
    auto& levels_json = sj["levels"] = nlohmann::json::array();
    for (std::size_t k = 0; k < s.levels.size(); ++k) {
      levels_json.push_back({{"level", k},
                             {"precision", s.levels[k].precision},
                             {"surprisal", s.levels[k].surprisal},
                             {"n_records", s.levels[k].n_records}});
    }
    strategies_json.push_back(std::move(sj));
  }
  j["score_distribution"] = {{"levels", score_levels}, {"probabilities", score_distribution}};
  auto& ee = j["early_exit"] = nlohmann::json::array();
  for (const auto& e : early_exit) {
    ee.push_back({{"lambda", e.lambda},
                  {"mean_exit_level", e.mean_exit_level},
                  {"agreement", e.agreement},
                  {"n_inputs", e.n_inputs}});
  }
  return j;
}

}  // namespace ojfa
