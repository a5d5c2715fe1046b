#include <cmath>
#include <filesystem>
#include <regex>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "ojfa/error.hpp"
#include "ojfa/eval.hpp"
#include "ojfa/select.hpp"
#include "test_util.hpp"

using namespace ojfa;

namespace {

TransformerConfig TinyConfig(std::uint32_t H, std::uint32_t K) {
  TransformerConfig c;
  c.hidden_dim = H;
  c.num_blocks = K;
  c.num_heads = 2;
  c.ffn_dim = 2 * H;
  c.max_seq_len = 24;
  c.seed = 8;
  return c;
}

struct Fixture {
  TransformerWeights weights;
  HiddenCorpus corpus;
  JumpBank bank;
};

Fixture Trained(std::uint32_t H, std::uint32_t K, std::size_t texts) {
  Fixture f;
  f.weights = InitModel(TinyConfig(H, K));
  Rng text_rng(1), sample_rng(2);
  f.corpus = BuildCorpus(f.weights, SyntheticTexts(texts, 6, 24, text_rng), 1, sample_rng);
  TrainSettings s;
  s.epochs = 4;
  s.batch_size = 16;
  s.learning_rate = 1e-2;
  f.bank.hidden_dim = H;
  f.bank.rank = 2;
  f.bank.num_levels = K;
  for (std::uint32_t k = 0; k < K; ++k) f.bank.jumps.push_back(TrainJump(f.corpus, k, 2, s).jump);
  return f;
}

// Crude well-formedness: every opened tag is closed in order.
bool BalancedXml(const std::string& svg) {
  std::vector<std::string> stack;
  const std::regex tag(R"(<(/?)([a-zA-Z]+)[^>]*?(/?)>)");
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), tag); it != std::sregex_iterator();
       ++it) {
    const auto& m = *it;
    if (m[1] == "/") {
      if (stack.empty() || stack.back() != m[2]) return false;
      stack.pop_back();
    } else if (m[3] != "/") {
      stack.push_back(m[2]);
    }
  }
  return stack.empty();
}

std::size_t Count(const std::string& s, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = s.find(needle); p != std::string::npos; p = s.find(needle, p + 1)) ++n;
  return n;
}

}  // namespace

TEST_CASE("precision examples") {
  const Matrix f = Matrix::FromRows({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 2, 0}});
  CHECK(Precision(f, f) == 1.0);
  const Matrix none = Matrix::FromRows({{0, 1, 0}, {0, 0, 1}, {1, 0, 0}, {0, 0, 3}});
  CHECK(Precision(none, f) == 0.0);
  const Matrix three = Matrix::FromRows({{5, 0, 0}, {0, 2, 0}, {0, 0, 1}, {9, 0, 0}});
  CHECK(Precision(three, f) == 0.75);
  // Ties go to the smallest token id on both sides.
  CHECK(Precision(Matrix::FromRows({{1, 1}}), Matrix::FromRows({{2, 1}})) == 1.0);
  CHECK_THROWS_AS(Precision(Matrix(2, 3), Matrix(3, 3)), Error);
}

TEST_CASE("surprisal examples") {
  CHECK(Surprisal(Matrix::FromRows({{0, -1e4}}), Matrix::FromRows({{1, 0}})) == 0.0);
  const double e2 = std::exp(-2.0);
  CHECK(Surprisal(Matrix::FromRows({{std::log(e2), std::log(1 - e2)}}), Matrix::FromRows({{1, 0}})) ==
        doctest::Approx(2.0).epsilon(1e-12));
  const double e1 = std::exp(-1.0), e3 = std::exp(-3.0);
  const Matrix two = Matrix::FromRows({{std::log(e1), std::log(1 - e1)}, {std::log(1 - e3), std::log(e3)}});
  CHECK(Surprisal(two, Matrix::FromRows({{1, 0}, {0, 1}})) == doctest::Approx(2.0).epsilon(1e-12));
  // The floor keeps the value finite.
  CHECK(Surprisal(Matrix::FromRows({{0, -1e4}}), Matrix::FromRows({{0, 1}})) ==
        doctest::Approx(-std::log(kProbabilityFloor)));
}

TEST_CASE("self-consistency against a naive oracle") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.UniformInt(20), V = 2 + rng.UniformInt(50);
    const Matrix f = testutil::RandomMatrix(n, V, rng, 2.0);
    double oracle = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double z = 0.0, best = -1e300;
      for (std::size_t v = 0; v < V; ++v) {
        z += std::exp(f(i, v));
        best = std::max(best, f(i, v));
      }
      oracle += -std::log(std::exp(best) / z);
    }
    CHECK(Precision(f, f) == 1.0);
    CHECK(std::abs(Surprisal(f, f) - oracle / n) <= 1e-9);
  }
}

TEST_CASE("strategy names") {
  LowRankJump j;
  j.level = 3;
  JumpBank b;
  CHECK(StrategySpec::Ojfa(j).Name() == "ojfa");
  CHECK(StrategySpec::Arbitrary(j).Name() == "arbitrary_m3");
  CHECK(StrategySpec::Joint(j).Name() == "joint");
  CHECK(StrategySpec::Identity().Name() == "identity");
  CHECK(StrategySpec::FullMultiJump(b).Name() == "full_multi_jump");
}

TEST_CASE("ojfa at its own level equals the full multi-jump at that level") {
  const Fixture f = Trained(16, 3, 120);
  const ReuseScoreTable t = SelectOjfa(f.bank, f.corpus);
  const StrategyResult full = EvaluateStrategy(StrategySpec::FullMultiJump(f.bank), f.weights, f.corpus);
  const StrategyResult one =
      EvaluateStrategy(StrategySpec::Ojfa(f.bank.At(t.chosen)), f.weights, f.corpus);
  REQUIRE(full.levels.size() == 3);
  CHECK(one.levels[t.chosen].precision == full.levels[t.chosen].precision);
  CHECK(one.levels[t.chosen].surprisal == full.levels[t.chosen].surprisal);
  CHECK(full.levels[0].n_records == f.corpus.size());

  // Deterministic and independent of thread count.
  const StrategyResult again =
      EvaluateStrategy(StrategySpec::FullMultiJump(f.bank), f.weights, f.corpus, 3);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(again.levels[k].precision == full.levels[k].precision);
    CHECK(again.levels[k].surprisal == full.levels[k].surprisal);
  }

  // Arbitrary jumps are ojfa with a different m; never better-scored.
  for (const auto& j : f.bank.jumps)
    CHECK(t.scores[t.chosen_index()] >= SscsScore(j, f.corpus).score);
}

TEST_CASE("identity is exact when the last block is an identity map") {
  TransformerWeights w = InitModel(TinyConfig(16, 2));
  auto& last = w.blocks.back();
  last.attn_proj = Matrix(16, 16);
  std::fill(last.attn_proj_bias.begin(), last.attn_proj_bias.end(), 0.0);
  last.fc_proj = Matrix(32, 16);
  std::fill(last.fc_proj_bias.begin(), last.fc_proj_bias.end(), 0.0);
  Rng text_rng(1), sample_rng(2);
  const HiddenCorpus c = BuildCorpus(w, SyntheticTexts(40, 6, 24, text_rng), 1, sample_rng);
  const StrategyResult id = EvaluateStrategy(StrategySpec::Identity(), w, c);
  CHECK(id.levels[1].precision == 1.0);
}

TEST_CASE("a zero-loss jump gives full precision at its level") {
  // Planted targets: the final state is an exact jump of both exit states.
  const TransformerWeights w = InitModel(TinyConfig(8, 2));
  const auto p = testutil::PlantedJumpPairs(128, 8, 2, 4);
  HiddenCorpus c;
  c.hidden_dim = 8;
  c.num_blocks = 2;
  for (std::size_t i = 0; i < 128; ++i) {
    HiddenRecord r;
    r.sentence_id = i;
    r.levels = Matrix(3, 8);
    for (std::size_t f = 0; f < 8; ++f) {
      r.levels(0, f) = p.inputs(i, f);
      r.levels(1, f) = p.inputs(i, f);
      r.levels(2, f) = p.targets(i, f);
    }
    c.records.push_back(std::move(r));
  }
  TrainSettings s;
  s.learning_rate = 1e-2;
  s.batch_size = 128;
  s.epochs = 4000;
  JumpBank bank;
  bank.hidden_dim = 8;
  bank.rank = 2;
  bank.num_levels = 2;
  for (std::uint32_t k = 0; k < 2; ++k) {
    const TrainedJump t = TrainJump(c, k, 2, s);
    CHECK(t.final_loss < 1e-9 * t.initial_loss);
    bank.jumps.push_back(t.jump);
  }
  const StrategyResult full = EvaluateStrategy(StrategySpec::FullMultiJump(bank), w, c);
  CHECK(full.levels[0].precision == 1.0);
  CHECK(full.levels[1].precision == 1.0);
}

TEST_CASE("evaluation rejects mismatched inputs") {
  const Fixture f = Trained(8, 2, 40);
  Rng rng(1);
  const HiddenCorpus wrong_h = testutil::RandomCorpus(5, 4, 2, rng);
  CHECK_THROWS_AS(EvaluateStrategy(StrategySpec::Identity(), f.weights, wrong_h), Error);
  const HiddenCorpus wrong_k = testutil::RandomCorpus(5, 8, 3, rng);
  CHECK_THROWS_AS(EvaluateStrategy(StrategySpec::Identity(), f.weights, wrong_k), Error);
  StrategySpec missing{StrategyKind::kOjfa, nullptr, nullptr};
  CHECK_THROWS_AS(EvaluateStrategy(missing, f.weights, f.corpus), Error);
  JumpBank partial = f.bank.Pruned(0);
  CHECK_THROWS_AS(EvaluateStrategy(StrategySpec::FullMultiJump(partial), f.weights, f.corpus),
                  Error);
}

TEST_CASE("early exit matches a brute-force level scan") {
  const Fixture f = Trained(16, 3, 150);
  Rng text_rng(11);
  const auto texts = SyntheticTexts(15, 4, 20, text_rng);
  for (const auto& text : texts) {
    const auto tokens = BytesToTokens(text);
    const HiddenTrace trace = ForwardTrace(f.weights, tokens);
    const std::size_t last = tokens.size() - 1;
    for (const ExitShortcuts sc :
         {ExitShortcuts{&f.bank, nullptr}, ExitShortcuts{nullptr, &f.bank.jumps[2]},
          ExitShortcuts{}}) {
      std::vector<double> confidence;
      for (std::uint32_t k = 0; k < 3; ++k) {
        const LowRankJump* j = sc.per_level ? &sc.per_level->At(k) : sc.single;
        const auto h = trace.At(k, last);
        const auto approx = j ? ReuseApproximation(*j, h) : std::vector<double>(h.begin(), h.end());
        const auto p = Softmax(Head(f.weights, approx));
        confidence.push_back(*std::max_element(p.begin(), p.end()));
      }
      for (double lambda : {0.0, 0.004, 0.006, 0.01, 0.05, 0.5, 1.0}) {
        std::size_t want = 3;
        for (std::size_t k = 0; k < 3; ++k) {
          if (confidence[k] >= lambda) {
            want = k;
            break;
          }
        }
        const EarlyExitResult r = EarlyExitRun(f.weights, sc, tokens, lambda);
        CHECK(r.exit_level == want);
        CHECK(r.predicted == Argmax(r.logits));
        if (want == 3) CHECK(r.predicted == Argmax(trace.logits.row(last)));
      }
    }
    CHECK_THROWS_AS(EarlyExitRun(f.weights, ExitShortcuts{}, tokens, 1.5), Error);
    CHECK_THROWS_AS(EarlyExitRun(f.weights, ExitShortcuts{}, tokens, -0.1), Error);
  }
}

TEST_CASE("report files: csv rows, json mirror and svg structure") {
  const Fixture f = Trained(8, 3, 60);
  EvalReport report;
  report.num_levels = 3;
  report.strategies.push_back(EvaluateStrategy(StrategySpec::FullMultiJump(f.bank), f.weights, f.corpus));
  report.strategies.push_back(EvaluateStrategy(StrategySpec::Identity(), f.weights, f.corpus));
  report.strategies.push_back(EvaluateStrategy(StrategySpec::Ojfa(f.bank.jumps[1]), f.weights, f.corpus));
  report.score_levels = {0, 1, 2};
  report.score_distribution = {0.1, 0.7, 0.2};
  report.early_exit.push_back({0.5, 1.25, 0.75, 4});

  const std::string csv = ReportCsv(report);
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);
  CHECK(line == "strategy,level,precision,surprisal,n_records");
  const nlohmann::json j = report.ToJson();
  std::size_t rows = 0;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    std::istringstream cells(line);
    std::string name, level, precision, surprisal, n;
    std::getline(cells, name, ',');
    std::getline(cells, level, ',');
    std::getline(cells, precision, ',');
    std::getline(cells, surprisal, ',');
    std::getline(cells, n, ',');
    const auto& s = j["strategies"][rows / 3];
    CHECK(s["strategy"] == name);
    const auto& lj = s["levels"][std::stoul(level)];
    CHECK(lj["precision"].get<double>() == std::stod(precision));
    CHECK(lj["surprisal"].get<double>() == std::stod(surprisal));
    CHECK(lj["n_records"].get<std::size_t>() == std::stoul(n));
    ++rows;
  }
  CHECK(rows == 3 * 3);

  const std::string precision_svg = LineChartSvg(report, true);
  CHECK(BalancedXml(precision_svg));
  CHECK(Count(precision_svg, "<polyline") == 3);
  CHECK(BalancedXml(LineChartSvg(report, false)));
  const std::string scores_svg = ScoreChartSvg(report);
  CHECK(BalancedXml(scores_svg));
  CHECK(Count(scores_svg, "<rect") >= 3);

  const auto dir = std::filesystem::temp_directory_path() / "ojfa_test_report";
  std::filesystem::remove_all(dir);
  const auto files = EmitReport(report, dir);
  for (const char* name :
       {"report.csv", "report.json", "precision.svg", "surprisal.svg", "sscs_softmax.svg", "early_exit.csv"})
    CHECK(std::filesystem::exists(dir / name));
  CHECK(files.size() == 6);
  std::filesystem::remove_all(dir);
}
