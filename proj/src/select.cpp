#include "ojfa/select.hpp"

#include <algorithm>
#include <cmath>

#include "ojfa/error.hpp"
#include "ojfa/numerics.hpp"

namespace ojfa {

std::vector<double> ReuseApproximation(const LowRankJump& jump, std::span<const double> h) {
  Matrix row(1, h.size());
  std::copy(h.begin(), h.end(), row.row(0).begin());
  return ReuseApproximation(jump, row).data();
}

Matrix ReuseApproximation(const LowRankJump& jump, const Matrix& h) {
  if (jump.mode != JumpMode::kInfer) {
    throw Error("reusing a jump across levels needs an infer-mode jump");
  }
  return JumpInfer(jump, h);
}

double CosineOrZero(std::span<const double> u, std::span<const double> v) {
  if (Norm(u) == 0.0 || Norm(v) == 0.0) return 0.0;
  return Cosine(u, v);
}

ReuseScore SscsScore(const LowRankJump& jump, const HiddenCorpus& corpus, unsigned threads) {
  corpus.Validate();
  if (jump.hidden_dim != corpus.hidden_dim) throw Error("jump and corpus disagree on H");
  const std::size_t K = corpus.num_blocks, N = corpus.size();
  const Matrix finals = corpus.FinalMatrix();

  // cosines[k][i]; filled per level, reduced in fixed order below.
  std::vector<std::vector<double>> cosines(K, std::vector<double>(N));
  ParallelFor(K, threads, [&](std::size_t k) {
    const Matrix approx = ReuseApproximation(jump, corpus.LevelMatrix(k));
    for (std::size_t i = 0; i < N; ++i) cosines[k][i] = CosineOrZero(approx.row(i), finals.row(i));
  });

  ReuseScore out;
  out.mean_cosine.assign(K, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t k = 0; k < K; ++k) {
      total += SignedSquare(cosines[k][i]);
      out.mean_cosine[k] += cosines[k][i];
    }
  }
  for (double& m : out.mean_cosine) m /= static_cast<double>(N);
  out.score = total / static_cast<double>(N * K);
  return out;
}

std::size_t ArgmaxScore(std::span<const double> scores) { return Argmax(scores); }

std::size_t ReuseScoreTable::chosen_index() const {
  const auto it = std::find(levels.begin(), levels.end(), chosen);
  if (it == levels.end()) throw Error("chosen level is not in the score table");
  return static_cast<std::size_t>(it - levels.begin());
}

nlohmann::json ReuseScoreTable::ToJson() const {
  nlohmann::json j;
  j["levels"] = levels;
  j["scores"] = scores;
  j["chosen_level"] = chosen;
  std::vector<std::vector<double>> rows;
  for (std::size_t k = 0; k < mean_cosine.rows(); ++k) {
    auto r = mean_cosine.row(k);
    rows.emplace_back(r.begin(), r.end());
  }
  j["mean_cosine_by_exit_level"] = rows;
  return j;
}

ReuseScoreTable ReuseScoreTable::FromJson(const nlohmann::json& j) {
  ReuseScoreTable t;
  t.levels = j.at("levels").get<std::vector<std::uint32_t>>();
  t.scores = j.at("scores").get<std::vector<double>>();
  t.chosen = j.at("chosen_level").get<std::uint32_t>();
  t.mean_cosine = Matrix::FromRows(
      j.at("mean_cosine_by_exit_level").get<std::vector<std::vector<double>>>());
  if (t.levels.size() != t.scores.size()) throw Error("score table levels/scores differ in length");
  return t;
}

ReuseScoreTable SelectOjfa(const JumpBank& bank, const HiddenCorpus& train, unsigned threads) {
  std::vector<const LowRankJump*> jumps;
  for (const auto& j : bank.jumps)
    if (!j.is_joint()) jumps.push_back(&j);
  if (jumps.empty()) throw Error("cannot select from an empty jump bank");
  std::sort(jumps.begin(), jumps.end(),
            [](const LowRankJump* x, const LowRankJump* y) { return x->level < y->level; });

  ReuseScoreTable t;
  const std::size_t M = jumps.size();
  t.levels.resize(M);
  t.scores.resize(M);
  t.mean_cosine = Matrix(train.num_blocks, M);
  std::vector<ReuseScore> results(M);
  ParallelFor(M, threads, [&](std::size_t m) { results[m] = SscsScore(*jumps[m], train, 1); });
  for (std::size_t m = 0; m < M; ++m) {
    t.levels[m] = jumps[m]->level;
    t.scores[m] = results[m].score;
    for (std::size_t k = 0; k < train.num_blocks; ++k)
      t.mean_cosine(k, m) = results[m].mean_cosine[k];
  }
  t.chosen = t.levels[ArgmaxScore(t.scores)];
  return t;
}

std::vector<double> ScoreDistribution(std::span<const double> scores, double temperature) {
  return Softmax(scores, temperature);
}

std::pair<Matrix, Matrix> PooledPairs(const HiddenCorpus& train) {
  train.Validate();
  const std::size_t N = train.size(), K = train.num_blocks, H = train.hidden_dim;
  Matrix inputs(N * K, H), targets(N * K, H);
  for (std::size_t i = 0; i < N; ++i) {
    const auto fin = train.records[i].Final();
    for (std::size_t k = 0; k < K; ++k) {
      const auto src = train.records[i].Level(k);
      std::copy(src.begin(), src.end(), inputs.row(i * K + k).begin());
      std::copy(fin.begin(), fin.end(), targets.row(i * K + k).begin());
    }
  }
  return {std::move(inputs), std::move(targets)};
}

TrainedJump TrainJointJump(const HiddenCorpus& train, std::size_t rank,
                           const TrainSettings& settings) {
  auto [inputs, targets] = PooledPairs(train);
  // Fixed-order batching in BatchedLoss would group one record's levels
  // together, so the loss bookkeeping sees a seeded permutation instead.
  Rng perm_rng(DeriveSeed(settings.seed, kJointLevel ^ 0x5eedULL));
  std::vector<std::size_t> order(inputs.rows());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  perm_rng.Shuffle(order);
  Matrix x(inputs.rows(), inputs.cols()), y(targets.rows(), targets.cols());
  for (std::size_t i = 0; i < order.size(); ++i) {
    auto xi = inputs.row(order[i]);
    auto yi = targets.row(order[i]);
    std::copy(xi.begin(), xi.end(), x.row(i).begin());
    std::copy(yi.begin(), yi.end(), y.row(i).begin());
  }
  return TrainOnPairs(x, y, kJointLevel, rank, settings, kJointLevel);
}

}  // namespace ojfa
