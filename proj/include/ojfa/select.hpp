#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ojfa/corpus.hpp"
#include "ojfa/shortcut.hpp"

#include "json.hpp"

namespace ojfa {

inline constexpr double kScoreTemperature = 5e-4;

// Jump m applied to an input from any level: BatchNorm_m with m's running
// statistics, then A_m, B_m.
std::vector<double> ReuseApproximation(const LowRankJump& jump, std::span<const double> h);
Matrix ReuseApproximation(const LowRankJump& jump, const Matrix& h);

// sgn(c) * c^2.
inline double SignedSquare(double c) { return c < 0 ? -c * c : c * c; }

// Cosine that reads a zero-norm side as orthogonal (0).
double CosineOrZero(std::span<const double> u, std::span<const double> v);

struct ReuseScore {
  double score = 0.0;                // D_m
  std::vector<double> mean_cosine;   // per exit level k, mean over records of C
};

// D_m over exit levels {0..K-1} and every record of `corpus`.
ReuseScore SscsScore(const LowRankJump& jump, const HiddenCorpus& corpus, unsigned threads = 1);

struct ReuseScoreTable {
  std::vector<std::uint32_t> levels;  // jump level per row, ascending
  std::vector<double> scores;         // D_m per jump
  Matrix mean_cosine;                 // [k][m]: mean C for exit level k under jump m
  std::uint32_t chosen = 0;           // level of the selected jump

  std::size_t chosen_index() const;
  nlohmann::json ToJson() const;
  static ReuseScoreTable FromJson(const nlohmann::json& j);
};

// Argmax with ties to the smallest index.
std::size_t ArgmaxScore(std::span<const double> scores);

// Scores every non-joint jump in the bank and picks the best.
ReuseScoreTable SelectOjfa(const JumpBank& bank, const HiddenCorpus& train, unsigned threads = 1);

// Softmax of the D scores, for reporting.
std::vector<double> ScoreDistribution(std::span<const double> scores,
                                      double temperature = kScoreTemperature);

// The pooled training set behind the joint jump: every (h^k_i, h^K_i) for
// k in {0..K-1}, record-major.
std::pair<Matrix, Matrix> PooledPairs(const HiddenCorpus& train);

// Same architecture and recipe as TrainJump, trained on the pooled pairs.
TrainedJump TrainJointJump(const HiddenCorpus& train, std::size_t rank,
                           const TrainSettings& settings);

}  // namespace ojfa
