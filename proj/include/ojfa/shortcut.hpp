#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "ojfa/corpus.hpp"
#include "ojfa/numerics.hpp"

namespace ojfa {

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;
// Level tag of a jump trained on inputs pooled from every exit level.
inline constexpr std::uint32_t kJointLevel = 0xFFFFFFFFu;

enum class JumpMode { kTrain, kInfer };

// max(1, floor(H / 100)).
std::size_t DefaultRank(std::size_t hidden_dim);

// A (H x r), B (r x H), gamma, beta, running mean, running variance.
std::uint64_t CountJumpParams(std::uint64_t hidden_dim, std::uint64_t rank);
std::uint64_t CountBankParams(std::uint64_t hidden_dim, std::uint64_t rank,
                              std::uint64_t num_jumps);

// Normalised low-rank shortcut: BatchNorm(h) · A · B.
struct LowRankJump {
  std::uint32_t level = 0;
  std::size_t hidden_dim = 0;
  std::size_t rank = 0;
  std::vector<double> gamma, beta;
  std::vector<double> running_mean, running_var;
  Matrix a;  // H x r
  Matrix b;  // r x H
  double epsilon = kBatchNormEpsilon;
  JumpMode mode = JumpMode::kTrain;

  // gamma = 1, beta = 0, running stats (0, 1), A and B ~ N(0, 1/H).
  static LowRankJump Init(std::uint32_t level, std::size_t hidden_dim, std::size_t rank,
                          Rng& rng);

  bool is_joint() const { return level == kJointLevel; }
  std::uint64_t ParameterCount() const { return CountJumpParams(hidden_dim, rank); }
  // Throws if shapes disagree with (H, r) or any value is non-finite.
  void Validate() const;

  friend bool operator==(const LowRankJump&, const LowRankJump&) = default;
};

// Intermediates of a batch-statistics forward pass.
struct JumpForwardCache {
  std::vector<double> batch_mean;
  std::vector<double> batch_var;  // biased
  Matrix normalized;              // (h - mean) / sqrt(var + eps)
  Matrix affine;                  // normalized * gamma + beta
  Matrix projected;               // affine · A
  Matrix output;                  // projected · B
};

// Batch-statistics pass with no state change. Needs n >= 2.
JumpForwardCache ForwardWithBatchStats(const LowRankJump& jump, const Matrix& h);

// Train mode: batch statistics, and running statistics move by `momentum`.
// Infer mode: running statistics, no mutation.
Matrix JumpForward(LowRankJump& jump, const Matrix& h, double momentum = kBatchNormMomentum);
// Infer-mode evaluation; throws on a train-mode jump.
Matrix JumpInfer(const LowRankJump& jump, const Matrix& h);

// Mean over rows of the squared Euclidean distance.
double MseLoss(const Matrix& approx, const Matrix& target);

struct JumpGradients {
  std::vector<double> gamma, beta;
  Matrix a, b;
  Matrix input;  // d loss / d h, through the batch mean and variance
};

// Gradients of MseLoss(ForwardWithBatchStats(jump, h).output, target).
JumpGradients JumpBackward(const LowRankJump& jump, const Matrix& h, const Matrix& target);

struct TrainSettings {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t batch_size = 64;
  std::size_t epochs = 20;
  std::uint64_t seed = 0;
  double bn_momentum = kBatchNormMomentum;

  // Throws ConfigError listing every invalid field.
  void Validate() const;
};

struct TrainedJump {
  LowRankJump jump;  // infer mode, parameters at 32-bit storage precision
  // Batch-statistics MSE over the unshuffled full batches, before the first
  // update and after the last one.
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

// Mini-batch Adam on (inputs[i], targets[i]) pairs. `stream` selects the
// seed sub-stream used for initialisation and shuffling.
TrainedJump TrainOnPairs(const Matrix& inputs, const Matrix& targets, std::uint32_t level,
                         std::size_t rank, const TrainSettings& settings, std::uint64_t stream);

// Trains the shortcut from level m to the final level.
TrainedJump TrainJump(const HiddenCorpus& train, std::uint32_t level, std::size_t rank,
                      const TrainSettings& settings);

// Batch-statistics MSE averaged over consecutive full batches.
double BatchedLoss(const LowRankJump& jump, const Matrix& inputs, const Matrix& targets,
                   std::size_t batch_size);

// Shortcut set sharing (H, r). num_levels is the exit-level count K of the
// model the bank was trained for, kept when the bank is pruned.
struct JumpBank {
  std::uint32_t hidden_dim = 0;
  std::uint32_t rank = 0;
  std::uint32_t num_levels = 0;
  std::vector<LowRankJump> jumps;

  const LowRankJump* Find(std::uint32_t level) const;
  const LowRankJump& At(std::uint32_t level) const;
  std::uint64_t ParameterCount() const {
    return CountBankParams(hidden_dim, rank, jumps.size());
  }
  // Bank holding only the jump for `level`.
  JumpBank Pruned(std::uint32_t level) const;

  friend bool operator==(const JumpBank&, const JumpBank&) = default;
};

std::vector<std::uint8_t> EncodeBank(const JumpBank& bank);
JumpBank DecodeBank(std::span<const std::uint8_t> bytes);
void SaveBank(const JumpBank& bank, const std::filesystem::path& path);
JumpBank LoadBank(const std::filesystem::path& path);

}  // namespace ojfa
