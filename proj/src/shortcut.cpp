#include "ojfa/shortcut.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ojfa/binary_io.hpp"
#include "ojfa/error.hpp"

namespace ojfa {
namespace {

constexpr char kBankMagic[] = "OJFS";
constexpr std::uint32_t kBankVersion = 1;

void CheckWidth(const LowRankJump& jump, const Matrix& h) {
  if (h.cols() != jump.hidden_dim) {
    throw Error("jump input is " + h.shape() + ", expected width " +
                std::to_string(jump.hidden_dim));
  }
}

// Normalise with the given statistics, then affine, A and B.
JumpForwardCache ApplyWithStats(const LowRankJump& jump, const Matrix& h,
                                std::vector<double> mean, std::vector<double> var) {
  const std::size_t n = h.rows(), H = jump.hidden_dim;
  JumpForwardCache c;
  c.normalized = Matrix(n, H);
  c.affine = Matrix(n, H);
  for (std::size_t j = 0; j < H; ++j) {
    const double inv = 1.0 / std::sqrt(var[j] + jump.epsilon);
    for (std::size_t i = 0; i < n; ++i) {
      const double xhat = (h(i, j) - mean[j]) * inv;
      c.normalized(i, j) = xhat;
      c.affine(i, j) = xhat * jump.gamma[j] + jump.beta[j];
    }
  }
  c.projected = Matmul(c.affine, jump.a);
  c.output = Matmul(c.projected, jump.b);
  c.batch_mean = std::move(mean);
  c.batch_var = std::move(var);
  return c;
}

// Adam over one flat parameter block.
struct AdamState {
  std::vector<double> m, v;

  void Step(std::span<double> params, std::span<const double> grads,
            const TrainSettings& s, std::size_t t) {
    if (m.empty()) {
      m.assign(params.size(), 0.0);
      v.assign(params.size(), 0.0);
    }
    const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * grads[i];
      v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * grads[i] * grads[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      params[i] -= s.learning_rate * mhat / (std::sqrt(vhat) + s.adam_epsilon);
    }
  }
};

Matrix GatherRows(const Matrix& src, std::span<const std::size_t> idx) {
  Matrix out(idx.size(), src.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    auto row = src.row(idx[i]);
    std::copy(row.begin(), row.end(), out.row(i).begin());
  }
  return out;
}

}  // namespace

std::size_t DefaultRank(std::size_t hidden_dim) {
  return std::max<std::size_t>(1, hidden_dim / 100);
}

std::uint64_t CountJumpParams(std::uint64_t hidden_dim, std::uint64_t rank) {
  return 2 * hidden_dim * rank + 4 * hidden_dim;
}

std::uint64_t CountBankParams(std::uint64_t hidden_dim, std::uint64_t rank,
                              std::uint64_t num_jumps) {
  return num_jumps * CountJumpParams(hidden_dim, rank);
}

LowRankJump LowRankJump::Init(std::uint32_t level, std::size_t hidden_dim, std::size_t rank,
                              Rng& rng) {
  if (hidden_dim < 1 || rank < 1) throw Error("jump needs H >= 1 and r >= 1");
  LowRankJump j;
  j.level = level;
  j.hidden_dim = hidden_dim;
  j.rank = rank;
  j.gamma.assign(hidden_dim, 1.0);
  j.beta.assign(hidden_dim, 0.0);
  j.running_mean.assign(hidden_dim, 0.0);
  j.running_var.assign(hidden_dim, 1.0);
  const double scale = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
  j.a = Matrix(hidden_dim, rank);
  for (double& x : j.a.data()) x = scale * rng.Normal();
  j.b = Matrix(rank, hidden_dim);
  for (double& x : j.b.data()) x = scale * rng.Normal();
  return j;
}

void LowRankJump::Validate() const {
  const std::size_t H = hidden_dim, r = rank;
  if (H < 1 || r < 1) throw Error("jump needs H >= 1 and r >= 1");
  if (gamma.size() != H || beta.size() != H || running_mean.size() != H ||
      running_var.size() != H || a.rows() != H || a.cols() != r || b.rows() != r ||
      b.cols() != H) {
    throw Error("jump parameter shapes disagree with H=" + std::to_string(H) +
                ", r=" + std::to_string(r));
  }
  auto finite = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
  };
  if (!finite(gamma) || !finite(beta) || !finite(running_mean) || !finite(running_var) ||
      !a.AllFinite() || !b.AllFinite()) {
    throw Error("jump parameters are not finite");
  }
  if (std::any_of(running_var.begin(), running_var.end(), [](double v) { return v < 0.0; })) {
    throw Error("jump running variance is negative");
  }
}

JumpForwardCache ForwardWithBatchStats(const LowRankJump& jump, const Matrix& h) {
  CheckWidth(jump, h);
  const std::size_t n = h.rows(), H = jump.hidden_dim;
  if (n < 2) throw Error("batch statistics need at least 2 rows, got " + std::to_string(n));
  std::vector<double> mean(H, 0.0), var(H, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < H; ++j) mean[j] += h(i, j);
  for (double& m : mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < H; ++j) var[j] += (h(i, j) - mean[j]) * (h(i, j) - mean[j]);
  for (double& v : var) v /= static_cast<double>(n);
  return ApplyWithStats(jump, h, std::move(mean), std::move(var));
}

Matrix JumpForward(LowRankJump& jump, const Matrix& h, double momentum) {
  if (jump.mode == JumpMode::kInfer) return JumpInfer(jump, h);
  JumpForwardCache c = ForwardWithBatchStats(jump, h);
  for (std::size_t j = 0; j < jump.hidden_dim; ++j) {
    jump.running_mean[j] = (1.0 - momentum) * jump.running_mean[j] + momentum * c.batch_mean[j];
    jump.running_var[j] = (1.0 - momentum) * jump.running_var[j] + momentum * c.batch_var[j];
  }
  return std::move(c.output);
}

Matrix JumpInfer(const LowRankJump& jump, const Matrix& h) {
  if (jump.mode != JumpMode::kInfer) throw Error("JumpInfer needs an infer-mode jump");
  CheckWidth(jump, h);
  if (h.rows() < 1) throw Error("empty input batch");
  return ApplyWithStats(jump, h, jump.running_mean, jump.running_var).output;
}

double MseLoss(const Matrix& approx, const Matrix& target) {
  if (approx.rows() != target.rows() || approx.cols() != target.cols()) {
    throw Error("mse shape mismatch: " + approx.shape() + " vs " + target.shape());
  }
  if (approx.rows() == 0) throw Error("mse of an empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < approx.rows(); ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < approx.cols(); ++j) {
      const double d = approx(i, j) - target(i, j);
      row += d * d;
    }
    total += row;
  }
  return total / static_cast<double>(approx.rows());
}

JumpGradients JumpBackward(const LowRankJump& jump, const Matrix& h, const Matrix& target) {
  if (jump.mode != JumpMode::kTrain) {
    throw Error("JumpBackward needs a train-mode jump; running statistics are not differentiated");
  }
  const JumpForwardCache c = ForwardWithBatchStats(jump, h);
  if (target.rows() != h.rows() || target.cols() != jump.hidden_dim) {
    throw Error("target is " + target.shape() + ", expected " + c.output.shape());
  }
  const std::size_t n = h.rows(), H = jump.hidden_dim;
  const double nn = static_cast<double>(n);

  Matrix d_out(n, H);
  for (std::size_t i = 0; i < d_out.size(); ++i)
    d_out.data()[i] = 2.0 / nn * (c.output.data()[i] - target.data()[i]);

  JumpGradients g;
  g.b = MatmulTransA(c.projected, d_out);
  const Matrix d_projected = MatmulTransB(d_out, jump.b);
  g.a = MatmulTransA(c.affine, d_projected);
  const Matrix d_affine = MatmulTransB(d_projected, jump.a);

  g.gamma.assign(H, 0.0);
  g.beta.assign(H, 0.0);
  g.input = Matrix(n, H);
  for (std::size_t j = 0; j < H; ++j) {
    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double dy = d_affine(i, j);
      g.gamma[j] += dy * c.normalized(i, j);
      g.beta[j] += dy;
      const double dxhat = dy * jump.gamma[j];
      sum_dxhat += dxhat;
      sum_dxhat_xhat += dxhat * c.normalized(i, j);
    }
    const double inv = 1.0 / std::sqrt(c.batch_var[j] + jump.epsilon);
    for (std::size_t i = 0; i < n; ++i) {
      const double dxhat = d_affine(i, j) * jump.gamma[j];
      g.input(i, j) = inv / nn * (nn * dxhat - sum_dxhat - c.normalized(i, j) * sum_dxhat_xhat);
    }
  }
  return g;
}

void TrainSettings::Validate() const {
  std::vector<std::string> problems;
  if (!(learning_rate > 0.0)) problems.push_back("train.learning_rate must be > 0");
  if (!(beta1 > 0.0 && beta1 < 1.0)) problems.push_back("train.beta1 must lie in (0, 1)");
  if (!(beta2 > 0.0 && beta2 < 1.0)) problems.push_back("train.beta2 must lie in (0, 1)");
  if (!(adam_epsilon > 0.0)) problems.push_back("train.adam_epsilon must be > 0");
  if (batch_size < 2) problems.push_back("train.batch_size must be >= 2");
  if (epochs < 1) problems.push_back("train.epochs must be >= 1");
  if (!(bn_momentum > 0.0 && bn_momentum <= 1.0)) {
    problems.push_back("train.bn_momentum must lie in (0, 1]");
  }
  if (!problems.empty()) throw ConfigError(std::move(problems));
}

double BatchedLoss(const LowRankJump& jump, const Matrix& inputs, const Matrix& targets,
                   std::size_t batch_size) {
  const std::size_t batches = inputs.rows() / batch_size;
  if (batches == 0) throw Error("batch size exceeds the number of training pairs");
  double total = 0.0;
  std::vector<std::size_t> idx(batch_size);
  for (std::size_t bi = 0; bi < batches; ++bi) {
    for (std::size_t i = 0; i < batch_size; ++i) idx[i] = bi * batch_size + i;
    const Matrix x = GatherRows(inputs, idx);
    const Matrix y = GatherRows(targets, idx);
    total += MseLoss(ForwardWithBatchStats(jump, x).output, y);
  }
  return total / static_cast<double>(batches);
}

TrainedJump TrainOnPairs(const Matrix& inputs, const Matrix& targets, std::uint32_t level,
                         std::size_t rank, const TrainSettings& settings, std::uint64_t stream) {
  settings.Validate();
  if (inputs.rows() != targets.rows() || inputs.cols() != targets.cols()) {
    throw Error("training inputs " + inputs.shape() + " and targets " + targets.shape() +
                " differ in shape");
  }
  if (settings.batch_size > inputs.rows()) {
    throw Error("batch size " + std::to_string(settings.batch_size) + " exceeds the " +
                std::to_string(inputs.rows()) + " available training pairs");
  }
  Rng rng(DeriveSeed(settings.seed, stream));
  TrainedJump out;
  out.jump = LowRankJump::Init(level, inputs.cols(), rank, rng);
  LowRankJump& jump = out.jump;
  out.initial_loss = BatchedLoss(jump, inputs, targets, settings.batch_size);

  AdamState adam_gamma, adam_beta, adam_a, adam_b;
  std::vector<std::size_t> order(inputs.rows());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::size_t batches = inputs.rows() / settings.batch_size;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < settings.epochs; ++epoch) {
    rng.Shuffle(order);
    for (std::size_t bi = 0; bi < batches; ++bi) {
      const std::span<const std::size_t> idx(order.data() + bi * settings.batch_size,
                                             settings.batch_size);
      const Matrix x = GatherRows(inputs, idx);
      const Matrix y = GatherRows(targets, idx);
      const JumpGradients g = JumpBackward(jump, x, y);
      JumpForward(jump, x, settings.bn_momentum);  // running statistics only
      ++step;
      adam_gamma.Step(jump.gamma, g.gamma, settings, step);
      adam_beta.Step(jump.beta, g.beta, settings, step);
      adam_a.Step(jump.a.data(), g.a.data(), settings, step);
      adam_b.Step(jump.b.data(), g.b.data(), settings, step);
    }
  }

  ToStoragePrecision(jump.gamma);
  ToStoragePrecision(jump.beta);
  ToStoragePrecision(jump.running_mean);
  ToStoragePrecision(jump.running_var);
  ToStoragePrecision(jump.a);
  ToStoragePrecision(jump.b);
  out.final_loss = BatchedLoss(jump, inputs, targets, settings.batch_size);
  jump.mode = JumpMode::kInfer;
  jump.Validate();
  return out;
}

TrainedJump TrainJump(const HiddenCorpus& train, std::uint32_t level, std::size_t rank,
                      const TrainSettings& settings) {
  if (level >= train.num_blocks) {
    throw Error("exit level " + std::to_string(level) + " is outside {0.." +
                std::to_string(train.num_blocks - 1) + "}");
  }
  return TrainOnPairs(train.LevelMatrix(level), train.FinalMatrix(), level, rank, settings,
                      level);
}

const LowRankJump* JumpBank::Find(std::uint32_t level) const {
  for (const auto& j : jumps)
    if (j.level == level) return &j;
  return nullptr;
}

const LowRankJump& JumpBank::At(std::uint32_t level) const {
  const LowRankJump* j = Find(level);
  if (j == nullptr) throw Error("bank holds no jump for level " + std::to_string(level));
  return *j;
}

JumpBank JumpBank::Pruned(std::uint32_t level) const {
  JumpBank out;
  out.hidden_dim = hidden_dim;
  out.rank = rank;
  out.num_levels = num_levels;
  out.jumps.push_back(At(level));
  return out;
}

std::vector<std::uint8_t> EncodeBank(const JumpBank& bank) {
  if (bank.jumps.empty()) throw Error("cannot encode an empty jump bank");
  ByteWriter out;
  out.Magic(kBankMagic);
  out.U32(kBankVersion);
  out.U32(bank.hidden_dim);
  out.U32(bank.rank);
  out.U32(static_cast<std::uint32_t>(bank.jumps.size()));
  out.U32(bank.num_levels);
  for (const auto& j : bank.jumps) {
    j.Validate();
    if (j.hidden_dim != bank.hidden_dim || j.rank != bank.rank) {
      throw Error("jump for level " + std::to_string(j.level) +
                  " does not match the bank dimensions");
    }
    if (j.epsilon != kBatchNormEpsilon) {
      throw Error("OJFS stores jumps with the default batch-norm epsilon only");
    }
    out.U32(j.level);
    out.F32s(j.gamma);
    out.F32s(j.beta);
    out.F32s(j.running_mean);
    out.F32s(j.running_var);
    out.F32s(j.a.data());
    out.F32s(j.b.data());
  }
  return out.Take();
}

JumpBank DecodeBank(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  in.ExpectMagic(kBankMagic);
  const std::uint64_t version_at = in.offset();
  const std::uint32_t version = in.U32("version");
  if (version != kBankVersion) {
    throw FormatError("unsupported OJFS version " + std::to_string(version), version_at);
  }
  JumpBank bank;
  const std::uint64_t header_at = in.offset();
  bank.hidden_dim = in.U32("H");
  bank.rank = in.U32("r");
  const std::uint32_t count = in.U32("jump_count");
  bank.num_levels = in.U32("level_count");
  if (bank.hidden_dim == 0 || bank.rank == 0 || count == 0) {
    throw FormatError("OJFS header needs H, r and jump_count >= 1", header_at);
  }
  const std::uint64_t H = bank.hidden_dim, r = bank.rank;
  const std::uint64_t per_jump = 4 + 4 * (4 * H + 2 * H * r);
  const std::uint64_t remaining = bytes.size() - in.offset();
  if (remaining != per_jump * count) {
    throw FormatError("OJFS payload is " + std::to_string(remaining) +
                          " bytes, header (H=" + std::to_string(H) + ", r=" + std::to_string(r) +
                          ", jumps=" + std::to_string(count) + ") implies " +
                          std::to_string(per_jump * count),
                      in.offset());
  }
  bank.jumps.resize(count);
  for (auto& j : bank.jumps) {
    const std::uint64_t level_at = in.offset();
    j.level = in.U32("level");
    if (j.level != kJointLevel && bank.num_levels != 0 && j.level >= bank.num_levels) {
      throw FormatError("jump level " + std::to_string(j.level) + " exceeds level_count " +
                            std::to_string(bank.num_levels),
                        level_at);
    }
    j.hidden_dim = H;
    j.rank = r;
    auto read = [&](std::vector<double>& v, const char* what) {
      v.assign(H, 0.0);
      in.F32s(v, what);
    };
    read(j.gamma, "gamma");
    read(j.beta, "beta");
    read(j.running_mean, "running_mean");
    const std::uint64_t var_at = in.offset();
    read(j.running_var, "running_var");
    if (std::any_of(j.running_var.begin(), j.running_var.end(), [](double v) { return v < 0; })) {
      throw FormatError("negative running variance", var_at);
    }
    j.a = Matrix(H, r);
    in.F32s(j.a.data(), "A");
    j.b = Matrix(r, H);
    in.F32s(j.b.data(), "B");
    j.mode = JumpMode::kInfer;
  }
  in.ExpectEnd();
  return bank;
}

void SaveBank(const JumpBank& bank, const std::filesystem::path& path) {
  WriteFileBytes(path, EncodeBank(bank));
}

JumpBank LoadBank(const std::filesystem::path& path) { return DecodeBank(ReadFileBytes(path)); }

}  // namespace ojfa
