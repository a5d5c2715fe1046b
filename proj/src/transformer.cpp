#include "ojfa/transformer.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "ojfa/binary_io.hpp"
#include "ojfa/error.hpp"

namespace ojfa {
namespace {

constexpr char kModelMagic[] = "OJFW";
constexpr std::uint32_t kModelVersion = 1;
constexpr double kInitStd = 0.02;
constexpr double kLayerNormEps = 1e-5;

void LayerNormRow(std::span<const double> x, std::span<const double> gain,
                  std::span<const double> bias, std::span<double> out) {
  const std::size_t n = x.size();
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
  for (std::size_t i = 0; i < n; ++i) out[i] = (x[i] - mean) * inv * gain[i] + bias[i];
}

Matrix LayerNorm(const Matrix& x, const std::vector<double>& gain,
                 const std::vector<double>& bias) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) LayerNormRow(x.row(r), gain, bias, out.row(r));
  return out;
}

Matrix Linear(const Matrix& x, const Matrix& w, const std::vector<double>& bias) {
  Matrix out = Matmul(x, w);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bias[c];
  }
  return out;
}

double Gelu(double x) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  return 0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x)));
}

Matrix RandomMatrix(std::size_t rows, std::size_t cols, Rng& rng) {
  Matrix m(rows, cols);
  for (double& x : m.data()) x = ToStoragePrecision(kInitStd * rng.Normal());
  return m;
}

Matrix CausalSelfAttention(const TransformerWeights& w, const BlockWeights& b,
                           const Matrix& x) {
  const std::size_t T = x.rows();
  const std::size_t H = w.config.hidden_dim;
  const std::size_t heads = w.config.num_heads;
  const std::size_t hd = w.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  const Matrix qkv = Linear(x, b.qkv, b.qkv_bias);
  Matrix mixed(T, H);
  std::vector<double> scores(T);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t q0 = h * hd;
    const std::size_t k0 = H + h * hd;
    const std::size_t v0 = 2 * H + h * hd;
    for (std::size_t t = 0; t < T; ++t) {
      double mx = -INFINITY;
      for (std::size_t s = 0; s <= t; ++s) {
        double dot = 0.0;
        for (std::size_t d = 0; d < hd; ++d) dot += qkv(t, q0 + d) * qkv(s, k0 + d);
        scores[s] = dot * scale;
        mx = std::max(mx, scores[s]);
      }
      double sum = 0.0;
      for (std::size_t s = 0; s <= t; ++s) {
        scores[s] = std::exp(scores[s] - mx);
        sum += scores[s];
      }
      for (std::size_t s = 0; s <= t; ++s) {
        const double p = scores[s] / sum;
        for (std::size_t d = 0; d < hd; ++d) mixed(t, q0 + d) += p * qkv(s, v0 + d);
      }
    }
  }
  return Linear(mixed, b.attn_proj, b.attn_proj_bias);
}

void WriteVec(ByteWriter& out, const std::vector<double>& v) { out.F32s(v); }
void WriteMat(ByteWriter& out, const Matrix& m) { out.F32s(m.data()); }

void ReadVec(ByteReader& in, std::vector<double>& v, std::size_t n, const char* what) {
  v.assign(n, 0.0);
  in.F32s(v, what);
}
void ReadMat(ByteReader& in, Matrix& m, std::size_t rows, std::size_t cols, const char* what) {
  m = Matrix(rows, cols);
  in.F32s(m.data(), what);
}

}  // namespace

void TransformerConfig::Validate() const {
  std::vector<std::string> problems;
  if (vocab_size < 2) problems.push_back("model.vocab_size must be >= 2");
  if (hidden_dim < 1) problems.push_back("model.hidden_dim must be >= 1");
  if (num_blocks < 2) problems.push_back("model.num_blocks must be >= 2");
  if (num_heads < 1) {
    problems.push_back("model.num_heads must be >= 1");
  } else if (hidden_dim % num_heads != 0) {
    problems.push_back("model.hidden_dim (" + std::to_string(hidden_dim) +
                       ") must be divisible by model.num_heads (" +
                       std::to_string(num_heads) + ")");
  }
  if (ffn_dim < 1) problems.push_back("model.ffn_dim must be >= 1");
  if (max_seq_len < 1) problems.push_back("model.max_seq_len must be >= 1");
  if (!problems.empty()) throw ConfigError(std::move(problems));
}

std::uint64_t TransformerWeights::Checksum() const { return Fnv1a(EncodeModel(*this)); }

TransformerWeights InitModel(const TransformerConfig& config) {
  config.Validate();
  const std::size_t V = config.vocab_size, H = config.hidden_dim, K = config.num_blocks,
                    F = config.ffn_dim, S = config.max_seq_len;
  Rng rng(config.seed);
  TransformerWeights w;
  w.config = config;
  w.token_embedding = RandomMatrix(V, H, rng);
  w.position_embedding = RandomMatrix(S, H, rng);
  w.blocks.resize(K);
  for (auto& b : w.blocks) {
    b.ln1_gain.assign(H, 1.0);
    b.ln1_bias.assign(H, 0.0);
    b.qkv = RandomMatrix(H, 3 * H, rng);
    b.qkv_bias.assign(3 * H, 0.0);
    b.attn_proj = RandomMatrix(H, H, rng);
    b.attn_proj_bias.assign(H, 0.0);
    b.ln2_gain.assign(H, 1.0);
    b.ln2_bias.assign(H, 0.0);
    b.fc = RandomMatrix(H, F, rng);
    b.fc_bias.assign(F, 0.0);
    b.fc_proj = RandomMatrix(F, H, rng);
    b.fc_proj_bias.assign(H, 0.0);
  }
  w.final_ln_gain.assign(H, 1.0);
  w.final_ln_bias.assign(H, 0.0);
  w.unembedding = RandomMatrix(H, V, rng);
  return w;
}

Matrix Embed(const TransformerWeights& weights, std::span<const Token> tokens) {
  const auto& cfg = weights.config;
  if (tokens.empty()) throw Error("cannot run the model on an empty token sequence");
  if (tokens.size() > cfg.max_seq_len) {
    throw Error("sequence length " + std::to_string(tokens.size()) + " exceeds max_seq_len " +
                std::to_string(cfg.max_seq_len));
  }
  Matrix x(tokens.size(), cfg.hidden_dim);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (tokens[t] >= cfg.vocab_size) {
      throw Error("token id " + std::to_string(tokens[t]) + " at position " +
                  std::to_string(t) + " is out of range for vocab_size " +
                  std::to_string(cfg.vocab_size));
    }
    auto te = weights.token_embedding.row(tokens[t]);
    auto pe = weights.position_embedding.row(t);
    auto out = x.row(t);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = te[i] + pe[i];
  }
  return x;
}

void ApplyBlock(const TransformerWeights& weights, std::size_t block, Matrix& state) {
  const BlockWeights& b = weights.blocks.at(block);
  const Matrix attn = CausalSelfAttention(weights, b, LayerNorm(state, b.ln1_gain, b.ln1_bias));
  for (std::size_t i = 0; i < state.size(); ++i) state.data()[i] += attn.data()[i];

  Matrix hidden = Linear(LayerNorm(state, b.ln2_gain, b.ln2_bias), b.fc, b.fc_bias);
  for (double& v : hidden.data()) v = Gelu(v);
  const Matrix mlp = Linear(hidden, b.fc_proj, b.fc_proj_bias);
  for (std::size_t i = 0; i < state.size(); ++i) state.data()[i] += mlp.data()[i];
}

HiddenTrace ForwardTrace(const TransformerWeights& weights, std::span<const Token> tokens) {
  HiddenTrace trace;
  Matrix state = Embed(weights, tokens);
  trace.levels.reserve(weights.blocks.size() + 1);
  trace.levels.push_back(state);
  for (std::size_t k = 0; k < weights.blocks.size(); ++k) {
    ApplyBlock(weights, k, state);
    trace.levels.push_back(state);
  }
  trace.logits = HeadBatch(weights, state);
  return trace;
}

std::vector<double> Head(const TransformerWeights& weights, std::span<const double> h) {
  const std::size_t H = weights.config.hidden_dim;
  if (h.size() != H) {
    throw Error("head input has length " + std::to_string(h.size()) + ", expected " +
                std::to_string(H));
  }
  std::vector<double> normed(H);
  LayerNormRow(h, weights.final_ln_gain, weights.final_ln_bias, normed);
  std::vector<double> logits(weights.config.vocab_size, 0.0);
  for (std::size_t p = 0; p < H; ++p) {
    auto u = weights.unembedding.row(p);
    for (std::size_t j = 0; j < logits.size(); ++j) logits[j] += normed[p] * u[j];
  }
  return logits;
}

Matrix HeadBatch(const TransformerWeights& weights, const Matrix& h) {
  if (h.cols() != weights.config.hidden_dim) {
    throw Error("head input batch is " + h.shape() + ", expected width " +
                std::to_string(weights.config.hidden_dim));
  }
  Matrix logits(h.rows(), weights.config.vocab_size);
  for (std::size_t r = 0; r < h.rows(); ++r) {
    const auto row = Head(weights, h.row(r));
    std::copy(row.begin(), row.end(), logits.row(r).begin());
  }
  return logits;
}

std::vector<std::uint8_t> EncodeModel(const TransformerWeights& w) {
  const auto& c = w.config;
  ByteWriter out;
  out.Magic(kModelMagic);
  out.U32(kModelVersion);
  out.U32(c.vocab_size);
  out.U32(c.hidden_dim);
  out.U32(c.num_blocks);
  out.U32(c.num_heads);
  out.U32(c.ffn_dim);
  out.U32(c.max_seq_len);
  out.U64(c.seed);
  WriteMat(out, w.token_embedding);
  WriteMat(out, w.position_embedding);
  for (const auto& b : w.blocks) {
    WriteVec(out, b.ln1_gain);
    WriteVec(out, b.ln1_bias);
    WriteMat(out, b.qkv);
    WriteVec(out, b.qkv_bias);
    WriteMat(out, b.attn_proj);
    WriteVec(out, b.attn_proj_bias);
    WriteVec(out, b.ln2_gain);
    WriteVec(out, b.ln2_bias);
    WriteMat(out, b.fc);
    WriteVec(out, b.fc_bias);
    WriteMat(out, b.fc_proj);
    WriteVec(out, b.fc_proj_bias);
  }
  WriteVec(out, w.final_ln_gain);
  WriteVec(out, w.final_ln_bias);
  WriteMat(out, w.unembedding);
  return out.Take();
}

TransformerWeights DecodeModel(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  in.ExpectMagic(kModelMagic);
  const std::uint64_t version_at = in.offset();
  const std::uint32_t version = in.U32("version");
  if (version != kModelVersion) {
    throw FormatError("unsupported OJFW version " + std::to_string(version), version_at);
  }
  TransformerWeights w;
  auto& c = w.config;
  const std::uint64_t config_at = in.offset();
  c.vocab_size = in.U32("vocab_size");
  c.hidden_dim = in.U32("hidden_dim");
  c.num_blocks = in.U32("num_blocks");
  c.num_heads = in.U32("num_heads");
  c.ffn_dim = in.U32("ffn_dim");
  c.max_seq_len = in.U32("max_seq_len");
  c.seed = in.U64("seed");
  try {
    c.Validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("invalid OJFW header: ") + e.what(), config_at);
  }
  const std::size_t V = c.vocab_size, H = c.hidden_dim, F = c.ffn_dim, S = c.max_seq_len;
  // Reject absurd headers before allocating.
  const std::uint64_t expected =
      4ull * (V * H + S * H + c.num_blocks * (4 * H + 3 * H * H + 3 * H + H * H + H + H * F +
                                              F + F * H + H) +
              2 * H + H * V);
  if (bytes.size() - in.offset() != expected) {
    throw FormatError("OJFW payload is " + std::to_string(bytes.size() - in.offset()) +
                          " bytes, header implies " + std::to_string(expected),
                      in.offset());
  }
  ReadMat(in, w.token_embedding, V, H, "token_embedding");
  ReadMat(in, w.position_embedding, S, H, "position_embedding");
  w.blocks.resize(c.num_blocks);
  for (auto& b : w.blocks) {
    ReadVec(in, b.ln1_gain, H, "ln1_gain");
    ReadVec(in, b.ln1_bias, H, "ln1_bias");
    ReadMat(in, b.qkv, H, 3 * H, "qkv");
    ReadVec(in, b.qkv_bias, 3 * H, "qkv_bias");
    ReadMat(in, b.attn_proj, H, H, "attn_proj");
    ReadVec(in, b.attn_proj_bias, H, "attn_proj_bias");
    ReadVec(in, b.ln2_gain, H, "ln2_gain");
    ReadVec(in, b.ln2_bias, H, "ln2_bias");
    ReadMat(in, b.fc, H, F, "fc");
    ReadVec(in, b.fc_bias, F, "fc_bias");
    ReadMat(in, b.fc_proj, F, H, "fc_proj");
    ReadVec(in, b.fc_proj_bias, H, "fc_proj_bias");
  }
  ReadVec(in, w.final_ln_gain, H, "final_ln_gain");
  ReadVec(in, w.final_ln_bias, H, "final_ln_bias");
  ReadMat(in, w.unembedding, H, V, "unembedding");
  in.ExpectEnd();
  return w;
}

void SaveModel(const TransformerWeights& weights, const std::filesystem::path& path) {
  WriteFileBytes(path, EncodeModel(weights));
}

TransformerWeights LoadModel(const std::filesystem::path& path) {
  return DecodeModel(ReadFileBytes(path));
}

std::vector<Token> BytesToTokens(std::string_view text) {
  std::vector<Token> tokens;
  tokens.reserve(text.size());
  for (char c : text) tokens.push_back(static_cast<unsigned char>(c));
  return tokens;
}

}  // namespace ojfa
