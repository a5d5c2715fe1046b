#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "ojfa/numerics.hpp"

namespace ojfa {

using Token = std::uint32_t;

struct TransformerConfig {
  std::uint32_t vocab_size = 256;
  std::uint32_t hidden_dim = 64;
  std::uint32_t num_blocks = 4;
  std::uint32_t num_heads = 4;
  std::uint32_t ffn_dim = 256;
  std::uint32_t max_seq_len = 64;
  std::uint64_t seed = 0;

  // Throws ConfigError listing every invalid field.
  void Validate() const;
  friend bool operator==(const TransformerConfig&, const TransformerConfig&) = default;
};

struct BlockWeights {
  std::vector<double> ln1_gain, ln1_bias;
  Matrix qkv;  // H x 3H, columns ordered [q | k | v]
  std::vector<double> qkv_bias;
  Matrix attn_proj;  // H x H
  std::vector<double> attn_proj_bias;
  std::vector<double> ln2_gain, ln2_bias;
  Matrix fc;  // H x F
  std::vector<double> fc_bias;
  Matrix fc_proj;  // F x H
  std::vector<double> fc_proj_bias;

  friend bool operator==(const BlockWeights&, const BlockWeights&) = default;
};

// Frozen pre-layer-norm decoder. All values are exactly representable as
// 32-bit floats so that the OJFW round trip is lossless.
struct TransformerWeights {
  TransformerConfig config;
  Matrix token_embedding;     // V x H
  Matrix position_embedding;  // S x H
  std::vector<BlockWeights> blocks;
  std::vector<double> final_ln_gain, final_ln_bias;
  Matrix unembedding;  // H x V

  std::size_t head_dim() const { return config.hidden_dim / config.num_heads; }
  // FNV-1a of the OJFW encoding.
  std::uint64_t Checksum() const;

  friend bool operator==(const TransformerWeights&, const TransformerWeights&) = default;
};

// Residual-stream states for one token sequence. levels[0] is the embedding
// output, levels[k] the output of block k; each is T x H. logits is T x V.
struct HiddenTrace {
  std::vector<Matrix> levels;
  Matrix logits;

  std::size_t num_positions() const { return logits.rows(); }
  std::span<const double> At(std::size_t level, std::size_t position) const {
    return levels.at(level).row(position);
  }
};

// Scaled-normal init (std 0.02), zero biases, unit layer-norm gains.
TransformerWeights InitModel(const TransformerConfig& config);

// Token + position embeddings for `tokens` (T x H). Validates token ids and
// length.
Matrix Embed(const TransformerWeights& weights, std::span<const Token> tokens);
// Applies block `block` (0-based) to the residual stream in place.
void ApplyBlock(const TransformerWeights& weights, std::size_t block, Matrix& state);

HiddenTrace ForwardTrace(const TransformerWeights& weights, std::span<const Token> tokens);

// Model head: final layer-norm followed by the unembedding.
std::vector<double> Head(const TransformerWeights& weights, std::span<const double> h);
// Row-wise Head over an n x H batch.
Matrix HeadBatch(const TransformerWeights& weights, const Matrix& h);

std::vector<std::uint8_t> EncodeModel(const TransformerWeights& weights);
TransformerWeights DecodeModel(std::span<const std::uint8_t> bytes);
void SaveModel(const TransformerWeights& weights, const std::filesystem::path& path);
TransformerWeights LoadModel(const std::filesystem::path& path);

std::vector<Token> BytesToTokens(std::string_view text);

}  // namespace ojfa
