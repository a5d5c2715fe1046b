#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ojfa/numerics.hpp"
#include "ojfa/transformer.hpp"

namespace ojfa {

// Positions sampled from a text have at least this many tokens of context.
inline constexpr std::size_t kMinPosition = 2;

// One token position: K+1 level vectors ((K+1) x H, level 0 first).
struct HiddenRecord {
  std::uint64_t sentence_id = 0;
  std::uint32_t position = 0;
  Matrix levels;

  std::span<const double> Level(std::size_t k) const { return levels.row(k); }
  std::span<const double> Final() const { return levels.row(levels.rows() - 1); }

  friend bool operator==(const HiddenRecord&, const HiddenRecord&) = default;
};

enum class Split { kTrain, kTest };

struct HiddenCorpus {
  std::uint32_t hidden_dim = 0;  // H
  std::uint32_t num_blocks = 0;  // K; records hold K+1 levels
  std::vector<HiddenRecord> records;
  Split split = Split::kTrain;

  // Texts skipped for being too short, and texts cut to max_seq_len.
  std::size_t skipped_texts = 0;
  std::size_t truncated_texts = 0;

  std::size_t size() const { return records.size(); }
  // Level-k vectors of every record, stacked into an N x H matrix.
  Matrix LevelMatrix(std::size_t k) const;
  Matrix FinalMatrix() const { return LevelMatrix(num_blocks); }

  // Throws unless every record has (K+1) x H finite levels and N >= 1.
  void Validate() const;
};

// Samples `positions_per_text` distinct positions per text uniformly from
// {kMinPosition .. len-1} and stores the trace there. Texts longer than
// max_seq_len are truncated; shorter than kMinPosition+1 are skipped.
HiddenCorpus BuildCorpus(const TransformerWeights& weights,
                         const std::vector<std::string>& texts,
                         std::size_t positions_per_text, Rng& rng, unsigned threads = 1);

// Seeded shuffle, then the first floor(n * train_fraction) records go to
// train. Each side keeps the original relative record order.
std::pair<HiddenCorpus, HiddenCorpus> SplitCorpus(const HiddenCorpus& corpus,
                                                  double train_fraction, Rng& rng);

std::vector<std::uint8_t> EncodeCorpus(const HiddenCorpus& corpus);
HiddenCorpus DecodeCorpus(std::span<const std::uint8_t> bytes);
void SaveCorpus(const HiddenCorpus& corpus, const std::filesystem::path& path);
HiddenCorpus LoadCorpus(const std::filesystem::path& path);

// Seeded first-order Markov byte source over lowercase letters, space and
// a few punctuation marks. Each text has a length in [min_len, max_len].
std::vector<std::string> SyntheticTexts(std::size_t count, std::size_t min_len,
                                        std::size_t max_len, Rng& rng);

// Non-empty lines of a text file.
std::vector<std::string> ReadTextLines(const std::filesystem::path& path);

}  // namespace ojfa
