#include "ojfa/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "ojfa/binary_io.hpp"
#include "ojfa/error.hpp"

namespace ojfa {
namespace {

constexpr char kCorpusMagic[] = "OJFC";
constexpr std::uint32_t kCorpusVersion = 1;

std::vector<HiddenRecord> SampleText(const TransformerWeights& weights, std::uint64_t id,
                                     std::vector<Token> tokens,
                                     std::size_t positions_per_text, Rng rng) {
  const std::size_t candidates = tokens.size() - kMinPosition;
  std::vector<std::uint32_t> pool(candidates);
  for (std::size_t i = 0; i < candidates; ++i)
    pool[i] = static_cast<std::uint32_t>(kMinPosition + i);
  const std::size_t take = std::min(positions_per_text, candidates);
  for (std::size_t i = 0; i < take; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.UniformInt(candidates - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(take);
  std::sort(pool.begin(), pool.end());

  // Causal attention: later tokens cannot affect the sampled positions.
  tokens.resize(pool.back() + 1);
  const HiddenTrace trace = ForwardTrace(weights, tokens);

  std::vector<HiddenRecord> out;
  out.reserve(take);
  const std::size_t levels = trace.levels.size();
  for (std::uint32_t pos : pool) {
    HiddenRecord rec;
    rec.sentence_id = id;
    rec.position = pos;
    rec.levels = Matrix(levels, weights.config.hidden_dim);
    for (std::size_t k = 0; k < levels; ++k) {
      auto src = trace.At(k, pos);
      std::copy(src.begin(), src.end(), rec.levels.row(k).begin());
    }
    ToStoragePrecision(rec.levels);
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace

Matrix HiddenCorpus::LevelMatrix(std::size_t k) const {
  if (k > num_blocks) throw Error("level " + std::to_string(k) + " out of range");
  Matrix m(records.size(), hidden_dim);
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto src = records[i].Level(k);
    std::copy(src.begin(), src.end(), m.row(i).begin());
  }
  return m;
}

void HiddenCorpus::Validate() const {
  if (hidden_dim == 0 || num_blocks == 0) throw Error("corpus has zero H or K");
  if (records.empty()) throw Error("corpus has no records");
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.levels.rows() != num_blocks + 1 || r.levels.cols() != hidden_dim) {
      throw Error("record " + std::to_string(i) + " has levels " + r.levels.shape() +
                  ", expected " + std::to_string(num_blocks + 1) + "x" +
                  std::to_string(hidden_dim));
    }
    if (!r.levels.AllFinite()) throw Error("record " + std::to_string(i) + " is not finite");
  }
}

HiddenCorpus BuildCorpus(const TransformerWeights& weights,
                         const std::vector<std::string>& texts,
                         std::size_t positions_per_text, Rng& rng, unsigned threads) {
  if (positions_per_text < 1) throw Error("positions_per_text must be >= 1");
  HiddenCorpus corpus;
  corpus.hidden_dim = weights.config.hidden_dim;
  corpus.num_blocks = weights.config.num_blocks;

  // Child streams are drawn in input order so the thread count cannot
  // change which positions are sampled.
  std::vector<Rng> streams;
  std::vector<std::vector<Token>> tokens(texts.size());
  streams.reserve(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (texts[i].empty()) throw Error("text " + std::to_string(i) + " is empty");
    streams.push_back(rng.Split());
    tokens[i] = BytesToTokens(texts[i]);
    if (tokens[i].size() > weights.config.max_seq_len) {
      tokens[i].resize(weights.config.max_seq_len);
      ++corpus.truncated_texts;
    }
    if (tokens[i].size() < kMinPosition + 1) {
      tokens[i].clear();
      ++corpus.skipped_texts;
    }
  }

  std::vector<std::vector<HiddenRecord>> per_text(texts.size());
  ParallelFor(texts.size(), threads, [&](std::size_t i) {
    if (tokens[i].empty()) return;
    per_text[i] = SampleText(weights, i, tokens[i], positions_per_text, streams[i]);
  });
  for (auto& recs : per_text)
    for (auto& r : recs) corpus.records.push_back(std::move(r));
  if (corpus.records.empty()) throw Error("no text was long enough to sample a position");
  return corpus;
}

std::pair<HiddenCorpus, HiddenCorpus> SplitCorpus(const HiddenCorpus& corpus,
                                                  double train_fraction, Rng& rng) {
  const std::size_t n = corpus.size();
  if (n < 2) throw Error("splitting needs at least 2 records, corpus has " + std::to_string(n));
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw Error("train_fraction must lie in (0, 1), got " + std::to_string(train_fraction));
  }
  const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(n) * train_fraction));
  if (n_train == 0 || n_train == n) {
    throw Error("train_fraction " + std::to_string(train_fraction) + " leaves an empty split of " +
                std::to_string(n) + " records");
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.Shuffle(order);
  std::vector<std::size_t> train_idx(order.begin(), order.begin() + n_train);
  std::vector<std::size_t> test_idx(order.begin() + n_train, order.end());
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());

  auto take = [&](const std::vector<std::size_t>& idx, Split tag) {
    HiddenCorpus out;
    out.hidden_dim = corpus.hidden_dim;
    out.num_blocks = corpus.num_blocks;
    out.split = tag;
    out.records.reserve(idx.size());
    for (std::size_t i : idx) out.records.push_back(corpus.records[i]);
    return out;
  };
  return {take(train_idx, Split::kTrain), take(test_idx, Split::kTest)};
}

std::vector<std::uint8_t> EncodeCorpus(const HiddenCorpus& corpus) {
  corpus.Validate();
  ByteWriter out;
  out.Magic(kCorpusMagic);
  out.U32(kCorpusVersion);
  out.U32(corpus.hidden_dim);
  out.U32(corpus.num_blocks);
  out.U64(corpus.records.size());
  for (const auto& r : corpus.records) {
    out.U64(r.sentence_id);
    out.U32(r.position);
    out.F32s(r.levels.data());
  }
  return out.Take();
}

HiddenCorpus DecodeCorpus(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  in.ExpectMagic(kCorpusMagic);
  const std::uint64_t version_at = in.offset();
  const std::uint32_t version = in.U32("version");
  if (version != kCorpusVersion) {
    throw FormatError("unsupported OJFC version " + std::to_string(version), version_at);
  }
  HiddenCorpus corpus;
  const std::uint64_t header_at = in.offset();
  corpus.hidden_dim = in.U32("H");
  corpus.num_blocks = in.U32("K");
  const std::uint64_t count = in.U64("record_count");
  if (corpus.hidden_dim == 0 || corpus.num_blocks == 0 || count == 0) {
    throw FormatError("OJFC header needs H, K and record_count >= 1", header_at);
  }
  const std::uint64_t per_record =
      12 + 4ull * (corpus.num_blocks + 1ull) * corpus.hidden_dim;
  const std::uint64_t remaining = bytes.size() - in.offset();
  if (count > remaining / per_record) {
    throw FormatError("OJFC declares " + std::to_string(count) + " records but only " +
                          std::to_string(remaining) + " payload bytes follow",
                      in.offset());
  }
  corpus.records.resize(count);
  for (auto& r : corpus.records) {
    r.sentence_id = in.U64("sentence_id");
    r.position = in.U32("position");
    r.levels = Matrix(corpus.num_blocks + 1, corpus.hidden_dim);
    in.F32s(r.levels.data(), "record levels");
  }
  in.ExpectEnd();
  return corpus;
}

void SaveCorpus(const HiddenCorpus& corpus, const std::filesystem::path& path) {
  WriteFileBytes(path, EncodeCorpus(corpus));
}

HiddenCorpus LoadCorpus(const std::filesystem::path& path) {
  return DecodeCorpus(ReadFileBytes(path));
}

std::vector<std::string> SyntheticTexts(std::size_t count, std::size_t min_len,
                                        std::size_t max_len, Rng& rng) {
  if (min_len < 1 || max_len < min_len) throw Error("invalid synthetic text length range");
  static constexpr std::string_view kAlphabet = "abcdefghijklmnopqrstuvwxyz .,";
  const std::size_t A = kAlphabet.size();
  // Peaked random transition rows: most mass on a few successors.
  std::vector<std::vector<double>> cumulative(A, std::vector<double>(A));
  for (std::size_t s = 0; s < A; ++s) {
    double total = 0.0;
    for (std::size_t t = 0; t < A; ++t) {
      total += std::exp(2.0 * rng.Normal());
      cumulative[s][t] = total;
    }
    for (double& c : cumulative[s]) c /= total;
  }
  std::vector<std::string> texts(count);
  for (auto& text : texts) {
    const std::size_t len = min_len + static_cast<std::size_t>(rng.UniformInt(max_len - min_len + 1));
    std::size_t state = static_cast<std::size_t>(rng.UniformInt(A));
    text.reserve(len);
    for (std::size_t i = 0; i < len; ++i) {
      text.push_back(kAlphabet[state]);
      const double u = rng.Uniform();
      const auto it = std::upper_bound(cumulative[state].begin(), cumulative[state].end(), u);
      state = std::min<std::size_t>(static_cast<std::size_t>(it - cumulative[state].begin()), A - 1);
    }
  }
  return texts;
}

std::vector<std::string> ReadTextLines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open text file " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  if (lines.empty()) throw Error("text file " + path.string() + " has no non-empty lines");
  return lines;
}

}  // namespace ojfa
