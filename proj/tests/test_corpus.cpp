#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "ojfa/binary_io.hpp"
#include "ojfa/corpus.hpp"
#include "ojfa/error.hpp"
#include "test_util.hpp"

using namespace ojfa;

namespace {

TransformerWeights Tiny() {
  TransformerConfig c;
  c.hidden_dim = 8;
  c.num_blocks = 2;
  c.num_heads = 2;
  c.ffn_dim = 16;
  c.max_seq_len = 16;
  c.seed = 3;
  return InitModel(c);
}

std::vector<std::string> Texts(std::size_t n, std::uint64_t seed = 4) {
  Rng rng(seed);
  return SyntheticTexts(n, 5, 16, rng);
}

}  // namespace

TEST_CASE("one record per text by default") {
  Rng rng(1);
  const HiddenCorpus c = BuildCorpus(Tiny(), Texts(10), 1, rng);
  CHECK(c.size() == 10);
  CHECK(c.hidden_dim == 8);
  CHECK(c.num_blocks == 2);
  CHECK_NOTHROW(c.Validate());
  for (const auto& r : c.records) {
    CHECK(r.levels.shape() == "3x8");
    CHECK(r.position >= kMinPosition);
  }
}

TEST_CASE("several positions per text are distinct and ordered") {
  Rng rng(1);
  const auto texts = Texts(20);
  const HiddenCorpus c = BuildCorpus(Tiny(), texts, 3, rng);
  CHECK(c.size() == 60);
  for (std::size_t t = 0; t < 20; ++t) {
    const auto& a = c.records[3 * t];
    const auto& b = c.records[3 * t + 1];
    const auto& d = c.records[3 * t + 2];
    CHECK(a.sentence_id == t);
    CHECK(d.sentence_id == t);
    CHECK(a.position < b.position);
    CHECK(b.position < d.position);
    CHECK(d.position < texts[t].size());
  }
}

TEST_CASE("short texts are skipped and long texts truncated") {
  const std::vector<std::string> texts = {"ab", "abc", std::string(40, 'x')};
  Rng rng(2);
  const HiddenCorpus c = BuildCorpus(Tiny(), texts, 1, rng);
  CHECK(c.size() == 2);
  CHECK(c.skipped_texts == 1);
  CHECK(c.truncated_texts == 1);
  CHECK(c.records[0].sentence_id == 1);
  CHECK(c.records[0].position == 2);
  CHECK(c.records[1].position < 16);
}

TEST_CASE("stored levels match a fresh forward trace") {
  const TransformerWeights w = Tiny();
  const auto texts = Texts(15);
  Rng rng(9);
  const HiddenCorpus c = BuildCorpus(w, texts, 2, rng);
  for (const auto& r : c.records) {
    const HiddenTrace t = ForwardTrace(w, BytesToTokens(texts[r.sentence_id]));
    for (std::size_t k = 0; k <= 2; ++k) {
      const auto want = t.At(k, r.position);
      const auto got = r.Level(k);
      for (std::size_t f = 0; f < 8; ++f) CHECK(std::abs(got[f] - want[f]) <= 1e-6);
    }
  }
}

TEST_CASE("corpus bytes depend only on weights, texts and seed") {
  const auto texts = Texts(30);
  Rng a(5), b(5), c(6);
  const auto one = EncodeCorpus(BuildCorpus(Tiny(), texts, 2, a, 1));
  const auto two = EncodeCorpus(BuildCorpus(Tiny(), texts, 2, b, 3));
  const auto three = EncodeCorpus(BuildCorpus(Tiny(), texts, 2, c, 1));
  CHECK(one == two);
  CHECK(one != three);
}

TEST_CASE("split sizes, disjointness and determinism") {
  Rng data(1);
  const HiddenCorpus all = testutil::RandomCorpus(12, 3, 2, data);
  Rng r1(7), r2(7);
  const auto [train, test] = SplitCorpus(all, 0.75, r1);
  CHECK(train.size() == 9);
  CHECK(test.size() == 3);
  CHECK(train.split == Split::kTrain);
  CHECK(test.split == Split::kTest);

  std::multiset<std::uint64_t> ids;
  for (const auto& r : train.records) ids.insert(r.sentence_id);
  for (const auto& r : test.records) ids.insert(r.sentence_id);
  CHECK(ids == std::multiset<std::uint64_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11});
  for (const auto& r : test.records)
    CHECK(std::find(all.records.begin(), all.records.end(), r) != all.records.end());

  const auto [train2, test2] = SplitCorpus(all, 0.75, r2);
  CHECK(train2.records == train.records);
  CHECK(test2.records == test.records);

  Rng r3(7);
  CHECK_THROWS_AS(SplitCorpus(all, 0.0, r3), Error);
  CHECK_THROWS_AS(SplitCorpus(all, 1.0, r3), Error);
  CHECK_THROWS_AS(SplitCorpus(all, 0.01, r3), Error);  // empty train side
  const HiddenCorpus one = testutil::RandomCorpus(1, 3, 2, data);
  CHECK_THROWS_AS(SplitCorpus(one, 0.5, r3), Error);
}

TEST_CASE("OJFC save, load, save is byte-identical") {
  Rng rng(1);
  const HiddenCorpus c = BuildCorpus(Tiny(), Texts(8), 1, rng);
  const auto path = std::filesystem::temp_directory_path() / "ojfa_test_corpus.ojfc";
  SaveCorpus(c, path);
  const HiddenCorpus loaded = LoadCorpus(path);
  CHECK(loaded.records == c.records);
  CHECK(EncodeCorpus(loaded) == ReadFileBytes(path));
  std::filesystem::remove(path);
}

TEST_CASE("OJFC rejects bad magic, version and truncation") {
  Rng rng(1);
  const auto bytes = EncodeCorpus(testutil::RandomCorpus(3, 4, 2, rng));

  auto bad = bytes;
  bad[2] = 'X';
  try {
    DecodeCorpus(bad);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("OJFC") != std::string::npos);
    CHECK(e.offset() == 0);
  }

  auto version = bytes;
  version[4] = 2;
  CHECK_THROWS_AS(DecodeCorpus(version), FormatError);

  auto truncated = bytes;
  truncated.resize(bytes.size() - 2);
  try {
    DecodeCorpus(truncated);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset() > 20);
    CHECK(e.offset() < bytes.size());
  }

  auto zero_records = std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + 24);
  std::fill(zero_records.begin() + 16, zero_records.end(), 0);
  CHECK_THROWS_AS(DecodeCorpus(zero_records), FormatError);
}

TEST_CASE("OJFC from a large external model imports without any toy model") {
  // Hand-assembled file: H = 3072, K = 32, one record.
  ByteWriter w;
  w.Magic("OJFC");
  w.U32(1);
  w.U32(3072);
  w.U32(32);
  w.U64(1);
  w.U64(17);
  w.U32(5);
  std::vector<float> values(33 * 3072);
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<float>(i % 7) - 3.0f;
  for (float v : values) w.F32(v);
  const HiddenCorpus c = DecodeCorpus(w.bytes());
  CHECK(c.hidden_dim == 3072);
  CHECK(c.num_blocks == 32);
  REQUIRE(c.size() == 1);
  CHECK(c.records[0].sentence_id == 17);
  CHECK(c.records[0].position == 5);
  CHECK(c.records[0].Final()[3071] == static_cast<double>(values.back()));
}

TEST_CASE("synthetic texts respect the length range and seed") {
  Rng a(3), b(3);
  const auto x = SyntheticTexts(50, 10, 20, a);
  CHECK(x == SyntheticTexts(50, 10, 20, b));
  for (const auto& t : x) {
    CHECK(t.size() >= 10);
    CHECK(t.size() <= 20);
  }
}
