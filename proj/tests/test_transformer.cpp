#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "ojfa/error.hpp"
#include "ojfa/transformer.hpp"

using namespace ojfa;

namespace {

TransformerConfig Small() {
  TransformerConfig c;
  c.hidden_dim = 16;
  c.num_blocks = 3;
  c.num_heads = 4;
  c.ffn_dim = 32;
  c.max_seq_len = 12;
  c.seed = 42;
  return c;
}

}  // namespace

TEST_CASE("config validation lists every bad field") {
  TransformerConfig c = Small();
  c.hidden_dim = 18;  // not divisible by 4 heads
  c.num_blocks = 0;
  c.vocab_size = 0;
  try {
    c.Validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.problems().size() >= 3);
  }
  CHECK_NOTHROW(Small().Validate());
  CHECK(InitModel(Small()).head_dim() == 4);
}

TEST_CASE("trace shapes") {
  const TransformerWeights w = InitModel(Small());
  const std::vector<Token> tokens = {1, 2, 3, 4, 5};
  const HiddenTrace t = ForwardTrace(w, tokens);
  REQUIRE(t.levels.size() == 4);
  for (const auto& level : t.levels) CHECK(level.shape() == "5x16");
  CHECK(t.logits.shape() == "5x256");
  CHECK(t.num_positions() == 5);
  CHECK(t.levels[0] == Embed(w, tokens));
}

TEST_CASE("forward pass is causal") {
  const TransformerWeights w = InitModel(Small());
  std::vector<Token> a = {10, 20, 30, 40, 50, 60};
  std::vector<Token> b = a;
  b[4] = 99;
  const HiddenTrace ta = ForwardTrace(w, a);
  const HiddenTrace tb = ForwardTrace(w, b);
  for (std::size_t level = 0; level < ta.levels.size(); ++level) {
    for (std::size_t pos = 0; pos < 4; ++pos) {
      const auto x = ta.At(level, pos), y = tb.At(level, pos);
      CHECK(std::equal(x.begin(), x.end(), y.begin()));
    }
    const auto x = ta.At(level, 4), y = tb.At(level, 4);
    CHECK_FALSE(std::equal(x.begin(), x.end(), y.begin()));
  }
  // A prefix run reproduces the prefix rows exactly.
  const std::vector<Token> prefix(a.begin(), a.begin() + 3);
  const HiddenTrace tp = ForwardTrace(w, prefix);
  for (std::size_t pos = 0; pos < 3; ++pos) {
    const auto x = tp.At(3, pos), y = ta.At(3, pos);
    CHECK(std::equal(x.begin(), x.end(), y.begin()));
  }
}

TEST_CASE("blocks applied one at a time match the traced levels") {
  const TransformerWeights w = InitModel(Small());
  const std::vector<Token> tokens = {7, 8, 9};
  const HiddenTrace t = ForwardTrace(w, tokens);
  Matrix state = Embed(w, tokens);
  for (std::size_t k = 0; k < 3; ++k) {
    ApplyBlock(w, k, state);
    CHECK(state == t.levels[k + 1]);
  }
  CHECK(HeadBatch(w, t.levels[3]) == t.logits);
  const auto last = Head(w, t.At(3, 2));
  const auto row = t.logits.row(2);
  CHECK(std::equal(last.begin(), last.end(), row.begin()));
}

TEST_CASE("seeded init is deterministic and seed-sensitive") {
  const TransformerWeights a = InitModel(Small());
  const TransformerWeights b = InitModel(Small());
  CHECK(a == b);
  CHECK(a.Checksum() == b.Checksum());
  TransformerConfig other = Small();
  other.seed = 43;
  CHECK(InitModel(other).Checksum() != a.Checksum());
  // Weights are stored at 32-bit precision.
  for (double x : a.token_embedding.data()) CHECK(static_cast<double>(static_cast<float>(x)) == x);
}

TEST_CASE("golden checksum pins init and the forward pass") {
  const TransformerWeights w = InitModel(Small());
  const HiddenTrace t = ForwardTrace(w, std::vector<Token>{104, 105, 33});
  // Regression values frozen from this build; a change to init, the RNG or
  // the arithmetic order shows up here.
  CHECK(w.Checksum() == 0xda59e17d494c2d1eULL);
  CHECK(t.logits(2, 0) == doctest::Approx(-0.025052286993529231).epsilon(1e-12));
  CHECK(t.logits(2, 255) == doctest::Approx(0.086429146307699767).epsilon(1e-12));
}

TEST_CASE("crafted head picks the intended token") {
  TransformerWeights w = InitModel(Small());
  std::fill(w.final_ln_gain.begin(), w.final_ln_gain.end(), 0.0);
  std::fill(w.final_ln_bias.begin(), w.final_ln_bias.end(), 0.0);
  w.final_ln_bias[0] = 1.0;
  w.unembedding = Matrix(16, 256);
  w.unembedding(0, 7) = 2.0;
  const std::vector<double> h(16, 0.5);
  const auto logits = Head(w, h);
  CHECK(Argmax(logits) == 7);
  CHECK(logits[7] == 2.0);
}

TEST_CASE("model input validation") {
  const TransformerWeights w = InitModel(Small());
  CHECK_THROWS_AS(ForwardTrace(w, std::vector<Token>{}), Error);
  CHECK_THROWS_AS(ForwardTrace(w, std::vector<Token>(13, 1)), Error);
  CHECK_THROWS_AS(ForwardTrace(w, std::vector<Token>{1, 256}), Error);
  CHECK_THROWS_AS(Head(w, std::vector<double>(15, 0.0)), Error);
}

TEST_CASE("OJFW round trip and rejection") {
  const TransformerWeights w = InitModel(Small());
  const auto bytes = EncodeModel(w);
  CHECK(DecodeModel(bytes) == w);
  CHECK(bytes[0] == 'O');
  CHECK(bytes[3] == 'W');

  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(DecodeModel(bad), FormatError);

  auto truncated = bytes;
  truncated.resize(bytes.size() - 1);
  CHECK_THROWS_AS(DecodeModel(truncated), FormatError);

  auto extended = bytes;
  extended.push_back(0);
  CHECK_THROWS_AS(DecodeModel(extended), FormatError);

  auto version = bytes;
  version[4] = 9;
  CHECK_THROWS_AS(DecodeModel(version), FormatError);
}

TEST_CASE("bytes map to tokens") {
  CHECK(BytesToTokens("hi!") == std::vector<Token>{104, 105, 33});
  CHECK(BytesToTokens("\xff") == std::vector<Token>{255});
}
