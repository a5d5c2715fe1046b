#include <algorithm>

#include "doctest.h"
#include "json.hpp"
#include "ojfa/config.hpp"
#include "ojfa/error.hpp"

using namespace ojfa;
using nlohmann::json;

namespace {

bool Mentions(const ConfigError& e, const std::string& needle) {
  return std::any_of(e.problems().begin(), e.problems().end(),
                     [&](const std::string& p) { return p.find(needle) != std::string::npos; });
}

}  // namespace

TEST_CASE("defaults are valid and explicit") {
  const RunConfig c = RunConfig::FromJson(json::object());
  CHECK_NOTHROW(c.Validate());
  CHECK(c.seed == 20240601);
  CHECK(c.train.learning_rate == 1e-3);
  CHECK(c.train.batch_size == 64);
  CHECK(c.train.epochs == 20);
  CHECK(c.corpus.positions_per_text == 1);
  CHECK(c.eval.score_temperature == 5e-4);
  CHECK(c.eval.lambdas.size() == 10);
}

TEST_CASE("stage seeds derive from the base seed unless pinned") {
  json j = {{"seed", 5}};
  const RunConfig a = RunConfig::FromJson(j);
  CHECK(a.ModelSeed() != a.CorpusSeed());
  CHECK(a.CorpusSeed() != a.TrainSeed());
  CHECK(a.model.config.seed == a.ModelSeed());
  CHECK(RunConfig::FromJson(j).TrainSeed() == a.TrainSeed());
  j["train"] = {{"seed", 99}};
  CHECK(RunConfig::FromJson(j).TrainSeed() == 99);
  CHECK(RunConfig::FromJson(j).ModelSeed() == a.ModelSeed());
}

TEST_CASE("dotted overrides parse JSON values and fall back to strings") {
  json j = json::object();
  ApplyOverride(j, "train.epochs", "40");
  ApplyOverride(j, "train.learning_rate", "0.01");
  ApplyOverride(j, "out", "runs/a");
  ApplyOverride(j, "eval.lambdas", "[0.2, 0.8]");
  const RunConfig c = RunConfig::FromJson(j);
  CHECK(c.train.epochs == 40);
  CHECK(c.train.learning_rate == 0.01);
  CHECK(c.out_dir == "runs/a");
  CHECK(c.eval.lambdas == std::vector<double>{0.2, 0.8});
  CHECK_THROWS_AS(ApplyOverride(j, "train..epochs", "1"), ConfigError);
}

TEST_CASE("unknown keys and type errors are all reported") {
  const json j = {{"sede", 1}, {"train", {{"epoch", 3}}}, {"model", {{"hidden", 8}}}};
  try {
    RunConfig::FromJson(j);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.problems().size() == 3);
    CHECK(Mentions(e, "sede"));
    CHECK(Mentions(e, "train.epoch"));
    CHECK(Mentions(e, "model.hidden"));
  }
  const json types = {{"seed", "abc"}, {"train", {{"epochs", -1}}}};
  try {
    RunConfig::FromJson(types);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.problems().size() == 2);
  }
  const json mixed = {{"bogus", 1}, {"train", {{"epochs", -3}}}};
  try {
    RunConfig::FromJson(mixed);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.problems().size() == 2);
    CHECK(Mentions(e, "bogus"));
    CHECK(Mentions(e, "train.epochs"));
  }
  CHECK_THROWS_AS(RunConfig::FromJson(json{{"train", 3}}), ConfigError);
}

TEST_CASE("validation lists every violated field at once") {
  const json j = {{"corpus", {{"train_fraction", 1.5}, {"source", "web"}}},
                  {"train", {{"batch_size", 1}, {"learning_rate", 0}}},
                  {"eval", {{"lambdas", {0.5, 2.0}}, {"strategies", {"ojfa", "oracle"}}}},
                  {"model", {{"hidden_dim", 30}, {"num_heads", 4}}}};
  const RunConfig c = RunConfig::FromJson(j);
  try {
    c.Validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(Mentions(e, "train_fraction"));
    CHECK(Mentions(e, "corpus.source"));
    CHECK(Mentions(e, "batch_size"));
    CHECK(Mentions(e, "learning_rate"));
    CHECK(Mentions(e, "lambdas"));
    CHECK(Mentions(e, "oracle"));
    CHECK(Mentions(e, "hidden_dim"));
    CHECK(e.problems().size() >= 7);
  }
}

TEST_CASE("referenced paths must exist") {
  const json j = {{"model", {{"path", "/nonexistent/model.ojfw"}}},
                  {"corpus", {{"source", "ojfc"}, {"path", "/nonexistent/train.ojfc"}}}};
  try {
    RunConfig::FromJson(j).Validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.problems().size() == 2);
  }
}

TEST_CASE("effective config round-trips") {
  json j = {{"seed", 3}, {"rank", 4}, {"train", {{"epochs", 7}}}};
  const RunConfig a = RunConfig::FromJson(j);
  const json effective = a.ToJson();
  const RunConfig b = RunConfig::FromJson(effective);
  CHECK(b.ToJson() == effective);
  CHECK(b.rank == 4);
  CHECK(b.train.epochs == 7);
  CHECK(b.TrainSeed() == a.TrainSeed());
}
