#include "ojfa/config.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <type_traits>

#include "ojfa/error.hpp"
#include "ojfa/numerics.hpp"

namespace ojfa {
namespace {

using nlohmann::json;

// Sub-stream ids for seeds derived from the top-level seed.
constexpr std::uint64_t kModelStream = 1;
constexpr std::uint64_t kCorpusStream = 2;
constexpr std::uint64_t kTrainStream = 3;

json OptionalSeed(const std::optional<std::uint64_t>& s) { return s ? json(*s) : json(nullptr); }

void CheckKeys(const json& user, const json& defaults, const std::string& prefix,
               std::vector<std::string>& problems) {
  for (const auto& [key, value] : user.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!defaults.contains(key)) {
      problems.push_back("unknown key `" + path + "`");
    } else if (defaults[key].is_object()) {
      if (!value.is_object()) {
        problems.push_back("`" + path + "` must be an object");
      } else {
        CheckKeys(value, defaults[key], path, problems);
      }
    }
  }
}

void Merge(json& base, const json& user) {
  for (const auto& [key, value] : user.items()) {
    if (base.contains(key) && base[key].is_object() && value.is_object()) {
      Merge(base[key], value);
    } else {
      base[key] = value;
    }
  }
}

bool IsNonNegativeInteger(const json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

class Reader {
 public:
  explicit Reader(const json& root) : root_(root) {}

  template <typename T>
  void Get(const std::string& dotted, T& out) {
    std::string pointer = "/" + dotted;
    for (auto& c : pointer)
      if (c == '.') c = '/';
    const json& v = root_.at(json::json_pointer(pointer));
    if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
      // get<unsigned>() would silently wrap negative numbers.
      if (!IsNonNegativeInteger(v)) {
        problems_.push_back("`" + dotted + "` must be a non-negative integer");
        return;
      }
    }
    try {
      out = v.get<T>();
    } catch (const json::exception&) {
      problems_.push_back("`" + dotted + "` has the wrong type (" + std::string(v.type_name()) +
                          ")");
    }
  }

  void GetSeed(const std::string& dotted, std::optional<std::uint64_t>& out) {
    std::string pointer = "/" + dotted;
    for (auto& c : pointer)
      if (c == '.') c = '/';
    const json& v = root_.at(json::json_pointer(pointer));
    if (v.is_null()) {
      out.reset();
    } else if (IsNonNegativeInteger(v)) {
      out = v.get<std::uint64_t>();
    } else {
      problems_.push_back("`" + dotted + "` must be a non-negative integer or null");
    }
  }

  std::vector<std::string>& problems() { return problems_; }

 private:
  const json& root_;
  std::vector<std::string> problems_;
};

}  // namespace

std::uint64_t RunConfig::ModelSeed() const {
  return model.seed.value_or(DeriveSeed(seed, kModelStream));
}
std::uint64_t RunConfig::CorpusSeed() const {
  return corpus.seed.value_or(DeriveSeed(seed, kCorpusStream));
}
std::uint64_t RunConfig::TrainSeed() const {
  return train_seed.value_or(DeriveSeed(seed, kTrainStream));
}

json RunConfig::ToJson() const {
  const auto& mc = model.config;
  return {
      {"seed", seed},
      {"threads", threads},
      {"out", out_dir},
      {"rank", rank},
      {"model",
       {{"path", model.path},
        {"vocab_size", mc.vocab_size},
        {"hidden_dim", mc.hidden_dim},
        {"num_blocks", mc.num_blocks},
        {"num_heads", mc.num_heads},
        {"ffn_dim", mc.ffn_dim},
        {"max_seq_len", mc.max_seq_len},
        {"seed", OptionalSeed(model.seed)}}},
      {"corpus",
       {{"source", corpus.source},
        {"path", corpus.path},
        {"test_path", corpus.test_path},
        {"num_texts", corpus.num_texts},
        {"min_len", corpus.min_len},
        {"max_len", corpus.max_len},
        {"positions_per_text", corpus.positions_per_text},
        {"train_fraction", corpus.train_fraction},
        {"seed", OptionalSeed(corpus.seed)}}},
      {"train",
       {{"learning_rate", train.learning_rate},
        {"beta1", train.beta1},
        {"beta2", train.beta2},
        {"adam_epsilon", train.adam_epsilon},
        {"batch_size", train.batch_size},
        {"epochs", train.epochs},
        {"bn_momentum", train.bn_momentum},
        {"seed", OptionalSeed(train_seed)}}},
      {"eval",
       {{"strategies", eval.strategies},
        {"arbitrary_levels", eval.arbitrary_levels},
        {"lambdas", eval.lambdas},
        {"score_temperature", eval.score_temperature},
        {"early_exit_inputs", eval.early_exit_inputs}}},
  };
}

RunConfig RunConfig::FromJson(const json& user) {
  if (!user.is_object()) throw ConfigError({"configuration root must be a JSON object"});
  json merged = RunConfig{}.ToJson();
  std::vector<std::string> problems;
  CheckKeys(user, merged, "", problems);
  // A section that is not an object cannot be merged; everything else is read
  // so that all problems are reported together.
  const bool bad_section = std::any_of(problems.begin(), problems.end(), [](const std::string& p) {
    return p.find("must be an object") != std::string::npos;
  });
  if (bad_section) throw ConfigError(std::move(problems));
  Merge(merged, user);

  RunConfig c;
  Reader r(merged);
  r.Get("seed", c.seed);
  r.Get("threads", c.threads);
  r.Get("out", c.out_dir);
  r.Get("rank", c.rank);
  r.Get("model.path", c.model.path);
  r.Get("model.vocab_size", c.model.config.vocab_size);
  r.Get("model.hidden_dim", c.model.config.hidden_dim);
  r.Get("model.num_blocks", c.model.config.num_blocks);
  r.Get("model.num_heads", c.model.config.num_heads);
  r.Get("model.ffn_dim", c.model.config.ffn_dim);
  r.Get("model.max_seq_len", c.model.config.max_seq_len);
  r.GetSeed("model.seed", c.model.seed);
  r.Get("corpus.source", c.corpus.source);
  r.Get("corpus.path", c.corpus.path);
  r.Get("corpus.test_path", c.corpus.test_path);
  r.Get("corpus.num_texts", c.corpus.num_texts);
  r.Get("corpus.min_len", c.corpus.min_len);
  r.Get("corpus.max_len", c.corpus.max_len);
  r.Get("corpus.positions_per_text", c.corpus.positions_per_text);
  r.Get("corpus.train_fraction", c.corpus.train_fraction);
  r.GetSeed("corpus.seed", c.corpus.seed);
  r.Get("train.learning_rate", c.train.learning_rate);
  r.Get("train.beta1", c.train.beta1);
  r.Get("train.beta2", c.train.beta2);
  r.Get("train.adam_epsilon", c.train.adam_epsilon);
  r.Get("train.batch_size", c.train.batch_size);
  r.Get("train.epochs", c.train.epochs);
  r.Get("train.bn_momentum", c.train.bn_momentum);
  r.GetSeed("train.seed", c.train_seed);
  r.Get("eval.strategies", c.eval.strategies);
  r.Get("eval.arbitrary_levels", c.eval.arbitrary_levels);
  r.Get("eval.lambdas", c.eval.lambdas);
  r.Get("eval.score_temperature", c.eval.score_temperature);
  r.Get("eval.early_exit_inputs", c.eval.early_exit_inputs);
  problems.insert(problems.end(), r.problems().begin(), r.problems().end());
  if (!problems.empty()) throw ConfigError(std::move(problems));
  c.model.config.seed = c.ModelSeed();
  c.train.seed = c.TrainSeed();
  return c;
}

void RunConfig::Validate() const {
  std::vector<std::string> problems;
  if (out_dir.empty()) problems.push_back("`out` must be a directory path");
  if (model.path.empty()) {
    try {
      model.config.Validate();
    } catch (const ConfigError& e) {
      problems.insert(problems.end(), e.problems().begin(), e.problems().end());
    }
  } else if (!std::filesystem::exists(model.path)) {
    problems.push_back("model.path `" + model.path + "` does not exist");
  }

  if (corpus.source == "synthetic") {
    if (corpus.num_texts < 2) problems.push_back("corpus.num_texts must be >= 2");
    if (corpus.min_len < 3) problems.push_back("corpus.min_len must be >= 3");
    if (corpus.max_len < corpus.min_len) problems.push_back("corpus.max_len must be >= corpus.min_len");
  } else if (corpus.source == "text" || corpus.source == "ojfc") {
    if (corpus.path.empty()) {
      problems.push_back("corpus.path is required for source `" + corpus.source + "`");
    } else if (!std::filesystem::exists(corpus.path)) {
      problems.push_back("corpus.path `" + corpus.path + "` does not exist");
    }
    if (!corpus.test_path.empty() && !std::filesystem::exists(corpus.test_path)) {
      problems.push_back("corpus.test_path `" + corpus.test_path + "` does not exist");
    }
  } else {
    problems.push_back("corpus.source must be one of synthetic, text, ojfc (got `" +
                       corpus.source + "`)");
  }
  if (corpus.positions_per_text < 1) problems.push_back("corpus.positions_per_text must be >= 1");
  if (!(corpus.train_fraction > 0.0 && corpus.train_fraction < 1.0)) {
    problems.push_back("corpus.train_fraction must lie in (0, 1)");
  }

  try {
    train.Validate();
  } catch (const ConfigError& e) {
    problems.insert(problems.end(), e.problems().begin(), e.problems().end());
  }

  for (const auto& s : eval.strategies) {
    if (s != "ojfa" && s != "arbitrary" && s != "joint" && s != "identity" &&
        s != "full_multi_jump") {
      problems.push_back("eval.strategies: unknown strategy `" + s + "`");
    }
  }
  for (double l : eval.lambdas) {
    if (!(l >= 0.0 && l <= 1.0)) {
      problems.push_back("eval.lambdas: " + std::to_string(l) + " is outside [0, 1]");
    }
  }
  if (!(eval.score_temperature > 0.0)) problems.push_back("eval.score_temperature must be > 0");
  if (!problems.empty()) throw ConfigError(std::move(problems));
}

void ApplyOverride(json& j, const std::string& dotted_key, const std::string& value) {
  if (dotted_key.empty()) throw ConfigError({"empty override key"});
  json parsed = json::parse(value, nullptr, /*allow_exceptions=*/false);
  if (parsed.is_discarded()) parsed = value;
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = dotted_key.find('.', start);
    const std::string part = dotted_key.substr(start, dot - start);
    if (part.empty()) throw ConfigError({"malformed override key `" + dotted_key + "`"});
    if (dot == std::string::npos) {
      (*node)[part] = parsed;
      return;
    }
    json& next = (*node)[part];
    if (next.is_null()) next = json::object();
    if (!next.is_object()) {
      throw ConfigError({"override `" + dotted_key + "` descends into non-object `" + part + "`"});
    }
    node = &next;
    start = dot + 1;
  }
}

json LoadJsonFile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({"cannot open config file `" + path + "`"});
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError({"config file `" + path + "` is not valid JSON: " + e.what()});
  }
}

}  // namespace ojfa
