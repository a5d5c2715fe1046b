#include "ojfa/pipeline.hpp"

#include <fstream>
#include <sstream>

#include "ojfa/binary_io.hpp"
#include "ojfa/corpus.hpp"
#include "ojfa/error.hpp"
#include "ojfa/eval.hpp"
#include "ojfa/select.hpp"
#include "ojfa/shortcut.hpp"
#include "ojfa/transformer.hpp"

namespace ojfa {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Corpus sub-streams.
constexpr std::uint64_t kTextStream = 1;
constexpr std::uint64_t kSampleStream = 2;
constexpr std::uint64_t kSplitStream = 3;

fs::path OutDir(const RunConfig& c) {
  fs::path dir(c.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

std::string FileHash(const fs::path& p) { return HexDigest(Fnv1a(ReadFileBytes(p))); }

// Records content hashes of `files` in manifest.json.
void RecordArtifacts(const fs::path& dir, const std::vector<fs::path>& files) {
  const fs::path manifest_path = dir / artifact::kManifest;
  json manifest = json::object();
  if (fs::exists(manifest_path)) {
    std::ifstream in(manifest_path);
    manifest = json::parse(in, nullptr, false);
    if (!manifest.is_object()) manifest = json::object();
  }
  for (const auto& f : files) {
    const auto bytes = ReadFileBytes(f);
    manifest[f.filename().string()] = {{"fnv1a64", HexDigest(Fnv1a(bytes))},
                                       {"bytes", bytes.size()}};
  }
  std::ofstream out(manifest_path, std::ios::trunc);
  out << manifest.dump(2) << "\n";
  if (!out) throw Error("cannot write " + manifest_path.string());
}

void WriteJson(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << j.dump(2) << "\n";
  if (!out) throw Error("write failed for " + path.string());
}

json ReadJson(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string() + "; run the preceding command first");
  return json::parse(in);
}

fs::path Require(const fs::path& p, const char* producer) {
  if (!fs::exists(p)) {
    throw Error("missing " + p.string() + "; run `" + producer + "` first");
  }
  return p;
}

TransformerWeights ObtainModel(const RunConfig& c) {
  const fs::path generated = fs::path(c.out_dir) / artifact::kModel;
  if (fs::exists(generated)) return LoadModel(generated);
  if (!c.model.path.empty()) return LoadModel(c.model.path);
  throw Error("no model available: run `gen-model` or set model.path");
}

std::vector<std::string> SourceTexts(const RunConfig& c) {
  if (c.corpus.source == "text") return ReadTextLines(c.corpus.path);
  Rng rng(DeriveSeed(c.CorpusSeed(), kTextStream));
  return SyntheticTexts(c.corpus.num_texts, c.corpus.min_len, c.corpus.max_len, rng);
}

std::string Fixed(double v, int digits = 4) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

}  // namespace

fs::path WriteEffectiveConfig(const RunConfig& config) {
  const fs::path path = OutDir(config) / artifact::kEffectiveConfig;
  WriteJson(path, config.ToJson());
  return path;
}

CommandOutput CmdGenModel(const RunConfig& c) {
  const fs::path dir = OutDir(c);
  TransformerWeights w;
  if (!c.model.path.empty()) {
    w = LoadModel(c.model.path);
  } else {
    TransformerConfig mc = c.model.config;
    mc.seed = c.ModelSeed();
    w = InitModel(mc);
  }
  const fs::path path = dir / artifact::kModel;
  SaveModel(w, path);
  RecordArtifacts(dir, {path});
  const auto& mc = w.config;
  return {path.string(),
          "model: H=" + std::to_string(mc.hidden_dim) + " K=" + std::to_string(mc.num_blocks) +
              " heads=" + std::to_string(mc.num_heads) + " vocab=" + std::to_string(mc.vocab_size) +
              " checksum=" + HexDigest(w.Checksum())};
}

CommandOutput CmdGenCorpus(const RunConfig& c) {
  const fs::path dir = OutDir(c);
  HiddenCorpus train, test;
  std::string note;
  if (c.corpus.source == "ojfc") {
    HiddenCorpus imported = LoadCorpus(c.corpus.path);
    imported.Validate();
    if (!c.corpus.test_path.empty()) {
      train = std::move(imported);
      test = LoadCorpus(c.corpus.test_path);
      test.Validate();
      if (test.hidden_dim != train.hidden_dim || test.num_blocks != train.num_blocks) {
        throw Error("imported train and test corpora disagree on (H, K)");
      }
    } else {
      Rng split_rng(DeriveSeed(c.CorpusSeed(), kSplitStream));
      std::tie(train, test) = SplitCorpus(imported, c.corpus.train_fraction, split_rng);
    }
    note = "imported " + c.corpus.path;
  } else {
    const TransformerWeights w = ObtainModel(c);
    const auto texts = SourceTexts(c);
    Rng sample_rng(DeriveSeed(c.CorpusSeed(), kSampleStream));
    const HiddenCorpus all =
        BuildCorpus(w, texts, c.corpus.positions_per_text, sample_rng, c.threads);
    Rng split_rng(DeriveSeed(c.CorpusSeed(), kSplitStream));
    std::tie(train, test) = SplitCorpus(all, c.corpus.train_fraction, split_rng);
    note = std::to_string(texts.size()) + " texts, " + std::to_string(all.skipped_texts) +
           " skipped, " + std::to_string(all.truncated_texts) + " truncated";
  }
  const fs::path train_path = dir / artifact::kTrainCorpus;
  const fs::path test_path = dir / artifact::kTestCorpus;
  SaveCorpus(train, train_path);
  SaveCorpus(test, test_path);
  RecordArtifacts(dir, {train_path, test_path});
  return {train_path.string(), test_path.string(),
          "corpus: H=" + std::to_string(train.hidden_dim) + " K=" +
              std::to_string(train.num_blocks) + " train=" + std::to_string(train.size()) +
              " test=" + std::to_string(test.size()) + " (" + note + ")"};
}

CommandOutput CmdTrain(const RunConfig& c) {
  const fs::path dir = OutDir(c);
  const fs::path train_path = Require(dir / artifact::kTrainCorpus, "gen-corpus");
  const HiddenCorpus train = LoadCorpus(train_path);
  train.Validate();
  const std::size_t rank = c.rank != 0 ? c.rank : DefaultRank(train.hidden_dim);
  TrainSettings settings = c.train;
  settings.seed = c.TrainSeed();

  const std::size_t K = train.num_blocks;
  std::vector<TrainedJump> trained(K);
  ParallelFor(K, c.threads, [&](std::size_t k) {
    trained[k] = TrainJump(train, static_cast<std::uint32_t>(k), rank, settings);
  });
  const TrainedJump joint = TrainJointJump(train, rank, settings);

  JumpBank bank;
  bank.hidden_dim = train.hidden_dim;
  bank.rank = static_cast<std::uint32_t>(rank);
  bank.num_levels = static_cast<std::uint32_t>(K);
  json levels = json::array();
  for (std::size_t k = 0; k < K; ++k) {
    bank.jumps.push_back(trained[k].jump);
    levels.push_back({{"level", k},
                      {"initial_loss", trained[k].initial_loss},
                      {"final_loss", trained[k].final_loss}});
  }
  JumpBank joint_bank = bank;
  joint_bank.jumps = {joint.jump};

  const fs::path bank_path = dir / artifact::kBank;
  const fs::path joint_path = dir / artifact::kJoint;
  const fs::path log_path = dir / artifact::kTrainLog;
  SaveBank(bank, bank_path);
  SaveBank(joint_bank, joint_path);
  WriteJson(log_path, {{"rank", rank},
                       {"hidden_dim", train.hidden_dim},
                       {"num_levels", K},
                       {"train_records", train.size()},
                       {"train_corpus_fnv1a64", FileHash(train_path)},
                       {"levels", levels},
                       {"joint",
                        {{"pooled_pairs", train.size() * K},
                         {"initial_loss", joint.initial_loss},
                         {"final_loss", joint.final_loss}}},
                       {"bank_parameters", bank.ParameterCount()}});
  RecordArtifacts(dir, {bank_path, joint_path, log_path});
  return {bank_path.string(), joint_path.string(), log_path.string(),
          "trained " + std::to_string(K) + " jumps + joint at rank " + std::to_string(rank) +
              " (" + std::to_string(bank.ParameterCount()) + " bank parameters)"};
}

CommandOutput CmdSelect(const RunConfig& c) {
  const fs::path dir = OutDir(c);
  const fs::path bank_path = Require(dir / artifact::kBank, "train");
  const fs::path train_path = Require(dir / artifact::kTrainCorpus, "gen-corpus");
  const JumpBank bank = LoadBank(bank_path);
  const HiddenCorpus train = LoadCorpus(train_path);
  const ReuseScoreTable table = SelectOjfa(bank, train, c.threads);
  const JumpBank pruned = bank.Pruned(table.chosen);

  json j = table.ToJson();
  j["softmax_temperature"] = c.eval.score_temperature;
  j["softmax"] = ScoreDistribution(table.scores, c.eval.score_temperature);
  j["parameters"] = {{"per_jump", CountJumpParams(bank.hidden_dim, bank.rank)},
                     {"num_levels", bank.num_levels},
                     {"full_bank", bank.ParameterCount()},
                     {"ojfa_bank", pruned.ParameterCount()},
                     {"reduction_factor", bank.ParameterCount() / pruned.ParameterCount()}};
  j["bank_fnv1a64"] = FileHash(bank_path);
  j["train_corpus_fnv1a64"] = FileHash(train_path);

  const fs::path scores_path = dir / artifact::kScores;
  const fs::path pruned_path = dir / artifact::kOjfaBank;
  WriteJson(scores_path, j);
  SaveBank(pruned, pruned_path);
  RecordArtifacts(dir, {scores_path, pruned_path});
  return {scores_path.string(), pruned_path.string(),
          "ojfa choice: jump " + std::to_string(table.chosen) + " (D=" +
              Fixed(table.scores[table.chosen_index()], 6) + "); parameters " +
              std::to_string(bank.ParameterCount()) + " -> " +
              std::to_string(pruned.ParameterCount())};
}

CommandOutput CmdEvaluate(const RunConfig& c) {
  const fs::path dir = OutDir(c);
  const TransformerWeights w = ObtainModel(c);
  const fs::path test_path = Require(dir / artifact::kTestCorpus, "gen-corpus");
  const fs::path bank_path = Require(dir / artifact::kBank, "train");
  const fs::path joint_path = Require(dir / artifact::kJoint, "train");
  const fs::path scores_path = Require(dir / artifact::kScores, "select");
  const HiddenCorpus test = LoadCorpus(test_path);
  const JumpBank bank = LoadBank(bank_path);
  const JumpBank joint = LoadBank(joint_path);
  const json scores_json = ReadJson(scores_path);
  const ReuseScoreTable table = ReuseScoreTable::FromJson(scores_json);
  const LowRankJump& ojfa = bank.At(table.chosen);

  EvalReport report;
  report.num_levels = test.num_blocks;
  for (const auto& name : c.eval.strategies) {
    if (name == "ojfa") {
      report.strategies.push_back(EvaluateStrategy(StrategySpec::Ojfa(ojfa), w, test, c.threads));
    } else if (name == "joint") {
      report.strategies.push_back(
          EvaluateStrategy(StrategySpec::Joint(joint.jumps.at(0)), w, test, c.threads));
    } else if (name == "identity") {
      report.strategies.push_back(EvaluateStrategy(StrategySpec::Identity(), w, test, c.threads));
    } else if (name == "full_multi_jump") {
      report.strategies.push_back(
          EvaluateStrategy(StrategySpec::FullMultiJump(bank), w, test, c.threads));
    } else if (name == "arbitrary") {
      std::vector<std::uint32_t> levels = c.eval.arbitrary_levels;
      if (levels.empty())
        for (const auto& j : bank.jumps) levels.push_back(j.level);
      for (std::uint32_t m : levels) {
        report.strategies.push_back(
            EvaluateStrategy(StrategySpec::Arbitrary(bank.At(m)), w, test, c.threads));
      }
    }
  }
  report.score_levels = table.levels;
  report.score_distribution = ScoreDistribution(table.scores, c.eval.score_temperature);

  if (c.corpus.source != "ojfc" && !c.eval.lambdas.empty()) {
    const auto texts = SourceTexts(c);
    const std::size_t n = std::min(c.eval.early_exit_inputs, test.size());
    std::vector<std::vector<Token>> inputs(n);
    std::vector<Token> full_prediction(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& rec = test.records[i];
      auto tokens = BytesToTokens(texts.at(rec.sentence_id));
      tokens.resize(rec.position + 1);
      inputs[i] = std::move(tokens);
      full_prediction[i] = static_cast<Token>(Argmax(Head(w, rec.Final())));
    }
    const ExitShortcuts shortcuts{nullptr, &ojfa};
    for (double lambda : c.eval.lambdas) {
      std::vector<EarlyExitResult> runs(n);
      ParallelFor(n, c.threads,
                  [&](std::size_t i) { runs[i] = EarlyExitRun(w, shortcuts, inputs[i], lambda); });
      EarlyExitSummary s;
      s.lambda = lambda;
      s.n_inputs = n;
      for (std::size_t i = 0; i < n; ++i) {
        s.mean_exit_level += static_cast<double>(runs[i].exit_level);
        s.agreement += runs[i].predicted == full_prediction[i];
      }
      if (n > 0) {
        s.mean_exit_level /= static_cast<double>(n);
        s.agreement /= static_cast<double>(n);
      }
      report.early_exit.push_back(s);
    }
  }

  report.metadata = {{"model_fnv1a64", HexDigest(w.Checksum())},
                     {"test_corpus_fnv1a64", FileHash(test_path)},
                     {"bank_fnv1a64", FileHash(bank_path)},
                     {"joint_fnv1a64", FileHash(joint_path)},
                     {"train_corpus_fnv1a64", scores_json.value("train_corpus_fnv1a64", "")},
                     {"ojfa_level", table.chosen},
                     {"hidden_dim", bank.hidden_dim},
                     {"rank", bank.rank},
                     {"test_records", test.size()},
                     {"seeds",
                      {{"seed", c.seed},
                       {"model", c.ModelSeed()},
                       {"corpus", c.CorpusSeed()},
                       {"train", c.TrainSeed()}}}};

  auto written = EmitReport(report, dir);
  RecordArtifacts(dir, written);
  CommandOutput out;
  for (const auto& p : written) out.push_back(p.string());
  for (const auto& s : report.strategies) {
    out.push_back(s.name + ": mean precision " + Fixed(s.MeanPrecision()) + ", mean surprisal " +
                  Fixed(s.MeanSurprisal()));
  }
  return out;
}

CommandOutput CmdPipeline(const RunConfig& c) {
  CommandOutput out;
  auto append = [&](CommandOutput part) { out.insert(out.end(), part.begin(), part.end()); };
  if (c.corpus.source != "ojfc" || !c.model.path.empty()) append(CmdGenModel(c));
  append(CmdGenCorpus(c));
  append(CmdTrain(c));
  append(CmdSelect(c));
  if (c.corpus.source != "ojfc" || !c.model.path.empty()) append(CmdEvaluate(c));
  return out;
}

}  // namespace ojfa
