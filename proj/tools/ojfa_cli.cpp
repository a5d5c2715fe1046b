// ojfa: train per-level low-rank shortcut jumps, pick the single jump that
// serves every exit level, and evaluate it against the baselines.
//
//   ojfa pipeline --config configs/desk.json --out out/desk
//   ojfa train --config run.json --train.epochs 40
//
// Any `--dotted.key value` flag overrides the matching configuration key.

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ojfa/config.hpp"
#include "ojfa/error.hpp"
#include "ojfa/pipeline.hpp"

namespace {

// Turns leftover `--a.b value` / `--a.b=value` arguments into overrides.
void ApplyExtras(const std::vector<std::string>& extras, nlohmann::json& j) {
  std::vector<std::string> problems;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& arg = extras[i];
    if (arg.rfind("--", 0) != 0 || arg.size() <= 2) {
      problems.push_back("unexpected argument `" + arg + "`");
      continue;
    }
    std::string key = arg.substr(2);
    std::string value;
    if (const auto eq = key.find('='); eq != std::string::npos) {
      value = key.substr(eq + 1);
      key.resize(eq);
    } else if (i + 1 < extras.size()) {
      value = extras[++i];
    } else {
      problems.push_back("override `" + arg + "` has no value");
      continue;
    }
    ojfa::ApplyOverride(j, key, value);
  }
  if (!problems.empty()) throw ojfa::ConfigError(std::move(problems));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"One-jump-fits-all low-rank early-exit shortcuts"};
  app.require_subcommand(1);
  app.allow_extras();

  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  std::optional<std::size_t> rank;
  std::vector<double> lambdas;

  auto add_common = [&](CLI::App* cmd) {
    cmd->allow_extras();
    cmd->add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
    cmd->add_option("--out", out_dir, "output directory");
    cmd->add_option("--seed", seed, "base seed for every stage");
    cmd->add_option("--threads", threads, "worker threads (0 = all cores)");
    cmd->add_option("--rank", rank, "shortcut rank (0 = floor(H/100), at least 1)");
    cmd->add_option("--lambda", lambdas, "early-exit confidence grid")->delimiter(',');
  };

  using Command = ojfa::CommandOutput (*)(const ojfa::RunConfig&);
  const std::vector<std::tuple<const char*, const char*, Command>> commands = {
      {"gen-model", "generate the seeded toy transformer (model.ojfw)", ojfa::CmdGenModel},
      {"gen-corpus", "build or import hidden-state corpora (train/test .ojfc)", ojfa::CmdGenCorpus},
      {"train", "train one jump per exit level plus the joint jump", ojfa::CmdTrain},
      {"select", "score jumps for reuse and keep the best one", ojfa::CmdSelect},
      {"evaluate", "precision/surprisal per level for every strategy", ojfa::CmdEvaluate},
      {"pipeline", "run every stage in order", ojfa::CmdPipeline},
  };
  std::vector<CLI::App*> subs;
  for (const auto& [name, help, fn] : commands) {
    subs.push_back(app.add_subcommand(name, help));
    add_common(subs.back());
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    nlohmann::json j = config_path.empty() ? nlohmann::json::object()
                                           : ojfa::LoadJsonFile(config_path);
    std::vector<std::string> extras = app.remaining();
    for (auto* sub : subs) {
      if (*sub) {
        const auto rest = sub->remaining();
        extras.insert(extras.end(), rest.begin(), rest.end());
      }
    }
    ApplyExtras(extras, j);
    if (!out_dir.empty()) j["out"] = out_dir;
    if (seed) j["seed"] = *seed;
    if (threads) j["threads"] = *threads;
    if (rank) j["rank"] = *rank;
    if (!lambdas.empty()) j["eval"]["lambdas"] = lambdas;

    const ojfa::RunConfig config = ojfa::RunConfig::FromJson(j);
    config.Validate();
    std::cout << ojfa::WriteEffectiveConfig(config).string() << "\n";

    for (std::size_t i = 0; i < subs.size(); ++i) {
      if (!*subs[i]) continue;
      for (const auto& line : std::get<2>(commands[i])(config)) std::cout << line << "\n";
    }
  } catch (const ojfa::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
