#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ojfa/config.hpp"

namespace ojfa {

// Artifact names inside the output directory.
namespace artifact {
inline constexpr char kModel[] = "model.ojfw";
inline constexpr char kTrainCorpus[] = "train.ojfc";
inline constexpr char kTestCorpus[] = "test.ojfc";
inline constexpr char kBank[] = "bank.ojfs";
inline constexpr char kJoint[] = "joint.ojfs";
inline constexpr char kTrainLog[] = "train_log.json";
inline constexpr char kScores[] = "scores.json";
inline constexpr char kOjfaBank[] = "ojfa.ojfs";
inline constexpr char kEffectiveConfig[] = "config.effective.json";
inline constexpr char kManifest[] = "manifest.json";
}  // namespace artifact

// Stdout lines for a command: artifact paths and one-line summaries.
using CommandOutput = std::vector<std::string>;

CommandOutput CmdGenModel(const RunConfig& config);
CommandOutput CmdGenCorpus(const RunConfig& config);
CommandOutput CmdTrain(const RunConfig& config);
CommandOutput CmdSelect(const RunConfig& config);
CommandOutput CmdEvaluate(const RunConfig& config);
CommandOutput CmdPipeline(const RunConfig& config);

// Writes config.effective.json into the output directory.
std::filesystem::path WriteEffectiveConfig(const RunConfig& config);

}  // namespace ojfa
