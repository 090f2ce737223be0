#pragma once

#include "reefclust/io.hpp"

#include <json.hpp>

#include <functional>
#include <string>
#include <vector>

namespace reefclust::pipeline {

inline constexpr const char* kToolVersion = "0.1.0";

/// Commands: simulate, detect, features, cluster, tsne, dec-pretrain, dec-train, dec-assign,
/// dec-sweep, eval, plot.
std::vector<std::string> commands();

/// Built-in defaults for a command; the lowest-precedence config layer.
nlohmann::json default_config(const std::string& command);

using Logger = std::function<void(const std::string&)>;

/// Runs one command with a fully merged config, writes `<out_dir>/manifest.json` and returns it.
/// Stage failures are rethrown with the command name prefixed.
io::RunManifest run_pipeline(const std::string& command, const nlohmann::json& cfg, const Logger& log = {});

struct LabelsFile {
  std::vector<std::string> event_ids;
  std::vector<int> labels;
};

LabelsFile read_labels_csv(const std::filesystem::path& path);

}  // namespace reefclust::pipeline
