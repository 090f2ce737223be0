#include "reefclust/core.hpp"
#include "reefclust/pipeline.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

using nlohmann::json;
namespace pl = reefclust::pipeline;

namespace {

// Path-valued fields that have no default.
const std::map<std::string, std::vector<std::string>> kPathFields{
    {"simulate", {}},
    {"detect", {"north", "south"}},
    {"features", {"dataset", "events", "north", "south"}},
    {"cluster", {"features"}},
    {"tsne", {"features", "labels"}},
    {"dec-pretrain", {"dataset"}},
    {"dec-train", {"dataset", "model"}},
    {"dec-assign", {"dataset", "model"}},
    {"dec-sweep", {"dataset"}},
    {"eval", {"pred", "truth"}},
    {"plot", {"features", "events", "labels"}},
};

const std::map<std::string, std::string> kHelp{
    {"simulate", "Generate a labelled event dataset or a two-sensor WAV scene"},
    {"detect", "Scan two vector-sensor WAV files for directional broadband events"},
    {"features", "Handpicked features from a simulated dataset or detected events"},
    {"cluster", "K-means, Ward or EM clustering of a feature matrix"},
    {"tsne", "2D t-SNE embedding of a feature or latent matrix"},
    {"eval", "Aligned accuracy, precision and recall of predicted labels"},
    {"plot", "Figures: fig1, signals, levels, scatter"},
    {"dec-pretrain", "Pretrain the convolutional autoencoder and initialise centroids"},
    {"dec-train", "Joint clustering and reconstruction training"},
    {"dec-assign", "Assign clusters and export latent vectors"},
    {"dec-sweep", "Accuracy against latent dimension"},
};

std::string flag_name(std::string key) {
  for (char& ch : key)
    if (ch == '_') ch = '-';
  return "--" + key;
}

/// Collects flag values as strings; they are typed against the defaults after parsing.
struct Command {
  std::string name;
  CLI::App* app = nullptr;
  std::string config_path;
  std::map<std::string, std::unique_ptr<std::vector<std::string>>> values;
  std::map<std::string, CLI::Option*> options;
};

json typed(const json& like, const std::vector<std::string>& raw, const std::string& key) {
  auto scalar = [&](const json& proto, const std::string& s) -> json {
    try {
      if (proto.is_boolean()) {
        if (s == "true" || s == "1") return true;
        if (s == "false" || s == "0") return false;
        throw reefclust::ConfigError("--" + key + " expects true or false");
      }
      if (proto.is_number_unsigned() || proto.is_number_integer()) return std::stoll(s);
      if (proto.is_number_float()) return std::stod(s);
    } catch (const std::logic_error&) {
      throw reefclust::ConfigError("--" + key + ": cannot parse '" + s + "'");
    }
    return s;
  };
  if (like.is_array()) {
    json arr = json::array();
    for (const auto& s : raw) arr.push_back(scalar(like.empty() ? json(0) : like[0], s));
    return arr;
  }
  return scalar(like, raw.back());
}

void add_command(CLI::App& parent, const std::string& name, const std::string& sub_name, Command& cmd) {
  cmd.name = name;
  cmd.app = parent.add_subcommand(sub_name, kHelp.at(name));
  cmd.app->fallthrough();
  cmd.app->add_option("--config", cmd.config_path, "JSON config file (flags override it)");
  const json defaults = pl::default_config(name);
  std::vector<std::string> keys;
  for (const auto& [k, v] : defaults.items()) keys.push_back(k);
  keys.push_back("seed");
  for (const auto& k : kPathFields.at(name)) keys.push_back(k);
  for (const auto& key : keys) {
    auto store = std::make_unique<std::vector<std::string>>();
    std::string help;
    if (defaults.contains(key)) help = "default " + defaults[key].dump();
    CLI::Option* opt = nullptr;
    if (defaults.contains(key) && defaults[key].is_boolean()) {
      opt = cmd.app->add_option(flag_name(key), *store, help)->expected(0, 1)->default_str("true");
    } else if (defaults.contains(key) && defaults[key].is_array()) {
      opt = cmd.app->add_option(flag_name(key), *store, help)->delimiter(',');
    } else {
      opt = cmd.app->add_option(flag_name(key), *store, help);
    }
    cmd.options[key] = opt;
    cmd.values[key] = std::move(store);
  }
  if (defaults.contains("standardize")) {
    cmd.app->add_flag_callback("--no-standardize", [&cmd]() { cmd.values["standardize"]->assign({"false"}); }, "Cluster raw feature units");
  }
}

json collect(const Command& cmd) {
  const json defaults = pl::default_config(cmd.name);
  json file = cmd.config_path.empty() ? json() : reefclust::io::load_config(cmd.config_path);
  json flags = json::object();
  for (const auto& [key, store] : cmd.values) {
    if (store->empty() && cmd.options.at(key)->count() == 0) continue;
    std::vector<std::string> raw = *store;
    if (raw.empty()) raw = {"true"};
    const json like = defaults.contains(key) ? defaults[key] : (key == "seed" ? json(0u) : json(""));
    flags[key] = typed(like, raw, key);
  }
  return reefclust::io::merge_config(defaults, file, flags);
}

int fail(int code, const std::string& msg) {
  std::cerr << "error " << code << ": " << msg << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unsupervised clustering of reef soundscape events"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Suppress progress messages");

  std::vector<std::unique_ptr<Command>> cmds;
  for (const char* name : {"simulate", "detect", "features", "cluster", "tsne", "eval", "plot"}) {
    cmds.push_back(std::make_unique<Command>());
    add_command(app, name, name, *cmds.back());
  }
  CLI::App* dec = app.add_subcommand("dec", "Deep embedded clustering");
  dec->require_subcommand(1);
  dec->fallthrough();
  for (const char* sub : {"pretrain", "train", "assign", "sweep"}) {
    cmds.push_back(std::make_unique<Command>());
    add_command(*dec, std::string("dec-") + sub, sub, *cmds.back());
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(2, e.what());
  }

  for (const auto& cmd : cmds) {
    if (!cmd->app->parsed()) continue;
    try {
      const json cfg = collect(*cmd);
      pl::Logger log;
      if (!quiet) log = [](const std::string& m) { std::cerr << m << '\n'; };
      const auto manifest = pl::run_pipeline(cmd->name, cfg, log);
      for (const auto& f : manifest.outputs) std::cout << f.path << '\n';
      return 0;
    } catch (const reefclust::Error& e) {
      return fail(static_cast<int>(e.code()), e.what());
    } catch (const json::exception& e) {
      return fail(2, e.what());
    } catch (const std::exception& e) {
      return fail(3, e.what());
    }
  }
  return fail(2, "no command given");
}
