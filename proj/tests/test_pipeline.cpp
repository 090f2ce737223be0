#include "pipeline_chain.hpp"

#include <doctest.h>

#include <fstream>

using namespace reefclust;
namespace fs = std::filesystem;

TEST_SUITE("pipeline") {

TEST_CASE("reruns are byte identical") {
  const auto tmp = fs::temp_directory_path();
  const auto a = chain::run(tmp / "reefclust_chain_a", 5, 60, 2);
  const auto b = chain::run(tmp / "reefclust_chain_b", 5, 60, 2);
  CHECK(a.size() >= 12);
  CHECK(a.count("cluster/ward/labels.csv") == 1);
  CHECK(a.count("detect/events.jsonl") == 1);
  for (const auto& [name, bytes] : a) {
    CAPTURE(name);
    REQUIRE(b.count(name) == 1);
    CHECK(b.at(name) == bytes);
  }
  const auto c = chain::run(tmp / "reefclust_chain_c", 6, 60, 2);
  CHECK(c.at("sim/truth.csv") != a.at("sim/truth.csv"));
  for (const char* d : {"reefclust_chain_a", "reefclust_chain_b", "reefclust_chain_c"}) fs::remove_all(tmp / d);
}

TEST_CASE("manifest records inputs and outputs") {
  const auto dir = fs::temp_directory_path() / "reefclust_manifest_run";
  fs::remove_all(dir);
  const auto m = pipeline::run_pipeline("simulate", chain::with_defaults("simulate", {{"seed", 1}, {"n", 20}, {"out_dir", dir.string()}}));
  CHECK(m.command == "simulate");
  CHECK(m.tool_version == pipeline::kToolVersion);
  CHECK(m.outputs.size() >= 2);
  const auto j = io::load_config(dir / "manifest.json");
  CHECK(j.at("config").at("n") == 20);
  fs::remove_all(dir);
}

TEST_CASE("configuration errors") {
  const auto dir = (fs::temp_directory_path() / "reefclust_cfg_err").string();
  CHECK_THROWS_AS(pipeline::run_pipeline("simulate", chain::with_defaults("simulate", {{"n", 20}, {"out_dir", dir}})), ConfigError);
  CHECK_THROWS_AS(pipeline::run_pipeline("cluster", chain::with_defaults("cluster", {{"features", dir + "/none.csv"}, {"seed", 1}, {"out_dir", dir}})),
                  ConfigError);
  CHECK_THROWS_AS(pipeline::default_config("bogus"), ConfigError);
  CHECK_THROWS_AS(pipeline::run_pipeline("features", chain::with_defaults("features", {{"dataset", fs::temp_directory_path().string()},
                                                                                       {"out_dir", dir}})),
                  ConfigError);
  CHECK_THROWS_AS(pipeline::run_pipeline("simulate", chain::with_defaults("simulate", {{"seed", 1}, {"n", "many"}, {"out_dir", dir}})),
                  ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("labels csv") {
  const auto dir = fs::temp_directory_path() / "reefclust_labels";
  fs::create_directories(dir);
  io::write_text_atomic(dir / "ok.csv", "event_id,label\ne1,0\ne2,1\n");
  const auto l = pipeline::read_labels_csv(dir / "ok.csv");
  CHECK(l.event_ids == std::vector<std::string>{"e1", "e2"});
  CHECK(l.labels == std::vector<int>{0, 1});
  io::write_text_atomic(dir / "bad.csv", "id,cluster\ne1,0\n");
  CHECK_THROWS_AS(pipeline::read_labels_csv(dir / "bad.csv"), DataError);
  fs::remove_all(dir);
}

}
