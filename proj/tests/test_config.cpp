#include <doctest.h>

#include <filesystem>

#include "wcycle/config.hpp"
#include "wcycle/manifest.hpp"

using namespace wcycle;

TEST_CASE("ini parsing: sections, comments, trimming") {
  auto ini = IniConfig::parse_string(
      "# comment\n"
      "[train]\n"
      "batch = 12   ; trailing comment\n"
      "lr=0.002\n"
      "\n"
      "[schedule]\n"
      "t0 = 100\n");
  CHECK(ini.get_long("train.batch", 0) == 12);
  CHECK(ini.get_double("train.lr", 0) == doctest::Approx(0.002));
  CHECK(ini.get_long("schedule.t0", 0) == 100);
  CHECK(ini.get_long("schedule.missing", 7) == 7);
}

TEST_CASE("ini parsing rejects malformed input") {
  CHECK_THROWS(IniConfig::parse_string("[broken\nkey=1\n"));
  CHECK_THROWS(IniConfig::parse_string("novalue\n"));
  CHECK_THROWS(IniConfig::parse_file("no_such_config.ini"));
}

TEST_CASE("config defaults match the desk-scale recipe") {
  auto cfg = RunConfig::from_ini(IniConfig{});
  CHECK(cfg.generator.d_w == 64);
  CHECK(cfg.weights.l2 == 1.0);
  CHECK(cfg.weights.lpips == 0.8);
  CHECK(cfg.weights.id == 0.1);
  CHECK(cfg.weights.reg == 1.0);
  CHECK(cfg.refine.iterations == 15);
  CHECK(cfg.refine.m_samples == 7);
  CHECK(cfg.refine.space == LatentSpace::WPLUS);
  CHECK(cfg.schedule.len_w2wp == 10000);
  CHECK(cfg.schedule.len_soft == 3000);
  CHECK(cfg.schedule.len_hard == 2000);
  CHECK(cfg.schedule.delta_ramp == 0.20);
  CHECK(cfg.schedule.adv_decay == 0.50);
  CHECK(cfg.tune.iterations == 350);
  CHECK(cfg.optimize.steps == 300);
}

TEST_CASE("precedence: overrides beat file values beat defaults") {
  namespace fs = std::filesystem;
  std::string path = "test_out_config.ini";
  {
    std::ofstream f(path);
    f << "[train]\nbatch = 4\nlr = 0.01\n";
  }
  auto cfg = resolve_config(path, {"train.lr=0.5"});
  CHECK(cfg.train_batch == 4);      // from file
  CHECK(cfg.train_lr == 0.5);       // from override
  CHECK(cfg.tune.iterations == 350);  // default
  fs::remove(path);
}

TEST_CASE("unknown fields are rejected with their path") {
  IniConfig ini;
  ini.set("train.batchsize", "8");
  try {
    RunConfig::from_ini(ini);
    FAIL("expected rejection");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("train.batchsize") != std::string::npos);
  }
  CHECK_THROWS(resolve_config("", {"broken-override"}));
}

TEST_CASE("typed getters report the offending field") {
  IniConfig ini;
  ini.set("train.lr", "fast");
  try {
    RunConfig::from_ini(ini);
    FAIL("expected rejection");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("train.lr") != std::string::npos);
  }
}

TEST_CASE("config hash is stable and sensitive") {
  auto a = RunConfig::from_ini(IniConfig{});
  auto b = RunConfig::from_ini(IniConfig{});
  CHECK(a.hash() == b.hash());
  IniConfig ini;
  ini.set("train.batch", "9");
  auto c = RunConfig::from_ini(ini);
  CHECK(a.hash() != c.hash());
}

TEST_CASE("manifest round trip and orphan detection") {
  namespace fs = std::filesystem;
  std::string dir = "test_out_manifest";
  fs::create_directories(dir + "/sub");
  {
    std::ofstream(dir + "/metrics.csv") << "a,b\n1,2\n";
    std::ofstream(dir + "/sub/blob.bin") << "xx";
  }
  CommandManifest m;
  m.command = "eval recon";
  m.config_hash = "abc";
  m.config = {{"train.batch", "8"}};
  m.inputs = {{"generator", "deadbeef"}};
  m.add_output("metrics.csv");
  m.add_output("sub");
  m.write(dir);

  auto back = CommandManifest::read(dir);
  CHECK(back.command == "eval recon");
  CHECK(back.inputs.at("generator") == "deadbeef");
  CHECK(find_orphans(dir).empty());

  std::ofstream(dir + "/stray.txt") << "oops";
  auto orphans = find_orphans(dir);
  REQUIRE(orphans.size() == 1);
  CHECK(orphans[0] == "stray.txt");
  fs::remove_all(dir);
}
