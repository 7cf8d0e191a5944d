#include <doctest.h>

#include <fstream>
#include <sstream>

#include "wcycle/schedule.hpp"

using namespace wcycle;

TEST_CASE("initial state is pure W") {
  ScheduleConfig cfg;
  auto s = initial_state(cfg);
  CHECK(s.phase == Phase::W_TO_WPLUS);
  CHECK(s.active_delta_count == 0);
  CHECK(s.zeroed_delta_count == 0);
  CHECK(s.lambda_delta == cfg.lambda_delta0);
  CHECK(s.lambda_adv == cfg.lambda_adv0);
  auto m = mask_of(s, cfg);
  for (int i = 0; i < m.n_deltas(); ++i) CHECK(!m.enabled(i));
}

TEST_CASE("full replay matches the committed golden trace and the invariants") {
  ScheduleConfig cfg;  // desk-scale defaults
  std::ifstream f("tests/data/schedule_trace_golden.csv");
  REQUIRE_MESSAGE(f.good(), "golden trace missing (run from the repository root)");
  std::stringstream ss;
  ss << f.rdbuf();
  CHECK(schedule_trace(cfg) == ss.str());

  // per-step invariants over the whole run
  auto s = initial_state(cfg);
  int last_active = s.active_delta_count, last_zeroed = s.zeroed_delta_count;
  double last_ld = s.lambda_delta, last_la = s.lambda_adv;
  std::vector<int> zero_events;
  while (s.phase != Phase::DONE) {
    auto n = advance(s, cfg);
    CHECK(n.active_delta_count >= last_active);
    CHECK(n.zeroed_delta_count >= last_zeroed);
    CHECK(n.lambda_delta >= last_ld);
    CHECK(n.lambda_adv <= last_la);
    CHECK(n.active_delta_count <= cfg.n_layers - 1);
    CHECK(n.zeroed_delta_count <= cfg.n_layers - 1);
    if (n.zeroed_delta_count > last_zeroed) {
      // record which delta index was zeroed (frozen set grows downward)
      auto m = mask_of(n, cfg);
      int newly = cfg.n_layers - 1 - n.zeroed_delta_count;  // 0-based delta index
      CHECK(m.frozen_zero[newly]);
      zero_events.push_back(newly + 1);  // 1-based delta number
    }
    last_active = n.active_delta_count;
    last_zeroed = n.zeroed_delta_count;
    last_ld = n.lambda_delta;
    last_la = n.lambda_adv;
    s = n;
  }
  CHECK(s.iteration == cfg.total());
  CHECK(s.zeroed_delta_count == cfg.n_layers - 1);
  // zeroing order is strictly delta_{N-1}, ..., delta_1
  REQUIRE(zero_events.size() == static_cast<size_t>(cfg.n_layers - 1));
  for (size_t i = 0; i < zero_events.size(); ++i)
    CHECK(zero_events[i] == cfg.n_layers - 1 - static_cast<int>(i));
  CHECK_THROWS(advance(s, cfg));
}

TEST_CASE("soft events compound lambda exactly") {
  ScheduleConfig cfg;
  cfg.len_w2wp = 0;
  cfg.len_soft = 1000;
  cfg.len_hard = 0;
  cfg.t1 = 100;
  cfg.soft_steps = 5;
  auto s = initial_state(cfg);
  CHECK(s.phase == Phase::SOFT);
  for (int k = 1; k <= 5; ++k) {
    for (int i = 0; i < 100; ++i) s = advance(s, cfg);
    CHECK(s.lambda_delta == doctest::Approx(cfg.lambda_delta0 * std::pow(1.2, k)).epsilon(1e-12));
    CHECK(s.lambda_adv == doctest::Approx(cfg.lambda_adv0 * std::pow(0.5, k)).epsilon(1e-12));
  }
  // ramp count capped at soft_steps
  for (int i = 0; i < 500; ++i) s = advance(s, cfg);
  CHECK(s.lambda_delta == doctest::Approx(cfg.lambda_delta0 * std::pow(1.2, 5)).epsilon(1e-12));
  CHECK(s.phase == Phase::DONE);
}

TEST_CASE("mask_of mid-phase examples") {
  ScheduleConfig cfg;
  ScheduleState s = initial_state(cfg);
  s.active_delta_count = 3;
  auto m = mask_of(s, cfg);
  for (int i = 0; i < 7; ++i) CHECK(m.enabled(i) == (i < 3));

  s.active_delta_count = 7;
  s.zeroed_delta_count = 2;
  m = mask_of(s, cfg);
  CHECK(m.frozen_zero[6]);
  CHECK(m.frozen_zero[5]);
  for (int i = 0; i < 5; ++i) {
    CHECK(!m.frozen_zero[i]);
    CHECK(m.enabled(i));
  }
  m.validate();
}

TEST_CASE("replay determinism") {
  ScheduleConfig cfg;
  cfg.len_w2wp = 500;
  cfg.len_soft = 200;
  cfg.len_hard = 150;
  cfg.t0 = 70;
  cfg.t1 = 13;
  cfg.t2 = 20;
  CHECK(schedule_trace(cfg) == schedule_trace(cfg));
}

TEST_CASE("variant presets") {
  ScheduleConfig full;
  full.len_w2wp = 1000;
  full.len_soft = 300;
  full.len_hard = 200;
  full.t0 = 125;
  full.t1 = 20;
  full.t2 = 25;
  long total = full.total();

  SUBCASE("w_only never activates deltas") {
    auto cfg = variant_schedule(full, TrainVariant::WOnly);
    CHECK(cfg.total() == total);
    auto s = initial_state(cfg);
    while (s.phase != Phase::DONE) s = advance(s, cfg);
    CHECK(s.active_delta_count == 0);
    CHECK(s.zeroed_delta_count == 0);
  }

  SUBCASE("w2wp ends with all deltas active and none zeroed") {
    auto cfg = variant_schedule(full, TrainVariant::WToWPlus);
    CHECK(cfg.total() == total);
    auto s = initial_state(cfg);
    while (s.phase != Phase::DONE) s = advance(s, cfg);
    CHECK(s.active_delta_count == cfg.n_layers - 1);
    CHECK(s.zeroed_delta_count == 0);
  }

  SUBCASE("wp2w starts fully active and ends fully zeroed") {
    auto cfg = variant_schedule(full, TrainVariant::WPlusToW);
    CHECK(cfg.total() == total);
    auto s = initial_state(cfg);
    CHECK(s.active_delta_count == cfg.n_layers - 1);
    auto m0 = mask_of(s, cfg);
    for (int i = 0; i < m0.n_deltas(); ++i) CHECK(m0.enabled(i));
    while (s.phase != Phase::DONE) s = advance(s, cfg);
    CHECK(s.zeroed_delta_count == cfg.n_layers - 1);
    CHECK(s.soft_events == full.soft_steps);
  }

  SUBCASE("hard_only skips the soft ramp but still zeroes everything") {
    auto cfg = variant_schedule(full, TrainVariant::HardOnly);
    CHECK(cfg.total() == total);
    auto s = initial_state(cfg);
    while (s.phase != Phase::DONE) s = advance(s, cfg);
    CHECK(s.soft_events == 0);
    CHECK(s.lambda_delta == cfg.lambda_delta0);
    CHECK(s.lambda_adv == cfg.lambda_adv0);
    CHECK(s.zeroed_delta_count == cfg.n_layers - 1);
  }

  SUBCASE("full cycle terminal state") {
    auto s = initial_state(full);
    while (s.phase != Phase::DONE) s = advance(s, full);
    CHECK(s.active_delta_count == full.n_layers - 1);
    CHECK(s.zeroed_delta_count == full.n_layers - 1);
    auto m = mask_of(s, full);
    for (int i = 0; i < m.n_deltas(); ++i) CHECK(!m.enabled(i));
  }
}

TEST_CASE("config validation") {
  ScheduleConfig cfg;
  cfg.t0 = 0;
  CHECK_THROWS(cfg.validate());
  cfg = ScheduleConfig{};
  cfg.adv_decay = 1.5;
  CHECK_THROWS(cfg.validate());
  cfg = ScheduleConfig{};
  cfg.n_layers = 1;
  CHECK_THROWS(cfg.validate());
}
