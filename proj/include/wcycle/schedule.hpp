#pragma once

#include <cstdio>
#include <string>

#include "wcycle/common.hpp"

namespace wcycle {

// Training-space schedule for the encoder: start in W with all offsets
// disabled, unlock them one by one (W -> W+), then return to W first by
// ramping the offset penalty while decaying the adversarial weight (soft)
// and finally by zeroing offsets from the last layer down (hard).

enum class Phase { W_TO_WPLUS, SOFT, HARD, DONE };

inline const char* phase_name(Phase p) {
  switch (p) {
    case Phase::W_TO_WPLUS: return "W_TO_WPLUS";
    case Phase::SOFT: return "SOFT";
    case Phase::HARD: return "HARD";
    default: return "DONE";
  }
}

struct ScheduleConfig {
  int n_layers = 8;        // N; deltas are indices 1..N-1
  long len_w2wp = 10000;   // phase lengths, desk scale (paper's 500K/150K/100K over 50)
  long len_soft = 3000;
  long len_hard = 2000;
  long t0 = 1250;          // iterations between delta unlocks
  long t1 = 200;           // iterations between soft ramp events (15 events as in the paper)
  long t2 = 80;            // iterations between hard zeroing events (paper's 4K over 50)
  double delta_ramp = 0.20;   // lambda_delta multiplier per soft event (+20%)
  double adv_decay = 0.50;    // lambda_adv multiplier per soft event (-50%)
  int soft_steps = 15;        // max ramp events
  double lambda_delta0 = 2e-4;
  double lambda_adv0 = 0.1;
  int initial_active = 0;     // W+-start variants set this to N-1

  long total() const { return len_w2wp + len_soft + len_hard; }

  void validate() const {
    require(n_layers >= 2, "schedule: n_layers must be >= 2");
    require(t0 >= 1 && t1 >= 1 && t2 >= 1, "schedule: intervals must be >= 1");
    require(delta_ramp > 0, "schedule: delta_ramp must be > 0");
    require(adv_decay > 0 && adv_decay <= 1, "schedule: adv_decay must be in (0, 1]");
    require(len_w2wp >= 0 && len_soft >= 0 && len_hard >= 0, "schedule: negative phase");
    require(initial_active >= 0 && initial_active <= n_layers - 1,
            "schedule: bad initial_active");
  }
};

struct ScheduleState {
  Phase phase = Phase::W_TO_WPLUS;
  long iteration = 0;        // global iteration count
  long phase_iteration = 0;  // iterations completed inside the current phase
  int active_delta_count = 0;
  int zeroed_delta_count = 0;
  int soft_events = 0;
  double lambda_delta = 0;
  double lambda_adv = 0;
};

inline ScheduleState initial_state(const ScheduleConfig& cfg) {
  cfg.validate();
  ScheduleState s;
  s.active_delta_count = cfg.initial_active;
  s.lambda_delta = cfg.lambda_delta0;
  s.lambda_adv = cfg.lambda_adv0;
  s.phase = cfg.len_w2wp > 0 ? Phase::W_TO_WPLUS
            : cfg.len_soft > 0 ? Phase::SOFT
            : cfg.len_hard > 0 ? Phase::HARD
                               : Phase::DONE;
  return s;
}

// One iteration tick. Events fire when the phase-local iteration count
// reaches a positive multiple of the phase cadence; phase transitions
// happen when the phase length is consumed.
inline ScheduleState advance(const ScheduleState& state, const ScheduleConfig& cfg) {
  require(state.phase != Phase::DONE, "schedule: advance past DONE");
  ScheduleState s = state;
  s.iteration += 1;
  s.phase_iteration += 1;

  if (s.phase == Phase::W_TO_WPLUS) {
    if (s.phase_iteration % cfg.t0 == 0 && s.active_delta_count < cfg.n_layers - 1)
      s.active_delta_count += 1;
    if (s.phase_iteration >= cfg.len_w2wp) {
      s.phase = cfg.len_soft > 0 ? Phase::SOFT : cfg.len_hard > 0 ? Phase::HARD : Phase::DONE;
      s.phase_iteration = 0;
    }
  } else if (s.phase == Phase::SOFT) {
    if (s.phase_iteration % cfg.t1 == 0 && s.soft_events < cfg.soft_steps) {
      s.lambda_delta *= (1.0 + cfg.delta_ramp);
      s.lambda_adv *= cfg.adv_decay;
      s.soft_events += 1;
    }
    if (s.phase_iteration >= cfg.len_soft) {
      s.phase = cfg.len_hard > 0 ? Phase::HARD : Phase::DONE;
      s.phase_iteration = 0;
    }
  } else if (s.phase == Phase::HARD) {
    if (s.phase_iteration % cfg.t2 == 0 && s.zeroed_delta_count < cfg.n_layers - 1)
      s.zeroed_delta_count += 1;  // zeroing order is delta_{N-1} downward
    if (s.phase_iteration >= cfg.len_hard) {
      s.phase = Phase::DONE;
      s.phase_iteration = 0;
    }
  }
  return s;
}

// Offset gating derived from the schedule. active[i] refers to delta_{i+1};
// the top zeroed_delta_count offsets are frozen to zero.
struct DeltaMask {
  std::vector<bool> active;       // size N-1
  std::vector<bool> frozen_zero;  // size N-1

  int n_deltas() const { return static_cast<int>(active.size()); }

  bool enabled(int i) const { return active[i] && !frozen_zero[i]; }

  static DeltaMask none(int n_layers) {
    DeltaMask m;
    m.active.assign(n_layers - 1, false);
    m.frozen_zero.assign(n_layers - 1, false);
    return m;
  }

  static DeltaMask all(int n_layers) {
    DeltaMask m;
    m.active.assign(n_layers - 1, true);
    m.frozen_zero.assign(n_layers - 1, false);
    return m;
  }

  void validate() const {
    require(active.size() == frozen_zero.size(), "mask: size mismatch");
    for (size_t i = 0; i < active.size(); ++i)
      require(!(frozen_zero[i] && active[i]), "mask: frozen delta cannot be active");
  }
};

inline DeltaMask mask_of(const ScheduleState& state, const ScheduleConfig& cfg) {
  DeltaMask m = DeltaMask::none(cfg.n_layers);
  for (int i = 0; i < cfg.n_layers - 1; ++i) {
    bool frozen = i >= (cfg.n_layers - 1 - state.zeroed_delta_count);
    m.frozen_zero[i] = frozen;
    m.active[i] = i < state.active_delta_count && !frozen;
  }
  m.validate();
  return m;
}

// One CSV row per change of (phase, counts, lambdas); used for the golden
// replay trace and for ablation plots.
inline std::string schedule_trace_row(const ScheduleState& s) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%ld,%s,%d,%d,%.9g,%.9g", s.iteration,
                phase_name(s.phase), s.active_delta_count, s.zeroed_delta_count,
                s.lambda_delta, s.lambda_adv);
  return buf;
}

inline std::string schedule_trace(const ScheduleConfig& cfg) {
  std::string out = "iteration,phase,active,zeroed,lambda_delta,lambda_adv\n";
  ScheduleState s = initial_state(cfg);
  out += schedule_trace_row(s) + "\n";
  std::string last = schedule_trace_row(s);
  while (s.phase != Phase::DONE) {
    s = advance(s, cfg);
    std::string row = schedule_trace_row(s);
    // log only event rows (anything but the iteration counter changed)
    if (row.substr(row.find(',')) != last.substr(last.find(','))) out += row + "\n";
    last = row;
  }
  return out;
}

// Ablation presets. Every variant consumes the same total iteration count.
enum class TrainVariant { FullCycle, WOnly, WToWPlus, WPlusToW, HardOnly };

inline const char* variant_name(TrainVariant v) {
  switch (v) {
    case TrainVariant::FullCycle: return "full";
    case TrainVariant::WOnly: return "w";
    case TrainVariant::WToWPlus: return "w2wp";
    case TrainVariant::WPlusToW: return "wp2w";
    default: return "hard";
  }
}

inline TrainVariant variant_from_name(const std::string& name) {
  if (name == "full") return TrainVariant::FullCycle;
  if (name == "w") return TrainVariant::WOnly;
  if (name == "w2wp") return TrainVariant::WToWPlus;
  if (name == "wp2w") return TrainVariant::WPlusToW;
  if (name == "hard") return TrainVariant::HardOnly;
  throw std::runtime_error("unknown training variant: " + name);
}

inline ScheduleConfig variant_schedule(const ScheduleConfig& full, TrainVariant v) {
  ScheduleConfig cfg = full;
  long total = full.total();
  switch (v) {
    case TrainVariant::FullCycle:
      break;
    case TrainVariant::WOnly:
      // pure W throughout: one long W->W+ phase whose unlock cadence never fires
      cfg.len_w2wp = total;
      cfg.len_soft = 0;
      cfg.len_hard = 0;
      cfg.t0 = total + 1;
      break;
    case TrainVariant::WToWPlus:
      // unlock as in the full run, then stay in W+; offsets are never zeroed
      cfg.len_w2wp = total;
      cfg.len_soft = 0;
      cfg.len_hard = 0;
      break;
    case TrainVariant::WPlusToW:
      // start fully in W+, then soft and hard exactly as in the full run
      cfg.initial_active = full.n_layers - 1;
      cfg.len_w2wp = total - full.len_soft - full.len_hard;
      cfg.t0 = total + 1;
      break;
    case TrainVariant::HardOnly:
      // skip the soft ramp; the hard phase absorbs the soft budget
      cfg.len_soft = 0;
      cfg.soft_steps = 0;
      cfg.len_hard = full.len_soft + full.len_hard;
      break;
  }
  cfg.validate();
  require(cfg.total() == total, "variant_schedule: unequal total iterations");
  return cfg;
}

}  // namespace wcycle
