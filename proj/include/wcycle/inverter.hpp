#pragma once

#include <chrono>
#include <optional>

#include "wcycle/config.hpp"
#include "wcycle/editing.hpp"
#include "wcycle/pretrain.hpp"
#include "wcycle/refine.hpp"
#include "wcycle/tuning.hpp"

namespace wcycle {

// Pipeline variants behind one call: encoder inversion, refined encoder
// inversion, and the two optimization baselines, each optionally followed
// by pivotal tuning.

enum class InvertMethod { EncoderOnly, Refine, Optimize, OptimizeWplus };

inline InvertMethod invert_method_from_name(const std::string& s) {
  if (s == "encoder") return InvertMethod::EncoderOnly;
  if (s == "refine") return InvertMethod::Refine;
  if (s == "optimize") return InvertMethod::Optimize;
  if (s == "optimize-wplus") return InvertMethod::OptimizeWplus;
  throw std::runtime_error("unknown inversion method: " + s);
}

inline const char* invert_method_name(InvertMethod m) {
  switch (m) {
    case InvertMethod::EncoderOnly: return "encoder";
    case InvertMethod::Refine: return "refine";
    case InvertMethod::Optimize: return "optimize";
    default: return "optimize-wplus";
  }
}

template <typename T>
struct InversionContext {
  const PretrainedStack<T>* stack = nullptr;
  const Encoder<T>* encoder = nullptr;      // required by encoder/refine methods
  DeltaMask encoder_mask = DeltaMask::none(2);  // the trained variant's terminal mask
  const FactorDataset* dataset = nullptr;   // required by the refine method
  RunConfig cfg;
};

template <typename T>
struct InversionOutput {
  ExtendedStyleCode pivot;
  std::string source;
  std::optional<Generator<T>> tuned;
  double invert_seconds = 0;
  double tune_seconds = 0;

  const Generator<T>& effective_generator(const Generator<T>& base) const {
    return tuned ? *tuned : base;
  }
};

template <typename T>
InversionOutput<T> invert_image(const Image& x, InvertMethod method, bool with_tuning,
                                const InversionContext<T>& ctx, uint64_t seed) {
  require(ctx.stack != nullptr, "invert: missing pretrained stack");
  using Clock = std::chrono::steady_clock;
  const auto& stack = *ctx.stack;
  InversionOutput<T> out;
  auto t0 = Clock::now();
  switch (method) {
    case InvertMethod::EncoderOnly: {
      require(ctx.encoder != nullptr, "invert: method 'encoder' needs a trained encoder");
      out.pivot = ctx.encoder->encode_image(x, ctx.encoder_mask);
      out.source = "encoder";
      break;
    }
    case InvertMethod::Refine: {
      require(ctx.encoder != nullptr, "invert: method 'refine' needs a trained encoder");
      require(ctx.dataset != nullptr, "invert: method 'refine' needs the training dataset");
      auto rc = ctx.cfg.refine;
      rc.seed = splitmix64(rc.seed ^ seed);
      auto res = refine(x, *ctx.encoder, stack.generator, stack.lpips, stack.identity,
                        *ctx.dataset, rc);
      out.pivot = std::move(res.pivot);
      out.source = "refined";
      break;
    }
    case InvertMethod::Optimize:
    case InvertMethod::OptimizeWplus: {
      auto pc = ctx.cfg.optimize;
      pc.space = method == InvertMethod::Optimize ? LatentSpace::W : LatentSpace::WPLUS;
      pc.seed = splitmix64(pc.seed ^ seed);
      auto res = optimize_latent(stack.generator, stack.lpips, stack.w_center, x, pc);
      out.pivot = std::move(res.code);
      out.source = "optimized";
      break;
    }
  }
  out.invert_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  if (with_tuning) {
    auto t1 = Clock::now();
    auto res = tune(x, out.pivot, out.source, stack.generator, stack.lpips, ctx.cfg.tune);
    out.tuned.emplace(std::move(res.tuned));
    out.tune_seconds = std::chrono::duration<double>(Clock::now() - t1).count();
  }
  return out;
}

}  // namespace wcycle
