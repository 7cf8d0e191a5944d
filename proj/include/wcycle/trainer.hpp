#pragma once

#include <fstream>

#include "wcycle/encoder.hpp"
#include "wcycle/pretrain.hpp"
#include "wcycle/schedule.hpp"

namespace wcycle {

struct TrainRunConfig {
  int batch = 8;
  double lr = 1e-4;  // both encoder and latent discriminator
  double beta1 = 0.9, beta2 = 0.999;
  uint64_t seed = 1;
  LossWeights weights;       // lambda_delta / lambda_adv come from the schedule
  ScheduleConfig schedule;
  long snapshot_every = 200;     // last-good cadence for the NaN abort path
  long log_every = 1;
  long stop_after = 0;           // pause after this absolute iteration (0 = run to the end)
  std::string checkpoint_dir;    // optional; enables last-good + resume saves
  std::string log_path;          // optional CSV stream

  void validate() const {
    require(batch >= 1, "train: batch size must be >= 1");
    require(lr > 0, "train: step size must be > 0");
    weights.validate();
    schedule.validate();
  }
};

struct TrainLogRow {
  long iter = 0;
  Phase phase = Phase::W_TO_WPLUS;
  int active = 0, zeroed = 0;
  double lambda_delta = 0, lambda_adv = 0;
  double l2 = 0, lpips = 0, id = 0, adv_enc = 0, delta = 0, total = 0, d_loss = 0;
};

inline std::string train_log_header() {
  return "iter,phase,active,zeroed,lambda_delta,lambda_adv,l2,lpips,id,adv,delta,total,d_loss";
}

inline std::string train_log_csv(const TrainLogRow& r) {
  char buf[320];
  std::snprintf(buf, sizeof(buf),
                "%ld,%s,%d,%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", r.iter,
                phase_name(r.phase), r.active, r.zeroed, r.lambda_delta, r.lambda_adv, r.l2,
                r.lpips, r.id, r.adv_enc, r.delta, r.total, r.d_loss);
  return buf;
}

template <typename T>
struct TrainResult {
  Encoder<T> encoder;
  LatentDiscriminator<T> disc;
  std::vector<TrainLogRow> log;
  ScheduleState final_state;
  DeltaMask terminal_mask;

  TrainResult(Encoder<T> e, LatentDiscriminator<T> d)
      : encoder(std::move(e)), disc(std::move(d)), terminal_mask(DeltaMask::none(2)) {}
};

// Drives encoder and latent-discriminator training under the space schedule,
// against a frozen pretrained generator and frozen loss surrogates.
template <typename T>
class CycleTrainer {
 public:
  CycleTrainer(Generator<T>& gen, const PerceptualNet<T>& lpips,
               const IdentityEmbedder<T>& identity, const FactorDataset& ds)
      : gen_(gen), lpips_(lpips), identity_(identity), ds_(ds) {}

  EncoderConfig encoder_config() const {
    EncoderConfig cfg;
    cfg.d_w = gen_.config().d_w;
    cfg.n_layers = gen_.n_layers();
    cfg.img_res = gen_.config().img_res;
    cfg.img_channels = gen_.config().img_channels;
    return cfg;
  }

  TrainResult<T> train(const TrainRunConfig& cfg, const std::string& resume_from = "") {
    cfg.validate();
    require(cfg.schedule.n_layers == gen_.n_layers(),
            "train: schedule n_layers (" + std::to_string(cfg.schedule.n_layers) +
                ") does not match the generator (" + std::to_string(gen_.n_layers()) + ")");
    gen_.freeze();
    uint64_t gen_checksum = gen_.params().checksum();

    TrainResult<T> result(Encoder<T>(encoder_config(), cfg.seed),
                          LatentDiscriminator<T>(gen_.config().d_w, cfg.seed));
    auto& enc = result.encoder;
    auto& disc = result.disc;
    Adam<T> opt_e(enc.params(), cfg.lr, cfg.beta1, cfg.beta2);
    Adam<T> opt_d(disc.params(), cfg.lr, cfg.beta1, cfg.beta2);
    Rng rng_batch = Rng(cfg.seed).fork(0xba7c);
    Rng rng_z = Rng(cfg.seed).fork(0x5a);
    ScheduleState state = initial_state(cfg.schedule);

    if (!resume_from.empty())
      load_train_state(resume_from, enc, disc, opt_e, opt_d, rng_batch, rng_z, state);

    std::ofstream log_file;
    if (!cfg.log_path.empty()) {
      log_file.open(cfg.log_path, state.iteration > 0 ? std::ios::app : std::ios::out);
      require(log_file.good(), "train: cannot open log " + cfg.log_path);
      if (state.iteration == 0) log_file << train_log_header() << "\n";
    }

    // last-good snapshot for the NaN abort path
    Encoder<T> last_good = enc.clone();
    long last_good_iter = state.iteration;
    int dz = gen_.config().d_z;
    long total_iters = cfg.schedule.total();
    if (cfg.stop_after > 0) total_iters = std::min(total_iters, cfg.stop_after);

    while (state.iteration < total_iters) {
      DeltaMask mask = mask_of(state, cfg.schedule);
      auto idx = ds_.sample_train(rng_batch, cfg.batch);
      auto x = images_to_var<T>(ds_.batch(idx));
      auto code = enc.encode(x, mask);
      auto rows = code.rows();
      auto recon = gen_.synthesize(rows);

      auto l2 = l2_loss(recon, x);
      auto lp = perceptual_loss(lpips_, recon, x);
      auto idl = identity_loss(identity_, recon, x);
      auto adv = adv_encoder_loss(disc, rows);
      auto dl = delta_loss(code);
      Var<T> total = ops::scale(l2, static_cast<T>(cfg.weights.l2));
      total = ops::add(total, ops::scale(lp, static_cast<T>(cfg.weights.lpips)));
      total = ops::add(total, ops::scale(idl, static_cast<T>(cfg.weights.id)));
      total = ops::add(total, ops::scale(adv, static_cast<T>(state.lambda_adv)));
      total = ops::add(total, ops::scale(dl, static_cast<T>(state.lambda_delta)));

      if (!std::isfinite(double(total.item()))) {
        abort_with_last_good(cfg, last_good, last_good_iter, state.iteration);
      }
      enc.params().zero_grad();
      disc.params().zero_grad();
      backward(total);
      opt_e.step();

      // discriminator step on real map(z) rows vs detached encoder rows
      auto z = Var<T>::leaf({cfg.batch, dz}, false);
      for (auto& v : z.val()) v = static_cast<T>(rng_z.normal());
      auto real_w = ops::detach(gen_.map(z));
      std::vector<Var<T>> fake_rows;
      fake_rows.reserve(rows.size());
      for (const auto& r : rows) fake_rows.push_back(ops::detach(r));
      auto d_loss = adv_discriminator_loss(disc, real_w, fake_rows);
      disc.params().zero_grad();
      backward(d_loss);
      opt_d.step();
      enc.params().zero_grad();
      disc.params().zero_grad();

      if (state.iteration % cfg.log_every == 0) {
        TrainLogRow row;
        row.iter = state.iteration;
        row.phase = state.phase;
        row.active = state.active_delta_count;
        row.zeroed = state.zeroed_delta_count;
        row.lambda_delta = state.lambda_delta;
        row.lambda_adv = state.lambda_adv;
        row.l2 = l2.item();
        row.lpips = lp.item();
        row.id = idl.item();
        row.adv_enc = adv.item();
        row.delta = dl.item();
        row.total = total.item();
        row.d_loss = d_loss.item();
        result.log.push_back(row);
        if (log_file.is_open()) log_file << train_log_csv(row) << "\n";
      }
      if (cfg.snapshot_every > 0 && (state.iteration + 1) % cfg.snapshot_every == 0) {
        last_good.params().copy_values_from(enc.params());
        last_good_iter = state.iteration + 1;
      }
      state = advance(state, cfg.schedule);
    }

    require(gen_.params().checksum() == gen_checksum,
            "train: generator parameters changed during encoder training");
    result.final_state = state;
    result.terminal_mask = mask_of(state, cfg.schedule);
    if (!cfg.checkpoint_dir.empty())
      save_train_state(cfg.checkpoint_dir, enc, disc, opt_e, opt_d, rng_batch, rng_z, state,
                       cfg);
    return result;
  }

  TrainResult<T> train_variant(const TrainRunConfig& base, TrainVariant variant) {
    TrainRunConfig cfg = base;
    cfg.schedule = variant_schedule(base.schedule, variant);
    return train(cfg);
  }

  // mean reconstruction MSE over the given dataset rows under a fixed mask
  double eval_recon_mse(const Encoder<T>& enc, const std::vector<size_t>& indices,
                        const DeltaMask& mask, int batch = 16) {
    require(!indices.empty(), "eval_recon_mse: no indices");
    double acc = 0;
    size_t done = 0;
    while (done < indices.size()) {
      size_t n = std::min<size_t>(batch, indices.size() - done);
      std::vector<size_t> chunk(indices.begin() + done, indices.begin() + done + n);
      auto x = images_to_var<T>(ds_.batch(chunk));
      auto recon = gen_.synthesize(enc.encode(x, mask).rows());
      acc += l2_loss(recon, x).item() * n;
      done += n;
    }
    return acc / indices.size();
  }

  // training-state checkpoint: encoder, discriminator, both optimizers, the
  // schedule position and the rng streams; resuming continues bit-for-bit
  static void save_train_state(const std::string& dir, const Encoder<T>& enc,
                               const LatentDiscriminator<T>& disc, Adam<T>& opt_e,
                               Adam<T>& opt_d, const Rng& rng_batch, const Rng& rng_z,
                               const ScheduleState& state, const TrainRunConfig& cfg) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    save_checkpoint(dir + "/encoder", enc.params(), {.kind = "encoder", .seed = cfg.seed});
    save_checkpoint(dir + "/latent_disc", disc.params(),
                    {.kind = "latent_disc", .seed = cfg.seed});
    save_adam(dir + "/adam_encoder", opt_e, enc.params());
    save_adam(dir + "/adam_disc", opt_d, disc.params());
    nlohmann::json j;
    j["iteration"] = state.iteration;
    j["phase"] = static_cast<int>(state.phase);
    j["phase_iteration"] = state.phase_iteration;
    j["active"] = state.active_delta_count;
    j["zeroed"] = state.zeroed_delta_count;
    j["soft_events"] = state.soft_events;
    j["lambda_delta"] = state.lambda_delta;
    j["lambda_adv"] = state.lambda_adv;
    j["rng_batch"] = rng_batch.save_state();
    j["rng_z"] = rng_z.save_state();
    std::ofstream f(dir + "/train_state.json");
    require(f.good(), "train: cannot write state to " + dir);
    f << j.dump(2) << "\n";
  }

  static void load_train_state(const std::string& dir, Encoder<T>& enc,
                               LatentDiscriminator<T>& disc, Adam<T>& opt_e, Adam<T>& opt_d,
                               Rng& rng_batch, Rng& rng_z, ScheduleState& state) {
    std::ifstream f(dir + "/train_state.json");
    require(f.good(), "train: no resumable state at " + dir);
    nlohmann::json j = nlohmann::json::parse(f);
    load_checkpoint(dir + "/encoder", enc.params());
    load_checkpoint(dir + "/latent_disc", disc.params());
    load_adam(dir + "/adam_encoder", opt_e, enc.params());
    load_adam(dir + "/adam_disc", opt_d, disc.params());
    state.iteration = j["iteration"];
    state.phase = static_cast<Phase>(j["phase"].get<int>());
    state.phase_iteration = j["phase_iteration"];
    state.active_delta_count = j["active"];
    state.zeroed_delta_count = j["zeroed"];
    state.soft_events = j["soft_events"];
    state.lambda_delta = j["lambda_delta"];
    state.lambda_adv = j["lambda_adv"];
    rng_batch.load_state(j["rng_batch"]);
    rng_z.load_state(j["rng_z"]);
  }

 private:
  [[noreturn]] void abort_with_last_good(const TrainRunConfig& cfg, const Encoder<T>& last_good,
                                         long last_good_iter, long at_iter) {
    std::string where;
    if (!cfg.checkpoint_dir.empty()) {
      where = cfg.checkpoint_dir + "/last_good";
      save_checkpoint(where, last_good.params(),
                      {.kind = "encoder",
                       .seed = cfg.seed,
                       .extra = {{"iteration", last_good_iter}}});
    }
    throw std::runtime_error(
        "train: loss diverged (NaN) at iteration " + std::to_string(at_iter) +
        (where.empty() ? std::string(" (no checkpoint dir configured)")
                       : "; last-good checkpoint written to " + where));
  }

  static void save_adam(const std::string& dir, Adam<T>& opt, const ParamStore<T>& params) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::vector<float> m, v;
    for (size_t i = 0; i < params.size(); ++i) {
      m.insert(m.end(), opt.moment1(i).begin(), opt.moment1(i).end());
      v.insert(v.end(), opt.moment2(i).begin(), opt.moment2(i).end());
    }
    detail::write_blob(dir + "/m1.bin", m);
    detail::write_blob(dir + "/m2.bin", v);
    std::ofstream f(dir + "/meta.json");
    f << nlohmann::json{{"t", opt.steps_taken()}}.dump() << "\n";
  }

  static void load_adam(const std::string& dir, Adam<T>& opt, const ParamStore<T>& params) {
    size_t total = static_cast<size_t>(params.total_values());
    auto m = detail::read_blob(dir + "/m1.bin", total);
    auto v = detail::read_blob(dir + "/m2.bin", total);
    size_t at = 0;
    for (size_t i = 0; i < params.size(); ++i) {
      auto& m1 = opt.moment1(i);
      auto& m2 = opt.moment2(i);
      for (size_t j = 0; j < m1.size(); ++j, ++at) {
        m1[j] = static_cast<T>(m[at]);
        m2[j] = static_cast<T>(v[at]);
      }
    }
    std::ifstream f(dir + "/meta.json");
    require(f.good(), "train: missing optimizer meta at " + dir);
    nlohmann::json j = nlohmann::json::parse(f);
    opt.set_steps_taken(j["t"]);
  }

  Generator<T>& gen_;
  const PerceptualNet<T>& lpips_;
  const IdentityEmbedder<T>& identity_;
  const FactorDataset& ds_;
};

}  // namespace wcycle
