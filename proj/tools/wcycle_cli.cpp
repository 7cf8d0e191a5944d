// wcycle command-line interface: dataset generation, pretraining, encoder
// training, inversion, editing and the evaluation/ablation table emitters.

#include <CLI11.hpp>

#include <chrono>
#include <iostream>

#include "wcycle/config.hpp"
#include "wcycle/inverter.hpp"
#include "wcycle/manifest.hpp"
#include "wcycle/trainer.hpp"

using namespace wcycle;
using Clock = std::chrono::steady_clock;

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
};

void add_common(CLI::App* cmd, CommonOpts& o, bool need_out = true) {
  cmd->add_option("--config", o.config_path, "config file (ini)");
  cmd->add_option("--set", o.overrides, "override, e.g. --set train.lr=5e-4")->take_all();
  auto* out = cmd->add_option("--out", o.out_dir, "output directory");
  if (need_out) out->required();
}

CommandManifest base_manifest(const std::string& command, const RunConfig& cfg) {
  CommandManifest m;
  m.command = command;
  m.config = cfg.resolved();
  m.config_hash = cfg.hash();
  return m;
}

FactorDataset load_dataset_dir(const std::string& dir, int resolution) {
  auto man = CommandManifest::read(dir);
  require(man.command == "dataset gen", dir + " is not a dataset directory");
  uint64_t seed = man.metrics.at("seed").get<uint64_t>();
  require(man.metrics.at("renderer_version").get<std::string>() == kRendererVersion,
          "dataset " + dir + " was rendered by a different renderer version");
  return load_dataset_csv(dir + "/factors.csv", seed, resolution);
}

struct LoadedStack {
  PretrainedStack<float> stack;
  std::string hash;
};

LoadedStack load_stack(const std::string& dir, const RunConfig& cfg) {
  require(checkpoint_exists(dir + "/generator"),
          "pretrained checkpoints not found under " + dir +
              " (produce them with `wcycle train gen --out " + dir + " ...`)");
  return {PretrainedStack<float>::load(dir, cfg.generator),
          checkpoint_hash(dir + "/generator")};
}

struct LoadedEncoder {
  Encoder<float> encoder;
  DeltaMask terminal_mask;
  std::string variant;
  std::string hash;
};

LoadedEncoder load_encoder_dir(const std::string& dir, const RunConfig& cfg) {
  require(checkpoint_exists(dir + "/encoder"),
          "encoder checkpoint not found under " + dir +
              " (produce it with `wcycle train encoder --out " + dir + " ...`)");
  EncoderConfig ecfg;
  ecfg.d_w = cfg.generator.d_w;
  ecfg.n_layers = cfg.generator.n_layers();
  ecfg.img_res = cfg.generator.img_res;
  LoadedEncoder out{Encoder<float>(ecfg, 0), DeltaMask::none(ecfg.n_layers), "", ""};
  auto meta = load_checkpoint(dir + "/encoder", out.encoder.params());
  require(meta.extra.contains("terminal_active") && meta.extra.contains("terminal_zeroed"),
          "encoder checkpoint lacks terminal schedule state: " + dir);
  ScheduleState st;
  st.active_delta_count = meta.extra["terminal_active"].get<int>();
  st.zeroed_delta_count = meta.extra["terminal_zeroed"].get<int>();
  ScheduleConfig sc = cfg.schedule;
  sc.n_layers = ecfg.n_layers;
  out.terminal_mask = mask_of(st, sc);
  out.variant = meta.extra.value("variant", "full");
  out.hash = checkpoint_hash(dir + "/encoder");
  return out;
}

std::vector<Image> gather_images(const std::string& input_dir, int heldout_count,
                                 const std::string& data_dir, const RunConfig& cfg,
                                 std::vector<std::string>* names = nullptr) {
  if (!input_dir.empty()) {
    std::vector<std::string> paths;
    auto imgs = ingest_folder(input_dir, cfg.resolution, &paths);
    if (names)
      for (auto& p : paths)
        names->push_back(std::filesystem::path(p).stem().string());
    return imgs;
  }
  require(heldout_count > 0, "need --input DIR or --heldout N with --data");
  require(!data_dir.empty(), "--heldout needs --data pointing at a dataset directory");
  auto ds = load_dataset_dir(data_dir, cfg.resolution);
  const auto& hold = ds.holdout_indices();
  require(static_cast<size_t>(heldout_count) <= hold.size(),
          "--heldout exceeds the held-out split size");
  std::vector<Image> imgs;
  for (int i = 0; i < heldout_count; ++i) {
    imgs.push_back(ds.image(hold[i]));
    if (names) names->push_back("heldout_" + std::to_string(hold[i]));
  }
  return imgs;
}

// direction cache next to the pretrained checkpoints, keyed per generator
EditDirection cached_direction(const std::string& pre_dir, const LoadedStack& ls,
                               const RunConfig& cfg, const std::string& factor) {
  std::string path = pre_dir + "/directions.json";
  nlohmann::json cache;
  {
    std::ifstream f(path);
    if (f.good()) cache = nlohmann::json::parse(f);
  }
  std::string key = factor + ":" + std::to_string(cfg.direction_samples) + ":" +
                    std::to_string(cfg.seed);
  if (cache.contains("generator_hash") &&
      cache["generator_hash"].get<std::string>() == ls.hash && cache.contains(key)) {
    EditDirection dir;
    dir.name = factor;
    dir.v = cache[key].get<std::vector<double>>();
    dir.validate();
    return dir;
  }
  auto dir = find_direction(ls.stack.generator, ls.stack.regressor, factor,
                            cfg.direction_samples, cfg.seed);
  if (!cache.contains("generator_hash") ||
      cache["generator_hash"].get<std::string>() != ls.hash)
    cache = nlohmann::json::object();
  cache["generator_hash"] = ls.hash;
  cache[key] = dir.v;
  std::ofstream f(path);
  f << cache.dump(2) << "\n";
  return dir;
}

nlohmann::json code_to_json(const ExtendedStyleCode& code) {
  return {{"base", code.base.v}, {"deltas", code.deltas}};
}

struct MethodMetrics {
  std::string method;
  double identity = 0, lpips = 0, mse = 0, runtime_s = 0;
};

std::string metrics_csv(const std::vector<MethodMetrics>& rows) {
  std::string out = "method,identity,lpips,mse,runtime_s\n";
  char buf[200];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f,%.3f\n", r.method.c_str(), r.identity,
                  r.lpips, r.mse, r.runtime_s);
    out += buf;
  }
  return out;
}

double image_identity(const PretrainedStack<float>& stack, const Image& a, const Image& b) {
  auto ea = ops::l2_normalize_rows(stack.identity.embed(image_to_var<float>(a)));
  auto eb = ops::l2_normalize_rows(stack.identity.embed(image_to_var<float>(b)));
  return ops::rowwise_dot(ea, eb).val()[0];
}

double image_lpips(const PretrainedStack<float>& stack, const Image& a, const Image& b) {
  return perceptual_loss(stack.lpips, image_to_var<float>(a), image_to_var<float>(b)).item();
}

int run_dataset_gen(const CommonOpts& o, long n, long seed_flag, bool with_png) {
  auto cfg = resolve_config(o.config_path, o.overrides);
  if (n > 0) cfg.dataset_n = static_cast<size_t>(n);
  if (seed_flag >= 0) cfg.seed = static_cast<uint64_t>(seed_flag);
  auto ds = generate_dataset(cfg.dataset_n, cfg.seed, cfg.resolution);
  save_dataset(o.out_dir, ds, with_png);
  std::vector<Image> preview;
  for (size_t i = 0; i < std::min<size_t>(36, ds.size()); ++i) preview.push_back(ds.image(i));
  if (!preview.empty()) write_png(o.out_dir + "/preview.png", image_grid(preview, 6));

  auto man = base_manifest("dataset gen", cfg);
  man.metrics = {{"seed", cfg.seed},
                 {"n", ds.size()},
                 {"renderer_version", kRendererVersion},
                 {"train_size", ds.train_indices().size()},
                 {"holdout_size", ds.holdout_indices().size()}};
  man.add_output("factors.csv");
  if (!preview.empty()) man.add_output("preview.png");
  if (with_png) man.add_output("png");
  man.write(o.out_dir);
  std::cout << "dataset: " << ds.size() << " images, train " << ds.train_indices().size()
            << ", holdout " << ds.holdout_indices().size() << " -> " << o.out_dir << "\n";
  return 0;
}

int run_train_gen(const CommonOpts& o, const std::string& data_dir) {
  auto cfg = resolve_config(o.config_path, o.overrides);
  auto ds = load_dataset_dir(data_dir, cfg.resolution);
  auto t0 = Clock::now();
  auto stack = PretrainedStack<float>::build(ds, cfg.generator, cfg.pretrain);
  stack.save(o.out_dir, cfg.seed);
  double minutes = std::chrono::duration<double>(Clock::now() - t0).count() / 60;

  double valid = valid_sample_fraction(stack.generator, stack.regressor, 500, cfg.seed);
  double mae = stack.regressor.rotation_mae(ds, ds.holdout_indices());
  double mae_gate = 0.1 * stack.regressor.rotation_range();

  std::vector<Image> samples;
  Rng rng(cfg.seed);
  for (int i = 0; i < 36; ++i) {
    auto z = Var<float>::leaf({1, cfg.generator.d_z}, false);
    for (auto& v : z.val()) v = static_cast<float>(rng.normal());
    samples.push_back(var_to_image(stack.generator.synthesize_w(stack.generator.map(z))));
  }
  write_png(o.out_dir + "/samples.png", image_grid(samples, 6));

  auto man = base_manifest("train gen", cfg);
  man.inputs["dataset"] = CommandManifest::read(data_dir).config_hash;
  man.metrics = {{"valid_sample_fraction", valid},
                 {"rotation_mae", mae},
                 {"rotation_mae_gate", mae_gate},
                 {"train_minutes", minutes}};
  for (const char* d : {"generator", "lpips", "identity", "regressor"}) man.add_output(d);
  man.add_output("samples.png");
  man.write(o.out_dir);
  std::cout << "pretrained stack -> " << o.out_dir << "\n"
            << "  valid sample fraction: " << valid << " (gate 0.90)\n"
            << "  rotation MAE: " << mae << " rad (gate " << mae_gate << ")\n";
  if (valid < 0.90) std::cout << "  WARNING: sample-quality gate not met\n";
  if (mae > mae_gate) std::cout << "  WARNING: rotation MAE gate not met\n";
  return 0;
}

int run_train_encoder(const CommonOpts& o, const std::string& data_dir,
                      const std::string& pre_dir, const std::string& variant_name) {
  auto cfg = resolve_config(o.config_path, o.overrides);
  auto variant = variant_from_name(variant_name);
  auto ds = load_dataset_dir(data_dir, cfg.resolution);
  auto ls = load_stack(pre_dir, cfg);

  CycleTrainer<float> trainer(ls.stack.generator, ls.stack.lpips, ls.stack.identity, ds);
  auto run = cfg.train_run();
  run.schedule.n_layers = ls.stack.generator.n_layers();
  run.schedule = variant_schedule(run.schedule, variant);
  std::filesystem::create_directories(o.out_dir);
  run.log_path = o.out_dir + "/train_log.csv";
  auto t0 = Clock::now();
  auto res = trainer.train(run);
  double minutes = std::chrono::duration<double>(Clock::now() - t0).count() / 60;

  double heldout_mse =
      trainer.eval_recon_mse(res.encoder, ds.holdout_indices(), res.terminal_mask);

  CheckpointMeta enc_meta{.kind = "encoder", .seed = cfg.seed};
  enc_meta.parents = {ls.hash};
  enc_meta.extra = {{"variant", variant_name},
                    {"terminal_active", res.final_state.active_delta_count},
                    {"terminal_zeroed", res.final_state.zeroed_delta_count}};
  save_checkpoint(o.out_dir + "/encoder", res.encoder.params(), enc_meta);
  save_checkpoint(o.out_dir + "/latent_disc", res.disc.params(),
                  {.kind = "latent_disc", .seed = cfg.seed});

  auto man = base_manifest("train encoder", cfg);
  man.inputs["dataset"] = CommandManifest::read(data_dir).config_hash;
  man.inputs["pretrained"] = ls.hash;
  man.metrics = {{"variant", variant_name},
                 {"heldout_mse", heldout_mse},
                 {"iterations", res.final_state.iteration},
                 {"train_minutes", minutes}};
  man.add_output("encoder");
  man.add_output("latent_disc");
  man.add_output("train_log.csv");
  man.write(o.out_dir);
  std::cout << "encoder (" << variant_name << ") -> " << o.out_dir << "  heldout MSE "
            << heldout_mse << "\n";
  return 0;
}

int run_invert(const CommonOpts& o, const std::string& pre_dir, const std::string& enc_dir,
               const std::string& method_name, bool with_tuning, const std::string& input_dir,
               int heldout, const std::string& data_dir, bool save_tuned) {
  auto cfg = resolve_config(o.config_path, o.overrides);
  auto ls = load_stack(pre_dir, cfg);
  auto method = invert_method_from_name(method_name);

  InversionContext<float> ctx;
  ctx.stack = &ls.stack;
  ctx.cfg = cfg;
  std::optional<LoadedEncoder> enc;
  std::optional<FactorDataset> ds;
  if (method == InvertMethod::EncoderOnly || method == InvertMethod::Refine) {
    require(!enc_dir.empty(), "method '" + method_name + "' needs --enc");
    enc.emplace(load_encoder_dir(enc_dir, cfg));
    ctx.encoder = &enc->encoder;
    ctx.encoder_mask = enc->terminal_mask;
  }
  if (method == InvertMethod::Refine)
    require(!data_dir.empty(), "method 'refine' needs --data for regularization draws");
  if (!data_dir.empty()) {
    ds.emplace(load_dataset_dir(data_dir, cfg.resolution));
    ctx.dataset = &*ds;
  }

  std::vector<std::string> names;
  auto imgs = gather_images(input_dir, heldout, data_dir, cfg, &names);
  require(!imgs.empty(), "no input images");

  std::filesystem::create_directories(o.out_dir);
  nlohmann::json codes = nlohmann::json::array();
  std::vector<Image> sheet;
  std::string csv = "name,method,identity,lpips,mse,runtime_s\n";
  double total_mse = 0;
  for (size_t i = 0; i < imgs.size(); ++i) {
    auto out = invert_image(imgs[i], method, with_tuning, ctx, cfg.seed + i);
    const auto& gen_eff = out.effective_generator(ls.stack.generator);
    Image recon = gen_eff.synthesize_image(out.pivot);
    double mse = image_mse(recon, imgs[i]);
    total_mse += mse;
    char row[256];
    std::snprintf(row, sizeof(row), "%s,%s,%.6f,%.6f,%.6f,%.3f\n", names[i].c_str(),
                  method_name.c_str(), image_identity(ls.stack, imgs[i], recon),
                  image_lpips(ls.stack, imgs[i], recon), mse,
                  out.invert_seconds + out.tune_seconds);
    csv += row;
    nlohmann::json entry = code_to_json(out.pivot);
    entry["name"] = names[i];
    entry["source"] = out.source;
    codes.push_back(entry);
    if (sheet.size() < 32) {
      sheet.push_back(imgs[i]);
      sheet.push_back(recon);
    }
    if (save_tuned && out.tuned) {
      save_checkpoint(o.out_dir + "/tuned/" + names[i], out.tuned->params(),
                      {.kind = "generator", .seed = cfg.seed});
    }
  }
  std::ofstream(o.out_dir + "/metrics.csv") << csv;
  std::ofstream(o.out_dir + "/codes.json") << codes.dump(2) << "\n";
  write_png(o.out_dir + "/inversions.png", image_grid(sheet, 8));

  auto man = base_manifest("invert", cfg);
  man.inputs["pretrained"] = ls.hash;
  if (enc) man.inputs["encoder"] = enc->hash;
  man.metrics = {{"method", method_name},
                 {"tuned", with_tuning},
                 {"images", imgs.size()},
                 {"mean_mse", total_mse / imgs.size()}};
  man.add_output("metrics.csv");
  man.add_output("codes.json");
  man.add_output("inversions.png");
  if (save_tuned) man.add_output("tuned");
  man.write(o.out_dir);
  std::cout << "inverted " << imgs.size() << " images (" << method_name
            << (with_tuning ? "+tune" : "") << "), mean MSE " << total_mse / imgs.size()
            << " -> " << o.out_dir << "\n";
  return 0;
}

int run_edit(const CommonOpts& o, const std::string& pre_dir, const std::string& enc_dir,
             const std::string& method_name, bool with_tuning, const std::string& input_dir,
             int heldout, const std::string& data_dir, const std::string& factor,
             double alpha) {
  auto cfg = resolve_config(o.config_path, o.overrides);
  auto ls = load_stack(pre_dir, cfg);
  auto dir = cached_direction(pre_dir, ls, cfg, factor);
  auto method = invert_method_from_name(method_name);

  InversionContext<float> ctx;
  ctx.stack = &ls.stack;
  ctx.cfg = cfg;
  std::optional<LoadedEncoder> enc;
  std::optional<FactorDataset> ds;
  if (method == InvertMethod::EncoderOnly || method == InvertMethod::Refine) {
    require(!enc_dir.empty(), "method '" + method_name + "' needs --enc");
    enc.emplace(load_encoder_dir(enc_dir, cfg));
    ctx.encoder = &enc->encoder;
    ctx.encoder_mask = enc->terminal_mask;
  }
  if (!data_dir.empty()) {
    ds.emplace(load_dataset_dir(data_dir, cfg.resolution));
    ctx.dataset = &*ds;
  }

  std::vector<std::string> names;
  auto imgs = gather_images(input_dir, heldout, data_dir, cfg, &names);
  require(!imgs.empty(), "no input images");

  std::filesystem::create_directories(o.out_dir);
  std::vector<Image> sheet;
  nlohmann::json codes = nlohmann::json::array();
  for (size_t i = 0; i < imgs.size() && i < 8; ++i) {
    auto out = invert_image(imgs[i], method, with_tuning, ctx, cfg.seed + i);
    const auto& gen_eff = out.effective_generator(ls.stack.generator);
    sheet.push_back(imgs[i]);
    sheet.push_back(gen_eff.synthesize_image(out.pivot));
    for (double a : {-alpha, alpha * 0.5, alpha})
      sheet.push_back(gen_eff.synthesize_image(edit(out.pivot, dir, a)));
    nlohmann::json entry = code_to_json(edit(out.pivot, dir, alpha));
    entry["name"] = names[i];
    codes.push_back(entry);
  }
  write_png(o.out_dir + "/edits.png", image_grid(sheet, 5));
  std::ofstream(o.out_dir + "/edited_codes.json") << codes.dump(2) << "\n";

  auto man = base_manifest("edit", cfg);
  man.inputs["pretrained"] = ls.hash;
  if (enc) man.inputs["encoder"] = enc->hash;
  man.metrics = {{"factor", factor}, {"alpha", alpha}};
  man.add_output("edits.png");
  man.add_output("edited_codes.json");
  man.write(o.out_dir);
  std::cout << "edit sheet (" << factor << ", alpha " << alpha << ") -> " << o.out_dir
            << "/edits.png\n";
  return 0;
}

struct MethodSpec {
  std::string label;
  InvertMethod method;
  bool tuned;
};

std::vector<MethodSpec> parse_methods(const std::string& list) {
  std::vector<MethodSpec> out;
  size_t pos = 0;
  while (pos <= list.size()) {
    size_t comma = list.find(',', pos);
    if (comma == std::string::npos) comma = list.size();
    std::string item = list.substr(pos, comma - pos);
    pos = comma + 1;
    if (item.empty()) continue;
    bool tuned = false;
    std::string name = item;
    if (name.size() > 5 && name.substr(name.size() - 5) == "+tune") {
      tuned = true;
      name = name.substr(0, name.size() - 5);
    }
    out.push_back({item, invert_method_from_name(name), tuned});
  }
  require(!out.empty(), "no methods given");
  return out;
}

int run_eval_recon(const CommonOpts& o, const std::string& pre_dir, const std::string& enc_dir,
                   const std::string& methods_list, const std::string& input_dir, int heldout,
                   const std::string& data_dir) {
  auto cfg = resolve_config(o.config_path, o.overrides);
  auto ls = load_stack(pre_dir, cfg);
  auto methods = parse_methods(methods_list);

  InversionContext<float> ctx;
  ctx.stack = &ls.stack;
  ctx.cfg = cfg;
  std::optional<LoadedEncoder> enc;
  std::optional<FactorDataset> ds;
  if (!enc_dir.empty()) {
    enc.emplace(load_encoder_dir(enc_dir, cfg));
    ctx.encoder = &enc->encoder;
    ctx.encoder_mask = enc->terminal_mask;
  }
  if (!data_dir.empty()) {
    ds.emplace(load_dataset_dir(data_dir, cfg.resolution));
    ctx.dataset = &*ds;
  }
  auto imgs = gather_images(input_dir, heldout, data_dir, cfg);

  std::vector<MethodMetrics> rows;
  for (const auto& spec : methods) {
    MethodMetrics m;
    m.method = spec.label;
    auto t0 = Clock::now();
    for (size_t i = 0; i < imgs.size(); ++i) {
      auto out = invert_image(imgs[i], spec.method, spec.tuned, ctx, cfg.seed + i);
      Image recon = out.effective_generator(ls.stack.generator).synthesize_image(out.pivot);
      m.identity += image_identity(ls.stack, imgs[i], recon) / imgs.size();
      m.lpips += image_lpips(ls.stack, imgs[i], recon) / imgs.size();
      m.mse += image_mse(recon, imgs[i]) / imgs.size();
    }
    m.runtime_s = std::chrono::duration<double>(Clock::now() - t0).count() / imgs.size();
    rows.push_back(m);
    std::cout << "  " << m.method << ": identity " << m.identity << ", lpips " << m.lpips
              << ", mse " << m.mse << ", " << m.runtime_s << " s/img\n";
  }
  std::filesystem::create_directories(o.out_dir);
  std::ofstream(o.out_dir + "/metrics.csv") << metrics_csv(rows);

  auto man = base_manifest("eval recon", cfg);
  man.inputs["pretrained"] = ls.hash;
  if (enc) man.inputs["encoder"] = enc->hash;
  man.metrics = {{"images", imgs.size()}, {"methods", methods_list}};
  man.add_output("metrics.csv");
  man.write(o.out_dir);
  return 0;
}

int run_eval_edit(const CommonOpts& o, const std::string& pre_dir, const std::string& enc_dir,
                  const std::string& methods_list, int heldout, const std::string& data_dir,
                  const std::string& factor) {
  auto cfg = resolve_config(o.config_path, o.overrides);
  auto ls = load_stack(pre_dir, cfg);
  auto dir = cached_direction(pre_dir, ls, cfg, factor);
  auto methods = parse_methods(methods_list);
  std::vector<double> alphas = {1.0, cfg.edit_alpha, 2.0 * cfg.edit_alpha};
  std::vector<double> targets = {cfg.edit_target, 1.5 * cfg.edit_target};

  InversionContext<float> ctx;
  ctx.stack = &ls.stack;
  ctx.cfg = cfg;
  std::optional<LoadedEncoder> enc;
  std::optional<FactorDataset> ds;
  if (!enc_dir.empty()) {
    enc.emplace(load_encoder_dir(enc_dir, cfg));
    ctx.encoder = &enc->encoder;
    ctx.encoder_mask = enc->terminal_mask;
  }
  require(!data_dir.empty(), "eval edit needs --data");
  ds.emplace(load_dataset_dir(data_dir, cfg.resolution));
  ctx.dataset = &*ds;
  auto imgs = gather_images("", heldout, data_dir, cfg);

  double noise_floor = ls.stack.regressor.rotation_mae(*ds, ds->holdout_indices());

  std::string csv = "method";
  for (double a : alphas) csv += ",magnitude_alpha_" + std::to_string(a);
  for (double t : targets) csv += ",identity_at_" + std::to_string(t);
  csv += ",skipped,noise_floor\n";
  std::string md = "| method |";
  for (double a : alphas) md += " |dF| @ a=" + std::to_string(a).substr(0, 4) + " |";
  for (double t : targets) md += " id @ t=" + std::to_string(t).substr(0, 4) + " |";
  md += "\n";

  for (const auto& spec : methods) {
    // invert once per method, reuse across the metric grid
    std::vector<InversionOutput<float>> outs;
    std::vector<InvertedImage<float>> inverted;
    for (size_t i = 0; i < imgs.size(); ++i)
      outs.push_back(invert_image(imgs[i], spec.method, spec.tuned, ctx, cfg.seed + i));
    for (size_t i = 0; i < imgs.size(); ++i) {
      InvertedImage<float> inv;
      inv.input = imgs[i];
      inv.code = outs[i].pivot;
      inv.generator = &outs[i].effective_generator(ls.stack.generator);
      inverted.push_back(std::move(inv));
    }
    csv += spec.label;
    md += "| " + spec.label + " |";
    for (double a : alphas) {
      double mag = editing_magnitude(inverted, dir, a, ls.stack.regressor, factor);
      char buf[48];
      std::snprintf(buf, sizeof(buf), ",%.6f", mag);
      csv += buf;
      std::snprintf(buf, sizeof(buf), " %.4f |", mag);
      md += buf;
    }
    int skipped = 0;
    for (double t : targets) {
      auto res = identity_preservation(inverted, dir, t, ls.stack.identity,
                                       ls.stack.regressor, factor);
      skipped += res.skipped;
      char buf[48];
      std::snprintf(buf, sizeof(buf), ",%.6f", res.mean_similarity);
      csv += buf;
      std::snprintf(buf, sizeof(buf), " %.4f |", res.mean_similarity);
      md += buf;
    }
    char buf[64];
    std::snprintf(buf, sizeof(buf), ",%d,%.6f\n", skipped, noise_floor);
    csv += buf;
    md += "\n";
    std::cout << "  " << spec.label << " done\n";
  }
  std::filesystem::create_directories(o.out_dir);
  std::ofstream(o.out_dir + "/edit_metrics.csv") << csv;
  std::ofstream(o.out_dir + "/edit_metrics.md")
      << md << "\nregressor noise floor (rotation MAE): " << noise_floor << "\n";

  auto man = base_manifest("eval edit", cfg);
  man.inputs["pretrained"] = ls.hash;
  if (enc) man.inputs["encoder"] = enc->hash;
  man.metrics = {{"factor", factor}, {"noise_floor", noise_floor}};
  man.add_output("edit_metrics.csv");
  man.add_output("edit_metrics.md");
  man.write(o.out_dir);
  return 0;
}

int run_ablate(const CommonOpts& o, const std::string& which, const std::string& pre_dir,
               const std::string& data_dir, int heldout) {
  auto cfg = resolve_config(o.config_path, o.overrides);
  auto ls = load_stack(pre_dir, cfg);
  auto ds = load_dataset_dir(data_dir, cfg.resolution);
  auto dir = cached_direction(pre_dir, ls, cfg, cfg.edit_factor);
  std::filesystem::create_directories(o.out_dir);

  CycleTrainer<float> trainer(ls.stack.generator, ls.stack.lpips, ls.stack.identity, ds);
  auto run = cfg.train_run();
  run.schedule.n_layers = ls.stack.generator.n_layers();

  std::vector<Image> imgs;
  for (int i = 0; i < heldout; ++i) imgs.push_back(ds.image(ds.holdout_indices()[i]));

  InversionContext<float> ctx;
  ctx.stack = &ls.stack;
  ctx.cfg = cfg;
  ctx.dataset = &ds;

  auto eval_arm = [&](const std::string& label, const Encoder<float>* enc,
                      const DeltaMask& mask, InvertMethod method, bool tuned,
                      RefinementConfig* refine_override) {
    InversionContext<float> local = ctx;
    local.encoder = enc;
    local.encoder_mask = mask;
    if (refine_override) local.cfg.refine = *refine_override;
    std::vector<InversionOutput<float>> outs;
    std::vector<InvertedImage<float>> inverted;
    double id_sum = 0, mse_sum = 0;
    for (size_t i = 0; i < imgs.size(); ++i) {
      outs.push_back(invert_image(imgs[i], method, tuned, local, cfg.seed + i));
      Image recon =
          outs[i].effective_generator(ls.stack.generator).synthesize_image(outs[i].pivot);
      id_sum += image_identity(ls.stack, imgs[i], recon) / imgs.size();
      mse_sum += image_mse(recon, imgs[i]) / imgs.size();
    }
    for (size_t i = 0; i < imgs.size(); ++i) {
      InvertedImage<float> inv;
      inv.input = imgs[i];
      inv.code = outs[i].pivot;
      inv.generator = &outs[i].effective_generator(ls.stack.generator);
      inverted.push_back(std::move(inv));
    }
    double angle = editing_magnitude(inverted, dir, cfg.edit_alpha, ls.stack.regressor,
                                     cfg.edit_factor);
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f\n", label.c_str(), id_sum, mse_sum,
                  angle);
    std::cout << "  " << label << ": identity " << id_sum << ", mse " << mse_sum
              << ", magnitude " << angle << "\n";
    return std::string(buf);
  };

  std::string csv = "arm,identity,mse,magnitude\n";
  if (which == "cycle") {
    for (auto v : {TrainVariant::WOnly, TrainVariant::WToWPlus, TrainVariant::WPlusToW,
                   TrainVariant::FullCycle}) {
      auto res = trainer.train_variant(run, v);
      csv += eval_arm(variant_name(v), &res.encoder, res.terminal_mask,
                      InvertMethod::EncoderOnly, true, nullptr);
    }
  } else if (which == "soft-hard") {
    for (auto v : {TrainVariant::HardOnly, TrainVariant::FullCycle}) {
      auto res = trainer.train_variant(run, v);
      csv += eval_arm(v == TrainVariant::HardOnly ? "hard" : "soft_hard", &res.encoder,
                      res.terminal_mask, InvertMethod::EncoderOnly, true, nullptr);
    }
  } else if (which == "refine-reg") {
    auto res = trainer.train_variant(run, TrainVariant::FullCycle);
    csv += eval_arm("wo_optim", &res.encoder, res.terminal_mask, InvertMethod::EncoderOnly,
                    true, nullptr);
    auto no_reg = cfg.refine;
    no_reg.lambda_reg = 0;
    csv += eval_arm("wo_reg", &res.encoder, res.terminal_mask, InvertMethod::Refine, true,
                    &no_reg);
    csv += eval_arm("full", &res.encoder, res.terminal_mask, InvertMethod::Refine, true,
                    nullptr);
  } else if (which == "optim-space") {
    auto res = trainer.train_variant(run, TrainVariant::FullCycle);
    csv += eval_arm("wo_optim", &res.encoder, res.terminal_mask, InvertMethod::EncoderOnly,
                    true, nullptr);
    auto refine_w = cfg.refine;
    refine_w.space = LatentSpace::W;
    csv += eval_arm("optim_w", &res.encoder, res.terminal_mask, InvertMethod::Refine, true,
                    &refine_w);
    auto refine_wp = cfg.refine;
    refine_wp.space = LatentSpace::WPLUS;
    csv += eval_arm("optim_wplus", &res.encoder, res.terminal_mask, InvertMethod::Refine,
                    true, &refine_wp);
  } else {
    throw std::runtime_error("unknown ablation: " + which +
                             " (expected optim-space, soft-hard, cycle or refine-reg)");
  }
  std::ofstream(o.out_dir + "/ablation.csv") << csv;

  auto man = base_manifest("ablate " + which, cfg);
  man.inputs["pretrained"] = ls.hash;
  man.inputs["dataset"] = CommandManifest::read(data_dir).config_hash;
  man.metrics = {{"images", imgs.size()}};
  man.add_output("ablation.csv");
  man.write(o.out_dir);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cycle-encoding GAN inversion toolkit"};
  app.require_subcommand(1);

  auto* dataset = app.add_subcommand("dataset", "dataset commands")->require_subcommand(1);
  CommonOpts ds_opts;
  long ds_n = 0, ds_seed = -1;
  bool ds_png = false;
  auto* ds_gen = dataset->add_subcommand("gen", "generate the synthetic dataset");
  add_common(ds_gen, ds_opts);
  ds_gen->add_option("--n", ds_n, "image count (overrides config)");
  ds_gen->add_option("--seed", ds_seed, "seed (overrides config)");
  ds_gen->add_flag("--png", ds_png, "also dump every image as PNG");

  auto* train = app.add_subcommand("train", "training commands")->require_subcommand(1);
  CommonOpts tg_opts;
  std::string tg_data;
  auto* train_gen = train->add_subcommand("gen", "pretrain generator and helper networks");
  add_common(train_gen, tg_opts);
  train_gen->add_option("--data", tg_data, "dataset directory")->required();

  CommonOpts te_opts;
  std::string te_data, te_pre, te_variant = "full";
  auto* train_enc = train->add_subcommand("encoder", "train the encoder through a schedule");
  add_common(train_enc, te_opts);
  train_enc->add_option("--data", te_data, "dataset directory")->required();
  train_enc->add_option("--pre", te_pre, "pretrained stack directory")->required();
  train_enc->add_option("--variant", te_variant, "full|w|w2wp|wp2w|hard");

  CommonOpts inv_opts;
  std::string inv_pre, inv_enc, inv_method = "encoder", inv_input, inv_data;
  int inv_heldout = 0;
  bool inv_tune = false, inv_save_tuned = false;
  auto* invert_cmd = app.add_subcommand("invert", "invert images into pivot codes");
  add_common(invert_cmd, inv_opts);
  invert_cmd->add_option("--pre", inv_pre, "pretrained stack directory")->required();
  invert_cmd->add_option("--enc", inv_enc, "trained encoder directory");
  invert_cmd->add_option("--method", inv_method, "encoder|refine|optimize|optimize-wplus");
  invert_cmd->add_flag("--tune", inv_tune, "apply pivotal tuning");
  invert_cmd->add_flag("--save-tuned", inv_save_tuned, "persist tuned generators per image");
  invert_cmd->add_option("--input", inv_input, "folder of images to ingest");
  invert_cmd->add_option("--heldout", inv_heldout, "use the first K held-out images");
  invert_cmd->add_option("--data", inv_data, "dataset directory");

  CommonOpts ed_opts;
  std::string ed_pre, ed_enc, ed_method = "encoder", ed_input, ed_data, ed_factor = "rotation";
  int ed_heldout = 0;
  bool ed_tune = false;
  double ed_alpha = 4.0;
  auto* edit_cmd = app.add_subcommand("edit", "apply a linear latent edit");
  add_common(edit_cmd, ed_opts);
  edit_cmd->add_option("--pre", ed_pre, "pretrained stack directory")->required();
  edit_cmd->add_option("--enc", ed_enc, "trained encoder directory");
  edit_cmd->add_option("--method", ed_method, "encoder|refine|optimize|optimize-wplus");
  edit_cmd->add_flag("--tune", ed_tune, "apply pivotal tuning");
  edit_cmd->add_option("--direction", ed_factor, "factor name (rotation, hue, scale, x, y)");
  edit_cmd->add_option("--alpha", ed_alpha, "editing weight");
  edit_cmd->add_option("--input", ed_input, "folder of images to ingest");
  edit_cmd->add_option("--heldout", ed_heldout, "use the first K held-out images");
  edit_cmd->add_option("--data", ed_data, "dataset directory");

  auto* eval = app.add_subcommand("eval", "evaluation tables")->require_subcommand(1);
  CommonOpts er_opts;
  std::string er_pre, er_enc, er_methods = "encoder", er_input, er_data;
  int er_heldout = 0;
  auto* eval_recon = eval->add_subcommand("recon", "reconstruction metrics table");
  add_common(eval_recon, er_opts);
  eval_recon->add_option("--pre", er_pre, "pretrained stack directory")->required();
  eval_recon->add_option("--enc", er_enc, "trained encoder directory");
  eval_recon->add_option("--methods", er_methods,
                         "comma list, e.g. encoder,encoder+tune,optimize");
  eval_recon->add_option("--input", er_input, "folder of images to ingest");
  eval_recon->add_option("--heldout", er_heldout, "use the first K held-out images");
  eval_recon->add_option("--data", er_data, "dataset directory");

  CommonOpts ee_opts;
  std::string ee_pre, ee_enc, ee_methods = "encoder", ee_data, ee_factor = "rotation";
  int ee_heldout = 20;
  auto* eval_edit = eval->add_subcommand("edit", "editability metrics table");
  add_common(eval_edit, ee_opts);
  eval_edit->add_option("--pre", ee_pre, "pretrained stack directory")->required();
  eval_edit->add_option("--enc", ee_enc, "trained encoder directory");
  eval_edit->add_option("--methods", ee_methods, "comma list of methods");
  eval_edit->add_option("--heldout", ee_heldout, "use the first K held-out images");
  eval_edit->add_option("--data", ee_data, "dataset directory")->required();
  eval_edit->add_option("--factor", ee_factor, "factor name");

  CommonOpts ab_opts;
  std::string ab_which, ab_pre, ab_data;
  int ab_heldout = 20;
  auto* ablate = app.add_subcommand("ablate", "run an ablation arm comparison");
  add_common(ablate, ab_opts);
  ablate->add_option("which", ab_which, "optim-space|soft-hard|cycle|refine-reg")->required();
  ablate->add_option("--pre", ab_pre, "pretrained stack directory")->required();
  ablate->add_option("--data", ab_data, "dataset directory")->required();
  ablate->add_option("--heldout", ab_heldout, "evaluation image count");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*ds_gen) return run_dataset_gen(ds_opts, ds_n, ds_seed, ds_png);
    if (*train_gen) return run_train_gen(tg_opts, tg_data);
    if (*train_enc) return run_train_encoder(te_opts, te_data, te_pre, te_variant);
    if (*invert_cmd)
      return run_invert(inv_opts, inv_pre, inv_enc, inv_method, inv_tune, inv_input,
                        inv_heldout, inv_data, inv_save_tuned);
    if (*edit_cmd)
      return run_edit(ed_opts, ed_pre, ed_enc, ed_method, ed_tune, ed_input, ed_heldout,
                      ed_data, ed_factor, ed_alpha);
    if (*eval_recon)
      return run_eval_recon(er_opts, er_pre, er_enc, er_methods, er_input, er_heldout,
                            er_data);
    if (*eval_edit)
      return run_eval_edit(ee_opts, ee_pre, ee_enc, ee_methods, ee_heldout, ee_data,
                           ee_factor);
    if (*ablate) return run_ablate(ab_opts, ab_which, ab_pre, ab_data, ab_heldout);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
