#include "fuselab/cli.hpp"

#include <iostream>

#include <CLI11.hpp>

#include "fuselab/binio.hpp"
#include "fuselab/config.hpp"
#include "fuselab/errors.hpp"
#include "fuselab/rng.hpp"

#ifndef FUSELAB_VERSION
#define FUSELAB_VERSION "dev"
#endif

namespace fuselab {

namespace fs = std::filesystem;
using oj = nlohmann::ordered_json;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
};

ExperimentConfig load_config(const Common &c) {
  ExperimentConfig cfg = c.config_path.empty() ? parse_config("{}") : parse_config(binio::read_text(c.config_path));
  apply_seed_override(cfg, c.seed);
  cfg.master_seed();
  return cfg;
}

void write_sidecar(const fs::path &path, const std::string &command, const ExperimentConfig &cfg, oj extra = {}) {
  oj j;
  j["tool"] = "fuselab";
  j["version"] = FUSELAB_VERSION;
  j["command"] = command;
  j["seed"] = cfg.master_seed();
  j["config"] = config_to_json(cfg);
  if (!extra.is_null())
    j["inputs"] = std::move(extra);
  binio::write_text(path, j.dump(2) + "\n");
}

void ensure_dir(const fs::path &dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec)
    throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

Model load_model(const fs::path &ckpt, FusionMode mode, const ExperimentConfig &cfg) {
  Model m;
  m.config = cfg.detector();
  m.config.mode = mode;
  m.params = load_checkpoint(ckpt);
  check_params(m.config, m.params);
  return m;
}

Dataset load_split(const fs::path &data, const std::string &split, const ExperimentConfig &cfg) {
  Dataset d = load_dataset(data / split);
  if (!(d.intrinsics() == cfg.intrinsics))
    throw ConfigError("dataset " + (data / split).string() + " has different camera intrinsics from the config");
  return d;
}

oj ap_json(const APResult &r) {
  oj j;
  j["map"] = r.map;
  for (int k = 0; k < kNumClasses; ++k) {
    const auto &ap = r.ap[static_cast<std::size_t>(k)];
    j[std::string("ap_") + std::string(class_name(static_cast<ObjectClass>(k)))] = ap ? oj(*ap) : oj(nullptr);
  }
  return j;
}

std::vector<float> parse_budgets(const std::string &s) {
  std::vector<float> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t pos = 0;
      out.push_back(std::stof(item, &pos));
      if (pos != item.size())
        throw std::invalid_argument(item);
    } catch (const std::exception &) {
      throw ConfigError("--budgets: '" + item + "' is not a number");
    }
  }
  if (out.empty())
    throw ConfigError("--budgets is empty");
  return out;
}

int cmd_gen_data(const Common &c, const fs::path &out_dir, std::optional<int> count, std::optional<int> val_count,
                 std::ostream &out) {
  ExperimentConfig cfg = load_config(c);
  if (count)
    cfg.train_count = *count;
  if (val_count)
    cfg.val_count = *val_count;
  if (cfg.train_count < 0 || cfg.val_count < 0)
    throw ConfigError("scene counts must be >= 0");
  const std::uint64_t seed = cfg.master_seed();
  ensure_dir(out_dir);
  const auto tr = generate_dataset(cfg.scene_spec, cfg.intrinsics, cfg.train_count, seed, out_dir / "train", "train");
  generate_dataset(cfg.scene_spec, cfg.intrinsics, cfg.val_count, val_split_seed(seed), out_dir / "val", "val",
                   tr.stats);
  write_sidecar(out_dir / "sidecar.json", "gen-data", cfg);
  out << "wrote " << cfg.train_count << " train and " << cfg.val_count << " val scenes to " << out_dir.string()
      << "\n";
  return kExitOk;
}

int cmd_train(const Common &c, const fs::path &data, const fs::path &out_dir, const std::string &fusion,
              const std::string &variant, std::optional<int> epochs, std::ostream &out) {
  ExperimentConfig cfg = load_config(c);
  if (!fusion.empty())
    cfg.fusion = fusion_from_name(fusion);
  if (!variant.empty())
    cfg.train.variant = at_variant_from_name(variant);
  if (epochs)
    cfg.train.epochs = *epochs;
  cfg.train.seed = cfg.master_seed();
  cfg.train.validate(cfg.fusion);

  const Dataset train_data = load_split(data, "train", cfg);
  const Dataset val = load_split(data, "val", cfg);
  ensure_dir(out_dir);
  TrainReport report;
  out << "epoch,loss_total,loss_obj,loss_cls,loss_reg,lr\n";
  const Model model = train(cfg.detector(), train_data, cfg.train, report, val.size() ? &val : nullptr,
                            [&](const EpochStats &e, const Model &) {
                              out << e.epoch << "," << format_number(e.loss_total) << "," << format_number(e.loss_obj)
                                  << "," << format_number(e.loss_cls) << "," << format_number(e.loss_reg) << ","
                                  << format_number(e.lr) << "\n"
                                  << std::flush;
                            });
  save_checkpoint(model.params, out_dir / "model.ckpt");
  binio::write_text(out_dir / "report.json", report_to_json(report));
  write_sidecar(out_dir / "sidecar.json", "train", cfg, oj{{"data", data.string()}});
  if (report.val_map)
    out << "val_map," << format_number(*report.val_map) << "\n";
  return kExitOk;
}

int cmd_attack(const Common &c, const fs::path &data, const fs::path &ckpt, const std::string &fusion,
               const fs::path &out_dir, std::ostream &out) {
  ExperimentConfig cfg = load_config(c);
  if (!fusion.empty())
    cfg.fusion = fusion_from_name(fusion);
  const Model model = load_model(ckpt, cfg.fusion, cfg);
  const Dataset d = load_split(data, cfg.split, cfg);
  AttackSpec spec = cfg.attack;
  spec.seed = cfg.master_seed();
  write_perturbations(model, d, spec, out_dir, cfg.eval.jobs);
  const auto clean = evaluate_map(model, d, PerturbationSource::clean(), cfg.eval);
  const auto attacked = evaluate_map(model, d, PerturbationSource::stored(out_dir), cfg.eval);
  oj res{{"clean", ap_json(clean.ap)}, {"attacked", ap_json(attacked.ap)}};
  write_sidecar(out_dir / "sidecar.json", "attack", cfg,
                oj{{"data", data.string()}, {"checkpoint", ckpt.string()}, {"result", res}});
  out << res.dump(2) << "\n";
  return kExitOk;
}

int cmd_eval(const Common &c, const fs::path &data, const fs::path &ckpt, const std::string &fusion,
             const std::string &perts, bool white_box, const std::string &out_path, std::ostream &out) {
  ExperimentConfig cfg = load_config(c);
  if (!fusion.empty())
    cfg.fusion = fusion_from_name(fusion);
  if (!perts.empty() && white_box)
    throw ConfigError("--perturbations and --white-box are mutually exclusive");
  const Model model = load_model(ckpt, cfg.fusion, cfg);
  const Dataset d = load_split(data, cfg.split, cfg);
  AttackSpec spec = cfg.attack;
  spec.seed = cfg.master_seed();
  const PerturbationSource src = !perts.empty() ? PerturbationSource::stored(perts)
                                 : white_box    ? PerturbationSource::white_box(spec)
                                                : PerturbationSource::clean();
  const auto r = evaluate_map(model, d, src, cfg.eval);
  const oj res = ap_json(r.ap);
  out << res.dump(2) << "\n";
  if (!out_path.empty()) {
    binio::write_text(out_path, res.dump(2) + "\n");
    write_sidecar(out_path + ".sidecar.json", "eval", cfg,
                  oj{{"data", data.string()},
                     {"checkpoint", ckpt.string()},
                     {"perturbations", perts},
                     {"white_box", white_box}});
  }
  return kExitOk;
}

int cmd_curve(const Common &c, const fs::path &data, const fs::path &ckpt, const std::string &fusion,
              const std::string &family, const std::string &budgets, std::optional<int> jobs,
              const std::string &out_csv, std::ostream &out) {
  ExperimentConfig cfg = load_config(c);
  if (!fusion.empty())
    cfg.fusion = fusion_from_name(fusion);
  if (!family.empty())
    cfg.family = family_from_name(family);
  if (!budgets.empty())
    cfg.budgets = parse_budgets(budgets);
  if (jobs)
    cfg.eval.jobs = *jobs;
  const Model model = load_model(ckpt, cfg.fusion, cfg);
  const Dataset d = load_split(data, cfg.split, cfg);
  const auto curve = robustness_curve(model, d, cfg.family, cfg.resolved_budgets(), cfg.master_seed(), cfg.eval);
  const std::string csv = curve_csv(curve);
  binio::write_text(out_csv, csv);
  write_sidecar(out_csv + ".json", "curve", cfg,
                oj{{"data", data.string()}, {"checkpoint", ckpt.string()}, {"fusion", fusion_name(cfg.fusion)}});
  out << csv;
  return kExitOk;
}

int cmd_transfer(const Common &c, const fs::path &data, const fs::path &src_ckpt, const std::string &src_fusion,
                 const fs::path &dst_ckpt, const std::string &dst_fusion, const std::string &family,
                 const std::string &budgets, const std::string &out_csv, std::ostream &out) {
  ExperimentConfig cfg = load_config(c);
  if (!family.empty())
    cfg.family = family_from_name(family);
  if (!budgets.empty())
    cfg.budgets = parse_budgets(budgets);
  const Model source = load_model(src_ckpt, fusion_from_name(src_fusion), cfg);
  const Model target = load_model(dst_ckpt, fusion_from_name(dst_fusion), cfg);
  const Dataset d = load_split(data, cfg.split, cfg);
  const auto b = cfg.resolved_budgets();
  std::string csv = "budget,transfer_map,whitebox_map\n";
  for (std::size_t i = 0; i < b.size(); ++i) {
    const AttackSpec spec = family_spec(cfg.family, b[i], split_mix(cfg.master_seed(), i));
    const auto t = evaluate_map(target, d, PerturbationSource::transfer(source, spec), cfg.eval);
    const auto w = evaluate_map(target, d, PerturbationSource::white_box(spec), cfg.eval);
    csv += format_number(b[i]) + "," + format_number(t.ap.map) + "," + format_number(w.ap.map) + "\n";
  }
  binio::write_text(out_csv, csv);
  write_sidecar(out_csv + ".json", "transfer", cfg,
                oj{{"data", data.string()},
                   {"source", {{"checkpoint", src_ckpt.string()}, {"fusion", src_fusion}}},
                   {"target", {{"checkpoint", dst_ckpt.string()}, {"fusion", dst_fusion}}}});
  out << csv;
  return kExitOk;
}

} // namespace

int run_cli(int argc, const char *const *argv, std::ostream &out, std::ostream &err) {
  CLI::App app{"fuselab: adversarial robustness experiments for camera+LiDAR fusion detectors", "fuselab"};
  app.set_version_flag("--version", FUSELAB_VERSION);
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App *s) {
    s->add_option("--config", common.config_path, "experiment JSON");
    s->add_option("--seed", common.seed, "master seed (overrides FUSELAB_SEED and the config)");
  };

  std::string out_dir, data, ckpt, fusion, variant, family, budgets, perts, out_path, src_ckpt, src_fusion,
      dst_ckpt, dst_fusion;
  std::optional<int> count, val_count, epochs, jobs;
  bool white_box = false;
  const std::vector<std::string> fusions{"rgb", "depth", "early", "late"};
  const std::vector<std::string> variants{"none",     "at-image", "at-car",      "at-lidar",
                                          "at-lidar-car", "at-joint", "at-joint-car"};
  const std::vector<std::string> families{"full-image", "car-image", "full-lidar", "car-lidar"};

  auto *gen = app.add_subcommand("gen-data", "generate train/val synthetic datasets");
  add_common(gen);
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--count", count, "training scene count");
  gen->add_option("--val-count", val_count, "validation scene count");

  auto *tr = app.add_subcommand("train", "train a detector, clean or adversarially");
  add_common(tr);
  tr->add_option("--data", data, "gen-data output directory")->required();
  tr->add_option("--out", out_dir, "output directory")->required();
  tr->add_option("--fusion", fusion)->check(CLI::IsMember(fusions));
  tr->add_option("--at-variant", variant)->check(CLI::IsMember(variants));
  tr->add_option("--epochs", epochs);

  auto *at = app.add_subcommand("attack", "write white-box perturbations for a split");
  add_common(at);
  at->add_option("--data", data)->required();
  at->add_option("--checkpoint", ckpt)->required();
  at->add_option("--fusion", fusion)->check(CLI::IsMember(fusions));
  at->add_option("--out", out_dir, "directory for pert_<i>.bin")->required();

  auto *ev = app.add_subcommand("eval", "mAP of a checkpoint, optionally under perturbation");
  add_common(ev);
  ev->add_option("--data", data)->required();
  ev->add_option("--checkpoint", ckpt)->required();
  ev->add_option("--fusion", fusion)->check(CLI::IsMember(fusions));
  ev->add_option("--perturbations", perts, "directory of stored pert_<i>.bin");
  ev->add_flag("--white-box", white_box, "attack with the config's attack section");
  ev->add_option("--out", out_path, "result JSON");

  auto *cu = app.add_subcommand("curve", "robustness curve: mAP per attack budget");
  add_common(cu);
  cu->add_option("--data", data)->required();
  cu->add_option("--checkpoint", ckpt)->required();
  cu->add_option("--fusion", fusion)->check(CLI::IsMember(fusions));
  cu->add_option("--attack", family)->check(CLI::IsMember(families));
  cu->add_option("--budgets", budgets, "comma-separated, must include 0");
  cu->add_option("--jobs", jobs);
  cu->add_option("--out", out_path, "CSV path")->required();

  auto *tf = app.add_subcommand("transfer", "black-box transfer from a source to a target model");
  add_common(tf);
  tf->add_option("--data", data)->required();
  tf->add_option("--source", src_ckpt)->required();
  tf->add_option("--source-fusion", src_fusion)->required()->check(CLI::IsMember(fusions));
  tf->add_option("--target", dst_ckpt)->required();
  tf->add_option("--target-fusion", dst_fusion)->required()->check(CLI::IsMember(fusions));
  tf->add_option("--attack", family)->check(CLI::IsMember(families));
  tf->add_option("--budgets", budgets);
  tf->add_option("--out", out_path, "CSV path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int rc = app.exit(e, out, err);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*gen)
      return cmd_gen_data(common, out_dir, count, val_count, out);
    if (*tr)
      return cmd_train(common, data, out_dir, fusion, variant, epochs, out);
    if (*at)
      return cmd_attack(common, data, ckpt, fusion, out_dir, out);
    if (*ev)
      return cmd_eval(common, data, ckpt, fusion, perts, white_box, out_path, out);
    if (*cu)
      return cmd_curve(common, data, ckpt, fusion, family, budgets, jobs, out_path, out);
    if (*tf)
      return cmd_transfer(common, data, src_ckpt, src_fusion, dst_ckpt, dst_fusion, family, budgets, out_path, out);
  } catch (const ConfigError &e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError &e) {
    err << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const NumericError &e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception &e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitConfig;
}

} // namespace fuselab
