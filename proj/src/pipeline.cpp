#include "dpersona/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <stdexcept>

#include "dpersona/checkpoint.hpp"
#include "dpersona/evaluate.hpp"
#include "dpersona/fpenv.hpp"
#include "dpersona/fusion.hpp"
#include "dpersona/hashing.hpp"
#include "dpersona/report.hpp"
#include "dpersona/stage1.hpp"
#include "dpersona/stage2.hpp"

#ifndef DPERSONA_CODE_VERSION
#define DPERSONA_CODE_VERSION "unknown"
#endif

namespace dpersona::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

std::string code_version() { return DPERSONA_CODE_VERSION; }

namespace {

fs::path data_dir(const Context& ctx) { return ctx.out / "data"; }
fs::path stage1_dir(const Context& ctx) { return ctx.out / "stage1"; }
fs::path stage2_dir(const Context& ctx) { return ctx.out / "stage2"; }
fs::path baseline_dir(const Context& ctx, const eval::Method& m) { return ctx.out / "baselines" / m.slug(); }
fs::path eval_dir(const Context& ctx) { return ctx.out / "eval"; }

void prepare_output(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!force) throw std::runtime_error("output directory " + dir.string() + " exists; pass --force to overwrite");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

// Refuses datasets that were generated from a different synthgen section.
void check_dataset(const Context& ctx) {
  const auto dir = data_dir(ctx);
  if (!fs::exists(dir / "manifest.json")) {
    throw std::runtime_error("missing dataset in " + dir.string() + "; run gen-data first");
  }
  const auto m = data::read_manifest(dir);
  const auto& c = ctx.config.synthgen;
  if (m.height != c.height || m.width != c.width || m.raters != c.raters || m.train != c.train || m.val != c.val ||
      m.test != c.test || m.master_seed != c.seed || m.profiles != c.resolved_profiles() ||
      m.generator_version != synthgen::kGeneratorVersion) {
    throw std::runtime_error("dataset in " + dir.string() + " was generated with a different synthgen configuration");
  }
}

data::Split load_split(const Context& ctx, const char* name) { return data::read_split(data_dir(ctx) / name, name); }

// Refuses checkpoints whose D, R, H, W or upstream configuration disagree with ours.
void check_compatible(const Context& ctx, const io::Checkpoint& ckpt, const fs::path& path) {
  const auto& cfg = ctx.config;
  auto refuse = [&](const std::string& what) {
    throw std::runtime_error("checkpoint " + path.string() + " is incompatible with this config: " + what);
  };
  if (ckpt.bundle.arch.latent_dim != cfg.model.latent_dim) refuse("latent dimension D differs");
  if (ckpt.bundle.arch.raters != cfg.synthgen.raters) refuse("rater count R differs");
  if (ckpt.meta.value("height", -1) != cfg.synthgen.height || ckpt.meta.value("width", -1) != cfg.synthgen.width) {
    refuse("image size H x W differs");
  }
  if (ckpt.upstream_hash != config::upstream_hash(cfg)) {
    refuse("config hash mismatch (upstream " + ckpt.upstream_hash + " vs " + config::upstream_hash(cfg) + ")");
  }
}

io::Checkpoint load_checked(const Context& ctx, const fs::path& path, const std::string& produced_by) {
  if (!fs::exists(path)) throw std::runtime_error("missing checkpoint " + path.string() + "; run " + produced_by + " first");
  auto ckpt = io::load_checkpoint(path);
  check_compatible(ctx, ckpt, path);
  return ckpt;
}

io::Checkpoint make_checkpoint(const Context& ctx, model::ModelBundle<float> bundle, json meta) {
  io::Checkpoint ckpt;
  ckpt.bundle = std::move(bundle);
  ckpt.config_hash = config::config_hash(ctx.config);
  ckpt.upstream_hash = config::upstream_hash(ctx.config);
  meta["height"] = ctx.config.synthgen.height;
  meta["width"] = ctx.config.synthgen.width;
  ckpt.meta = std::move(meta);
  return ckpt;
}

stage1::Stage1Result run_stage1(const Context& ctx, const stage1::Stage1Config& s1, stage1::LabelMode mode,
                                const stage1::LabelSource* labels, const fs::path& dir, const std::string& tag) {
  check_dataset(ctx);
  const auto train = load_split(ctx, "train");
  const auto val = load_split(ctx, "val");
  std::ofstream log(dir / "train_log.jsonl", std::ios::trunc);
  auto result = stage1::train_stage1(train, val, ctx.config.model, s1, mode, labels, [&](const stage1::EpochLog& e) {
    log << stage1::to_json(e).dump() << "\n";
    log.flush();
    if (ctx.progress) {
      char buf[200];
      std::snprintf(buf, sizeof buf, "[%s] epoch %d  l_kl %.4f  l_seg %.4f  l_bound %s  val %.4f%s\n", tag.c_str(),
                    e.epoch, e.l_kl, e.l_seg, e.l_bound ? std::to_string(*e.l_bound).c_str() : "-", e.val_metric,
                    e.selected ? " *" : "");
      *ctx.progress << buf << std::flush;
    }
  });
  result.bundle.projections.clear();
  return result;
}

json seeds(const config::ExperimentConfig& c) {
  return {{"synthgen", c.synthgen.seed},
          {"stage1", c.stage1.seed},
          {"stage2", c.stage2.seed},
          {"metrics", c.metrics.seed},
          {"baselines", c.baselines.seed}};
}

}  // namespace

void gen_data(const Context& ctx) {
  const auto m = data::build_dataset(ctx.config.synthgen, data_dir(ctx), ctx.force);
  write_json(data_dir(ctx) / "config.json", config::to_json(ctx.config));
  if (ctx.progress) {
    *ctx.progress << "dataset: " << m.train << "/" << m.val << "/" << m.test << " samples, " << m.raters
                  << " raters, " << m.height << "x" << m.width << "\n";
  }
}

void train_stage1(const Context& ctx) {
  check_dataset(ctx);
  const auto dir = stage1_dir(ctx);
  prepare_output(dir, ctx.force);
  const auto r = run_stage1(ctx, ctx.config.stage1, stage1::LabelMode::diverse, nullptr, dir, "stage1");
  json meta{{"stage", 1}, {"method", "stage1"}, {"best_epoch", r.best_epoch}, {"best_val_ged", r.best_val_metric}};
  io::save_checkpoint(dir / "checkpoint.bin", make_checkpoint(ctx, r.bundle, meta));
  write_json(dir / "config.json", config::to_json(ctx.config));
}

void train_stage2(const Context& ctx) {
  check_dataset(ctx);
  const auto s1 = load_checked(ctx, stage1_dir(ctx) / "checkpoint.bin", "train-stage1");
  const auto dir = stage2_dir(ctx);
  prepare_output(dir, ctx.force);
  const auto train = load_split(ctx, "train");
  const auto val = load_split(ctx, "val");
  std::ofstream log(dir / "train_log.jsonl", std::ios::trunc);
  const auto r = stage2::train_stage2(train, val, s1.bundle, s1.checksums, ctx.config.stage2, [&](const stage2::EpochLog& e) {
    log << stage2::to_json(e).dump() << "\n";
    log.flush();
    if (ctx.progress) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "[stage2] epoch %d  l_personal %.4f  val Dice_mean %.4f%s\n", e.epoch,
                    e.l_personal, e.val_dice_mean, e.selected ? " *" : "");
      *ctx.progress << buf << std::flush;
    }
  });
  json stage1_sums;
  for (const auto& [name, v] : s1.checksums) stage1_sums[name] = to_hex(v);
  json meta{{"stage", 2},
            {"method", "stage2"},
            {"best_epoch", r.best_epoch},
            {"best_val_dice_mean", r.best_val_dice_mean},
            {"optimizer_steps", r.optimizer_steps},
            {"stage1_checksums", stage1_sums}};
  io::save_checkpoint(dir / "checkpoint.bin", make_checkpoint(ctx, r.bundle, meta));
  write_json(dir / "config.json", config::to_json(ctx.config));
}

void baseline(const Context& ctx, const std::string& name) {
  const auto& cfg = ctx.config;
  const auto method = eval::parse_method(name, cfg.synthgen.raters);
  if (method.kind != eval::MethodKind::diverse && method.kind != eval::MethodKind::single_label) {
    throw std::invalid_argument("'" + name + "' is not a baseline; use train-stage1 / train-stage2");
  }
  if (name == "stage1") throw std::invalid_argument("'stage1' is not a baseline; use train-stage1");
  check_dataset(ctx);
  const auto dir = baseline_dir(ctx, method);
  prepare_output(dir, ctx.force);

  if (name == "prob-unet") {
    auto s1 = cfg.stage1;
    s1.weights.beta = 0.0;
    const auto r = run_stage1(ctx, s1, stage1::LabelMode::diverse, nullptr, dir, name);
    json meta{{"stage", 1}, {"method", name}, {"best_epoch", r.best_epoch}, {"best_val_ged", r.best_val_metric}};
    io::save_checkpoint(dir / "checkpoint.bin", make_checkpoint(ctx, r.bundle, meta));
    write_json(dir / "config.json", config::to_json(cfg));
    return;
  }

  const auto train = load_split(ctx, "train");
  stage1::LabelSource labels{name, {}};
  json fusion_stats = json::array();
  if (name == "mv" || name == "staple" || method.rater > 0) {
    for (const auto& s : train.samples) {
      if (name == "mv") {
        labels.fixed.push_back(fusion::majority_vote(s.annotations));
      } else if (name == "staple") {
        const auto est = fusion::staple(s.annotations, cfg.baselines.staple);
        labels.fixed.push_back(est.consensus);
        fusion_stats.push_back({{"sample_id", s.sample_id},
                                {"iterations", est.iterations},
                                {"converged", est.converged},
                                {"sensitivity", est.sensitivity},
                                {"specificity", est.specificity}});
      } else {
        labels.fixed.push_back(s.annotations[method.rater - 1]);
      }
    }
    data::Split fused{"train", train.height, train.width, 1, {}};
    for (std::size_t i = 0; i < train.samples.size(); ++i) {
      auto s = train.samples[i];
      s.annotations = {labels.fixed[i]};
      fused.samples.push_back(std::move(s));
    }
    data::write_split(dir / "labels" / "train", fused);
    if (name == "staple") write_json(dir / "staple.json", fusion_stats);
  }

  stage1::Stage1Config s1 = cfg.stage1;
  s1.epochs = cfg.baselines.epochs;
  s1.learning_rate = cfg.baselines.learning_rate;
  s1.batch_size = cfg.baselines.batch_size;
  s1.seed = cfg.baselines.seed;
  s1.weights.alpha = 1.0;
  s1.weights.beta = 0.0;
  s1.weights.l2 = cfg.baselines.l2;
  const auto r = run_stage1(ctx, s1, stage1::LabelMode::single_label, &labels, dir, name);
  json meta{{"stage", 0}, {"method", name}, {"best_epoch", r.best_epoch}, {"best_val_dice_mean", r.best_val_metric}};
  io::save_checkpoint(dir / "checkpoint.bin", make_checkpoint(ctx, r.bundle, meta));
  write_json(dir / "config.json", config::to_json(cfg));
}

std::vector<fs::path> evaluate(const Context& ctx, const std::string& name, std::optional<int> samples) {
  const auto& cfg = ctx.config;
  const auto method = eval::parse_method(name, cfg.synthgen.raters);
  check_dataset(ctx);
  const auto test = load_split(ctx, "test");
  fs::create_directories(eval_dir(ctx));

  std::vector<eval::MethodRun> runs;
  if (method.kind == eval::MethodKind::diverse) {
    const auto path = name == "stage1" ? stage1_dir(ctx) / "checkpoint.bin" : baseline_dir(ctx, method) / "checkpoint.bin";
    const auto ckpt = load_checked(ctx, path, name == "stage1" ? "train-stage1" : "baseline --method " + name);
    std::vector<int> ns = samples ? std::vector<int>{*samples} : cfg.metrics.sampling_numbers;
    for (int n : ns) {
      if (n < 1) throw std::invalid_argument("--samples must be >= 1");
      runs.push_back(eval::evaluate_diverse(name, ckpt.bundle, test, n, cfg.metrics.seed));
    }
  } else if (method.kind == eval::MethodKind::personalized) {
    const auto ckpt = load_checked(ctx, stage2_dir(ctx) / "checkpoint.bin", "train-stage2");
    runs.push_back(eval::evaluate_personalized(name, ckpt.bundle, test, cfg.metrics.bank_size, cfg.metrics.seed,
                                               cfg.stage2.attention_scale));
  } else {
    const auto ckpt = load_checked(ctx, baseline_dir(ctx, method) / "checkpoint.bin", "baseline --method " + name);
    runs.push_back(eval::evaluate_single(name, ckpt.bundle, test));
  }

  std::vector<fs::path> written;
  for (auto& run : runs) {
    run.report.config_hash = config::config_hash(cfg);
    run.report.check_invariants();
    const auto stem = method.slug() + "_n" + std::to_string(run.report.sampling_number);
    write_json(eval_dir(ctx) / (stem + ".json"), eval::to_json(run.report));
    write_text(eval_dir(ctx) / (stem + ".csv"), eval::samples_csv(run.samples, cfg.synthgen.raters));
    written.push_back(eval_dir(ctx) / (stem + ".json"));
    if (ctx.progress) {
      char buf[200];
      std::snprintf(buf, sizeof buf, "[eval] %s #%d  GED %.4f  Dice_soft %.4f", name.c_str(), run.report.sampling_number,
                    run.report.ged, run.report.dice_soft);
      *ctx.progress << buf;
      if (run.report.dice_max) {
        std::snprintf(buf, sizeof buf, "  Dice_max %.4f  Dice_match %.4f", *run.report.dice_max, *run.report.dice_match);
        *ctx.progress << buf;
      }
      if (!run.report.per_rater.empty()) {
        std::snprintf(buf, sizeof buf, "  Dice_mean %.4f", run.report.dice_mean);
        *ctx.progress << buf;
      }
      *ctx.progress << "\n";
    }
  }
  return written;
}

void report(const Context& ctx) {
  const auto& cfg = ctx.config;
  const auto edir = eval_dir(ctx);
  if (!fs::exists(edir)) throw std::runtime_error("no evaluation results in " + edir.string() + "; run eval first");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(edir))
    if (e.path().extension() == ".json") files.push_back(e.path());
  if (files.empty()) throw std::runtime_error("no evaluation results in " + edir.string() + "; run eval first");
  std::sort(files.begin(), files.end());
  std::vector<metrics::EvalReport> rows;
  for (const auto& f : files) {
    std::ifstream in(f);
    json j;
    in >> j;
    rows.push_back(eval::report_from_json(j));
  }
  const auto dir = ctx.out / "report";
  fs::create_directories(dir);
  const auto text = report::table_text(rows, cfg.synthgen.raters);
  write_text(dir / "table.txt", text);
  write_text(dir / "table.csv", report::table_csv(rows, cfg.synthgen.raters));
  if (ctx.progress) *ctx.progress << text;

  check_dataset(ctx);
  const auto test = load_split(ctx, "test");
  const std::size_t shown = std::min<std::size_t>(4, test.samples.size());
  ScopedFlushDenormals ftz;
  if (fs::exists(stage1_dir(ctx) / "checkpoint.bin")) {
    const auto ckpt = load_checked(ctx, stage1_dir(ctx) / "checkpoint.bin", "train-stage1");
    std::vector<report::RgbImage> panels;
    for (std::size_t i = 0; i < shown; ++i) {
      const auto& s = test.samples[i];
      Rng rng(derive_seed(cfg.metrics.seed, s.sample_id));
      panels.push_back(report::diversified_panel(s.image, s.annotations, stage1::infer_diverse(ckpt.bundle, s.image, 6, rng)));
    }
    report::write_png(dir / "diversified.png", report::vstack(panels, 6));
  }
  if (fs::exists(stage2_dir(ctx) / "checkpoint.bin")) {
    const auto ckpt = load_checked(ctx, stage2_dir(ctx) / "checkpoint.bin", "train-stage2");
    std::vector<report::RgbImage> panels;
    for (std::size_t i = 0; i < shown; ++i) {
      const auto& s = test.samples[i];
      const auto preds = stage2::personalize_all(ckpt.bundle, s.image, s.sample_id, cfg.metrics.bank_size,
                                                 cfg.metrics.seed, cfg.stage2.attention_scale);
      panels.push_back(report::personalized_panel(s.image, s.annotations, preds));
    }
    report::write_png(dir / "personalized.png", report::vstack(panels, 6));
  }
}

void record_run(const Context& ctx, const std::string& command, const json& artifacts, double wall_seconds) {
  fs::create_directories(ctx.out);
  const auto now = std::chrono::system_clock::now();
  const auto ns = std::chrono::duration_cast<std::chrono::nanoseconds>(now.time_since_epoch()).count();
  const std::string hash = config::config_hash(ctx.config);
  Fnv1a64 h;
  h.update(command);
  h.update(hash);
  h.update(std::to_string(ns));
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  const json rec{{"run_id", to_hex(h.digest())},
                 {"command", command},
                 {"config_hash", hash},
                 {"seeds", seeds(ctx.config)},
                 {"code_version", code_version()},
                 {"artifacts", artifacts},
                 {"started_at", stamp},
                 {"wall_clock_seconds", wall_seconds}};
  std::ofstream(ctx.out / "runs.jsonl", std::ios::app) << rec.dump() << "\n";
}

}  // namespace dpersona::pipeline
