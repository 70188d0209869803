#include "lmr/cli.hpp"

#include <cstdio>

#include "CLI11.hpp"
#include "lmr/config.hpp"
#include "lmr/dataset.hpp"
#include "lmr/diagnostics.hpp"
#include "lmr/errors.hpp"
#include "lmr/latent.hpp"
#include "lmr/trainer.hpp"
#include "lmr/vocab.hpp"

namespace lmr {
namespace {

std::vector<Example> load_limited(const std::string& path, int limit) {
  std::vector<Example> ds = load_jsonl(path);
  if (limit > 0 && int(ds.size()) > limit) ds.resize(size_t(limit));
  return ds;
}

Model load_checkpoint_model(const std::string& path) {
  return load_model(read_checkpoint(path));
}

int run_gen_data(uint64_t seed, int n, const std::string& out, bool stats, int threads) {
  std::vector<Example> ds = generate_dataset(seed, n, threads);
  save_jsonl(ds, out);
  std::printf("wrote %d examples to %s\n", n, out.c_str());
  if (stats) {
    write_stats_csvs(ds, out);
    std::printf("wrote stats next to %s\n", stats_stem(out).c_str());
  }
  return 0;
}

int run_train(const std::string& config_path, const std::string& data_override,
              const std::string& val_override, const std::string& out_override,
              const std::string& resume, int stop_after_override) {
  RunConfig cfg = parse_run_config(config_path);
  if (!data_override.empty()) cfg.paths.data = data_override;
  if (!val_override.empty()) cfg.paths.val_data = val_override;
  if (!out_override.empty()) cfg.paths.out_dir = out_override;
  if (stop_after_override > 0) cfg.train.stop_after = stop_after_override;
  if (cfg.paths.data.empty()) throw UsageError("paths.data is required to train");
  if (cfg.paths.val_data.empty()) throw UsageError("paths.val_data is required to train");

  std::vector<Example> train_ds = load_jsonl(cfg.paths.data);
  std::vector<Example> val_ds = load_jsonl(cfg.paths.val_data);

  auto print_epoch = [](const EpochMetrics& m) {
    std::printf("epoch %d stage %d loss %.6f ce %.6f recon %.6f val_acc %.4f easy %d hard %d\n",
                m.epoch, m.stage, m.train_loss, m.ce_loss, m.recon_loss, m.val_acc,
                m.easy_count, m.hard_count);
    std::fflush(stdout);
  };

  if (resume.empty()) {
    Trainer tr(cfg.model, cfg.train, std::move(train_ds), std::move(val_ds), cfg.paths.out_dir);
    tr.run(print_epoch);
    std::printf("done; outputs in %s\n", cfg.paths.out_dir.c_str());
  } else {
    Trainer tr(resume, cfg.train, std::move(train_ds), std::move(val_ds), cfg.paths.out_dir);
    tr.run(print_epoch);
    std::printf("done; outputs in %s\n", cfg.paths.out_dir.c_str());
  }
  return 0;
}

int run_eval(const std::string& ckpt, const std::string& data, const std::string& mode_name,
             int threads, int limit, int max_decode, const std::string& crop_log_path) {
  Model m = load_checkpoint_model(ckpt);
  std::vector<Example> ds = load_limited(data, limit);
  EvalOptions eo;
  eo.mode = eval_mode_from_name(mode_name);
  eo.threads = threads;
  eo.max_decode = max_decode;
  std::vector<CropLogRow> crops;
  if (!crop_log_path.empty() && eo.mode == EvalMode::latent) eo.crop_log = &crops;
  EvalSummary s = evaluate(m, ds, eo);
  std::printf("examples %zu\n", ds.size());
  std::printf("mode %s\n", eval_mode_name(eo.mode));
  std::printf("accuracy %.6f\n", s.accuracy);
  std::printf("mean_ar_steps %.6f\n", s.mean_ar);
  std::printf("mean_seconds_per_example %.6f\n", s.mean_seconds);
  if (!crop_log_path.empty()) {
    if (eo.mode != EvalMode::latent)
      std::fprintf(stderr, "warning: crop log only applies to latent mode, skipping\n");
    else {
      scfvr::write_crop_log(crops, crop_log_path);
      std::printf("crop log: %s\n", crop_log_path.c_str());
    }
  }
  return 0;
}

int run_bench_ar(const std::string& ckpt, const std::string& data, const std::string& out,
                 int threads, int limit) {
  Model m = load_checkpoint_model(ckpt);
  std::vector<Example> ds = load_limited(data, limit);
  EvalOptions eo;
  eo.mode = EvalMode::latent;
  eo.threads = threads;
  EvalSummary s = evaluate(m, ds, eo);

  FILE* f = std::fopen(out.c_str(), "wb");
  if (!f) throw UsageError("cannot write " + out);
  std::fprintf(f, "example_id,latent_ar,explicit_ar,ratio\n");
  double mean_latent = 0, mean_explicit = 0;
  for (size_t i = 0; i < ds.size(); ++i) {
    int latent_ar = s.rows[i].ar_steps;
    int explicit_ar = gold_explicit_ar(ds[i]);
    std::fprintf(f, "%lld,%d,%d,%.17g\n", (long long)ds[i].id, latent_ar, explicit_ar,
                 double(explicit_ar) / double(latent_ar));
    mean_latent += latent_ar;
    mean_explicit += explicit_ar;
  }
  std::fclose(f);
  mean_latent /= double(ds.size());
  mean_explicit /= double(ds.size());
  std::printf("examples %zu\n", ds.size());
  std::printf("mean_latent_ar %.6f\n", mean_latent);
  std::printf("mean_explicit_ar %.6f\n", mean_explicit);
  std::printf("mean_ratio %.6f\n", mean_explicit / mean_latent);
  std::printf("wrote %s\n", out.c_str());
  return 0;
}

}  // namespace

int cli_main(const std::vector<std::string>& args) {
  CLI::App app{"desk-scale multimodal latent reasoning toolkit"};
  app.require_subcommand(1);

  uint64_t gd_seed = 42;
  int gd_n = 0, gd_threads = 1;
  std::string gd_out;
  bool gd_stats = false;
  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic scene dataset");
  gen->add_option("--seed", gd_seed, "root seed")->capture_default_str();
  gen->add_option("--n", gd_n, "number of examples")->required();
  gen->add_option("--out", gd_out, "output JSONL path")->required();
  gen->add_flag("--stats", gd_stats, "also write distribution CSVs");
  gen->add_option("--threads", gd_threads, "generation threads")->capture_default_str();

  std::string tr_config, tr_data, tr_val, tr_out, tr_resume;
  int tr_stop = 0;
  CLI::App* train = app.add_subcommand("train", "train a model per config file");
  train->add_option("--config", tr_config, "config file (TOML subset)")->required();
  train->add_option("--data", tr_data, "training JSONL (overrides paths.data)");
  train->add_option("--val-data", tr_val, "validation JSONL (overrides paths.val_data)");
  train->add_option("--out-dir", tr_out, "output directory (overrides paths.out_dir)");
  train->add_option("--resume", tr_resume, "checkpoint to resume from");
  train->add_option("--stop-after", tr_stop, "stop after this many completed epochs");

  std::string ev_ckpt, ev_data, ev_mode = "latent", ev_crop;
  int ev_threads = 1, ev_limit = 0, ev_max = 0;
  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->add_option("--checkpoint", ev_ckpt, "model checkpoint")->required();
  ev->add_option("--data", ev_data, "evaluation JSONL")->required();
  ev->add_option("--mode", ev_mode, "latent|explicit|nocot")->capture_default_str();
  ev->add_option("--threads", ev_threads, "evaluation threads")->capture_default_str();
  ev->add_option("--limit", ev_limit, "evaluate only the first N examples");
  ev->add_option("--max-decode", ev_max, "decode cap (0 = per-mode default)");
  ev->add_option("--crop-log", ev_crop, "write replay crop log CSV here (latent mode)");

  std::string ba_ckpt, ba_data, ba_out = "bench_ar.csv";
  int ba_threads = 1, ba_limit = 0;
  CLI::App* ba = app.add_subcommand("bench-ar", "per-example AR-step counts and ratios");
  ba->add_option("--checkpoint", ba_ckpt, "model checkpoint")->required();
  ba->add_option("--data", ba_data, "evaluation JSONL")->required();
  ba->add_option("--out", ba_out, "output CSV")->capture_default_str();
  ba->add_option("--threads", ba_threads, "evaluation threads")->capture_default_str();
  ba->add_option("--limit", ba_limit, "use only the first N examples");

  std::vector<std::string> argv_s;
  argv_s.push_back("lmr");
  argv_s.insert(argv_s.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (std::string& s : argv_s) argv.push_back(s.data());

  try {
    app.parse(int(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return run_gen_data(gd_seed, gd_n, gd_out, gd_stats, gd_threads);
    if (train->parsed())
      return run_train(tr_config, tr_data, tr_val, tr_out, tr_resume, tr_stop);
    if (ev->parsed())
      return run_eval(ev_ckpt, ev_data, ev_mode, ev_threads, ev_limit, ev_max, ev_crop);
    if (ba->parsed()) return run_bench_ar(ba_ckpt, ba_data, ba_out, ba_threads, ba_limit);
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 3;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

}  // namespace lmr
