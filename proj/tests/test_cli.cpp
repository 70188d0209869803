#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "lmr/cli.hpp"

namespace fs = std::filesystem;

namespace {

int run(std::vector<std::string> args) { return lmr::cli_main(args); }

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct TmpDir {
  fs::path path;
  explicit TmpDir(const std::string& name) : path(fs::path("/tmp") / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TmpDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

const char* kTinyConfig = R"([model]
layers = 2
heads = 2
d = 16
rank = 2
patch_grid = 4
image_side = 40
mlp_mult = 2
max_seq = 256
latent_steps = 2

[scfvr]
topk = 4
window = 2

[rds]
alpha = 8

[train]
epochs = 1
lr = 0.001
batch = 4
seed = 7
probe_subset = 2
early_checkpoints = 2
diag_every = 1
)";

}  // namespace

TEST_CASE("help and usage errors map to the documented exit codes") {
  CHECK(run({"--help"}) == 0);
  CHECK(run({"gen-data", "--help"}) == 0);
  CHECK(run({}) != 0);                         // a subcommand is required
  CHECK(run({"gen-data"}) == 1);               // missing required flags
  CHECK(run({"no-such-command"}) == 1);
  CHECK(run({"eval", "--checkpoint", "/tmp/lmr_cli_missing.lmr", "--data",
             "/tmp/lmr_cli_missing.jsonl"}) == 2);  // missing files are data errors
}

TEST_CASE("the full command pipeline runs end to end") {
  TmpDir dir("lmr_test_cli_pipeline");
  std::string data = dir.str() + "/train.jsonl";
  std::string val = dir.str() + "/val.jsonl";
  std::string cfg_path = dir.str() + "/run.toml";
  std::string out_dir = dir.str() + "/run";

  CHECK(run({"gen-data", "--seed", "42", "--n", "12", "--out", data, "--stats"}) == 0);
  CHECK(fs::exists(data));
  CHECK(fs::exists(dir.str() + "/train.cot_length.csv"));
  CHECK(run({"gen-data", "--seed", "43", "--n", "6", "--out", val}) == 0);

  {
    std::ofstream out(cfg_path);
    out << kTinyConfig;
  }
  CHECK(run({"train", "--config", cfg_path, "--data", data, "--val-data", val, "--out-dir",
             out_dir}) == 0);
  std::string ckpt = out_dir + "/ckpt_epoch_0.lmr";
  REQUIRE(fs::exists(ckpt));
  CHECK(fs::exists(out_dir + "/metrics.csv"));
  CHECK(fs::exists(out_dir + "/token_grads.csv"));
  CHECK(fs::exists(out_dir + "/factor_nuclear.csv"));
  CHECK(slurp(out_dir + "/metrics.csv")
            .rfind("epoch,stage,train_loss,ce_loss,recon_loss,val_acc,easy_count,hard_count\n",
                   0) == 0);

  for (const char* mode : {"latent", "explicit", "nocot"})
    CHECK(run({"eval", "--checkpoint", ckpt, "--data", val, "--mode", mode, "--limit", "3"}) ==
          0);
  CHECK(run({"eval", "--checkpoint", ckpt, "--data", val, "--mode", "psychic"}) == 1);

  std::string crops = dir.str() + "/crops.csv";
  CHECK(run({"eval", "--checkpoint", ckpt, "--data", val, "--mode", "latent", "--limit", "2",
             "--crop-log", crops}) == 0);
  CHECK(slurp(crops).rfind("example_id,t,r,c,w,density,selected\n", 0) == 0);

  std::string bench = dir.str() + "/bench_ar.csv";
  CHECK(run({"bench-ar", "--checkpoint", ckpt, "--data", val, "--out", bench, "--limit",
             "4"}) == 0);
  std::string text = slurp(bench);
  CHECK(text.rfind("example_id,latent_ar,explicit_ar,ratio\n", 0) == 0);
  int lines = 0;
  for (char c : text)
    if (c == '\n') ++lines;
  CHECK(lines == 5);

  // resuming via the CLI appends the next epoch to the same logs
  std::string cfg2_path = dir.str() + "/run2.toml";
  {
    std::string cfg2 = kTinyConfig;
    cfg2.replace(cfg2.find("epochs = 1"), 10, "epochs = 2");
    std::ofstream out(cfg2_path);
    out << cfg2;
  }
  CHECK(run({"train", "--config", cfg2_path, "--data", data, "--val-data", val, "--out-dir",
             out_dir, "--resume", ckpt}) == 0);
  CHECK(fs::exists(out_dir + "/ckpt_epoch_1.lmr"));
}

TEST_CASE("train rejects a config with errors listed") {
  TmpDir dir("lmr_test_cli_badcfg");
  std::string cfg_path = dir.str() + "/bad.toml";
  {
    std::ofstream out(cfg_path);
    out << "[model]\nlayers = 0\n";
  }
  CHECK(run({"train", "--config", cfg_path, "--data", "x.jsonl"}) == 1);
}

TEST_CASE("train requires data paths from the config or flags") {
  TmpDir dir("lmr_test_cli_nodata");
  std::string cfg_path = dir.str() + "/run.toml";
  {
    std::ofstream out(cfg_path);
    out << kTinyConfig;
  }
  CHECK(run({"train", "--config", cfg_path}) == 1);
}
