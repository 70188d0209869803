#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <string>

#include "doctest.h"
#include "lmr/config.hpp"
#include "lmr/errors.hpp"

using namespace lmr;

namespace {

struct TmpFile {
  std::string path;
  TmpFile(const std::string& p, const std::string& text) : path(p) {
    std::ofstream out(p, std::ios::binary);
    out << text;
  }
  ~TmpFile() { std::remove(path.c_str()); }
};

struct EnvGuard {
  std::string key;
  explicit EnvGuard(const std::string& k) : key(k) {}
  ~EnvGuard() { unsetenv(key.c_str()); }
};

}  // namespace

TEST_CASE("defaults parse and validate") {
  RunConfig cfg = default_run_config();
  CHECK(cfg.model.layers == 4);
  CHECK(cfg.train.epochs == 16);
  CHECK(cfg.paths.out_dir == "run");
  CHECK(cfg.model.seed == cfg.train.seed);
}

TEST_CASE("a full file overrides every section") {
  TmpFile f("/tmp/lmr_test_full.toml", R"(# full config
[model]
layers = 2
heads = 2
d = 32
rank = 4
patch_grid = 5
image_side = 40
mlp_mult = 2
max_seq = 300
latent_steps = 3
dtype = "f32"

[scfvr]
topk = 6
window = 2
lambda = 0.25
count_visited = true

[rds]
enabled = true
depth = 2
schedule = "cosine"
alpha_start = 20
alpha_end = 4
attend_full = true

[train]
epochs = 4
lr = 0.002
batch = 2
seed = 777
mode = "latent"
val_subset = 10
diag_every = 2

[paths]
data = "train.jsonl"
val_data = "val.jsonl"
out_dir = "out"
)");
  RunConfig cfg = parse_run_config(f.path);
  CHECK(cfg.model.layers == 2);
  CHECK(cfg.model.d == 32);
  CHECK(cfg.model.dtype == DType::f32);
  CHECK(cfg.model.latent_steps == 3);
  CHECK(cfg.model.scfvr.topk == 6);
  CHECK(cfg.model.scfvr.lambda == 0.25);
  CHECK(cfg.model.scfvr.count_visited);
  CHECK(cfg.model.rds.depth == 2);
  CHECK(cfg.model.rds.schedule == "cosine");
  CHECK(cfg.model.rds.alpha_start == 20);
  CHECK(cfg.model.rds.attend_full);
  CHECK(cfg.train.epochs == 4);
  CHECK(cfg.train.lr == 0.002);
  CHECK(cfg.train.val_subset == 10);
  CHECK(cfg.train.diag_every == 2);
  CHECK(cfg.paths.data == "train.jsonl");
  CHECK(cfg.paths.out_dir == "out");
  // the model seed always tracks the training seed
  CHECK(cfg.model.seed == 777);
}

TEST_CASE("unknown keys and sections are all reported with file and line") {
  TmpFile f("/tmp/lmr_test_unknown.toml", R"([model]
layers = 2
flux = 9

[warp]
speed = 3
)");
  try {
    parse_run_config(f.path);
    FAIL("expected UsageError");
  } catch (const UsageError& e) {
    std::string msg = e.what();
    CHECK(msg.find("lmr_test_unknown.toml:3") != std::string::npos);
    CHECK(msg.find("flux") != std::string::npos);
    CHECK(msg.find("lmr_test_unknown.toml:5") != std::string::npos);
    CHECK(msg.find("warp") != std::string::npos);
  }
}

TEST_CASE("malformed values are reported with their lines") {
  TmpFile f("/tmp/lmr_test_badval.toml", R"([model]
layers = soup
d = 3.5

[train]
lr = fast
)");
  try {
    parse_run_config(f.path);
    FAIL("expected UsageError");
  } catch (const UsageError& e) {
    std::string msg = e.what();
    CHECK(msg.find(":2") != std::string::npos);
    CHECK(msg.find(":3") != std::string::npos);
    CHECK(msg.find(":6") != std::string::npos);
  }
}

TEST_CASE("a key outside any section is an error") {
  TmpFile f("/tmp/lmr_test_nosection.toml", "layers = 2\n");
  CHECK_THROWS_AS(parse_run_config(f.path), UsageError);
}

TEST_CASE("a missing file is an error") {
  CHECK_THROWS_AS(parse_run_config("/tmp/lmr_no_such_config.toml"), UsageError);
}

TEST_CASE("environment variables override file values") {
  TmpFile f("/tmp/lmr_test_env.toml", "[train]\nepochs = 4\nseed = 10\n");
  EnvGuard g1("LMR_TRAIN_EPOCHS"), g2("LMR_SCFVR_LAMBDA"), g3("LMR_RDS_SCHEDULE");
  setenv("LMR_TRAIN_EPOCHS", "9", 1);
  setenv("LMR_SCFVR_LAMBDA", "0.125", 1);
  setenv("LMR_RDS_SCHEDULE", "cosine", 1);
  RunConfig cfg = parse_run_config(f.path);
  CHECK(cfg.train.epochs == 9);
  CHECK(cfg.model.scfvr.lambda == 0.125);
  CHECK(cfg.model.rds.schedule == "cosine");
  CHECK(cfg.model.seed == 10);
}

TEST_CASE("a bad environment value is an error naming the variable") {
  TmpFile f("/tmp/lmr_test_envbad.toml", "[train]\nepochs = 4\n");
  EnvGuard g("LMR_TRAIN_BATCH");
  setenv("LMR_TRAIN_BATCH", "many", 1);
  CHECK_THROWS_WITH_AS(parse_run_config(f.path), doctest::Contains("LMR_TRAIN_BATCH"),
                       UsageError);
}

TEST_CASE("validation failures propagate from both configs") {
  TmpFile f("/tmp/lmr_test_invalid.toml", "[model]\nlayers = 0\n\n[train]\nepochs = 0\n");
  try {
    parse_run_config(f.path);
    FAIL("expected UsageError");
  } catch (const UsageError& e) {
    std::string msg = e.what();
    CHECK(msg.find("layers") != std::string::npos);
  }
}
