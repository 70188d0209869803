#pragma once
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "lmr/dataset.hpp"
#include "lmr/latent.hpp"
#include "lmr/model.hpp"

namespace lmr {

struct TrainConfig {
  int epochs = 16;
  double lr = 4e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int batch = 8;
  uint64_t seed = 1234;
  std::string mode = "latent";  // latent | nocot
  int val_subset = 0;           // 0: full validation set
  int probe_subset = 32;        // difficulty-probe size (train prefix)
  int early_checkpoints = 3;    // epochs whose probe decodes define easy/hard
  int force_stage = -1;         // >=0 pins the curriculum stage
  int diag_every = 1;           // 0 disables gradient diagnostics
  int threads = 1;              // evaluation parallelism only
  int stop_after = 0;           // >0: stop once this many epochs completed
  void validate() const;        // throws UsageError listing every violation
};

// Curriculum stage for a 0-based epoch: epochs split uniformly into t_r+1
// consecutive runs, stage monotone from 0 to t_r.
int stage_of(int epoch, int total_epochs, int t_r);

struct AdamState {
  std::map<std::string, Tensor> m, v;
  int64_t t = 0;
};

void adam_init(AdamState& st, const Model& model);
// One update over every trainable parameter carrying a gradient; throws
// NumericError naming the first parameter with a non-finite gradient.
void adam_step(AdamState& st, Model& model, double lr, double beta1, double beta2, double eps);

// Explicit text remaining at a curriculum stage: unlatentized steps with
// their delimiters, then the answer and end token.
struct StageText {
  int k_latent = 0;
  std::vector<int> tokens;
};
StageText stage_text(const Example& ex, int stage, const std::string& mode);

struct ExampleLossOutput {
  Tensor total, ce;
  int executed = 0;  // latent steps run
  double total_value = 0.0, ce_value = 0.0, recon_value = 0.0;
  ForwardResult fwd;          // the supervised forward pass
  std::vector<SegTag> tags;   // per-position segment tags of that pass
};

// Builds the stage-k context (running implicit steps for latentized CoT
// steps), assembles targets for the remaining text, and returns
// ce + lambda * mean-over-executed-steps reconstruction.  Records on the
// active tape.
ExampleLossOutput example_loss(const Model& m, const Example& ex, int stage,
                               const std::string& mode);

struct EpochMetrics {
  int epoch = 0, stage = 0;
  double train_loss = 0.0, ce_loss = 0.0, recon_loss = 0.0, val_acc = 0.0;
  int easy_count = 0, hard_count = 0;
};

class Trainer {
 public:
  // Fresh run; out_dir is created if needed.
  Trainer(const ModelConfig& mc, const TrainConfig& tc, std::vector<Example> train_ds,
          std::vector<Example> val_ds, std::string out_dir);
  // Resume from a checkpoint written by a previous run.
  Trainer(const std::string& checkpoint, const TrainConfig& tc, std::vector<Example> train_ds,
          std::vector<Example> val_ds, std::string out_dir);

  std::vector<EpochMetrics> run(const std::function<void(const EpochMetrics&)>& on_epoch = {});

  Model& model() { return model_; }
  const AdamState& adam() const { return adam_; }
  int next_epoch() const { return next_epoch_; }
  std::string checkpoint_path(int epoch) const;

 private:
  void run_epoch(int epoch, EpochMetrics& out);
  void probe_difficulty(int epoch);
  void split_counts(int* easy, int* hard) const;
  void split_examples(std::vector<Example>* easy, std::vector<Example>* hard) const;
  void save_epoch(int epoch, int stage);
  void append_metrics(const EpochMetrics& m);

  ModelConfig mcfg_;
  TrainConfig tcfg_;
  Model model_;
  AdamState adam_;
  std::vector<Example> train_, val_;
  std::string out_dir_;
  int next_epoch_ = 0;
  std::vector<double> probe_bits_;  // early_checkpoints x probe_n, -1 unfilled
  bool resumed_ = false;
};

}  // namespace lmr
