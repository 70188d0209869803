#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "lmr/dataset.hpp"
#include "lmr/model.hpp"
#include "lmr/scfvr.hpp"

namespace lmr {

struct Segment {
  SegTag tag;
  Tensor rows;  // [n, d]
};

struct LatentState {
  int64_t example_id = 0;
  Image image;
  std::vector<Segment> segments;
  VisitedSet visited{0};
  int t = 0;         // completed implicit steps
  int ar_steps = 0;  // forward invocations in both phases

  int P() const;
  std::vector<SegTag> tags() const;
  Tensor context() const;
  const Tensor& visual_rows() const;
};

struct ImplicitOutputs {
  Tensor z;  // [d]
  VisualReplayOutput replay;
};

struct DecodeResult {
  std::vector<int> tokens;  // includes the end token when not truncated
  int ar_steps = 0;
  bool truncated = false;
};

LatentState prefill(const Model& m, const Example& ex);

// One implicit step: traced forward, visual replay, context grows by the
// replay block plus one thought latent.
ImplicitOutputs implicit_step(const Model& m, LatentState& st);

// Greedy decoding from the current context; trace and routing stay off.
DecodeResult greedy_decode(const Model& m, LatentState& st, int max_tokens);

// Answer phase; requires the implicit phase to have completed.
DecodeResult decode_answer(const Model& m, LatentState& st, int max_tokens);

enum class EvalMode { latent, explicit_cot, nocot };
EvalMode eval_mode_from_name(const std::string& name);
const char* eval_mode_name(EvalMode m);

struct EvalRow {
  int64_t id = 0;
  bool correct = false;
  int ar_steps = 0;
  double seconds = 0.0;
  bool truncated = false;
  std::vector<int> answer;  // decoded answer tokens, end token stripped
};

struct EvalSummary {
  double accuracy = 0.0;
  double mean_ar = 0.0;
  double mean_seconds = 0.0;
  std::vector<EvalRow> rows;
};

struct EvalOptions {
  EvalMode mode = EvalMode::latent;
  int max_decode = 0;  // 0: 8 for latent/nocot, 96 for explicit
  int threads = 1;
  std::vector<CropLogRow>* crop_log = nullptr;  // latent mode only
};

EvalSummary evaluate(const Model& m, const std::vector<Example>& ds, const EvalOptions& opts);

// Step counters a faithful explicit-CoT decoder would register.
int gold_explicit_ar(const Example& ex);
int gold_latent_ar(const Example& ex, int t_r);

}  // namespace lmr
