#pragma once
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lmr/scene.hpp"

namespace lmr {

struct ExampleMeta {
  int template_id = 0;
  int hops = 0;                                 // number of reasoning steps
  std::vector<int> relations;                   // relation token ids, in application order
  std::vector<std::pair<int, int>> step_cells;  // cell named by each step, (-1,-1) when none
};

struct Example {
  int64_t id = 0;
  uint64_t seed = 0;
  Scene scene;
  std::vector<int> question;
  std::vector<std::vector<int>> steps;
  std::vector<int> answer;  // choice tokens; the end-of-answer marker is appended by layouts
  ExampleMeta meta;         // derived, not serialized
};

std::vector<Example> generate_dataset(uint64_t seed, int n, int threads = 1);

void save_jsonl(const std::vector<Example>& ds, const std::string& path);
std::vector<Example> load_jsonl(const std::string& path);

// Re-derives the answer token from the scene and the question alone.
int evaluate_answer(const Scene& scene, const std::vector<int>& question);
ExampleMeta derive_meta(const Scene& scene, const std::vector<int>& question);

// Explicit reasoning segment: each step followed by the step delimiter.
std::vector<int> cot_tokens(const Example& ex);

// True when the pixel box of a scene cell fits inside some window x window
// block of the model patch grid.
bool cell_in_some_window(int cell_r, int cell_c, int scene_g, int image_side, int model_g,
                         int window);
// Fraction of cell-naming steps whose named cell fits inside some window.
double step_relevance_fraction(const std::vector<Example>& ds, int image_side, int model_g,
                               int window);

// Histogram CSVs (<stem>.cot_length.csv, <stem>.step_count.csv, <stem>.template.csv).
std::string stats_stem(const std::string& jsonl_path);
void write_stats_csvs(const std::vector<Example>& ds, const std::string& jsonl_path);

}  // namespace lmr
