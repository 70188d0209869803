#pragma once
#include <string>

#include "lmr/model.hpp"
#include "lmr/trainer.hpp"

namespace lmr {

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  struct Paths {
    std::string data, val_data, out_dir = "run";
  } paths;
};

// Parses a config file (TOML subset: [section] headers, key = value lines,
// # comments) and applies LMR_<SECTION>_<KEY> environment overrides on top.
// Unknown sections/keys and malformed values are collected and reported in
// one error; the merged config is then validated.
RunConfig parse_run_config(const std::string& path);

// Environment overrides applied to the built-in defaults, no file.
RunConfig default_run_config();

}  // namespace lmr
