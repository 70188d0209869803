#pragma once
#include <string>
#include <vector>

#include "lmr/dataset.hpp"
#include "lmr/model.hpp"

namespace lmr {

struct TokenGradRow {
  int epoch = 0, layer = 0, token_index = 0;
  std::string segment;
  double fro_norm = 0.0;
};

struct FactorNuclearRow {
  int epoch = 0, layer = 0;
  std::string proj, factor, split;
  double nuc_norm = 0.0;
};

// Singular values by one-sided Jacobi rotations (column orthogonalization),
// descending.  Converges when all column pairs are orthogonal to 1e-12
// relative, capped at 60 sweeps.
std::vector<double> jacobi_singular_values(std::vector<double> a, int rows, int cols);
double nuclear_norm(const Tensor& m);

// Both probes run their own forward/backward on a scratch tape and zero all
// gradients before returning; parameters and optimizer state are untouched.
std::vector<TokenGradRow> token_grad_probe(Model& m, const Example& ex, int stage,
                                           const std::string& mode, int epoch);
std::vector<FactorNuclearRow> factor_nuclear_probe(Model& m,
                                                   const std::vector<Example>& examples,
                                                   const std::string& split, int stage,
                                                   const std::string& mode, int epoch,
                                                   int micro_batch);

void write_token_grads(const std::vector<TokenGradRow>& rows, const std::string& path,
                       bool append);
void write_factor_nuclear(const std::vector<FactorNuclearRow>& rows, const std::string& path,
                          bool append);

}  // namespace lmr
