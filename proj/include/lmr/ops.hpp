#pragma once
#include <cstdint>
#include <utility>
#include <vector>

#include "lmr/tensor.hpp"

// Differentiable tensor operations.  Every op allocates a fresh output,
// validates shapes/dtypes up front, and registers a backward closure on the
// active tape when any input requires gradients.  Gradients accumulate (+=)
// so a tensor consumed by several ops collects all contributions.

namespace lmr {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);

// broadcast over rows / columns of a rank-2 tensor
Tensor add_rowvec(const Tensor& x, const Tensor& v);  // x[m,n] + v[n]
Tensor mul_rowvec(const Tensor& x, const Tensor& v);  // x[m,n] * v[n]
Tensor mul_colvec(const Tensor& x, const Tensor& s);  // row i scaled by s[i]

Tensor matmul(const Tensor& a, const Tensor& b);      // a[m,k] * b[k,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);   // a[m,k] * b[n,k]^T

Tensor reshape(const Tensor& x, std::vector<int> shape);
Tensor concat_rows(const std::vector<Tensor>& xs);
Tensor concat_cols(const std::vector<Tensor>& xs);
Tensor slice_rows(const Tensor& x, int r0, int r1);
Tensor slice_cols(const Tensor& x, int c0, int c1);
Tensor gather_rows(const Tensor& x, const std::vector<int>& idx);
Tensor scatter_rows(const Tensor& rows, const std::vector<int>& idx, int m);
Tensor row(const Tensor& x, int i);  // rank-1 view copy of one row

Tensor sum_axis(const Tensor& x, int axis);  // rank-2 -> rank-1
Tensor mean_rows(const Tensor& x);           // column means of x[m,n] -> [n]

Tensor rmsnorm(const Tensor& x, const Tensor& gain, double eps = 1e-6);

Tensor softmax(const Tensor& x, int axis);
// mask is row-major over x's shape, nonzero = attendable; a fully masked row
// is a hard error; masked outputs are exactly zero
Tensor masked_softmax(const Tensor& x, const std::vector<uint8_t>& mask);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);

// mean negative log-likelihood over unmasked rows (mask nonzero = counted)
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                     const std::vector<uint8_t>& mask);
// squared L2 norm of (a - b), not averaged
Tensor mse(const Tensor& a, const Tensor& b);

Tensor detach(const Tensor& x);

// scores = q k^T / sqrt(dh), additive -inf-equivalent masking via the mask,
// row softmax, value mix.  Returns {mixed, row-stochastic probs}.
std::pair<Tensor, Tensor> masked_attention(const Tensor& q, const Tensor& k,
                                           const Tensor& v,
                                           const std::vector<uint8_t>& mask);

}  // namespace lmr
