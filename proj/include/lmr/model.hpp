#pragma once
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "lmr/image.hpp"
#include "lmr/ops.hpp"
#include "lmr/rds.hpp"

namespace lmr {

enum class SegTag : uint8_t { question, visual, visual_latent, thought_latent, cot, answer };
const char* seg_tag_name(SegTag t);

struct ScfvrConfig {
  int topk = 32;   // K visual tokens injected per replay step
  int window = 3;  // W crop window in patch cells
  double lambda = 1.0;
  bool count_visited = false;  // window density counts all visited, not just current picks
};

struct ModelConfig {
  int layers = 4, heads = 4, d = 128, rank = 8;
  int vocab = 0;  // 0 resolves to the built-in vocabulary size
  int patch_grid = 10, image_side = 80;
  int mlp_mult = 4;
  int max_seq = 512;
  int latent_steps = 4;  // T_r
  DType dtype = DType::f64;
  uint64_t seed = 1234;
  ScfvrConfig scfvr;
  RdsConfig rds;

  int patches() const { return patch_grid * patch_grid; }
  int head_dim() const { return d / heads; }
  int cell() const { return image_side / patch_grid; }
  int patch_dim() const { return 3 * cell() * cell(); }
  void validate() const;  // throws UsageError listing every violation
  std::map<std::string, std::string> to_kv() const;
  static ModelConfig from_kv(const std::map<std::string, std::string>& kv);
};

struct ForwardOptions {
  bool trace = false;   // record attention probabilities (base pass only)
  bool router = false;  // run the per-layer routing-depth pipeline
};

struct ForwardResult {
  Tensor hidden;  // [P,d] final hidden states after the output norm
  Tensor logits;  // [P,vocab]
  std::vector<Tensor> attn;    // trace on: layers*heads row-stochastic [P,P]
  std::vector<Tensor> states;  // residual stream: [0] embedded input, [l+1] layer l output
  std::vector<RdsLayerDepth> rds_rows;
};

class Model {
 public:
  explicit Model(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  std::vector<std::pair<std::string, Tensor>>& params() { return params_; }
  const std::vector<std::pair<std::string, Tensor>>& params() const { return params_; }
  Tensor param(const std::string& name) const;  // throws on unknown name
  void zero_grads();
  void freeze_base_qkvo();
  bool base_frozen() const;

  Tensor embed_tokens(const std::vector<int>& ids) const;
  Tensor encode_image(const Image& img) const;
  // content: [P,d] position-free embeddings; learned positions are added here
  ForwardResult forward(const Tensor& content, const std::vector<SegTag>& tags,
                        const ForwardOptions& opts) const;

  // One transformer block over selected rows only, attention restricted to the
  // selection (or full causal context when rds.attend_full), used for
  // refinement passes.  idx must be ascending original positions.
  Tensor refine_rows(int layer, const Tensor& h_prev, const std::vector<int>& idx) const;

  Tensor sr_head() const { return sr_w_; }

  void save_checkpoint(const std::string& path,
                       const std::map<std::string, std::string>& extra_kv = {},
                       const std::vector<std::pair<std::string, Tensor>>& extra_tensors = {}) const;

 private:
  struct Layer {
    Tensor ln1, ln2;
    Tensor base[4], lr_a[4], lr_b[4];  // q, k, v, o
    Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
    RouterWeights router;
    std::vector<Tensor> e;  // per-depth encodings
  };

  Tensor eff_proj(int l, int which) const;  // base + a.b, built on the tape
  Tensor attend(int l, const Tensor& q_rows, const Tensor& kv_rows,
                const std::vector<uint8_t>& mask, std::vector<Tensor>* trace) const;
  Tensor mlp_half(int l, const Tensor& x1) const;
  Tensor block(int l, const Tensor& x, const std::vector<uint8_t>& mask,
               std::vector<Tensor>* trace) const;

  ModelConfig cfg_;
  std::vector<std::pair<std::string, Tensor>> params_;
  std::map<std::string, Tensor> by_name_;
  Tensor tok_emb_, pos_emb_, patch_w_, patch_b_, final_ln_, unembed_, sr_w_;
  std::vector<Layer> layers_;
};

struct CheckpointData {
  std::map<std::string, std::string> kv;
  std::vector<std::pair<std::string, Tensor>> tensors;
  const Tensor* find(const std::string& name) const;
};

CheckpointData read_checkpoint(const std::string& path);
Model load_model(const CheckpointData& ckpt);  // params must match bit-exactly

}  // namespace lmr
