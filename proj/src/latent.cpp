#include "lmr/latent.hpp"

#include <atomic>
#include <chrono>
#include <mutex>
#include <thread>

#include "lmr/errors.hpp"
#include "lmr/ops.hpp"
#include "lmr/scene.hpp"
#include "lmr/vocab.hpp"

namespace lmr {

int LatentState::P() const {
  int p = 0;
  for (const Segment& s : segments) p += s.rows.dim(0);
  return p;
}

std::vector<SegTag> LatentState::tags() const {
  std::vector<SegTag> out;
  for (const Segment& s : segments)
    out.insert(out.end(), size_t(s.rows.dim(0)), s.tag);
  return out;
}

Tensor LatentState::context() const {
  std::vector<Tensor> parts;
  parts.reserve(segments.size());
  for (const Segment& s : segments) parts.push_back(s.rows);
  return parts.size() == 1 ? parts[0] : concat_rows(parts);
}

const Tensor& LatentState::visual_rows() const {
  for (const Segment& s : segments)
    if (s.tag == SegTag::visual) return s.rows;
  throw UsageError("state has no visual segment");
}

LatentState prefill(const Model& m, const Example& ex) {
  if (ex.question.empty()) throw UsageError("prefill: empty question");
  const ModelConfig& cfg = m.config();
  LatentState st;
  st.example_id = ex.id;
  st.image = render_scene(ex.scene, cfg.image_side);
  st.segments.push_back({SegTag::question, m.embed_tokens(ex.question)});
  st.segments.push_back({SegTag::visual, m.encode_image(st.image)});
  st.visited = VisitedSet(cfg.patches());
  return st;
}

ImplicitOutputs implicit_step(const Model& m, LatentState& st) {
  const ModelConfig& cfg = m.config();
  if (st.t >= cfg.latent_steps) throw UsageError("implicit phase already complete");
  ForwardOptions fo;
  fo.trace = true;
  fo.router = true;
  std::vector<SegTag> tg = st.tags();
  ForwardResult fr = m.forward(st.context(), tg, fo);
  st.ar_steps++;

  ImplicitOutputs out;
  out.z = row(fr.states.back(), st.P() - 1);
  out.replay = scfvr::replay(m, fr.attn, tg, st.visual_rows(), st.image, st.visited);
  if (!out.replay.empty)
    st.segments.push_back({SegTag::visual_latent, out.replay.b_tokens});
  st.segments.push_back({SegTag::thought_latent, reshape(out.z, {1, cfg.d})});
  st.t++;
  return out;
}

DecodeResult greedy_decode(const Model& m, LatentState& st, int max_tokens) {
  if (max_tokens < 1) throw UsageError("greedy_decode: max_tokens must be positive");
  DecodeResult res;
  for (int step = 0; step < max_tokens; ++step) {
    ForwardResult fr = m.forward(st.context(), st.tags(), {});
    st.ar_steps++;
    res.ar_steps++;
    std::vector<double> last = row(fr.logits, st.P() - 1).to_vec();
    int tok = 0;
    for (int i = 1; i < int(last.size()); ++i)
      if (last[size_t(i)] > last[size_t(tok)]) tok = i;
    res.tokens.push_back(tok);
    st.segments.push_back({SegTag::answer, m.embed_tokens({tok})});
    if (tok == vocab::EOA) return res;
  }
  res.truncated = true;
  return res;
}

DecodeResult decode_answer(const Model& m, LatentState& st, int max_tokens) {
  if (st.t != m.config().latent_steps)
    throw UsageError("decode_answer: implicit phase incomplete");
  return greedy_decode(m, st, max_tokens);
}

EvalMode eval_mode_from_name(const std::string& name) {
  if (name == "latent") return EvalMode::latent;
  if (name == "explicit") return EvalMode::explicit_cot;
  if (name == "nocot") return EvalMode::nocot;
  throw UsageError("unknown eval mode '" + name + "' (latent|explicit|nocot)");
}

const char* eval_mode_name(EvalMode m) {
  switch (m) {
    case EvalMode::latent: return "latent";
    case EvalMode::explicit_cot: return "explicit";
    case EvalMode::nocot: return "nocot";
  }
  return "?";
}

namespace {

std::vector<int> extract_answer(const std::vector<int>& decoded, EvalMode mode) {
  std::vector<int> toks = decoded;
  if (!toks.empty() && toks.back() == vocab::EOA) toks.pop_back();
  if (mode == EvalMode::explicit_cot) {
    size_t cut = 0;
    for (size_t i = 0; i < toks.size(); ++i)
      if (toks[i] == vocab::STEP) cut = i + 1;
    toks.erase(toks.begin(), toks.begin() + ptrdiff_t(cut));
  }
  return toks;
}

}  // namespace

EvalSummary evaluate(const Model& m, const std::vector<Example>& ds, const EvalOptions& opts) {
  if (ds.empty()) throw UsageError("evaluate: empty dataset");
  int max_decode = opts.max_decode;
  if (max_decode == 0) max_decode = opts.mode == EvalMode::explicit_cot ? 96 : 8;
  int threads = opts.threads < 1 ? 1 : opts.threads;
  if (threads > int(ds.size())) threads = int(ds.size());

  EvalSummary sum;
  sum.rows.resize(ds.size());
  std::vector<std::vector<CropLogRow>> crops(ds.size());
  std::atomic<size_t> next{0};
  std::exception_ptr err;
  std::mutex err_mu;

  auto worker = [&]() {
    for (;;) {
      size_t i = next.fetch_add(1);
      if (i >= ds.size()) return;
      try {
        const Example& ex = ds[i];
        auto t0 = std::chrono::steady_clock::now();
        LatentState st = prefill(m, ex);
        DecodeResult dec;
        if (opts.mode == EvalMode::latent) {
          for (int t = 0; t < m.config().latent_steps; ++t) {
            ImplicitOutputs io = implicit_step(m, st);
            if (!io.replay.empty)
              crops[i].push_back({ex.id, st.t, io.replay.win_r, io.replay.win_c,
                                  m.config().scfvr.window, io.replay.density,
                                  io.replay.indices});
          }
          dec = decode_answer(m, st, max_decode);
        } else {
          dec = greedy_decode(m, st, max_decode);
        }
        EvalRow& r = sum.rows[i];
        r.id = ex.id;
        r.ar_steps = st.ar_steps;
        r.truncated = dec.truncated;
        r.answer = extract_answer(dec.tokens, opts.mode);
        r.correct = r.answer == ex.answer;
        r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      } catch (...) {
        std::lock_guard<std::mutex> lk(err_mu);
        if (!err) err = std::current_exception();
        return;
      }
    }
  };

  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  if (err) std::rethrow_exception(err);

  for (const EvalRow& r : sum.rows) {
    sum.accuracy += r.correct ? 1.0 : 0.0;
    sum.mean_ar += double(r.ar_steps);
    sum.mean_seconds += r.seconds;
  }
  sum.accuracy /= double(ds.size());
  sum.mean_ar /= double(ds.size());
  sum.mean_seconds /= double(ds.size());
  if (opts.crop_log)
    for (std::vector<CropLogRow>& c : crops)
      opts.crop_log->insert(opts.crop_log->end(), c.begin(), c.end());
  return sum;
}

int gold_explicit_ar(const Example& ex) {
  return int(cot_tokens(ex).size()) + int(ex.answer.size()) + 1;
}

int gold_latent_ar(const Example& ex, int t_r) {
  return t_r + int(ex.answer.size()) + 1;
}

}  // namespace lmr
