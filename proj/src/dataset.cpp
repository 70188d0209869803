#include "lmr/dataset.hpp"

#include <atomic>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include "json.hpp"
#include "lmr/errors.hpp"
#include "lmr/rng.hpp"
#include "lmr/vocab.hpp"

namespace lmr {
namespace {

using nlohmann::json;

struct Tok {
  int what = vocab::id("what"), color = vocab::id("color"), is = vocab::id("is"),
      the = vocab::id("the"), shape = vocab::id("shape"), shapes = vocab::id("shapes"),
      of = vocab::id("of"), how = vocab::id("how"), many = vocab::id("many"),
      are = vocab::id("are"), in = vocab::id("in"), top = vocab::id("top"),
      bottom = vocab::id("bottom"), half = vocab::id("half");
  int rel[4] = {vocab::id("left"), vocab::id("right"), vocab::id("above"), vocab::id("below")};
};

const Tok& tk() {
  static const Tok t;
  return t;
}

constexpr int kRelDr[4] = {0, 0, -1, 1};
constexpr int kRelDc[4] = {-1, 1, 0, 0};

int rel_index(int tok_id) {
  for (int i = 0; i < 4; ++i)
    if (tk().rel[i] == tok_id) return i;
  throw DataError("dataset: token '" + vocab::token(tok_id) + "' is not a relation");
}

int color_of_token(int tok_id) { return color_from_name(vocab::token(tok_id)); }
Shape shape_of_token(int tok_id) { return shape_from_name(vocab::token(tok_id)); }
int color_tok(int color) { return vocab::id(color_name(color)); }
int shape_tok(Shape s) { return vocab::id(shape_name(s)); }

struct Parsed {
  int template_id = -1;
  int color = -1;      // queried color (count template)
  bool top = true;     // queried half
  Shape ushape{};      // referenced unique shape
  int rel1 = -1, rel2 = -1;  // relation indices in application order
};

Parsed parse_question(const std::vector<int>& q) {
  const Tok& t = tk();
  auto expect = [&](size_t i, int tok) {
    if (q[i] != tok)
      throw DataError("dataset: question word " + std::to_string(i) + " is '" +
                      vocab::token(q[i]) + "', expected '" + vocab::token(tok) + "'");
  };
  auto half_of = [&](int tok) {
    if (tok == t.top) return true;
    if (tok == t.bottom) return false;
    throw DataError("dataset: '" + vocab::token(tok) + "' is not a half");
  };
  Parsed p;
  if (q.size() == 9 && q[0] == t.how) {
    // how many <color> shapes are in the <half> half
    expect(1, t.many);
    p.color = color_of_token(q[2]);
    expect(3, t.shapes);
    expect(4, t.are);
    expect(5, t.in);
    expect(6, t.the);
    p.top = half_of(q[7]);
    expect(8, t.half);
    p.template_id = 0;
    return p;
  }
  if (q.size() >= 5 && q[0] == t.what) {
    expect(1, t.color);
    expect(2, t.is);
    expect(3, t.the);
    if (q.size() == 13 && q[4] == t.shape) {
      // what color is the shape <rel2> of the shape <rel1> of the <ushape>
      p.rel2 = rel_index(q[5]);
      expect(6, t.of);
      expect(7, t.the);
      expect(8, t.shape);
      p.rel1 = rel_index(q[9]);
      expect(10, t.of);
      expect(11, t.the);
      p.ushape = shape_of_token(q[12]);
      p.template_id = 2;
      return p;
    }
    if (q.size() == 9 && q[4] == t.shape) {
      // what color is the shape <rel> of the <ushape>
      p.rel1 = rel_index(q[5]);
      expect(6, t.of);
      expect(7, t.the);
      p.ushape = shape_of_token(q[8]);
      p.template_id = 1;
      return p;
    }
    if (q.size() == 9) {
      // what color is the <ushape> in the <half> half
      p.ushape = shape_of_token(q[4]);
      expect(5, t.in);
      expect(6, t.the);
      p.top = half_of(q[7]);
      expect(8, t.half);
      p.template_id = 3;
      return p;
    }
  }
  throw DataError("dataset: question does not match any template");
}

const SceneObject& unique_shape(const Scene& s, Shape u, int row_lo, int row_hi) {
  const SceneObject* hit = nullptr;
  for (const auto& o : s.objects) {
    if (o.shape != u || o.r < row_lo || o.r >= row_hi) continue;
    if (hit) throw DataError(std::string("dataset: scene holds more than one ") + shape_name(u));
    hit = &o;
  }
  if (!hit) throw DataError(std::string("dataset: scene holds no ") + shape_name(u));
  return *hit;
}

const SceneObject& neighbor(const Scene& s, int r, int c, int rel) {
  int nr = r + kRelDr[rel], nc = c + kRelDc[rel];
  const SceneObject* o = s.at(nr, nc);
  if (!o)
    throw DataError("dataset: no object at row " + std::to_string(nr) + " column " +
                    std::to_string(nc));
  return *o;
}

struct Tb {
  std::vector<int> v;
  Tb& w(const char* s) {
    v.push_back(vocab::id(s));
    return *this;
  }
  Tb& t(int tok) {
    v.push_back(tok);
    return *this;
  }
  Tb& d(int n) {
    v.push_back(vocab::digit_id(n));
    return *this;
  }
};

int half_tok(bool top) { return top ? tk().top : tk().bottom; }

std::vector<int> step_half_rows(bool top, int g) {
  int lo = top ? 0 : g / 2;
  return Tb{}.w("the").t(half_tok(top)).w("half").w("of").w("the").w("grid").w("covers")
      .w("rows").d(lo).w("to").d(lo + g / 2 - 1).w("of").w("the").w("scene").v;
}

std::vector<int> step_find_anchor(Shape u, int r, int c) {
  return Tb{}.w("we").w("look").w("for").w("the").t(shape_tok(u)).w("and").w("find").w("it")
      .w("at").w("row").d(r).w("column").d(c).v;
}

std::vector<int> step_move(int rel, int r, int c) {
  return Tb{}.w("the").w("cell").w("directly").t(tk().rel[rel]).w("of").w("that").w("position")
      .w("is").w("row").d(r).w("column").d(c).v;
}

std::vector<int> step_see_and_move(int color, Shape s, int rel, int r, int c) {
  return Tb{}.w("there").w("we").w("see").w("a").t(color_tok(color)).t(shape_tok(s)).w("and")
      .w("move").t(tk().rel[rel]).w("to").w("row").d(r).w("column").d(c).v;
}

std::vector<int> step_conclude(int color, Shape s) {
  return Tb{}.w("that").w("cell").w("holds").w("a").t(color_tok(color)).t(shape_tok(s)).w("so")
      .w("the").w("answer").w("is").t(color_tok(color)).v;
}

bool free_cell(Rng& rng, const Scene& s, int r_lo, int r_hi, int& r, int& c) {
  for (int guard = 0; guard < 200; ++guard) {
    int rr = rng.range(r_lo, r_hi), cc = rng.range(0, s.g - 1);
    if (!s.occupied(rr, cc)) {
      r = rr;
      c = cc;
      return true;
    }
  }
  return false;
}

// how many <color> shapes are in the <half> half  (2 steps)
bool build_count(Rng& rng, Example& ex) {
  Scene s;
  int n_obj = rng.range(3, 8);
  for (int i = 0; i < n_obj; ++i) {
    int r, c;
    if (!free_cell(rng, s, 0, s.g - 1, r, c)) return false;
    s.objects.push_back({r, c, Shape(rng.below(3)), int(rng.below(kNumColors))});
  }
  int color = int(rng.below(kNumColors));
  bool top = rng.below(2) == 0;
  int lo = top ? 0 : s.g / 2, hi = lo + s.g / 2;
  int count = 0;
  for (const auto& o : s.objects)
    if (o.color == color && o.r >= lo && o.r < hi) ++count;
  if (count > 7) return false;  // keep every answer inside an 8-choice digit set

  ex.scene = s;
  ex.question = Tb{}.w("how").w("many").t(color_tok(color)).w("shapes").w("are").w("in").w("the")
                    .t(half_tok(top)).w("half").v;
  ex.steps.push_back(step_half_rows(top, s.g));
  Tb s2 = Tb{}.w("scanning").w("that").w("region").w("we").w("find").d(count).t(color_tok(color));
  s2.w(count == 1 ? "shape" : "shapes");
  s2.w("so").w("the").w("count").w("is").d(count);
  ex.steps.push_back(s2.v);
  ex.answer = {vocab::digit_id(count)};
  return true;
}

// what color is the shape <rel> of the <ushape>  (3 steps)
bool build_one_hop(Rng& rng, Example& ex) {
  Scene s;
  Shape u = Shape(rng.below(3));
  int rel = int(rng.below(4));
  int dr = kRelDr[rel], dc = kRelDc[rel];
  int ar = rng.range(std::max(0, -dr), s.g - 1 - std::max(0, dr));
  int ac = rng.range(std::max(0, -dc), s.g - 1 - std::max(0, dc));
  int br = ar + dr, bc = ac + dc;
  Shape bs;
  do {
    bs = Shape(rng.below(3));
  } while (bs == u);
  int bcol = int(rng.below(kNumColors));
  s.objects.push_back({ar, ac, u, int(rng.below(kNumColors))});
  s.objects.push_back({br, bc, bs, bcol});
  int extras = rng.range(1, 6);
  for (int i = 0; i < extras; ++i) {
    int r, c;
    if (!free_cell(rng, s, 0, s.g - 1, r, c)) return false;
    Shape es;
    do {
      es = Shape(rng.below(3));
    } while (es == u);
    s.objects.push_back({r, c, es, int(rng.below(kNumColors))});
  }

  ex.scene = s;
  ex.question = Tb{}.w("what").w("color").w("is").w("the").w("shape").t(tk().rel[rel]).w("of")
                    .w("the").t(shape_tok(u)).v;
  ex.steps.push_back(step_find_anchor(u, ar, ac));
  ex.steps.push_back(step_move(rel, br, bc));
  ex.steps.push_back(step_conclude(bcol, bs));
  ex.answer = {color_tok(bcol)};
  return true;
}

// what color is the shape <rel2> of the shape <rel1> of the <ushape>  (4 steps)
bool build_two_hop(Rng& rng, Example& ex) {
  Scene s;
  Shape u = Shape(rng.below(3));
  int rel1 = int(rng.below(4));
  int rel2;
  do {
    rel2 = int(rng.below(4));
  } while (kRelDr[rel1] + kRelDr[rel2] == 0 && kRelDc[rel1] + kRelDc[rel2] == 0);
  int dr1 = kRelDr[rel1], dc1 = kRelDc[rel1];
  int dr2 = kRelDr[rel2], dc2 = kRelDc[rel2];
  int rlo = std::max({0, -dr1, -dr1 - dr2});
  int rhi = std::min({s.g - 1, s.g - 1 - dr1, s.g - 1 - dr1 - dr2});
  int clo = std::max({0, -dc1, -dc1 - dc2});
  int chi = std::min({s.g - 1, s.g - 1 - dc1, s.g - 1 - dc1 - dc2});
  int ar = rng.range(rlo, rhi), ac = rng.range(clo, chi);
  int br = ar + dr1, bc = ac + dc1, fr = br + dr2, fc = bc + dc2;
  Shape bs, fs;
  do {
    bs = Shape(rng.below(3));
  } while (bs == u);
  do {
    fs = Shape(rng.below(3));
  } while (fs == u);
  int bcol = int(rng.below(kNumColors)), fcol = int(rng.below(kNumColors));
  s.objects.push_back({ar, ac, u, int(rng.below(kNumColors))});
  s.objects.push_back({br, bc, bs, bcol});
  s.objects.push_back({fr, fc, fs, fcol});
  int extras = rng.range(0, 5);
  for (int i = 0; i < extras; ++i) {
    int r, c;
    if (!free_cell(rng, s, 0, s.g - 1, r, c)) return false;
    Shape es;
    do {
      es = Shape(rng.below(3));
    } while (es == u);
    s.objects.push_back({r, c, es, int(rng.below(kNumColors))});
  }

  ex.scene = s;
  ex.question = Tb{}.w("what").w("color").w("is").w("the").w("shape").t(tk().rel[rel2]).w("of")
                    .w("the").w("shape").t(tk().rel[rel1]).w("of").w("the").t(shape_tok(u)).v;
  ex.steps.push_back(step_find_anchor(u, ar, ac));
  ex.steps.push_back(step_move(rel1, br, bc));
  ex.steps.push_back(step_see_and_move(bcol, bs, rel2, fr, fc));
  ex.steps.push_back(step_conclude(fcol, fs));
  ex.answer = {color_tok(fcol)};
  return true;
}

// what color is the <ushape> in the <half> half  (3 steps)
bool build_unique_half(Rng& rng, Example& ex) {
  Scene s;
  Shape u = Shape(rng.below(3));
  bool top = rng.below(2) == 0;
  int lo = top ? 0 : s.g / 2;
  int ar = rng.range(lo, lo + s.g / 2 - 1), ac = rng.range(0, s.g - 1);
  int acol = int(rng.below(kNumColors));
  s.objects.push_back({ar, ac, u, acol});
  int extras = rng.range(2, 7);
  int other_lo = top ? s.g / 2 : 0;
  for (int i = 0; i < extras; ++i) {
    Shape es = Shape(rng.below(3));
    int r, c;
    // a second object of the queried shape must sit in the other half
    bool constrained = (es == u);
    if (!free_cell(rng, s, constrained ? other_lo : 0, constrained ? other_lo + s.g / 2 - 1 : s.g - 1,
                   r, c))
      return false;
    s.objects.push_back({r, c, es, int(rng.below(kNumColors))});
  }

  ex.scene = s;
  ex.question = Tb{}.w("what").w("color").w("is").w("the").t(shape_tok(u)).w("in").w("the")
                    .t(half_tok(top)).w("half").v;
  ex.steps.push_back(step_half_rows(top, s.g));
  ex.steps.push_back(Tb{}.w("we").w("look").w("there").w("and").w("find").w("the")
                         .t(shape_tok(u)).w("at").w("row").d(ar).w("column").d(ac).v);
  ex.steps.push_back(Tb{}.w("that").t(shape_tok(u)).w("is").t(color_tok(acol)).w("so").w("the")
                         .w("answer").w("is").t(color_tok(acol)).v);
  ex.answer = {color_tok(acol)};
  return true;
}

Example make_example(uint64_t root_seed, int64_t index) {
  uint64_t es = Rng::stream_seed(root_seed, "example", uint64_t(index));
  Rng rng(es);
  Example ex;
  ex.id = index;
  ex.seed = es;
  for (int attempt = 0; attempt < 1000; ++attempt) {
    ex.scene = Scene{};
    ex.question.clear();
    ex.steps.clear();
    ex.answer.clear();
    double u = rng.uniform();
    bool ok = u < 0.15   ? build_count(rng, ex)
              : u < 0.40 ? build_one_hop(rng, ex)
              : u < 0.85 ? build_two_hop(rng, ex)
                         : build_unique_half(rng, ex);
    if (ok) {
      ex.meta = derive_meta(ex.scene, ex.question);
      return ex;
    }
  }
  throw DataError("dataset: gave up building example " + std::to_string(index));
}

json scene_to_json(const Scene& s) {
  json objs = json::array();
  for (const auto& o : s.objects)
    objs.push_back({{"r", o.r}, {"c", o.c}, {"shape", shape_name(o.shape)},
                    {"color", color_name(o.color)}});
  return json{{"g", s.g}, {"objects", objs}};
}

void require_keys(const json& j, std::initializer_list<const char*> keys, const char* what) {
  if (!j.is_object()) throw DataError(std::string(what) + " is not an object");
  for (const char* k : keys)
    if (!j.contains(k)) throw DataError(std::string(what) + " is missing field '" + k + "'");
  if (j.size() != keys.size())
    for (auto it = j.begin(); it != j.end(); ++it) {
      bool known = false;
      for (const char* k : keys) known |= it.key() == k;
      if (!known)
        throw DataError(std::string(what) + " has unexpected field '" + it.key() + "'");
    }
}

std::vector<int> token_array(const json& j, const char* what) {
  if (!j.is_array()) throw DataError(std::string(what) + " is not an array");
  std::vector<int> out;
  for (const auto& e : j) {
    if (!e.is_number_integer()) throw DataError(std::string(what) + " holds a non-integer");
    int v = e.get<int>();
    if (v < 0 || v >= vocab::size())
      throw DataError(std::string(what) + " token id " + std::to_string(v) + " out of range");
    out.push_back(v);
  }
  return out;
}

Scene scene_from_json(const json& j) {
  require_keys(j, {"g", "objects"}, "scene");
  Scene s;
  s.g = j.at("g").get<int>();
  if (s.g < 2) throw DataError("scene grid too small");
  if (!j.at("objects").is_array()) throw DataError("scene objects is not an array");
  std::set<std::pair<int, int>> used;
  for (const auto& jo : j.at("objects")) {
    require_keys(jo, {"r", "c", "shape", "color"}, "scene object");
    SceneObject o;
    o.r = jo.at("r").get<int>();
    o.c = jo.at("c").get<int>();
    o.shape = shape_from_name(jo.at("shape").get<std::string>());
    o.color = color_from_name(jo.at("color").get<std::string>());
    if (o.r < 0 || o.r >= s.g || o.c < 0 || o.c >= s.g)
      throw DataError("scene object outside the grid");
    if (!used.insert({o.r, o.c}).second) throw DataError("two scene objects share a cell");
    s.objects.push_back(o);
  }
  if (s.objects.size() < 3 || s.objects.size() > 8)
    throw DataError("scene holds " + std::to_string(s.objects.size()) + " objects, expected 3-8");
  return s;
}

Example example_from_json(const json& j) {
  require_keys(j, {"id", "seed", "scene", "question", "steps", "answer"}, "example");
  Example ex;
  ex.id = j.at("id").get<int64_t>();
  ex.seed = j.at("seed").get<uint64_t>();
  ex.scene = scene_from_json(j.at("scene"));
  ex.question = token_array(j.at("question"), "question");
  if (!j.at("steps").is_array()) throw DataError("steps is not an array");
  for (const auto& js : j.at("steps")) {
    auto step = token_array(js, "step");
    if (step.empty() || step.size() > 16)
      throw DataError("step length " + std::to_string(step.size()) + " outside 1-16");
    ex.steps.push_back(std::move(step));
  }
  if (ex.steps.size() < 2 || ex.steps.size() > 4)
    throw DataError("example holds " + std::to_string(ex.steps.size()) + " steps, expected 2-4");
  ex.answer = token_array(j.at("answer"), "answer");
  if (ex.answer.empty()) throw DataError("answer is empty");
  ex.meta = derive_meta(ex.scene, ex.question);
  if ((int)ex.steps.size() != ex.meta.hops)
    throw DataError("step count does not match the question template");
  return ex;
}

const char* template_name(int id) {
  switch (id) {
    case 0: return "count_in_half";
    case 1: return "one_hop_color";
    case 2: return "two_hop_color";
    case 3: return "unique_in_half";
  }
  throw DataError("dataset: bad template id");
}

}  // namespace

std::vector<Example> generate_dataset(uint64_t seed, int n, int threads) {
  if (n < 1) throw UsageError("gen-data: n must be at least 1");
  std::vector<Example> ds;
  ds.resize(size_t(n));
  int nt = std::max(1, threads);
  if (nt == 1) {
    for (int i = 0; i < n; ++i) ds[size_t(i)] = make_example(seed, i);
    return ds;
  }
  std::atomic<int> next{0};
  std::exception_ptr err;
  std::mutex err_m;
  auto work = [&] {
    try {
      for (;;) {
        int i = next.fetch_add(1);
        if (i >= n) return;
        ds[size_t(i)] = make_example(seed, i);
      }
    } catch (...) {
      std::lock_guard<std::mutex> lock(err_m);
      if (!err) err = std::current_exception();
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < nt; ++t) pool.emplace_back(work);
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
  return ds;
}

void save_jsonl(const std::vector<Example>& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  for (const auto& ex : ds) {
    json j{{"id", ex.id},       {"seed", ex.seed},   {"scene", scene_to_json(ex.scene)},
           {"question", ex.question}, {"steps", ex.steps}, {"answer", ex.answer}};
    out << j.dump() << '\n';
  }
  if (!out) throw DataError("write to '" + path + "' failed");
}

std::vector<Example> load_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::vector<Example> ds;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      ds.push_back(example_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw DataError(path + ": line " + std::to_string(lineno) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(path + ": line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (ds.empty()) throw DataError(path + ": no examples");
  return ds;
}

int evaluate_answer(const Scene& s, const std::vector<int>& q) {
  Parsed p = parse_question(q);
  switch (p.template_id) {
    case 0: {
      int lo = p.top ? 0 : s.g / 2, hi = lo + s.g / 2;
      int count = 0;
      for (const auto& o : s.objects)
        if (o.color == p.color && o.r >= lo && o.r < hi) ++count;
      return vocab::digit_id(count);
    }
    case 1: {
      const auto& a = unique_shape(s, p.ushape, 0, s.g);
      const auto& b = neighbor(s, a.r, a.c, p.rel1);
      return color_tok(b.color);
    }
    case 2: {
      const auto& a = unique_shape(s, p.ushape, 0, s.g);
      const auto& b = neighbor(s, a.r, a.c, p.rel1);
      const auto& f = neighbor(s, b.r, b.c, p.rel2);
      return color_tok(f.color);
    }
    case 3: {
      int lo = p.top ? 0 : s.g / 2;
      const auto& a = unique_shape(s, p.ushape, lo, lo + s.g / 2);
      return color_tok(a.color);
    }
  }
  throw DataError("dataset: bad template id");
}

ExampleMeta derive_meta(const Scene& s, const std::vector<int>& q) {
  Parsed p = parse_question(q);
  ExampleMeta m;
  m.template_id = p.template_id;
  const std::pair<int, int> none{-1, -1};
  switch (p.template_id) {
    case 0:
      m.hops = 2;
      m.step_cells = {none, none};
      break;
    case 1: {
      const auto& a = unique_shape(s, p.ushape, 0, s.g);
      const auto& b = neighbor(s, a.r, a.c, p.rel1);
      m.hops = 3;
      m.relations = {tk().rel[p.rel1]};
      m.step_cells = {{a.r, a.c}, {b.r, b.c}, none};
      break;
    }
    case 2: {
      const auto& a = unique_shape(s, p.ushape, 0, s.g);
      const auto& b = neighbor(s, a.r, a.c, p.rel1);
      const auto& f = neighbor(s, b.r, b.c, p.rel2);
      m.hops = 4;
      m.relations = {tk().rel[p.rel1], tk().rel[p.rel2]};
      m.step_cells = {{a.r, a.c}, {b.r, b.c}, {f.r, f.c}, none};
      break;
    }
    case 3: {
      int lo = p.top ? 0 : s.g / 2;
      const auto& a = unique_shape(s, p.ushape, lo, lo + s.g / 2);
      m.hops = 3;
      m.step_cells = {none, {a.r, a.c}, none};
      break;
    }
  }
  return m;
}

std::vector<int> cot_tokens(const Example& ex) {
  std::vector<int> out;
  for (const auto& s : ex.steps) {
    out.insert(out.end(), s.begin(), s.end());
    out.push_back(vocab::STEP);
  }
  return out;
}

bool cell_in_some_window(int cell_r, int cell_c, int scene_g, int image_side, int model_g,
                         int window) {
  if (cell_r < 0 || cell_c < 0) return false;
  double sc = double(image_side) / scene_g;
  double mc = double(image_side) / model_g;
  double y0 = cell_r * sc, y1 = (cell_r + 1) * sc;
  double x0 = cell_c * sc, x1 = (cell_c + 1) * sc;
  for (int wr = 0; wr + window <= model_g; ++wr)
    for (int wc = 0; wc + window <= model_g; ++wc)
      if (wr * mc <= y0 && y1 <= (wr + window) * mc && wc * mc <= x0 && x1 <= (wc + window) * mc)
        return true;
  return false;
}

double step_relevance_fraction(const std::vector<Example>& ds, int image_side, int model_g,
                               int window) {
  int64_t named = 0, inside = 0;
  for (const auto& ex : ds)
    for (const auto& [r, c] : ex.meta.step_cells) {
      if (r < 0) continue;
      ++named;
      if (cell_in_some_window(r, c, ex.scene.g, image_side, model_g, window)) ++inside;
    }
  return named == 0 ? 1.0 : double(inside) / double(named);
}

std::string stats_stem(const std::string& jsonl_path) {
  const std::string suffix = ".jsonl";
  if (jsonl_path.size() > suffix.size() &&
      jsonl_path.compare(jsonl_path.size() - suffix.size(), suffix.size(), suffix) == 0)
    return jsonl_path.substr(0, jsonl_path.size() - suffix.size());
  return jsonl_path;
}

void write_stats_csvs(const std::vector<Example>& ds, const std::string& jsonl_path) {
  std::string stem = stats_stem(jsonl_path);
  auto write_hist = [&](const std::string& name, const std::string& key_col, const auto& hist) {
    std::string p = stem + "." + name + ".csv";
    std::ofstream out(p, std::ios::binary);
    if (!out) throw DataError("cannot open '" + p + "' for writing");
    out << key_col << ",count\n";
    for (const auto& [k, v] : hist) out << k << ',' << v << '\n';
    if (!out) throw DataError("write to '" + p + "' failed");
  };
  std::map<int, int64_t> cot, steps;
  std::map<std::string, int64_t> tmpl;
  for (const auto& ex : ds) {
    cot[int(cot_tokens(ex).size())]++;
    steps[int(ex.steps.size())]++;
    tmpl[template_name(ex.meta.template_id)]++;
  }
  write_hist("cot_length", "cot_tokens", cot);
  write_hist("step_count", "steps", steps);
  write_hist("template", "template", tmpl);
}

}  // namespace lmr
