#include "lmr/vocab.hpp"

#include <unordered_map>

#include "lmr/errors.hpp"

namespace lmr::vocab {
namespace {

const std::vector<std::string>& table() {
  static const std::vector<std::string> t = {
      "</a>", "<latent>", "<step>",
      // colors
      "red", "green", "blue", "yellow", "purple", "orange", "cyan", "white",
      // shapes
      "circle", "square", "triangle", "circles", "squares", "triangles",
      "shape", "shapes",
      // digits
      "0", "1", "2", "3", "4", "5", "6", "7", "8", "9",
      // relations
      "left", "right", "above", "below",
      // question and step words
      "what", "color", "is", "the", "of", "how", "many", "are", "in", "top",
      "bottom", "half", "we", "look", "for", "and", "find", "it", "at", "row",
      "column", "to", "cell", "directly", "that", "position", "holds", "a",
      "so", "answer", "there", "see", "move", "grid", "covers", "rows",
      "scene", "scanning", "region", "count", "this", "objects", "object",
      "its", "same", "then", "next", "no", "empty", "total", "number",
      "first", "second", "with", "them", "us", "middle", "exactly", "one",
      "only", "lies", "inside", "now", "from", "step", "gives",
  };
  return t;
}

const std::unordered_map<std::string, int>& index() {
  static const std::unordered_map<std::string, int> m = [] {
    std::unordered_map<std::string, int> r;
    const auto& t = table();
    for (int i = 0; i < (int)t.size(); ++i) r.emplace(t[i], i);
    return r;
  }();
  return m;
}

}  // namespace

int size() { return (int)table().size(); }

int id(const std::string& token) {
  auto it = index().find(token);
  if (it == index().end()) throw DataError("vocab: unknown token '" + token + "'");
  return it->second;
}

const std::string& token(int i) {
  if (i < 0 || i >= size()) throw DataError("vocab: token id " + std::to_string(i) + " out of range");
  return table()[i];
}

std::vector<int> ids(const std::string& s) {
  std::vector<int> out;
  size_t pos = 0;
  while (pos < s.size()) {
    size_t sp = s.find(' ', pos);
    if (sp == std::string::npos) sp = s.size();
    if (sp > pos) out.push_back(id(s.substr(pos, sp - pos)));
    pos = sp + 1;
  }
  return out;
}

std::string text(const std::vector<int>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ' ';
    out += token(v[i]);
  }
  return out;
}

int digit_id(int n) {
  if (n < 0 || n > 9) throw DataError("vocab: digit " + std::to_string(n) + " out of range");
  return id(std::string(1, char('0' + n)));
}

}  // namespace lmr::vocab
