#include "samtl/molgraph.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <set>
#include <sstream>

namespace samtl {

namespace {

bool is_upper(char c) { return c >= 'A' && c <= 'Z'; }
bool is_lower(char c) { return c >= 'a' && c <= 'z'; }
bool is_digit(char c) { return c >= '0' && c <= '9'; }

const std::set<std::string>& organic_subset() {
  static const std::set<std::string> s = {"B", "C", "N", "O", "P",
                                          "S", "F", "Cl", "Br", "I"};
  return s;
}

const std::set<std::string>& aromatic_organic() {
  static const std::set<std::string> s = {"b", "c", "n", "o", "p", "s"};
  return s;
}

struct RingOpening {
  int atom = -1;
  bool explicit_order = false;
  BondOrder order = BondOrder::single;
};

struct Parser {
  const std::string& s;
  size_t i = 0;
  MolGraph g;
  std::vector<int> branch_stack;
  std::map<int, RingOpening> open_rings;
  int prev_atom = -1;
  bool pending_explicit = false;
  BondOrder pending_order = BondOrder::single;
  bool after_dot = false;

  explicit Parser(const std::string& str) : s(str) {}

  [[noreturn]] void fail(const std::string& name, const std::string& what) {
    throw DataError(name + ": " + what + " in '" + s + "' at position " +
                    std::to_string(i));
  }

  void add_bond(int a, int b, bool explicit_order, BondOrder order) {
    if (a == b) fail("SmilesSyntax", "bond to self");
    for (const auto& bond : g.bonds)
      if ((bond.a == a && bond.b == b) || (bond.a == b && bond.b == a))
        fail("SmilesSyntax", "duplicate bond");
    if (!explicit_order) {
      bool both_aromatic = g.atoms[static_cast<size_t>(a)].aromatic &&
                           g.atoms[static_cast<size_t>(b)].aromatic;
      order = both_aromatic ? BondOrder::aromatic : BondOrder::single;
    }
    g.bonds.push_back({a, b, order});
  }

  void attach(int atom_idx) {
    if (prev_atom >= 0 && !after_dot)
      add_bond(prev_atom, atom_idx, pending_explicit, pending_order);
    pending_explicit = false;
    pending_order = BondOrder::single;
    after_dot = false;
    prev_atom = atom_idx;
  }

  void ring_closure(int digit) {
    auto it = open_rings.find(digit);
    if (it == open_rings.end()) {
      RingOpening o;
      o.atom = prev_atom;
      o.explicit_order = pending_explicit;
      o.order = pending_order;
      open_rings[digit] = o;
    } else {
      RingOpening o = it->second;
      open_rings.erase(it);
      bool explicit_order = o.explicit_order || pending_explicit;
      BondOrder order = o.explicit_order ? o.order : pending_order;
      add_bond(o.atom, prev_atom, explicit_order, order);
    }
    pending_explicit = false;
    pending_order = BondOrder::single;
  }

  int push_atom(const std::string& element, bool aromatic, int charge) {
    Atom a;
    a.element = element;
    a.aromatic = aromatic;
    a.charge = charge;
    g.atoms.push_back(a);
    return static_cast<int>(g.atoms.size()) - 1;
  }

  void parse_bracket_atom() {
    size_t start = i;
    ++i;  // consume '['
    while (i < s.size() && is_digit(s[i])) ++i;  // isotope, discarded
    if (i >= s.size()) fail("BadBracketAtom", "unterminated bracket");
    std::string element;
    bool aromatic = false;
    if (is_upper(s[i])) {
      element += s[i++];
      if (i < s.size() && is_lower(s[i])) element += s[i++];
    } else if (is_lower(s[i])) {
      aromatic = true;
      element += s[i++];
      // aromatic se/te/as/si
      if (i < s.size() && is_lower(s[i]) && s[i] != 'c' && s[i] != 'n' &&
          s[i] != 'o' && s[i] != 'p' && s[i] != 's' && s[i] != 'b') {
        std::string two = element + s[i];
        if (two == "se" || two == "te" || two == "as" || two == "si") {
          element = two;
          ++i;
        }
      }
      element[0] = static_cast<char>(std::toupper(element[0]));
    } else if (s[i] == '*') {
      element = "*";
      ++i;
    } else {
      fail("BadBracketAtom", "expected element symbol");
    }
    int charge = 0;
    while (i < s.size() && s[i] != ']') {
      char c = s[i];
      if (c == '@') {
        ++i;  // chirality, discarded
      } else if (c == 'H') {
        ++i;
        while (i < s.size() && is_digit(s[i])) ++i;  // implicit H count
      } else if (c == '+' || c == '-') {
        int sign = c == '+' ? 1 : -1;
        ++i;
        if (i < s.size() && is_digit(s[i])) {
          int mag = 0;
          while (i < s.size() && is_digit(s[i])) mag = mag * 10 + (s[i++] - '0');
          charge += sign * mag;
        } else {
          charge += sign;
          while (i < s.size() && s[i] == c) {  // ++ / -- style
            charge += sign;
            ++i;
          }
        }
      } else if (c == ':') {
        ++i;  // atom class, discarded
        while (i < s.size() && is_digit(s[i])) ++i;
      } else {
        fail("BadBracketAtom",
             std::string("unexpected character '") + c + "' in bracket");
      }
    }
    if (i >= s.size() || s[i] != ']')
      fail("BadBracketAtom",
           "unterminated bracket starting at position " + std::to_string(start));
    ++i;  // consume ']'
    attach(push_atom(element, aromatic, charge));
  }

  MolGraph run() {
    if (s.empty()) throw DataError("EmptyInput: empty SMILES string");
    while (i < s.size()) {
      char c = s[i];
      if (c == '[') {
        parse_bracket_atom();
      } else if (is_upper(c)) {
        std::string element(1, c);
        if (i + 1 < s.size() && is_lower(s[i + 1]) &&
            organic_subset().count(element + s[i + 1]))
          element += s[i + 1];
        if (!organic_subset().count(element))
          fail("SmilesSyntax", "atom '" + element + "' requires brackets");
        i += element.size();
        attach(push_atom(element, false, 0));
      } else if (is_lower(c)) {
        std::string element(1, c);
        if (!aromatic_organic().count(element))
          fail("SmilesSyntax", "aromatic atom '" + element + "' requires brackets");
        ++i;
        std::string upper(1, static_cast<char>(std::toupper(c)));
        attach(push_atom(upper, true, 0));
      } else if (c == '(') {
        if (prev_atom < 0) fail("UnbalancedParens", "branch before any atom");
        branch_stack.push_back(prev_atom);
        ++i;
      } else if (c == ')') {
        if (branch_stack.empty()) fail("UnbalancedParens", "unmatched ')'");
        prev_atom = branch_stack.back();
        branch_stack.pop_back();
        ++i;
      } else if (is_digit(c)) {
        if (prev_atom < 0) fail("SmilesSyntax", "ring digit before any atom");
        ring_closure(c - '0');
        ++i;
      } else if (c == '%') {
        if (i + 2 >= s.size() || !is_digit(s[i + 1]) || !is_digit(s[i + 2]))
          fail("SmilesSyntax", "'%' needs two digits");
        if (prev_atom < 0) fail("SmilesSyntax", "ring digit before any atom");
        ring_closure((s[i + 1] - '0') * 10 + (s[i + 2] - '0'));
        i += 3;
      } else if (c == '-') {
        pending_explicit = true;
        pending_order = BondOrder::single;
        ++i;
      } else if (c == '=') {
        pending_explicit = true;
        pending_order = BondOrder::double_bond;
        ++i;
      } else if (c == '#') {
        pending_explicit = true;
        pending_order = BondOrder::triple;
        ++i;
      } else if (c == ':') {
        pending_explicit = true;
        pending_order = BondOrder::aromatic;
        ++i;
      } else if (c == '/' || c == '\\') {
        pending_explicit = true;  // stereo bonds reduce to single
        pending_order = BondOrder::single;
        ++i;
      } else if (c == '.') {
        after_dot = true;
        prev_atom = -1;
        ++i;
      } else {
        fail("SmilesSyntax", std::string("unexpected character '") + c + "'");
      }
    }
    if (!branch_stack.empty()) fail("UnbalancedParens", "unclosed '('");
    if (!open_rings.empty())
      fail("UnclosedRingBond", std::to_string(open_rings.size()) +
                                   " ring bond(s) left open");
    return g;
  }
};

std::vector<std::vector<int>> adjacency(const MolGraph& g) {
  std::vector<std::vector<int>> adj(g.atoms.size());
  for (const auto& b : g.bonds) {
    adj[static_cast<size_t>(b.a)].push_back(b.b);
    adj[static_cast<size_t>(b.b)].push_back(b.a);
  }
  return adj;
}

}  // namespace

MolGraph parse_smiles(const std::string& s) { return Parser(s).run(); }

std::vector<int> scaffold_atom_indices(const MolGraph& g) {
  auto adj = adjacency(g);
  std::vector<int> degree(g.atoms.size());
  for (size_t a = 0; a < adj.size(); ++a)
    degree[a] = static_cast<int>(adj[a].size());
  std::vector<bool> removed(g.atoms.size(), false);
  std::vector<int> queue;
  for (size_t a = 0; a < adj.size(); ++a)
    if (degree[a] <= 1) queue.push_back(static_cast<int>(a));
  while (!queue.empty()) {
    int a = queue.back();
    queue.pop_back();
    if (removed[static_cast<size_t>(a)]) continue;
    removed[static_cast<size_t>(a)] = true;
    for (int nb : adj[static_cast<size_t>(a)]) {
      if (removed[static_cast<size_t>(nb)]) continue;
      if (--degree[static_cast<size_t>(nb)] <= 1) queue.push_back(nb);
    }
  }
  std::vector<int> kept;
  for (size_t a = 0; a < g.atoms.size(); ++a)
    if (!removed[a]) kept.push_back(static_cast<int>(a));
  return kept;
}

MolGraph murcko_scaffold(const MolGraph& g) {
  auto kept = scaffold_atom_indices(g);
  std::vector<int> remap(g.atoms.size(), -1);
  MolGraph out;
  for (int idx : kept) {
    remap[static_cast<size_t>(idx)] = static_cast<int>(out.atoms.size());
    out.atoms.push_back(g.atoms[static_cast<size_t>(idx)]);
  }
  for (const auto& b : g.bonds) {
    int a = remap[static_cast<size_t>(b.a)];
    int c = remap[static_cast<size_t>(b.b)];
    if (a >= 0 && c >= 0) out.bonds.push_back({a, c, b.order});
  }
  return out;
}

std::string scaffold_key(const MolGraph& g) {
  if (g.empty()) return "ACYCLIC";
  size_t n = g.atoms.size();
  auto adj = adjacency(g);

  // Initial invariant: element, aromaticity, charge, degree.
  std::vector<std::string> label(n);
  for (size_t a = 0; a < n; ++a) {
    const Atom& atom = g.atoms[a];
    label[a] = atom.element + (atom.aromatic ? ":a" : ":k") + ":" +
               std::to_string(atom.charge) + ":" +
               std::to_string(adj[a].size());
  }
  auto rank_of = [&](const std::vector<std::string>& labels) {
    std::vector<std::string> sorted = labels;
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    std::vector<int> rank(labels.size());
    for (size_t a = 0; a < labels.size(); ++a)
      rank[a] = static_cast<int>(
          std::lower_bound(sorted.begin(), sorted.end(), labels[a]) -
          sorted.begin());
    return std::pair(rank, sorted.size());
  };
  auto [rank, classes] = rank_of(label);
  for (size_t iter = 0; iter < n; ++iter) {
    std::vector<std::string> refined(n);
    for (size_t a = 0; a < n; ++a) {
      std::vector<int> nb;
      for (int x : adj[a]) nb.push_back(rank[static_cast<size_t>(x)]);
      std::sort(nb.begin(), nb.end());
      std::ostringstream ss;
      ss << rank[a];
      for (int x : nb) ss << ',' << x;
      refined[a] = ss.str();
    }
    auto [next_rank, next_classes] = rank_of(refined);
    if (next_classes == classes) break;
    rank = next_rank;
    classes = next_classes;
  }

  // Canonical order: refined rank, residual ties by stable index.
  std::vector<int> order(n);
  for (size_t a = 0; a < n; ++a) order[a] = static_cast<int>(a);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return rank[static_cast<size_t>(a)] <
                                              rank[static_cast<size_t>(b)]; });
  std::vector<int> position(n);
  for (size_t p = 0; p < n; ++p)
    position[static_cast<size_t>(order[p])] = static_cast<int>(p);

  std::ostringstream key;
  key << n << ';';
  for (size_t p = 0; p < n; ++p) {
    const Atom& atom = g.atoms[static_cast<size_t>(order[p])];
    key << atom.element << (atom.aromatic ? 'a' : 'k');
    if (atom.charge != 0) key << (atom.charge > 0 ? '+' : '-')
                              << std::abs(atom.charge);
    key << ',';
  }
  key << ';';
  std::vector<std::string> edges;
  for (const auto& b : g.bonds) {
    int a = position[static_cast<size_t>(b.a)];
    int c = position[static_cast<size_t>(b.b)];
    if (a > c) std::swap(a, c);
    const char* ord = b.order == BondOrder::single       ? "1"
                      : b.order == BondOrder::double_bond ? "2"
                      : b.order == BondOrder::triple      ? "3"
                                                          : "ar";
    edges.push_back(std::to_string(a) + "-" + std::to_string(c) + ":" + ord);
  }
  std::sort(edges.begin(), edges.end());
  for (const auto& e : edges) key << e << ',';
  return key.str();
}

}  // namespace samtl
