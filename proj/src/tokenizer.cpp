#include "samtl/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

namespace samtl {

namespace {

// Two-letter element symbols accepted inside bracket atoms, plus the
// aromatic lowercase forms that appear in ring notation.
const std::set<std::string>& bracket_two_char_table() {
  static const std::set<std::string> table = {
      "He", "Li", "Be", "Ne", "Na", "Mg", "Al", "Si", "Cl", "Ar", "Ca", "Sc",
      "Ti", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As", "Se",
      "Br", "Kr", "Rb", "Sr", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag",
      "Cd", "In", "Sn", "Sb", "Te", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd",
      "Pm", "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf",
      "Ta", "Re", "Os", "Ir", "Pt", "Au", "Hg", "Tl", "Pb", "Bi", "Po", "At",
      "Rn", "Fr", "Ra", "Ac", "Th", "Pa", "Np", "Pu", "Am", "Cm", "Bk", "Cf",
      "Es", "Fm", "Md", "No", "Lr", "Rf", "Db", "Sg", "Bh", "Hs", "Mt", "Ds",
      "Rg", "Cn", "Nh", "Fl", "Mc", "Lv", "Ts", "Og",
      "se", "te", "as", "si"};
  return table;
}

// Outside brackets only the organic subset can appear bare.
const std::set<std::string>& organic_two_char_table() {
  static const std::set<std::string> table = {"Cl", "Br"};
  return table;
}

bool is_bond_char(char c) {
  switch (c) {
    case '-':
    case '=':
    case '#':
    case ':':
    case '/':
    case '\\':
    case '.':
    case '@':
    case '+':
    case '*':
    case '~':
    case '$':
      return true;
    default:
      return false;
  }
}

TokenKind classify(const std::string& text) {
  if (text.size() == 2) return TokenKind::two_char_atom;
  char c = text[0];
  if (c == 'H') return TokenKind::bond_or_signal;
  if (std::isalpha(static_cast<unsigned char>(c))) return TokenKind::atom;
  if (std::isdigit(static_cast<unsigned char>(c)) || c == '%')
    return TokenKind::ring_digit;
  if (c == '(' || c == ')') return TokenKind::branch;
  if (c == '[' || c == ']') return TokenKind::bracket;
  if (is_bond_char(c)) return TokenKind::bond_or_signal;
  return TokenKind::unknown;
}

}  // namespace

std::vector<Token> scan_smiles(const std::string& smiles,
                               const TokenizerOptions& opt) {
  std::vector<Token> tokens;
  tokens.reserve(smiles.size());
  int bracket_depth = 0;
  size_t i = 0;
  while (i < smiles.size()) {
    char c = smiles[i];
    if (c == '[') ++bracket_depth;
    if (c == ']' && bracket_depth > 0) --bracket_depth;
    if (opt.two_char_atoms && i + 1 < smiles.size()) {
      std::string pair = smiles.substr(i, 2);
      const auto& table = bracket_depth > 0 ? bracket_two_char_table()
                                            : organic_two_char_table();
      if (table.count(pair)) {
        tokens.push_back({pair, TokenKind::two_char_atom});
        i += 2;
        continue;
      }
    }
    std::string text(1, c);
    tokens.push_back({text, classify(text)});
    ++i;
  }
  return tokens;
}

Vocabulary::Vocabulary() {
  id_to_token_.push_back("");  // padding
  id_to_token_.push_back(kUnknownText);
  token_to_id_[""] = kPadId;
  token_to_id_[kUnknownText] = kUnknownId;
}

bool Vocabulary::contains(const std::string& text) const {
  return token_to_id_.count(text) > 0;
}

int Vocabulary::id_for(const std::string& text) const {
  auto it = token_to_id_.find(text);
  return it == token_to_id_.end() ? kUnknownId : it->second;
}

const std::string& Vocabulary::text_for(int id) const {
  if (id < 0 || id >= size())
    throw DataError("UnknownIdPresent: id " + std::to_string(id) +
                    " outside vocabulary of size " + std::to_string(size()));
  return id_to_token_[static_cast<size_t>(id)];
}

void Vocabulary::add(const std::string& text) {
  if (token_to_id_.count(text)) return;
  token_to_id_[text] = size();
  id_to_token_.push_back(text);
}

std::string Vocabulary::to_tsv() const {
  std::ostringstream out;
  for (int id = 0; id < size(); ++id)
    out << id_to_token_[static_cast<size_t>(id)] << '\t' << id << '\n';
  return out.str();
}

void Vocabulary::save_tsv(const std::string& path) const {
  write_text_file(path, to_tsv());
}

Vocabulary Vocabulary::from_tsv(const std::string& content) {
  Vocabulary v;
  std::istringstream in(content);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw DataError("vocab tsv: malformed line '" + line + "'");
    std::string text = line.substr(0, tab);
    int id = std::stoi(line.substr(tab + 1));
    if (id == kPadId || id == kUnknownId) continue;  // implied by constructor
    if (id != v.size())
      throw DataError("vocab tsv: non-contiguous id " + std::to_string(id));
    v.add(text);
  }
  return v;
}

Vocabulary Vocabulary::load_tsv(const std::string& path) {
  return from_tsv(read_text_file(path));
}

Vocabulary build_vocabulary(const std::vector<std::string>& corpus,
                            const TokenizerOptions& opt) {
  if (corpus.empty()) throw DataError("EmptyCorpus: no SMILES to build from");
  std::set<std::string> texts;
  for (const auto& s : corpus)
    for (const auto& t : scan_smiles(s, opt)) texts.insert(t.text);
  Vocabulary v;
  for (const auto& t : texts) v.add(t);  // std::set iterates sorted
  return v;
}

TokenSequence tokenize(const std::string& smiles, const Vocabulary& vocab,
                       int max_seq_len, const TokenizerOptions& opt,
                       bool allow_unknown) {
  if (smiles.empty()) throw DataError("EmptyInput: empty SMILES string");
  if (max_seq_len < 1) throw DataError("tokenize: max_seq_len must be >= 1");
  auto tokens = scan_smiles(smiles, opt);
  if (static_cast<int>(tokens.size()) > max_seq_len)
    throw DataError("SequenceTooLong: " + std::to_string(tokens.size()) +
                    " tokens > max " + std::to_string(max_seq_len) + " for '" +
                    smiles + "'");
  TokenSequence seq;
  seq.source = smiles;
  seq.true_len = static_cast<int>(tokens.size());
  seq.ids.assign(static_cast<size_t>(max_seq_len), Vocabulary::kPadId);
  seq.kinds.assign(static_cast<size_t>(max_seq_len), TokenKind::padding);
  for (size_t i = 0; i < tokens.size(); ++i) {
    int id = vocab.id_for(tokens[i].text);
    if (id == Vocabulary::kUnknownId && !allow_unknown)
      throw DataError("UnknownToken: '" + tokens[i].text +
                      "' not in vocabulary (SMILES '" + smiles + "')");
    seq.ids[i] = id;
    seq.kinds[i] = tokens[i].kind;
  }
  return seq;
}

std::string detokenize(const TokenSequence& seq, const Vocabulary& vocab) {
  std::string out;
  for (int i = 0; i < seq.true_len; ++i) {
    int id = seq.ids[static_cast<size_t>(i)];
    if (id == Vocabulary::kUnknownId)
      throw DataError("UnknownIdPresent: position " + std::to_string(i) +
                      " holds the unknown id");
    out += vocab.text_for(id);
  }
  return out;
}

}  // namespace samtl
