#pragma once

#include <map>
#include <string>
#include <vector>

#include "samtl/common.hpp"

namespace samtl {

enum class TokenKind {
  atom,
  two_char_atom,
  bond_or_signal,
  ring_digit,
  branch,
  bracket,
  padding,
  unknown
};

struct Token {
  std::string text;
  TokenKind kind = TokenKind::unknown;
};

struct TokenizerOptions {
  // When false every character becomes its own token (the ablation
  // variant); two-letter element symbols are then split apart.
  bool two_char_atoms = true;
};

// Greedy left-to-right scan. Outside brackets only the organic-subset
// pairs Cl/Br merge; inside brackets any two-letter element symbol
// merges (plus aromatic se/te/as/si). "H" is tagged as a bond signal.
std::vector<Token> scan_smiles(const std::string& smiles,
                               const TokenizerOptions& opt = {});

class Vocabulary {
 public:
  static constexpr int kPadId = 0;
  static constexpr int kUnknownId = 1;
  static constexpr const char* kUnknownText = "<unk>";

  Vocabulary();

  int size() const { return static_cast<int>(id_to_token_.size()); }
  bool contains(const std::string& text) const;
  // kUnknownId for texts not in the vocabulary.
  int id_for(const std::string& text) const;
  const std::string& text_for(int id) const;

  void add(const std::string& text);

  // One token<TAB>id line per entry, sorted by id. The padding entry
  // serializes as an empty text field.
  std::string to_tsv() const;
  void save_tsv(const std::string& path) const;
  static Vocabulary from_tsv(const std::string& content);
  static Vocabulary load_tsv(const std::string& path);

 private:
  std::map<std::string, int> token_to_id_;
  std::vector<std::string> id_to_token_;
};

// Deterministic: corpus tokens are sorted lexicographically before id
// assignment, after padding (0) and unknown (1).
Vocabulary build_vocabulary(const std::vector<std::string>& corpus,
                            const TokenizerOptions& opt = {});

struct TokenSequence {
  std::vector<int> ids;           // length max_seq_len, zero-padded
  std::vector<TokenKind> kinds;   // aligned with ids; padding beyond true_len
  int true_len = 0;
  std::string source;
};

// allow_unknown=false makes out-of-vocabulary tokens an error
// (training-time contract); otherwise they map to the unknown id.
TokenSequence tokenize(const std::string& smiles, const Vocabulary& vocab,
                       int max_seq_len, const TokenizerOptions& opt = {},
                       bool allow_unknown = true);

std::string detokenize(const TokenSequence& seq, const Vocabulary& vocab);

}  // namespace samtl
