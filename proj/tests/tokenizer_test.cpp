#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>

#include "samtl/data.hpp"
#include "samtl/tokenizer.hpp"

using namespace samtl;

namespace {

std::vector<std::string> texts(const std::vector<Token>& tokens) {
  std::vector<std::string> out;
  for (const auto& t : tokens) out.push_back(t.text);
  return out;
}

std::string data_file(const std::string& name) {
  const char* dir = std::getenv("SAMTL_DATA_DIR");
  std::filesystem::path p = dir ? dir : "data";
  return (p / name).string();
}

}  // namespace

TEST_CASE("two-character atoms merge under the greedy scan") {
  auto toks = scan_smiles("CCC(=O)Nc1ccc(Cl)c(Cl)c1");
  CHECK(toks.size() == 22);
  CHECK(toks[14].text == "Cl");
  CHECK(toks[14].kind == TokenKind::two_char_atom);
  CHECK(toks[18].text == "Cl");
  for (const auto& t : toks) CHECK(t.text != "l");
}

TEST_CASE("bracket context controls the two-character table") {
  CHECK(texts(scan_smiles("[Na+]")) ==
        std::vector<std::string>{"[", "Na", "+", "]"});
  // outside brackets S + aromatic c, inside brackets scandium
  CHECK(texts(scan_smiles("Sc")) == std::vector<std::string>{"S", "c"});
  CHECK(texts(scan_smiles("[Sc]")) == std::vector<std::string>{"[", "Sc", "]"});
  CHECK(texts(scan_smiles("C[Se]C")) ==
        std::vector<std::string>{"C", "[", "Se", "]", "C"});
  CHECK(texts(scan_smiles("c1cc[se]c1")) ==
        std::vector<std::string>{"c", "1", "c", "c", "[", "se", "]", "c", "1"});
}

TEST_CASE("H is a bond signal and @@ stays two tokens") {
  auto toks = scan_smiles("[nH]");
  REQUIRE(toks.size() == 4);
  CHECK(texts(toks) == std::vector<std::string>{"[", "n", "H", "]"});
  CHECK(toks[2].kind == TokenKind::bond_or_signal);

  auto stereo = scan_smiles("[C@@H]");
  CHECK(texts(stereo) ==
        std::vector<std::string>{"[", "C", "@", "@", "H", "]"});
  CHECK(stereo[2].kind == TokenKind::bond_or_signal);
}

TEST_CASE("two-character mode off splits every character") {
  TokenizerOptions opt;
  opt.two_char_atoms = false;
  CHECK(texts(scan_smiles("CCl", opt)) ==
        std::vector<std::string>{"C", "C", "l"});
}

TEST_CASE("vocabulary construction is deterministic and minimal") {
  Vocabulary v = build_vocabulary({"CC"});
  CHECK(v.size() == 3);
  CHECK(v.id_for("") == Vocabulary::kPadId);
  CHECK(v.id_for("<unk>") == Vocabulary::kUnknownId);
  CHECK(v.id_for("C") == 2);

  Vocabulary v2 = build_vocabulary({"CCl"});
  CHECK(v2.contains("C"));
  CHECK(v2.contains("Cl"));
  CHECK_FALSE(v2.contains("l"));

  CHECK_THROWS_AS(build_vocabulary({}), DataError);
}

TEST_CASE("vocabulary round-trips through tsv bytes identically") {
  std::vector<std::string> corpus = {"CCO", "c1ccccc1", "C[C@@H](N)C(=O)O",
                                     "ClCCl", "[Na+].[Cl-]"};
  Vocabulary a = build_vocabulary(corpus);
  Vocabulary b = build_vocabulary(corpus);
  CHECK(a.to_tsv() == b.to_tsv());
  Vocabulary c = Vocabulary::from_tsv(a.to_tsv());
  CHECK(c.to_tsv() == a.to_tsv());
}

TEST_CASE("tokenize pads, tracks true_len and enforces bounds") {
  Vocabulary v = build_vocabulary({"C"});
  TokenSequence seq = tokenize("C", v, 4);
  CHECK(seq.ids == std::vector<int>{v.id_for("C"), 0, 0, 0});
  CHECK(seq.true_len == 1);
  CHECK(seq.kinds[1] == TokenKind::padding);
  for (int i = 0; i < 4; ++i)
    CHECK((seq.ids[static_cast<size_t>(i)] == 0) == (i >= seq.true_len));

  CHECK_THROWS_WITH_AS(tokenize("CCCCC", v, 4), doctest::Contains("SequenceTooLong"),
                       DataError);
  CHECK_THROWS_WITH_AS(tokenize("", v, 4), doctest::Contains("EmptyInput"),
                       DataError);
}

TEST_CASE("unknown handling differs between train and predict modes") {
  Vocabulary v = build_vocabulary({"CC"});
  TokenSequence seq = tokenize("CN", v, 8, {}, /*allow_unknown=*/true);
  CHECK(seq.ids[1] == Vocabulary::kUnknownId);
  CHECK_THROWS_AS(tokenize("CN", v, 8, {}, /*allow_unknown=*/false), DataError);
  CHECK_THROWS_WITH_AS(detokenize(seq, v), doctest::Contains("UnknownIdPresent"),
                       DataError);
}

TEST_CASE("round-trip identity on hand cases") {
  std::vector<std::string> cases = {
      "c1ccccc1", "CCC(=O)Nc1ccc(Cl)c(Cl)c1", "C[C@@H](N)C(=O)O",
      "[Na+].[Cl-]", "O=[N+]([O-])c1ccccc1", "BrCC(Br)C%10CC%10"};
  Vocabulary v = build_vocabulary(cases);
  for (const auto& s : cases) {
    TokenSequence seq = tokenize(s, v, 128);
    CHECK(detokenize(seq, v) == s);
  }
}

TEST_CASE("round-trip property over a real dataset sample") {
  std::string path = data_file("clintox.csv");
  if (!std::filesystem::exists(path)) return;  // full sweep in acceptance
  DatasetTable table = load_csv(path, "smiles", {"FDA_APPROVED", "CT_TOX"});
  std::vector<std::string> corpus;
  for (const auto& r : table.records) corpus.push_back(r.smiles);
  Vocabulary v = build_vocabulary(corpus);
  int checked = 0;
  for (size_t i = 0; i < corpus.size(); i += 7) {
    TokenSequence seq = tokenize(corpus[i], v, 400);
    CHECK(detokenize(seq, v) == corpus[i]);
    ++checked;
  }
  CHECK(checked > 100);
}
