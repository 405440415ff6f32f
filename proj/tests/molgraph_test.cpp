#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "samtl/molgraph.hpp"

using namespace samtl;

namespace {

int count_order(const MolGraph& g, BondOrder o) {
  int n = 0;
  for (const auto& b : g.bonds) n += b.order == o ? 1 : 0;
  return n;
}

// cyclomatic ring count for a connected parse
int ring_count(const MolGraph& g) {
  return static_cast<int>(g.bonds.size()) -
         static_cast<int>(g.atoms.size()) + 1;
}

}  // namespace

TEST_CASE("small chains and rings parse to the expected graphs") {
  MolGraph g = parse_smiles("CC");
  CHECK(g.atoms.size() == 2);
  REQUIRE(g.bonds.size() == 1);
  CHECK(g.bonds[0].order == BondOrder::single);

  MolGraph benzene = parse_smiles("c1ccccc1");
  CHECK(benzene.atoms.size() == 6);
  CHECK(benzene.bonds.size() == 6);
  CHECK(count_order(benzene, BondOrder::aromatic) == 6);
  for (const auto& a : benzene.atoms) CHECK(a.aromatic);
  CHECK(ring_count(benzene) == 1);
}

TEST_CASE("the dichloro anilide parses with hand-counted atoms") {
  MolGraph g = parse_smiles("CCC(=O)Nc1ccc(Cl)c(Cl)c1");
  CHECK(g.atoms.size() == 13);  // 3 C chain, O, N, 6 ring c, 2 Cl
  CHECK(g.bonds.size() == 13);
  CHECK(ring_count(g) == 1);
  int cl = 0;
  for (const auto& a : g.atoms) cl += a.element == "Cl" ? 1 : 0;
  CHECK(cl == 2);
  CHECK(count_order(g, BondOrder::double_bond) == 1);
}

TEST_CASE("bracket atoms carry charge and discard decorations") {
  MolGraph g = parse_smiles("[NH4+]");
  REQUIRE(g.atoms.size() == 1);
  CHECK(g.atoms[0].element == "N");
  CHECK(g.atoms[0].charge == 1);

  CHECK(parse_smiles("[Fe+2]").atoms[0].charge == 2);
  CHECK(parse_smiles("[Fe++]").atoms[0].charge == 2);
  CHECK(parse_smiles("[O-]").atoms[0].charge == -1);
  CHECK(parse_smiles("[13CH4]").atoms[0].element == "C");
  CHECK(parse_smiles("[C@@H](C)(C)C").atoms[0].element == "C");
}

TEST_CASE("disconnected components and explicit bonds") {
  MolGraph salt = parse_smiles("[Na+].[Cl-]");
  CHECK(salt.atoms.size() == 2);
  CHECK(salt.bonds.empty());

  MolGraph yne = parse_smiles("C#N");
  CHECK(count_order(yne, BondOrder::triple) == 1);

  MolGraph ring2 = parse_smiles("C1CC1C2CC2");
  CHECK(ring2.atoms.size() == 6);
  CHECK(ring2.bonds.size() == 7);
}

TEST_CASE("parser reports named errors") {
  CHECK_THROWS_WITH_AS(parse_smiles("C(C"), doctest::Contains("UnbalancedParens"),
                       DataError);
  CHECK_THROWS_WITH_AS(parse_smiles("C)C"), doctest::Contains("UnbalancedParens"),
                       DataError);
  CHECK_THROWS_WITH_AS(parse_smiles("C1CC"), doctest::Contains("UnclosedRingBond"),
                       DataError);
  CHECK_THROWS_WITH_AS(parse_smiles("[C"), doctest::Contains("BadBracketAtom"),
                       DataError);
  CHECK_THROWS_WITH_AS(parse_smiles("[]"), doctest::Contains("BadBracketAtom"),
                       DataError);
  CHECK_THROWS_AS(parse_smiles("C&C"), DataError);
  CHECK_THROWS_AS(parse_smiles("C11"), DataError);
}

TEST_CASE("scaffold pruning keeps rings and linkers only") {
  MolGraph toluene = murcko_scaffold(parse_smiles("Cc1ccccc1"));
  CHECK(toluene.atoms.size() == 6);
  CHECK(toluene.bonds.size() == 6);

  MolGraph benzene = parse_smiles("c1ccccc1");
  MolGraph fixpoint = murcko_scaffold(benzene);
  CHECK(fixpoint.atoms.size() == 6);
  CHECK(scaffold_key(fixpoint) == scaffold_key(benzene));

  CHECK(murcko_scaffold(parse_smiles("CCCC")).empty());

  // biphenyl-style linker survives
  MolGraph linked = murcko_scaffold(parse_smiles("c1ccccc1CCc1ccccc1"));
  CHECK(linked.atoms.size() == 14);
}

TEST_CASE("scaffold pruning is idempotent and preserves cycle atoms") {
  std::vector<std::string> cases = {
      "Cc1ccccc1",       "CCC(=O)Nc1ccc(Cl)c(Cl)c1", "C1CC1CCCC2CC2",
      "O=C(O)c1ccccc1O", "CCCC",                     "c1ccc2ccccc2c1"};
  for (const auto& s : cases) {
    MolGraph g = parse_smiles(s);
    MolGraph once = murcko_scaffold(g);
    MolGraph twice = murcko_scaffold(once);
    CHECK(scaffold_key(once) == scaffold_key(twice));
    CHECK(once.atoms.size() == twice.atoms.size());

    // atoms on any cycle survive pruning: cycle atoms are exactly the
    // ones with degree >= 2 in the kept subgraph, so check an
    // independent witness: every ring-closure derived bond endpoint
    // that lies on a cycle stays. Use the kept-index list directly.
    auto kept = scaffold_atom_indices(g);
    std::set<int> kept_set(kept.begin(), kept.end());
    // brute-force cycle membership: an edge (and its endpoints) is on a
    // cycle if removing it leaves the endpoints connected
    auto connected_without = [&](int skip_edge, int from, int to) {
      std::set<int> seen{from};
      std::vector<int> stack{from};
      while (!stack.empty()) {
        int at = stack.back();
        stack.pop_back();
        if (at == to) return true;
        for (size_t e = 0; e < g.bonds.size(); ++e) {
          if (static_cast<int>(e) == skip_edge) continue;
          const auto& b = g.bonds[e];
          int next = -1;
          if (b.a == at) next = b.b;
          if (b.b == at) next = b.a;
          if (next >= 0 && !seen.count(next)) {
            seen.insert(next);
            stack.push_back(next);
          }
        }
      }
      return false;
    };
    for (size_t e = 0; e < g.bonds.size(); ++e) {
      if (connected_without(static_cast<int>(e), g.bonds[e].a, g.bonds[e].b)) {
        CHECK(kept_set.count(g.bonds[e].a));
        CHECK(kept_set.count(g.bonds[e].b));
      }
    }
  }
}

TEST_CASE("scaffold keys are deterministic sentinels") {
  CHECK(scaffold_key(MolGraph{}) == "ACYCLIC");
  CHECK(scaffold_key(murcko_scaffold(parse_smiles("CCCC"))) == "ACYCLIC");

  MolGraph g = parse_smiles("c1ccc2ccccc2c1");
  CHECK(scaffold_key(g) == scaffold_key(parse_smiles("c1ccc2ccccc2c1")));

  // aromatic benzene and its kekule spelling are distinct scaffold
  // classes in this tool (no kekulization by design)
  std::string a = scaffold_key(murcko_scaffold(parse_smiles("c1ccccc1")));
  std::string k = scaffold_key(murcko_scaffold(parse_smiles("C1=CC=CC=C1")));
  CHECK(a != k);

  // same ring reached from different SMILES spellings of the same
  // aromatic form agree
  CHECK(scaffold_key(murcko_scaffold(parse_smiles("Cc1ccccc1"))) ==
        scaffold_key(murcko_scaffold(parse_smiles("c1ccccc1"))));
}
