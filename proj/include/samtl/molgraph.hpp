#pragma once

#include <string>
#include <vector>

#include "samtl/common.hpp"

namespace samtl {

enum class BondOrder { single, double_bond, triple, aromatic };

struct Atom {
  std::string element;
  bool aromatic = false;
  int charge = 0;
};

struct Bond {
  int a = 0;
  int b = 0;
  BondOrder order = BondOrder::single;
};

struct MolGraph {
  std::vector<Atom> atoms;
  std::vector<Bond> bonds;
  bool empty() const { return atoms.empty(); }
};

// Hydrogens are implicit; stereo markers and isotopes parse but are
// discarded. Lowercase atoms are aromatic, as are default/ring bonds
// between two aromatic atoms. No kekulization, no valence checks.
MolGraph parse_smiles(const std::string& s);

// Original-graph indices of the atoms that survive iterative deletion
// of acyclic degree-1 atoms (ring systems plus linkers).
std::vector<int> scaffold_atom_indices(const MolGraph& g);

// Acyclic inputs yield the empty graph.
MolGraph murcko_scaffold(const MolGraph& g);

// Deterministic key from canonical atom ordering by iterated
// neighborhood refinement over (element, aromatic, charge, degree);
// residual ties broken by stable index. Empty graph -> "ACYCLIC".
std::string scaffold_key(const MolGraph& g);

}  // namespace samtl
