#pragma once

#include <optional>
#include <string>
#include <vector>

#include "samtl/common.hpp"
#include "samtl/tokenizer.hpp"

namespace samtl {

struct MoleculeRecord {
  std::string smiles;
  std::vector<int8_t> labels;  // per task: 0, 1, or -1 when missing
  int source_row = 0;

  bool has_label(size_t task) const { return labels[task] >= 0; }
};

struct DatasetTable {
  std::vector<MoleculeRecord> records;
  std::vector<std::string> task_names;
  std::vector<long> pos_per_task, neg_per_task;

  void recount();
  double aggregate_neg_over_pos() const;
  // n_neg / n_pos for one task; the loss weight and bias initializer.
  double balancing_bias(size_t task) const;
  size_t num_tasks() const { return task_names.size(); }
};

struct LoadReport {
  int rows_in = 0;
  int retained = 0;
  std::vector<std::pair<int, std::string>> dropped;  // source row, reason
};

// Empty cells are missing labels. Rows are dropped (and reported) when
// a label cell is not 0/1, no label is present, the SMILES exceeds
// max_seq_len tokens, or the SMILES fails to parse as a molecule.
DatasetTable load_csv(const std::string& path, const std::string& smiles_column,
                      const std::vector<std::string>& task_columns,
                      int max_seq_len = 200, const TokenizerOptions& opt = {},
                      LoadReport* report = nullptr);

enum class SplitMethod { random, stratified, scaffold };

struct SplitSpec {
  SplitMethod method = SplitMethod::random;
  double train_fraction = 0.8;
  double valid_fraction = 0.1;
  double test_fraction = 0.1;
  uint64_t seed = 0;

  void validate() const;
};

struct SplitResult {
  DatasetTable train, valid, test;
  // scaffold keys aligned with the input table (scaffold method only)
  std::vector<std::string> scaffold_keys;
  std::vector<std::string> warnings;
};

SplitResult split(const DatasetTable& table, const SplitSpec& spec);

SplitMethod split_method_from_name(const std::string& name);
std::string split_method_name(SplitMethod m);

// CSV cell parser shared with tests: RFC-4180 quoting.
std::vector<std::vector<std::string>> parse_csv(const std::string& content);

}  // namespace samtl
