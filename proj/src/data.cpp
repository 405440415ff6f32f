#include "samtl/data.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "samtl/molgraph.hpp"

namespace samtl {

void DatasetTable::recount() {
  pos_per_task.assign(task_names.size(), 0);
  neg_per_task.assign(task_names.size(), 0);
  for (const auto& r : records)
    for (size_t t = 0; t < task_names.size(); ++t) {
      if (r.labels[t] == 1) ++pos_per_task[t];
      if (r.labels[t] == 0) ++neg_per_task[t];
    }
}

double DatasetTable::aggregate_neg_over_pos() const {
  long pos = std::accumulate(pos_per_task.begin(), pos_per_task.end(), 0L);
  long neg = std::accumulate(neg_per_task.begin(), neg_per_task.end(), 0L);
  if (pos == 0) throw DataError("aggregate ratio undefined: no positives");
  return static_cast<double>(neg) / static_cast<double>(pos);
}

double DatasetTable::balancing_bias(size_t task) const {
  if (pos_per_task[task] == 0)
    throw DataError("balancing_bias undefined: task '" + task_names[task] +
                    "' has no positives");
  return static_cast<double>(neg_per_task[task]) /
         static_cast<double>(pos_per_task[task]);
}

std::vector<std::vector<std::string>> parse_csv(const std::string& content) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string cell;
  bool in_quotes = false;
  size_t i = 0;
  while (i < content.size()) {
    char c = content[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < content.size() && content[i + 1] == '"') {
          cell += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        cell += c;
      }
    } else if (c == '"') {
      in_quotes = true;
    } else if (c == ',') {
      row.push_back(std::move(cell));
      cell.clear();
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < content.size() && content[i + 1] == '\n') ++i;
      row.push_back(std::move(cell));
      cell.clear();
      if (!(row.size() == 1 && row[0].empty())) rows.push_back(std::move(row));
      row.clear();
    } else {
      cell += c;
    }
    ++i;
  }
  if (!cell.empty() || !row.empty()) {
    row.push_back(std::move(cell));
    if (!(row.size() == 1 && row[0].empty())) rows.push_back(std::move(row));
  }
  return rows;
}

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t");
  size_t b = s.find_last_not_of(" \t");
  return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

}  // namespace

DatasetTable load_csv(const std::string& path, const std::string& smiles_column,
                      const std::vector<std::string>& task_columns,
                      int max_seq_len, const TokenizerOptions& opt,
                      LoadReport* report) {
  auto rows = parse_csv(read_text_file(path));
  if (rows.empty()) throw DataError("UnreadableFile: '" + path + "' is empty");
  const auto& header = rows[0];
  auto col_index = [&](const std::string& name) {
    for (size_t c = 0; c < header.size(); ++c)
      if (trim(header[c]) == name) return static_cast<int>(c);
    throw DataError("MissingColumn: '" + name + "' not in header of " + path);
  };
  int smiles_col = col_index(smiles_column);
  std::vector<int> task_cols;
  for (const auto& t : task_columns) task_cols.push_back(col_index(t));

  DatasetTable table;
  table.task_names = task_columns;
  LoadReport local;
  LoadReport& rep = report ? *report : local;
  rep.rows_in = static_cast<int>(rows.size()) - 1;

  for (size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    int source_row = static_cast<int>(r);
    if (row.size() != header.size()) {
      rep.dropped.push_back({source_row, "BadRow: column count mismatch"});
      continue;
    }
    MoleculeRecord rec;
    rec.source_row = source_row;
    rec.smiles = trim(row[static_cast<size_t>(smiles_col)]);
    bool bad = false;
    bool any_label = false;
    for (int c : task_cols) {
      std::string cell = trim(row[static_cast<size_t>(c)]);
      if (cell.empty()) {
        rec.labels.push_back(-1);
      } else if (cell == "0" || cell == "0.0") {
        rec.labels.push_back(0);
        any_label = true;
      } else if (cell == "1" || cell == "1.0") {
        rec.labels.push_back(1);
        any_label = true;
      } else {
        rep.dropped.push_back({source_row, "BadLabel: '" + cell + "'"});
        bad = true;
        break;
      }
    }
    if (bad) continue;
    if (!any_label) {
      rep.dropped.push_back({source_row, "NoLabels"});
      continue;
    }
    if (rec.smiles.empty()) {
      rep.dropped.push_back({source_row, "EmptyInput"});
      continue;
    }
    if (static_cast<int>(scan_smiles(rec.smiles, opt).size()) > max_seq_len) {
      rep.dropped.push_back({source_row, "SequenceTooLong"});
      continue;
    }
    try {
      parse_smiles(rec.smiles);
    } catch (const Error& e) {
      rep.dropped.push_back({source_row, e.what()});
      continue;
    }
    table.records.push_back(std::move(rec));
  }
  rep.retained = static_cast<int>(table.records.size());
  if (table.records.empty())
    throw DataError("load_csv: no usable records in " + path);
  table.recount();
  return table;
}

void SplitSpec::validate() const {
  if (train_fraction <= 0 || valid_fraction <= 0 || test_fraction <= 0)
    throw DataError("SplitSpec: all fractions must be positive");
  if (std::abs(train_fraction + valid_fraction + test_fraction - 1.0) > 1e-9)
    throw DataError("SplitSpec: fractions must sum to 1");
}

namespace {

DatasetTable subset(const DatasetTable& table, const std::vector<int>& idx) {
  DatasetTable out;
  out.task_names = table.task_names;
  for (int i : idx) out.records.push_back(table.records[static_cast<size_t>(i)]);
  out.recount();
  return out;
}

SplitResult split_random(const DatasetTable& table, const SplitSpec& spec) {
  int n = static_cast<int>(table.records.size());
  std::vector<int> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(spec.seed);
  rng.shuffle(idx);
  int n_train = static_cast<int>(std::llround(spec.train_fraction * n));
  int n_valid = static_cast<int>(std::llround(spec.valid_fraction * n));
  n_train = std::min(n_train, n - 2);
  n_valid = std::min(n_valid, n - n_train - 1);
  SplitResult out;
  out.train = subset(table, {idx.begin(), idx.begin() + n_train});
  out.valid = subset(table, {idx.begin() + n_train,
                             idx.begin() + n_train + n_valid});
  out.test = subset(table, {idx.begin() + n_train + n_valid, idx.end()});
  return out;
}

// groups shuffled internally, then distributed to the three splits by
// largest remaining quota so each label profile lands proportionally
SplitResult split_stratified(const DatasetTable& table, const SplitSpec& spec) {
  std::map<std::string, std::vector<int>> groups;
  for (size_t i = 0; i < table.records.size(); ++i) {
    std::string profile;
    for (int8_t l : table.records[i].labels)
      profile += l < 0 ? '?' : static_cast<char>('0' + l);
    groups[profile].push_back(static_cast<int>(i));
  }
  int n = static_cast<int>(table.records.size());
  double quota[3] = {spec.train_fraction * n, spec.valid_fraction * n,
                     spec.test_fraction * n};
  std::vector<int> parts[3];
  Rng rng(spec.seed);
  for (auto& [profile, members] : groups) {
    rng.shuffle(members);
    size_t m = members.size();
    double want[3];
    size_t given[3] = {0, 0, 0};
    size_t assigned = 0;
    for (int s = 0; s < 3; ++s) {
      want[s] = quota[s] / n * static_cast<double>(m);
      given[s] = static_cast<size_t>(want[s]);
      assigned += given[s];
    }
    while (assigned < m) {  // remainders to the most-underfilled split
      int best = 0;
      double best_gap = -1;
      for (int s = 0; s < 3; ++s) {
        double gap = want[s] - static_cast<double>(given[s]);
        if (gap > best_gap) {
          best_gap = gap;
          best = s;
        }
      }
      ++given[best];
      ++assigned;
    }
    size_t at = 0;
    for (int s = 0; s < 3; ++s)
      for (size_t k = 0; k < given[s]; ++k) parts[s].push_back(members[at++]);
  }
  for (int s = 0; s < 3; ++s) std::sort(parts[s].begin(), parts[s].end());
  SplitResult out;
  out.train = subset(table, parts[0]);
  out.valid = subset(table, parts[1]);
  out.test = subset(table, parts[2]);
  return out;
}

SplitResult split_scaffold(const DatasetTable& table, const SplitSpec& spec) {
  SplitResult out;
  out.scaffold_keys.resize(table.records.size());
  std::map<std::string, std::vector<int>> groups;
  for (size_t i = 0; i < table.records.size(); ++i) {
    std::string key =
        scaffold_key(murcko_scaffold(parse_smiles(table.records[i].smiles)));
    out.scaffold_keys[i] = key;
    groups[key].push_back(static_cast<int>(i));
  }
  // larger scaffold groups first; ties by key for determinism
  std::vector<std::pair<std::string, std::vector<int>>> ordered(groups.begin(),
                                                                groups.end());
  std::sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) {
    if (a.second.size() != b.second.size())
      return a.second.size() > b.second.size();
    return a.first < b.first;
  });
  int n = static_cast<int>(table.records.size());
  long train_target = std::llround(spec.train_fraction * n);
  long valid_target = std::llround(spec.valid_fraction * n);
  std::vector<int> parts[3];
  for (auto& [key, members] : ordered) {
    int dest;
    if (static_cast<long>(parts[0].size()) < train_target)
      dest = 0;
    else if (static_cast<long>(parts[1].size()) < valid_target)
      dest = 1;
    else
      dest = 2;
    if (dest == 0 && static_cast<long>(members.size()) > train_target)
      out.warnings.push_back("FractionInfeasible: scaffold group of " +
                             std::to_string(members.size()) +
                             " exceeds the train allocation " +
                             std::to_string(train_target) +
                             "; placed in train");
    for (int i : members) parts[dest].push_back(i);
  }
  for (int s = 0; s < 3; ++s) std::sort(parts[s].begin(), parts[s].end());
  if (parts[1].empty() || parts[2].empty())
    out.warnings.push_back(
        "scaffold split left an empty valid or test partition");
  out.train = subset(table, parts[0]);
  out.valid = subset(table, parts[1]);
  out.test = subset(table, parts[2]);
  return out;
}

}  // namespace

SplitResult split(const DatasetTable& table, const SplitSpec& spec) {
  spec.validate();
  if (table.records.size() < 3)
    throw DataError("split: need at least 3 records");
  switch (spec.method) {
    case SplitMethod::random:
      return split_random(table, spec);
    case SplitMethod::stratified:
      return split_stratified(table, spec);
    case SplitMethod::scaffold:
      return split_scaffold(table, spec);
  }
  throw DataError("split: unknown method");
}

SplitMethod split_method_from_name(const std::string& name) {
  if (name == "random") return SplitMethod::random;
  if (name == "stratified") return SplitMethod::stratified;
  if (name == "scaffold") return SplitMethod::scaffold;
  throw UsageError("unknown split method '" + name +
                   "' (expected random, stratified or scaffold)");
}

std::string split_method_name(SplitMethod m) {
  switch (m) {
    case SplitMethod::random:
      return "random";
    case SplitMethod::stratified:
      return "stratified";
    case SplitMethod::scaffold:
      return "scaffold";
  }
  return "?";
}

}  // namespace samtl
