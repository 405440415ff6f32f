#pragma once

#include <string>
#include <vector>

#include "samtl/common.hpp"

namespace samtl {

// Known benchmark dataset names.
std::vector<std::string> known_datasets();

// Column conventions for each benchmark file.
struct DatasetSchema {
  std::string file_name;       // e.g. "clintox.csv"
  std::string smiles_column;
  std::vector<std::string> task_columns;
};
DatasetSchema dataset_schema(const std::string& name);

// Downloads <name> into dest_dir, decompressing .gz payloads, and
// records the SHA-256 of the resulting CSV alongside it. A second
// fetch is a no-op while the recorded checksum still matches; a
// mismatch is an error. base_url overrides the canonical source
// (SAMTL_FETCH_BASE env var works too).
std::string fetch_dataset(const std::string& name, const std::string& dest_dir,
                          const std::string& base_url = "");

// zlib inflate for gzip payloads; exposed for tests.
std::string gunzip(const std::string& compressed);

}  // namespace samtl
