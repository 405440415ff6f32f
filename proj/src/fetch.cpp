#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <zlib.h>

#include <cstdlib>
#include <filesystem>
#include <map>

#include "samtl/fetch.hpp"

namespace samtl {

namespace fs = std::filesystem;

namespace {

struct Source {
  std::string remote_file;  // name on the server, possibly .gz
  DatasetSchema schema;
};

const std::map<std::string, Source>& sources() {
  static const std::map<std::string, Source> s = {
      {"tox21",
       {"tox21.csv.gz",
        {"tox21.csv",
         "smiles",
         {"NR-AR", "NR-AR-LBD", "NR-AhR", "NR-Aromatase", "NR-ER",
          "NR-ER-LBD", "NR-PPAR-gamma", "SR-ARE", "SR-ATAD5", "SR-HSE",
          "SR-MMP", "SR-p53"}}}},
      {"hiv", {"HIV.csv", {"HIV.csv", "smiles", {"HIV_active"}}}},
      {"sider",
       {"sider.csv.gz",
        {"sider.csv",
         "smiles",
         {"Hepatobiliary disorders", "Metabolism and nutrition disorders",
          "Product issues", "Eye disorders", "Investigations",
          "Musculoskeletal and connective tissue disorders",
          "Gastrointestinal disorders", "Social circumstances",
          "Immune system disorders",
          "Reproductive system and breast disorders",
          "Neoplasms benign, malignant and unspecified (incl cysts and "
          "polyps)",
          "General disorders and administration site conditions",
          "Endocrine disorders", "Surgical and medical procedures",
          "Vascular disorders", "Blood and lymphatic system disorders",
          "Skin and subcutaneous tissue disorders",
          "Congenital, familial and genetic disorders",
          "Infections and infestations",
          "Respiratory, thoracic and mediastinal disorders",
          "Psychiatric disorders", "Renal and urinary disorders",
          "Pregnancy, puerperium and perinatal conditions",
          "Ear and labyrinth disorders", "Cardiac disorders",
          "Nervous system disorders",
          "Injury, poisoning and procedural complications"}}}},
      {"bbbp", {"BBBP.csv", {"BBBP.csv", "smiles", {"p_np"}}}},
      {"clintox",
       {"clintox.csv.gz",
        {"clintox.csv", "smiles", {"FDA_APPROVED", "CT_TOX"}}}},
  };
  return s;
}

constexpr const char* kDefaultBase =
    "https://deepchemdata.s3-us-west-1.amazonaws.com/datasets";

std::string list_names() {
  std::string out;
  for (const auto& [name, _] : sources()) out += (out.empty() ? "" : ", ") + name;
  return out;
}

}  // namespace

std::vector<std::string> known_datasets() {
  std::vector<std::string> names;
  for (const auto& [name, _] : sources()) names.push_back(name);
  return names;
}

DatasetSchema dataset_schema(const std::string& name) {
  auto it = sources().find(name);
  if (it == sources().end())
    throw UsageError("unknown dataset '" + name + "' (expected one of " +
                     list_names() + ")");
  return it->second.schema;
}

std::string gunzip(const std::string& compressed) {
  z_stream zs{};
  if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK)
    throw DataError("gunzip: inflateInit failed");
  zs.next_in =
      reinterpret_cast<Bytef*>(const_cast<char*>(compressed.data()));
  zs.avail_in = static_cast<uInt>(compressed.size());
  std::string out;
  char buf[1 << 16];
  int ret = Z_OK;
  do {
    zs.next_out = reinterpret_cast<Bytef*>(buf);
    zs.avail_out = sizeof buf;
    ret = inflate(&zs, Z_NO_FLUSH);
    if (ret != Z_OK && ret != Z_STREAM_END) {
      inflateEnd(&zs);
      throw DataError("gunzip: corrupt gzip stream");
    }
    out.append(buf, sizeof buf - zs.avail_out);
  } while (ret != Z_STREAM_END);
  inflateEnd(&zs);
  return out;
}

std::string fetch_dataset(const std::string& name, const std::string& dest_dir,
                          const std::string& base_url) {
  auto it = sources().find(name);
  if (it == sources().end())
    throw UsageError("unknown dataset '" + name + "' (expected one of " +
                     list_names() + ")");
  const Source& src = it->second;

  fs::create_directories(dest_dir);
  fs::path csv_path = fs::path(dest_dir) / src.schema.file_name;
  fs::path sum_path = csv_path;
  sum_path += ".sha256";

  if (fs::exists(csv_path) && fs::exists(sum_path)) {
    std::string recorded = read_text_file(sum_path.string());
    recorded.erase(recorded.find_last_not_of(" \n\r\t") + 1);
    std::string actual = sha256_file(csv_path.string());
    if (recorded == actual) return csv_path.string();  // idempotent
    throw DataError("ChecksumMismatch: " + csv_path.string() +
                    " does not match its recorded SHA-256");
  }

  std::string base = base_url;
  if (base.empty()) {
    const char* env = std::getenv("SAMTL_FETCH_BASE");
    base = env ? env : kDefaultBase;
  }
  auto scheme_end = base.find("://");
  if (scheme_end == std::string::npos)
    throw UsageError("fetch base url needs a scheme: " + base);
  auto path_start = base.find('/', scheme_end + 3);
  std::string host = base.substr(0, path_start == std::string::npos
                                        ? base.size()
                                        : path_start);
  std::string prefix =
      path_start == std::string::npos ? "" : base.substr(path_start);

  httplib::Client client(host);
  client.set_follow_location(true);
  client.set_connection_timeout(30);
  client.set_read_timeout(120);
  auto res = client.Get(prefix + "/" + src.remote_file);
  if (!res || res->status != 200)
    throw DataError("NetworkError: GET " + base + "/" + src.remote_file +
                    (res ? " -> HTTP " + std::to_string(res->status)
                         : " failed (unreachable host)"));

  std::string content = res->body;
  if (src.remote_file.size() > 3 &&
      src.remote_file.substr(src.remote_file.size() - 3) == ".gz")
    content = gunzip(content);

  write_text_file(csv_path.string(), content);
  write_text_file(sum_path.string(), sha256_hex(content) + "\n");
  return csv_path.string();
}

}  // namespace samtl
