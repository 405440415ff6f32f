#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <thread>

#include "samtl/fetch.hpp"

using namespace samtl;
namespace fs = std::filesystem;

namespace {

std::string gzip_compress(const std::string& plain) {
  z_stream zs{};
  REQUIRE(deflateInit2(&zs, Z_BEST_SPEED, Z_DEFLATED, 16 + MAX_WBITS, 8,
                       Z_DEFAULT_STRATEGY) == Z_OK);
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(plain.data()));
  zs.avail_in = static_cast<uInt>(plain.size());
  std::string out;
  char buf[4096];
  int ret;
  do {
    zs.next_out = reinterpret_cast<Bytef*>(buf);
    zs.avail_out = sizeof buf;
    ret = deflate(&zs, Z_FINISH);
    out.append(buf, sizeof buf - zs.avail_out);
  } while (ret != Z_STREAM_END);
  deflateEnd(&zs);
  return out;
}

struct LocalServer {
  httplib::Server server;
  std::thread thread;
  int port = 0;
  std::atomic<int> hits{0};

  explicit LocalServer(const std::string& clintox_plain) {
    server.Get("/datasets/clintox.csv.gz",
               [this, clintox_plain](const httplib::Request&,
                                     httplib::Response& res) {
                 ++hits;
                 res.set_content(gzip_compress(clintox_plain),
                                 "application/gzip");
               });
    server.Get("/datasets/BBBP.csv",
               [this](const httplib::Request&, httplib::Response& res) {
                 ++hits;
                 res.set_content("num,name,p_np,smiles\n1,x,1,CC\n",
                                 "text/csv");
               });
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this]() { server.listen_after_bind(); });
    while (!server.is_running())
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  ~LocalServer() {
    server.stop();
    thread.join();
  }
  std::string base() const {
    return "http://127.0.0.1:" + std::to_string(port) + "/datasets";
  }
};

}  // namespace

TEST_CASE("fetch downloads, decompresses, records checksum, skips repeats") {
  std::string plain = "smiles,FDA_APPROVED,CT_TOX\nCC,1,0\nCCO,1,0\n";
  LocalServer server(plain);
  fs::path dest = fs::temp_directory_path() / "samtl_fetch_test";
  fs::remove_all(dest);

  std::string path = fetch_dataset("clintox", dest.string(), server.base());
  CHECK(fs::exists(path));
  CHECK(read_text_file(path) == plain);
  CHECK(fs::exists(path + ".sha256"));
  CHECK(server.hits == 1);

  // idempotent: second call never touches the server
  std::string again = fetch_dataset("clintox", dest.string(), server.base());
  CHECK(again == path);
  CHECK(server.hits == 1);

  // tampering trips the checksum check
  std::ofstream(path, std::ios::app) << "tampered\n";
  CHECK_THROWS_WITH_AS(fetch_dataset("clintox", dest.string(), server.base()),
                       doctest::Contains("ChecksumMismatch"), DataError);
  fs::remove_all(dest);
}

TEST_CASE("plain csv fetch works and unknown names list the options") {
  LocalServer server("unused");
  fs::path dest = fs::temp_directory_path() / "samtl_fetch_test2";
  fs::remove_all(dest);
  std::string path = fetch_dataset("bbbp", dest.string(), server.base());
  CHECK(read_text_file(path).rfind("num,name", 0) == 0);

  CHECK_THROWS_WITH_AS(fetch_dataset("nope", dest.string(), server.base()),
                       doctest::Contains("clintox"), UsageError);
  fs::remove_all(dest);
}

TEST_CASE("unreachable hosts surface as NetworkError") {
  fs::path dest = fs::temp_directory_path() / "samtl_fetch_test3";
  fs::remove_all(dest);
  CHECK_THROWS_WITH_AS(
      fetch_dataset("bbbp", dest.string(), "http://127.0.0.1:1/datasets"),
      doctest::Contains("NetworkError"), DataError);
  fs::remove_all(dest);
}

TEST_CASE("schemas expose the benchmark column conventions") {
  CHECK(dataset_schema("tox21").task_columns.size() == 12);
  CHECK(dataset_schema("sider").task_columns.size() == 27);
  CHECK(dataset_schema("clintox").task_columns ==
        std::vector<std::string>{"FDA_APPROVED", "CT_TOX"});
  CHECK(dataset_schema("hiv").smiles_column == "smiles");
  CHECK(known_datasets().size() == 5);
}
