#include "samtl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload assumes a little-endian host");

namespace samtl {

using nlohmann::json;

json config_to_json(const ModelConfig& cfg) {
  return json{{"embed_size", cfg.embed_size},
              {"hidden_size", cfg.hidden_size},
              {"ffn_size", cfg.ffn_size},
              {"conv_filter_width", cfg.conv_filter_width},
              {"num_sa_layers", cfg.num_sa_layers},
              {"num_heads", cfg.num_heads},
              {"dropout_rate", cfg.dropout_rate},
              {"max_seq_len", cfg.max_seq_len},
              {"num_tasks", cfg.num_tasks},
              {"use_position_encoding", cfg.use_position_encoding},
              {"use_self_attention", cfg.use_self_attention},
              {"use_cnn", cfg.use_cnn},
              {"use_rnn_instead_of_cnn", cfg.use_rnn_instead_of_cnn},
              {"head_kind", cfg.head_kind == HeadKind::discrete_output
                                ? "discrete_output"
                                : "max_pool"},
              {"two_char_embedding", cfg.two_char_embedding}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig cfg;
  cfg.embed_size = j.at("embed_size").get<int>();
  cfg.hidden_size = j.at("hidden_size").get<int>();
  cfg.ffn_size = j.at("ffn_size").get<int>();
  cfg.conv_filter_width = j.at("conv_filter_width").get<int>();
  cfg.num_sa_layers = j.at("num_sa_layers").get<int>();
  cfg.num_heads = j.at("num_heads").get<int>();
  cfg.dropout_rate = j.at("dropout_rate").get<double>();
  cfg.max_seq_len = j.at("max_seq_len").get<int>();
  cfg.num_tasks = j.at("num_tasks").get<int>();
  cfg.use_position_encoding = j.at("use_position_encoding").get<bool>();
  cfg.use_self_attention = j.at("use_self_attention").get<bool>();
  cfg.use_cnn = j.at("use_cnn").get<bool>();
  cfg.use_rnn_instead_of_cnn = j.at("use_rnn_instead_of_cnn").get<bool>();
  cfg.head_kind = j.at("head_kind").get<std::string>() == "max_pool"
                      ? HeadKind::max_pool
                      : HeadKind::discrete_output;
  cfg.two_char_embedding = j.at("two_char_embedding").get<bool>();
  cfg.validate();
  return cfg;
}

std::string config_hash(const ModelConfig& cfg) {
  return sha256_hex(config_to_json(cfg).dump());
}

void save_checkpoint(const std::string& path, const ModelParams<float>& params,
                     const ModelConfig& cfg, const json& extra) {
  json header;
  header["format"] = "samtl.v1";
  header["config"] = config_to_json(cfg);
  header["config_hash"] = config_hash(cfg);
  if (!extra.empty()) header["meta"] = extra;
  json plist = json::array();
  size_t total = 0;
  params.visit([&](const std::string& name, const Tensor<float>& t) {
    plist.push_back({{"name", name},
                     {"shape", t.shape()},
                     {"offset", total},
                     {"numel", t.size()}});
    total += static_cast<size_t>(t.size());
  });
  header["params"] = plist;

  std::string head = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  uint64_t len = head.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(head.data(), static_cast<std::streamsize>(head.size()));
  params.visit([&](const std::string&, const Tensor<float>& t) {
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(float)));
  });
  if (!out) throw DataError("short write to checkpoint: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("UnreadableFile: " + path);
  uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || len == 0 || len > (1ull << 30))
    throw DataError("corrupt checkpoint header: " + path);
  std::string head(len, '\0');
  in.read(head.data(), static_cast<std::streamsize>(len));
  if (!in) throw DataError("corrupt checkpoint header: " + path);

  LoadedCheckpoint result;
  result.header = json::parse(head);
  if (result.header.value("format", "") != "samtl.v1")
    throw DataError("not a samtl checkpoint: " + path);
  result.config = config_from_json(result.header.at("config"));

  // rebuild the parameter structure, then fill by name
  std::vector<TaskHeadSpec> specs(
      static_cast<size_t>(result.config.num_tasks));
  for (int t = 0; t < result.config.num_tasks; ++t)
    specs[static_cast<size_t>(t)] = {t, 1.0};
  int vocab_size = 2;
  for (const auto& p : result.header.at("params"))
    if (p.at("name") == "embedding")
      vocab_size = p.at("shape")[0].get<int>();
  result.params =
      init_params<float>(result.config, vocab_size, specs, /*seed=*/0);

  std::map<std::string, Tensor<float>*> by_name;
  result.params.visit([&](const std::string& name, Tensor<float>& t) {
    by_name[name] = &t;
  });
  for (const auto& p : result.header.at("params")) {
    std::string name = p.at("name").get<std::string>();
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw DataError("checkpoint param '" + name +
                      "' does not fit the stored config: " + path);
    Shape shape = p.at("shape").get<Shape>();
    if (it->second->shape() != shape)
      throw DataError("checkpoint param '" + name + "' shape " +
                      shape_str(shape) + " != expected " +
                      shape_str(it->second->shape()));
    in.read(reinterpret_cast<char*>(it->second->data()),
            static_cast<std::streamsize>(it->second->size() * sizeof(float)));
    if (!in) throw DataError("truncated checkpoint payload: " + path);
    by_name.erase(it);
  }
  if (!by_name.empty())
    throw DataError("checkpoint missing parameters: " + path);
  return result;
}

}  // namespace samtl
