#include "samtl/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <sstream>
#include <thread>

#include "samtl/checkpoint.hpp"
#include "samtl/data.hpp"
#include "samtl/fetch.hpp"
#include "samtl/gradcheck_suite.hpp"
#include "samtl/molgraph.hpp"
#include "samtl/train.hpp"
#include "samtl/version.hpp"

namespace samtl {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Preset {
  std::string dataset;      // fetch/schema name
  std::string split;        // random | stratified | scaffold
  int max_seq_len = 200;
};

const std::map<std::string, Preset>& presets() {
  static const std::map<std::string, Preset> p = {
      {"tox21-phase1", {"tox21", "random", 200}},
      {"tox21-score", {"tox21", "random", 200}},
      {"bbbp-scaffold", {"bbbp", "scaffold", 200}},
      {"clintox-random", {"clintox", "random", 200}},
      {"hiv-scaffold", {"hiv", "scaffold", 200}},
      {"sider-random", {"sider", "random", 200}},
  };
  return p;
}

std::string default_data_dir() {
  const char* env = std::getenv("SAMTL_DATA_DIR");
  return env ? env : "data";
}

std::string default_run_root() {
  const char* env = std::getenv("SAMTL_RUN_DIR");
  return env ? env : "runs";
}

std::string timestamp_utc() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream ss;
  ss << std::put_time(&tm, "%Y%m%dT%H%M%SZ");
  return ss.str();
}

std::string csv_quote(const std::string& cell) {
  if (cell.find_first_of(",\"\n\r") == std::string::npos) return cell;
  std::string out = "\"";
  for (char c : cell) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

struct DatasetInput {
  std::string csv_path;
  std::string smiles_column = "smiles";
  std::vector<std::string> task_columns;
  std::string split = "random";
  int max_seq_len = 200;
  std::string preset_name;  // empty when a plain path was given
  std::string stem;
};

// <csv-or-preset>: preset names resolve file and schema from the data
// directory; paths require --smiles-col/--tasks unless they follow a
// known schema by file name.
DatasetInput resolve_dataset(const std::string& arg,
                             const std::string& data_dir,
                             const std::string& smiles_col,
                             const std::string& tasks_flag) {
  DatasetInput in;
  auto pit = presets().find(arg);
  if (pit != presets().end()) {
    if (arg == "tox21-score")
      throw UsageError(
          "preset tox21-score needs the challenge score file; train with "
          "an explicit csv whose held-out portion is the score set (see "
          "README)");
    DatasetSchema schema = dataset_schema(pit->second.dataset);
    in.csv_path = (fs::path(data_dir) / schema.file_name).string();
    in.smiles_column = schema.smiles_column;
    in.task_columns = schema.task_columns;
    in.split = pit->second.split;
    in.max_seq_len = pit->second.max_seq_len;
    in.preset_name = arg;
    in.stem = pit->second.dataset;
    if (!fs::exists(in.csv_path))
      throw DataError("preset '" + arg + "' needs " + in.csv_path +
                      "; run `samtl fetch " + pit->second.dataset +
                      "` or set SAMTL_DATA_DIR");
    return in;
  }
  in.csv_path = arg;
  if (!fs::exists(in.csv_path))
    throw DataError("UnreadableFile: " + in.csv_path);
  in.stem = fs::path(arg).stem().string();
  // recognize benchmark files by name
  for (const auto& name : known_datasets()) {
    DatasetSchema schema = dataset_schema(name);
    if (schema.file_name == fs::path(arg).filename().string()) {
      in.smiles_column = schema.smiles_column;
      in.task_columns = schema.task_columns;
    }
  }
  if (!smiles_col.empty()) in.smiles_column = smiles_col;
  if (!tasks_flag.empty()) {
    in.task_columns.clear();
    std::stringstream ss(tasks_flag);
    std::string item;
    while (std::getline(ss, item, ',')) in.task_columns.push_back(item);
  }
  if (in.task_columns.empty())
    throw UsageError("no task columns known for '" + arg +
                     "'; pass --tasks col1,col2,...");
  return in;
}

void write_split_csv(const std::string& path, const std::string& src_csv,
                     const DatasetTable& part,
                     const std::vector<std::string>* scaffold_keys,
                     const DatasetTable& full) {
  auto raw = parse_csv(read_text_file(src_csv));
  std::map<int, std::string> key_by_row;
  if (scaffold_keys)
    for (size_t i = 0; i < full.records.size(); ++i)
      key_by_row[full.records[i].source_row] = (*scaffold_keys)[i];
  std::ofstream out(path, std::ios::trunc);
  for (size_t c = 0; c < raw[0].size(); ++c)
    out << (c ? "," : "") << csv_quote(raw[0][c]);
  if (scaffold_keys) out << ",scaffold_key";
  out << "\n";
  for (const auto& rec : part.records) {
    const auto& row = raw[static_cast<size_t>(rec.source_row)];
    for (size_t c = 0; c < row.size(); ++c)
      out << (c ? "," : "") << csv_quote(row[c]);
    if (scaffold_keys) out << "," << csv_quote(key_by_row[rec.source_row]);
    out << "\n";
  }
}

// Tasks need at least one positive and one negative training label;
// others are dropped with a warning.
std::vector<int> eligible_tasks(const DatasetTable& train, std::ostream& err) {
  std::vector<int> keep;
  for (size_t t = 0; t < train.num_tasks(); ++t) {
    if (train.pos_per_task[t] > 0 && train.neg_per_task[t] > 0) {
      keep.push_back(static_cast<int>(t));
    } else {
      err << "warning: task '" << train.task_names[t]
          << "' lacks both classes in the training split; excluded\n";
    }
  }
  if (keep.empty()) throw DataError("no task has both classes in training");
  return keep;
}

DatasetTable select_tasks(const DatasetTable& table,
                          const std::vector<int>& tasks) {
  DatasetTable out;
  for (int t : tasks) out.task_names.push_back(table.task_names[static_cast<size_t>(t)]);
  for (const auto& rec : table.records) {
    MoleculeRecord r;
    r.smiles = rec.smiles;
    r.source_row = rec.source_row;
    bool any = false;
    for (int t : tasks) {
      r.labels.push_back(rec.labels[static_cast<size_t>(t)]);
      any = any || rec.labels[static_cast<size_t>(t)] >= 0;
    }
    if (any) out.records.push_back(std::move(r));
  }
  out.recount();
  return out;
}

struct TrainOptions {
  DatasetInput input;
  ModelConfig model;
  TrainConfig train;
  SplitSpec split_spec;
  std::string run_dir;
  LoadReport load_report;
};

struct TrainArtifacts {
  std::vector<RunResult> runs;
  AucResult ensemble_test;
  std::vector<std::string> task_names;
  std::string run_dir;
  double mean_test_auc = 0.0;
  double std_test_auc = 0.0;
};

json manifest_json(const TrainOptions& opt,
                   const std::vector<std::string>& argv_tail) {
  json m;
  m["command"] = argv_tail;
  m["started_at"] = timestamp_utc();
  m["code_version"] = kCodeVersion;
  m["dataset"] = {{"path", opt.input.csv_path},
                  {"sha256", sha256_file(opt.input.csv_path)},
                  {"smiles_column", opt.input.smiles_column},
                  {"task_columns", opt.input.task_columns},
                  {"preset", opt.input.preset_name}};
  m["seeds"] = opt.train.seeds;
  m["model_config"] = config_to_json(opt.model);
  m["train_config"] = {{"batch_size", opt.train.batch_size},
                       {"learning_rate", opt.train.learning_rate},
                       {"max_epochs", opt.train.max_epochs},
                       {"patience", opt.train.patience},
                       {"eval_every", opt.train.eval_every},
                       {"grad_clip_norm", opt.train.grad_clip_norm},
                       {"jobs", opt.train.jobs}};
  m["split"] = {{"method", opt.input.split},
                {"train_fraction", opt.split_spec.train_fraction},
                {"valid_fraction", opt.split_spec.valid_fraction},
                {"test_fraction", opt.split_spec.test_fraction},
                {"seed", opt.split_spec.seed}};
  return m;
}

// Core training pipeline shared by `train` and `ablate`.
TrainArtifacts run_training(TrainOptions opt, std::ostream& out,
                            std::ostream& err,
                            const std::vector<std::string>& argv_tail,
                            bool write_artifacts = true) {
  fs::create_directories(opt.run_dir);
  TokenizerOptions tok_opt;
  tok_opt.two_char_atoms = opt.model.two_char_embedding;
  DatasetTable table =
      load_csv(opt.input.csv_path, opt.input.smiles_column,
               opt.input.task_columns, opt.model.max_seq_len, tok_opt,
               &opt.load_report);
  out << "loaded " << opt.load_report.retained << "/" << opt.load_report.rows_in
      << " records from " << opt.input.csv_path << " ("
      << opt.load_report.dropped.size() << " dropped)\n";

  opt.split_spec.method = split_method_from_name(opt.input.split);
  opt.split_spec.validate();
  json manifest = manifest_json(opt, argv_tail);
  if (write_artifacts)
    write_text_file((fs::path(opt.run_dir) / "manifest.json").string(),
                    manifest.dump(2) + "\n");

  SplitResult parts = split(table, opt.split_spec);
  for (const auto& w : parts.warnings) err << "warning: " << w << "\n";

  std::vector<int> tasks = eligible_tasks(parts.train, err);
  DatasetTable train_t = select_tasks(parts.train, tasks);
  DatasetTable valid_t = select_tasks(parts.valid, tasks);
  DatasetTable test_t = select_tasks(parts.test, tasks);
  opt.model.num_tasks = static_cast<int>(tasks.size());

  std::vector<std::string> corpus;
  for (const auto& r : table.records) corpus.push_back(r.smiles);
  Vocabulary vocab = build_vocabulary(corpus, tok_opt);

  std::vector<TaskHeadSpec> specs;
  for (size_t t = 0; t < train_t.num_tasks(); ++t)
    specs.push_back({static_cast<int>(t), train_t.balancing_bias(t)});

  if (write_artifacts) {
    vocab.save_tsv((fs::path(opt.run_dir) / "vocab.tsv").string());
    json run_cfg;
    run_cfg["model"] = config_to_json(opt.model);
    run_cfg["tasks"] = train_t.task_names;
    run_cfg["smiles_column"] = opt.input.smiles_column;
    run_cfg["balancing_bias"] = json::array();
    for (const auto& s : specs) run_cfg["balancing_bias"].push_back(s.balancing_bias);
    write_text_file((fs::path(opt.run_dir) / "config.json").string(),
                    run_cfg.dump(2) + "\n");
    fs::path split_dir = fs::path(opt.run_dir) / "splits";
    fs::create_directories(split_dir);
    const std::vector<std::string>* keys =
        parts.scaffold_keys.empty() ? nullptr : &parts.scaffold_keys;
    write_split_csv((split_dir / "train.csv").string(), opt.input.csv_path,
                    parts.train, keys, table);
    write_split_csv((split_dir / "valid.csv").string(), opt.input.csv_path,
                    parts.valid, keys, table);
    write_split_csv((split_dir / "test.csv").string(), opt.input.csv_path,
                    parts.test, keys, table);
  }

  EncodedDataset train_d = EncodedDataset::from_table(train_t, vocab, opt.model);
  EncodedDataset valid_d = EncodedDataset::from_table(valid_t, vocab, opt.model);
  EncodedDataset test_d = EncodedDataset::from_table(test_t, vocab, opt.model);

  int jobs = opt.train.jobs > 0
                 ? opt.train.jobs
                 : std::min<int>(static_cast<int>(opt.train.seeds.size()),
                                 std::max(1u, std::thread::hardware_concurrency()));

  TrainArtifacts art;
  art.run_dir = opt.run_dir;
  art.task_names = train_t.task_names;
  art.runs.resize(opt.train.seeds.size());
  std::vector<std::string> logs(opt.train.seeds.size());
  for (size_t base = 0; base < opt.train.seeds.size();
       base += static_cast<size_t>(jobs)) {
    std::vector<std::future<void>> futures;
    for (size_t k = base;
         k < std::min(opt.train.seeds.size(), base + static_cast<size_t>(jobs));
         ++k) {
      futures.push_back(std::async(std::launch::async, [&, k]() {
        std::ostringstream log;
        art.runs[k] = fit(opt.model, vocab, train_d, valid_d, test_d, specs,
                          opt.train, opt.train.seeds[k], &log);
        logs[k] = log.str();
      }));
    }
    for (auto& f : futures) f.get();
  }
  for (const auto& l : logs) out << l;

  double sum_auc = 0, sum_sq = 0;
  size_t best_seed = 0;
  for (size_t k = 0; k < art.runs.size(); ++k) {
    sum_auc += art.runs[k].test.mean_auc;
    sum_sq += art.runs[k].test.mean_auc * art.runs[k].test.mean_auc;
    if (art.runs[k].best_valid_auc > art.runs[best_seed].best_valid_auc)
      best_seed = k;
  }
  art.mean_test_auc = sum_auc / static_cast<double>(art.runs.size());
  art.std_test_auc = std::sqrt(std::max(
      0.0, sum_sq / static_cast<double>(art.runs.size()) -
               art.mean_test_auc * art.mean_test_auc));

  std::vector<const ModelParams<float>*> members;
  std::vector<ModelConfig> configs;
  for (const auto& r : art.runs) {
    members.push_back(&r.best_params);
    configs.push_back(opt.model);
  }
  art.ensemble_test = ensemble_evaluate(members, configs, test_d,
                                        opt.train.batch_size);

  if (write_artifacts) {
    for (size_t k = 0; k < art.runs.size(); ++k) {
      json meta = {{"seed", opt.train.seeds[k]},
                   {"best_epoch", art.runs[k].best_epoch},
                   {"valid_auc", art.runs[k].best_valid_auc},
                   {"test_auc", art.runs[k].test.mean_auc}};
      save_checkpoint((fs::path(opt.run_dir) /
                       ("seed" + std::to_string(opt.train.seeds[k]) + ".samtl"))
                          .string(),
                      art.runs[k].best_params, opt.model, meta);
    }
    save_checkpoint((fs::path(opt.run_dir) / "best.samtl").string(),
                    art.runs[best_seed].best_params, opt.model,
                    {{"seed", opt.train.seeds[best_seed]},
                     {"best_epoch", art.runs[best_seed].best_epoch},
                     {"valid_auc", art.runs[best_seed].best_valid_auc},
                     {"test_auc", art.runs[best_seed].test.mean_auc}});

    std::ostringstream metrics;
    metrics << "epoch,task,split,auc,loss,seed\n";
    auto cell = [](double v) {
      return std::isnan(v) ? std::string() : std::to_string(v);
    };
    for (size_t k = 0; k < art.runs.size(); ++k)
      for (const auto& row : art.runs[k].metrics)
        metrics << row.epoch << ',' << csv_quote(row.task) << ',' << row.split
                << ',' << cell(row.auc) << ',' << cell(row.loss) << ','
                << opt.train.seeds[k] << "\n";
    write_text_file((fs::path(opt.run_dir) / "metrics.csv").string(),
                    metrics.str());

    json result;
    result["dataset"] = opt.input.csv_path;
    result["split"] = opt.input.split;
    result["tasks"] = art.task_names;
    result["seeds"] = opt.train.seeds;
    json per_seed = json::array();
    for (const auto& r : art.runs) {
      json one = {{"seed", r.seed},
                  {"best_epoch", r.best_epoch},
                  {"valid_auc", r.best_valid_auc},
                  {"test_auc", r.test.mean_auc},
                  {"wall_seconds", r.wall_seconds},
                  {"steps", r.steps}};
      json per_task = json::array();
      for (double a : r.test.per_task_auc)
        per_task.push_back(std::isnan(a) ? json() : json(a));
      one["per_task_test_auc"] = per_task;
      per_seed.push_back(one);
    }
    result["per_seed"] = per_seed;
    result["mean_test_auc"] = art.mean_test_auc;
    result["std_test_auc"] = art.std_test_auc;
    result["ensemble_test_auc"] = art.ensemble_test.mean_auc;
    write_text_file((fs::path(opt.run_dir) / "result.json").string(),
                    result.dump(2) + "\n");
  }

  out << "mean test AUC " << art.mean_test_auc << " +- " << art.std_test_auc
      << " over " << art.runs.size() << " seeds; ensemble " <<
      art.ensemble_test.mean_auc << "\n";
  if (write_artifacts) out << "run directory: " << opt.run_dir << "\n";
  return art;
}

struct LoadedRun {
  ModelConfig config;
  Vocabulary vocab;
  std::vector<std::string> task_names;
  std::vector<LoadedCheckpoint> checkpoints;  // seed members, else best
};

LoadedRun load_run_dir(const std::string& run_dir) {
  LoadedRun run;
  json cfg = json::parse(read_text_file(
      (fs::path(run_dir) / "config.json").string()));
  run.config = config_from_json(cfg.at("model"));
  run.task_names = cfg.at("tasks").get<std::vector<std::string>>();
  run.vocab = Vocabulary::load_tsv((fs::path(run_dir) / "vocab.tsv").string());
  std::vector<std::string> seed_files;
  for (const auto& entry : fs::directory_iterator(run_dir)) {
    std::string name = entry.path().filename().string();
    if (name.rfind("seed", 0) == 0 && name.size() > 10 &&
        name.substr(name.size() - 6) == ".samtl")
      seed_files.push_back(entry.path().string());
  }
  std::sort(seed_files.begin(), seed_files.end());
  for (const auto& f : seed_files) run.checkpoints.push_back(load_checkpoint(f));
  if (run.checkpoints.empty()) {
    fs::path best = fs::path(run_dir) / "best.samtl";
    if (!fs::exists(best))
      throw DataError("no checkpoints in run directory " + run_dir);
    run.checkpoints.push_back(load_checkpoint(best.string()));
  }
  return run;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

int cmd_fetch(const std::string& name, const std::string& dest,
              std::ostream& out) {
  std::string path = fetch_dataset(name, dest);
  out << path << "\n";
  return 0;
}

int cmd_tokenize(const std::string& arg, const std::string& data_dir,
                 const std::string& smiles_col, const std::string& tasks_flag,
                 bool scaffolds, bool no_two_char, std::ostream& out,
                 std::ostream& err) {
  std::string csv_path = arg;
  std::string column = smiles_col.empty() ? "smiles" : smiles_col;
  auto pit = presets().find(arg);
  if (pit != presets().end()) {
    DatasetSchema schema = dataset_schema(pit->second.dataset);
    csv_path = (fs::path(data_dir) / schema.file_name).string();
    column = schema.smiles_column;
  } else if (smiles_col.empty()) {
    for (const auto& name : known_datasets()) {
      DatasetSchema schema = dataset_schema(name);
      if (schema.file_name == fs::path(arg).filename().string())
        column = schema.smiles_column;
    }
  }
  (void)tasks_flag;
  auto rows = parse_csv(read_text_file(csv_path));
  if (rows.empty()) throw DataError("UnreadableFile: empty csv " + csv_path);
  int col = -1;
  for (size_t c = 0; c < rows[0].size(); ++c)
    if (rows[0][c] == column) col = static_cast<int>(c);
  if (col < 0) throw DataError("MissingColumn: '" + column + "'");
  TokenizerOptions opt;
  opt.two_char_atoms = !no_two_char;
  int dropped = 0;
  for (size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != rows[0].size()) {
      ++dropped;
      continue;
    }
    const std::string& smiles = rows[r][static_cast<size_t>(col)];
    if (smiles.empty()) {
      ++dropped;
      continue;
    }
    if (scaffolds) {
      try {
        std::string key =
            scaffold_key(murcko_scaffold(parse_smiles(smiles)));
        out << smiles << '\t' << key << "\n";
      } catch (const Error& e) {
        err << "row " << r << " dropped: " << e.what() << "\n";
        ++dropped;
      }
    } else {
      auto tokens = scan_smiles(smiles, opt);
      out << smiles << '\t';
      for (size_t i = 0; i < tokens.size(); ++i)
        out << (i ? " " : "") << tokens[i].text;
      out << "\n";
    }
  }
  if (dropped) err << dropped << " rows dropped\n";
  return 0;
}

int cmd_predict(const std::string& run_dir,
                const std::vector<std::string>& smiles, std::ostream& out) {
  LoadedRun run = load_run_dir(run_dir);
  TokenizerOptions opt;
  opt.two_char_atoms = run.config.two_char_embedding;
  EncodedDataset data;
  data.task_names = run.task_names;
  data.labels.assign(run.task_names.size(), {});
  data.mask.assign(run.task_names.size(), {});
  for (const auto& s : smiles) {
    data.sequences.push_back(tokenize(s, run.vocab, run.config.max_seq_len,
                                      opt, /*allow_unknown=*/true));
    for (size_t t = 0; t < run.task_names.size(); ++t) {
      data.labels[t].push_back(0);
      data.mask[t].push_back(0);
    }
  }
  std::vector<const ModelParams<float>*> members;
  std::vector<ModelConfig> configs;
  for (const auto& c : run.checkpoints) {
    members.push_back(&c.params);
    configs.push_back(c.config);
  }
  auto probs = ensemble_predict(members, configs, data);
  for (size_t i = 0; i < smiles.size(); ++i) {
    out << "# " << smiles[i] << "\n";
    for (size_t t = 0; t < run.task_names.size(); ++t)
      out << run.task_names[t] << '\t' << probs[t][i] << "\n";
  }
  return 0;
}

int cmd_evaluate(const std::string& run_dir, const std::string& csv,
                 const std::string& data_dir, std::ostream& out,
                 std::ostream& err) {
  LoadedRun run = load_run_dir(run_dir);
  std::string csv_path = csv;
  auto pit = presets().find(csv);
  std::string smiles_col = "smiles";
  if (pit != presets().end()) {
    DatasetSchema schema = dataset_schema(pit->second.dataset);
    csv_path = (fs::path(data_dir) / schema.file_name).string();
    smiles_col = schema.smiles_column;
  }
  TokenizerOptions opt;
  opt.two_char_atoms = run.config.two_char_embedding;
  LoadReport report;
  DatasetTable table = load_csv(csv_path, smiles_col, run.task_names,
                                run.config.max_seq_len, opt, &report);
  if (!report.dropped.empty())
    err << report.dropped.size() << " rows dropped during load\n";
  EncodedDataset data =
      EncodedDataset::from_table(table, run.vocab, run.config);
  std::vector<const ModelParams<float>*> members;
  std::vector<ModelConfig> configs;
  for (const auto& c : run.checkpoints) {
    members.push_back(&c.params);
    configs.push_back(c.config);
  }
  AucResult res = ensemble_evaluate(members, configs, data);
  json j;
  j["csv"] = csv_path;
  j["members"] = run.checkpoints.size();
  j["mean_auc"] = res.mean_auc;
  json per_task = json::object();
  for (size_t t = 0; t < run.task_names.size(); ++t)
    per_task[run.task_names[t]] =
        std::isnan(res.per_task_auc[t]) ? json() : json(res.per_task_auc[t]);
  j["per_task_auc"] = per_task;
  json skipped = json::array();
  for (int t : res.skipped_tasks) skipped.push_back(run.task_names[static_cast<size_t>(t)]);
  j["skipped_tasks"] = skipped;
  out << j.dump(2) << "\n";
  write_text_file((fs::path(run_dir) /
                   ("eval-" + fs::path(csv_path).stem().string() + ".json"))
                      .string(),
                  j.dump(2) + "\n");
  return 0;
}

int cmd_encode(const std::string& run_dir, const std::string& smiles,
               const std::string& dump_path, std::ostream& out) {
  LoadedRun run = load_run_dir(run_dir);
  TokenizerOptions opt;
  opt.two_char_atoms = run.config.two_char_embedding;
  TokenSequence seq =
      tokenize(smiles, run.vocab, run.config.max_seq_len, opt, true);
  TokenBatch batch = make_batch(std::vector<TokenSequence>{seq},
                                run.config.max_seq_len);
  AttentionDump dump;
  Tape<float> tape(false);
  const auto& best = run.checkpoints.front();
  Tensor<float> enc = encode(tape, best.params, best.config, batch, false,
                             nullptr, &dump);
  out << "encoded [" << batch.batch_size << ", " << batch.seq_len << ", "
      << best.config.hidden_size << "]\n";
  if (!dump_path.empty()) {
    std::ostringstream csv;
    csv << "layer,head,query_pos,key_pos,weight\n";
    for (const auto& r : dump.rows)
      csv << r.layer << ',' << r.head << ',' << r.query_pos << ',' << r.key_pos
          << ',' << r.weight << "\n";
    write_text_file(dump_path, csv.str());
    out << "attention map written to " << dump_path << "\n";
  }
  return 0;
}

int cmd_gradcheck(std::ostream& out) {
  out << "64-bit finite-difference suite\n";
  SuiteResult res = run_gradcheck_suite(10, &out);
  out << (res.pass ? "PASS" : "FAIL") << ": max relative error "
      << res.max_rel_err << " over " << res.cases.size() << " cases in "
      << res.seconds << "s\n";
  if (!res.pass) throw NumericError("gradcheck failed");
  return 0;
}

struct AblateRow {
  std::string label;
  double mean_auc = 0.0;
  std::vector<double> seed_aucs;
  bool diverged = false;
};

int cmd_ablate(const TrainOptions& base_opt, const std::string& matrix,
               std::ostream& out, std::ostream& err,
               const std::vector<std::string>& argv_tail) {
  if (matrix != "table7")
    throw UsageError("unknown ablation matrix '" + matrix +
                     "' (supported: table7)");
  fs::create_directories(base_opt.run_dir);

  struct Variant {
    std::string key;
    std::string label;
    std::function<void(ModelConfig&)> tweak;
    bool single_task = false;
  };
  std::vector<Variant> variants = {
      {"full", "SA-MTL", [](ModelConfig&) {}, false},
      {"no_two_char", "- Two-Character Embedding",
       [](ModelConfig& c) { c.two_char_embedding = false; }, false},
      {"single_task", "- Multi-task Learning", [](ModelConfig&) {}, true},
      {"no_self_attention", "- Self Attention Module",
       [](ModelConfig& c) { c.use_self_attention = false; }, false},
      {"no_cnn", "- CNN", [](ModelConfig& c) { c.use_cnn = false; }, false},
      {"rnn", "CNN<>RNN",
       [](ModelConfig& c) {
         c.use_cnn = false;
         c.use_rnn_instead_of_cnn = true;
       },
       false},
      {"max_pool", "Discrete Output Layer<>Max Pooling",
       [](ModelConfig& c) { c.head_kind = HeadKind::max_pool; }, false},
      {"multi_head_5", "+ Multi-head (5)",
       [](ModelConfig& c) { c.num_heads = 5; }, false},
      {"pos_encoding", "+ Position encoding",
       [](ModelConfig& c) { c.use_position_encoding = true; }, false},
      {"no_cnn_no_sa", "- CNN - Self Attention (reference)",
       [](ModelConfig& c) {
         c.use_cnn = false;
         c.use_self_attention = false;
       },
       false},
  };

  std::vector<AblateRow> rows;
  for (const auto& variant : variants) {
    out << "== " << variant.label << "\n";
    AblateRow row;
    row.label = variant.label;
    try {
      if (!variant.single_task) {
        TrainOptions opt = base_opt;
        variant.tweak(opt.model);
        opt.model.validate();
        opt.run_dir =
            (fs::path(base_opt.run_dir) / ("ablate-" + variant.key)).string();
        TrainArtifacts art =
            run_training(opt, out, err, argv_tail, /*write_artifacts=*/false);
        row.mean_auc = art.mean_test_auc;
        for (const auto& r : art.runs) row.seed_aucs.push_back(r.test.mean_auc);
      } else {
        // one independent model per task; report the cross-task mean
        TokenizerOptions tok_opt;
        tok_opt.two_char_atoms = base_opt.model.two_char_embedding;
        LoadReport report;
        DatasetTable table =
            load_csv(base_opt.input.csv_path, base_opt.input.smiles_column,
                     base_opt.input.task_columns, base_opt.model.max_seq_len,
                     tok_opt, &report);
        std::vector<double> per_seed_sums(base_opt.train.seeds.size(), 0.0);
        int counted_tasks = 0;
        for (size_t task = 0; task < table.num_tasks(); ++task) {
          DatasetTable single = select_tasks(table, {static_cast<int>(task)});
          if (single.pos_per_task[0] == 0 || single.neg_per_task[0] == 0)
            continue;
          SplitSpec sp = base_opt.split_spec;
          sp.method = split_method_from_name(base_opt.input.split);
          SplitResult parts = split(single, sp);
          std::vector<std::string> corpus;
          for (const auto& r : single.records) corpus.push_back(r.smiles);
          Vocabulary vocab = build_vocabulary(corpus, tok_opt);
          ModelConfig cfg = base_opt.model;
          cfg.num_tasks = 1;
          std::vector<TaskHeadSpec> specs = {
              {0, parts.train.balancing_bias(0)}};
          EncodedDataset train_d =
              EncodedDataset::from_table(parts.train, vocab, cfg);
          EncodedDataset valid_d =
              EncodedDataset::from_table(parts.valid, vocab, cfg);
          EncodedDataset test_d =
              EncodedDataset::from_table(parts.test, vocab, cfg);
          for (size_t k = 0; k < base_opt.train.seeds.size(); ++k) {
            RunResult r = fit(cfg, vocab, train_d, valid_d, test_d, specs,
                              base_opt.train, base_opt.train.seeds[k]);
            per_seed_sums[k] += r.test.mean_auc;
          }
          ++counted_tasks;
        }
        if (counted_tasks == 0) throw DataError("no trainable task");
        for (size_t k = 0; k < per_seed_sums.size(); ++k) {
          double auc = per_seed_sums[k] / counted_tasks;
          row.seed_aucs.push_back(auc);
          row.mean_auc += auc;
        }
        row.mean_auc /= static_cast<double>(row.seed_aucs.size());
      }
    } catch (const NumericError& e) {
      row.diverged = true;
      err << variant.label << " diverged: " << e.what() << "\n";
    }
    out << variant.label << " mean AUC " << row.mean_auc
        << (row.diverged ? " (diverged)" : "") << "\n";
    rows.push_back(row);
  }

  std::ostringstream csv;
  csv << "config,mean_auc";
  for (size_t k = 0; k < base_opt.train.seeds.size(); ++k)
    csv << ",seed" << base_opt.train.seeds[k];
  csv << ",diverged\n";
  for (const auto& row : rows) {
    csv << csv_quote(row.label) << ',' << row.mean_auc;
    for (size_t k = 0; k < base_opt.train.seeds.size(); ++k)
      csv << ','
          << (k < row.seed_aucs.size() ? std::to_string(row.seed_aucs[k])
                                       : std::string());
    csv << ',' << (row.diverged ? 1 : 0) << "\n";
  }
  write_text_file(
      (fs::path(base_opt.run_dir) / "ablate_results.csv").string(), csv.str());
  out << "ablation table written to "
      << (fs::path(base_opt.run_dir) / "ablate_results.csv").string() << "\n";
  return 0;
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out,
             std::ostream& err) {
  CLI::App app{"SA-MTL: multi-task QSAR on SMILES"};
  app.require_subcommand(1);

  // fetch
  auto* fetch_cmd = app.add_subcommand("fetch", "download a benchmark dataset");
  std::string fetch_name, fetch_dest = default_data_dir();
  fetch_cmd->add_option("dataset", fetch_name, "tox21|hiv|sider|bbbp|clintox")
      ->required();
  fetch_cmd->add_option("--dest", fetch_dest, "destination directory");

  // tokenize
  auto* tok_cmd = app.add_subcommand("tokenize", "token or scaffold audit");
  std::string tok_input, tok_smiles_col, tok_tasks;
  bool tok_scaffolds = false, tok_no_two_char = false;
  std::string tok_data_dir = default_data_dir();
  tok_cmd->add_option("csv", tok_input, "csv path or preset name")->required();
  tok_cmd->add_option("--smiles-col", tok_smiles_col, "SMILES column name");
  tok_cmd->add_option("--data-dir", tok_data_dir, "dataset directory");
  tok_cmd->add_flag("--scaffolds", tok_scaffolds,
                    "emit smiles<TAB>scaffold_key lines");
  tok_cmd->add_flag("--no-two-char", tok_no_two_char,
                    "plain character tokenization");

  // shared train/ablate options
  auto add_train_options = [&](CLI::App* cmd, TrainOptions& opt,
                               std::string& input, std::string& smiles_col,
                               std::string& tasks, std::string& split_name,
                               std::string& data_dir, int& num_seeds,
                               uint64_t& seed_base) {
    cmd->add_option("csv", input, "csv path or preset name")->required();
    cmd->add_option("--smiles-col", smiles_col, "SMILES column name");
    cmd->add_option("--tasks", tasks, "comma-separated task columns");
    cmd->add_option("--split", split_name,
                    "random|stratified|scaffold (presets set this)");
    cmd->add_option("--data-dir", data_dir, "dataset directory");
    cmd->add_option("--seeds", num_seeds, "number of repeated runs");
    cmd->add_option("--seed-base", seed_base, "first seed value");
    cmd->add_option("--split-seed", opt.split_spec.seed, "split shuffle seed");
    cmd->add_option("--epochs", opt.train.max_epochs, "epoch cap");
    cmd->add_option("--patience", opt.train.patience,
                    "evaluations without improvement before stopping");
    cmd->add_option("--eval-every", opt.train.eval_every,
                    "epochs between validations");
    cmd->add_option("--batch", opt.train.batch_size, "batch size");
    cmd->add_option("--lr", opt.train.learning_rate, "learning rate");
    cmd->add_option("--jobs", opt.train.jobs, "concurrent seed jobs");
    cmd->add_option("--max-seq-len", opt.model.max_seq_len,
                    "token length cap");
    cmd->add_option("--embed", opt.model.embed_size, "embedding size");
    cmd->add_option("--hidden", opt.model.hidden_size, "hidden size");
    cmd->add_option("--ffn", opt.model.ffn_size, "feed-forward size");
    cmd->add_option("--filter", opt.model.conv_filter_width,
                    "CNN filter width");
    cmd->add_option("--layers", opt.model.num_sa_layers,
                    "self-attention layers");
    cmd->add_option("--heads", opt.model.num_heads, "attention heads");
    cmd->add_option("--dropout", opt.model.dropout_rate, "dropout rate");
  };

  // train
  auto* train_cmd = app.add_subcommand("train", "train the model");
  TrainOptions train_opt;
  std::string train_input, train_smiles_col, train_tasks, train_split,
      train_data_dir = default_data_dir(), train_run_dir;
  int train_num_seeds = 5;
  uint64_t train_seed_base = 1;
  bool train_no_cnn = false, train_no_sa = false, train_rnn = false,
       train_no_two_char = false, train_pos_enc = false,
       train_max_pool = false;
  add_train_options(train_cmd, train_opt, train_input, train_smiles_col,
                    train_tasks, train_split, train_data_dir, train_num_seeds,
                    train_seed_base);
  train_cmd->add_option("--run-dir", train_run_dir, "output directory");
  train_cmd->add_flag("--no-cnn", train_no_cnn, "drop the CNN layer");
  train_cmd->add_flag("--no-sa", train_no_sa, "drop the self-attention stack");
  train_cmd->add_flag("--rnn", train_rnn, "GRU front layer instead of CNN");
  train_cmd->add_flag("--no-two-char", train_no_two_char,
                      "plain character embedding");
  train_cmd->add_flag("--pos-encoding", train_pos_enc,
                      "add sinusoidal position encoding");
  train_cmd->add_flag("--max-pool", train_max_pool,
                      "max-pool head instead of the discrete output layer");

  // ablate
  auto* ablate_cmd = app.add_subcommand("ablate", "run the ablation matrix");
  TrainOptions ablate_opt;
  std::string ablate_input, ablate_smiles_col, ablate_tasks, ablate_split,
      ablate_data_dir = default_data_dir(), ablate_run_dir,
      ablate_matrix = "table7";
  int ablate_num_seeds = 5;
  uint64_t ablate_seed_base = 1;
  add_train_options(ablate_cmd, ablate_opt, ablate_input, ablate_smiles_col,
                    ablate_tasks, ablate_split, ablate_data_dir,
                    ablate_num_seeds, ablate_seed_base);
  ablate_cmd->add_option("--matrix", ablate_matrix, "ablation matrix name");
  ablate_cmd->add_option("--run-dir", ablate_run_dir, "output directory");

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "evaluate a run on a csv");
  std::string eval_run, eval_csv, eval_data_dir = default_data_dir();
  eval_cmd->add_option("run-dir", eval_run, "training run directory")
      ->required();
  eval_cmd->add_option("csv", eval_csv, "csv path or preset name")->required();
  eval_cmd->add_option("--data-dir", eval_data_dir, "dataset directory");

  // predict
  auto* pred_cmd = app.add_subcommand("predict", "per-task probabilities");
  std::string pred_run;
  std::vector<std::string> pred_smiles;
  pred_cmd->add_option("run-dir", pred_run, "training run directory")
      ->required();
  pred_cmd->add_option("smiles", pred_smiles, "SMILES strings")->required();

  // encode
  auto* enc_cmd = app.add_subcommand("encode", "encoder output and attention");
  std::string enc_run, enc_smiles, enc_dump;
  enc_cmd->add_option("run-dir", enc_run, "training run directory")->required();
  enc_cmd->add_option("smiles", enc_smiles, "SMILES string")->required();
  enc_cmd->add_option("--dump-attention", enc_dump,
                      "write attention weights CSV here");

  // gradcheck
  auto* grad_cmd =
      app.add_subcommand("gradcheck", "finite-difference gradient suite");

  std::vector<std::string> argv = args;
  std::vector<const char*> argv_c;
  argv_c.push_back("samtl");
  for (const auto& a : argv) argv_c.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv_c.size()), argv_c.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {  // --help
      out << app.help();
      return 0;
    }
    err << "usage error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (*fetch_cmd) return cmd_fetch(fetch_name, fetch_dest, out);
    if (*tok_cmd)
      return cmd_tokenize(tok_input, tok_data_dir, tok_smiles_col, tok_tasks,
                          tok_scaffolds, tok_no_two_char, out, err);
    if (*train_cmd || *ablate_cmd) {
      bool is_train = static_cast<bool>(*train_cmd);
      TrainOptions& opt = is_train ? train_opt : ablate_opt;
      std::string input = is_train ? train_input : ablate_input;
      std::string data_dir = is_train ? train_data_dir : ablate_data_dir;
      opt.input = resolve_dataset(
          input, data_dir, is_train ? train_smiles_col : ablate_smiles_col,
          is_train ? train_tasks : ablate_tasks);
      std::string split_flag = is_train ? train_split : ablate_split;
      if (!split_flag.empty()) opt.input.split = split_flag;
      if (opt.model.max_seq_len == 200)
        opt.model.max_seq_len = opt.input.max_seq_len;
      int num_seeds = is_train ? train_num_seeds : ablate_num_seeds;
      uint64_t seed_base = is_train ? train_seed_base : ablate_seed_base;
      if (num_seeds < 1) throw UsageError("--seeds must be >= 1");
      opt.train.seeds.clear();
      for (int k = 0; k < num_seeds; ++k)
        opt.train.seeds.push_back(seed_base + static_cast<uint64_t>(k));
      std::string run_dir = is_train ? train_run_dir : ablate_run_dir;
      if (run_dir.empty())
        run_dir = (fs::path(default_run_root()) /
                   (opt.input.stem + "-" + opt.input.split + "-" +
                    timestamp_utc()))
                      .string();
      opt.run_dir = run_dir;
      if (is_train) {
        if (train_no_cnn) opt.model.use_cnn = false;
        if (train_rnn) {
          opt.model.use_cnn = false;
          opt.model.use_rnn_instead_of_cnn = true;
        }
        if (train_no_sa) opt.model.use_self_attention = false;
        if (train_no_two_char) opt.model.two_char_embedding = false;
        if (train_pos_enc) opt.model.use_position_encoding = true;
        if (train_max_pool) opt.model.head_kind = HeadKind::max_pool;
        opt.model.validate();
        run_training(opt, out, err, args);
        return 0;
      }
      return cmd_ablate(opt, ablate_matrix, out, err, args);
    }
    if (*eval_cmd) return cmd_evaluate(eval_run, eval_csv, eval_data_dir, out, err);
    if (*pred_cmd) return cmd_predict(pred_run, pred_smiles, out);
    if (*enc_cmd) return cmd_encode(enc_run, enc_smiles, enc_dump, out);
    if (*grad_cmd) return cmd_gradcheck(out);
    throw UsageError("no command given");
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return static_cast<int>(e.kind());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace samtl
