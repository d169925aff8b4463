#include "fhalab/report.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace fhalab::report {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

constexpr double kPi = 3.14159265358979323846;

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

void require_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) fail("config: " + where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) fail("config: unknown field '" + where + it.key() + "'");
}

double number_field(const json& j, const char* key, double fallback) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_number()) fail(std::string("config: '") + key + "' must be a number");
  return j[key].get<double>();
}

std::size_t count_field(const json& j, const char* key, std::size_t fallback) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_number_unsigned())
    fail(std::string("config: '") + key + "' must be a non-negative integer");
  return j[key].get<std::size_t>();
}

bool bool_field(const json& j, const char* key, bool fallback) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_boolean()) fail(std::string("config: '") + key + "' must be a boolean");
  return j[key].get<bool>();
}

std::vector<double> vector_field(const json& j, const char* key) {
  std::vector<double> out;
  if (!j.contains(key)) return out;
  if (!j[key].is_array()) fail(std::string("config: '") + key + "' must be an array");
  for (const auto& v : j[key]) {
    if (!v.is_number()) fail(std::string("config: '") + key + "' entries must be numbers");
    out.push_back(v.get<double>());
  }
  return out;
}

void parse_task(const json& j, training::TaskConfig& task) {
  require_keys(j,
               {"name", "classes", "dims", "source_per_class", "target_per_class", "spread",
                "shift"},
               "task.");
  if (j.contains("name")) task.name = j["name"].get<std::string>();
  task.classes = count_field(j, "classes", task.classes);
  task.dims = count_field(j, "dims", task.dims);
  task.source_per_class = count_field(j, "source_per_class", task.source_per_class);
  task.target_per_class = count_field(j, "target_per_class", task.target_per_class);
  task.spread = number_field(j, "spread", task.spread);
  if (j.contains("shift")) {
    const json& s = j["shift"];
    require_keys(s, {"angle_degrees", "offset", "scale", "noise_std"}, "task.shift.");
    data::ShiftSpec shift;
    shift.angle = number_field(s, "angle_degrees", 0.0) * kPi / 180.0;
    shift.offset = vector_field(s, "offset");
    shift.scale = vector_field(s, "scale");
    shift.noise_std = number_field(s, "noise_std", 0.0);
    task.shift = shift;
  }
}

void parse_model(const json& j, models::ModelDims& model) {
  require_keys(j,
               {"encoder_hidden", "encoder_out", "semantic_layer_index", "noise_dim",
                "generator_hidden", "discriminator_hidden"},
               "model.");
  model.encoder_hidden = count_field(j, "encoder_hidden", model.encoder_hidden);
  model.encoder_out = count_field(j, "encoder_out", model.encoder_out);
  model.semantic_layer_index = count_field(j, "semantic_layer_index", model.semantic_layer_index);
  model.noise_dim = count_field(j, "noise_dim", model.noise_dim);
  model.generator_hidden = count_field(j, "generator_hidden", model.generator_hidden);
  model.discriminator_hidden =
      count_field(j, "discriminator_hidden", model.discriminator_hidden);
}

}  // namespace

training::ExperimentConfig parse_config_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    fail(std::string("config: invalid JSON: ") + e.what());
  }
  require_keys(j,
               {"method", "task", "seeds", "shots_per_class", "epochs", "gen_pretrain_epochs",
                "disc_pretrain_epochs", "adaptation_steps", "batch", "lr_generator",
                "lr_discriminator", "lr_classifier", "lambda", "beta", "kernel", "g4_sign",
                "similarity_class_restricted", "pretrain_with_diversity",
                "freeze_generator_in_adaptation", "pairs_per_group",
                "generated_supervised_per_class", "diversity_report_batches",
                "diversity_report_batch", "source_pretrain_epoch_cap",
                "source_pretrain_target_acc", "ft_steps", "record_wall_ms", "model"},
               "");

  training::ExperimentConfig cfg;
  if (!j.contains("method")) fail("config: required field 'method' is missing");
  cfg.method = training::parse_method(j["method"].get<std::string>());

  if (j.contains("task")) parse_task(j["task"], cfg.task);
  if (j.contains("seeds")) {
    if (!j["seeds"].is_array()) fail("config: 'seeds' must be an array");
    cfg.seeds.clear();
    for (const auto& s : j["seeds"]) {
      if (!s.is_number_unsigned()) fail("config: 'seeds' entries must be non-negative integers");
      cfg.seeds.push_back(s.get<std::uint64_t>());
    }
  }
  cfg.shots_per_class = count_field(j, "shots_per_class", cfg.shots_per_class);
  cfg.epochs = count_field(j, "epochs", cfg.epochs);
  cfg.gen_pretrain_epochs = count_field(j, "gen_pretrain_epochs", cfg.gen_pretrain_epochs);
  cfg.disc_pretrain_epochs = count_field(j, "disc_pretrain_epochs", cfg.disc_pretrain_epochs);
  cfg.adaptation_steps = count_field(j, "adaptation_steps", cfg.adaptation_steps);
  cfg.batch = count_field(j, "batch", cfg.batch);
  cfg.lr_generator = number_field(j, "lr_generator", cfg.lr_generator);
  cfg.lr_discriminator = number_field(j, "lr_discriminator", cfg.lr_discriminator);
  cfg.lr_classifier = number_field(j, "lr_classifier", cfg.lr_classifier);
  cfg.weights.lambda = number_field(j, "lambda", cfg.weights.lambda);
  cfg.weights.beta = number_field(j, "beta", cfg.weights.beta);
  if (j.contains("kernel")) {
    const json& k = j["kernel"];
    require_keys(k, {"bandwidth", "jitter"}, "kernel.");
    if (k.contains("bandwidth")) {
      if (k["bandwidth"].is_string()) {
        if (k["bandwidth"].get<std::string>() != "median")
          fail("config: kernel.bandwidth must be a positive number or \"median\"");
        cfg.kernel.bandwidth.reset();
      } else if (k["bandwidth"].is_number()) {
        cfg.kernel.bandwidth = k["bandwidth"].get<double>();
      } else {
        fail("config: kernel.bandwidth must be a positive number or \"median\"");
      }
    }
    cfg.kernel.jitter = number_field(k, "jitter", cfg.kernel.jitter);
  }
  if (j.contains("g4_sign")) {
    std::string sign = j["g4_sign"].get<std::string>();
    if (sign == "paper") cfg.g4_sign = losses::G4Sign::paper;
    else if (sign == "symmetric") cfg.g4_sign = losses::G4Sign::symmetric;
    else fail("config: g4_sign must be \"paper\" or \"symmetric\"");
  }
  cfg.similarity_class_restricted =
      bool_field(j, "similarity_class_restricted", cfg.similarity_class_restricted);
  cfg.pretrain_with_diversity =
      bool_field(j, "pretrain_with_diversity", cfg.pretrain_with_diversity);
  cfg.freeze_generator_in_adaptation =
      bool_field(j, "freeze_generator_in_adaptation", cfg.freeze_generator_in_adaptation);
  cfg.pairs_per_group = count_field(j, "pairs_per_group", cfg.pairs_per_group);
  cfg.generated_supervised_per_class =
      count_field(j, "generated_supervised_per_class", cfg.generated_supervised_per_class);
  cfg.diversity_report_batches =
      count_field(j, "diversity_report_batches", cfg.diversity_report_batches);
  cfg.diversity_report_batch =
      count_field(j, "diversity_report_batch", cfg.diversity_report_batch);
  cfg.source_pretrain_epoch_cap =
      count_field(j, "source_pretrain_epoch_cap", cfg.source_pretrain_epoch_cap);
  cfg.source_pretrain_target_acc =
      number_field(j, "source_pretrain_target_acc", cfg.source_pretrain_target_acc);
  cfg.ft_steps = count_field(j, "ft_steps", cfg.ft_steps);
  cfg.record_wall_ms = bool_field(j, "record_wall_ms", cfg.record_wall_ms);
  if (j.contains("model")) parse_model(j["model"], cfg.model);

  cfg.validate();
  return cfg;
}

training::ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("config: cannot open " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_config_json(buffer.str());
}

namespace {

ordered_json aggregate_json(const training::Aggregate& a) {
  ordered_json j;
  j["mean"] = a.mean;
  j["std"] = a.stddev;
  j["per_seed"] = a.per_seed;
  return j;
}

training::Aggregate aggregate_from(const json& j) {
  training::Aggregate a;
  a.mean = j.at("mean").get<double>();
  a.stddev = j.at("std").get<double>();
  for (const auto& v : j.at("per_seed")) a.per_seed.push_back(v.get<double>());
  return a;
}

}  // namespace

std::string summary_json_string(const training::ExperimentSummary& summary) {
  ordered_json j;
  j["task"] = summary.task;
  j["method"] = training::method_name(summary.method);
  j["shots_per_class"] = summary.shots_per_class;
  j["seeds"] = summary.seeds;
  j["accuracy"] = aggregate_json(summary.accuracy);
  j["diversity_semantic"] = aggregate_json(summary.diversity_semantic);
  j["diversity_raw"] = aggregate_json(summary.diversity_raw);
  j["wall_seconds_total"] = summary.wall_seconds_total;
  return j.dump(2) + "\n";
}

void write_summary_json(const std::string& path, const training::ExperimentSummary& summary) {
  std::ofstream out(path);
  if (!out) fail("write_summary_json: cannot open " + path);
  out << summary_json_string(summary);
  if (!out) throw std::runtime_error("write_summary_json: write failed for " + path);
}

training::ExperimentSummary parse_summary_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    fail(std::string("summary: invalid JSON: ") + e.what());
  }
  training::ExperimentSummary s;
  try {
    s.task = j.at("task").get<std::string>();
    s.method = training::parse_method(j.at("method").get<std::string>());
    s.shots_per_class = j.at("shots_per_class").get<std::size_t>();
    for (const auto& v : j.at("seeds")) s.seeds.push_back(v.get<std::uint64_t>());
    s.accuracy = aggregate_from(j.at("accuracy"));
    s.diversity_semantic = aggregate_from(j.at("diversity_semantic"));
    s.diversity_raw = aggregate_from(j.at("diversity_raw"));
    s.wall_seconds_total = j.value("wall_seconds_total", 0.0);
  } catch (const json::exception& e) {
    fail(std::string("summary: ") + e.what());
  }
  return s;
}

std::vector<training::ExperimentSummary> load_summaries_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) fail("report: " + dir + " is not a directory");
  std::vector<std::string> paths;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.path().extension() == ".json") paths.push_back(entry.path().string());
  std::sort(paths.begin(), paths.end());
  std::vector<training::ExperimentSummary> out;
  for (const auto& p : paths) {
    std::ifstream in(p);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    out.push_back(parse_summary_json(buffer.str()));
  }
  if (out.empty()) fail("report: no summary JSON files in " + dir);
  return out;
}

namespace {

std::string json_number(double v) { return json(v).dump(); }

std::string cell(const training::Aggregate& a) {
  return json_number(a.mean) + "+-" + json_number(a.stddev);
}

}  // namespace

ReportFiles build_report(std::vector<training::ExperimentSummary> summaries) {
  std::sort(summaries.begin(), summaries.end(), [](const auto& a, const auto& b) {
    std::string an = training::method_name(a.method), bn = training::method_name(b.method);
    return an != bn ? an < bn : a.shots_per_class < b.shots_per_class;
  });

  std::vector<std::string> methods;
  std::vector<std::size_t> shots;
  for (const auto& s : summaries) {
    std::string m = training::method_name(s.method);
    if (std::find(methods.begin(), methods.end(), m) == methods.end()) methods.push_back(m);
    if (std::find(shots.begin(), shots.end(), s.shots_per_class) == shots.end())
      shots.push_back(s.shots_per_class);
  }
  std::sort(shots.begin(), shots.end());

  auto find_summary = [&](const std::string& method,
                          std::size_t sh) -> const training::ExperimentSummary* {
    for (const auto& s : summaries)
      if (training::method_name(s.method) == method && s.shots_per_class == sh) return &s;
    return nullptr;
  };

  ReportFiles files;
  files.accuracy_grid_csv = "method";
  for (std::size_t sh : shots) files.accuracy_grid_csv += ",m_l=" + std::to_string(sh);
  files.accuracy_grid_csv += "\n";
  for (const auto& m : methods) {
    files.accuracy_grid_csv += m;
    for (std::size_t sh : shots) {
      files.accuracy_grid_csv += ",";
      if (const auto* s = find_summary(m, sh)) files.accuracy_grid_csv += cell(s->accuracy);
    }
    files.accuracy_grid_csv += "\n";
  }

  files.diversity_csv =
      "method,shots_per_class,diversity_semantic_mean,diversity_semantic_std,"
      "diversity_raw_mean,diversity_raw_std\n";
  for (const auto& s : summaries) {
    files.diversity_csv += std::string(training::method_name(s.method)) + "," +
                           std::to_string(s.shots_per_class) + "," +
                           json_number(s.diversity_semantic.mean) + "," +
                           json_number(s.diversity_semantic.stddev) + "," +
                           json_number(s.diversity_raw.mean) + "," +
                           json_number(s.diversity_raw.stddev) + "\n";
  }

  std::ostringstream table;
  table << "accuracy (mean+-std) by method and labeled shots per class\n";
  for (const auto& m : methods) {
    table << "  " << m << ":";
    for (std::size_t sh : shots) {
      if (const auto* s = find_summary(m, sh))
        table << "  m_l=" << sh << ": " << cell(s->accuracy);
    }
    table << "\n";
  }
  files.text_table = table.str();
  return files;
}

void write_report(const std::string& out_dir, const ReportFiles& files) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  for (const auto& [name, content] :
       {std::pair<std::string, const std::string&>{"accuracy_grid.csv",
                                                   files.accuracy_grid_csv},
        {"diversity.csv", files.diversity_csv}}) {
    std::ofstream out(out_dir + "/" + name);
    if (!out) fail("report: cannot open " + out_dir + "/" + name);
    out << content;
  }
}

}  // namespace fhalab::report
