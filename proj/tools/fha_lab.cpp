#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "fhalab/dependency.hpp"
#include "fhalab/hsic.hpp"
#include "fhalab/report.hpp"
#include "fhalab/synth_data.hpp"
#include "fhalab/training.hpp"

namespace {

using namespace fhalab;

constexpr double kPi = 3.14159265358979323846;

std::vector<double> parse_doubles(const std::string& csv) {
  std::vector<double> out;
  std::string cur;
  for (char c : csv + ",") {
    if (c == ',') {
      if (!cur.empty()) out.push_back(std::stod(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  return out;
}

// joint CSV: one column per coordinate (integer alphabet values), the last
// column is the probability. The table must be complete.
dependency::DiscreteJoint load_joint_csv(const std::string& path) {
  ad::Tensor m = data::load_matrix_csv(path);
  if (m.cols() < 2)
    throw std::invalid_argument("logcoef: need at least one coordinate column plus the "
                                "probability column");
  std::size_t coords = m.cols() - 1;
  dependency::DiscreteJoint joint;
  joint.support_sizes.assign(coords, 0);
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < coords; ++c) {
      double v = m.at(r, c);
      if (v < 0 || v != std::floor(v))
        throw std::invalid_argument("logcoef: coordinate values must be non-negative integers "
                                    "(row " + std::to_string(r + 1) + ")");
      joint.support_sizes[c] =
          std::max(joint.support_sizes[c], static_cast<std::size_t>(v) + 1);
    }
  joint.prob.assign(joint.table_size(), 0.0);
  std::vector<bool> seen(joint.prob.size(), false);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    std::vector<std::size_t> z(coords);
    for (std::size_t c = 0; c < coords; ++c) z[c] = static_cast<std::size_t>(m.at(r, c));
    std::size_t idx = joint.flat_index(z);
    if (seen[idx])
      throw std::invalid_argument("logcoef: duplicate configuration at row " +
                                  std::to_string(r + 1));
    seen[idx] = true;
    joint.prob[idx] = m.at(r, coords);
  }
  for (std::size_t i = 0; i < seen.size(); ++i)
    if (!seen[i])
      throw std::invalid_argument("logcoef: the table is incomplete (missing configurations)");
  joint.validate();
  return joint;
}

std::string metrics_filename(const training::ExperimentConfig& cfg, std::uint64_t seed) {
  return std::string(training::method_name(cfg.method)) + "_ml" +
         std::to_string(cfg.shots_per_class) + "_seed" + std::to_string(seed) + ".csv";
}

int cmd_train(const std::string& config_path, const std::string& out_dir, std::size_t jobs) {
  training::ExperimentConfig cfg = report::load_config_file(config_path);
  if (const char* env_seed = std::getenv("FHA_LAB_SEED")) {
    cfg.seeds = {std::strtoull(env_seed, nullptr, 10)};
    std::fprintf(stderr, "FHA_LAB_SEED=%s overrides the configured seeds\n", env_seed);
  }
  std::filesystem::create_directories(out_dir);

  auto runs = training::run_experiment(cfg, jobs);
  for (const auto& run : runs)
    training::write_metrics_csv(out_dir + "/" + metrics_filename(cfg, run.seed), run);
  training::ExperimentSummary summary = training::summarize(cfg, runs);
  std::string summary_path = out_dir + "/summary_" +
                             std::string(training::method_name(cfg.method)) + "_ml" +
                             std::to_string(cfg.shots_per_class) + ".json";
  report::write_summary_json(summary_path, summary);
  std::printf("%s: accuracy %.4f +- %.4f over %zu seed(s); summary at %s\n",
              training::method_name(cfg.method), summary.accuracy.mean,
              summary.accuracy.stddev, runs.size(), summary_path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale lab for diversity-enhanced few-shot hypothesis adaptation"};
  app.require_subcommand(1);

  // data
  auto* data_cmd = app.add_subcommand("data", "synthetic dataset tools");
  data_cmd->require_subcommand(1);

  auto* blobs = data_cmd->add_subcommand("make-blobs", "Gaussian blob dataset to CSV");
  std::size_t blob_classes = 3, blob_per_class = 100, blob_dims = 2;
  double blob_spread = 0.6;
  std::uint64_t blob_seed = 1;
  std::string blob_domain = "source", blob_out;
  blobs->add_option("--classes", blob_classes, "number of classes (>= 2)");
  blobs->add_option("--per-class", blob_per_class, "samples per class");
  blobs->add_option("--dims", blob_dims, "feature dimensions (>= 2)");
  blobs->add_option("--spread", blob_spread, "Gaussian spread around class means");
  blobs->add_option("--seed", blob_seed, "generator seed");
  blobs->add_option("--domain", blob_domain, "domain tag: source|target|generated");
  blobs->add_option("--out", blob_out, "output CSV path")->required();

  auto* shift = data_cmd->add_subcommand("shift", "apply an affine domain shift to a CSV");
  std::string shift_in, shift_out, shift_offset, shift_scale;
  double shift_angle_deg = 0.0;
  shift->add_option("--in", shift_in, "input dataset CSV")->required();
  shift->add_option("--out", shift_out, "output CSV path")->required();
  shift->add_option("--angle-degrees", shift_angle_deg, "rotation of the first two dims");
  shift->add_option("--offset", shift_offset, "comma-separated per-dim translation");
  shift->add_option("--scale", shift_scale, "comma-separated per-dim scale factors");

  // hsic
  auto* hsic_cmd = app.add_subcommand("hsic", "empirical HSIC of two feature CSVs");
  std::string hsic_x, hsic_y;
  double hsic_sigma = 0.0, hsic_jitter = 0.0;
  bool hsic_sqrt = false;
  hsic_cmd->add_option("--x", hsic_x, "first feature matrix CSV")->required();
  hsic_cmd->add_option("--y", hsic_y, "second feature matrix CSV")->required();
  hsic_cmd->add_option("--sigma", hsic_sigma, "Gaussian bandwidth (default: median heuristic)");
  hsic_cmd->add_option("--jitter", hsic_jitter, "diagonal jitter (default 0)");
  hsic_cmd->add_flag("--sqrt", hsic_sqrt, "print sqrt(HSIC), the diversity convention");

  // logcoef
  auto* logcoef_cmd = app.add_subcommand("logcoef", "log-coefficient of a discrete joint");
  std::string logcoef_in;
  std::size_t logcoef_cap = dependency::kDefaultEvalCap;
  logcoef_cmd->add_option("--in", logcoef_in, "joint table CSV (coordinates, probability)")
      ->required();
  logcoef_cmd->add_option("--cap", logcoef_cap, "max ratio evaluations per pair");

  // complexity
  auto* cx_cmd = app.add_subcommand("complexity", "sample-size bounds calculator");
  dependency::ComplexityInputs cx;
  bool cx_sweep = false;
  cx_cmd->add_option("--epsilon", cx.epsilon, "target error in (0,1)");
  cx_cmd->add_option("--delta", cx.delta, "failure probability in (0,1)");
  cx_cmd->add_option("--alpha", cx.alpha, "log-coefficient, must be < 0.5");
  cx_cmd->add_option("--vc-dim", cx.vc_dim, "VC dimension of the compatibility class");
  cx_cmd->add_option("--t", cx.t, "compatibility defect in [0,1]");
  cx_cmd->add_option("--split-count", cx.split_count, "expected split count (>= 1)");
  cx_cmd->add_option("--c1", cx.c1, "constant for the log term");
  cx_cmd->add_option("--c2", cx.c2, "constant for the VC term");
  cx_cmd->add_flag("--sweep", cx_sweep, "also print a CSV sweep over alpha");

  // train
  auto* train_cmd = app.add_subcommand("train", "run an experiment config");
  std::string train_config, train_out = "out";
  std::size_t train_jobs = 1;
  train_cmd->add_option("--config", train_config, "experiment config JSON")->required();
  train_cmd->add_option("--out", train_out, "output directory");
  train_cmd->add_option("--jobs", train_jobs, "parallel seed runs");

  // report
  auto* report_cmd = app.add_subcommand("report", "summaries to accuracy/diversity tables");
  std::string report_dir, report_out;
  report_cmd->add_option("--dir", report_dir, "directory of summary JSON files")->required();
  report_cmd->add_option("--out", report_out, "output directory (default: --dir)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (blobs->parsed()) {
      auto ds = data::make_blobs(blob_classes, blob_per_class, blob_dims, blob_spread,
                                 blob_seed, data::parse_domain(blob_domain));
      data::save_csv(ds, blob_out);
      std::printf("wrote %zu samples to %s\n", ds.size(), blob_out.c_str());
    } else if (shift->parsed()) {
      auto ds = data::load_csv(shift_in);
      data::ShiftSpec spec;
      spec.angle = shift_angle_deg * kPi / 180.0;
      if (!shift_offset.empty()) spec.offset = parse_doubles(shift_offset);
      if (!shift_scale.empty()) spec.scale = parse_doubles(shift_scale);
      data::save_csv(data::apply_shift(ds, spec), shift_out);
      std::printf("wrote %zu shifted samples to %s\n", ds.size(), shift_out.c_str());
    } else if (hsic_cmd->parsed()) {
      ad::Tensor x = data::load_matrix_csv(hsic_x);
      ad::Tensor y = data::load_matrix_csv(hsic_y);
      if (x.rows() != y.rows())
        throw std::invalid_argument("hsic: row counts differ (" + std::to_string(x.rows()) +
                                    " vs " + std::to_string(y.rows()) + ")");
      kernels::KernelConfig kcfg;
      if (hsic_sigma > 0) kcfg.bandwidth = hsic_sigma;
      kcfg.jitter = hsic_jitter;
      auto value = hsic::hsic_biased(x, y, kcfg);
      std::printf("%.12g\n", hsic_sqrt ? std::sqrt(value.value) : value.value);
    } else if (logcoef_cmd->parsed()) {
      auto joint = load_joint_csv(logcoef_in);
      std::printf("%.12g\n", dependency::log_coefficient(joint, logcoef_cap));
    } else if (cx_cmd->parsed()) {
      auto out = dependency::sample_complexity(cx);
      std::printf("m_u=%" PRIu64 " m_l=%" PRIu64 " (up to unspecified constants c1=%g c2=%g)\n",
                  out.m_unlabeled, out.m_labeled, cx.c1, cx.c2);
      if (cx_sweep) {
        std::printf("alpha,m_u,m_l\n");
        for (double a = 0.0; a < 0.5 - 1e-9; a += 0.05) {
          dependency::ComplexityInputs sweep = cx;
          sweep.alpha = a;
          auto s = dependency::sample_complexity(sweep);
          std::printf("%.2f,%" PRIu64 ",%" PRIu64 "\n", a, s.m_unlabeled, s.m_labeled);
        }
      }
    } else if (train_cmd->parsed()) {
      return cmd_train(train_config, train_out, train_jobs);
    } else if (report_cmd->parsed()) {
      auto summaries = report::load_summaries_dir(report_dir);
      auto files = report::build_report(std::move(summaries));
      report::write_report(report_out.empty() ? report_dir : report_out, files);
      std::fputs(files.text_table.c_str(), stdout);
    }
  } catch (const numeric_error& e) {
    std::fprintf(stderr, "numeric abort: %s\n", e.what());
    return 3;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "failure: %s\n", e.what());
    return 1;
  }
  return 0;
}
