#ifndef FHALAB_TRAINING_HPP
#define FHALAB_TRAINING_HPP

#include <string>

#include "fhalab/kernels.hpp"
#include "fhalab/losses.hpp"
#include "fhalab/models.hpp"
#include "fhalab/synth_data.hpp"

namespace fhalab::training {

enum class Method {
  wa,                      // evaluate the source classifier as-is
  ft,                      // retrain the head on the labeled target shots
  degnet,                  // full generation + adaptation loop
  degnet_no_diversity,     // beta pinned to 0
  separate_gen,            // one independently trained generator per class
  degnet_gen_supervised,   // adds supervised loss over generated data
};

const char* method_name(Method m);
Method parse_method(const std::string& name);

/// Synthetic source/target task: blobs plus an affine shift. The default is
/// the rot60 benchmark (3 classes, 2 dims, spread 0.6, rotation 60 degrees,
/// offset (1, 0)).
struct TaskConfig {
  std::string name = "rot60";
  std::size_t classes = 3;
  std::size_t dims = 2;
  std::size_t source_per_class = 300;
  std::size_t target_per_class = 350;
  double spread = 0.6;
  data::ShiftSpec shift;

  TaskConfig();
  void validate() const;
};

struct ExperimentConfig {
  TaskConfig task;
  Method method = Method::degnet;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::size_t shots_per_class = 5;  // m_l / K

  std::size_t epochs = 600;                  // T_max
  std::size_t gen_pretrain_epochs = 300;     // similarity-only generator phase
  std::size_t disc_pretrain_epochs = 100;    // T_d
  std::size_t adaptation_steps = 50;         // T_f
  std::size_t batch = 32;                    // B_n
  double lr_generator = 1e-4;
  double lr_discriminator = 1e-4;
  double lr_classifier = 1e-3;
  losses::LossWeights weights;               // lambda 0.9, beta 0.1
  kernels::KernelConfig kernel;              // median heuristic, jitter 1e-6
  losses::G4Sign g4_sign = losses::G4Sign::paper;
  bool similarity_class_restricted = false;
  bool pretrain_with_diversity = false;
  bool freeze_generator_in_adaptation = false;

  std::size_t pairs_per_group = 16;
  std::size_t generated_supervised_per_class = 5;  // only degnet_gen_supervised
  std::size_t diversity_report_batches = 50;
  std::size_t diversity_report_batch = 32;
  std::size_t source_pretrain_epoch_cap = 2000;
  double source_pretrain_target_acc = 0.98;
  std::size_t ft_steps = 50;
  bool record_wall_ms = false;  // keeps shipped metrics byte-reproducible

  models::ModelDims model;  // data_dim / classes are overwritten from the task

  void validate() const;
  models::ModelDims resolved_dims() const;
};

struct EpochRow {
  std::size_t epoch = 0;
  std::string phase;
  double loss_c = 0, loss_s = 0, loss_d = 0, loss_gd = 0;
  double loss_disc = 0, loss_f = 0;
  double eval_acc = 0;
  double diversity_semantic = 0, diversity_raw = 0;
  double wall_ms = 0;
};

struct RunMetrics {
  Method method = Method::wa;
  std::uint64_t seed = 0;
  std::size_t shots_per_class = 0;
  std::vector<EpochRow> rows;
  double source_train_accuracy = 0;
  double wa_accuracy = 0;          // source classifier on the target eval set
  double final_accuracy = 0;
  double final_diversity_semantic = 0;
  double final_diversity_raw = 0;
  double wall_seconds = 0;         // real time; never part of determinism checks
};

struct SourcePretrainResult {
  models::ClassifierParams params;
  double train_accuracy = 0;
  std::size_t epochs_used = 0;
};

/// Derived RNG streams so every method sees identical data for a given seed.
struct SeedPlan {
  std::uint64_t source_data;
  std::uint64_t target_data;
  std::uint64_t split;
  std::uint64_t source_train;
  std::uint64_t run;
};
SeedPlan derive_seeds(std::uint64_t seed);

/// The exact datasets a run with this (config, seed) trains and evaluates on.
struct TaskData {
  data::DomainDataset source;
  data::DomainDataset target_labeled;
  data::DomainDataset target_eval;
};
TaskData build_task_data(const ExperimentConfig& cfg, const SeedPlan& seeds);

/// Empirical-risk training of the source hypothesis on the synthetic source
/// domain until the train accuracy target (default 0.98) or the epoch cap.
/// Aborts when the cap is hit at chance-level accuracy.
SourcePretrainResult pretrain_source(const ExperimentConfig& cfg, std::uint64_t seed);

RunMetrics run_degnet(const ExperimentConfig& cfg, std::uint64_t seed);
RunMetrics run_baseline(const ExperimentConfig& cfg, std::uint64_t seed);
RunMetrics run_ablation(const ExperimentConfig& cfg, std::uint64_t seed);
/// Dispatch on cfg.method.
RunMetrics run_single(const ExperimentConfig& cfg, std::uint64_t seed);

struct Aggregate {
  double mean = 0;
  double stddev = 0;
  std::vector<double> per_seed;
};
Aggregate aggregate(const std::vector<double>& values);

struct ExperimentSummary {
  std::string task;
  Method method = Method::wa;
  std::size_t shots_per_class = 0;
  std::vector<std::uint64_t> seeds;
  Aggregate accuracy;
  Aggregate diversity_semantic;
  Aggregate diversity_raw;
  double wall_seconds_total = 0;
};

ExperimentSummary summarize(const ExperimentConfig& cfg, const std::vector<RunMetrics>& runs);

/// All seeds of one config; jobs > 1 runs seeds on worker threads, outputs
/// ordered by seed regardless.
std::vector<RunMetrics> run_experiment(const ExperimentConfig& cfg, std::size_t jobs = 1);

void write_metrics_csv(const std::string& path, const RunMetrics& metrics);
std::string metrics_csv_string(const RunMetrics& metrics);

}  // namespace fhalab::training

#endif
