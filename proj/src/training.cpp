#include "fhalab/training.hpp"

#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <thread>

namespace fhalab::training {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void check_finite(double v, const char* loss_name, std::size_t epoch) {
  if (!std::isfinite(v))
    throw numeric_error(std::string(loss_name) + " is not finite at epoch " +
                        std::to_string(epoch));
}

struct ParamBinding {
  std::string name;
  ad::Tensor* param;
  int node;
};

class BlockOptimizer {
 public:
  explicit BlockOptimizer(double lr) { cfg_.learning_rate = lr; }

  void apply(const std::vector<ParamBinding>& bindings, const ad::GradMap& grads) {
    for (const auto& b : bindings) {
      auto [it, inserted] = states_.try_emplace(b.name);
      if (inserted) it->second.cfg = cfg_;
      adam_step(b.param->data, grads.at(b.node), it->second, b.name);
    }
  }

 private:
  AdamConfig cfg_;
  std::map<std::string, AdamState> states_;
};

template <typename Params>
std::vector<ParamBinding> register_params(ad::Tape& tape, Params& params) {
  std::vector<ParamBinding> out;
  models::for_each_param(params, [&](const std::string& name, ad::Tensor& t) {
    ad::Tensor leafed = tape.leaf(t);
    t.node = leafed.node;
    t.tape_id = leafed.tape_id;
    out.push_back({name, &t, leafed.node});
  });
  return out;
}

std::vector<ParamBinding> register_head_only(ad::Tape& tape, models::ClassifierParams& params) {
  std::vector<ParamBinding> out;
  for (std::size_t i = 0; i < params.head.size(); ++i) {
    for (ad::Tensor* t : {&params.head[i].weight, &params.head[i].bias}) {
      ad::Tensor leafed = tape.leaf(*t);
      t->node = leafed.node;
      t->tape_id = leafed.tape_id;
      out.push_back({"head." + std::to_string(i) + (t == &params.head[i].weight ? ".weight" : ".bias"),
                     t, leafed.node});
    }
  }
  return out;
}

double accuracy(const models::ClassifierParams& params, const ad::Tensor& features,
                const std::vector<std::size_t>& labels) {
  auto out = models::classify(params, features);
  std::size_t correct = 0, k = out.probs.cols();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c)
      if (out.probs.at(i, c) > out.probs.at(i, best)) best = c;
    if (best == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

ad::Tensor gaussian_noise(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  return ad::Tensor::matrix(rows, cols, rng::normal_vec(rng, rows * cols));
}

// P x N selector with one 1 per row, to gather rows through a matmul.
ad::Tensor selector(const std::vector<std::size_t>& rows, std::size_t n) {
  ad::Tensor s = ad::Tensor::zeros({rows.size(), n});
  for (std::size_t i = 0; i < rows.size(); ++i) s.at(i, rows[i]) = 1.0;
  return s;
}

}  // namespace

const char* method_name(Method m) {
  switch (m) {
    case Method::wa: return "WA";
    case Method::ft: return "FT";
    case Method::degnet: return "DEGNET";
    case Method::degnet_no_diversity: return "DEGNET_NO_DIVERSITY";
    case Method::separate_gen: return "SEPARATE_GEN";
    case Method::degnet_gen_supervised: return "DEGNET_GEN_SUPERVISED";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  for (Method m : {Method::wa, Method::ft, Method::degnet, Method::degnet_no_diversity,
                   Method::separate_gen, Method::degnet_gen_supervised})
    if (name == method_name(m)) return m;
  throw std::invalid_argument("unknown method '" + name + "'");
}

TaskConfig::TaskConfig() {
  shift.angle = 60.0 * kPi / 180.0;
  shift.offset = {1.0, 0.0};
}

void TaskConfig::validate() const {
  if (classes < 2) throw std::invalid_argument("task: need at least 2 classes");
  if (dims < 2) throw std::invalid_argument("task: need at least 2 dims");
  if (source_per_class == 0 || target_per_class == 0)
    throw std::invalid_argument("task: per-class sample counts must be positive");
  if (spread < 0) throw std::invalid_argument("task: spread must be non-negative");
  shift.validate(dims);
}

void ExperimentConfig::validate() const {
  task.validate();
  if (seeds.empty()) throw std::invalid_argument("config: needs at least one seed");
  if (shots_per_class == 0) throw std::invalid_argument("config: shots_per_class must be >= 1");
  bool trains = method != Method::wa;
  if (method == Method::ft && ft_steps == 0)
    throw std::invalid_argument("config: ft_steps must be positive");
  if (trains && method != Method::ft) {
    if (epochs == 0) throw std::invalid_argument("config: epochs must be positive");
    if (adaptation_steps == 0 || adaptation_steps >= epochs)
      throw std::invalid_argument(
          "config: adaptation_steps must be at least 1 and below epochs");
    if (batch < 2) throw std::invalid_argument("config: batch must be at least 2");
    if (pairs_per_group == 0)
      throw std::invalid_argument("config: pairs_per_group must be positive");
  }
  if (lr_generator <= 0 || lr_discriminator <= 0 || lr_classifier <= 0)
    throw std::invalid_argument("config: learning rates must be positive");
  weights.validate();
  kernel.validate();
  if (diversity_report_batch < 2)
    throw std::invalid_argument("config: diversity_report_batch must be at least 2");
}

models::ModelDims ExperimentConfig::resolved_dims() const {
  models::ModelDims d = model;
  d.data_dim = task.dims;
  d.classes = task.classes;
  return d;
}

SeedPlan derive_seeds(std::uint64_t seed) {
  // splitmix64 stream so nearby seeds do not share low bits
  auto next = [state = seed]() mutable {
    state += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  };
  SeedPlan plan;
  plan.source_data = next();
  plan.target_data = next();
  plan.split = next();
  plan.source_train = next();
  plan.run = next();
  return plan;
}

TaskData build_task_data(const ExperimentConfig& cfg, const SeedPlan& seeds) {
  TaskData out;
  out.source = data::make_blobs(cfg.task.classes, cfg.task.source_per_class, cfg.task.dims,
                                cfg.task.spread, seeds.source_data, data::DomainTag::source);
  double target_spread =
      cfg.task.shift.noise_std > 0 ? cfg.task.shift.noise_std : cfg.task.spread;
  data::DomainDataset target_raw =
      data::make_blobs(cfg.task.classes, cfg.task.target_per_class, cfg.task.dims,
                       target_spread, seeds.target_data, data::DomainTag::target);
  data::DomainDataset target = data::apply_shift(target_raw, cfg.task.shift);
  auto split = data::few_shot_sample(target, cfg.shots_per_class, seeds.split,
                                     /*warn_above_protocol=*/true);
  out.target_labeled = std::move(split.labeled);
  out.target_eval = std::move(split.evaluation);
  return out;
}

SourcePretrainResult pretrain_source(const ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  SeedPlan seeds = derive_seeds(seed);
  TaskData task = build_task_data(cfg, seeds);
  std::mt19937_64 rng(seeds.source_train);

  SourcePretrainResult result;
  result.params = models::make_classifier(cfg.resolved_dims(), rng);
  BlockOptimizer opt(cfg.lr_classifier);

  double acc = 0;
  std::size_t epoch = 0;
  for (; epoch < cfg.source_pretrain_epoch_cap; ++epoch) {
    ad::Tape tape;
    ad::Tape::Scope scope(tape);
    auto bindings = register_params(tape, result.params);
    auto out = models::classify(result.params, task.source.features);
    ad::Tensor loss = losses::cross_entropy(out.probs, task.source.labels);
    check_finite(loss.scalar_value(), "source cross-entropy", epoch + 1);

    std::size_t correct = 0, k = out.probs.cols();
    for (std::size_t i = 0; i < task.source.labels.size(); ++i) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < k; ++c)
        if (out.probs.at(i, c) > out.probs.at(i, best)) best = c;
      if (best == task.source.labels[i]) ++correct;
    }
    acc = static_cast<double>(correct) / static_cast<double>(task.source.labels.size());
    if (acc >= cfg.source_pretrain_target_acc) break;

    opt.apply(bindings, tape.backward(loss));
  }
  result.train_accuracy = acc;
  result.epochs_used = epoch;
  double chance = 1.0 / static_cast<double>(cfg.task.classes);
  if (acc <= chance + 0.05)
    throw numeric_error("pretrain_source: accuracy " + format_double(acc) +
                        " did not exceed chance after " +
                        std::to_string(cfg.source_pretrain_epoch_cap) +
                        " epochs; the task is degenerate");
  return result;
}

namespace {

// Everything one seed of a DEG-Net-style run needs.
class Trainer {
 public:
  Trainer(const ExperimentConfig& cfg, std::uint64_t seed)
      : cfg_(cfg), seed_(seed), seeds_(derive_seeds(seed)) {}

  RunMetrics run() {
    auto wall_start = std::chrono::steady_clock::now();
    setup();
    RunMetrics metrics;
    metrics.method = cfg_.method;
    metrics.seed = seed_;
    metrics.shots_per_class = cfg_.shots_per_class;
    metrics.source_train_accuracy = source_train_acc_;
    metrics.wa_accuracy = wa_acc_;

    switch (cfg_.method) {
      case Method::wa: run_wa(metrics); break;
      case Method::ft: run_ft(metrics); break;
      default: run_generative(metrics); break;
    }

    metrics.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
    return metrics;
  }

 private:
  void setup() {
    task_ = build_task_data(cfg_, seeds_);
    SourcePretrainResult pre = pretrain_source(cfg_, seed_);
    f_source_ = std::move(pre.params);
    source_train_acc_ = pre.train_accuracy;
    f_source_hash_ = models::param_hash(f_source_);
    wa_acc_ = accuracy(f_source_, task_.target_eval.features, task_.target_eval.labels);

    f_target_ = f_source_;  // "initialize f^s = f^t"
    rng_.seed(seeds_.run);
    models::ModelDims dims = cfg_.resolved_dims();
    std::size_t generator_count = cfg_.method == Method::separate_gen ? dims.classes : 1;
    for (std::size_t i = 0; i < generator_count; ++i)
      generators_.push_back(models::make_generator(dims, rng_));
    discriminator_ = models::make_discriminator(dims, rng_);

    target_semantic_ = models::classify(f_source_, task_.target_labeled.features).semantic_feature;

    gen_opt_ = std::make_unique<BlockOptimizer>(cfg_.lr_generator);
    sep_opts_.clear();
    for (std::size_t i = 0; i < generator_count; ++i)
      sep_opts_.push_back(std::make_unique<BlockOptimizer>(cfg_.lr_generator));
    disc_opt_ = std::make_unique<BlockOptimizer>(cfg_.lr_discriminator);
    cls_opt_ = std::make_unique<BlockOptimizer>(cfg_.lr_classifier);
  }

  void run_wa(RunMetrics& metrics) {
    EpochRow row;
    row.epoch = 1;
    row.phase = "eval";
    row.eval_acc = wa_acc_;
    metrics.rows.push_back(row);
    metrics.final_accuracy = wa_acc_;
  }

  void run_ft(RunMetrics& metrics) {
    for (std::size_t step = 1; step <= cfg_.ft_steps; ++step) {
      auto t0 = std::chrono::steady_clock::now();
      double loss_value;
      {
        ad::Tape tape;
        ad::Tape::Scope scope(tape);
        auto bindings = register_head_only(tape, f_target_);
        auto out = models::classify(f_target_, task_.target_labeled.features);
        ad::Tensor loss = losses::cross_entropy(out.probs, task_.target_labeled.labels);
        check_finite(loss.scalar_value(), "finetune cross-entropy", step);
        loss_value = loss.scalar_value();
        cls_opt_->apply(bindings, tape.backward(loss));
      }

      EpochRow row;
      row.epoch = step;
      row.phase = "finetune";
      row.loss_f = loss_value;
      row.eval_acc = accuracy(f_target_, task_.target_eval.features, task_.target_eval.labels);
      row.wall_ms = elapsed_ms(t0);
      metrics.rows.push_back(row);
    }
    metrics.final_accuracy = metrics.rows.back().eval_acc;
    check_source_frozen();
  }

  struct GenerationResult {
    double loss_c = 0, loss_s = 0, loss_d = 0, loss_gd = 0;
    double diversity_raw = 0;
  };

  models::GeneratorParams& generator_for(std::size_t class_index) {
    return generators_.size() == 1 ? generators_[0] : generators_[class_index];
  }

  // Steps 1-5 of the per-epoch loop: draw noise, generate per class, push the
  // batches into the current pool, update the generator(s).
  GenerationResult generation_step(std::size_t epoch) {
    std::size_t classes = cfg_.task.classes;
    bool diversity_active = cfg_.method != Method::degnet_no_diversity &&
                            cfg_.weights.beta > 0 &&
                            (cfg_.pretrain_with_diversity || epoch > cfg_.gen_pretrain_epochs);
    bool update = !(cfg_.freeze_generator_in_adaptation && in_adaptation(epoch));
    GenerationResult result;

    pool_features_.clear();
    pool_labels_.clear();

    if (cfg_.method == Method::separate_gen) {
      double total = 0;
      for (std::size_t n = 0; n < classes; ++n) {
        ad::Tape tape;
        ad::Tape::Scope scope(tape);
        auto bindings = register_params(tape, generators_[n]);
        ad::Tensor z = gaussian_noise(rng_, cfg_.batch, cfg_.model.noise_dim);
        ad::Tensor generated = models::generate(generators_[n], z, n);
        auto out = models::classify(f_source_, generated);
        ad::Tensor loss = losses::separate_generator_loss(
            out.probs, n, out.semantic_feature, target_semantic_,
            task_.target_labeled.labels, cfg_.weights.lambda, similarity_options());
        check_finite(loss.scalar_value(), "separate generator loss", epoch);
        total += loss.scalar_value();
        stash_generated(generated, out.semantic_feature, n);
        if (update) sep_opts_[n]->apply(bindings, tape.backward(loss));
      }
      result.loss_gd = total / static_cast<double>(classes);
      result.loss_c = result.loss_gd;  // per-class objectives, no shared split
    } else {
      ad::Tape tape;
      ad::Tape::Scope scope(tape);
      auto bindings = register_params(tape, generators_[0]);
      std::vector<ad::Tensor> probs_by_class, sem_by_class;
      for (std::size_t n = 0; n < classes; ++n) {
        ad::Tensor z = gaussian_noise(rng_, cfg_.batch, cfg_.model.noise_dim);
        ad::Tensor generated = models::generate(generators_[0], z, n);
        auto out = models::classify(f_source_, generated);
        probs_by_class.push_back(out.probs);
        sem_by_class.push_back(out.semantic_feature);
        stash_generated(generated, out.semantic_feature, n);
      }
      ad::Tensor lc = losses::classification_loss(probs_by_class);
      ad::Tensor ls = losses::similarity_loss(sem_by_class, target_semantic_,
                                              task_.target_labeled.labels,
                                              similarity_options());
      ad::Tensor ld = hsic::diversity_loss(sem_by_class, cfg_.kernel);
      ad::Tensor loss =
          losses::generator_loss(lc, ls, diversity_active ? &ld : nullptr, cfg_.weights);
      result.loss_c = lc.scalar_value();
      result.loss_s = ls.scalar_value();
      result.loss_d = ld.scalar_value();
      result.loss_gd = loss.scalar_value();
      check_finite(result.loss_gd, "generator loss", epoch);
      if (update) gen_opt_->apply(bindings, tape.backward(loss));
    }

    for (std::size_t n = 0; n < classes; ++n) {
      kernels::KernelConfig cfg = cfg_.kernel;
      result.diversity_raw +=
          hsic::diversity_report(pool_class_features_[n], cfg) / static_cast<double>(classes);
      if (cfg_.method == Method::separate_gen)
        result.loss_d +=
            hsic::diversity_report(pool_class_semantic_[n], cfg) / static_cast<double>(classes);
    }
    if (cfg_.method != Method::separate_gen) {
      // semantic diversity is the (possibly inactive) diversity node value
      // computed above; nothing extra to do
    }
    return result;
  }

  void stash_generated(const ad::Tensor& generated, const ad::Tensor& semantic,
                       std::size_t class_index) {
    ad::Tensor detached;
    detached.shape = generated.shape;
    detached.data = generated.data;
    ad::Tensor sem;
    sem.shape = semantic.shape;
    sem.data = semantic.data;
    if (pool_class_features_.size() <= class_index) {
      pool_class_features_.resize(class_index + 1);
      pool_class_semantic_.resize(class_index + 1);
    }
    pool_class_features_[class_index] = std::move(detached);
    pool_class_semantic_[class_index] = std::move(sem);
    for (std::size_t i = 0; i < generated.rows(); ++i) {
      std::vector<double> row(generated.cols());
      for (std::size_t k = 0; k < generated.cols(); ++k) row[k] = generated.at(i, k);
      pool_features_.push_back(std::move(row));
      pool_labels_.push_back(class_index);
    }
  }

  bool in_adaptation(std::size_t epoch) const {
    return epoch + cfg_.adaptation_steps >= cfg_.epochs;
  }

  // phi(G) = [g(x1), g(x2)] through the current encoder, eagerly (frozen).
  ad::Tensor pair_features_eager(const std::vector<losses::PairGroup>& pairs) {
    ad::Tensor pool = pool_matrix();
    ad::Tensor enc_pool = models::classify(f_target_, pool).encoder_feature;
    ad::Tensor enc_target =
        models::classify(f_target_, task_.target_labeled.features).encoder_feature;
    std::size_t d = enc_pool.cols();
    ad::Tensor out = ad::Tensor::zeros({pairs.size(), 2 * d});
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      const auto& pair = pairs[p];
      const ad::Tensor& left = enc_pool;
      const ad::Tensor& right =
          pair.right.provenance == losses::Provenance::generated ? enc_pool : enc_target;
      for (std::size_t k = 0; k < d; ++k) {
        out.at(p, k) = left.at(pair.left.index, k);
        out.at(p, d + k) = right.at(pair.right.index, k);
      }
    }
    return out;
  }

  ad::Tensor pool_matrix() const {
    std::size_t n = pool_features_.size(), d = pool_features_.front().size();
    ad::Tensor m = ad::Tensor::zeros({n, d});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < d; ++k) m.at(i, k) = pool_features_[i][k];
    return m;
  }

  // One discriminator step on freshly assembled pair features (encoder frozen).
  double discriminator_step(const std::vector<losses::PairGroup>& pairs, std::size_t epoch) {
    ad::Tensor features = pair_features_eager(pairs);
    std::vector<losses::GroupId> labels(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) labels[i] = pairs[i].group;

    ad::Tape tape;
    ad::Tape::Scope scope(tape);
    auto bindings = register_params(tape, discriminator_);
    ad::Tensor probs = models::discriminate(discriminator_, features);
    ad::Tensor loss = losses::discriminator_loss(probs, labels);
    double v = loss.scalar_value();
    check_finite(v, "discriminator loss", epoch);
    disc_opt_->apply(bindings, tape.backward(loss));
    return v;
  }

  // Step 11: classifier update through the frozen discriminator.
  double classifier_step(const std::vector<losses::PairGroup>& pairs, double gamma,
                         std::size_t epoch) {
    std::vector<std::size_t> g2_left, g2_right, g4_left, g4_right;
    for (const auto& p : pairs) {
      if (p.group == losses::GroupId::g2) {
        g2_left.push_back(p.left.index);
        g2_right.push_back(p.right.index);
      } else if (p.group == losses::GroupId::g4) {
        g4_left.push_back(p.left.index);
        g4_right.push_back(p.right.index);
      }
    }

    ad::Tape tape;
    ad::Tape::Scope scope(tape);
    auto bindings = register_params(tape, f_target_);

    ad::Tensor pool = pool_matrix();
    ad::Tensor enc_pool = models::classify(f_target_, pool).encoder_feature;
    auto target_out = models::classify(f_target_, task_.target_labeled.features);
    ad::Tensor enc_target = target_out.encoder_feature;

    auto pair_batch = [&](const std::vector<std::size_t>& left,
                          const std::vector<std::size_t>& right) {
      ad::Tensor lsel = selector(left, pool.rows());
      ad::Tensor rsel = selector(right, task_.target_labeled.size());
      return ad::concat(ad::matmul(lsel, enc_pool), ad::matmul(rsel, enc_target), 1);
    };
    ad::Tensor d_g2 = models::discriminate(discriminator_, pair_batch(g2_left, g2_right));
    ad::Tensor d_g4 = models::discriminate(discriminator_, pair_batch(g4_left, g4_right));

    ad::Tensor loss;
    if (cfg_.method == Method::degnet_gen_supervised &&
        cfg_.generated_supervised_per_class > 0) {
      auto [gen_subset, codes] = generated_supervised_batch();
      auto gen_out = models::classify(f_target_, gen_subset);
      loss = losses::adaptation_loss_with_generated(
          d_g2, d_g4, target_out.probs, task_.target_labeled.labels, &gen_out.probs, codes,
          gamma, cfg_.g4_sign);
    } else {
      loss = losses::adaptation_loss(d_g2, d_g4, target_out.probs,
                                     task_.target_labeled.labels, gamma, cfg_.g4_sign);
    }
    double v = loss.scalar_value();
    check_finite(v, "classifier loss", epoch);
    cls_opt_->apply(bindings, tape.backward(loss));
    classifier_dirty_ = true;
    return v;
  }

  std::pair<ad::Tensor, std::vector<std::size_t>> generated_supervised_batch() const {
    std::size_t per = cfg_.generated_supervised_per_class;
    std::size_t classes = cfg_.task.classes;
    std::size_t d = pool_features_.front().size();
    std::size_t take = std::min(per, cfg_.batch);
    ad::Tensor m = ad::Tensor::zeros({take * classes, d});
    std::vector<std::size_t> codes(take * classes);
    for (std::size_t n = 0; n < classes; ++n)
      for (std::size_t i = 0; i < take; ++i) {
        std::size_t src = n * cfg_.batch + i;  // first samples of the class batch
        for (std::size_t k = 0; k < d; ++k) m.at(n * take + i, k) = pool_features_[src][k];
        codes[n * take + i] = n;
      }
    return {std::move(m), std::move(codes)};
  }

  double eval_accuracy_cached() {
    if (classifier_dirty_) {
      cached_eval_acc_ =
          accuracy(f_target_, task_.target_eval.features, task_.target_eval.labels);
      classifier_dirty_ = false;
    }
    return cached_eval_acc_;
  }

  void check_source_frozen() {
    if (models::param_hash(f_source_) != f_source_hash_)
      throw std::logic_error("source classifier was mutated after pretraining");
  }

  std::uint64_t generators_hash() {
    std::uint64_t h = 0;
    for (auto& g : generators_) h ^= models::param_hash(g) + 0x9e3779b97f4a7c15ull + (h << 6);
    return h;
  }

  void run_generative(RunMetrics& metrics) {
    std::size_t t_max = cfg_.epochs, t_f = cfg_.adaptation_steps;
    classifier_dirty_ = true;

    for (std::size_t epoch = 1; epoch <= t_max; ++epoch) {
      auto t0 = std::chrono::steady_clock::now();
      EpochRow row;
      row.epoch = epoch;
      row.phase = in_adaptation(epoch) ? "adaptation"
                : epoch <= cfg_.gen_pretrain_epochs ? "gen_pretrain"
                                                    : "gen_diversity";

      GenerationResult gen = generation_step(epoch);
      row.loss_c = gen.loss_c;
      row.loss_s = gen.loss_s;
      row.loss_d = gen.loss_d;
      row.loss_gd = gen.loss_gd;
      row.diversity_semantic = gen.loss_d;
      row.diversity_raw = gen.diversity_raw;

      if (epoch + t_f == t_max) {
        // one-time discriminator pretraining on the current pool
        std::uint64_t gh = generators_hash();
        std::uint64_t ch = models::param_hash(f_target_);
        for (std::size_t i = 0; i < cfg_.disc_pretrain_epochs; ++i) {
          auto pairs = losses::build_pair_groups(pool_labels_, task_.target_labeled.labels,
                                                 cfg_.pairs_per_group, rng_);
          row.loss_disc = discriminator_step(pairs, epoch);
        }
        if (generators_hash() != gh || models::param_hash(f_target_) != ch)
          throw std::logic_error("discriminator pretraining touched frozen networks");
      }

      if (in_adaptation(epoch)) {
        double q = static_cast<double>(epoch - (t_max - t_f)) / static_cast<double>(t_f);
        double gamma = losses::gamma_at(q);
        auto pairs = losses::build_pair_groups(pool_labels_, task_.target_labeled.labels,
                                               cfg_.pairs_per_group, rng_);
        std::uint64_t gh = generators_hash();
        std::uint64_t dh = models::param_hash(discriminator_);
        row.loss_f = classifier_step(pairs, gamma, epoch);
        if (generators_hash() != gh || models::param_hash(discriminator_) != dh)
          throw std::logic_error("classifier update touched frozen networks");
        std::uint64_t ch = models::param_hash(f_target_);
        row.loss_disc = discriminator_step(pairs, epoch);
        if (generators_hash() != gh || models::param_hash(f_target_) != ch)
          throw std::logic_error("discriminator update touched frozen networks");
      }

      row.eval_acc = eval_accuracy_cached();
      row.wall_ms = elapsed_ms(t0);
      metrics.rows.push_back(row);
    }

    check_source_frozen();
    metrics.final_accuracy = metrics.rows.back().eval_acc;
    measure_final_diversity(metrics);
  }

  void measure_final_diversity(RunMetrics& metrics) {
    std::size_t classes = cfg_.task.classes;
    double sem_total = 0, raw_total = 0;
    std::size_t batches = cfg_.diversity_report_batches;
    for (std::size_t b = 0; b < batches; ++b) {
      std::size_t n = b % classes;
      ad::Tensor z = gaussian_noise(rng_, cfg_.diversity_report_batch, cfg_.model.noise_dim);
      ad::Tensor generated = models::generate(generator_for(n), z, n);
      ad::Tensor sem = models::classify(f_source_, generated).semantic_feature;
      sem_total += hsic::diversity_report(sem, cfg_.kernel);
      raw_total += hsic::diversity_report(generated, cfg_.kernel);
    }
    metrics.final_diversity_semantic = sem_total / static_cast<double>(batches);
    metrics.final_diversity_raw = raw_total / static_cast<double>(batches);
  }

  double elapsed_ms(std::chrono::steady_clock::time_point t0) const {
    if (!cfg_.record_wall_ms) return 0.0;
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
        .count();
  }

  losses::SimilarityOptions similarity_options() const {
    losses::SimilarityOptions opt;
    opt.class_restricted = cfg_.similarity_class_restricted;
    return opt;
  }

  const ExperimentConfig& cfg_;
  std::uint64_t seed_;
  SeedPlan seeds_;
  std::mt19937_64 rng_;
  TaskData task_;
  models::ClassifierParams f_source_;
  models::ClassifierParams f_target_;
  std::vector<models::GeneratorParams> generators_;
  models::DiscriminatorParams discriminator_;
  ad::Tensor target_semantic_;
  std::uint64_t f_source_hash_ = 0;
  double source_train_acc_ = 0;
  double wa_acc_ = 0;
  bool classifier_dirty_ = true;
  double cached_eval_acc_ = 0;

  std::vector<std::vector<double>> pool_features_;  // current-epoch generated pool
  std::vector<std::size_t> pool_labels_;
  std::vector<ad::Tensor> pool_class_features_;
  std::vector<ad::Tensor> pool_class_semantic_;

  std::unique_ptr<BlockOptimizer> gen_opt_;
  std::vector<std::unique_ptr<BlockOptimizer>> sep_opts_;
  std::unique_ptr<BlockOptimizer> disc_opt_;
  std::unique_ptr<BlockOptimizer> cls_opt_;
};

}  // namespace

RunMetrics run_single(const ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Trainer trainer(cfg, seed);
  return trainer.run();
}

RunMetrics run_degnet(const ExperimentConfig& cfg, std::uint64_t seed) {
  if (cfg.method != Method::degnet && cfg.method != Method::degnet_no_diversity &&
      cfg.method != Method::degnet_gen_supervised && cfg.method != Method::separate_gen)
    throw std::invalid_argument("run_degnet: config method is not a generative method");
  return run_single(cfg, seed);
}

RunMetrics run_baseline(const ExperimentConfig& cfg, std::uint64_t seed) {
  if (cfg.method != Method::wa && cfg.method != Method::ft)
    throw std::invalid_argument("run_baseline: method must be WA or FT");
  return run_single(cfg, seed);
}

RunMetrics run_ablation(const ExperimentConfig& cfg, std::uint64_t seed) {
  if (cfg.method != Method::degnet_no_diversity && cfg.method != Method::separate_gen &&
      cfg.method != Method::degnet_gen_supervised)
    throw std::invalid_argument("run_ablation: method must be an ablation variant");
  return run_single(cfg, seed);
}

Aggregate aggregate(const std::vector<double>& values) {
  Aggregate a;
  a.per_seed = values;
  if (values.empty()) return a;
  double sum = 0;
  for (double v : values) sum += v;
  a.mean = sum / static_cast<double>(values.size());
  double ss = 0;
  for (double v : values) ss += (v - a.mean) * (v - a.mean);
  a.stddev = values.size() > 1
                 ? std::sqrt(ss / static_cast<double>(values.size() - 1))
                 : 0.0;
  return a;
}

ExperimentSummary summarize(const ExperimentConfig& cfg, const std::vector<RunMetrics>& runs) {
  ExperimentSummary s;
  s.task = cfg.task.name;
  s.method = cfg.method;
  s.shots_per_class = cfg.shots_per_class;
  s.seeds = cfg.seeds;
  std::vector<double> acc, dsem, draw;
  for (const auto& r : runs) {
    acc.push_back(r.final_accuracy);
    dsem.push_back(r.final_diversity_semantic);
    draw.push_back(r.final_diversity_raw);
    s.wall_seconds_total += r.wall_seconds;
  }
  s.accuracy = aggregate(acc);
  s.diversity_semantic = aggregate(dsem);
  s.diversity_raw = aggregate(draw);
  return s;
}

std::vector<RunMetrics> run_experiment(const ExperimentConfig& cfg, std::size_t jobs) {
  cfg.validate();
  std::vector<RunMetrics> runs(cfg.seeds.size());
  if (jobs <= 1 || cfg.seeds.size() <= 1) {
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) runs[i] = run_single(cfg, cfg.seeds[i]);
    return runs;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= cfg.seeds.size()) return;
      try {
        runs[i] = run_single(cfg, cfg.seeds[i]);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> threads;
  for (std::size_t t = 0; t < std::min(jobs, cfg.seeds.size()); ++t)
    threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);
  return runs;
}

std::string metrics_csv_string(const RunMetrics& metrics) {
  std::string out =
      "epoch,phase,loss_c,loss_s,loss_d,loss_gd,loss_D,loss_f,eval_acc,"
      "diversity_semantic,diversity_raw,wall_ms\n";
  for (const auto& r : metrics.rows) {
    out += std::to_string(r.epoch);
    out += ",";
    out += r.phase;
    for (double v : {r.loss_c, r.loss_s, r.loss_d, r.loss_gd, r.loss_disc, r.loss_f,
                     r.eval_acc, r.diversity_semantic, r.diversity_raw, r.wall_ms}) {
      out += ",";
      out += format_double(v);
    }
    out += "\n";
  }
  return out;
}

void write_metrics_csv(const std::string& path, const RunMetrics& metrics) {
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("write_metrics_csv: cannot open " + path);
  out << metrics_csv_string(metrics);
  if (!out) throw std::runtime_error("write_metrics_csv: write failed for " + path);
}

}  // namespace fhalab::training
