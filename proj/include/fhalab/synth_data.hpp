#ifndef FHALAB_SYNTH_DATA_HPP
#define FHALAB_SYNTH_DATA_HPP

#include <string>

#include "fhalab/tensor.hpp"

namespace fhalab::data {

enum class DomainTag { source, target, generated };

const char* domain_name(DomainTag tag);
DomainTag parse_domain(const std::string& name);

struct DomainDataset {
  ad::Tensor features;              // N x d
  std::vector<std::size_t> labels;  // in [0, K)
  DomainTag domain = DomainTag::source;
  std::string provenance;           // generator settings or file path

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.rank() == 2 ? features.cols() : 0; }
  std::size_t class_count() const;
  void validate() const;
};

/// Affine domain shift applied in order: rotate (first two dims), scale,
/// translate. noise_std, when positive, is the per-class spread used by task
/// builders when drawing the target-domain samples (the shift itself stays
/// deterministic).
struct ShiftSpec {
  double angle = 0.0;                // radians, [0, 2pi)
  std::vector<double> scale;         // per-dim factors; empty = all 1
  std::vector<double> offset;        // per-dim; empty = all 0
  double noise_std = 0.0;

  void validate(std::size_t dims) const;
  bool is_identity() const;
};

/// Gaussian blobs with class means on a circle of radius 4 in the first two
/// dimensions, zeros elsewhere. Deterministic per seed.
DomainDataset make_blobs(std::size_t classes, std::size_t per_class, std::size_t dims,
                         double spread, std::uint64_t seed,
                         DomainTag tag = DomainTag::source);

DomainDataset apply_shift(const DomainDataset& ds, const ShiftSpec& shift);

struct FewShotSplit {
  DomainDataset labeled;
  DomainDataset evaluation;
};

/// Exactly per_class labeled samples from every class; the rest becomes the
/// evaluation set. Disjoint by construction. per_class above 7 is allowed for
/// experimentation but warns on stderr (the protocol caps at 7).
FewShotSplit few_shot_sample(const DomainDataset& ds, std::size_t per_class,
                             std::uint64_t seed, bool warn_above_protocol = true);

/// CSV with header x1..xd,label,domain. Values round-trip exactly.
void save_csv(const DomainDataset& ds, const std::string& path);
DomainDataset load_csv(const std::string& path, std::size_t expected_classes = 0);

/// Headerless (or auto-detected header) numeric matrix, for the hsic tool.
ad::Tensor load_matrix_csv(const std::string& path);

}  // namespace fhalab::data

#endif
