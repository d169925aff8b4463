#ifndef FHALAB_MODELS_HPP
#define FHALAB_MODELS_HPP

#include <functional>
#include <string>

#include "fhalab/tensor.hpp"

namespace fhalab::models {

enum class Activation { linear, relu, tanh, softmax };

struct DenseLayer {
  ad::Tensor weight;  // in x out
  ad::Tensor bias;    // out
  Activation act = Activation::linear;
};

/// Classifier = Encoder (features) then Head (probabilities). One encoder
/// hidden layer doubles as the semantic-feature tap.
struct ClassifierParams {
  std::vector<DenseLayer> encoder;
  std::vector<DenseLayer> head;  // last layer softmax over the classes
  std::size_t semantic_layer_index = 0;

  std::size_t input_dim() const;
  std::size_t encoder_dim() const;
  std::size_t class_count() const;
};

/// Weight-shared conditional generator: [noise, one-hot class] -> data.
struct GeneratorParams {
  std::vector<DenseLayer> layers;
  std::size_t noise_dim = 8;
  std::size_t class_count = 0;

  std::size_t data_dim() const;
};

/// 4-way group discriminator over concatenated encoder features of a pair.
struct DiscriminatorParams {
  std::vector<DenseLayer> layers;  // last layer softmax over 4 groups
};

struct ModelBundle {
  ClassifierParams classifier;
  GeneratorParams generator;
  DiscriminatorParams discriminator;
};

struct ClassifierOutput {
  ad::Tensor encoder_feature;
  ad::Tensor semantic_feature;
  ad::Tensor probs;
};

/// One pass producing all three taps; the semantic feature is the recorded
/// intermediate of this same pass, never recomputed.
ClassifierOutput classify(const ClassifierParams& params, const ad::Tensor& x);

/// Deterministic in (params, z, class_index); concatenates the one-hot code.
ad::Tensor generate(const GeneratorParams& params, const ad::Tensor& z, std::size_t class_index);

ad::Tensor discriminate(const DiscriminatorParams& params, const ad::Tensor& pair_feature);

/// Default synthetic-scale architectures; all dimensions overridable.
struct ModelDims {
  std::size_t data_dim = 2;
  std::size_t classes = 3;
  std::size_t encoder_hidden = 32;
  std::size_t encoder_out = 16;
  std::size_t semantic_layer_index = 0;
  std::size_t noise_dim = 8;
  std::size_t generator_hidden = 32;
  std::size_t discriminator_hidden = 16;
};

ClassifierParams make_classifier(const ModelDims& dims, std::mt19937_64& rng);
GeneratorParams make_generator(const ModelDims& dims, std::mt19937_64& rng);
DiscriminatorParams make_discriminator(const ModelDims& dims, std::mt19937_64& rng);
ModelBundle make_bundle(const ModelDims& dims, std::mt19937_64& rng);

/// Visits every parameter tensor with a stable name ("encoder.0.weight", ...).
void for_each_param(ClassifierParams& p,
                    const std::function<void(const std::string&, ad::Tensor&)>& fn);
void for_each_param(GeneratorParams& p,
                    const std::function<void(const std::string&, ad::Tensor&)>& fn);
void for_each_param(DiscriminatorParams& p,
                    const std::function<void(const std::string&, ad::Tensor&)>& fn);

/// FNV-1a over the raw parameter bytes; used to assert a network did not move.
std::uint64_t param_hash(ClassifierParams& p);
std::uint64_t param_hash(GeneratorParams& p);
std::uint64_t param_hash(DiscriminatorParams& p);

/// Text checkpoint of named blocks ("fhalab-checkpoint v1"); values are
/// shortest-round-trip doubles, so save/load is bit-exact.
void save_checkpoint(const std::string& path, ModelBundle& bundle);
ModelBundle load_checkpoint(const std::string& path);

}  // namespace fhalab::models

#endif
