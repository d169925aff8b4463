#include "fhalab/models.hpp"

#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace fhalab::models {

namespace {

ad::Tensor dense_forward(const DenseLayer& layer, const ad::Tensor& x) {
  ad::Tensor z = ad::row_broadcast(ad::matmul(x, layer.weight), layer.bias);
  switch (layer.act) {
    case Activation::linear: return z;
    case Activation::relu: return ad::relu(z);
    case Activation::tanh: return ad::tanh(z);
    case Activation::softmax: return ad::softmax(z, 1);
  }
  return z;
}

DenseLayer make_dense(std::size_t in, std::size_t out, Activation act, std::mt19937_64& rng) {
  // He-style fan-in scaling
  double scale = std::sqrt(2.0 / static_cast<double>(in));
  std::vector<double> w(in * out);
  for (auto& v : w) v = scale * fhalab::rng::normal(rng);
  DenseLayer layer;
  layer.weight = ad::Tensor::matrix(in, out, std::move(w));
  layer.bias = ad::Tensor::zeros({out});
  layer.act = act;
  return layer;
}

void check_input(const char* who, const ad::Tensor& x, std::size_t expected) {
  if (x.rank() != 2 || x.cols() != expected)
    throw std::invalid_argument(std::string(who) + ": input is " + ad::shape_str(x.shape) +
                                ", expected Nx" + std::to_string(expected));
}

std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

std::size_t ClassifierParams::input_dim() const { return encoder.front().weight.rows(); }
std::size_t ClassifierParams::encoder_dim() const { return encoder.back().weight.cols(); }
std::size_t ClassifierParams::class_count() const { return head.back().weight.cols(); }
std::size_t GeneratorParams::data_dim() const { return layers.back().weight.cols(); }

ClassifierOutput classify(const ClassifierParams& params, const ad::Tensor& x) {
  if (params.encoder.empty() || params.head.empty())
    throw std::invalid_argument("classify: classifier has no layers");
  if (params.semantic_layer_index >= params.encoder.size())
    throw std::invalid_argument("classify: semantic layer index out of range");
  check_input("classify", x, params.input_dim());

  ClassifierOutput out;
  ad::Tensor h = x;
  for (std::size_t i = 0; i < params.encoder.size(); ++i) {
    h = dense_forward(params.encoder[i], h);
    if (i == params.semantic_layer_index) out.semantic_feature = h;
  }
  out.encoder_feature = h;
  for (const DenseLayer& layer : params.head) h = dense_forward(layer, h);
  out.probs = h;
  return out;
}

ad::Tensor generate(const GeneratorParams& params, const ad::Tensor& z, std::size_t class_index) {
  if (params.layers.empty()) throw std::invalid_argument("generate: generator has no layers");
  if (class_index >= params.class_count)
    throw std::invalid_argument("generate: class " + std::to_string(class_index) +
                                " out of range (K=" + std::to_string(params.class_count) + ")");
  check_input("generate", z, params.noise_dim);
  std::size_t n = z.rows();
  ad::Tensor code = ad::Tensor::zeros({n, params.class_count});
  for (std::size_t i = 0; i < n; ++i) code.at(i, class_index) = 1.0;
  ad::Tensor h = ad::concat(z, code, 1);
  for (const DenseLayer& layer : params.layers) h = dense_forward(layer, h);
  return h;
}

ad::Tensor discriminate(const DiscriminatorParams& params, const ad::Tensor& pair_feature) {
  if (params.layers.empty())
    throw std::invalid_argument("discriminate: discriminator has no layers");
  check_input("discriminate", pair_feature, params.layers.front().weight.rows());
  ad::Tensor h = pair_feature;
  for (const DenseLayer& layer : params.layers) h = dense_forward(layer, h);
  return h;
}

ClassifierParams make_classifier(const ModelDims& dims, std::mt19937_64& rng) {
  ClassifierParams p;
  p.encoder.push_back(make_dense(dims.data_dim, dims.encoder_hidden, Activation::relu, rng));
  p.encoder.push_back(make_dense(dims.encoder_hidden, dims.encoder_out, Activation::relu, rng));
  p.head.push_back(make_dense(dims.encoder_out, dims.classes, Activation::softmax, rng));
  p.semantic_layer_index = dims.semantic_layer_index;
  if (p.semantic_layer_index >= p.encoder.size())
    throw std::invalid_argument("make_classifier: semantic layer index out of range");
  return p;
}

GeneratorParams make_generator(const ModelDims& dims, std::mt19937_64& rng) {
  GeneratorParams p;
  p.noise_dim = dims.noise_dim;
  p.class_count = dims.classes;
  std::size_t in = dims.noise_dim + dims.classes;
  p.layers.push_back(make_dense(in, dims.generator_hidden, Activation::relu, rng));
  p.layers.push_back(make_dense(dims.generator_hidden, dims.generator_hidden, Activation::relu, rng));
  p.layers.push_back(make_dense(dims.generator_hidden, dims.data_dim, Activation::linear, rng));
  return p;
}

DiscriminatorParams make_discriminator(const ModelDims& dims, std::mt19937_64& rng) {
  DiscriminatorParams p;
  p.layers.push_back(
      make_dense(2 * dims.encoder_out, dims.discriminator_hidden, Activation::relu, rng));
  p.layers.push_back(make_dense(dims.discriminator_hidden, 4, Activation::softmax, rng));
  return p;
}

ModelBundle make_bundle(const ModelDims& dims, std::mt19937_64& rng) {
  ModelBundle b;
  b.classifier = make_classifier(dims, rng);
  b.generator = make_generator(dims, rng);
  b.discriminator = make_discriminator(dims, rng);
  return b;
}

namespace {

void visit_layers(const std::string& prefix, std::vector<DenseLayer>& layers,
                  const std::function<void(const std::string&, ad::Tensor&)>& fn) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    fn(prefix + "." + std::to_string(i) + ".weight", layers[i].weight);
    fn(prefix + "." + std::to_string(i) + ".bias", layers[i].bias);
  }
}

template <typename P>
std::uint64_t hash_params(P& p) {
  std::uint64_t h = 1469598103934665603ull;
  for_each_param(p, [&](const std::string&, ad::Tensor& t) {
    for (double v : t.data) {
      std::uint64_t bits;
      static_assert(sizeof(bits) == sizeof(v));
      std::memcpy(&bits, &v, sizeof(bits));
      for (int b = 0; b < 8; ++b) {
        h ^= (bits >> (8 * b)) & 0xffull;
        h *= 1099511628211ull;
      }
    }
  });
  return h;
}

}  // namespace

void for_each_param(ClassifierParams& p,
                    const std::function<void(const std::string&, ad::Tensor&)>& fn) {
  visit_layers("encoder", p.encoder, fn);
  visit_layers("head", p.head, fn);
}

void for_each_param(GeneratorParams& p,
                    const std::function<void(const std::string&, ad::Tensor&)>& fn) {
  visit_layers("generator", p.layers, fn);
}

void for_each_param(DiscriminatorParams& p,
                    const std::function<void(const std::string&, ad::Tensor&)>& fn) {
  visit_layers("discriminator", p.layers, fn);
}

std::uint64_t param_hash(ClassifierParams& p) { return hash_params(p); }
std::uint64_t param_hash(GeneratorParams& p) { return hash_params(p); }
std::uint64_t param_hash(DiscriminatorParams& p) { return hash_params(p); }

namespace {

constexpr const char* kCheckpointMagic = "fhalab-checkpoint v1";

struct BlockRef {
  std::string name;
  ad::Tensor* tensor;
};

std::vector<BlockRef> bundle_blocks(ModelBundle& b) {
  std::vector<BlockRef> blocks;
  auto collect = [&](auto& params, const std::string& section) {
    for_each_param(params, [&](const std::string& name, ad::Tensor& t) {
      blocks.push_back({section + "." + name, &t});
    });
  };
  collect(b.classifier, "classifier");
  collect(b.generator, "generator");
  collect(b.discriminator, "discriminator");
  return blocks;
}

int activation_code(Activation a) { return static_cast<int>(a); }

}  // namespace

void save_checkpoint(const std::string& path, ModelBundle& bundle) {
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("save_checkpoint: cannot open " + path);
  out << kCheckpointMagic << "\n";
  // structural metadata needed to rebuild the bundle
  out << "meta semantic_layer_index " << bundle.classifier.semantic_layer_index << "\n";
  out << "meta noise_dim " << bundle.generator.noise_dim << "\n";
  out << "meta class_count " << bundle.generator.class_count << "\n";
  auto acts = [&](const std::vector<DenseLayer>& layers, const char* name) {
    out << "meta " << name;
    for (const auto& l : layers) out << " " << activation_code(l.act);
    out << "\n";
  };
  acts(bundle.classifier.encoder, "encoder_acts");
  acts(bundle.classifier.head, "head_acts");
  acts(bundle.generator.layers, "generator_acts");
  acts(bundle.discriminator.layers, "discriminator_acts");

  for (auto& block : bundle_blocks(bundle)) {
    out << "block " << block.name << " " << block.tensor->rank();
    for (std::size_t e : block.tensor->shape) out << " " << e;
    out << "\n";
    for (std::size_t i = 0; i < block.tensor->data.size(); ++i) {
      if (i) out << " ";
      out << format_double(block.tensor->data[i]);
    }
    out << "\n";
  }
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

ModelBundle load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("load_checkpoint: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != kCheckpointMagic)
    throw std::invalid_argument("load_checkpoint: " + path + " is not a v1 checkpoint");

  ModelBundle bundle;
  std::size_t semantic_index = 0, noise_dim = 0, class_count = 0;
  std::vector<int> enc_acts, head_acts, gen_acts, disc_acts;
  struct RawBlock {
    std::string name;
    ad::Tensor tensor;
  };
  std::vector<RawBlock> blocks;

  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "meta") {
      std::string key;
      ls >> key;
      if (key == "semantic_layer_index") ls >> semantic_index;
      else if (key == "noise_dim") ls >> noise_dim;
      else if (key == "class_count") ls >> class_count;
      else {
        std::vector<int>* dst = key == "encoder_acts" ? &enc_acts
                              : key == "head_acts" ? &head_acts
                              : key == "generator_acts" ? &gen_acts
                              : key == "discriminator_acts" ? &disc_acts
                                                            : nullptr;
        if (!dst) throw std::invalid_argument("load_checkpoint: unknown meta key " + key);
        int a;
        while (ls >> a) dst->push_back(a);
      }
    } else if (kind == "block") {
      RawBlock block;
      std::size_t rank;
      ls >> block.name >> rank;
      ad::Shape shape(rank);
      for (auto& e : shape) ls >> e;
      std::string values;
      if (!std::getline(in, values))
        throw std::invalid_argument("load_checkpoint: truncated block " + block.name);
      std::vector<double> data;
      data.reserve(ad::shape_size(shape));
      const char* p = values.c_str();
      const char* end = p + values.size();
      while (p < end) {
        while (p < end && *p == ' ') ++p;
        if (p >= end) break;
        double v;
        auto res = std::from_chars(p, end, v);
        if (res.ec != std::errc{})
          throw std::invalid_argument("load_checkpoint: bad value in block " + block.name);
        data.push_back(v);
        p = res.ptr;
      }
      block.tensor = ad::Tensor(std::move(shape), std::move(data));
      blocks.push_back(std::move(block));
    } else {
      throw std::invalid_argument("load_checkpoint: unexpected line '" + line + "'");
    }
  }

  auto rebuild = [&](const std::string& section, const std::string& group,
                     const std::vector<int>& acts) {
    std::vector<DenseLayer> layers(acts.size());
    for (std::size_t i = 0; i < acts.size(); ++i) {
      layers[i].act = static_cast<Activation>(acts[i]);
      std::string base = section + "." + group + "." + std::to_string(i);
      bool got_w = false, got_b = false;
      for (auto& b : blocks) {
        if (b.name == base + ".weight") {
          layers[i].weight = b.tensor;
          got_w = true;
        }
        if (b.name == base + ".bias") {
          layers[i].bias = b.tensor;
          got_b = true;
        }
      }
      if (!got_w || !got_b)
        throw std::invalid_argument("load_checkpoint: missing block " + base);
    }
    return layers;
  };

  bundle.classifier.encoder = rebuild("classifier", "encoder", enc_acts);
  bundle.classifier.head = rebuild("classifier", "head", head_acts);
  bundle.classifier.semantic_layer_index = semantic_index;
  bundle.generator.layers = rebuild("generator", "generator", gen_acts);
  bundle.generator.noise_dim = noise_dim;
  bundle.generator.class_count = class_count;
  bundle.discriminator.layers = rebuild("discriminator", "discriminator", disc_acts);
  return bundle;
}

}  // namespace fhalab::models
