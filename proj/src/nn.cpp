#include "mixupe/nn.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "mixupe/rng.hpp"

namespace mixupe {

Activation activation_from_string(const std::string& s) {
  if (s == "identity") return Activation::identity;
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  if (s == "softplus") return Activation::softplus;
  throw ConfigError("unknown activation '" + s + "'");
}

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::softplus: return "softplus";
  }
  return "?";
}

namespace {

Tensor apply_activation(const Tensor& z, Activation a) {
  switch (a) {
    case Activation::identity: return z;
    case Activation::relu: return relu(z);
    case Activation::tanh: return tanh(z);
    case Activation::softplus: return softplus(z);
  }
  return z;
}

}  // namespace

MlpModel MlpModel::init(const MlpSpec& spec, std::uint64_t seed) {
  if (spec.input_dim == 0 || spec.output_dim == 0)
    throw ConfigError("model dims must be positive");
  for (std::size_t h : spec.hidden_dims)
    if (h == 0) throw ConfigError("model dims must be positive");

  MlpModel model;
  model.spec_ = spec;
  Rng rng(derive_seed(seed, 0x6d6f64656cULL));  // init stream

  std::vector<std::size_t> dims;
  dims.push_back(spec.input_dim);
  dims.insert(dims.end(), spec.hidden_dims.begin(), spec.hidden_dims.end());
  dims.push_back(spec.output_dim);

  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const std::size_t fan_in = dims[l];
    const std::size_t fan_out = dims[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> w(fan_out * fan_in);
    for (double& v : w) v = rng.uniform(-bound, bound);

    DenseLayer layer;
    layer.weight = Tensor::from_flat(fan_out, fan_in, std::move(w), true);
    if (!spec.homogeneous)
      layer.bias = Tensor::zeros(1, fan_out, true);
    const bool last = (l + 2 == dims.size());
    layer.activation = last ? Activation::identity : spec.hidden_activation;
    model.layers_.push_back(std::move(layer));
  }
  return model;
}

Tensor MlpModel::run(const Tensor& x, bool detached) const {
  if (layers_.empty()) throw ConfigError("forward on uninitialized model");
  if (x.cols() != spec_.input_dim)
    throw ShapeError("forward: input width " + std::to_string(x.cols()) +
                     " != model input_dim " + std::to_string(spec_.input_dim));
  Tensor h = x;
  for (const auto& layer : layers_) {
    Tensor w = detached ? layer.weight.detached() : layer.weight;
    Tensor z = matmul_nt(h, w);
    if (layer.bias) {
      Tensor b = detached ? layer.bias->detached() : *layer.bias;
      z = add(z, b);
    }
    h = apply_activation(z, layer.activation);
  }
  return h;
}

Tensor MlpModel::forward(const Tensor& x) const { return run(x, false); }

Tensor MlpModel::forward_detached(const Tensor& x) const {
  return run(x, true);
}

std::vector<Tensor> MlpModel::parameters() const {
  std::vector<Tensor> out;
  for (const auto& layer : layers_) {
    out.push_back(layer.weight);
    if (layer.bias) out.push_back(*layer.bias);
  }
  return out;
}

void MlpModel::clear_grads() const {
  for (const auto& p : parameters()) {
    Tensor t = p;
    t.clear_grad();
  }
}

MlpModel MlpModel::snapshot() const {
  MlpModel copy;
  copy.spec_ = spec_;
  for (const auto& layer : layers_) {
    DenseLayer l;
    l.weight = layer.weight.detached_with_grad();
    if (layer.bias) l.bias = layer.bias->detached_with_grad();
    l.activation = layer.activation;
    copy.layers_.push_back(std::move(l));
  }
  return copy;
}

// ---------------------------------------------------------------------------
// checkpoint
// ---------------------------------------------------------------------------

namespace {

std::string double_to_hex(double v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(std::bit_cast<std::uint64_t>(v)));
  return buf;
}

double hex_to_double(const std::string& s) {
  if (s.size() != 16) throw IoError("checkpoint: bad hex double '" + s + "'");
  std::uint64_t bits = 0;
  for (char c : s) {
    bits <<= 4;
    if (c >= '0' && c <= '9') bits |= static_cast<std::uint64_t>(c - '0');
    else if (c >= 'a' && c <= 'f') bits |= static_cast<std::uint64_t>(c - 'a' + 10);
    else throw IoError("checkpoint: bad hex double '" + s + "'");
  }
  return std::bit_cast<double>(bits);
}

void write_tensor(std::ostream& os, const std::string& name, const Tensor& t) {
  os << "tensor " << name << " " << t.rows() << " " << t.cols() << "\n";
  const auto& d = t.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    os << double_to_hex(d[i]);
    os << ((i + 1 == d.size()) ? '\n' : ' ');
  }
}

Tensor read_tensor(std::istream& is, const std::string& expect_name,
                   bool requires_grad) {
  std::string tag, name;
  std::size_t rows = 0, cols = 0;
  if (!(is >> tag >> name >> rows >> cols) || tag != "tensor" ||
      name != expect_name)
    throw IoError("checkpoint: expected tensor '" + expect_name + "'");
  std::vector<double> d(rows * cols);
  std::string hx;
  for (auto& v : d) {
    if (!(is >> hx)) throw IoError("checkpoint: truncated tensor data");
    v = hex_to_double(hx);
  }
  return Tensor::from_flat(rows, cols, std::move(d), requires_grad);
}

}  // namespace

void save_model(const MlpModel& model, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  const MlpSpec& s = model.spec_;
  os << "mixupe-model v1\n";
  os << "input_dim " << s.input_dim << "\n";
  os << "output_dim " << s.output_dim << "\n";
  os << "hidden";
  for (std::size_t h : s.hidden_dims) os << " " << h;
  os << "\n";
  os << "activation " << activation_name(s.hidden_activation) << "\n";
  os << "homogeneous " << (s.homogeneous ? 1 : 0) << "\n";
  os << "layers " << model.layers_.size() << "\n";
  for (std::size_t i = 0; i < model.layers_.size(); ++i) {
    const auto& layer = model.layers_[i];
    write_tensor(os, "weight" + std::to_string(i), layer.weight);
    if (layer.bias)
      write_tensor(os, "bias" + std::to_string(i), *layer.bias);
  }
  os << "end\n";
  if (!os) throw IoError("write failure on '" + path + "'");
}

MlpModel load_model(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open checkpoint '" + path + "'");
  std::string magic, version;
  if (!(is >> magic >> version) || magic != "mixupe-model" || version != "v1")
    throw IoError("'" + path + "' is not a v1 model checkpoint");

  MlpSpec spec;
  std::string key;
  if (!(is >> key >> spec.input_dim) || key != "input_dim")
    throw IoError("checkpoint: missing input_dim");
  if (!(is >> key >> spec.output_dim) || key != "output_dim")
    throw IoError("checkpoint: missing output_dim");
  if (!(is >> key) || key != "hidden")
    throw IoError("checkpoint: missing hidden");
  std::string rest;
  std::getline(is, rest);
  {
    std::istringstream hs(rest);
    std::size_t h;
    while (hs >> h) spec.hidden_dims.push_back(h);
  }
  std::string act;
  if (!(is >> key >> act) || key != "activation")
    throw IoError("checkpoint: missing activation");
  spec.hidden_activation = activation_from_string(act);
  int homo = 0;
  if (!(is >> key >> homo) || key != "homogeneous")
    throw IoError("checkpoint: missing homogeneous flag");
  spec.homogeneous = homo != 0;
  std::size_t n_layers = 0;
  if (!(is >> key >> n_layers) || key != "layers")
    throw IoError("checkpoint: missing layer count");

  MlpModel model;
  model.spec_ = spec;
  std::vector<std::size_t> dims;
  dims.push_back(spec.input_dim);
  dims.insert(dims.end(), spec.hidden_dims.begin(), spec.hidden_dims.end());
  dims.push_back(spec.output_dim);
  if (n_layers + 1 != dims.size())
    throw IoError("checkpoint: layer count does not match architecture");

  for (std::size_t i = 0; i < n_layers; ++i) {
    DenseLayer layer;
    layer.weight = read_tensor(is, "weight" + std::to_string(i), true);
    if (layer.weight.rows() != dims[i + 1] || layer.weight.cols() != dims[i])
      throw IoError("checkpoint: weight" + std::to_string(i) +
                    " shape mismatch");
    if (!spec.homogeneous)
      layer.bias = read_tensor(is, "bias" + std::to_string(i), true);
    layer.activation = (i + 1 == n_layers) ? Activation::identity
                                           : spec.hidden_activation;
    model.layers_.push_back(std::move(layer));
  }
  std::string tail;
  if (!(is >> tail) || tail != "end")
    throw IoError("checkpoint: missing end marker");
  return model;
}

// ---------------------------------------------------------------------------
// optimizers
// ---------------------------------------------------------------------------

Optimizer::Optimizer(const OptimizerSpec& spec,
                     const std::vector<Tensor>& params)
    : spec_(spec) {
  for (const auto& p : params) {
    sizes_.push_back(p.size());
    moment1_.emplace_back(p.size(), 0.0);
    if (spec_.kind == OptimizerSpec::Kind::adam)
      moment2_.emplace_back(p.size(), 0.0);
  }
}

void Optimizer::step(const std::vector<Tensor>& params) {
  if (params.size() != sizes_.size())
    throw AutogradError("optimizer: parameter list changed size");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].size() != sizes_[i])
      throw AutogradError("optimizer: parameter shape changed");
    if (!params[i].has_grad())
      throw AutogradError("optimizer: missing gradient on parameter " +
                          std::to_string(i));
  }
  ++step_count_;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i];
    const auto& g = p.grad();
    auto& theta = p.data_mut();
    if (spec_.kind == OptimizerSpec::Kind::sgd_momentum) {
      auto& v = moment1_[i];
      for (std::size_t j = 0; j < theta.size(); ++j) {
        v[j] = spec_.momentum * v[j] + g[j];
        theta[j] -= spec_.learning_rate * v[j];
      }
    } else {
      auto& m = moment1_[i];
      auto& v = moment2_[i];
      const double t = static_cast<double>(step_count_);
      const double c1 = 1.0 - std::pow(spec_.beta1, t);
      const double c2 = 1.0 - std::pow(spec_.beta2, t);
      for (std::size_t j = 0; j < theta.size(); ++j) {
        m[j] = spec_.beta1 * m[j] + (1.0 - spec_.beta1) * g[j];
        v[j] = spec_.beta2 * v[j] + (1.0 - spec_.beta2) * g[j] * g[j];
        const double mhat = m[j] / c1;
        const double vhat = v[j] / c2;
        theta[j] -= spec_.learning_rate * mhat /
                    (std::sqrt(vhat) + spec_.epsilon);
      }
    }
    p.clear_grad();
  }
}

}  // namespace mixupe
