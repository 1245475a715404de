#include "oprl/nn.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "oprl/errors.hpp"

namespace oprl::nn {

void NetworkSpec::validate() const {
  if (input_dim == 0 || output_dim == 0) {
    throw InvalidSpec("network input and output dimensions must be positive");
  }
  for (std::size_t h : hidden_sizes) {
    if (h == 0) throw InvalidSpec("hidden layer sizes must be positive");
  }
  if (dropout_layer) {
    if (hidden_sizes.empty()) throw InvalidSpec("dropout requires a hidden layer");
    if (*dropout_layer >= hidden_sizes.size()) {
      throw InvalidSpec("dropout layer index out of range");
    }
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw InvalidSpec("dropout rate must lie in [0, 1)");
  }
}

std::size_t NetworkSpec::fan_in(std::size_t layer) const {
  return layer == 0 ? input_dim : hidden_sizes[layer - 1];
}

std::size_t NetworkSpec::fan_out(std::size_t layer) const {
  return layer == hidden_sizes.size() ? output_dim : hidden_sizes[layer];
}

std::size_t NetworkSpec::param_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < num_layers(); ++l) n += (fan_in(l) + 1) * fan_out(l);
  return n;
}

Network::Network(NetworkSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  std::size_t off = 0;
  for (std::size_t l = 0; l < spec_.num_layers(); ++l) {
    offsets_.push_back(off);
    off += (spec_.fan_in(l) + 1) * spec_.fan_out(l);
  }
  params_ = Vector::Zero(static_cast<Eigen::Index>(off));
}

Eigen::Map<const Matrix> Network::weights(std::size_t layer) const {
  return {params_.data() + offset(layer), static_cast<Eigen::Index>(spec_.fan_out(layer)),
          static_cast<Eigen::Index>(spec_.fan_in(layer))};
}

Eigen::Map<const Vector> Network::bias(std::size_t layer) const {
  return {params_.data() + offset(layer) + spec_.fan_in(layer) * spec_.fan_out(layer),
          static_cast<Eigen::Index>(spec_.fan_out(layer))};
}

Eigen::Map<Matrix> Network::weights(std::size_t layer) {
  return {params_.data() + offset(layer), static_cast<Eigen::Index>(spec_.fan_out(layer)),
          static_cast<Eigen::Index>(spec_.fan_in(layer))};
}

Eigen::Map<Vector> Network::bias(std::size_t layer) {
  return {params_.data() + offset(layer) + spec_.fan_in(layer) * spec_.fan_out(layer),
          static_cast<Eigen::Index>(spec_.fan_out(layer))};
}

Network init_network(const NetworkSpec& spec) {
  Network net(spec);
  Rng rng(spec.seed);
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const double limit =
        std::sqrt(6.0 / static_cast<double>(spec.fan_in(l) + spec.fan_out(l)));
    auto w = net.weights(l);
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = uniform(rng, -limit, limit);
    }
  }
  return net;
}

namespace {

void check_input(const Network& net, const Matrix& x) {
  if (static_cast<std::size_t>(x.rows()) != net.spec().input_dim) {
    throw ShapeError("input has " + std::to_string(x.rows()) + " rows, network expects " +
                     std::to_string(net.spec().input_dim));
  }
  if (!x.allFinite()) throw NumericError("non-finite network input");
}

bool dropout_active(const NetworkSpec& spec, Mode mode) {
  return mode != Mode::eval && spec.dropout_layer.has_value() && spec.dropout_rate > 0.0;
}

// Activations a_0..a_L, pre-activations of hidden layers, and dropout masks.
struct Cache {
  std::vector<Matrix> activations;
  std::vector<Matrix> pre;
  Matrix mask;  // empty when dropout inactive
};

Matrix sample_batch_mask(const NetworkSpec& spec, Eigen::Index cols, Rng& rng) {
  const auto units = static_cast<Eigen::Index>(spec.hidden_sizes[*spec.dropout_layer]);
  const double keep = 1.0 - spec.dropout_rate;
  Matrix m(units, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < units; ++i) m(i, j) = uniform01(rng) < keep ? 1.0 / keep : 0.0;
  }
  return m;
}

// `mask` is either empty, a single column (shared), or one column per sample.
void run_forward(const Network& net, const Matrix& x, const Matrix& mask, Cache& cache) {
  const auto& spec = net.spec();
  const std::size_t hidden = spec.hidden_sizes.size();
  cache.activations.clear();
  cache.pre.clear();
  cache.activations.push_back(x);
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    Matrix z = net.weights(l) * cache.activations.back();
    z.colwise() += net.bias(l);
    if (l == hidden) {
      cache.activations.push_back(std::move(z));
      break;
    }
    Matrix a = z.cwiseMax(0.0);
    if (mask.size() > 0 && spec.dropout_layer && *spec.dropout_layer == l) {
      if (mask.cols() == 1) {
        a.array().colwise() *= mask.col(0).array();
      } else {
        a.array() *= mask.array();
      }
    }
    cache.pre.push_back(std::move(z));
    cache.activations.push_back(std::move(a));
  }
}

Matrix mask_for_mode(const NetworkSpec& spec, Eigen::Index cols, Mode mode, Rng& rng) {
  if (!dropout_active(spec, mode)) return {};
  return sample_batch_mask(spec, mode == Mode::mc_dropout ? 1 : cols, rng);
}

}  // namespace

Vector forward(const Network& net, const Vector& x, Mode mode, Rng& rng) {
  Matrix out = forward_batch(net, Matrix(x), mode, rng);
  return out.col(0);
}

Matrix forward_batch(const Network& net, const Matrix& x, Mode mode, Rng& rng) {
  check_input(net, x);
  Cache cache;
  run_forward(net, x, mask_for_mode(net.spec(), x.cols(), mode, rng), cache);
  return std::move(cache.activations.back());
}

Matrix forward_eval(const Network& net, const Matrix& x) {
  check_input(net, x);
  Cache cache;
  run_forward(net, x, Matrix(), cache);
  return std::move(cache.activations.back());
}

Vector sample_dropout_mask(const NetworkSpec& spec, Rng& rng) {
  if (!spec.dropout_layer) return {};
  return sample_batch_mask(spec, 1, rng).col(0);
}

Matrix forward_with_mask(const Network& net, const Matrix& x, const Vector& mask) {
  check_input(net, x);
  const auto& spec = net.spec();
  if (mask.size() > 0 &&
      (!spec.dropout_layer ||
       static_cast<std::size_t>(mask.size()) != spec.hidden_sizes[*spec.dropout_layer])) {
    throw ShapeError("dropout mask does not match the dropout layer");
  }
  Cache cache;
  run_forward(net, x, Matrix(mask), cache);
  return std::move(cache.activations.back());
}

GradientResult gradient(const Network& net, const Matrix& x, const LossFn& loss, Mode mode,
                        Rng& rng) {
  check_input(net, x);
  const auto& spec = net.spec();
  Cache cache;
  const Matrix mask = mask_for_mode(spec, x.cols(), mode, rng);
  run_forward(net, x, mask, cache);

  LossEval le = loss(cache.activations.back());
  if (!std::isfinite(le.value)) throw NumericError("non-finite loss");
  if (le.d_output.rows() != cache.activations.back().rows() ||
      le.d_output.cols() != cache.activations.back().cols()) {
    throw ShapeError("loss derivative shape does not match network output");
  }

  GradientResult result;
  result.loss = le.value;
  result.grad = Vector::Zero(static_cast<Eigen::Index>(net.param_count()));
  Network shadow(spec);  // gives layer views into the gradient vector
  shadow.params().swap(result.grad);

  Matrix delta = std::move(le.d_output);
  for (std::size_t l = spec.num_layers(); l-- > 0;) {
    shadow.weights(l).noalias() = delta * cache.activations[l].transpose();
    shadow.bias(l) = delta.rowwise().sum();
    if (l == 0) break;
    Matrix back = net.weights(l).transpose() * delta;
    const std::size_t h = l - 1;
    if (mask.size() > 0 && *spec.dropout_layer == h) {
      if (mask.cols() == 1) {
        back.array().colwise() *= mask.col(0).array();
      } else {
        back.array() *= mask.array();
      }
    }
    back.array() *= (cache.pre[h].array() > 0.0).cast<double>();
    delta = std::move(back);
  }
  shadow.params().swap(result.grad);
  return result;
}

GradientResult gradient(const Network& net, const Matrix& x, const LossFn& loss) {
  Rng unused(0);
  return gradient(net, x, loss, Mode::eval, unused);
}

OptimizerState OptimizerState::for_network(const Network& net, AdamConfig config) {
  OptimizerState s;
  s.config = config;
  s.first_moment = Vector::Zero(static_cast<Eigen::Index>(net.param_count()));
  s.second_moment = s.first_moment;
  return s;
}

void optimizer_step(Network& net, OptimizerState& state, const Vector& grad) {
  const auto n = static_cast<Eigen::Index>(net.param_count());
  if (grad.size() != n || state.first_moment.size() != n || state.second_moment.size() != n) {
    throw ShapeError("gradient or optimizer state does not match parameter count");
  }
  const auto& c = state.config;
  ++state.step;
  state.first_moment = c.beta1 * state.first_moment + (1.0 - c.beta1) * grad;
  state.second_moment =
      c.beta2 * state.second_moment + (1.0 - c.beta2) * grad.cwiseProduct(grad);
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  net.params().array() -= c.learning_rate * (state.first_moment.array() / bc1) /
                          ((state.second_moment.array() / bc2).sqrt() + c.epsilon);
}

nlohmann::json spec_to_json(const NetworkSpec& spec) {
  nlohmann::json j;
  j["input_dim"] = spec.input_dim;
  j["hidden_sizes"] = spec.hidden_sizes;
  j["output_dim"] = spec.output_dim;
  j["activation"] = "relu";
  j["dropout_layer"] = spec.dropout_layer ? nlohmann::json(*spec.dropout_layer) : nlohmann::json();
  j["dropout_rate"] = spec.dropout_rate;
  j["seed"] = spec.seed;
  return j;
}

NetworkSpec spec_from_json(const nlohmann::json& j) {
  NetworkSpec s;
  s.input_dim = j.at("input_dim").get<std::size_t>();
  s.hidden_sizes = j.at("hidden_sizes").get<std::vector<std::size_t>>();
  s.output_dim = j.at("output_dim").get<std::size_t>();
  if (j.at("activation").get<std::string>() != "relu") throw InvalidSpec("unknown activation");
  if (!j.at("dropout_layer").is_null()) s.dropout_layer = j.at("dropout_layer").get<std::size_t>();
  s.dropout_rate = j.at("dropout_rate").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.validate();
  return s;
}

nlohmann::json network_to_json(const Network& net) {
  nlohmann::json j;
  j["format"] = "oprl-network";
  j["version"] = 1;
  j["spec"] = spec_to_json(net.spec());
  j["params"] = std::vector<double>(net.params().data(), net.params().data() + net.params().size());
  return j;
}

Network network_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "oprl-network") throw InvalidSpec("not a network checkpoint");
  Network net(spec_from_json(j.at("spec")));
  const auto p = j.at("params").get<std::vector<double>>();
  if (p.size() != net.param_count()) throw ShapeError("checkpoint parameter count mismatch");
  net.params() = Eigen::Map<const Vector>(p.data(), static_cast<Eigen::Index>(p.size()));
  return net;
}

void save_network(const Network& net, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << network_to_json(net).dump() << '\n';
}

Network load_network(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return network_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed network checkpoint: ") + e.what(), 1);
  }
}

}  // namespace oprl::nn
