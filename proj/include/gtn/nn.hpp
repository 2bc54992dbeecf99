#pragma once

// Parameter containers shared by all model stages.

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "gtn/ops.hpp"
#include "gtn/random.hpp"

namespace gtn {

/// Ordered (name, tensor) list. Order is part of the checkpoint contract.
struct ParamList {
  std::vector<std::string> names;
  std::vector<Tensor> tensors;

  void add(std::string name, const Tensor& t) {
    names.push_back(std::move(name));
    tensors.push_back(t);
  }
  void append(const std::string& prefix, const ParamList& other) {
    for (std::size_t i = 0; i < other.size(); ++i) add(prefix + other.names[i], other.tensors[i]);
  }
  std::size_t size() const { return tensors.size(); }
  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.numel();
    return n;
  }
  void zero_grad() {
    for (auto& t : tensors) t.zero_grad();
  }
};

/// Fan-in-scaled uniform initialization, U(-sqrt(6/fan_in), sqrt(6/fan_in)).
inline Tensor he_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  return uniform_tensor(std::move(shape), -bound, bound, rng, true);
}

struct Conv {
  Tensor weight;  // O x C x k x k
  Tensor bias;    // O
  std::size_t stride = 1;
  std::size_t pad = 0;

  static Conv make(std::size_t in, std::size_t out, std::size_t k, std::size_t stride, Rng& rng) {
    Conv c;
    c.weight = he_uniform({out, in, k, k}, in * k * k, rng);
    c.bias = Tensor::zeros({out}, true);
    c.stride = stride;
    c.pad = (k - 1) / 2;
    return c;
  }

  std::size_t in_channels() const { return weight.dim(1); }
  std::size_t out_channels() const { return weight.dim(0); }

  Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, stride, pad); }

  void collect(const std::string& prefix, ParamList& out) const {
    out.add(prefix + "weight", weight);
    out.add(prefix + "bias", bias);
  }

  static std::size_t param_count(std::size_t in, std::size_t out, std::size_t k) { return out * in * k * k + out; }
};

/// 3x3 conv followed by ReLU; the building block of backbone stages and fusers.
inline Tensor conv_relu(const Conv& c, const Tensor& x) { return relu(c(x)); }

struct Linear {
  Tensor weight;  // in x out
  Tensor bias;    // out, may be undefined

  static Linear make(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true) {
    Linear l;
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    l.weight = uniform_tensor({in, out}, -bound, bound, rng, true);
    if (with_bias) l.bias = Tensor::zeros({out}, true);
    return l;
  }

  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }

  void collect(const std::string& prefix, ParamList& out) const {
    out.add(prefix + "weight", weight);
    if (bias.defined()) out.add(prefix + "bias", bias);
  }
};

struct LayerNormParams {
  Tensor gamma, beta;

  static LayerNormParams make(std::size_t d) {
    return {Tensor::full({d}, 1.0, true), Tensor::zeros({d}, true)};
  }
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta, 1e-5); }
  void collect(const std::string& prefix, ParamList& out) const {
    out.add(prefix + "gamma", gamma);
    out.add(prefix + "beta", beta);
  }
};

}  // namespace gtn
