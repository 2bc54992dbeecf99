#pragma once

#include <array>
#include <string>

#include "gtn/nn.hpp"

namespace gtn {

struct HeadParams {
  std::array<Conv, 3> conv3;  // C -> C, 3x3
  std::array<Conv, 3> conv1;  // C -> 1, 1x1

  void collect(const std::string& prefix, ParamList& out) const {
    for (std::size_t i = 0; i < 3; ++i) {
      const auto p = prefix + "s" + std::to_string(i + 1) + ".";
      conv3[i].collect(p + "conv3.", out);
      conv1[i].collect(p + "conv1.", out);
    }
  }
};

inline HeadParams init_heads(std::size_t width, Rng& rng) {
  HeadParams p;
  for (std::size_t i = 0; i < 3; ++i) {
    p.conv3[i] = Conv::make(width, width, 3, 1, rng);
    p.conv1[i] = Conv::make(width, 1, 1, 1, rng);
  }
  return p;
}

/// S_i = sigmoid(up(conv1x1(relu(conv3x3(f'_i))) -> input_side)), N x 1 x S x S.
inline std::array<Tensor, 3> predict_heads(const std::array<Tensor, 3>& features, const HeadParams& p,
                                           std::size_t input_side) {
  std::array<Tensor, 3> out;
  for (std::size_t i = 0; i < 3; ++i) {
    const Tensor logits = p.conv1[i](conv_relu(p.conv3[i], features[i]));
    out[i] = sigmoid(up_to(logits, input_side));
  }
  return out;
}

}  // namespace gtn
