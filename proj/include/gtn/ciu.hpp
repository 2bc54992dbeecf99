#pragma once

// Cluster integration: pairs encoder outputs across groups with a one-level
// stagger, then integrates each pair with the level-1 transitioned feature by
// cascaded upsample -> concatenate -> fuse.

#include <array>
#include <string>

#include "gtn/nn.hpp"
#include "gtn/sum.hpp"

namespace gtn {

/// Ordered pair: `high` comes from the high group (side G_H), `mid` from the
/// middle group (side 2 * G_H).
struct Cluster {
  Tensor high, mid;
};

struct ClusterSet {
  std::array<Cluster, 3> classes;  // C1, C2, C3
};

struct CiuParams {
  std::array<Conv, 3> fuse_pair;    // 2C -> C after concat(up(high), mid)
  std::array<Conv, 3> fuse_detail;  // 2C -> C after concat(up(.), f_t1)

  void collect(const std::string& prefix, ParamList& out) const {
    for (std::size_t i = 0; i < 3; ++i) {
      const auto p = prefix + "c" + std::to_string(i + 1) + ".";
      fuse_pair[i].collect(p + "pair.", out);
      fuse_detail[i].collect(p + "detail.", out);
    }
  }
};

inline CiuParams init_ciu(std::size_t width, Rng& rng) {
  CiuParams p;
  for (std::size_t i = 0; i < 3; ++i) {
    p.fuse_pair[i] = Conv::make(2 * width, width, 3, 1, rng);
    p.fuse_detail[i] = Conv::make(2 * width, width, 3, 1, rng);
  }
  return p;
}

/// h = encoded high group (h'f5, h'f4, h'f3 as high/mid/low); m = encoded
/// middle group (m'f4, m'f3, m'f2 as high/mid/low).
/// C1 = (h'f5, m'f4), C2 = (h'f4, m'f3), C3 = (h'f3, m'f2).
inline ClusterSet cluster(const GroupFeatures& h, const GroupFeatures& m) {
  return {{{{h.high, m.high}, {h.mid, m.mid}, {h.low, m.low}}}};
}

/// Vector form for callers holding (h'f3, h'f4, h'f5) and (m'f2, m'f3, m'f4).
inline ClusterSet cluster(const std::vector<Tensor>& h_feats, const std::vector<Tensor>& m_feats) {
  if (h_feats.size() != 3 || m_feats.size() != 3)
    throw std::invalid_argument("cluster: expected three features from each group, got " +
                                std::to_string(h_feats.size()) + " and " + std::to_string(m_feats.size()));
  return cluster(GroupFeatures{h_feats[2], h_feats[1], h_feats[0]}, GroupFeatures{m_feats[2], m_feats[1], m_feats[0]});
}

/// f'_i: a = up(high -> side(mid)); b = fuse(concat(a, mid));
/// c = up(b -> side(f_t1)); d = fuse(concat(c, f_t1)). Output C x S/2 x S/2.
inline Tensor integrate(const Cluster& c, const Tensor& f_t1, const CiuParams& p, std::size_t index) {
  const std::size_t width = p.fuse_pair.at(index).out_channels();
  for (const Tensor* t : {&c.high, &c.mid, &f_t1})
    if (t->rank() != 4 || t->dim(1) != width)
      throw ShapeError("integrate: expected " + std::to_string(width) + "-channel maps, got " + to_string(t->shape()));
  const Tensor a = up_to(c.high, c.mid.dim(2));
  const Tensor b = conv_relu(p.fuse_pair[index], concat({a, c.mid}, 1));
  const Tensor up = up_to(b, f_t1.dim(2));
  const Tensor d = conv_relu(p.fuse_detail[index], concat({up, f_t1}, 1));
  return up_to(d, f_t1.dim(2));
}

inline std::array<Tensor, 3> integrate_all(const ClusterSet& clusters, const Tensor& f_t1, const CiuParams& p) {
  return {integrate(clusters.classes[0], f_t1, p, 0), integrate(clusters.classes[1], f_t1, p, 1),
          integrate(clusters.classes[2], f_t1, p, 2)};
}

}  // namespace gtn
