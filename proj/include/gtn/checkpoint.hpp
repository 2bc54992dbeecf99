#pragma once

// Binary checkpoints.
//
//   "GTNCKPT\0" | u32 version | u64 record count | records...
//   record: u32 name length | name bytes | u32 rank | u64 dims[rank] | f64 data[numel]
//
// All integers and floats little-endian. Model parameters come first in
// ParamList order, then optimizer moments ("optim.m.<name>", "optim.v.<name>")
// and the scalars "optim.step" / "optim.epoch" when a state is saved.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "gtn/image.hpp"
#include "gtn/nn.hpp"
#include "gtn/optim.hpp"

namespace gtn {

inline constexpr char kCheckpointMagic[8] = {'G', 'T', 'N', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointRecord {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

namespace detail {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <class T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  std::uint8_t b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  out.insert(out.end(), b, b + sizeof(T));
}

struct Reader {
  const std::vector<std::uint8_t>& bytes;
  std::size_t pos = 0;
  std::string source;

  template <class T>
  T get(const char* what) {
    if (bytes.size() - pos < sizeof(T))
      throw DataError(source + ": truncated checkpoint reading " + what, static_cast<std::ptrdiff_t>(pos));
    std::uint8_t b[sizeof(T)];
    std::memcpy(b, bytes.data() + pos, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    pos += sizeof(T);
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
  }
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const std::vector<CheckpointRecord>& records) {
  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 8);
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint64_t>(out, records.size());
  for (const auto& r : records) {
    if (numel_of(r.shape) != r.data.size()) throw std::logic_error("checkpoint: record '" + r.name + "' size mismatch");
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(r.name.size()));
    out.insert(out.end(), r.name.begin(), r.name.end());
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(r.shape.size()));
    for (auto d : r.shape) detail::put_le<std::uint64_t>(out, d);
    for (double v : r.data) detail::put_le<double>(out, v);
  }
  return out;
}

inline std::vector<CheckpointRecord> decode_checkpoint(const std::vector<std::uint8_t>& bytes,
                                                       const std::string& source = "<memory>") {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
    throw DataError(source + ": not a checkpoint (bad magic)", 0);
  detail::Reader rd{bytes, 8, source};
  const auto version = rd.get<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    throw DataError(source + ": unsupported checkpoint version " + std::to_string(version), 8);
  const auto count = rd.get<std::uint64_t>("record count");
  std::vector<CheckpointRecord> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    CheckpointRecord r;
    const auto len = rd.get<std::uint32_t>("name length");
    if (bytes.size() - rd.pos < len)
      throw DataError(source + ": truncated checkpoint reading name", static_cast<std::ptrdiff_t>(rd.pos));
    r.name.assign(reinterpret_cast<const char*>(bytes.data() + rd.pos), len);
    rd.pos += len;
    const auto rank = rd.get<std::uint32_t>("rank");
    if (rank > 8) throw DataError(source + ": implausible rank for '" + r.name + "'", static_cast<std::ptrdiff_t>(rd.pos));
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      r.shape.push_back(rd.get<std::uint64_t>("dims"));
      n *= r.shape.back();
    }
    if ((bytes.size() - rd.pos) / 8 < n)
      throw DataError(source + ": truncated checkpoint data for '" + r.name + "'", static_cast<std::ptrdiff_t>(rd.pos));
    r.data.resize(n);
    for (auto& v : r.data) v = rd.get<double>("data");
    out.push_back(std::move(r));
  }
  if (rd.pos != bytes.size()) throw DataError(source + ": trailing bytes after checkpoint", static_cast<std::ptrdiff_t>(rd.pos));
  return out;
}

inline std::vector<CheckpointRecord> param_records(const ParamList& params) {
  std::vector<CheckpointRecord> out;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto d = params.tensors[k].data();
    out.push_back({params.names[k], params.tensors[k].shape(), {d.begin(), d.end()}});
  }
  return out;
}

inline std::vector<CheckpointRecord> state_records(const ParamList& params, const OptimizerState& st) {
  std::vector<CheckpointRecord> out;
  for (std::size_t k = 0; k < params.size(); ++k)
    out.push_back({"optim.m." + params.names[k], params.tensors[k].shape(), st.m[k]});
  for (std::size_t k = 0; k < params.size(); ++k)
    out.push_back({"optim.v." + params.names[k], params.tensors[k].shape(), st.v[k]});
  out.push_back({"optim.step", {1}, {static_cast<double>(st.step)}});
  out.push_back({"optim.epoch", {1}, {static_cast<double>(st.epoch)}});
  return out;
}

inline void save_checkpoint(const std::filesystem::path& path, const ParamList& params,
                            const OptimizerState* state = nullptr) {
  auto records = param_records(params);
  if (state) {
    auto s = state_records(params, *state);
    records.insert(records.end(), s.begin(), s.end());
  }
  write_file(path, encode_checkpoint(records));
}

/// Copies stored values into `params` (and `state` when given). Every
/// parameter must be present with its exact shape; unknown records are
/// rejected so a checkpoint from another profile cannot load half-way.
inline void restore_checkpoint(const std::vector<CheckpointRecord>& records, ParamList& params,
                               OptimizerState* state = nullptr, const std::string& source = "<memory>") {
  std::map<std::string, const CheckpointRecord*> by_name;
  for (const auto& r : records)
    if (!by_name.emplace(r.name, &r).second) throw DataError(source + ": duplicate record '" + r.name + "'");
  auto take = [&](const std::string& name, const Shape& shape) -> const CheckpointRecord& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw DataError(source + ": checkpoint lacks '" + name + "'");
    if (it->second->shape != shape)
      throw DataError(source + ": '" + name + "' has shape " + to_string(it->second->shape) + ", model expects " +
                      to_string(shape));
    const auto* r = it->second;
    by_name.erase(it);
    return *r;
  };
  std::vector<const CheckpointRecord*> found;
  for (std::size_t k = 0; k < params.size(); ++k) found.push_back(&take(params.names[k], params.tensors[k].shape()));
  OptimizerState restored;
  if (state) {
    restored = *state;
    for (std::size_t k = 0; k < params.size(); ++k) restored.m[k] = take("optim.m." + params.names[k], params.tensors[k].shape()).data;
    for (std::size_t k = 0; k < params.size(); ++k) restored.v[k] = take("optim.v." + params.names[k], params.tensors[k].shape()).data;
    restored.step = static_cast<std::uint64_t>(take("optim.step", {1}).data[0]);
    restored.epoch = static_cast<std::size_t>(take("optim.epoch", {1}).data[0]);
  } else {
    for (auto it = by_name.begin(); it != by_name.end();)
      it = it->first.rfind("optim.", 0) == 0 ? by_name.erase(it) : std::next(it);
  }
  if (!by_name.empty()) throw DataError(source + ": checkpoint has unexpected record '" + by_name.begin()->first + "'");
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto dst = params.tensors[k].mutable_data();
    std::copy(found[k]->data.begin(), found[k]->data.end(), dst.begin());
  }
  if (state) *state = std::move(restored);
}

inline void load_checkpoint(const std::filesystem::path& path, ParamList& params, OptimizerState* state = nullptr) {
  restore_checkpoint(decode_checkpoint(read_file(path), path.string()), params, state, path.string());
}

}  // namespace gtn
