#pragma once

// Flat key=value run configuration. `profile` selects the defaults (toy or
// full); every other key overrides one field. Unknown keys are errors.

#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

#include "gtn/train.hpp"

namespace gtn {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RunConfig {
  ModelConfig model = ModelConfig::toy();
  TrainConfig train = TrainConfig::toy();
  std::string data;            // dataset root
  std::string checkpoint_out;  // where train writes checkpoints

  static RunConfig for_profile(const std::string& profile) {
    RunConfig c;
    if (profile == "full") {
      c.model = ModelConfig::full();
      c.train = TrainConfig::full();
    } else if (profile != "toy") {
      throw ConfigError("config: unknown profile '" + profile + "' (expected toy or full)");
    }
    return c;
  }

  void set_seed(std::uint64_t s) { model.seed = train.seed = s; }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  unsigned long long x = 0;
  try {
    x = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty() || v[0] == '-')
    throw ConfigError("config: key '" + key + "' expects a non-negative integer, got '" + v + "'");
  return static_cast<std::size_t>(x);
}

inline double parse_real(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0') throw ConfigError("config: key '" + key + "' expects a number, got '" + v + "'");
  return x;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: key '" + key + "' expects true or false, got '" + v + "'");
}

}  // namespace detail

using ConfigSetter = std::function<void(RunConfig&, const std::string&)>;

/// Every recognised key with its setter. Defaults come from the profile.
inline const std::map<std::string, ConfigSetter>& config_keys() {
  using namespace detail;
  static const std::map<std::string, ConfigSetter> keys = {
      {"profile", [](RunConfig&, const std::string&) {}},  // applied before the others
      {"seed", [](RunConfig& c, const std::string& v) { c.set_seed(parse_size("seed", v)); }},
      {"input_size", [](RunConfig& c, const std::string& v) { c.model.input_size = parse_size("input_size", v); }},
      {"channels",
       [](RunConfig& c, const std::string& v) {
         std::istringstream in(v);
         std::string part;
         std::size_t i = 0;
         while (std::getline(in, part, ',')) {
           if (i == kLevels) throw ConfigError("config: key 'channels' expects 5 comma-separated values");
           c.model.level_channels[i++] = parse_size("channels", trim(part));
         }
         if (i != kLevels) throw ConfigError("config: key 'channels' expects 5 comma-separated values");
       }},
      {"width", [](RunConfig& c, const std::string& v) { c.model.width = parse_size("width", v); }},
      {"cbam_reduction", [](RunConfig& c, const std::string& v) { c.model.cbam_reduction = parse_size("cbam_reduction", v); }},
      {"purify_rounds", [](RunConfig& c, const std::string& v) { c.model.purify_rounds = parse_size("purify_rounds", v); }},
      {"mte_dim", [](RunConfig& c, const std::string& v) { c.model.mte_dim = parse_size("mte_dim", v); }},
      {"mte_heads", [](RunConfig& c, const std::string& v) { c.model.mte_heads = parse_size("mte_heads", v); }},
      {"mte_layers", [](RunConfig& c, const std::string& v) { c.model.mte_layers = parse_size("mte_layers", v); }},
      {"mte_ff_mult", [](RunConfig& c, const std::string& v) { c.model.mte_ff_mult = parse_size("mte_ff_mult", v); }},
      {"ppa_window", [](RunConfig& c, const std::string& v) { c.model.ppa_window = parse_size("ppa_window", v); }},
      {"final_prediction",
       [](RunConfig& c, const std::string& v) {
         if (v == "s1") c.model.final_prediction = FinalPrediction::s1;
         else if (v == "mean") c.model.final_prediction = FinalPrediction::mean;
         else throw ConfigError("config: key 'final_prediction' expects s1 or mean, got '" + v + "'");
       }},
      {"epochs", [](RunConfig& c, const std::string& v) { c.train.epochs = parse_size("epochs", v); }},
      {"batch_size", [](RunConfig& c, const std::string& v) { c.train.batch_size = parse_size("batch_size", v); }},
      {"lr", [](RunConfig& c, const std::string& v) { c.train.lr = parse_real("lr", v); }},
      {"decay_factor", [](RunConfig& c, const std::string& v) { c.train.decay_factor = parse_real("decay_factor", v); }},
      {"decay_every", [](RunConfig& c, const std::string& v) { c.train.decay_every = parse_size("decay_every", v); }},
      {"augment", [](RunConfig& c, const std::string& v) { c.train.augment = parse_bool("augment", v); }},
      {"data", [](RunConfig& c, const std::string& v) { c.data = v; }},
      {"checkpoint_out", [](RunConfig& c, const std::string& v) { c.checkpoint_out = v; }},
  };
  return keys;
}

inline RunConfig parse_config(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::string profile = "toy";
  while (std::getline(in, line)) {
    ++lineno;
    line = detail::trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: line " + std::to_string(lineno) + " is not key=value: '" + line + "'");
    auto key = detail::trim(line.substr(0, eq));
    auto val = detail::trim(line.substr(eq + 1));
    if (!config_keys().count(key)) throw ConfigError("config: unknown key '" + key + "'");
    if (key == "profile") profile = val;
    entries.emplace_back(std::move(key), std::move(val));
  }
  RunConfig c = RunConfig::for_profile(profile);
  for (const auto& [k, v] : entries) config_keys().at(k)(c, v);
  c.model.profile = c.train.profile = profile;
  try {
    c.model.validate();
    c.train.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace gtn
