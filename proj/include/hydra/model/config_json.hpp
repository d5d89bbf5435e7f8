#pragma once

#include <set>
#include <string>

#include <json.hpp>

#include "hydra/model/config.hpp"

namespace hydra {

inline nlohmann::json to_json(const HydraConfig& c) {
  return {{"d", c.d},
          {"d_c", c.d_c},
          {"heads", c.heads},
          {"layers", c.layers},
          {"n_max", c.n_max},
          {"dropout", c.dropout},
          {"dropout_in_layers", c.dropout_in_layers},
          {"rope_base", c.rope_base},
          {"norm_eps", c.norm_eps},
          {"ssm",
           {{"expand", c.ssm.expand},
            {"state", c.ssm.state},
            {"conv_width", c.ssm.conv_width},
            {"use_conv", c.ssm.use_conv}}},
          {"vocab_sizes", c.vocab_sizes}};
}

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, const std::set<std::string>& known,
                                const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) throw ConfigError(where + ": unknown key '" + k + "'");
  }
}

template <class V>
void read_field(const nlohmann::json& j, const char* key, V& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type");
  }
}

}  // namespace detail

/// Reads fields present in `j` over the values already in `c`; unknown keys are rejected.
inline void merge_json(const nlohmann::json& j, HydraConfig& c, const std::string& where = "model") {
  detail::reject_unknown_keys(j, {"d", "d_c", "heads", "layers", "n_max", "dropout", "dropout_in_layers",
                                  "rope_base", "norm_eps", "ssm", "vocab_sizes"},
                              where);
  detail::read_field(j, "d", c.d, where);
  detail::read_field(j, "d_c", c.d_c, where);
  detail::read_field(j, "heads", c.heads, where);
  detail::read_field(j, "layers", c.layers, where);
  detail::read_field(j, "n_max", c.n_max, where);
  detail::read_field(j, "dropout", c.dropout, where);
  detail::read_field(j, "dropout_in_layers", c.dropout_in_layers, where);
  detail::read_field(j, "rope_base", c.rope_base, where);
  detail::read_field(j, "norm_eps", c.norm_eps, where);
  detail::read_field(j, "vocab_sizes", c.vocab_sizes, where);
  if (j.contains("ssm")) {
    const auto& s = j.at("ssm");
    const std::string w = where + ".ssm";
    detail::reject_unknown_keys(s, {"expand", "state", "conv_width", "use_conv"}, w);
    detail::read_field(s, "expand", c.ssm.expand, w);
    detail::read_field(s, "state", c.ssm.state, w);
    detail::read_field(s, "conv_width", c.ssm.conv_width, w);
    detail::read_field(s, "use_conv", c.ssm.use_conv, w);
  }
}

inline HydraConfig config_from_json(const nlohmann::json& j) {
  HydraConfig c;
  merge_json(j, c);
  return c;
}

}  // namespace hydra
