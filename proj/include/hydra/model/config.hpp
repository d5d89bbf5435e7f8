#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "hydra/ssm/mamba_head.hpp"

namespace hydra {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Architecture hyperparameters. `vocab_sizes` holds one entry per domain
/// (real items only; row 0 of every embedding table is the padding row).
struct HydraConfig {
  std::size_t d = 64;          // item embedding width
  std::size_t d_c = 16;        // latent width per head
  std::size_t heads = 4;       // v
  std::size_t layers = 2;      // L
  std::size_t n_max = 50;      // maximum context length
  double dropout = 0.1;        // embedding dropout
  bool dropout_in_layers = false;
  double rope_base = 10000.0;
  double norm_eps = 1e-6;
  ssm::SsmConfig ssm{};
  std::vector<std::size_t> vocab_sizes{};

  std::size_t latent_width() const { return heads * d_c; }
  std::size_t domains() const { return vocab_sizes.size(); }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("model config: " + m); };
    if (d == 0) fail("d must be >= 1");
    if (d_c == 0) fail("d_c must be >= 1");
    if (heads == 0) fail("heads must be >= 1");
    if (layers == 0) fail("layers must be >= 1");
    if (n_max == 0) fail("n_max must be >= 1");
    if (latent_width() % 2 != 0) fail("heads * d_c must be even for rotary encoding");
    if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must be in [0, 1)");
    if (!(rope_base > 1.0)) fail("rope_base must be > 1");
    if (!(norm_eps > 0.0)) fail("norm_eps must be > 0");
    if (ssm.expand == 0 || ssm.state == 0 || ssm.conv_width == 0) {
      fail("ssm expand, state and conv_width must be >= 1");
    }
    if (vocab_sizes.empty()) fail("at least one domain vocabulary is required");
    for (std::size_t v : vocab_sizes) {
      if (v == 0) fail("empty domain vocabulary");
    }
  }
};

}  // namespace hydra
