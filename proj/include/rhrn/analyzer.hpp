#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "rhrn/architecture.hpp"

namespace rhrn {

// Closed-form cost model over an ArchitectureSpec, for one image:
//   conv params  = Cout*Cin*kh*kw (+Cout with bias)
//   conv MACs    = Cout*Cin*kh*kw * H'*W'
//   BN params    = 4*C, of which gamma/beta (2*C) are trainable
//   resize MACs  = 4 per output element; BN, ReLU and add cost no MACs
// Activations are 4-byte elements of every operator output.
//   activation_bytes          peak of live outputs when executing in order and
//                             freeing each output after its last consumer
//   training_activation_bytes outputs retained for the backward pass: every
//                             taped operator plus the pyramid it reads; a frozen
//                             encoder runs untaped and contributes only its
//                             pyramid levels
//   training_memory_bytes     training activations + all parameters + gradient
//                             and momentum for trainable parameters

struct ModuleCost {
  std::string name;
  std::int64_t params = 0;
  std::int64_t trainable_params = 0;
  std::int64_t macs = 0;
  std::int64_t training_activation_bytes = 0;
};

struct CostReport {
  std::string name;
  Index input_height = 0;
  Index input_width = 0;
  std::int64_t total_params = 0;
  std::int64_t trainable_params = 0;
  std::int64_t frozen_params = 0;  // frozen weights plus normalization statistics
  std::int64_t macs = 0;
  std::int64_t activation_bytes = 0;
  std::int64_t training_activation_bytes = 0;
  std::int64_t param_bytes = 0;
  std::int64_t training_memory_bytes = 0;
  std::vector<ModuleCost> modules;
};

CostReport analyze(const ArchitectureSpec& spec, Index input_height, Index input_width, std::string name = "");

struct CostRatios {
  std::string name_a, name_b;
  double params = 0;
  double trainable_params = 0;
  double macs = 0;
  double activation_bytes = 0;
  double training_activation_bytes = 0;
  double training_memory_bytes = 0;
  // True when b is a variant with fewer decoder blocks in total than a.
  bool variant_blocks_reduced = false;
};

/// Ratios b / a of each quantity.
CostRatios compare(const ArchitectureSpec& a, const ArchitectureSpec& b, Index input_height, Index input_width,
                   std::string name_a = "a", std::string name_b = "b");

nlohmann::json to_json(const CostReport& report);
nlohmann::json to_json(const CostRatios& ratios);

/// Aligned plain-text tables.
std::string format_table(const CostReport& report);
std::string format_table(const CostRatios& ratios);

}  // namespace rhrn
