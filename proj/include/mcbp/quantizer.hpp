#pragma once

#include <cstdint>
#include <vector>

#include "json.hpp"
#include "mcbp/bitslice.hpp"
#include "mcbp/matrix.hpp"

namespace mcbp {

// All rounding in the quantizer is round-half-away-from-zero.

struct QuantParams {
  std::vector<double> delta_w;  // one per output channel
  double delta_x = 1.0;
  std::int32_t zero_x = 0;
  double delta_y = 1.0;
  std::int32_t zero_y = 0;

  /// Throws invalid-argument unless every delta is positive and finite and
  /// the zero points lie in their tensors' integer ranges.
  void validate() const;
};

void to_json(nlohmann::json& j, const QuantParams& p);
void from_json(const nlohmann::json& j, QuantParams& p);

/// Y_q = scale (.) (W_q X_q) + bias, per output channel.
struct FusedAffine {
  std::vector<double> scale;
  std::vector<double> bias;
};

struct QuantizedWeights {
  IntMatrix values;  // in [-127, 127]
  SignMagnitudeTensor planes;
  std::vector<double> delta;
};

/// Asymmetric (delta, zero) or symmetric (zero == 0) per-tensor quantizer.
struct TensorQuant {
  double delta = 1.0;
  std::int32_t zero = 0;
};

std::int32_t round_half_away(double v) noexcept;

/// Per-channel (per-row) symmetric INT8 weights. An all-zero channel gets
/// delta 1.
QuantizedWeights calibrate_weights(const RealMatrix& w);

/// Per-tensor asymmetric UINT8 activation parameters from min/max.
TensorQuant calibrate_activations(const RealMatrix& samples);
IntMatrix quantize_activations(const RealMatrix& x, TensorQuant q);

/// Per-tensor symmetric signed parameters (Q/K/V and output tensors).
TensorQuant calibrate_symmetric(const RealMatrix& samples);
IntMatrix quantize_symmetric(const RealMatrix& x, TensorQuant q);

/// clamp(round(y / delta_y) + zero_y, -127, 127).
IntMatrix quantize_output(const RealMatrix& y, double delta_y, std::int32_t zero_y);

FusedAffine fuse(const QuantParams& params, const IntMatrix& w_q);

/// out[c, n] = clamp(round(scale_c * acc[c, n] + bias_c), -127, 127).
IntMatrix apply_fused(const IntMatrix& acc, const FusedAffine& fa);

}  // namespace mcbp
