#include "mcbp/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "mcbp/error.hpp"

namespace mcbp {
namespace {

void require_finite(const RealMatrix& m, const char* what) {
  require(!m.empty(), std::string(what) + ": empty input");
  for (double v : m.data()) {
    if (!std::isfinite(v)) fail(ErrorKind::kInvalidArgument, std::string(what) + ": non-finite input");
  }
}

bool positive_finite(double v) { return v > 0.0 && std::isfinite(v); }

}  // namespace

std::int32_t round_half_away(double v) noexcept {
  const double r = std::round(v);
  if (r >= static_cast<double>(std::numeric_limits<std::int32_t>::max()))
    return std::numeric_limits<std::int32_t>::max();
  if (r <= static_cast<double>(std::numeric_limits<std::int32_t>::min()))
    return std::numeric_limits<std::int32_t>::min();
  return static_cast<std::int32_t>(r);
}

void QuantParams::validate() const {
  for (double d : delta_w) require(positive_finite(d), "delta_w entries must be positive");
  require(positive_finite(delta_x), "delta_x must be positive");
  require(positive_finite(delta_y), "delta_y must be positive");
  require(zero_x >= 0 && zero_x <= 255, "zero_x outside [0, 255]");
  require(zero_y >= -127 && zero_y <= 127, "zero_y outside [-127, 127]");
}

void to_json(nlohmann::json& j, const QuantParams& p) {
  j = nlohmann::json{{"delta_w", p.delta_w},
                     {"delta_x", p.delta_x},
                     {"zero_x", p.zero_x},
                     {"delta_y", p.delta_y},
                     {"zero_y", p.zero_y}};
}

void from_json(const nlohmann::json& j, QuantParams& p) {
  j.at("delta_w").get_to(p.delta_w);
  j.at("delta_x").get_to(p.delta_x);
  j.at("zero_x").get_to(p.zero_x);
  j.at("delta_y").get_to(p.delta_y);
  j.at("zero_y").get_to(p.zero_y);
  p.validate();
}

QuantizedWeights calibrate_weights(const RealMatrix& w) {
  require_finite(w, "calibrate_weights");
  QuantizedWeights q;
  q.values = IntMatrix(w.rows(), w.cols());
  q.delta.resize(w.rows());
  for (std::size_t c = 0; c < w.rows(); ++c) {
    double max_abs = 0.0;
    for (double v : w.row(c)) max_abs = std::max(max_abs, std::abs(v));
    const double delta = max_abs > 0.0 ? max_abs / 127.0 : 1.0;
    q.delta[c] = delta;
    for (std::size_t j = 0; j < w.cols(); ++j)
      q.values(c, j) = std::clamp(round_half_away(w(c, j) / delta), -127, 127);
  }
  q.planes = to_sign_magnitude(q.values, 8);
  return q;
}

TensorQuant calibrate_activations(const RealMatrix& samples) {
  require_finite(samples, "calibrate_activations");
  const auto [lo, hi] = std::minmax_element(samples.data().begin(), samples.data().end());
  if (*hi == *lo) return TensorQuant{1.0, 0};
  TensorQuant q;
  q.delta = (*hi - *lo) / 255.0;
  q.zero = std::clamp(round_half_away(-*lo / q.delta), 0, 255);
  return q;
}

IntMatrix quantize_activations(const RealMatrix& x, TensorQuant q) {
  IntMatrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i)
    out.data()[i] = std::clamp(round_half_away(x.data()[i] / q.delta) + q.zero, 0, 255);
  return out;
}

TensorQuant calibrate_symmetric(const RealMatrix& samples) {
  require_finite(samples, "calibrate_symmetric");
  double max_abs = 0.0;
  for (double v : samples.data()) max_abs = std::max(max_abs, std::abs(v));
  return TensorQuant{max_abs > 0.0 ? max_abs / 127.0 : 1.0, 0};
}

IntMatrix quantize_symmetric(const RealMatrix& x, TensorQuant q) {
  IntMatrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i)
    out.data()[i] = std::clamp(round_half_away(x.data()[i] / q.delta), -127, 127);
  return out;
}

IntMatrix quantize_output(const RealMatrix& y, double delta_y, std::int32_t zero_y) {
  IntMatrix out(y.rows(), y.cols());
  for (std::size_t i = 0; i < y.size(); ++i)
    out.data()[i] = std::clamp(round_half_away(y.data()[i] / delta_y) + zero_y, -127, 127);
  return out;
}

FusedAffine fuse(const QuantParams& params, const IntMatrix& w_q) {
  params.validate();
  require(params.delta_w.size() == w_q.rows(),
          "fuse: delta_w has " + std::to_string(params.delta_w.size()) + " entries for " +
              std::to_string(w_q.rows()) + " channels");
  FusedAffine fa;
  fa.scale.resize(w_q.rows());
  fa.bias.resize(w_q.rows());
  for (std::size_t c = 0; c < w_q.rows(); ++c) {
    std::int64_t row_sum = 0;
    for (std::int32_t v : w_q.row(c)) row_sum += v;
    fa.scale[c] = params.delta_w[c] * params.delta_x / params.delta_y;
    // Z_x * rowsum is formed in exact integer arithmetic before scaling.
    const std::int64_t zero_term = static_cast<std::int64_t>(params.zero_x) * row_sum;
    fa.bias[c] = static_cast<double>(params.zero_y) - fa.scale[c] * static_cast<double>(zero_term);
  }
  return fa;
}

IntMatrix apply_fused(const IntMatrix& acc, const FusedAffine& fa) {
  require(fa.scale.size() == acc.rows() && fa.bias.size() == acc.rows(), "apply_fused: channel count mismatch");
  IntMatrix out(acc.rows(), acc.cols());
  for (std::size_t c = 0; c < acc.rows(); ++c) {
    for (std::size_t n = 0; n < acc.cols(); ++n) {
      const double y = fa.scale[c] * static_cast<double>(acc(c, n)) + fa.bias[c];
      out(c, n) = std::clamp(round_half_away(y), -127, 127);
    }
  }
  return out;
}

}  // namespace mcbp
