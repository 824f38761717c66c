#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mcbp/bgpp.hpp"
#include "mcbp/brcr.hpp"
#include "mcbp/bstc.hpp"
#include "mcbp/quantizer.hpp"

namespace mcbp {

// A single pre-LN decoder layer:
//   h = x + Wo * attn(LN(x)),  out = h + W2 * gelu(W1 * LN(h))
// Projections run as INT8 weights times UINT8 activations. Attention keys
// are chosen by the bit-grained predictor and softmax is taken over the
// chosen keys only. The reference path uses dense integer products and all
// causal keys; everything else is shared, so the two agree bit for bit when
// the predictor keeps every key.

struct LayerConfig {
  std::size_t H = 256;
  std::size_t d = 64;
  std::size_t heads = 4;
  std::size_t ffn_mult = 4;
  int m = 4;
  PredictorConfig bgpp;  // scale_q, scale_k and dim are filled in per call
  std::uint64_t seed = 42;
  TileConfig tiles;
  double threshold = kDefaultCompressionThreshold;
  std::size_t segment_len = kDefaultSegmentLen;
  unsigned workers = 1;

  std::size_t ffn() const noexcept { return ffn_mult * H; }
  void validate() const;
};

void to_json(nlohmann::json& j, const LayerConfig& c);
void from_json(const nlohmann::json& j, LayerConfig& c);

struct Projection {
  std::string name;
  QuantizedWeights weights;
  std::vector<std::uint8_t> container;  // BSTC file image of weights.planes
};

enum ProjectionId : std::size_t { kWq, kWk, kWv, kWo, kW1, kW2, kProjectionCount };

struct LayerWeights {
  std::array<Projection, kProjectionCount> proj;
};

/// Gaussian weights with std 1/sqrt(fan_in), quantized per channel and
/// packed into containers.
LayerWeights gen_layer_weights(const LayerConfig& cfg);

/// Standard-normal hidden states.
RealMatrix gen_hidden_states(std::size_t rows, std::size_t H, std::uint64_t seed);

struct KvCache {
  std::vector<SignMagnitudeTensor> k;         // one per head, tokens x d
  std::vector<std::vector<std::int32_t>> v;  // one per head, row-major tokens x d
  double delta_k = 1.0;
  double delta_v = 1.0;
  std::size_t tokens = 0;
};

struct StageStats {
  OpCounters ops;
  std::uint64_t steps = 0;
  std::uint64_t weight_bits_compressed = 0;  // container bytes read
  std::uint64_t weight_bits_raw = 0;         // the same weights at k bits each
  std::uint64_t kv_prediction_bits = 0;      // K bits fetched by the predictor
  std::uint64_t kv_formal_bits = 0;          // full K and V rows of the selected keys
  std::uint64_t kv_baseline_bits = 0;        // 4-bit value-level prediction plus the same formal loads
  std::uint64_t kv_keep_all_bits = 0;        // every causal K and V row at 8 bits
  std::uint64_t keys_considered = 0;
  std::uint64_t keys_selected = 0;
  std::uint64_t gated_rounds = 0;

  std::uint64_t kv_bits_loaded() const noexcept { return kv_prediction_bits + kv_formal_bits; }
  StageStats& operator+=(const StageStats& o) noexcept;
  friend bool operator==(const StageStats&, const StageStats&) = default;
};

void to_json(nlohmann::json& j, const StageStats& s);

struct DiffMetrics {
  double max_abs_diff = 0.0;
  double mse = 0.0;
  bool exact = true;
  friend bool operator==(const DiffMetrics&, const DiffMetrics&) = default;
};

void to_json(nlohmann::json& j, const DiffMetrics& d);

DiffMetrics compare_reference(const RealMatrix& out, const RealMatrix& reference);

struct RunReport {
  StageStats prefill;
  StageStats decode;
  DiffMetrics diff;
  friend bool operator==(const RunReport&, const RunReport&) = default;
};

void to_json(nlohmann::json& j, const RunReport& r);

enum class ExecutionPath { kAccelerated, kReference };

struct PrefillResult {
  RealMatrix hidden;
  KvCache cache;
  StageStats stats;
};

struct DecodeResult {
  std::vector<double> hidden;
  StageStats stats;
};

PrefillResult run_prefill(const RealMatrix& tokens, const LayerWeights& weights, const LayerConfig& cfg,
                          ExecutionPath path = ExecutionPath::kAccelerated);

/// Appends the token's K/V row to the cache, then attends over every cached
/// row. K/V reuse the prefill scales.
DecodeResult run_decode_step(KvCache& cache, std::span<const double> token, const LayerWeights& weights,
                             const LayerConfig& cfg, ExecutionPath path = ExecutionPath::kAccelerated);

struct LayerRun {
  RealMatrix prefill_out;  // S x H
  RealMatrix decode_out;   // T x H, one row per decode step
  RunReport report;
  friend bool operator==(const LayerRun&, const LayerRun&) = default;
};

/// Prefill on `prompt`, then one decode step per row of `decode_tokens`, on
/// both paths; the report's diff compares the two.
LayerRun run_layer(const RealMatrix& prompt, const RealMatrix& decode_tokens, const LayerWeights& weights,
                   const LayerConfig& cfg);

}  // namespace mcbp
