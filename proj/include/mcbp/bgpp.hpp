#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mcbp/bitslice.hpp"
#include "mcbp/matrix.hpp"

namespace mcbp {

// Progressive bit-grained top-k prediction.
//
// The query is truncated to a few bits once. Keys live in sign-magnitude bit
// planes; round r fetches the r-th magnitude plane from the MSB (round 1 also
// fetches the sign plane) for the keys still alive, adds its shifted
// contribution to each key's partial score, and drops keys that fall more
// than alpha_r * radius below the best estimate. Scores are compared in the
// dequantized logit domain.

enum class BoundMode {
  kEstimate,  // keep i iff l_i >= theta
  kUpper,     // keep i iff l_i + U_r >= theta, U_r = largest possible remaining contribution
};

const char* to_string(BoundMode mode) noexcept;
BoundMode parse_bound_mode(const std::string& name);

struct PredictorConfig {
  int rounds = 4;
  std::vector<double> alpha{0.55};  // per round; the last entry repeats
  double radius = 3.0;
  int q_bits = 4;
  BoundMode bound_mode = BoundMode::kUpper;
  double scale_q = 1.0;  // dequantization step of the 8-bit query
  double scale_k = 1.0;
  std::size_t dim = 64;  // head dimension, for 1/sqrt(d)

  double alpha_at(int round) const;
  void validate(int key_bit_width) const;

  /// Configuration with an infinite radius: nothing is ever filtered.
  static PredictorConfig keep_all(std::size_t dim, double scale_q = 1.0, double scale_k = 1.0);
};

void to_json(nlohmann::json& j, const PredictorConfig& c);
void from_json(const nlohmann::json& j, PredictorConfig& c);

struct Traffic {
  std::uint64_t k_bits_fetched = 0;  // magnitude-plane bits
  std::uint64_t sign_bits_fetched = 0;
  std::uint64_t q_bits_fetched = 0;

  std::uint64_t key_bits() const noexcept { return k_bits_fetched + sign_bits_fetched; }
  Traffic& operator+=(const Traffic& o) noexcept {
    k_bits_fetched += o.k_bits_fetched;
    sign_bits_fetched += o.sign_bits_fetched;
    q_bits_fetched += o.q_bits_fetched;
    return *this;
  }
  friend bool operator==(const Traffic&, const Traffic&) = default;
};

void to_json(nlohmann::json& j, const Traffic& t);

struct PredictionState {
  std::vector<std::int32_t> q_hat;     // signed truncated query
  std::vector<std::uint32_t> survivors;  // ascending key indices
  std::vector<std::int64_t> partial;     // integer-domain partial score per survivor
  int round = 0;
  Traffic traffic;
  std::uint64_t gated_rounds = 0;
  std::vector<std::size_t> per_round_survivors;  // after each filter
};

struct RoundThreshold {
  double theta = 0.0;
  double max_estimate = 0.0;
  double min_estimate = 0.0;
};

struct PredictionResult {
  std::vector<std::uint32_t> selected;
  std::vector<std::size_t> per_round_survivor_counts;
  Traffic traffic;
  std::uint64_t gated_rounds = 0;
  std::vector<double> estimated_scores;  // logit-domain estimate for each selected key
};

void to_json(nlohmann::json& j, const PredictionResult& r);

/// Keeps the sign and the top (q_bits - 1) bits of the 7-bit magnitude.
/// The returned values are the shifted-down magnitudes with their signs; the
/// effective value is value * 2^(8 - q_bits).
std::vector<std::int32_t> truncate_query(std::span<const std::int32_t> q, int q_bits);

/// Logit-domain value of one integer partial-score unit.
double logit_unit(const PredictorConfig& cfg);

/// Fresh state over keys [0, num_keys).
PredictionState start_prediction(std::span<const std::int32_t> q, std::size_t num_keys, const PredictorConfig& cfg);

/// Fetches plane (k - r) of every survivor (plus the sign plane when r == 1)
/// and accumulates it.
void round_update(PredictionState& state, const SignMagnitudeTensor& keys, int r);

RoundThreshold threshold(const PredictionState& state, const PredictorConfig& cfg);

/// Largest logit contribution the planes not yet fetched after round r can add.
double remaining_bound(const PredictionState& state, const PredictorConfig& cfg, int key_bit_width);

void filter_round(PredictionState& state, const RoundThreshold& th, const PredictorConfig& cfg,
                  int key_bit_width = 8);

PredictionResult predict(std::span<const std::int32_t> q, const SignMagnitudeTensor& keys, const PredictorConfig& cfg);
PredictionResult predict(std::span<const std::int32_t> q, const SignMagnitudeTensor& keys, std::size_t num_keys,
                         const PredictorConfig& cfg);

/// Indices of the k largest q . K_i, ties to the lower index, in ascending
/// index order.
std::vector<std::uint32_t> exact_topk(std::span<const double> q, const RealMatrix& keys, std::size_t k);

/// |selected intersect oracle| / |oracle|.
double recall(std::span<const std::uint32_t> selected, std::span<const std::uint32_t> oracle);

/// Bits a value-level predictor at q_bits precision fetches for num_keys keys.
std::uint64_t value_level_key_bits(std::size_t num_keys, std::size_t dim, int bits = 4);

}  // namespace mcbp
