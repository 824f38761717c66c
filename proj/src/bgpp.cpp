#include "mcbp/bgpp.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "mcbp/error.hpp"

namespace mcbp {

const char* to_string(BoundMode mode) noexcept { return mode == BoundMode::kEstimate ? "estimate" : "upper"; }

BoundMode parse_bound_mode(const std::string& name) {
  if (name == "estimate") return BoundMode::kEstimate;
  if (name == "upper") return BoundMode::kUpper;
  fail(ErrorKind::kInvalidArgument, "unknown bound mode '" + name + "' (expected estimate or upper)");
}

double PredictorConfig::alpha_at(int round) const {
  const auto idx = std::min(static_cast<std::size_t>(std::max(round, 1) - 1), alpha.size() - 1);
  return alpha[idx];
}

void PredictorConfig::validate(int key_bit_width) const {
  require(rounds >= 1 && rounds <= key_bit_width - 1,
          "rounds must be in [1, " + std::to_string(key_bit_width - 1) + "], got " + std::to_string(rounds));
  require(!alpha.empty(), "alpha schedule is empty");
  for (double a : alpha) require(a >= 0.0 && a <= 1.0, "alpha must lie in [0, 1]");
  require(radius >= 0.0 && !std::isnan(radius), "radius must be nonnegative");
  require(q_bits >= 2 && q_bits <= 8, "q_bits must be in [2, 8]");
  require(scale_q > 0.0 && scale_k > 0.0, "dequantization scales must be positive");
  require(dim > 0, "head dimension must be positive");
}

PredictorConfig PredictorConfig::keep_all(std::size_t dim, double scale_q, double scale_k) {
  PredictorConfig cfg;
  cfg.alpha = {1.0};
  cfg.radius = std::numeric_limits<double>::infinity();
  cfg.dim = dim;
  cfg.scale_q = scale_q;
  cfg.scale_k = scale_k;
  return cfg;
}

void to_json(nlohmann::json& j, const PredictorConfig& c) {
  j = nlohmann::json{{"rounds", c.rounds},
                     {"alpha", c.alpha},
                     {"q_bits", c.q_bits},
                     {"bound_mode", to_string(c.bound_mode)}};
  if (std::isinf(c.radius))
    j["radius"] = "inf";
  else
    j["radius"] = c.radius;
}

void from_json(const nlohmann::json& j, PredictorConfig& c) {
  if (j.contains("rounds")) j.at("rounds").get_to(c.rounds);
  if (j.contains("alpha")) {
    const auto& a = j.at("alpha");
    c.alpha = a.is_array() ? a.get<std::vector<double>>() : std::vector<double>{a.get<double>()};
  }
  if (j.contains("radius")) {
    const auto& r = j.at("radius");
    c.radius = r.is_string() && r.get<std::string>() == "inf" ? std::numeric_limits<double>::infinity()
                                                              : r.get<double>();
  }
  if (j.contains("q_bits")) j.at("q_bits").get_to(c.q_bits);
  if (j.contains("bound_mode")) c.bound_mode = parse_bound_mode(j.at("bound_mode").get<std::string>());
}

void to_json(nlohmann::json& j, const Traffic& t) {
  j = nlohmann::json{{"k_bits_fetched", t.k_bits_fetched},
                     {"sign_bits_fetched", t.sign_bits_fetched},
                     {"q_bits_fetched", t.q_bits_fetched}};
}

void to_json(nlohmann::json& j, const PredictionResult& r) {
  j = nlohmann::json{{"selected", r.selected},
                     {"per_round", r.per_round_survivor_counts},
                     {"traffic", r.traffic},
                     {"gated_rounds", r.gated_rounds}};
}

std::vector<std::int32_t> truncate_query(std::span<const std::int32_t> q, int q_bits) {
  require(q_bits >= 2 && q_bits <= 8, "q_bits must be in [2, 8]");
  const int shift = 8 - q_bits;
  std::vector<std::int32_t> out(q.size());
  for (std::size_t j = 0; j < q.size(); ++j) {
    const std::int32_t mag = std::min(std::abs(q[j]), 127) >> shift;
    out[j] = q[j] < 0 ? -mag : mag;
  }
  return out;
}

double logit_unit(const PredictorConfig& cfg) {
  return cfg.scale_q * std::ldexp(1.0, 8 - cfg.q_bits) * cfg.scale_k / std::sqrt(static_cast<double>(cfg.dim));
}

PredictionState start_prediction(std::span<const std::int32_t> q, std::size_t num_keys, const PredictorConfig& cfg) {
  PredictionState st;
  st.q_hat = truncate_query(q, cfg.q_bits);
  st.survivors.resize(num_keys);
  std::iota(st.survivors.begin(), st.survivors.end(), 0u);
  st.partial.assign(num_keys, 0);
  st.traffic.q_bits_fetched = q.size() * static_cast<std::uint64_t>(cfg.q_bits);
  return st;
}

void round_update(PredictionState& state, const SignMagnitudeTensor& keys, int r) {
  const int kb = keys.bit_width();
  require(r == state.round + 1, "rounds must run in order: expected round " + std::to_string(state.round + 1));
  require(r >= 1 && r <= kb - 1, "round " + std::to_string(r) + " exceeds the " + std::to_string(kb - 1) +
                                      " magnitude planes of K");
  require(keys.cols() == state.q_hat.size(), "query and key dimensions differ");
  const BitMatrix& plane = keys.plane(kb - r);
  const BitMatrix& sign = keys.sign_plane();
  const std::int64_t weight = std::int64_t{1} << (kb - 1 - r);
  const std::size_t d = keys.cols();
  for (std::size_t s = 0; s < state.survivors.size(); ++s) {
    const std::size_t i = state.survivors[s];
    require(i < keys.rows(), "survivor index beyond the key cache");
    const auto bits = plane.row_words(i);
    const auto signs = sign.row_words(i);
    std::int64_t sum = 0;
    for (std::size_t w = 0; w < bits.size(); ++w) {
      for (std::uint64_t set = bits[w]; set; set &= set - 1) {
        const int b = std::countr_zero(set);
        const std::size_t j = w * 64 + static_cast<std::size_t>(b);
        const std::int64_t qj = state.q_hat[j];
        sum += ((signs[w] >> b) & 1u) ? -qj : qj;
      }
    }
    state.partial[s] += weight * sum;
  }
  state.traffic.k_bits_fetched += state.survivors.size() * d;
  if (r == 1) state.traffic.sign_bits_fetched += state.survivors.size() * d;
  state.round = r;
}

RoundThreshold threshold(const PredictionState& state, const PredictorConfig& cfg) {
  if (state.survivors.empty()) fail(ErrorKind::kInvalidState, "threshold over an empty survivor set");
  const double unit = logit_unit(cfg);
  const auto [lo, hi] = std::minmax_element(state.partial.begin(), state.partial.end());
  RoundThreshold th;
  th.max_estimate = static_cast<double>(*hi) * unit;
  th.min_estimate = static_cast<double>(*lo) * unit;
  th.theta = th.max_estimate - cfg.alpha_at(state.round) * cfg.radius;
  return th;
}

double remaining_bound(const PredictionState& state, const PredictorConfig& cfg, int key_bit_width) {
  std::int64_t q_abs = 0;
  for (std::int32_t v : state.q_hat) q_abs += std::abs(v);
  const std::int64_t rest = (std::int64_t{1} << (key_bit_width - 1 - state.round)) - 1;
  return static_cast<double>(q_abs * rest) * logit_unit(cfg);
}

void filter_round(PredictionState& state, const RoundThreshold& th, const PredictorConfig& cfg, int key_bit_width) {
  const double unit = logit_unit(cfg);
  const double slack = cfg.bound_mode == BoundMode::kUpper ? remaining_bound(state, cfg, key_bit_width) : 0.0;
  if (th.theta <= th.min_estimate + slack) {
    // Everyone would pass: the compare pass is skipped.
    ++state.gated_rounds;
  } else {
    std::size_t kept = 0;
    for (std::size_t s = 0; s < state.survivors.size(); ++s) {
      if (static_cast<double>(state.partial[s]) * unit + slack >= th.theta) {
        state.survivors[kept] = state.survivors[s];
        state.partial[kept] = state.partial[s];
        ++kept;
      }
    }
    state.survivors.resize(kept);
    state.partial.resize(kept);
  }
  state.per_round_survivors.push_back(state.survivors.size());
}

PredictionResult predict(std::span<const std::int32_t> q, const SignMagnitudeTensor& keys, const PredictorConfig& cfg) {
  return predict(q, keys, keys.rows(), cfg);
}

PredictionResult predict(std::span<const std::int32_t> q, const SignMagnitudeTensor& keys, std::size_t num_keys,
                         const PredictorConfig& cfg) {
  cfg.validate(keys.bit_width());
  require(q.size() == keys.cols(), "query has " + std::to_string(q.size()) + " dims, keys have " +
                                       std::to_string(keys.cols()));
  require(num_keys >= 1 && num_keys <= keys.rows(), "num_keys out of range");
  PredictionState st = start_prediction(q, num_keys, cfg);
  for (int r = 1; r <= cfg.rounds; ++r) {
    round_update(st, keys, r);
    filter_round(st, threshold(st, cfg), cfg, keys.bit_width());
  }
  PredictionResult res;
  res.selected = st.survivors;
  res.per_round_survivor_counts = st.per_round_survivors;
  res.traffic = st.traffic;
  res.gated_rounds = st.gated_rounds;
  const double unit = logit_unit(cfg);
  for (std::int64_t p : st.partial) res.estimated_scores.push_back(static_cast<double>(p) * unit);
  return res;
}

std::vector<std::uint32_t> exact_topk(std::span<const double> q, const RealMatrix& keys, std::size_t k) {
  require(q.size() == keys.cols(), "exact_topk: dimension mismatch");
  require(k <= keys.rows(), "exact_topk: k exceeds the number of keys");
  std::vector<double> score(keys.rows(), 0.0);
  for (std::size_t i = 0; i < keys.rows(); ++i)
    for (std::size_t j = 0; j < q.size(); ++j) score[i] += q[j] * keys(i, j);
  std::vector<std::uint32_t> idx(keys.rows());
  std::iota(idx.begin(), idx.end(), 0u);
  std::stable_sort(idx.begin(), idx.end(), [&](std::uint32_t a, std::uint32_t b) { return score[a] > score[b]; });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

double recall(std::span<const std::uint32_t> selected, std::span<const std::uint32_t> oracle) {
  require(!selected.empty() && !oracle.empty(), "recall needs nonempty sets");
  std::vector<std::uint32_t> a(selected.begin(), selected.end()), b(oracle.begin(), oracle.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::vector<std::uint32_t> common;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(common));
  return static_cast<double>(common.size()) / static_cast<double>(b.size());
}

std::uint64_t value_level_key_bits(std::size_t num_keys, std::size_t dim, int bits) {
  return static_cast<std::uint64_t>(num_keys) * dim * static_cast<std::uint64_t>(bits);
}

}  // namespace mcbp
