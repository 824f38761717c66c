#include "mcbp/engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <string>

#include "mcbp/error.hpp"
#include "mcbp/parallel.hpp"
#include "mcbp/rng.hpp"

namespace mcbp {

void LayerConfig::validate() const {
  require(H > 0 && d > 0 && heads > 0 && ffn_mult > 0, "layer dimensions must be positive");
  require(heads * d == H, "heads * d (" + std::to_string(heads * d) + ") must equal H (" + std::to_string(H) + ")");
  require(m >= 1 && m <= kMaxGroupSize, "group size m out of range");
  require(H % static_cast<std::size_t>(m) == 0, "H must be a multiple of m");
  require(tiles.t_m > 0 && tiles.t_m % static_cast<std::size_t>(m) == 0, "t_m must be a positive multiple of m");
  require(tiles.t_k > 0 && tiles.t_n > 0, "tile sizes must be positive");
  require(threshold >= 0.0 && threshold < 1.0, "compression threshold must lie in [0, 1)");
  require(segment_len > 0, "segment length must be positive");
  bgpp.validate(8);
}

void to_json(nlohmann::json& j, const LayerConfig& c) {
  j = nlohmann::json{{"H", c.H},
                     {"d", c.d},
                     {"heads", c.heads},
                     {"ffn_mult", c.ffn_mult},
                     {"m", c.m},
                     {"bgpp", c.bgpp},
                     {"seed", c.seed},
                     {"tiles", {{"t_m", c.tiles.t_m}, {"t_k", c.tiles.t_k}, {"t_n", c.tiles.t_n}}},
                     {"threshold", c.threshold},
                     {"segment_len", c.segment_len}};
}

void from_json(const nlohmann::json& j, LayerConfig& c) {
  static const char* const known[] = {"H", "d", "heads", "ffn_mult", "m", "bgpp", "seed", "tiles", "threshold",
                                      "segment_len", "workers"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(std::begin(known), std::end(known), key) == std::end(known))
      fail(ErrorKind::kInvalidArgument, "unknown layer config key '" + key + "'");
  }
  if (j.contains("H")) j.at("H").get_to(c.H);
  if (j.contains("d")) j.at("d").get_to(c.d);
  if (j.contains("heads")) j.at("heads").get_to(c.heads);
  if (j.contains("ffn_mult")) j.at("ffn_mult").get_to(c.ffn_mult);
  if (j.contains("m")) j.at("m").get_to(c.m);
  if (j.contains("bgpp")) from_json(j.at("bgpp"), c.bgpp);
  if (j.contains("seed")) j.at("seed").get_to(c.seed);
  if (j.contains("tiles")) {
    const auto& t = j.at("tiles");
    if (t.contains("t_m")) t.at("t_m").get_to(c.tiles.t_m);
    if (t.contains("t_k")) t.at("t_k").get_to(c.tiles.t_k);
    if (t.contains("t_n")) t.at("t_n").get_to(c.tiles.t_n);
  }
  if (j.contains("threshold")) j.at("threshold").get_to(c.threshold);
  if (j.contains("segment_len")) j.at("segment_len").get_to(c.segment_len);
  if (j.contains("workers")) j.at("workers").get_to(c.workers);
}

namespace {

Projection make_projection(std::string name, std::size_t rows, std::size_t cols, std::uint64_t seed,
                           const LayerConfig& cfg) {
  Projection p;
  p.name = std::move(name);
  p.weights = calibrate_weights(gen_gaussian_weights(rows, cols, 1.0 / std::sqrt(static_cast<double>(cols)), seed));
  const auto flags = compression_policy(sparsity_stats(p.weights.planes, cfg.m), cfg.threshold);
  p.container = encode_container(p.weights.planes, flags, cfg.m, cfg.segment_len);
  return p;
}

}  // namespace

LayerWeights gen_layer_weights(const LayerConfig& cfg) {
  cfg.validate();
  const std::size_t H = cfg.H, F = cfg.ffn();
  LayerWeights w;
  w.proj[kWq] = make_projection("Wq", H, H, cfg.seed + 1, cfg);
  w.proj[kWk] = make_projection("Wk", H, H, cfg.seed + 2, cfg);
  w.proj[kWv] = make_projection("Wv", H, H, cfg.seed + 3, cfg);
  w.proj[kWo] = make_projection("Wo", H, H, cfg.seed + 4, cfg);
  w.proj[kW1] = make_projection("W1", F, H, cfg.seed + 5, cfg);
  w.proj[kW2] = make_projection("W2", H, F, cfg.seed + 6, cfg);
  return w;
}

RealMatrix gen_hidden_states(std::size_t rows, std::size_t H, std::uint64_t seed) {
  require(rows > 0 && H > 0, "hidden states need a nonzero shape");
  Rng rng(seed);
  RealMatrix x(rows, H);
  for (double& v : x.data()) v = rng.normal();
  return x;
}

StageStats& StageStats::operator+=(const StageStats& o) noexcept {
  ops += o.ops;
  steps += o.steps;
  weight_bits_compressed += o.weight_bits_compressed;
  weight_bits_raw += o.weight_bits_raw;
  kv_prediction_bits += o.kv_prediction_bits;
  kv_formal_bits += o.kv_formal_bits;
  kv_baseline_bits += o.kv_baseline_bits;
  kv_keep_all_bits += o.kv_keep_all_bits;
  keys_considered += o.keys_considered;
  keys_selected += o.keys_selected;
  gated_rounds += o.gated_rounds;
  return *this;
}

void to_json(nlohmann::json& j, const StageStats& s) {
  j = nlohmann::json{{"ops", s.ops},
                     {"steps", s.steps},
                     {"weight_bits_compressed", s.weight_bits_compressed},
                     {"weight_bits_raw", s.weight_bits_raw},
                     {"kv_bits_loaded", s.kv_bits_loaded()},
                     {"kv_prediction_bits", s.kv_prediction_bits},
                     {"kv_formal_bits", s.kv_formal_bits},
                     {"kv_baseline_bits", s.kv_baseline_bits},
                     {"kv_keep_all_bits", s.kv_keep_all_bits},
                     {"keys_considered", s.keys_considered},
                     {"keys_selected", s.keys_selected},
                     {"gated_rounds", s.gated_rounds}};
}

void to_json(nlohmann::json& j, const DiffMetrics& d) {
  j = nlohmann::json{{"max_abs_diff", d.max_abs_diff}, {"mse", d.mse}, {"exact", d.exact}};
}

void to_json(nlohmann::json& j, const RunReport& r) {
  StageStats total = r.prefill;
  total += r.decode;
  j = nlohmann::json{{"prefill", r.prefill}, {"decode", r.decode}, {"total", total}, {"diff", r.diff}};
}

DiffMetrics compare_reference(const RealMatrix& out, const RealMatrix& reference) {
  require(out.rows() == reference.rows() && out.cols() == reference.cols(), "compare_reference: shape mismatch");
  DiffMetrics d;
  double sq = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double e = std::abs(out.data()[i] - reference.data()[i]);
    d.max_abs_diff = std::max(d.max_abs_diff, e);
    sq += e * e;
  }
  d.mse = out.size() ? sq / static_cast<double>(out.size()) : 0.0;
  d.exact = d.max_abs_diff == 0.0;
  return d;
}

namespace {

RealMatrix layer_norm(const RealMatrix& x) {
  constexpr double kEps = 1e-5;
  RealMatrix out(x.rows(), x.cols());
  const double n = static_cast<double>(x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double mean = 0.0;
    for (double v : x.row(r)) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : x.row(r)) var += (v - mean) * (v - mean);
    var /= n;
    const double inv = 1.0 / std::sqrt(var + kEps);
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = (x(r, c) - mean) * inv;
  }
  return out;
}

double gelu(double v) { return 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2)); }

struct LinearOut {
  IntMatrix q;  // tokens x out, symmetric int8
  double delta = 1.0;

  double real(std::size_t r, std::size_t c) const { return delta * q(r, c); }
};

// Everything that differs between the two paths.
struct Backend {
  ExecutionPath path;
  const LayerConfig& cfg;
  std::array<SignMagnitudeTensor, kProjectionCount> loaded;  // accelerated path only
};

LinearOut linear(const Projection& p, std::size_t id, const RealMatrix& act, std::optional<double> fixed_delta,
                 const Backend& be, StageStats& stats) {
  const TensorQuant xq = calibrate_activations(act);
  const IntMatrix x_t = quantize_activations(act, xq).transposed();
  IntMatrix acc;
  if (be.path == ExecutionPath::kAccelerated) {
    acc = gemm_tiled(be.loaded[id], x_t, be.cfg.tiles, be.cfg.m, stats.ops, be.cfg.workers);
  } else {
    acc = oracle_gemm(p.weights.values, x_t);
  }

  QuantParams qp;
  qp.delta_w = p.weights.delta;
  qp.delta_x = xq.delta;
  qp.zero_x = xq.zero;
  LinearOut out;
  if (fixed_delta) {
    out.delta = *fixed_delta;
  } else {
    // Output step from the real-valued range of this product.
    const FusedAffine unit = fuse(qp, p.weights.values);
    double max_abs = 0.0;
    for (std::size_t c = 0; c < acc.rows(); ++c)
      for (std::size_t n = 0; n < acc.cols(); ++n)
        max_abs = std::max(max_abs, std::abs(unit.scale[c] * static_cast<double>(acc(c, n)) + unit.bias[c]));
    out.delta = max_abs > 0.0 ? max_abs / 127.0 : 1.0;
  }
  qp.delta_y = out.delta;
  out.q = apply_fused(acc, fuse(qp, p.weights.values)).transposed();
  return out;
}

RealMatrix dequantize(const LinearOut& y) {
  RealMatrix out(y.q.rows(), y.q.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = y.delta * y.q.data()[i];
  return out;
}

// Attention for one head over queries whose causal prefix ends at
// base + i + 1. Writes the head's slice of `out`.
StageStats attend_head(std::size_t h, const LinearOut& q, std::size_t base, const KvCache& cache,
                       const Backend& be, RealMatrix& out) {
  const LayerConfig& cfg = be.cfg;
  const std::size_t d = cfg.d;
  const SignMagnitudeTensor& keys = cache.k[h];
  const std::vector<std::int32_t>& vals = cache.v[h];
  PredictorConfig pc = cfg.bgpp;
  pc.scale_q = q.delta;
  pc.scale_k = cache.delta_k;
  pc.dim = d;
  const double score_scale = q.delta * cache.delta_k / std::sqrt(static_cast<double>(d));

  StageStats st;
  std::vector<std::int32_t> qrow(d);
  std::vector<std::uint32_t> selected;
  std::vector<double> prob;
  for (std::size_t i = 0; i < q.q.rows(); ++i) {
    const std::size_t num_keys = base + i + 1;
    for (std::size_t c = 0; c < d; ++c) qrow[c] = q.q(i, h * d + c);

    if (be.path == ExecutionPath::kAccelerated) {
      PredictionResult pr = predict(qrow, keys, num_keys, pc);
      selected = std::move(pr.selected);
      st.kv_prediction_bits += pr.traffic.key_bits();
      st.gated_rounds += pr.gated_rounds;
    } else {
      selected.resize(num_keys);
      for (std::size_t j = 0; j < num_keys; ++j) selected[j] = static_cast<std::uint32_t>(j);
    }
    const std::uint64_t row_bits = 2 * 8 * static_cast<std::uint64_t>(d);
    st.keys_considered += num_keys;
    st.keys_selected += selected.size();
    st.kv_formal_bits += selected.size() * row_bits;
    st.kv_baseline_bits += value_level_key_bits(num_keys, d) + selected.size() * row_bits;
    st.kv_keep_all_bits += num_keys * row_bits;

    // Softmax over the selected keys in ascending index order.
    prob.resize(selected.size());
    double max_score = -std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < selected.size(); ++s) {
      std::int64_t dot = 0;
      for (std::size_t c = 0; c < d; ++c) dot += static_cast<std::int64_t>(qrow[c]) * keys.value(selected[s], c);
      prob[s] = static_cast<double>(dot) * score_scale;
      max_score = std::max(max_score, prob[s]);
    }
    double sum = 0.0;
    for (double& p : prob) {
      p = std::exp(p - max_score);
      sum += p;
    }
    // P is requantized to 8 bits (step 1/255) for the integer PV product.
    std::vector<std::int64_t> acc(d, 0);
    for (std::size_t s = 0; s < selected.size(); ++s) {
      const std::int64_t pq = round_half_away(prob[s] / sum * 255.0);
      const std::int32_t* vrow = vals.data() + static_cast<std::size_t>(selected[s]) * d;
      for (std::size_t c = 0; c < d; ++c) acc[c] += pq * vrow[c];
    }
    for (std::size_t c = 0; c < d; ++c) out(i, h * d + c) = static_cast<double>(acc[c]) * cache.delta_v / 255.0;
  }
  return st;
}

struct ForwardOut {
  RealMatrix hidden;
  StageStats stats;
};

ForwardOut forward(const RealMatrix& x, KvCache& cache, bool prefill, const LayerWeights& weights,
                   const LayerConfig& cfg, ExecutionPath path) {
  cfg.validate();
  require(x.rows() >= 1, "at least one token is required");
  require(x.cols() == cfg.H, "tokens have " + std::to_string(x.cols()) + " features, expected H = " +
                                 std::to_string(cfg.H));
  Backend be{path, cfg, {}};
  ForwardOut fo;
  StageStats& stats = fo.stats;
  stats.steps = prefill ? 1 : x.rows();
  for (std::size_t id = 0; id < kProjectionCount; ++id) {
    const Projection& p = weights.proj[id];
    const auto& planes = p.weights.planes;
    stats.weight_bits_compressed += p.container.size() * std::uint64_t{8};
    stats.weight_bits_raw += planes.rows() * planes.cols() * static_cast<std::uint64_t>(planes.bit_width());
    if (path == ExecutionPath::kAccelerated) be.loaded[id] = parse_container(p.container).tensor;
  }

  const RealMatrix h1 = layer_norm(x);
  const LinearOut q = linear(weights.proj[kWq], kWq, h1, std::nullopt, be, stats);
  std::optional<double> fixed_k, fixed_v;
  if (!prefill) {
    fixed_k = cache.delta_k;
    fixed_v = cache.delta_v;
  }
  const LinearOut k = linear(weights.proj[kWk], kWk, h1, fixed_k, be, stats);
  const LinearOut v = linear(weights.proj[kWv], kWv, h1, fixed_v, be, stats);

  const std::size_t base = cache.tokens;
  if (prefill) {
    cache = KvCache{};
    cache.k.assign(cfg.heads, SignMagnitudeTensor(0, cfg.d));
    cache.v.assign(cfg.heads, {});
    cache.delta_k = k.delta;
    cache.delta_v = v.delta;
  }
  require(cache.k.size() == cfg.heads, "KV cache does not match the head count");
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      const auto krow = k.q.row(r).subspan(h * cfg.d, cfg.d);
      const auto vrow = v.q.row(r).subspan(h * cfg.d, cfg.d);
      cache.k[h].append_row(krow);
      cache.v[h].insert(cache.v[h].end(), vrow.begin(), vrow.end());
    }
    ++cache.tokens;
  }

  RealMatrix attn(x.rows(), cfg.H);
  std::vector<StageStats> head_stats(cfg.heads);
  parallel_for(cfg.heads, cfg.workers,
               [&](std::size_t h) { head_stats[h] = attend_head(h, q, base, cache, be, attn); });
  for (const auto& hs : head_stats) stats += hs;

  const LinearOut o = linear(weights.proj[kWo], kWo, attn, std::nullopt, be, stats);
  RealMatrix mid(x.rows(), cfg.H);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < cfg.H; ++c) mid(r, c) = x(r, c) + o.real(r, c);

  const RealMatrix h2 = layer_norm(mid);
  RealMatrix up = dequantize(linear(weights.proj[kW1], kW1, h2, std::nullopt, be, stats));
  for (double& val : up.data()) val = gelu(val);
  const LinearOut down = linear(weights.proj[kW2], kW2, up, std::nullopt, be, stats);
  fo.hidden = RealMatrix(x.rows(), cfg.H);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < cfg.H; ++c) fo.hidden(r, c) = mid(r, c) + down.real(r, c);
  return fo;
}

}  // namespace

PrefillResult run_prefill(const RealMatrix& tokens, const LayerWeights& weights, const LayerConfig& cfg,
                          ExecutionPath path) {
  PrefillResult res;
  ForwardOut fo = forward(tokens, res.cache, true, weights, cfg, path);
  res.hidden = std::move(fo.hidden);
  res.stats = fo.stats;
  return res;
}

DecodeResult run_decode_step(KvCache& cache, std::span<const double> token, const LayerWeights& weights,
                             const LayerConfig& cfg, ExecutionPath path) {
  require(cache.tokens > 0, "decode needs a nonempty KV cache");
  RealMatrix x(1, token.size());
  std::copy(token.begin(), token.end(), x.data().begin());
  ForwardOut fo = forward(x, cache, false, weights, cfg, path);
  DecodeResult res;
  res.hidden.assign(fo.hidden.data().begin(), fo.hidden.data().end());
  res.stats = fo.stats;
  return res;
}

LayerRun run_layer(const RealMatrix& prompt, const RealMatrix& decode_tokens, const LayerWeights& weights,
                   const LayerConfig& cfg) {
  LayerRun run;
  RealMatrix ref_prefill, ref_decode;
  for (ExecutionPath path : {ExecutionPath::kAccelerated, ExecutionPath::kReference}) {
    PrefillResult pre = run_prefill(prompt, weights, cfg, path);
    RealMatrix dec(decode_tokens.rows(), cfg.H);
    StageStats dstats;
    for (std::size_t t = 0; t < decode_tokens.rows(); ++t) {
      DecodeResult step = run_decode_step(pre.cache, decode_tokens.row(t), weights, cfg, path);
      std::copy(step.hidden.begin(), step.hidden.end(), dec.row(t).begin());
      dstats += step.stats;
    }
    if (path == ExecutionPath::kAccelerated) {
      run.prefill_out = std::move(pre.hidden);
      run.decode_out = std::move(dec);
      run.report.prefill = pre.stats;
      run.report.decode = dstats;
    } else {
      ref_prefill = std::move(pre.hidden);
      ref_decode = std::move(dec);
    }
  }
  const DiffMetrics dp = compare_reference(run.prefill_out, ref_prefill);
  DiffMetrics diff = dp;
  if (decode_tokens.rows() > 0) {
    const DiffMetrics dd = compare_reference(run.decode_out, ref_decode);
    const double n_p = static_cast<double>(run.prefill_out.size()), n_d = static_cast<double>(run.decode_out.size());
    diff.max_abs_diff = std::max(dp.max_abs_diff, dd.max_abs_diff);
    diff.mse = (dp.mse * n_p + dd.mse * n_d) / (n_p + n_d);
    diff.exact = dp.exact && dd.exact;
  }
  run.report.diff = diff;
  return run;
}

}  // namespace mcbp
