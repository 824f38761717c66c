#include "cli.hpp"

#include <zlib.h>

#include <charconv>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <limits>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "mcbp/bgpp.hpp"
#include "mcbp/bitslice.hpp"
#include "mcbp/brcr.hpp"
#include "mcbp/bstc.hpp"
#include "mcbp/cost_model.hpp"
#include "mcbp/engine.hpp"
#include "mcbp/error.hpp"
#include "mcbp/matrix_io.hpp"
#include "mcbp/parallel.hpp"
#include "mcbp/quantizer.hpp"
#include "mcbp/rng.hpp"

#ifndef MCBP_VERSION
#define MCBP_VERSION "0.0.0"
#endif

namespace mcbp::cli {

using nlohmann::json;
namespace fs = std::filesystem;

std::vector<int> parse_range(const std::string& text) {
  auto to_int = [&](std::string_view s) {
    int v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty())
      fail(ErrorKind::kInvalidArgument, "bad range '" + text + "' (expected a..b or a single integer)");
    return v;
  };
  const auto dots = text.find("..");
  if (dots == std::string::npos) return {to_int(text)};
  const int lo = to_int(std::string_view(text).substr(0, dots));
  const int hi = to_int(std::string_view(text).substr(dots + 2));
  require(lo <= hi, "empty range '" + text + "'");
  std::vector<int> out;
  for (int v = lo; v <= hi; ++v) out.push_back(v);
  return out;
}

namespace {

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot create '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::kIo, "write to '" + path.string() + "' failed");
}

void write_text(const fs::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::uint32_t crc_of(std::span<const std::uint8_t> bytes) {
  return static_cast<std::uint32_t>(::crc32(0L, bytes.data(), static_cast<uInt>(bytes.size())));
}

std::string hex32(std::uint32_t v) {
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", v);
  return buf;
}

bool is_container(std::span<const std::uint8_t> bytes) {
  return bytes.size() >= 4 && bytes[0] == 'B' && bytes[1] == 'S' && bytes[2] == 'T' && bytes[3] == 'C';
}

// Input files read by a command, with digests for the report.
class Inputs {
 public:
  std::vector<std::uint8_t> read(const std::string& path) {
    auto bytes = read_file(path);
    list_.push_back({{"path", path}, {"bytes", bytes.size()}, {"crc32", hex32(crc_of(bytes))}});
    return bytes;
  }
  const json& list() const { return list_; }

 private:
  json list_ = json::array();
};

RawMatrix parse_raw(std::span<const std::uint8_t> bytes) {
  std::istringstream in(std::string(bytes.begin(), bytes.end()));
  return read_raw_matrix(in);
}

IntMatrix integral_matrix(const RawMatrix& raw, const std::string& what) {
  if (raw.dtype == DType::kInt8) return raw.as_int();
  IntMatrix out(raw.values.rows(), raw.values.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = raw.values.data()[i];
    if (v != std::trunc(v) || std::abs(v) > (1 << 24))
      fail(ErrorKind::kInvalidArgument, what + ": float32 matrix holds a non-integer value; quantize it first");
    out.data()[i] = static_cast<std::int32_t>(v);
  }
  return out;
}

SignMagnitudeTensor load_weights(Inputs& inputs, const std::string& path) {
  const auto bytes = inputs.read(path);
  if (is_container(bytes)) return parse_container(bytes).tensor;
  const RawMatrix raw = parse_raw(bytes);
  if (raw.dtype != DType::kInt8) fail(ErrorKind::kInvalidArgument, path + ": weights must be int8 (run quantize first)");
  return to_sign_magnitude(raw.as_int());
}

json envelope(const std::string& command, std::uint64_t seed, json config, const Inputs& inputs, json result) {
  return json{{"tool", "mcbp"},
              {"version", MCBP_VERSION},
              {"command", command},
              {"seed", seed},
              {"config", std::move(config)},
              {"inputs", inputs.list()},
              {"result", std::move(result)}};
}

void emit(const json& report, const std::string& path, std::ostream& out) {
  if (path.empty())
    out << report.dump(2) << '\n';
  else
    write_text(path, report.dump(2) + "\n");
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> values;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc{} || ptr != item.data() + item.size() || item.empty())
      fail(ErrorKind::kInvalidArgument, "bad number '" + item + "' in list '" + text + "'");
    values.push_back(v);
  }
  require(!values.empty(), "empty list");
  return values;
}

double parse_radius(const std::string& text) {
  if (text == "inf") return std::numeric_limits<double>::infinity();
  const auto v = parse_list(text);
  require(v.size() == 1, "radius takes a single value");
  return v[0];
}

struct Common {
  std::uint64_t seed = 42;
  unsigned workers = default_workers();
  std::string out;
};

// Each command is a small function over its parsed options.

struct GenOpts {
  std::size_t rows = 0, cols = 0;
  double stddev = 1.0;
};

int cmd_gen(const Common& c, const GenOpts& o, std::ostream& out) {
  const RealMatrix w = gen_gaussian_weights(o.rows, o.cols, o.stddev, c.seed);
  save_float32_matrix(c.out, w);
  Inputs none;
  emit(envelope("gen-weights", c.seed, {{"rows", o.rows}, {"cols", o.cols}, {"std", o.stddev}, {"out", c.out}}, none,
                {{"crc32", hex32(crc_of(read_file(c.out)))}}),
       "", out);
  return kExitOk;
}

struct QuantOpts {
  std::string in, params;
  bool activations = false;
};

int cmd_quantize(const Common& c, const QuantOpts& o, std::ostream& out) {
  Inputs inputs;
  const RawMatrix raw = parse_raw(inputs.read(o.in));
  QuantParams p;
  json result;
  if (o.activations) {
    const TensorQuant q = calibrate_activations(raw.values);
    const IntMatrix codes = quantize_activations(raw.values, q);
    RealMatrix as_real(codes.rows(), codes.cols());
    for (std::size_t i = 0; i < codes.size(); ++i) as_real.data()[i] = codes.data()[i];
    save_float32_matrix(c.out, as_real);  // UINT8 codes do not fit the int8 tag
    p.delta_x = q.delta;
    p.zero_x = q.zero;
  } else {
    const QuantizedWeights q = calibrate_weights(raw.values);
    save_int8_matrix(c.out, q.values);
    p.delta_w = q.delta;
    result["sparsity_m4"] = q.values.rows() % 4 == 0 ? json(sparsity_stats(q.planes, 4)) : json(nullptr);
  }
  if (!o.params.empty()) write_text(o.params, json(p).dump(2) + "\n");
  result["params"] = p;
  emit(envelope("quantize", c.seed, {{"in", o.in}, {"out", c.out}, {"activations", o.activations}}, inputs, result),
       "", out);
  return kExitOk;
}

struct CompressOpts {
  std::string in;
  int m = 4;
  double threshold = kDefaultCompressionThreshold;
  std::size_t segment_len = kDefaultSegmentLen;
};

int cmd_compress(const Common& c, const CompressOpts& o, std::ostream& out) {
  Inputs inputs;
  const RawMatrix raw = parse_raw(inputs.read(o.in));
  if (raw.dtype != DType::kInt8) fail(ErrorKind::kInvalidArgument, o.in + ": compress expects an int8 matrix");
  const SignMagnitudeTensor t = to_sign_magnitude(raw.as_int());
  const SparsityReport rep = sparsity_stats(t, o.m);
  const auto flags = compression_policy(rep, o.threshold);
  const auto file = encode_container(t, flags, o.m, o.segment_len);
  write_file(c.out, file);
  const ContainerHeader h = parse_container_header(file);
  const CompressionRatio cr = compression_ratio(h);
  emit(envelope("compress", c.seed,
                {{"in", o.in}, {"out", c.out}, {"m", o.m}, {"threshold", o.threshold}, {"segment_len", o.segment_len}},
                inputs,
                {{"header", h},
                 {"sparsity", rep},
                 {"cr_per_plane", cr.per_plane},
                 {"cr_total", cr.total},
                 {"file_bytes", file.size()},
                 {"crc32", hex32(crc_of(file))}}),
       "", out);
  return kExitOk;
}

int cmd_decompress(const Common& c, const std::string& in, std::ostream& out) {
  Inputs inputs;
  const auto bytes = inputs.read(in);
  const Container ct = parse_container(bytes);
  save_int8_matrix(c.out, from_sign_magnitude(ct.tensor));
  emit(envelope("decompress", c.seed, {{"in", in}, {"out", c.out}}, inputs,
                {{"rows", ct.header.rows}, {"cols", ct.header.cols}, {"crc32", hex32(crc_of(read_file(c.out)))}}),
       "", out);
  return kExitOk;
}

int cmd_sparsity(const Common& c, const std::string& in, int m, const std::string& csv, std::ostream& out) {
  Inputs inputs;
  const SignMagnitudeTensor t = load_weights(inputs, in);
  const SparsityReport rep = sparsity_stats(t, m);
  if (!csv.empty()) {
    std::ostringstream s;
    s << "plane,sr,p0\n";
    for (std::size_t b = 0; b < rep.per_plane_sr.size(); ++b)
      s << b + 1 << ',' << rep.per_plane_sr[b] << ',' << rep.all_zero_column_rate[b] << '\n';
    write_text(csv, s.str());
  }
  json result = rep;
  result["bit_to_value_ratio"] = rep.value_sparsity > 0 ? json(rep.avg_bit_sparsity / rep.value_sparsity) : json(nullptr);
  emit(envelope("sparsity-stats", c.seed, {{"in", in}, {"m", m}}, inputs, result), c.out, out);
  return kExitOk;
}

struct GemmOpts {
  std::string weights, acts;
  int m = 4;
  TileConfig tiles;
  bool verify = false;
};

int cmd_gemm(const Common& c, const GemmOpts& o, std::ostream& out, std::ostream& err) {
  Inputs inputs;
  const SignMagnitudeTensor w = load_weights(inputs, o.weights);
  const IntMatrix x = integral_matrix(parse_raw(inputs.read(o.acts)), o.acts);
  OpCounters counters;
  const IntMatrix y = gemm_tiled(w, x, o.tiles, o.m, counters, c.workers);
  const auto y_bytes = std::span(reinterpret_cast<const std::uint8_t*>(y.data().data()), y.size() * sizeof(std::int32_t));
  json result{{"rows", y.rows()}, {"cols", y.cols()}, {"counters", counters}, {"output_crc32", hex32(crc_of(y_bytes))}};
  int code = kExitOk;
  if (o.verify) {
    const bool exact = oracle_gemm(from_sign_magnitude(w), x) == y;
    result["verified"] = exact;
    if (exact) {
      out << "VERIFIED exact\n";
    } else {
      err << "error: bit-sliced product differs from the dense oracle\n";
      code = kExitDataError;
    }
  }
  emit(envelope("gemm", c.seed,
                {{"weights", o.weights},
                 {"acts", o.acts},
                 {"m", o.m},
                 {"tile_m", o.tiles.t_m},
                 {"tile_k", o.tiles.t_k},
                 {"tile_n", o.tiles.t_n},
                 {"workers", c.workers},
                 {"verify", o.verify}},
                inputs, result),
       c.out, out);
  return code;
}

struct DseOpts {
  std::string weights, m_range = "1..8", csv;
  std::size_t rows = 1024, cols = 1024;
  DseOptions options;
};

int cmd_dse(const Common& c, DseOpts o, std::ostream& out) {
  Inputs inputs;
  SignMagnitudeTensor w;
  if (!o.weights.empty()) {
    w = load_weights(inputs, o.weights);
  } else {
    w = calibrate_weights(gen_gaussian_weights(o.rows, o.cols, 1.0, c.seed)).planes;
  }
  o.options.seed = c.seed;
  o.options.workers = c.workers;
  const DseResult res = dse_sweep(w, parse_range(o.m_range), o.options);
  if (!o.csv.empty()) {
    std::ostringstream s;
    write_dse_csv(s, res);
    write_text(o.csv, s.str());
  }
  json config{{"weights", o.weights},
              {"m", o.m_range},
              {"tile_k", o.options.tiles.t_k},
              {"tile_n", o.options.tiles.t_n},
              {"threshold", o.options.threshold},
              {"segment_len", o.options.segment_len}};
  if (o.weights.empty()) {
    config["rows"] = o.rows;
    config["cols"] = o.cols;
  }
  emit(envelope("dse", c.seed, config, inputs, res), c.out, out);
  return kExitOk;
}

struct PredictOpts {
  std::string keys, query, alpha = "0.55", radius = "3", bound_mode = "upper", sweep, csv;
  std::size_t seq_len = 512, dim = 64, topk = 64;
  int rounds = 4, q_bits = 4;
};

int cmd_predict(const Common& c, const PredictOpts& o, std::ostream& out) {
  Inputs inputs;
  RealMatrix k, q;
  if (!o.keys.empty() || !o.query.empty()) {
    require(!o.keys.empty() && !o.query.empty(), "--keys and --query go together");
    k = parse_raw(inputs.read(o.keys)).values;
    q = parse_raw(inputs.read(o.query)).values;
    require(q.rows() == 1 && q.cols() == k.cols(), "query must be 1 x d with d matching the keys");
  } else {
    Rng rng(c.seed);
    k = RealMatrix(o.seq_len, o.dim);
    q = RealMatrix(1, o.dim);
    for (double& v : k.data()) v = rng.normal();
    for (double& v : q.data()) v = rng.normal();
  }
  const TensorQuant tk = calibrate_symmetric(k), tq = calibrate_symmetric(q);
  const SignMagnitudeTensor kt = to_sign_magnitude(quantize_symmetric(k, tk));
  const IntMatrix qq = quantize_symmetric(q, tq);
  const std::vector<std::int32_t> qv(qq.data().begin(), qq.data().end());
  const std::vector<double> qd(q.data().begin(), q.data().end());
  const auto oracle = exact_topk(qd, k, std::min(o.topk, k.rows()));

  PredictorConfig cfg;
  cfg.rounds = o.rounds;
  cfg.alpha = parse_list(o.alpha);
  cfg.radius = parse_radius(o.radius);
  cfg.q_bits = o.q_bits;
  cfg.bound_mode = parse_bound_mode(o.bound_mode);
  cfg.scale_q = tq.delta;
  cfg.scale_k = tk.delta;
  cfg.dim = k.cols();
  const std::uint64_t baseline = value_level_key_bits(k.rows(), k.cols());

  auto run = [&](const PredictorConfig& pc) {
    const PredictionResult r = predict(qv, kt, pc);
    json j = r;
    j["recall"] = recall(r.selected, oracle);
    j["baseline_key_bits"] = baseline;
    j["traffic_ratio"] = static_cast<double>(r.traffic.key_bits()) / static_cast<double>(baseline);
    return j;
  };
  json result = run(cfg);
  if (!o.sweep.empty()) {
    json curve = json::array();
    std::ostringstream s;
    s << "alpha,key_bits,traffic_ratio,selected,recall\n";
    for (double a : parse_list(o.sweep)) {
      PredictorConfig pc = cfg;
      pc.alpha = {a};
      const json j = run(pc);
      curve.push_back({{"alpha", a},
                       {"key_bits", j["traffic"]["k_bits_fetched"].get<std::uint64_t>() +
                                        j["traffic"]["sign_bits_fetched"].get<std::uint64_t>()},
                       {"traffic_ratio", j["traffic_ratio"]},
                       {"selected", j["selected"].size()},
                       {"recall", j["recall"]}});
      const json& p = curve.back();
      s << a << ',' << p["key_bits"] << ',' << p["traffic_ratio"] << ',' << p["selected"] << ',' << p["recall"] << '\n';
    }
    result["curve"] = curve;
    if (!o.csv.empty()) write_text(o.csv, s.str());
  }
  json config = cfg;
  config["seq_len"] = k.rows();
  config["dim"] = k.cols();
  config["topk"] = o.topk;
  emit(envelope("predict", c.seed, config, inputs, result), c.out, out);
  return kExitOk;
}

struct LayerOpts {
  std::string config, csv;
  std::size_t prompt_len = 16, decode_steps = 4;
  bool keep_all = false;
};

int cmd_layer(const Common& c, const LayerOpts& o, std::ostream& out) {
  Inputs inputs;
  LayerConfig cfg;
  if (!o.config.empty()) {
    const auto bytes = inputs.read(o.config);
    from_json(json::parse(bytes.begin(), bytes.end()), cfg);
  }
  cfg.seed = c.seed;
  cfg.workers = c.workers;
  if (o.keep_all) {
    cfg.bgpp.alpha = {1.0};
    cfg.bgpp.radius = std::numeric_limits<double>::infinity();
  }
  const LayerWeights weights = gen_layer_weights(cfg);
  const RealMatrix prompt = gen_hidden_states(o.prompt_len, cfg.H, cfg.seed + 100);
  const RealMatrix tokens = o.decode_steps ? gen_hidden_states(o.decode_steps, cfg.H, cfg.seed + 200)
                                           : RealMatrix(0, cfg.H);
  const LayerRun run = run_layer(prompt, tokens, weights, cfg);
  if (!o.csv.empty()) {
    std::ostringstream s;
    s << "stage,field,value\n";
    for (const char* stage : {"prefill", "decode", "total"}) {
      const json j = json(run.report)[stage].flatten();
      for (const auto& [key, value] : j.items()) s << stage << ',' << key.substr(1) << ',' << value << '\n';
    }
    write_text(o.csv, s.str());
  }
  json config = cfg;
  config["workers"] = cfg.workers;
  config["prompt_len"] = o.prompt_len;
  config["decode_steps"] = o.decode_steps;
  json result = run.report;
  std::vector<std::uint8_t> out_bytes;
  for (const RealMatrix* m : {&run.prefill_out, &run.decode_out}) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(m->data().data());
    out_bytes.insert(out_bytes.end(), p, p + m->size() * sizeof(double));
  }
  result["output_crc32"] = hex32(crc_of(out_bytes));
  emit(envelope("layer", c.seed, config, inputs, result), c.out, out);
  return kExitOk;
}

int cmd_report(const Common& c, const std::vector<std::string>& files, const std::string& csv, std::ostream& out) {
  Inputs inputs;
  json reports = json::array();
  for (const auto& f : files) {
    const auto bytes = inputs.read(f);
    reports.push_back(json::parse(bytes.begin(), bytes.end()));
  }
  if (!csv.empty()) {
    std::ostringstream s;
    s << "report,key,value\n";
    for (std::size_t i = 0; i < reports.size(); ++i) {
      const json flat = reports[i].flatten();
      for (const auto& [key, value] : flat.items()) {
        if (value.is_number() || value.is_boolean()) s << files[i] << ',' << key << ',' << value << '\n';
      }
    }
    write_text(csv, s.str());
  }
  emit(envelope("report", c.seed, {{"inputs", files}}, inputs, {{"reports", reports}}), c.out, out);
  return kExitOk;
}

void add_common(CLI::App* sub, Common& c, bool out_required, const std::string& out_help) {
  sub->add_option("--seed", c.seed, "random seed")->capture_default_str();
  sub->add_option("--workers", c.workers, "worker threads")->capture_default_str()->check(CLI::PositiveNumber);
  auto* opt = sub->add_option("--out", c.out, out_help);
  if (out_required) opt->required();
}

void add_tiles(CLI::App* sub, TileConfig& t) {
  sub->add_option("--tile-m", t.t_m, "output rows per tile")->capture_default_str()->check(CLI::PositiveNumber);
  sub->add_option("--tile-k", t.t_k, "reduction columns per tile")->capture_default_str()->check(CLI::PositiveNumber);
  sub->add_option("--tile-n", t.t_n, "activation columns per tile")->capture_default_str()->check(CLI::PositiveNumber);
}

}  // namespace

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Bit-plane GEMM, weight coding, attention prediction and cost modelling", "mcbp"};
  app.require_subcommand(1, 1);
  app.set_version_flag("--version", MCBP_VERSION);

  Common common;

  GenOpts gen;
  auto* s_gen = app.add_subcommand("gen-weights", "write a Gaussian float32 matrix");
  s_gen->add_option("--rows", gen.rows, "rows")->required()->check(CLI::PositiveNumber);
  s_gen->add_option("--cols", gen.cols, "columns")->required()->check(CLI::PositiveNumber);
  s_gen->add_option("--std", gen.stddev, "standard deviation")->capture_default_str();
  add_common(s_gen, common, true, "output matrix file");

  QuantOpts quant;
  auto* s_quant = app.add_subcommand("quantize", "per-channel INT8 weights or per-tensor UINT8 activation codes");
  s_quant->add_option("--in", quant.in, "float32 matrix")->required();
  s_quant->add_option("--params", quant.params, "write quantization parameters JSON here");
  s_quant->add_flag("--activations", quant.activations, "asymmetric UINT8 codes (stored as float32)");
  add_common(s_quant, common, true, "output matrix file");

  CompressOpts comp;
  auto* s_comp = app.add_subcommand("compress", "encode an int8 matrix into a BSTC container");
  s_comp->add_option("--in", comp.in, "int8 matrix")->required();
  s_comp->add_option("--m", comp.m, "group size")->capture_default_str()->check(CLI::Range(1, 16));
  s_comp->add_option("--threshold", comp.threshold, "compress planes whose sparsity exceeds this")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  s_comp->add_option("--segment-len", comp.segment_len, "columns per segment")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  add_common(s_comp, common, true, "container file");

  std::string decomp_in;
  auto* s_decomp = app.add_subcommand("decompress", "decode a BSTC container to an int8 matrix");
  s_decomp->add_option("--in", decomp_in, "container")->required();
  add_common(s_decomp, common, true, "int8 matrix file");

  std::string sp_in, sp_csv;
  int sp_m = 4;
  auto* s_sp = app.add_subcommand("sparsity-stats", "bit-plane and value sparsity of an int8 matrix or container");
  s_sp->add_option("--in", sp_in, "int8 matrix or container")->required();
  s_sp->add_option("--m", sp_m, "group size")->capture_default_str()->check(CLI::Range(1, 16));
  s_sp->add_option("--csv", sp_csv, "per-plane table");
  add_common(s_sp, common, false, "report file (default: stdout)");

  GemmOpts gemm;
  auto* s_gemm = app.add_subcommand("gemm", "bit-sliced GEMM with operation counters");
  s_gemm->add_option("--weights", gemm.weights, "int8 matrix or container (M x K)")->required();
  s_gemm->add_option("--acts", gemm.acts, "integer activations (K x N)")->required();
  s_gemm->add_option("--m", gemm.m, "group size")->capture_default_str()->check(CLI::Range(1, kMaxGroupSize));
  s_gemm->add_flag("--verify", gemm.verify, "compare against the dense oracle");
  add_tiles(s_gemm, gemm.tiles);
  add_common(s_gemm, common, false, "report file (default: stdout)");

  DseOpts dse;
  auto* s_dse = app.add_subcommand("dse", "sweep the group size m");
  s_dse->add_option("--weights", dse.weights, "int8 matrix or container; omitted: Gaussian weights");
  s_dse->add_option("--rows", dse.rows, "rows of generated weights")->capture_default_str();
  s_dse->add_option("--cols", dse.cols, "columns of generated weights")->capture_default_str();
  s_dse->add_option("--m", dse.m_range, "group sizes, a..b")->capture_default_str();
  s_dse->add_option("--csv", dse.csv, "table output");
  s_dse->add_option("--threshold", dse.options.threshold, "compression threshold")->capture_default_str();
  s_dse->add_option("--segment-len", dse.options.segment_len, "columns per segment")->capture_default_str();
  add_tiles(s_dse, dse.options.tiles);
  add_common(s_dse, common, false, "report file (default: stdout)");

  PredictOpts pred;
  auto* s_pred = app.add_subcommand("predict", "bit-grained top-k key prediction for one query");
  s_pred->add_option("--keys", pred.keys, "float32 keys (S x d)");
  s_pred->add_option("--query", pred.query, "float32 query (1 x d)");
  s_pred->add_option("--seq-len", pred.seq_len, "generated keys")->capture_default_str();
  s_pred->add_option("--dim", pred.dim, "generated head dimension")->capture_default_str();
  s_pred->add_option("--rounds", pred.rounds, "prediction rounds")->capture_default_str();
  s_pred->add_option("--alpha", pred.alpha, "alpha per round, comma separated")->capture_default_str();
  s_pred->add_option("--radius", pred.radius, "logit radius (number or inf)")->capture_default_str();
  s_pred->add_option("--q-bits", pred.q_bits, "query bits")->capture_default_str();
  s_pred->add_option("--bound-mode", pred.bound_mode, "estimate or upper")
      ->capture_default_str()
      ->check(CLI::IsMember({"estimate", "upper"}));
  s_pred->add_option("--topk", pred.topk, "oracle top-k for recall")->capture_default_str();
  s_pred->add_option("--sweep-alpha", pred.sweep, "alpha values for a traffic curve, comma separated");
  s_pred->add_option("--csv", pred.csv, "traffic curve table");
  add_common(s_pred, common, false, "report file (default: stdout)");

  LayerOpts layer;
  auto* s_layer = app.add_subcommand("layer", "run one decoder layer on both paths and compare");
  s_layer->add_option("--config", layer.config, "layer config JSON");
  s_layer->add_option("--prompt-len", layer.prompt_len, "prefill tokens")->capture_default_str()->check(CLI::PositiveNumber);
  s_layer->add_option("--decode-steps", layer.decode_steps, "decode steps")->capture_default_str();
  s_layer->add_flag("--keep-all", layer.keep_all, "disable key pruning");
  s_layer->add_option("--csv", layer.csv, "stage counters table");
  add_common(s_layer, common, false, "report file (default: stdout)");

  std::vector<std::string> rep_inputs;
  std::string rep_csv;
  auto* s_rep = app.add_subcommand("report", "combine JSON reports");
  s_rep->add_option("--inputs", rep_inputs, "report files")->required();
  s_rep->add_option("--csv", rep_csv, "flattened numeric fields");
  add_common(s_rep, common, false, "combined report (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*s_gen) return cmd_gen(common, gen, out);
    if (*s_quant) return cmd_quantize(common, quant, out);
    if (*s_comp) return cmd_compress(common, comp, out);
    if (*s_decomp) return cmd_decompress(common, decomp_in, out);
    if (*s_sp) return cmd_sparsity(common, sp_in, sp_m, sp_csv, out);
    if (*s_gemm) return cmd_gemm(common, gemm, out, err);
    if (*s_dse) return cmd_dse(common, dse, out);
    if (*s_pred) return cmd_predict(common, pred, out);
    if (*s_layer) return cmd_layer(common, layer, out);
    if (*s_rep) return cmd_report(common, rep_inputs, rep_csv, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitDataError;
  } catch (const json::exception& e) {
    err << "error (json): " << e.what() << '\n';
    return kExitDataError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitDataError;
  }
  return kExitUsage;
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"mcbp"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace mcbp::cli
