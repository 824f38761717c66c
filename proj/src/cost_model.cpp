#include "mcbp/cost_model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <ostream>
#include <string>

#include "mcbp/error.hpp"
#include "mcbp/rng.hpp"

namespace mcbp {

void CostInputs::validate() const {
  require(k >= 1 && m >= 1 && H >= 1.0, "cost inputs: k, H and m must be at least 1");
  require(bs_tilde >= 0.0 && bs_tilde <= 1.0, "cost inputs: bit sparsity must lie in [0, 1]");
  require(vs >= 0.0 && vs <= 1.0, "cost inputs: value sparsity must lie in [0, 1]");
  if (p0) require(*p0 >= 0.0 && *p0 <= 1.0, "cost inputs: p0 must lie in [0, 1]");
}

double brcr_cost_paper(const CostInputs& ci, bool whole_matrix) {
  ci.validate();
  const double recon = std::ldexp(static_cast<double>(ci.m), ci.m - 1);
  if (whole_matrix) return ci.k * ci.H * ci.H / ci.m * (1.0 - ci.bs_tilde) + ci.k * ci.H * std::ldexp(1.0, ci.m - 1);
  return ci.k * (ci.H * (1.0 - ci.bs_tilde) + recon);
}

double bsc_cost(const CostInputs& ci) {
  ci.validate();
  return ci.k * ci.H * ci.m * (1.0 - ci.bs_tilde);
}

double value_cost(const CostInputs& ci, bool strict_literal) {
  ci.validate();
  return ci.k * ci.H * ci.m * (strict_literal ? ci.vs : 1.0 - ci.vs);
}

Occupancy scan_occupancy(const SignMagnitudeTensor& w, int m, std::size_t t_k) {
  require(m >= 1 && m <= kMaxGroupSize, "group size out of range");
  require(t_k > 0, "t_k must be positive");
  const auto [pos, neg] = split_signed(w);
  const std::size_t nkeys = std::size_t{1} << m;
  std::vector<std::uint16_t> keys;
  std::vector<std::uint32_t> hist(nkeys);
  Occupancy occ;
  for (const SignMagnitudeTensor* half : {&pos, &neg}) {
    for (int b = 1; b < w.bit_width(); ++b) {
      const BitMatrix& plane = half->plane(b);
      for (std::size_t s = 0; s < w.rows(); s += static_cast<std::size_t>(m)) {
        for (std::size_t c0 = 0; c0 < w.cols(); c0 += t_k) {
          const std::size_t c1 = std::min(w.cols(), c0 + t_k);
          keys.resize(c1 - c0);
          slab_keys(plane, s, m, c0, c1, keys);
          std::fill(hist.begin(), hist.end(), 0u);
          for (std::uint16_t k : keys) ++hist[k];
          occ.zero_columns += hist[0];
          occ.nonzero_columns += keys.size() - hist[0];
          for (int r = 0; r < m; ++r) {
            const std::size_t bit = std::size_t{1} << (m - 1 - r);
            std::uint64_t terms = 0;
            for (std::size_t k = 1; k < nkeys; ++k) terms += (k & bit) && hist[k] ? 1 : 0;
            if (terms > 1) occ.recon_adds += terms - 1;
          }
          for (std::size_t k = 1; k < nkeys; ++k) occ.occupied_buckets += hist[k] ? 1 : 0;
        }
      }
    }
  }
  return occ;
}

std::uint64_t brcr_cost_exact(const Occupancy& occ, std::size_t activation_columns) {
  return activation_columns * (occ.nonzero_columns - occ.occupied_buckets + occ.recon_adds);
}

void to_json(nlohmann::json& j, const DseRow& r) {
  j = nlohmann::json{{"m", r.m},
                     {"model_adds_paper", r.model_adds_paper},
                     {"model_adds_exact", r.model_adds_exact},
                     {"measured_adds", r.measured_adds},
                     {"cr_model", r.cr_model},
                     {"cr_measured", r.cr_measured},
                     {"recommended", r.recommended},
                     {"divides_rows", r.divides_rows}};
}

void to_json(nlohmann::json& j, const DseResult& r) {
  j = nlohmann::json{{"rows", r.rows}, {"recommended_m", r.recommended_m}};
}

int recommend_group_size(const std::vector<DseRow>& rows) {
  require(!rows.empty(), "no sweep points to choose from");
  std::uint64_t best = rows.front().measured_adds;
  for (const auto& r : rows) best = std::min(best, r.measured_adds);
  const DseRow* pick = nullptr;
  for (const auto& r : rows) {
    if (static_cast<double>(r.measured_adds) > 1.02 * static_cast<double>(best)) continue;
    if (!pick || r.cr_measured > pick->cr_measured || (r.cr_measured == pick->cr_measured && r.m < pick->m))
      pick = &r;
  }
  return pick->m;
}

namespace {

// i.i.d. bits: a group is all zero with probability SR^m.
double iid_compression_ratio(const SparsityReport& rep, const std::vector<bool>& flags, std::size_t rows,
                             std::size_t cols, int m) {
  const double groups = static_cast<double>(rows / static_cast<std::size_t>(m) * cols);
  double original = 0.0, encoded = 0.0;
  for (std::size_t b = 0; b < rep.per_plane_sr.size(); ++b) {
    original += groups * m;
    const double p0 = std::pow(rep.per_plane_sr[b], m);
    encoded += flags[b] ? groups * (1.0 + (1.0 - p0) * m) : groups * m;
  }
  return original / encoded;
}

}  // namespace

DseResult dse_sweep(const SignMagnitudeTensor& w, const std::vector<int>& m_values, const DseOptions& options) {
  require(!m_values.empty(), "dse: the m range is empty");
  require(w.rows() > 0 && w.cols() > 0, "dse: empty weight tensor");
  std::vector<int> ms(m_values);
  std::sort(ms.begin(), ms.end());
  ms.erase(std::unique(ms.begin(), ms.end()), ms.end());

  Rng rng(options.seed);
  IntMatrix x(w.cols(), 1);
  for (auto& v : x.data()) v = static_cast<std::int32_t>(rng.uniform_int(0, 255));

  DseResult result;
  for (int m : ms) {
    require(m >= 1 && m <= kMaxGroupSize, "dse: m = " + std::to_string(m) + " out of range");
    const SignMagnitudeTensor padded = pad_rows(w, static_cast<std::size_t>(m));
    const SparsityReport rep = sparsity_stats(padded, m);

    DseRow row;
    row.m = m;
    row.divides_rows = w.rows() % static_cast<std::size_t>(m) == 0;
    const double groups = static_cast<double>(padded.rows()) / m;
    row.model_adds_paper = padded.bit_width() * groups *
                           (static_cast<double>(padded.cols()) * (1.0 - rep.avg_bit_sparsity) + std::ldexp(1.0 * m, m - 1));
    row.model_adds_exact = brcr_cost_exact(scan_occupancy(padded, m, options.tiles.t_k));

    TileConfig tiles = options.tiles;
    tiles.t_m = std::max<std::size_t>(1, tiles.t_m / static_cast<std::size_t>(m)) * static_cast<std::size_t>(m);
    OpCounters counters;
    gemm_tiled(padded, x, tiles, m, counters, options.workers);
    row.measured_adds = counters.total_adds();

    const std::vector<bool> flags = compression_policy(rep, options.threshold);
    const auto file = encode_container(padded, flags, m, options.segment_len);
    row.cr_measured = compression_ratio(parse_container_header(file)).total;
    row.cr_model = iid_compression_ratio(rep, flags, padded.rows(), padded.cols(), m);
    result.rows.push_back(row);
  }
  result.recommended_m = recommend_group_size(result.rows);
  for (auto& r : result.rows) r.recommended = r.m == result.recommended_m;
  return result;
}

void write_dse_csv(std::ostream& out, const DseResult& result) {
  out << "m,model_adds_paper,model_adds_exact,measured_adds,cr_model,cr_measured,recommended,divides_rows\n";
  for (const auto& r : result.rows) {
    out << r.m << ',' << r.model_adds_paper << ',' << r.model_adds_exact << ',' << r.measured_adds << ','
        << r.cr_model << ',' << r.cr_measured << ',' << (r.recommended ? 1 : 0) << ',' << (r.divides_rows ? 1 : 0)
        << '\n';
  }
}

}  // namespace mcbp
