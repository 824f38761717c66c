#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include "json.hpp"
#include "mcbp/bitslice.hpp"
#include "mcbp/brcr.hpp"
#include "mcbp/bstc.hpp"

namespace mcbp {

struct CostInputs {
  int k = 8;
  double H = 4096;
  int m = 4;
  double bs_tilde = 0.0;
  double vs = 0.0;
  std::optional<double> p0;

  void validate() const;
};

/// k (H (1 - bs) + m 2^(m-1)) for one m-row group, or
/// k H^2 / m (1 - bs) + k H 2^(m-1) for a whole H x H matrix.
double brcr_cost_paper(const CostInputs& ci, bool whole_matrix = false);

/// k H m (1 - bs).
double bsc_cost(const CostInputs& ci);

/// k H m (1 - vs). With strict_literal the product k H m vs is returned instead.
double value_cost(const CostInputs& ci, bool strict_literal = false);

/// Bucket statistics of a weight tensor, summed over both sign halves, all
/// magnitude planes, every m-row slab and every t_k-wide column tile. They
/// do not depend on activation values.
struct Occupancy {
  std::uint64_t nonzero_columns = 0;
  std::uint64_t zero_columns = 0;
  std::uint64_t occupied_buckets = 0;
  std::uint64_t recon_adds = 0;  // per activation column
};

Occupancy scan_occupancy(const SignMagnitudeTensor& w, int m, std::size_t t_k);

/// Additions gemm_tiled performs for `activation_columns` columns of X.
std::uint64_t brcr_cost_exact(const Occupancy& occ, std::size_t activation_columns = 1);

struct DseOptions {
  TileConfig tiles;  // t_m is rounded down to a multiple of each m
  double threshold = kDefaultCompressionThreshold;
  std::size_t segment_len = kDefaultSegmentLen;
  std::uint64_t seed = 42;
  unsigned workers = 1;
};

struct DseRow {
  int m = 0;
  double model_adds_paper = 0.0;
  std::uint64_t model_adds_exact = 0;
  std::uint64_t measured_adds = 0;
  double cr_model = 0.0;
  double cr_measured = 0.0;
  bool recommended = false;
  bool divides_rows = false;
};

struct DseResult {
  std::vector<DseRow> rows;
  int recommended_m = 0;
};

void to_json(nlohmann::json& j, const DseRow& r);
void to_json(nlohmann::json& j, const DseResult& r);

/// Among the m whose measured additions are within 2% of the minimum, the
/// one with the highest measured CR; ties go to the smaller m.
int recommend_group_size(const std::vector<DseRow>& rows);

DseResult dse_sweep(const SignMagnitudeTensor& w, const std::vector<int>& m_values, const DseOptions& options = {});

void write_dse_csv(std::ostream& out, const DseResult& result);

}  // namespace mcbp
