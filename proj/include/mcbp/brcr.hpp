#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "json.hpp"
#include "mcbp/bitslice.hpp"
#include "mcbp/matrix.hpp"

namespace mcbp {

// Grouped bit-slice GEMM with redundancy merging.
//
// Each magnitude plane of the weights is cut into m-row slabs. Every column
// of a slab is an m-bit key; activations whose columns share a key are summed
// into one bucket of the merged activation vector (MAV), and the m slab
// outputs are rebuilt from the 2^m bucket sums. Plane results are
// shift-accumulated. Signs are handled by running the kernel on the
// nonnegative halves W+ and W- and subtracting.

inline constexpr int kMaxGroupSize = 12;

/// Operation counts. An addition is a genuine two-operand add; the first
/// deposit into an empty bucket or output is a move and is not counted. The
/// final y+ - y- combination is not counted.
struct OpCounters {
  std::uint64_t merge_adds = 0;
  std::uint64_t recon_adds = 0;
  std::uint64_t shifts = 0;  // one per (half, plane, real output row, activation column)
  std::uint64_t skipped_zero_columns = 0;
  std::uint64_t weight_bits_loaded = 0;
  std::uint64_t activation_loads = 0;

  std::uint64_t total_adds() const noexcept { return merge_adds + recon_adds; }

  OpCounters& operator+=(const OpCounters& o) noexcept {
    merge_adds += o.merge_adds;
    recon_adds += o.recon_adds;
    shifts += o.shifts;
    skipped_zero_columns += o.skipped_zero_columns;
    weight_bits_loaded += o.weight_bits_loaded;
    activation_loads += o.activation_loads;
    return *this;
  }
  friend bool operator==(const OpCounters&, const OpCounters&) = default;
};

void to_json(nlohmann::json& j, const OpCounters& c);

struct TileConfig {
  std::size_t t_m = 64;
  std::size_t t_k = 256;
  std::size_t t_n = 32;
};

/// Row r of the slab occupies key bit (m - 1 - r): row 0 is the MSB.
struct GroupKeyColumns {
  int m = 4;
  std::vector<std::uint16_t> keys;
};

GroupKeyColumns build_group_keys(const BitMatrix& plane, std::size_t row_start, int m);

/// Column indices grouped by key, in ascending column order within each
/// bucket. Key 0 is never stored; those columns are only counted.
class BucketMap {
 public:
  BucketMap() = default;
  BucketMap(int m, std::vector<std::uint32_t> offsets, std::vector<std::uint32_t> columns,
            std::uint64_t skipped_zero_columns)
      : m_(m), offsets_(std::move(offsets)), columns_(std::move(columns)), skipped_(skipped_zero_columns) {}

  int m() const noexcept { return m_; }
  std::size_t key_count() const noexcept { return std::size_t{1} << m_; }
  std::span<const std::uint32_t> bucket(std::size_t key) const noexcept {
    return {columns_.data() + offsets_[key], offsets_[key + 1] - offsets_[key]};
  }
  std::uint64_t skipped_zero_columns() const noexcept { return skipped_; }
  std::size_t nonzero_columns() const noexcept { return columns_.size(); }
  std::size_t occupied_buckets() const noexcept;

 private:
  int m_ = 0;
  std::vector<std::uint32_t> offsets_;
  std::vector<std::uint32_t> columns_;
  std::uint64_t skipped_ = 0;
};

BucketMap cam_bucketize(const GroupKeyColumns& keys);

/// One CAM search: bit j of the result is set iff column j's key equals
/// search_key.
std::vector<bool> cam_search(const GroupKeyColumns& keys, std::uint16_t search_key);

struct MergedActivationVector {
  int m = 0;
  std::vector<std::int64_t> z;          // 2^m bucket sums; z[0] stays 0
  std::vector<std::uint8_t> occupied;  // 1 if the bucket received any column
};

MergedActivationVector merge_activations(const BucketMap& buckets, std::span<const std::int32_t> x,
                                         OpCounters& counters);

/// y_r = sum of z[key] over occupied keys with bit (m - 1 - r) set.
std::vector<std::int64_t> reconstruct(const MergedActivationVector& mav, OpCounters& counters);

std::vector<std::int32_t> gemv_bitsliced(const SignMagnitudeTensor& w, std::span<const std::int32_t> x, int m,
                                         OpCounters& counters);

/// Output-stationary tiled GEMM: W (M x K) times X (K x N). Output tiles run
/// in parallel with private counters that are summed in tile order.
/// tiles.t_m must be a multiple of m.
IntMatrix gemm_tiled(const SignMagnitudeTensor& w, const IntMatrix& x, const TileConfig& tiles, int m,
                     OpCounters& counters, unsigned workers = 1);

/// Dense reference products with 64-bit accumulation.
std::vector<std::int32_t> oracle_gemv(const IntMatrix& a, std::span<const std::int32_t> x);
IntMatrix oracle_gemm(const IntMatrix& a, const IntMatrix& b);

/// Narrows a 64-bit accumulator; overflow is a hard error.
std::int32_t narrow_accumulator(std::int64_t v);

}  // namespace mcbp
