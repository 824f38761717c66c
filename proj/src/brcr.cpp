#include "mcbp/brcr.hpp"

#include <algorithm>
#include <limits>
#include <string>

#include "mcbp/error.hpp"
#include "mcbp/parallel.hpp"

namespace mcbp {
namespace {

void check_group_size(int m) {
  require(m >= 1 && m <= kMaxGroupSize,
          "group size m must be in [1, " + std::to_string(kMaxGroupSize) + "], got " + std::to_string(m));
}

BucketMap bucketize(std::span<const std::uint16_t> keys, int m) {
  const std::size_t nkeys = std::size_t{1} << m;
  std::vector<std::uint32_t> offsets(nkeys + 1, 0);
  for (std::uint16_t k : keys) ++offsets[k + 1];
  const std::uint64_t skipped = offsets[1];
  offsets[1] = 0;  // key 0 columns are not stored
  for (std::size_t k = 1; k <= nkeys; ++k) offsets[k] += offsets[k - 1];
  std::vector<std::uint32_t> columns(offsets[nkeys]);
  std::vector<std::uint32_t> cursor(offsets.begin(), offsets.end() - 1);
  for (std::size_t j = 0; j < keys.size(); ++j) {
    if (keys[j] != 0) columns[cursor[keys[j]]++] = static_cast<std::uint32_t>(j);
  }
  return BucketMap(m, std::move(offsets), std::move(columns), skipped);
}

void merge_into(const BucketMap& buckets, std::span<const std::int32_t> x, MergedActivationVector& mav,
                OpCounters& counters) {
  const std::size_t nkeys = buckets.key_count();
  mav.m = buckets.m();
  mav.z.assign(nkeys, 0);
  mav.occupied.assign(nkeys, 0);
  for (std::size_t key = 1; key < nkeys; ++key) {
    const auto cols = buckets.bucket(key);
    if (cols.empty()) continue;
    std::int64_t sum = x[cols[0]];
    for (std::size_t i = 1; i < cols.size(); ++i) sum += x[cols[i]];
    mav.z[key] = sum;
    mav.occupied[key] = 1;
    counters.merge_adds += cols.size() - 1;
    counters.activation_loads += cols.size();
  }
  counters.skipped_zero_columns += buckets.skipped_zero_columns();
}

void reconstruct_into(const MergedActivationVector& mav, std::span<std::int64_t> y, OpCounters& counters) {
  const int m = mav.m;
  const std::size_t nkeys = std::size_t{1} << m;
  for (int r = 0; r < m; ++r) {
    const std::size_t bit = std::size_t{1} << (m - 1 - r);
    std::int64_t sum = 0;
    std::uint64_t terms = 0;
    for (std::size_t key = bit; key < nkeys; ++key) {
      if ((key & bit) && mav.occupied[key]) {
        sum += mav.z[key];
        ++terms;
      }
    }
    y[static_cast<std::size_t>(r)] = sum;
    if (terms > 1) counters.recon_adds += terms - 1;
  }
}

// Accumulates the contribution of W[rows) x X[cols) into acc for the
// activation columns held in xcols (one contiguous vector per column).
void accumulate_block(const SignMagnitudeTensor& pos, const SignMagnitudeTensor& neg, std::size_t row_begin,
                      std::size_t row_end, std::size_t col_begin, std::size_t col_end,
                      const std::vector<std::vector<std::int32_t>>& xcols, int m, Matrix<std::int64_t>& acc,
                      OpCounters& counters) {
  const std::size_t width = col_end - col_begin;
  const auto group = static_cast<std::size_t>(m);
  std::vector<std::uint16_t> keys(width);
  std::vector<std::int64_t> partial(group);
  MergedActivationVector mav;
  const SignMagnitudeTensor* halves[2] = {&pos, &neg};
  for (int h = 0; h < 2; ++h) {
    const std::int64_t sign = h == 0 ? 1 : -1;
    for (int b = 1; b < pos.bit_width(); ++b) {
      const BitMatrix& plane = halves[h]->plane(b);
      const std::int64_t weight = std::int64_t{1} << (b - 1);
      for (std::size_t s = row_begin; s < row_end; s += group) {
        slab_keys(plane, s, m, col_begin, col_end, keys);
        const BucketMap buckets = bucketize(keys, m);
        const std::size_t live_rows = std::min(group, row_end - s);
        for (std::size_t n = 0; n < xcols.size(); ++n) {
          merge_into(buckets, xcols[n], mav, counters);
          reconstruct_into(mav, partial, counters);
          for (std::size_t r = 0; r < live_rows; ++r) acc(s - row_begin + r, n) += sign * weight * partial[r];
          counters.shifts += live_rows;
        }
      }
    }
  }
}

}  // namespace

void to_json(nlohmann::json& j, const OpCounters& c) {
  j = nlohmann::json{{"merge_adds", c.merge_adds},
                     {"recon_adds", c.recon_adds},
                     {"shifts", c.shifts},
                     {"skipped_zero_columns", c.skipped_zero_columns},
                     {"weight_bits_loaded", c.weight_bits_loaded},
                     {"activation_loads", c.activation_loads}};
}

std::size_t BucketMap::occupied_buckets() const noexcept {
  std::size_t n = 0;
  for (std::size_t k = 1; k < key_count(); ++k) n += offsets_[k + 1] > offsets_[k] ? 1 : 0;
  return n;
}

GroupKeyColumns build_group_keys(const BitMatrix& plane, std::size_t row_start, int m) {
  check_group_size(m);
  require(row_start + static_cast<std::size_t>(m) <= plane.rows(),
          "slab [" + std::to_string(row_start) + ", " + std::to_string(row_start + static_cast<std::size_t>(m)) +
              ") exceeds " + std::to_string(plane.rows()) + " rows");
  GroupKeyColumns g;
  g.m = m;
  g.keys.resize(plane.cols());
  slab_keys(plane, row_start, m, 0, plane.cols(), g.keys);
  return g;
}

BucketMap cam_bucketize(const GroupKeyColumns& keys) {
  check_group_size(keys.m);
  for (std::uint16_t k : keys.keys) require(k < (1u << keys.m), "key exceeds 2^m - 1");
  return bucketize(keys.keys, keys.m);
}

std::vector<bool> cam_search(const GroupKeyColumns& keys, std::uint16_t search_key) {
  std::vector<bool> bitmap(keys.keys.size());
  for (std::size_t j = 0; j < keys.keys.size(); ++j) bitmap[j] = keys.keys[j] == search_key;
  return bitmap;
}

MergedActivationVector merge_activations(const BucketMap& buckets, std::span<const std::int32_t> x,
                                         OpCounters& counters) {
  for (std::size_t key = 1; key < buckets.key_count(); ++key) {
    for (std::uint32_t c : buckets.bucket(key)) require(c < x.size(), "bucket column index beyond activations");
  }
  MergedActivationVector mav;
  merge_into(buckets, x, mav, counters);
  return mav;
}

std::vector<std::int64_t> reconstruct(const MergedActivationVector& mav, OpCounters& counters) {
  check_group_size(mav.m);
  require(mav.z.size() == (std::size_t{1} << mav.m) && mav.occupied.size() == mav.z.size(), "malformed MAV");
  std::vector<std::int64_t> y(static_cast<std::size_t>(mav.m));
  reconstruct_into(mav, y, counters);
  return y;
}

std::int32_t narrow_accumulator(std::int64_t v) {
  if (v > std::numeric_limits<std::int32_t>::max() || v < std::numeric_limits<std::int32_t>::min())
    fail(ErrorKind::kOutOfRange, "accumulator " + std::to_string(v) + " overflows 32 bits");
  return static_cast<std::int32_t>(v);
}

std::vector<std::int32_t> gemv_bitsliced(const SignMagnitudeTensor& w, std::span<const std::int32_t> x, int m,
                                         OpCounters& counters) {
  check_group_size(m);
  require(w.cols() == x.size(), "gemv: W has " + std::to_string(w.cols()) + " columns but x has " +
                                    std::to_string(x.size()) + " entries");
  const auto [pos, neg] = split_signed(w);
  const std::vector<std::vector<std::int32_t>> xcols{std::vector<std::int32_t>(x.begin(), x.end())};
  Matrix<std::int64_t> acc(w.rows(), 1, 0);
  counters.weight_bits_loaded += w.rows() * w.cols() * static_cast<std::uint64_t>(w.bit_width());
  accumulate_block(pos, neg, 0, w.rows(), 0, w.cols(), xcols, m, acc, counters);
  std::vector<std::int32_t> y(w.rows());
  for (std::size_t r = 0; r < w.rows(); ++r) y[r] = narrow_accumulator(acc(r, 0));
  return y;
}

IntMatrix gemm_tiled(const SignMagnitudeTensor& w, const IntMatrix& x, const TileConfig& tiles, int m,
                     OpCounters& counters, unsigned workers) {
  check_group_size(m);
  require(w.cols() == x.rows(), "gemm: W is " + std::to_string(w.rows()) + "x" + std::to_string(w.cols()) +
                                    " but X has " + std::to_string(x.rows()) + " rows");
  require(tiles.t_m > 0 && tiles.t_k > 0 && tiles.t_n > 0, "tile sizes must be positive");
  require(tiles.t_m % static_cast<std::size_t>(m) == 0,
          "t_m = " + std::to_string(tiles.t_m) + " is not a multiple of m = " + std::to_string(m));

  const auto [pos, neg] = split_signed(w);
  const std::size_t M = w.rows(), K = w.cols(), N = x.cols();
  const std::size_t tiles_m = (M + tiles.t_m - 1) / tiles.t_m;
  const std::size_t tiles_n = (N + tiles.t_n - 1) / tiles.t_n;
  IntMatrix out(M, N);
  std::vector<OpCounters> tile_counters(tiles_m * tiles_n);

  parallel_for(tiles_m * tiles_n, workers, [&](std::size_t t) {
    const std::size_t tm = t / tiles_n, tn = t % tiles_n;
    const std::size_t row_begin = tm * tiles.t_m, row_end = std::min(M, row_begin + tiles.t_m);
    const std::size_t n_begin = tn * tiles.t_n, n_end = std::min(N, n_begin + tiles.t_n);
    OpCounters& local = tile_counters[t];
    Matrix<std::int64_t> acc(row_end - row_begin, n_end - n_begin, 0);
    for (std::size_t k_begin = 0; k_begin < K; k_begin += tiles.t_k) {
      const std::size_t k_end = std::min(K, k_begin + tiles.t_k);
      std::vector<std::vector<std::int32_t>> xcols(n_end - n_begin, std::vector<std::int32_t>(k_end - k_begin));
      for (std::size_t kk = k_begin; kk < k_end; ++kk)
        for (std::size_t n = n_begin; n < n_end; ++n) xcols[n - n_begin][kk - k_begin] = x(kk, n);
      local.weight_bits_loaded += (row_end - row_begin) * (k_end - k_begin) * static_cast<std::uint64_t>(w.bit_width());
      accumulate_block(pos, neg, row_begin, row_end, k_begin, k_end, xcols, m, acc, local);
    }
    for (std::size_t r = row_begin; r < row_end; ++r)
      for (std::size_t n = n_begin; n < n_end; ++n) out(r, n) = narrow_accumulator(acc(r - row_begin, n - n_begin));
  });

  for (const auto& c : tile_counters) counters += c;
  return out;
}

std::vector<std::int32_t> oracle_gemv(const IntMatrix& a, std::span<const std::int32_t> x) {
  require(a.cols() == x.size(), "oracle_gemv: dimension mismatch");
  std::vector<std::int32_t> y(a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    std::int64_t sum = 0;
    for (std::size_t c = 0; c < a.cols(); ++c) sum += static_cast<std::int64_t>(a(r, c)) * x[c];
    y[r] = narrow_accumulator(sum);
  }
  return y;
}

IntMatrix oracle_gemm(const IntMatrix& a, const IntMatrix& b) {
  require(a.cols() == b.rows(), "oracle_gemm: dimension mismatch");
  Matrix<std::int64_t> acc(a.rows(), b.cols(), 0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const std::int64_t aik = a(i, k);
      if (aik == 0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) acc(i, j) += aik * b(k, j);
    }
  }
  IntMatrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < acc.size(); ++i) out.data()[i] = narrow_accumulator(acc.data()[i]);
  return out;
}

}  // namespace mcbp
