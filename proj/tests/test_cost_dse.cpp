#include <algorithm>
#include <sstream>

#include "doctest.h"
#include "mcbp/cost_model.hpp"
#include "mcbp/error.hpp"
#include "mcbp/quantizer.hpp"
#include "oracles.hpp"

using namespace mcbp;

namespace {

CostInputs reference_inputs() {
  CostInputs ci;
  ci.k = 8;
  ci.H = 4096;
  ci.m = 4;
  ci.bs_tilde = 0.70;
  ci.vs = 0.07;
  return ci;
}

SignMagnitudeTensor gaussian_int8(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  return calibrate_weights(gen_gaussian_weights(rows, cols, 1.0, seed)).planes;
}

}  // namespace

TEST_CASE("group and whole-matrix addition models") {
  const CostInputs ci = reference_inputs();
  CHECK(brcr_cost_paper(ci) == doctest::Approx(10086.4));
  CHECK(brcr_cost_paper(ci, true) == doctest::Approx(10328473.6));
  CostInputs dense_bits = ci;
  dense_bits.bs_tilde = 1.0;
  CHECK(brcr_cost_paper(dense_bits) == doctest::Approx(256.0));
}

TEST_CASE("bit-serial and value-level models") {
  const CostInputs ci = reference_inputs();
  CHECK(bsc_cost(ci) == doctest::Approx(39321.6));
  CHECK(value_cost(ci) == doctest::Approx(121896.96));
  CHECK(value_cost(ci, true) == doctest::Approx(8.0 * 4096 * 4 * 0.07));
  CHECK(bsc_cost(ci) / brcr_cost_paper(ci) == doctest::Approx(3.90).epsilon(0.005));
  CHECK(value_cost(ci) / brcr_cost_paper(ci) == doctest::Approx(12.09).epsilon(0.005));

  CostInputs dense = ci;
  dense.bs_tilde = 0.0;
  dense.vs = 0.0;
  CHECK(bsc_cost(dense) == value_cost(dense));
  CHECK(bsc_cost(dense) == doctest::Approx(8.0 * 4096 * 4));
}

TEST_CASE("model floor and growth in H") {
  Rng rng(71);
  for (int trial = 0; trial < 200; ++trial) {
    CostInputs ci;
    ci.k = static_cast<int>(rng.uniform_int(1, 16));
    ci.m = static_cast<int>(rng.uniform_int(1, 10));
    ci.H = static_cast<double>(rng.uniform_int(1, 1 << 14));
    ci.bs_tilde = rng.uniform();
    const double floor = ci.k * ci.m * std::ldexp(1.0, ci.m - 1);
    CHECK(brcr_cost_paper(ci) >= floor);
    CostInputs bigger = ci;
    bigger.H += 1;
    if (ci.bs_tilde < 1.0) CHECK(brcr_cost_paper(bigger) > brcr_cost_paper(ci));
  }
}

TEST_CASE("cost input validation") {
  CostInputs ci = reference_inputs();
  ci.bs_tilde = 1.2;
  CHECK_THROWS_AS(brcr_cost_paper(ci), Error);
  ci = reference_inputs();
  ci.m = 0;
  CHECK_THROWS_AS(bsc_cost(ci), Error);
  ci = reference_inputs();
  ci.p0 = -0.1;
  CHECK_THROWS_AS(value_cost(ci), Error);
}

TEST_CASE("exact cost of an all-zero tensor is zero") {
  const Occupancy occ = scan_occupancy(SignMagnitudeTensor(16, 64), 4, 256);
  CHECK(brcr_cost_exact(occ) == 0);
  CHECK(occ.nonzero_columns == 0);
  CHECK(occ.zero_columns == 2 * 7 * 4 * 64);
}

TEST_CASE("exact cost equals the kernel counters") {
  Rng rng(72);
  for (int trial = 0; trial < 40; ++trial) {
    const int m = static_cast<int>(rng.uniform_int(1, 6));
    const auto rows = static_cast<std::size_t>(m * rng.uniform_int(1, 10));
    const auto cols = static_cast<std::size_t>(rng.uniform_int(1, 300));
    const std::size_t t_k = static_cast<std::size_t>(rng.uniform_int(16, 256));
    const auto w = to_sign_magnitude(oracle::random_int_matrix(rng, rows, cols, -127, 127));
    const IntMatrix x = oracle::random_int_matrix(rng, cols, 3, 0, 255);
    OpCounters c;
    gemm_tiled(w, x, TileConfig{static_cast<std::size_t>(m) * 4, t_k, 2}, m, c);
    CHECK(brcr_cost_exact(scan_occupancy(w, m, t_k), 3) == c.total_adds());
  }
}

TEST_CASE("exact cost versus the model on correlated sparsity") {
  // Many zero values make every plane's zeros coincide.
  Rng rng(73);
  IntMatrix v(64, 512);
  for (auto& e : v.data()) e = rng.bernoulli(0.8) ? 0 : static_cast<std::int32_t>(rng.uniform_int(-127, 127));
  const auto w = to_sign_magnitude(v);
  const auto rep = sparsity_stats(w, 4);
  CostInputs ci;
  ci.H = 512;
  ci.bs_tilde = rep.avg_bit_sparsity;
  const double model = brcr_cost_paper(ci) * 16;  // 16 slabs of 4 rows
  const auto exact = brcr_cost_exact(scan_occupancy(w, 4, 512));
  MESSAGE("correlated sparsity: exact " << exact << ", model " << model);
  CHECK(exact > 0);
  CHECK(model > 0.0);
}

TEST_CASE("recommendation rule") {
  std::vector<DseRow> rows(4);
  rows[0] = {1, 0, 0, 1000, 0, 1.0, false, true};
  rows[1] = {2, 0, 0, 500, 0, 1.2, false, true};
  rows[2] = {3, 0, 0, 505, 0, 1.4, false, true};
  rows[3] = {4, 0, 0, 520, 0, 1.9, false, true};
  CHECK(recommend_group_size(rows) == 3);
  rows[2].cr_measured = 1.2;
  CHECK(recommend_group_size(rows) == 2);
  CHECK(recommend_group_size({rows[3]}) == 4);
  CHECK_THROWS_AS(recommend_group_size({}), Error);
}

TEST_CASE("single-point sweep") {
  const auto w = gaussian_int8(64, 128, 5);
  const auto res = dse_sweep(w, {4});
  REQUIRE(res.rows.size() == 1);
  CHECK(res.recommended_m == 4);
  CHECK(res.rows[0].recommended);
  CHECK(res.rows[0].divides_rows);
  CHECK_THROWS_AS(dse_sweep(w, {}), Error);
  CHECK_THROWS_AS(dse_sweep(w, {13}), Error);
}

TEST_CASE("sweep rows agree with independent runs") {
  const auto w = gaussian_int8(90, 300, 6);
  DseOptions opt;
  opt.tiles = TileConfig{64, 128, 32};
  const auto res = dse_sweep(w, {5, 1, 3, 3, 4}, opt);
  REQUIRE(res.rows.size() == 4);
  CHECK(res.rows[0].m == 1);
  CHECK(res.rows[3].m == 5);
  for (const auto& row : res.rows) {
    CHECK(row.model_adds_exact == row.measured_adds);
    CHECK(row.divides_rows == (90 % row.m == 0));
    const auto padded = pad_rows(w, static_cast<std::size_t>(row.m));
    const auto flags = compression_policy(sparsity_stats(padded, row.m), opt.threshold);
    const auto file = encode_container(padded, flags, row.m);
    CHECK(row.cr_measured == doctest::Approx(compression_ratio(parse_container_header(file)).total));
    CHECK(row.cr_model > 0.0);
  }
}

TEST_CASE("sweep is deterministic and worker-independent") {
  const auto w = gaussian_int8(128, 256, 7);
  DseOptions one, four;
  four.workers = 4;
  const auto a = dse_sweep(w, {1, 2, 3, 4, 5, 6}, one);
  const auto b = dse_sweep(w, {1, 2, 3, 4, 5, 6}, four);
  CHECK(nlohmann::json(a) == nlohmann::json(b));
  CHECK(nlohmann::json(a) == nlohmann::json(dse_sweep(w, {1, 2, 3, 4, 5, 6}, one)));
}

TEST_CASE("DSE CSV") {
  const auto res = dse_sweep(gaussian_int8(16, 32, 8), {2, 4});
  std::ostringstream out;
  write_dse_csv(out, res);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "m,model_adds_paper,model_adds_exact,measured_adds,cr_model,cr_measured,recommended,divides_rows");
  int lines = 0;
  while (std::getline(in, line)) {
    ++lines;
    CHECK(std::count(line.begin(), line.end(), ',') == 7);
  }
  CHECK(lines == 2);
  const nlohmann::json j = res;
  CHECK(j["rows"].size() == 2);
  CHECK(j.contains("recommended_m"));
}
