#include <doctest.h>

#include <algorithm>
#include <random>

#include "mobs/search.hpp"
#include "mobs/stats.hpp"
#include "test_util.hpp"

using namespace mobs;

namespace {

Volume random_volume(const Dims& d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  Volume v(d);
  for (auto& x : v.values()) x = n(rng);
  return v;
}

double max_rel_error(const Volume& a, const Volume& b) {
  double scale = 0.0, err = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) {
    scale = std::max(scale, std::abs(b[i]));
    err = std::max(err, std::abs(a[i] - b[i]));
  }
  return err / scale;
}

BinaryMask full_mask(const Dims& d) {
  BinaryMask m(d);
  for (std::int64_t i = 0; i < m.size(); ++i) m.set(i, true);
  return m;
}

}  // namespace

TEST_CASE("delta kernel reproduces the phantom") {
  const Volume p = random_volume(Dims{16, 12, 1}, 1);
  Volume k(Dims{5, 5, 1});
  k(2, 2) = 1.0;
  const Volume m = response_map(p, k);
  for (std::int64_t i = 0; i < p.size(); ++i) CHECK(m[i] == doctest::Approx(p[i]).epsilon(1e-12).scale(1.0));
}

TEST_CASE("zero-mean kernel on a constant phantom gives zeros") {
  Volume p(Dims{20, 20, 3});
  for (auto& x : p.values()) x = 7.0;
  Volume k = random_volume(Dims{7, 7, 1}, 2);
  double mean = 0.0;
  for (const double x : k.values()) mean += x;
  mean /= static_cast<double>(k.size());
  for (auto& x : k.values()) x -= mean;
  for (const double x : response_map(p, k).values()) CHECK(std::abs(x) < 1e-12);
}

TEST_CASE("FFT map equals brute force in 2D and 3D") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Volume p = random_volume(Dims{32, 32, 1}, seed);
    const Volume k = random_volume(Dims{9, 9, 1}, 100 + seed);
    CHECK(max_rel_error(response_map(p, k), brute_response(p, {k}, {1.0})) <= 1e-9);
  }
  const Volume p = random_volume(Dims{17, 14, 9}, 3);
  StackKernel sk;
  for (int s = 0; s < 5; ++s) {
    sk.slices.push_back(random_volume(Dims{7, 5, 1}, 50 + s));
    sk.weights.push_back(0.3 * s - 0.5);
  }
  CHECK(max_rel_error(response_map(p, sk), brute_response(p, sk.slices, sk.weights)) <= 1e-9);
  const VolumeF pf = p.cast<float>();
  const Volume viaf = response_map(pf, sk).cast<double>();
  CHECK(max_rel_error(viaf, brute_response(p, sk.slices, sk.weights)) <= 1e-5);
  const Volume moved = response_map(VolumeF(pf), sk).cast<double>();
  for (std::int64_t i = 0; i < moved.size(); ++i) CHECK(moved[i] == viaf[i]);
}

TEST_CASE("response map is linear and shift equivariant") {
  const Volume x = random_volume(Dims{24, 20, 1}, 4), y = random_volume(Dims{24, 20, 1}, 5);
  const Volume k = random_volume(Dims{7, 7, 1}, 6);
  Volume combo(x.dims());
  for (std::int64_t i = 0; i < x.size(); ++i) combo[i] = 2.0 * x[i] - 0.5 * y[i];
  const Volume mx = response_map(x, k), my = response_map(y, k), mc = response_map(combo, k);
  for (std::int64_t i = 0; i < x.size(); ++i) {
    CHECK(mc[i] == doctest::Approx(2.0 * mx[i] - 0.5 * my[i]).epsilon(1e-9).scale(1.0));
  }
  Volume shifted(x.dims());
  for (std::int64_t yy = 0; yy < 20; ++yy) {
    for (std::int64_t xx = 0; xx < 24; ++xx) shifted((xx + 5) % 24, (yy + 3) % 20) = x(xx, yy);
  }
  const Volume ms = response_map(shifted, k);
  for (std::int64_t yy = 0; yy < 20; ++yy) {
    for (std::int64_t xx = 0; xx < 24; ++xx) {
      CHECK(ms((xx + 5) % 24, (yy + 3) % 20) == doctest::Approx(mx(xx, yy)).epsilon(1e-9).scale(1.0));
    }
  }
}

TEST_CASE("kernel validation") {
  const Volume p = random_volume(Dims{8, 8, 1}, 7);
  CHECK_THROWS_AS(response_map(p, Volume(Dims{9, 9, 1})), InputError);
  CHECK_THROWS_AS(response_map(p, Volume(Dims{4, 3, 1})), InputError);
  StackKernel deep;
  for (int s = 0; s < 3; ++s) {
    deep.slices.push_back(Volume(Dims{3, 3, 1}));
    deep.weights.push_back(1.0);
  }
  CHECK_THROWS_AS(response_map(p, deep), InputError);
  deep.weights.pop_back();
  CHECK_THROWS_AS(response_map(random_volume(Dims{8, 8, 4}, 8), deep), InputError);
}

TEST_CASE("search score: masked max and ties") {
  Volume m(Dims{5, 4, 1});
  for (std::int64_t i = 0; i < m.size(); ++i) m[i] = static_cast<double>(i % 7);
  const SearchResult all = search_score(m, full_mask(m.dims()));
  CHECK(all.score == 6.0);
  CHECK(all.index == 6);
  CHECK(all.location == Voxel{1, 1, 0});
  BinaryMask mask = full_mask(m.dims());
  mask.set(6, false);
  mask.set(13, false);
  const SearchResult masked = search_score(m, mask);
  CHECK(masked.score == 5.0);
  CHECK(masked.index == 5);
  CHECK_THROWS_AS(search_score(m, BinaryMask(m.dims())), InputError);
  CHECK_THROWS_AS(search_score(m, BinaryMask(Dims{4, 4, 1})), InputError);
  Volume flat(Dims{3, 3, 1});
  CHECK(search_score(flat, full_mask(flat.dims())).index == 0);
}

TEST_CASE("LKE edge cases") {
  const Volume map = random_volume(Dims{30, 30, 1}, 9);
  BinaryMask mask = full_mask(map.dims());
  for (std::int64_t i = 0; i < 100; ++i) mask.set(i, false);
  LkeConfig cfg;
  cfg.neighborhood = Dims{5, 5, 1};
  cfg.seed = 3;
  cfg.n_locations = 1;
  const Voxel c{15, 15, 0};
  CHECK(lke_score(map, c, cfg, mask) == neighborhood_max(map, c, cfg.neighborhood));
  cfg.n_locations = mask.count();
  CHECK(lke_score(map, std::nullopt, cfg, mask) == search_score(map, mask).score);
  CHECK(lke_score(map, c, cfg, mask) >= search_score(map, mask).score);
  cfg.n_locations = mask.count() + 1;
  CHECK_THROWS_AS(lke_score(map, std::nullopt, cfg, mask), InputError);
  cfg.n_locations = 0;
  CHECK_THROWS_AS(lke_score(map, std::nullopt, cfg, mask), InputError);
  cfg.n_locations = 1;
  CHECK_THROWS_AS(lke_score(map, Voxel{1, 15, 0}, cfg, mask), InputError);
}

TEST_CASE("LKE draws are without replacement") {
  LkePhantom p;
  for (int i = 0; i < 50; ++i) p.masked_values.push_back(i);
  // With all 50 drawn the max is 49 in every stream; with 49 draws the max
  // is 49 unless 49 itself was the excluded one, which happens 1 in 50.
  int full = 0, missing = 0;
  for (std::uint64_t s = 0; s < 2000; ++s) {
    Rng rng(s);
    full += lke_draw(p, 50, false, rng) == 49.0;
    Rng rng2(s);
    missing += lke_draw(p, 49, false, rng2) != 49.0;
  }
  CHECK(full == 2000);
  CHECK(missing > 15);
  CHECK(missing < 70);
}

TEST_CASE("LKE draw picks each value with equal probability at N = 1") {
  LkePhantom p;
  for (int i = 0; i < 10; ++i) p.masked_values.push_back(i);
  std::vector<int> hits(10);
  for (std::uint64_t s = 0; s < 20000; ++s) {
    Rng rng(s);
    ++hits[static_cast<std::size_t>(lke_draw(p, 1, false, rng))];
  }
  for (const int h : hits) CHECK(std::abs(h - 2000) < 200);
}

TEST_CASE("signal_extra adds one more distractor") {
  LkePhantom p;
  p.masked_values = {5.0, 1.0};
  p.signal_value = 2.0;
  p.label = 1;
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng a(s), b(s);
    CHECK(lke_draw(p, 2, true, a) == 5.0);
    const double one = lke_draw(p, 1, true, b);
    CHECK((one == 5.0 || one == 2.0));
  }
  Rng r(0);
  CHECK(lke_draw(p, 1, false, r) == 2.0);
}

TEST_CASE("LKE curve: separated classes, determinism and worker independence") {
  std::vector<LkePhantom> ph;
  for (int i = 0; i < 8; ++i) {
    LkePhantom p;
    for (int v = 0; v < 200; ++v) p.masked_values.push_back(std::sin(v * 1.7 + i));
    if (i < 4) {
      p.signal_value = 10.0;
      p.label = 1;
    }
    ph.push_back(p);
  }
  LkeConfig cfg;
  cfg.iterations = 200;
  cfg.seed = 11;
  const auto a = lke_curve(ph, {1, 50, 200}, cfg, 1);
  const auto b = lke_curve(ph, {1, 50, 200}, cfg, 4);
  REQUIRE(a.size() == 3);
  CHECK(a[0].mean_auc == 1.0);
  CHECK(a[0].ci_low == 1.0);
  CHECK(a[0].ci_high == 1.0);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(a[i].n_locations == b[i].n_locations);
    CHECK(a[i].mean_auc == b[i].mean_auc);
    CHECK(a[i].ci_low == b[i].ci_low);
    CHECK(a[i].ci_high == b[i].ci_high);
  }
  CHECK_THROWS_AS(lke_curve(std::vector<LkePhantom>(ph.begin() + 4, ph.end()), {1}, cfg), InputError);
}

TEST_CASE("LKE curve from phantoms decreases with N") {
  const Dims d{40, 40, 1};
  Volume k(Dims{5, 5, 1});
  for (auto& x : k.values()) x = 1.0 / 25.0;
  std::vector<Volume> phantoms;
  std::vector<BinaryMask> masks(12, full_mask(d));
  for (int i = 0; i < 12; ++i) {
    Volume v = random_volume(d, 200 + i);
    if (i < 6) {
      for (int y = 18; y < 23; ++y) {
        for (int x = 18; x < 23; ++x) v(x, y) += 1.0;
      }
    }
    phantoms.push_back(v);
  }
  std::vector<LkeCase> cases;
  for (int i = 0; i < 12; ++i) {
    LkeCase c{&phantoms[static_cast<std::size_t>(i)], &masks[static_cast<std::size_t>(i)], std::nullopt, 0};
    if (i < 6) {
      c.signal_center = Voxel{20, 20, 0};
      c.label = 1;
    }
    cases.push_back(c);
  }
  LkeConfig cfg;
  cfg.neighborhood = Dims{3, 3, 1};
  cfg.iterations = 300;
  cfg.seed = 5;
  const auto curve = lke_curve(cases, as_stack(k), {1, 16, 256, 1600}, cfg);
  CHECK(curve[0].mean_auc >= 0.95);
  for (std::size_t i = 1; i < curve.size(); ++i) CHECK(curve[i].mean_auc <= curve[i - 1].mean_auc + 1e-12);
  // At N = every voxel the SA scores are the search scores.
  std::vector<double> sp, sa;
  for (int i = 0; i < 12; ++i) {
    const Volume m = response_map(phantoms[static_cast<std::size_t>(i)], k);
    const double s = search_score(m, masks[0]).score;
    (i < 6 ? sp : sa).push_back(i < 6 ? std::max(s, neighborhood_max(m, Voxel{20, 20, 0}, cfg.neighborhood)) : s);
  }
  CHECK(curve[3].mean_auc == auc_empirical(sp, sa));
}
