#include <doctest.h>

#include <cmath>

#include "match2/core/gradcheck.hpp"
#include "match2/model/pattern.hpp"
#include "support/test_util.hpp"

using namespace match2;
namespace tt = match2::testing;

namespace {

// Direct 64-bit evaluation of each element-wise similarity, independent of
// the fused op.
double brute_similarity(SimilarityFn fn, const std::vector<double>& x,
                        const std::vector<double>& y) {
  size_t w = x.size();
  switch (fn) {
    case SimilarityFn::kDot: {
      double s = 0;
      for (size_t t = 0; t < w; ++t) s += x[t] * y[t];
      return s;
    }
    case SimilarityFn::kCos: {
      double d = 0, nx = 0, ny = 0;
      for (size_t t = 0; t < w; ++t) {
        d += x[t] * y[t];
        nx += x[t] * x[t];
        ny += y[t] * y[t];
      }
      if (nx == 0 || ny == 0) return 0;
      return d / (std::sqrt(nx) * std::sqrt(ny));
    }
    case SimilarityFn::kL1: {
      double d = 0;
      for (size_t t = 0; t < w; ++t) d += std::abs(x[t] - y[t]);
      return 1.0 / (1.0 + d);
    }
    case SimilarityFn::kL2: {
      double d = 0;
      for (size_t t = 0; t < w; ++t) d += (x[t] - y[t]) * (x[t] - y[t]);
      return 1.0 / (1.0 + std::sqrt(d));
    }
    case SimilarityFn::kJss: {
      auto softmax = [](const std::vector<double>& v) {
        double mx = v[0];
        for (double e : v) mx = std::max(mx, e);
        std::vector<double> p(v.size());
        double z = 0;
        for (size_t i = 0; i < v.size(); ++i) {
          p[i] = std::exp(v[i] - mx);
          z += p[i];
        }
        for (auto& e : p) e /= z;
        return p;
      };
      auto p = softmax(x);
      auto q = softmax(y);
      double jsd = 0;
      for (size_t t = 0; t < w; ++t) {
        double m = 0.5 * (p[t] + q[t]);
        if (p[t] > 0) jsd += 0.5 * p[t] * std::log2(p[t] / m);
        if (q[t] > 0) jsd += 0.5 * q[t] * std::log2(q[t] / m);
      }
      return 1.0 - jsd;
    }
  }
  return 0;
}

const SimilarityFn kAllFns[] = {SimilarityFn::kDot, SimilarityFn::kCos,
                                SimilarityFn::kL1, SimilarityFn::kL2,
                                SimilarityFn::kJss};

// single-row pattern tensors for element-level checks
template <typename T>
TensorT<T> row_tensor(const std::vector<T>& row) {
  return TensorT<T>::from({1, 1, 1, static_cast<int64_t>(row.size())}, row);
}

template <typename T>
T single_similarity(SimilarityFn fn, const std::vector<T>& x, const std::vector<T>& y) {
  auto pu = row_tensor(x);
  auto pa = row_tensor(y);
  auto ones_mask = TensorT<T>::full({1, 1}, T(1));
  auto ans_mask = TensorT<T>::full({1, static_cast<int64_t>(x.size())}, T(1));
  auto ps = pattern_similarity<T>(nullptr, pu, pa, ones_mask, ones_mask, ans_mask, fn);
  return ps.values()[0];
}

}  // namespace

TEST_CASE("matching_pattern shape and loop oracle") {
  Rng rng(11);
  int64_t b = 2, layers = 2, m = 3, w = 5, h = 8;
  SegmentFeatures<float> seg;
  seg.max_first = m;
  seg.max_second = w;
  seg.q_mask = Tensor::full({b, m}, 1.0f);
  seg.a_mask = Tensor::full({b, w}, 1.0f);
  for (int64_t l = 0; l < layers; ++l) {
    seg.q_layers.push_back(tt::random_tensor<float>(rng, {b, m, h}));
    seg.a_layers.push_back(tt::random_tensor<float>(rng, {b, w, h}));
  }
  auto pattern = matching_pattern<float>(nullptr, seg);
  REQUIRE(pattern.shape() == Shape{b, layers, m, w});
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t l = 0; l < layers; ++l)
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < w; ++j) {
          double acc = 0;
          for (int64_t k = 0; k < h; ++k)
            acc += seg.q_layers[l].values()[(bi * m + i) * h + k] *
                   seg.a_layers[l].values()[(bi * w + j) * h + k];
          CHECK(pattern.values()[((bi * layers + l) * m + i) * w + j] ==
                doctest::Approx(acc).epsilon(1e-5));
        }
}

TEST_CASE("matching_pattern of orthogonal features is zero") {
  int64_t b = 1, m = 2, w = 2, h = 4;
  SegmentFeatures<float> seg;
  seg.max_first = m;
  seg.max_second = w;
  seg.q_mask = Tensor::full({b, m}, 1.0f);
  seg.a_mask = Tensor::full({b, w}, 1.0f);
  auto q = Tensor::zeros({b, m, h});
  auto a = Tensor::zeros({b, w, h});
  q.values()[0] = 1.0f;  // e0 and e1
  q.values()[h + 1] = 1.0f;
  a.values()[2] = 1.0f;  // e2 and e3
  a.values()[h + 3] = 1.0f;
  seg.q_layers.push_back(q);
  seg.a_layers.push_back(a);
  auto pattern = matching_pattern<float>(nullptr, seg);
  for (float v : pattern.values()) CHECK(v == 0.0f);
}

TEST_CASE("matching_pattern layer mismatch is a contract error") {
  SegmentFeatures<float> seg;
  seg.max_first = 1;
  seg.max_second = 1;
  seg.q_layers.push_back(Tensor::zeros({1, 1, 2}));
  CHECK_THROWS_AS(matching_pattern<float>(nullptr, seg), Error);
}

TEST_CASE("similarity fixed points and worked values") {
  SUBCASE("dot of orthogonal vectors is zero") {
    CHECK(single_similarity<double>(SimilarityFn::kDot, {1, 0}, {0, 1}) == 0.0);
  }
  SUBCASE("s(x,x) = 1 for cos, l1, l2, jss") {
    Rng rng(13);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> x(6);
      for (auto& v : x) v = rng.uniform(-3, 3);
      for (auto fn : {SimilarityFn::kCos, SimilarityFn::kL1, SimilarityFn::kL2,
                      SimilarityFn::kJss})
        CHECK(std::abs(single_similarity<double>(fn, x, x) - 1.0) < 1e-6);
    }
  }
  SUBCASE("jss of disjoint-support distributions is 0") {
    double s = single_similarity<double>(SimilarityFn::kJss, {40, -40}, {-40, 40});
    CHECK(std::abs(s) < 1e-6);
  }
}

TEST_CASE("every similarity matches the 64-bit brute force") {
  Rng rng(17);
  int64_t b = 1, layers = 1, m = 2, n = 2, w = 3;
  for (auto fn : kAllFns) {
    auto pu = tt::random_tensor<double>(rng, {b, layers, m, w}, -2, 2);
    auto pa = tt::random_tensor<double>(rng, {b, layers, n, w}, -2, 2);
    auto mask_u = Tensor64::full({b, m}, 1.0);
    auto mask_a = Tensor64::full({b, n}, 1.0);
    auto ans_mask = Tensor64::full({b, w}, 1.0);
    auto ps = pattern_similarity<double>(nullptr, pu, pa, mask_u, mask_a, ans_mask, fn);
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) {
        std::vector<double> x(w), y(w);
        for (int64_t t = 0; t < w; ++t) {
          x[t] = pu.values()[i * w + t];
          y[t] = pa.values()[j * w + t];
        }
        CHECK(std::abs(ps.values()[i * n + j] - brute_similarity(fn, x, y)) < 1e-6);
      }
  }
}

TEST_CASE("transpose symmetry is exact in 64-bit") {
  Rng rng(19);
  int64_t b = 2, layers = 2, m = 3, n = 4, w = 5;
  auto pu = tt::random_tensor<double>(rng, {b, layers, m, w}, -2, 2);
  auto pa = tt::random_tensor<double>(rng, {b, layers, n, w}, -2, 2);
  auto mask_u = Tensor64::full({b, m}, 1.0);
  auto mask_a = Tensor64::full({b, n}, 1.0);
  auto ans = Tensor64::full({b, w}, 1.0);
  for (auto fn : kAllFns) {
    auto fwd = pattern_similarity<double>(nullptr, pu, pa, mask_u, mask_a, ans, fn);
    auto rev = pattern_similarity<double>(nullptr, pa, pu, mask_a, mask_u, ans, fn);
    for (int64_t bi = 0; bi < b; ++bi)
      for (int64_t l = 0; l < layers; ++l)
        for (int64_t i = 0; i < m; ++i)
          for (int64_t j = 0; j < n; ++j)
            CHECK(fwd.values()[((bi * layers + l) * m + i) * n + j] ==
                  rev.values()[((bi * layers + l) * n + j) * m + i]);
  }
}

TEST_CASE("similarity ranges (property)") {
  Rng rng(23);
  for (int trial = 0; trial < 300; ++trial) {
    int64_t w = 1 + static_cast<int64_t>(rng.uniform_index(6));
    std::vector<double> x(w), y(w);
    for (auto& v : x) v = rng.uniform(-5, 5);
    for (auto& v : y) v = rng.uniform(-5, 5);
    double cos = single_similarity<double>(SimilarityFn::kCos, x, y);
    CHECK(cos >= -1.0 - 1e-12);
    CHECK(cos <= 1.0 + 1e-12);
    double l1 = single_similarity<double>(SimilarityFn::kL1, x, y);
    CHECK(l1 > 0.0);
    CHECK(l1 <= 1.0);
    double l2 = single_similarity<double>(SimilarityFn::kL2, x, y);
    CHECK(l2 > 0.0);
    CHECK(l2 <= 1.0);
    double jss = single_similarity<double>(SimilarityFn::kJss, x, y);
    CHECK(jss >= 0.0);
    CHECK(jss <= 1.0);
  }
}

TEST_CASE("masked positions never influence unmasked cells") {
  Rng rng(29);
  int64_t b = 1, layers = 2, m = 3, n = 3, w = 4;
  auto pu = tt::random_tensor<double>(rng, {b, layers, m, w});
  auto pa = tt::random_tensor<double>(rng, {b, layers, n, w});
  auto mask_u = Tensor64::from({b, m}, {1, 1, 0});
  auto mask_a = Tensor64::from({b, n}, {1, 0, 1});
  auto ans = Tensor64::from({b, w}, {1, 1, 0, 1});

  for (auto fn : kAllFns) {
    auto base = pattern_similarity<double>(nullptr, pu, pa, mask_u, mask_a, ans, fn);
    // perturb every masked coordinate: question row 2 of pu, row 1 of pa,
    // and answer column 2 everywhere
    auto pu2 = Tensor64::from(pu.shape(),
                              std::vector<double>(pu.values().begin(), pu.values().end()));
    auto pa2 = Tensor64::from(pa.shape(),
                              std::vector<double>(pa.values().begin(), pa.values().end()));
    for (int64_t l = 0; l < layers; ++l) {
      for (int64_t t = 0; t < w; ++t) {
        pu2.values()[(l * m + 2) * w + t] = rng.uniform(-9, 9);
        pa2.values()[(l * n + 1) * w + t] = rng.uniform(-9, 9);
      }
      for (int64_t i = 0; i < m; ++i) pu2.values()[(l * m + i) * w + 2] = rng.uniform(-9, 9);
      for (int64_t j = 0; j < n; ++j) pa2.values()[(l * n + j) * w + 2] = rng.uniform(-9, 9);
    }
    auto other = pattern_similarity<double>(nullptr, pu2, pa2, mask_u, mask_a, ans, fn);
    for (int64_t l = 0; l < layers; ++l)
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) {
          double bv = base.values()[(l * m + i) * n + j];
          double ov = other.values()[(l * m + i) * n + j];
          if (mask_u.values()[i] > 0 && mask_a.values()[j] > 0)
            CHECK(bv == ov);
          else
            CHECK(ov == 0.0);  // masked cells stay exactly zero
        }
  }
}

TEST_CASE("answer-length mismatch is a contract error") {
  auto pu = Tensor64::zeros({1, 1, 2, 3});
  auto pa = Tensor64::zeros({1, 1, 2, 4});
  auto mu = Tensor64::full({1, 2}, 1.0);
  auto ans = Tensor64::full({1, 3}, 1.0);
  try {
    pattern_similarity<double>(nullptr, pu, pa, mu, mu, ans, SimilarityFn::kDot);
    FAIL("expected contract error");
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::kContract);
  }
}

TEST_CASE("pattern similarity passes the gradient oracle for all five functions") {
  Rng rng(31);
  int64_t b = 1, layers = 2, m = 2, n = 3, w = 4;
  auto mask_u = Tensor64::from({b, m}, {1, 1});
  auto mask_a = Tensor64::from({b, n}, {1, 1, 0});
  auto ans = Tensor64::from({b, w}, {1, 1, 1, 0});
  for (auto fn : kAllFns) {
    auto pu = tt::random_tensor<double>(rng, {b, layers, m, w}, -1.5, 1.5);
    auto pa = tt::random_tensor<double>(rng, {b, layers, n, w}, -1.5, 1.5);
    double err_u = finite_diff_check<double>(
        [&](Tape64* t, const Tensor64& v) {
          auto ps = pattern_similarity(t, v, pa, mask_u, mask_a, ans, fn);
          return ops::sum_all(t, ops::mul(t, ps, ps));
        },
        pu, 1e-4);
    double err_a = finite_diff_check<double>(
        [&](Tape64* t, const Tensor64& v) {
          auto ps = pattern_similarity(t, pu, v, mask_u, mask_a, ans, fn);
          return ops::sum_all(t, ops::mul(t, ps, ps));
        },
        pa, 1e-4);
    CAPTURE(static_cast<int>(fn));
    CHECK(err_u < 1e-3);
    CHECK(err_a < 1e-3);
  }
}

TEST_CASE("compress output shape and zero-input behavior") {
  Rng rng(37);
  int64_t b = 3, layers = 2, m = 4, n = 4, h = 8;
  auto params = CompressParams<float>::init(layers, h, rng, 0.2f);
  // zero conv biases per the zero-input check
  for (auto& v : params.conv1_b.values()) v = 0.0f;
  for (auto& v : params.conv2_b.values()) v = 0.0f;
  RunContext<float> ctx;  // infer mode
  auto ps = Tensor::zeros({b, layers, m, n});
  auto mask = Tensor::full({b, m, n}, 1.0f);
  auto va = compress(ctx, ps, params, mask);
  CHECK(va.shape() == Shape{b, h});
  // all-zero input: every batch item lands on the same constant vector
  for (int64_t bi = 1; bi < b; ++bi)
    for (int64_t c = 0; c < h; ++c)
      CHECK(va.values()[bi * h + c] == va.values()[c]);
  // and a different zero batch gives the same constant
  auto ps2 = Tensor::zeros({1, layers, m, n});
  auto va2 = compress(ctx, ps2, params, Tensor::full({1, m, n}, 1.0f));
  for (int64_t c = 0; c < h; ++c) CHECK(va2.values()[c] == va.values()[c]);
}

TEST_CASE("compress stack passes the gradient oracle end to end") {
  Rng rng(41);
  int64_t b = 2, layers = 2, m = 3, n = 3, h = 4;
  auto params = CompressParams<double>::init(layers, h, rng, 0.2);
  auto mask = Tensor64::full({b, m, n}, 1.0);
  mask.values()[0] = 0.0;  // one masked cell
  auto ps = tt::random_tensor<double>(rng, {b, layers, m, n});

  for (Mode mode : {Mode::kTrain, Mode::kInfer}) {
    double err_in = finite_diff_check<double>(
        [&](Tape64* t, const Tensor64& v) {
          RunContext<double> ctx;
          ctx.tape = t;
          ctx.mode = mode;
          auto va = compress(ctx, v, params, mask);
          return ops::sum_all(t, ops::mul(t, va, va));
        },
        ps, 1e-4);
    CHECK(err_in < 1e-3);
  }
  // parameters, train mode
  auto probe = [&](TensorT<double> CompressParams<double>::*field) {
    return finite_diff_check<double>(
        [&](Tape64* t, const Tensor64& v) {
          auto p = params;
          p.*field = v;
          RunContext<double> ctx;
          ctx.tape = t;
          ctx.mode = Mode::kTrain;
          auto va = compress(ctx, ps, p, mask);
          return ops::sum_all(t, ops::mul(t, va, va));
        },
        params.*field, 1e-4);
  };
  CHECK(probe(&CompressParams<double>::conv1_w) < 1e-3);
  CHECK(probe(&CompressParams<double>::conv1_b) < 1e-3);
  CHECK(probe(&CompressParams<double>::conv2_w) < 1e-3);
  CHECK(probe(&CompressParams<double>::conv2_b) < 1e-3);
  // BN parameters sit inside the state structs
  double err_gamma = finite_diff_check<double>(
      [&](Tape64* t, const Tensor64& v) {
        auto p = params;
        p.bn1.gamma = v;
        RunContext<double> ctx;
        ctx.tape = t;
        ctx.mode = Mode::kTrain;
        auto va = compress(ctx, ps, p, mask);
        return ops::sum_all(t, ops::mul(t, va, va));
      },
      params.bn1.gamma, 1e-4);
  CHECK(err_gamma < 1e-3);
  double err_beta = finite_diff_check<double>(
      [&](Tape64* t, const Tensor64& v) {
        auto p = params;
        p.bn2.beta = v;
        RunContext<double> ctx;
        ctx.tape = t;
        ctx.mode = Mode::kTrain;
        auto va = compress(ctx, ps, p, mask);
        return ops::sum_all(t, ops::mul(t, va, va));
      },
      params.bn2.beta, 1e-4);
  CHECK(err_beta < 1e-3);
}
