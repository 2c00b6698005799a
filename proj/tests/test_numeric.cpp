#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "pemed/grad_check.hpp"
#include "pemed/kernels.hpp"
#include "support.hpp"

namespace pemed {
namespace {

using testing::random_tensor;

TEST(Tensor, ShapeAndDataMustAgree) {
  EXPECT_THROW(TensorF({2, 3}, std::vector<float>(5)), Error);
  const TensorF t({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.at(1, 2), 6.0f);
  EXPECT_EQ(t.dim(-1), 3);
  EXPECT_EQ(t.reshaped({3, 2}).at(2, 1), 6.0f);
  EXPECT_THROW((void)t.reshaped({4, 2}), Error);
}

TEST(Var, NonFiniteValuesAreRejected) {
  const VarD a(TensorD({1}, {std::numeric_limits<double>::infinity()}), true);
  EXPECT_THROW(add(a, a), Error);
  try {
    (void)add(a, a);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFinite);
  }
}

TEST(Var, BackwardNeedsScalarLoss) {
  const VarD a(TensorD({2}, {1, 2}), true);
  try {
    backward(scale(a, 2.0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonScalarLoss);
  }
}

TEST(Var, NoGradGuardStopsRecording) {
  const VarD a(TensorD({1}, {3}), true);
  {
    NoGradGuard guard;
    const VarD b = mul(a, a);
    EXPECT_FALSE(b.requires_grad());
  }
  const VarD c = mul(a, a);
  backward(c);
  ASSERT_NE(a.grad(), nullptr);
  EXPECT_DOUBLE_EQ((*a.grad())[0], 6.0);
}

TEST(Matmul, Examples) {
  const VarD eye(TensorD({2, 2}, {1, 0, 0, 1}));
  const VarD m(TensorD({2, 2}, {1, 2, 3, 4}));
  EXPECT_EQ(matmul(eye, m).value(), m.value());
  const VarD col(TensorD({2, 1}, {5, 6}));
  EXPECT_EQ(matmul(m, col).value(), TensorD({2, 1}, {17, 39}));
  std::mt19937_64 rng(1);
  const VarD any(random_tensor<double>({3, 4}, rng));
  EXPECT_EQ(matmul(VarD(TensorD({2, 3})), any).value(), TensorD({2, 4}));
  try {
    (void)matmul(m, any);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
  }
}

TEST(Softmax, Examples) {
  const auto s = softmax_rows(VarD(TensorD({3, 2}, {0, 0, 1, 2, 1000, 0}))).value();
  EXPECT_DOUBLE_EQ(s.at(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(s.at(0, 1), 0.5);
  const double e = std::exp(1.0);
  EXPECT_NEAR(s.at(1, 0), 1.0 / (1.0 + e), 1e-12);
  EXPECT_NEAR(s.at(1, 0), 0.26894, 1e-4);
  EXPECT_NEAR(s.at(1, 1), 0.73106, 1e-4);
  EXPECT_NEAR(s.at(2, 0), 1.0, 1e-6);
  EXPECT_NEAR(s.at(2, 1), 0.0, 1e-6);
}

TEST(Softmax, RowsSumToOneOnRandomInputs) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const Index rows = 1 + trial % 7, cols = 1 + trial % 13;
    const TensorF x = random_tensor<float>({rows, cols}, rng, -50.0, 50.0);
    const TensorF y = softmax_rows(VarF(x)).value();
    for (Index r = 0; r < rows; ++r) {
      double sum = 0;
      for (Index c = 0; c < cols; ++c) sum += y.at(r, c);
      EXPECT_NEAR(sum, 1.0, 1e-6);
    }
  }
}

TEST(Attention, SingleKeyReturnsValue) {
  std::mt19937_64 rng(3);
  for (Index heads : {1, 2, 4}) {
    const AttentionConfig cfg{8, heads, ScaleMode::Dk};
    const VarD q(random_tensor<double>({1, 8}, rng)), k(random_tensor<double>({1, 8}, rng)),
        v(random_tensor<double>({1, 8}, rng));
    const TensorD out = attention(q, k, v, cfg).value();
    for (Index i = 0; i < 8; ++i) EXPECT_NEAR(out[i], v.value()[i], 1e-15);
  }
}

TEST(Attention, TwoTokenClosedForm) {
  const VarD q(TensorD({2, 2}, {1, 0, 0, 1}));
  const VarD v(TensorD({2, 2}, {1, 0, 0, 2}));
  const TensorD out = attention(q, q, v, AttentionConfig{2, 1, ScaleMode::Dk}).value();
  // Scores / d_k: [[0.5, 0], [0, 0.5]].
  const double hi = std::exp(0.5) / (std::exp(0.5) + 1.0), lo = 1.0 - hi;
  const TensorD want({2, 2}, {hi * 1 + lo * 0, hi * 0 + lo * 2, lo * 1 + hi * 0, lo * 0 + hi * 2});
  for (Index i = 0; i < 4; ++i) EXPECT_NEAR(out[i], want[i], 1e-12);

  const TensorD sq = attention(q, q, v, AttentionConfig{2, 1, ScaleMode::SqrtDk}).value();
  const double s = 1.0 / std::sqrt(2.0);
  const double hs = std::exp(s) / (std::exp(s) + 1.0);
  EXPECT_NEAR(sq.at(0, 0), hs, 1e-12);
}

TEST(Attention, MatchesBruteForceAndInvariants) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const Index heads = 1 + trial % 3, d = heads * (1 + trial % 4);
    const Index nq = 1 + trial % 5, nk = 1 + (trial / 5) % 5;
    const bool sqrt_scale = trial % 2 == 1;
    const AttentionConfig cfg{d, heads, sqrt_scale ? ScaleMode::SqrtDk : ScaleMode::Dk};
    const TensorD q = random_tensor<double>({nq, d}, rng, -2, 2), k = random_tensor<double>({nk, d}, rng, -2, 2),
                  v = random_tensor<double>({nk, d}, rng, -2, 2);
    const TensorD out = attention(VarD(q), VarD(k), VarD(v), cfg).value();
    const auto want = testing::attention(testing::to_mat(q), testing::to_mat(k), testing::to_mat(v),
                                         static_cast<int>(heads), sqrt_scale);
    for (Index i = 0; i < nq; ++i) {
      for (Index c = 0; c < d; ++c) {
        EXPECT_NEAR(out.at(i, c), want[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)], 1e-12);
        double lo = v.at(0, c), hi = v.at(0, c);
        for (Index j = 1; j < nk; ++j) {
          lo = std::min(lo, v.at(j, c));
          hi = std::max(hi, v.at(j, c));
        }
        EXPECT_GE(out.at(i, c), lo - 1e-12);
        EXPECT_LE(out.at(i, c), hi + 1e-12);
      }
    }

    // Query permutation equivariance (exact) and key/value permutation invariance.
    std::vector<Index> perm(static_cast<std::size_t>(nq));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    TensorD qp({nq, d});
    for (Index i = 0; i < nq; ++i)
      for (Index c = 0; c < d; ++c) qp.at(i, c) = q.at(perm[static_cast<std::size_t>(i)], c);
    const TensorD outp = attention(VarD(qp), VarD(k), VarD(v), cfg).value();
    for (Index i = 0; i < nq; ++i)
      for (Index c = 0; c < d; ++c) EXPECT_EQ(outp.at(i, c), out.at(perm[static_cast<std::size_t>(i)], c));

    std::vector<Index> kperm(static_cast<std::size_t>(nk));
    std::iota(kperm.begin(), kperm.end(), 0);
    std::shuffle(kperm.begin(), kperm.end(), rng);
    TensorD kp({nk, d}), vp({nk, d});
    for (Index j = 0; j < nk; ++j) {
      for (Index c = 0; c < d; ++c) {
        kp.at(j, c) = k.at(kperm[static_cast<std::size_t>(j)], c);
        vp.at(j, c) = v.at(kperm[static_cast<std::size_t>(j)], c);
      }
    }
    const TensorD outk = attention(VarD(q), VarD(kp), VarD(vp), cfg).value();
    for (Index i = 0; i < out.size(); ++i) EXPECT_NEAR(outk[i], out[i], 1e-12);
  }
}

TEST(Attention, RejectsBadShapes) {
  const VarD a(TensorD({2, 4})), b(TensorD({3, 4})), c(TensorD({2, 3}));
  EXPECT_THROW(attention(a, b, a, AttentionConfig{4, 1}), Error);
  EXPECT_THROW(attention(c, c, c, AttentionConfig{4, 1}), Error);
  EXPECT_THROW(attention(a, a, a, AttentionConfig{4, 3}), Error);
}

TEST(LayerNorm, Examples) {
  const VarD g1(TensorD::full({3}, 1.0)), b0(TensorD({3}));
  const TensorD flat = layer_norm(VarD(TensorD({1, 3}, {5, 5, 5})), g1, b0).value();
  for (double v : flat.data()) EXPECT_NEAR(v, 0.0, 1e-3);

  const TensorD pair =
      layer_norm(VarD(TensorD({1, 2}, {1, -1})), VarD(TensorD::full({2}, 1.0)), VarD(TensorD({2}))).value();
  const double want = 1.0 / std::sqrt(1.0 + 1e-5);
  EXPECT_NEAR(pair[0], want, 1e-12);
  EXPECT_NEAR(pair[0], 0.999995, 1e-5);
  EXPECT_NEAR(pair[1], -0.999995, 1e-5);

  std::mt19937_64 rng(5);
  const TensorD bias = random_tensor<double>({3}, rng);
  const TensorD out = layer_norm(VarD(random_tensor<double>({4, 3}, rng)), VarD(TensorD({3})), VarD(bias)).value();
  for (Index r = 0; r < 4; ++r)
    for (Index c = 0; c < 3; ++c) EXPECT_EQ(out.at(r, c), bias[c]);
  EXPECT_THROW(layer_norm(VarD(TensorD({2, 4})), g1, b0), Error);
}

TEST(Conv2d, Examples) {
  std::mt19937_64 rng(6);
  const TensorD x = random_tensor<double>({1, 4, 5}, rng);
  const TensorD ident = conv2d(VarD(x), VarD(TensorD::full({1, 1, 1, 1}, 1.0)), 1, 0).value();
  EXPECT_EQ(ident.reshaped({1, 4, 5}), x);

  const TensorD ones = conv2d(VarD(TensorD::full({1, 3, 3}, 1.0)), VarD(TensorD::full({1, 1, 3, 3}, 1.0)), 1, 1).value();
  EXPECT_EQ(ones, TensorD({1, 3, 3}, {4, 6, 4, 6, 9, 6, 4, 6, 4}));

  const TensorD zero = conv2d(VarD(x), VarD(TensorD({2, 1, 3, 3})), 1, 1).value();
  EXPECT_EQ(zero, TensorD({2, 4, 5}));

  try {
    (void)conv2d(VarD(TensorD({1, 4, 4})), VarD(TensorD({1, 1, 3, 3})), 2, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BadGeometry);
  }
  try {
    (void)conv2d(VarD(TensorD({2, 4, 4})), VarD(TensorD({1, 1, 3, 3})), 1, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
  }
}

TEST(Linear, Examples) {
  const TensorD out = linear(VarD(TensorD({1, 2}, {1, 2})), VarD(TensorD({2, 1}, {1, 1})), VarD(TensorD({1}, {0.5})))
                          .value();
  EXPECT_DOUBLE_EQ(out[0], 3.5);
  std::mt19937_64 rng(7);
  const TensorD x = random_tensor<double>({3, 4}, rng);
  EXPECT_EQ(linear(VarD(x), VarD(testing::identity(4)), VarD(TensorD({4}))).value(), x);
  const TensorD b = random_tensor<double>({2}, rng);
  const TensorD y = linear(VarD(TensorD({3, 4})), VarD(random_tensor<double>({4, 2}, rng)), VarD(b)).value();
  for (Index r = 0; r < 3; ++r) {
    EXPECT_EQ(y.at(r, 0), b[0]);
    EXPECT_EQ(y.at(r, 1), b[1]);
  }
}

TEST(Pointwise, Examples) {
  const TensorD s = pointwise(VarD(TensorD({3}, {0, 20, -20})), Pointwise::Sigmoid).value();
  EXPECT_DOUBLE_EQ(s[0], 0.5);
  EXPECT_NEAR(s[1], 1.0, 1e-8);
  EXPECT_NEAR(s[2], 0.0, 1e-8);
  EXPECT_EQ(pointwise(VarD(TensorD({2}, {-1, 2})), Pointwise::Relu).value(), TensorD({2}, {0, 2}));
  const TensorD g = pointwise(VarD(TensorD({2}, {0, 1})), Pointwise::Gelu).value();
  EXPECT_DOUBLE_EQ(g[0], 0.0);
  EXPECT_NEAR(g[1], 0.5 * (1 + std::erf(1 / std::sqrt(2.0))), 1e-15);
}

TEST(Bilinear, ConstantGridIsReproducedExactly) {
  TensorD grid = TensorD::full({4 * 4, 3}, 0.37);
  const TensorD up = upsample_bilinear(VarD(grid), 4, 4, 16, 16).value();
  for (double v : up.data()) EXPECT_EQ(v, 0.37);
}

TEST(Kernels, ParallelMatchesReference) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    const Index m = 1 + trial * 7 % 61, k = 1 + trial * 5 % 37, n = 1 + trial * 3 % 43;
    const TensorD a = random_tensor<double>({m, k}, rng), b = random_tensor<double>({k, n}, rng);
    const TensorD at = random_tensor<double>({k, m}, rng), bt = random_tensor<double>({n, k}, rng);
    TensorD c({m, n}), ref({m, n});
    kernels::gemm_nn<double>(a.data(), b.data(), c.data(), m, k, n, false);
    kernels::reference::gemm<double>(a.data(), b.data(), ref.data(), m, k, n, false, false);
    for (Index i = 0; i < c.size(); ++i) EXPECT_NEAR(c[i], ref[i], 1e-12);
    kernels::gemm_nt<double>(a.data(), bt.data(), c.data(), m, k, n, false);
    kernels::reference::gemm<double>(a.data(), bt.data(), ref.data(), m, k, n, false, true);
    for (Index i = 0; i < c.size(); ++i) EXPECT_NEAR(c[i], ref[i], 1e-12);
    kernels::gemm_tn<double>(at.data(), b.data(), c.data(), m, k, n, false);
    kernels::reference::gemm<double>(at.data(), b.data(), ref.data(), m, k, n, true, false);
    for (Index i = 0; i < c.size(); ++i) EXPECT_NEAR(c[i], ref[i], 1e-12);

    TensorD s({m, n}), sref({m, n});
    kernels::softmax_rows<double>(c.data(), s.data(), m, n);
    kernels::reference::softmax_rows<double>(c.data(), sref.data(), m, n);
    for (Index i = 0; i < s.size(); ++i) EXPECT_NEAR(s[i], sref[i], 1e-14);

    const TensorD g = random_tensor<double>({n}, rng), bias = random_tensor<double>({n}, rng);
    TensorD ln({m, n}), lnref({m, n}), mean({m}), rstd({m});
    kernels::layer_norm_forward<double>(c.data(), g.data(), bias.data(), 1e-5, ln.data(), mean.data(), rstd.data(), m,
                                        n);
    kernels::reference::layer_norm_forward<double>(c.data(), g.data(), bias.data(), 1e-5, lnref.data(), m, n);
    for (Index i = 0; i < ln.size(); ++i) EXPECT_NEAR(ln[i], lnref[i], 1e-10);

    const Index h = 2 + trial % 5, w = 2 + trial % 4, ch = 1 + trial % 3;
    const TensorD grid = random_tensor<double>({h * w, ch}, rng);
    const Index oh = h * (1 + trial % 3), ow = w * (1 + trial % 2) + trial % 3;
    TensorD up({oh * ow, ch}), upref({oh * ow, ch});
    kernels::upsample_bilinear_forward<double>(grid.data(), up.data(), h, w, ch, oh, ow);
    kernels::reference::upsample_bilinear_forward<double>(grid.data(), upref.data(), h, w, ch, oh, ow);
    for (Index i = 0; i < up.size(); ++i) EXPECT_NEAR(up[i], upref[i], 1e-12);
  }
}

TEST(Kernels, ConvMatchesReference) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    kernels::ConvGeometry g;
    g.c_in = 1 + trial % 3;
    g.c_out = 1 + trial % 4;
    g.kernel = trial % 3 == 0 ? 1 : 3;
    g.stride = 1 + trial % 2;
    g.pad = g.kernel / 2;
    // Odd extent keeps (H + 2p - k) divisible by the stride.
    g.height = g.width = 5 + 2 * (trial % 3);
    g.validate();
    const TensorD x = random_tensor<double>({g.c_in, g.height, g.width}, rng);
    const TensorD w = random_tensor<double>({g.c_out, g.c_in, g.kernel, g.kernel}, rng);
    TensorD out({g.c_out, g.out_height(), g.out_width()}), ref(out.shape());
    kernels::conv2d_forward<double>(x.data(), w.data(), out.data(), g);
    kernels::reference::conv2d_forward<double>(x.data(), w.data(), ref.data(), g);
    for (Index i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], ref[i], 1e-12);
  }
}

TEST(Kernels, RepeatedCallsAreBitIdentical) {
  std::mt19937_64 rng(10);
  const TensorF a = random_tensor<float>({300, 64}, rng), b = random_tensor<float>({64, 200}, rng);
  TensorF c1({300, 200}), c2({300, 200});
  kernels::gemm_nn<float>(a.data(), b.data(), c1.data(), 300, 64, 200, false);
  kernels::gemm_nn<float>(a.data(), b.data(), c2.data(), 300, 64, 200, false);
  EXPECT_EQ(c1, c2);
}

TEST(GradCheck, LinearSum) {
  std::mt19937_64 rng(11);
  const auto r = grad_check(
      [](const std::vector<VarD>& in) { return sum(linear(in[0], in[1], in[2])); },
      {random_tensor<double>({3, 4}, rng), random_tensor<double>({4, 2}, rng), random_tensor<double>({2}, rng)});
  EXPECT_LT(r.max_relative_error, 1e-4);
}

TEST(GradCheck, ConstantLossHasZeroGradients) {
  std::mt19937_64 rng(12);
  const auto r = grad_check([](const std::vector<VarD>&) { return VarD(TensorD({1}, {4.2})); },
                            {random_tensor<double>({3}, rng)});
  EXPECT_EQ(r.max_relative_error, 0.0);
  EXPECT_EQ(r.analytic, 0.0);
  EXPECT_EQ(r.numeric, 0.0);
}

TEST(GradCheck, NonScalarLossIsRejected) {
  try {
    (void)grad_check([](const std::vector<VarD>& in) { return in[0]; }, {TensorD({2})});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonScalarLoss);
  }
}

// Weighted sum so the loss is sensitive to every output element.
VarD weighted(const VarD& x, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(mul(x, VarD(random_tensor<double>(x.shape(), rng))));
}

TEST(GradCheck, Attention) {
  std::mt19937_64 rng(13);
  for (auto mode : {ScaleMode::Dk, ScaleMode::SqrtDk}) {
    const auto r = grad_check(
        [mode](const std::vector<VarD>& in) {
          return weighted(attention(in[0], in[1], in[2], AttentionConfig{4, 2, mode}), 1);
        },
        {random_tensor<double>({3, 4}, rng), random_tensor<double>({3, 4}, rng), random_tensor<double>({3, 4}, rng)});
    EXPECT_LT(r.max_relative_error, 1e-3);
  }
  const auto plain = grad_check(
      [](const std::vector<VarD>& in) { return sum(attention(in[0], in[1], in[2], AttentionConfig{4, 1})); },
      {random_tensor<double>({3, 4}, rng), random_tensor<double>({3, 4}, rng), random_tensor<double>({3, 4}, rng)});
  EXPECT_LT(plain.max_relative_error, 1e-3);
}

TEST(GradCheck, LayerNormConvLinearPointwise) {
  std::mt19937_64 rng(14);
  EXPECT_LT(grad_check([](const std::vector<VarD>& in) { return weighted(layer_norm(in[0], in[1], in[2]), 2); },
                       {random_tensor<double>({3, 5}, rng), random_tensor<double>({5}, rng),
                        random_tensor<double>({5}, rng)})
                .max_relative_error,
            1e-3);
  EXPECT_LT(grad_check([](const std::vector<VarD>& in) { return weighted(conv2d(in[0], in[1], 2, 1), 3); },
                       {random_tensor<double>({2, 5, 5}, rng), random_tensor<double>({3, 2, 3, 3}, rng)})
                .max_relative_error,
            1e-3);
  EXPECT_LT(grad_check([](const std::vector<VarD>& in) { return weighted(conv2d(in[0], in[1], 1, 0), 4); },
                       {random_tensor<double>({3, 4, 4}, rng), random_tensor<double>({2, 3, 1, 1}, rng)})
                .max_relative_error,
            1e-3);
  for (auto f : {Pointwise::Sigmoid, Pointwise::Gelu}) {
    EXPECT_LT(grad_check([f](const std::vector<VarD>& in) { return weighted(pointwise(in[0], f), 5); },
                         {random_tensor<double>({4, 3}, rng, -3, 3)})
                  .max_relative_error,
              1e-3);
  }
}

TEST(GradCheck, LayoutOps) {
  std::mt19937_64 rng(15);
  EXPECT_LT(grad_check(
                [](const std::vector<VarD>& in) {
                  const VarD up = upsample_bilinear(in[0], 2, 3, 5, 7);
                  const VarD patches = patchify(reshape(in[1], {16, 2}), 4, 4, 2);
                  return add(weighted(up, 6), weighted(concat_cols(std::vector<VarD>{patches, patches}), 7));
                },
                {random_tensor<double>({6, 2}, rng), random_tensor<double>({32}, rng)})
                .max_relative_error,
            1e-3);
  EXPECT_LT(grad_check(
                [](const std::vector<VarD>& in) {
                  return weighted(chw_to_tokens(tokens_to_chw(concat_rows(std::vector<VarD>{in[0], in[0]}), 2, 3)), 8);
                },
                {random_tensor<double>({3, 4}, rng)})
                .max_relative_error,
            1e-3);
}

}  // namespace
}  // namespace pemed
