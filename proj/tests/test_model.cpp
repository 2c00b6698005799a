#include <gtest/gtest.h>

#include <numeric>

#include "pemed/checkpoint.hpp"
#include "pemed/grad_check.hpp"
#include "pemed/network.hpp"
#include "pemed/palm.hpp"
#include "support.hpp"

namespace pemed {
namespace {

using testing::Mat;
using testing::random_tensor;

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no pemed::Error thrown";
  return ErrorCode::InvalidArgument;
}

PromptMaps random_maps(const ModelConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Index s = cfg.input_size;
  const TensorF image = random_tensor<float>({1, s, s}, rng, 0.0, 1.0);
  const TensorF prev = random_tensor<float>({1, s, s}, rng, 0.0, 1.0);
  const std::vector<Click> clicks{{s / 3, s / 2, Polarity::Positive, 1},
                                  {2 * s / 3, s / 4, Polarity::Negative, 2},
                                  {s / 2, 3 * s / 4, Polarity::Positive, 3}};
  return assemble_input(image, clicks, prev, cfg.disk_radius);
}

Mat theta(const ParamStore<double>& p, const std::string& site, const Mat& q_src, const Mat& kv_src, int heads) {
  return testing::theta(p, site, q_src, kv_src, heads);
}

Mat norm(const ParamStore<double>& p, const std::string& prefix, const Mat& x) { return testing::norm(p, prefix, x); }

void expect_close(const TensorD& got, const Mat& want, double tol) {
  const auto rows = static_cast<Index>(want.size());
  ASSERT_EQ(got.shape(), (Shape{rows, static_cast<Index>(want[0].size())}));
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < got.dim(1); ++c)
      EXPECT_NEAR(got.at(r, c), want[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)], tol);
}

template <class T>
void expect_equal(const Tensor<T>& a, const Tensor<T>& b, double tol = 0.0) {
  ASSERT_EQ(a.shape(), b.shape());
  for (Index i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "element " << i;
}

// PALM tests use the tiny width so random configurations stay within d <= 8.
ModelConfig palm_config(Index d, Index heads) {
  ModelConfig cfg = testing::tiny_config();
  cfg.stage_dims = {d, 8, 8, 8};
  cfg.stage_heads = {heads, 2, 2, 4};
  return cfg;
}

TEST(Config, DefaultsAndSchedule) {
  const ModelConfig cfg;
  cfg.validate();
  EXPECT_EQ(cfg.total_stride(), 32);
  for (int s = 0; s < 4; ++s) EXPECT_EQ(cfg.stage_grid(s), 64 >> (s + 2));
  EXPECT_EQ(cfg.stage_attention(3).d_k(), 16);
}

TEST(Config, RejectsBrokenInvariants) {
  ModelConfig heads;
  heads.stage_heads[1] = 3;
  EXPECT_THROW(heads.validate(), Error);
  ModelConfig size;
  size.input_size = 48;
  EXPECT_EQ(code_of([&] { size.validate(); }), ErrorCode::BadGeometry);
}

TEST(Config, KeyValueRoundTrip) {
  ModelConfig cfg = testing::tiny_config();
  cfg.flags = ablation_flags("Baseline-IO");
  cfg.attention_scale = ScaleMode::SqrtDk;
  cfg.tsip_centered = true;
  const ModelConfig back = ModelConfig::from_key_values(parse_key_values(format_key_values(cfg.to_key_values())));
  EXPECT_EQ(back, cfg);
  EXPECT_EQ(ModelConfig::full_scale_preset(224).input_size, 224);
  ModelConfig::full_scale_preset(256).validate();
}

TEST(Config, AblationFlags) {
  EXPECT_EQ(ablation_flags("Baseline"), (ModuleFlags{false, false, false, false}));
  EXPECT_EQ(ablation_flags("Baseline-SL"), (ModuleFlags{true, false, false, false}));
  EXPECT_EQ(ablation_flags("Baseline-T"), (ModuleFlags{false, false, false, true}));
  EXPECT_EQ(ablation_flags("Ours"), (ModuleFlags{true, true, true, true}));
  EXPECT_FALSE(ablation_flags("Baseline-O").palm_i);
  EXPECT_TRUE(ablation_flags("Baseline-O").palm_o);
  EXPECT_THROW((void)ablation_flags("Nope"), Error);
}

TEST(Params, InitIsSeededAndValidated) {
  const ModelConfig cfg = testing::tiny_config();
  const auto a = init_params(cfg, 7), b = init_params(cfg, 7), c = init_params(cfg, 8);
  bool differs = false;
  for (const auto& [name, v] : a) {
    EXPECT_EQ(v.value(), b[name].value());
    differs |= !(v.value() == c[name].value());
  }
  EXPECT_TRUE(differs);
  validate_params(cfg, a);
  ModelConfig wider = cfg;
  wider.fusion_dim = 8;
  EXPECT_EQ(code_of([&] { validate_params(wider, a); }), ErrorCode::InvalidArgument);
}

TEST(PatchEmbed, ShapesAndZeroInput) {
  ModelConfig cfg = testing::tiny_config();
  const auto p = init_params(cfg, 1).cast<double>();
  const TensorF plane({1, 8, 8});
  const VarD tokens = planes_to_tokens<double>({&plane, &plane, &plane, &plane});
  const VarD out = patch_embed(p, "stage0.embed", tokens, 8, 8, 4);
  EXPECT_EQ(out.shape(), (Shape{4, 4}));
  for (double v : out.value().data()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(code_of([&] { (void)patch_embed(p, "stage0.embed", tokens, 8, 8, 3); }), ErrorCode::BadGeometry);

  const ModelConfig def;
  const auto pd = init_params(def, 1);
  const TensorF big({1, 64, 64});
  EXPECT_EQ(patch_embed(pd, "stage0.embed", planes_to_tokens<float>({&big, &big, &big, &big}), 64, 64, 4).shape(),
            (Shape{256, 16}));
}

TEST(TransformerBlock, ZeroOutputProjectionsGiveIdentity) {
  const ModelConfig cfg = testing::small_config();
  auto p = testing::jittered_params<double>(cfg, 2);
  for (const char* n : {"stage1.block0.attn.out.w", "stage1.block0.attn.out.b", "stage1.block0.mlp.fc2.w",
                        "stage1.block0.mlp.fc2.b"}) {
    p.at(n).leaf_value() = TensorD(p[n].shape());
  }
  const NetworkD net(cfg, p);
  std::mt19937_64 rng(3);
  for (Index n : {1, 5, 16}) {
    const TensorD x = random_tensor<double>({n, 8}, rng);
    EXPECT_EQ(net.transformer_block(VarD(x), 1, 0).value(), x);
  }
  EXPECT_EQ(code_of([&] { (void)net.transformer_block(VarD(TensorD({2, 16})), 1, 0); }), ErrorCode::ShapeMismatch);
}

TEST(TransformerBlock, SingleTokenMatchesOracle) {
  const ModelConfig cfg = testing::small_config();
  const auto p = testing::jittered_params<double>(cfg, 4);
  const NetworkD net(cfg, p);
  std::mt19937_64 rng(5);
  const TensorD x = random_tensor<double>({1, 8}, rng);
  // One key: attention returns the value projection of the normed token.
  const Mat xm = testing::to_mat(x);
  const Mat normed = norm(p, "stage0.block0.norm1", xm);
  auto dense = [&](const std::string& n, const Mat& m) {
    return testing::dense(m, testing::to_mat(p[n + ".w"].value()), testing::to_vec(p[n + ".b"].value()));
  };
  const Mat attended = dense("stage0.block0.attn.v", normed);
  const Mat h = testing::add(xm, dense("stage0.block0.attn.out", attended));
  Mat hidden = dense("stage0.block0.mlp.fc1", norm(p, "stage0.block0.norm2", h));
  for (auto& row : hidden)
    for (double& v : row) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
  expect_close(net.transformer_block(VarD(x), 0, 0).value(), testing::add(h, dense("stage0.block0.mlp.fc2", hidden)),
               1e-12);
}

TEST(Network, ResolutionScheduleAtDefaults) {
  const ModelConfig cfg;
  const NetworkF net(cfg, init_params(cfg, 1));
  NoGradGuard guard;
  for (bool palm : {false, true}) {
    const auto feats = net.forward_encoder(random_maps(cfg, 2), palm);
    EXPECT_EQ(feats.stages[0].shape(), (Shape{256, 16}));
    EXPECT_EQ(feats.stages[1].shape(), (Shape{64, 32}));
    EXPECT_EQ(feats.stages[2].shape(), (Shape{16, 64}));
    EXPECT_EQ(feats.stages[3].shape(), (Shape{4, 128}));
    const VarF fused = net.fuse_multilevel(feats);
    EXPECT_EQ(fused.shape(), (Shape{256, 64}));
    EXPECT_EQ(net.decode_mask(fused).shape(), (Shape{1, 64, 64}));
  }
  EXPECT_EQ(code_of([&] { (void)net.forward(random_maps(testing::tiny_config(), 1)); }), ErrorCode::ShapeMismatch);
}

TEST(Network, ForwardIsDeterministic) {
  const ModelConfig cfg = testing::small_config();
  const NetworkF net(cfg, init_params(cfg, 3));
  const PromptMaps maps = random_maps(cfg, 4);
  EXPECT_EQ(net.forward(maps).value(), net.forward(maps).value());
}

TEST(Network, DecoderIsPositionFree) {
  const ModelConfig cfg = testing::small_config();
  const auto p = testing::jittered_params<double>(cfg, 5);
  const NetworkD net(cfg, p);
  const Index g = cfg.stage_grid(0);
  std::mt19937_64 rng(6);
  const TensorD row = random_tensor<double>({1, cfg.fusion_dim}, rng);
  TensorD fused({g * g, cfg.fusion_dim});
  for (Index i = 0; i < g * g; ++i)
    for (Index c = 0; c < cfg.fusion_dim; ++c) fused.at(i, c) = row[c];
  const TensorD logits = net.decode_mask(VarD(fused)).value();
  for (Index i = 1; i < logits.size(); ++i) EXPECT_NEAR(logits[i], logits[0], 1e-12);

  const NetworkD fresh(cfg, init_params(cfg, 5).cast<double>());
  const TensorD zero = fresh.decode_mask(VarD(TensorD({g * g, cfg.fusion_dim}))).value();
  EXPECT_EQ(zero, TensorD({1, cfg.input_size, cfg.input_size}));
  EXPECT_EQ(code_of([&] { (void)fresh.decode_mask(VarD(TensorD({g * g, cfg.fusion_dim + 1}))); }),
            ErrorCode::ShapeMismatch);
}

TEST(Network, DisabledModulesIgnoreTheirParameters) {
  for (const char* variant : {"Baseline", "Baseline-SL", "Baseline-T"}) {
    ModelConfig cfg = testing::small_config();
    cfg.flags = ablation_flags(variant);
    const auto p = testing::jittered_params<float>(cfg, 7);
    auto q = p.cast<float>();
    std::mt19937_64 rng(8);
    for (auto& [name, v] : q) {
      if (name.starts_with("palm.")) v.leaf_value() = random_tensor<float>(v.shape(), rng, -3, 3);
    }
    const PromptMaps maps = random_maps(cfg, 9);
    EXPECT_EQ(NetworkF(cfg, p).forward(maps).value(), NetworkF(cfg, q).forward(maps).value()) << variant;
  }
}

TEST(Network, PalmChangesOutputWhenEnabled) {
  ModelConfig cfg = testing::small_config();
  const auto p = testing::jittered_params<float>(cfg, 7);
  auto q = p.cast<float>();
  q.at("palm.embed_global.proj.w").leaf_value()[0] += 1.0f;
  const PromptMaps maps = random_maps(cfg, 9);
  EXPECT_FALSE(NetworkF(cfg, p).forward(maps).value() == NetworkF(cfg, q).forward(maps).value());
}

TEST(Palm, EmbedShapesAndZeroMaps) {
  const ModelConfig cfg;
  const auto p = init_params(cfg, 1);
  const auto m = palm_i_embed(p, cfg, random_maps(cfg, 1));
  for (const VarF* v : {&m.pos, &m.neg, &m.global}) EXPECT_EQ(v->shape(), (Shape{256, 16}));

  const TensorF zero({1, 64, 64});
  const auto z = palm_i_embed(p, cfg, PromptMaps{zero, zero, zero, zero});
  for (const VarF* v : {&z.pos, &z.neg, &z.global})
    for (float x : v->value().data()) EXPECT_EQ(x, 0.0f);
}

TEST(Palm, SwappingMapsSwapsEmbeddingsUnderSharedWeights) {
  const ModelConfig cfg = testing::small_config();
  auto p = testing::jittered_params<double>(cfg, 10);
  for (const char* suffix : {".proj.w", ".proj.b", ".norm.g", ".norm.b"}) {
    p.at(std::string("palm.embed_neg") + suffix).leaf_value() = p[std::string("palm.embed_pos") + suffix].value();
  }
  const PromptMaps maps = random_maps(cfg, 11);
  const PromptMaps swapped{maps.image, maps.neg, maps.pos, maps.prev};
  const auto a = palm_i_embed(p, cfg, maps), b = palm_i_embed(p, cfg, swapped);
  EXPECT_EQ(a.pos.value(), b.neg.value());
  EXPECT_EQ(a.neg.value(), b.pos.value());
}

TEST(Palm, SingleTokenPassthroughWithIdentityProjections) {
  const ModelConfig cfg = palm_config(4, 1);
  auto p = testing::jittered_params<double>(cfg, 12);
  for (const char* site : {"palm.enhance_pos", "palm.enhance_neg", "palm.enhance_global", "palm.feature_pos",
                           "palm.feature_neg", "palm.out_image", "palm.out_prompt"}) {
    testing::set_identity_projections(p, site, 4);
  }
  std::mt19937_64 rng(13);
  const VarD mp(random_tensor<double>({1, 4}, rng)), mn(random_tensor<double>({1, 4}, rng)),
      mg(random_tensor<double>({1, 4}, rng));
  const auto [ph, nh] = enhance_prompts(p, cfg, mp, mn);
  EXPECT_EQ(ph.value(), mp.value());
  EXPECT_EQ(nh.value(), mn.value());
  EXPECT_EQ(enhance_global(p, cfg, mg).value(), mg.value());
  const TensorD ep = prompt_feature(p, cfg, mp, mn, mg).value();
  for (Index i = 0; i < 4; ++i) EXPECT_NEAR(ep[i], 2.0 * mg.value()[i], 1e-15);

  const Mat f = testing::to_mat(mp.value()), e = testing::to_mat(mg.value());
  const Mat want =
      testing::add(testing::add(testing::add(f, norm(p, "palm.norm_image", e)), e), norm(p, "palm.norm_prompt", f));
  expect_close(palm_o(p, cfg, mp, mg).value(), want, 1e-12);
}

TEST(Palm, SymmetricCollapses) {
  const ModelConfig cfg = palm_config(8, 2);
  auto p = testing::jittered_params<double>(cfg, 14);
  testing::set_identity_projections(p, "palm.enhance_pos", 8);
  testing::set_identity_projections(p, "palm.enhance_neg", 8);
  std::mt19937_64 rng(15);
  const VarD m(random_tensor<double>({3, 8}, rng));
  const auto [ph, nh] = enhance_prompts(p, cfg, m, m);
  EXPECT_EQ(ph.value(), nh.value());

  // Equal queries: with identical feature sites the two terms coincide.
  for (const char* suffix : {".q.w", ".q.b", ".k.w", ".k.b", ".v.w", ".v.b"}) {
    p.at(std::string("palm.feature_neg") + suffix).leaf_value() = p[std::string("palm.feature_pos") + suffix].value();
  }
  const VarD g(random_tensor<double>({3, 8}, rng));
  const TensorD ep = prompt_feature(p, cfg, m, m, g).value();
  const TensorD single = attention_site(p, "palm.feature_pos", m, g, cfg.stage_attention(0)).value();
  for (Index i = 0; i < ep.size(); ++i) EXPECT_EQ(ep[i], 2.0 * single[i]);

  // Identical rows in, identical rows out.
  TensorD rows({4, 8});
  const TensorD r = random_tensor<double>({8}, rng);
  for (Index i = 0; i < 4; ++i)
    for (Index c = 0; c < 8; ++c) rows.at(i, c) = r[c];
  const TensorD out = enhance_global(p, cfg, VarD(rows)).value();
  for (Index i = 1; i < 4; ++i)
    for (Index c = 0; c < 8; ++c) EXPECT_EQ(out.at(i, c), out.at(0, c));
}

TEST(Palm, MatchesFloat64Oracles) {
  std::mt19937_64 rng(16);
  int cases = 0;
  for (Index d : {2, 4, 8}) {
    for (Index heads : {1, 2}) {
      const ModelConfig cfg = palm_config(d, heads);
      for (Index n = 1; n <= 4; ++n) {
        const auto p = testing::jittered_params<double>(cfg, static_cast<std::uint64_t>(100 + cases), 0.5);
        const int h = static_cast<int>(heads);
        const TensorD a = random_tensor<double>({n, d}, rng, -2, 2), b = random_tensor<double>({n, d}, rng, -2, 2),
                      c = random_tensor<double>({n, d}, rng, -2, 2);
        const Mat am = testing::to_mat(a), bm = testing::to_mat(b), cm = testing::to_mat(c);

        const auto [ph, nh] = enhance_prompts(p, cfg, VarD(a), VarD(b));
        expect_close(ph.value(), theta(p, "palm.enhance_pos", bm, am, h), 1e-5);
        expect_close(nh.value(), theta(p, "palm.enhance_neg", am, bm, h), 1e-5);
        expect_close(enhance_global(p, cfg, VarD(c)).value(), theta(p, "palm.enhance_global", cm, cm, h), 1e-5);
        expect_close(prompt_feature(p, cfg, VarD(a), VarD(b), VarD(c)).value(),
                     testing::add(theta(p, "palm.feature_pos", am, cm, h), theta(p, "palm.feature_neg", bm, cm, h)),
                     1e-5);
        const Mat ep = testing::add(
            testing::add(testing::add(am, norm(p, "palm.norm_image", theta(p, "palm.out_image", am, bm, h))), bm),
            norm(p, "palm.norm_prompt", theta(p, "palm.out_prompt", bm, am, h)));
        expect_close(palm_o(p, cfg, VarD(a), VarD(b)).value(), ep, 1e-5);
        ++cases;
      }
    }
  }
  EXPECT_EQ(cases, 24);
}

TEST(Palm, JointPermutationEquivariance) {
  const ModelConfig cfg = palm_config(8, 2);
  const auto p = testing::jittered_params<double>(cfg, 17);
  std::mt19937_64 rng(18);
  const TensorD f = random_tensor<double>({4, 8}, rng), e = random_tensor<double>({4, 8}, rng);
  const std::vector<Index> perm{2, 0, 3, 1};
  TensorD fp({4, 8}), epm({4, 8});
  for (Index i = 0; i < 4; ++i)
    for (Index c = 0; c < 8; ++c) {
      fp.at(i, c) = f.at(perm[static_cast<std::size_t>(i)], c);
      epm.at(i, c) = e.at(perm[static_cast<std::size_t>(i)], c);
    }
  const TensorD out = palm_o(p, cfg, VarD(f), VarD(e)).value();
  const TensorD outp = palm_o(p, cfg, VarD(fp), VarD(epm)).value();
  for (Index i = 0; i < 4; ++i)
    for (Index c = 0; c < 8; ++c) EXPECT_NEAR(outp.at(i, c), out.at(perm[static_cast<std::size_t>(i)], c), 1e-14);
}

TEST(Palm, ShapeMismatch) {
  const ModelConfig cfg = palm_config(4, 1);
  const auto p = init_params(cfg, 1).cast<double>();
  const VarD a(TensorD({2, 4})), b(TensorD({3, 4}));
  EXPECT_EQ(code_of([&] { (void)enhance_prompts(p, cfg, a, b); }), ErrorCode::ShapeMismatch);
  EXPECT_EQ(code_of([&] { (void)prompt_feature(p, cfg, a, a, b); }), ErrorCode::ShapeMismatch);
  EXPECT_EQ(code_of([&] { (void)palm_o(p, cfg, a, b); }), ErrorCode::ShapeMismatch);
}

TEST(Palm, GradientThroughModule) {
  const ModelConfig cfg = testing::tiny_config();
  const auto base = testing::jittered_params<double>(cfg, 19);
  std::vector<std::string> names;
  std::vector<TensorD> inputs;
  for (const auto& [name, v] : base) {
    if (name.starts_with("palm.")) {
      names.push_back(name);
      inputs.push_back(v.value());
    }
  }
  std::mt19937_64 rng(20);
  inputs.push_back(random_tensor<double>({64, 4}, rng));
  const PromptMaps maps = random_maps(cfg, 21);
  const TensorD weights = random_tensor<double>({64, 4}, rng);
  const auto r = grad_check(
      [&](const std::vector<VarD>& in) {
        ParamStore<double> p = base.cast<double>();
        for (std::size_t i = 0; i < names.size(); ++i) p.at(names[i]) = in[i];
        return sum(mul(palm_forward(p, cfg, maps, in.back()), VarD(weights)));
      },
      inputs, {1e-4, 1e-3, 8});
  EXPECT_LT(r.max_relative_error, 1e-3) << "input " << r.worst_input << " element " << r.worst_element;
}

TEST(Network, EndToEndGradientEveryGroup) {
  const ModelConfig cfg = testing::tiny_config();
  const auto base = testing::jittered_params<double>(cfg, 22);
  std::vector<std::string> names;
  std::vector<TensorD> inputs;
  for (const auto& [name, v] : base) {
    names.push_back(name);
    inputs.push_back(v.value());
  }
  const PromptMaps maps = random_maps(cfg, 23);
  std::mt19937_64 rng(24);
  const TensorD o_prev = random_tensor<double>({1, 32, 32}, rng, -2, 2);
  const TensorD weights = random_tensor<double>({1, 32, 32}, rng);
  const auto r = grad_check(
      [&](const std::vector<VarD>& in) {
        ParamStore<double> p = base.cast<double>();
        for (std::size_t i = 0; i < names.size(); ++i) p.at(names[i]) = in[i];
        const NetworkD net(cfg, std::move(p));
        return sum(mul(net.tsip_combine(net.forward(maps), VarD(o_prev)), VarD(weights)));
      },
      inputs, {1e-4, 1e-3, 3});
  EXPECT_LT(r.max_relative_error, 1e-3) << names[r.worst_input] << " element " << r.worst_element;
}

TEST(Tsip, CombineFormula) {
  ModelConfig cfg = testing::tiny_config();
  const auto p = testing::jittered_params<double>(cfg, 25);
  std::mt19937_64 rng(26);
  const TensorD raw = random_tensor<double>({1, 32, 32}, rng, -3, 3), prev = random_tensor<double>({1, 32, 32}, rng, -3, 3);
  for (bool centered : {false, true}) {
    cfg.tsip_centered = centered;
    const NetworkD net(cfg, p);
    EXPECT_EQ(net.tsip_combine(VarD(raw), std::nullopt).value(), raw);
    const TensorD out = net.tsip_combine(VarD(raw), VarD(prev)).value();
    const Mat w1 = testing::to_mat(p["tsip.fc1.w"].value()), w2 = testing::to_mat(p["tsip.fc2.w"].value());
    const auto b1 = testing::to_vec(p["tsip.fc1.b"].value()), b2 = testing::to_vec(p["tsip.fc2.b"].value());
    for (Index i = 0; i < raw.size(); ++i) {
      Mat hidden = testing::dense({{prev[i]}}, w1, b1);
      for (double& v : hidden[0]) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
      const double z = testing::dense(hidden, w2, b2)[0][0];
      const double want = raw[i] + 1.0 / (1.0 + std::exp(-z)) - (centered ? 0.5 : 0.0);
      ASSERT_NEAR(out[i], want, 1e-12);
    }
    EXPECT_EQ(code_of([&] { (void)net.tsip_combine(VarD(raw), VarD(TensorD({1, 16, 16}))); }),
              ErrorCode::ShapeMismatch);
  }
}

TEST(Checkpoint, RoundTripIsExact) {
  ModelConfig cfg = testing::small_config();
  cfg.flags = ablation_flags("Baseline-T");
  const auto p = testing::jittered_params<float>(cfg, 27);
  const Bytes bytes = serialize_checkpoint(cfg, p);
  ASSERT_GE(bytes.size(), 8u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "PEMD");
  EXPECT_EQ(bytes[4], 1);
  const Checkpoint ck = deserialize_checkpoint(bytes);
  EXPECT_EQ(ck.config, cfg);
  for (const auto& [name, v] : p) EXPECT_EQ(ck.params[name].value(), v.value());
  EXPECT_EQ(serialize_checkpoint(ck.config, ck.params), bytes);
  EXPECT_EQ(checkpoint_id(bytes).size(), 16u);
}

TEST(Checkpoint, RejectsCorruptBytes) {
  const ModelConfig cfg = testing::tiny_config();
  Bytes bytes = serialize_checkpoint(cfg, init_params(cfg, 1));
  Bytes magic = bytes;
  magic[0] = 'X';
  EXPECT_EQ(code_of([&] { (void)deserialize_checkpoint(magic); }), ErrorCode::DecodeError);
  Bytes cut(bytes.begin(), bytes.end() - 3);
  EXPECT_EQ(code_of([&] { (void)deserialize_checkpoint(cut); }), ErrorCode::DecodeError);
  Bytes version = bytes;
  version[4] = 9;
  EXPECT_EQ(code_of([&] { (void)deserialize_checkpoint(version); }), ErrorCode::UnsupportedFormat);
}

}  // namespace
}  // namespace pemed
