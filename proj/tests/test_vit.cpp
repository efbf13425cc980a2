// ViT building blocks: position-table properties against a direct recompute,
// patchify layout oracle and exact round trip, cross-attention == self-attention
// on identical inputs (bitwise), attention-row normalization, parameter
// registry checks, and finite-difference gradchecks of a block and of the full
// encoder in 64-bit.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <set>
#include <vector>

#include "pfv/gradcheck.hpp"
#include "pfv/ops.hpp"
#include "pfv/rng.hpp"
#include "pfv/vit.hpp"

using pfv::ParamList;
using pfv::Rng;
using pfv::Shape;
using pfv::Tensor;
using pfv::ViTConfig;

namespace {

template <typename T>
Tensor<T> rand_tensor(const Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0,
                      bool requires_grad = false) {
  std::vector<T> v((size_t)pfv::shape_numel(s));
  for (auto& x : v) x = (T)rng.uniform(lo, hi);
  return Tensor<T>::from_data(s, std::move(v), requires_grad);
}

template <typename T>
bool bits_equal(const std::vector<T>& a, const std::vector<T>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0;
}

int64_t linear_params(int in, int out) { return (int64_t)in * out + out; }
int64_t block_params(int w) {
  return 2 * (2 * (int64_t)w)                             // two affine layer norms
         + 4 * linear_params(w, w)                        // q, k, v, out projections
         + linear_params(w, 4 * w) + linear_params(4 * w, w);  // MLP
}

}  // namespace

TEST_CASE("presets expose expected geometry and bad configs are rejected") {
  const auto& nano = pfv::find_preset("nano");
  CHECK(nano.enc.image_size == 32);
  CHECK(nano.enc.patch_size == 4);
  CHECK(nano.enc.width == 64);
  CHECK(nano.enc.num_patches() == 64);
  CHECK(nano.enc.head_dim() == 16);
  CHECK(nano.dec.width == 32);
  CHECK(nano.dec.depth == 2);
  const auto& b = pfv::find_preset("B");
  CHECK(b.enc.width == 768);
  CHECK(b.enc.depth == 12);
  CHECK(b.dec.width == 512);
  CHECK(b.enc.num_patches() == 196);
  // head dimension stays 64 across encoder presets, 32 across decoder presets
  for (const char* name : {"T", "S", "B"}) {
    const auto& p = pfv::find_preset(name);
    CHECK(p.enc.head_dim() == 64);
    CHECK(p.dec.head_dim() == 32);
    CHECK(p.enc.role == "encoder");
    CHECK(p.dec.role == "decoder");
  }
  for (const auto& name : pfv::preset_names()) {
    const auto& p = pfv::find_preset(name);
    p.enc.validate("test");
    p.dec.validate("test");
  }
  CHECK_THROWS_WITH_AS(pfv::find_preset("huge"), doctest::Contains("unknown model preset"),
                       std::runtime_error);

  ViTConfig bad;
  bad.image_size = 30;  // not divisible by patch 4
  CHECK_THROWS_WITH_AS(bad.validate("test"), doctest::Contains("divisible by patch_size"),
                       std::runtime_error);
  ViTConfig badh;
  badh.heads = 5;
  CHECK_THROWS_WITH_AS(badh.validate("test"), doctest::Contains("divisible by heads"),
                       std::runtime_error);
}

TEST_CASE("position table matches direct recompute, rows distinct, never trained") {
  const int grid = 8, width = 64, q = width / 4;
  auto table = pfv::sincos_pos_table<double>(grid, width);
  REQUIRE((int)table.size() == grid * grid * width);

  // direct recompute, independently indexed
  for (int y = 0; y < grid; ++y)
    for (int x = 0; x < grid; ++x)
      for (int i = 0; i < q; ++i) {
        double w = std::pow(10000.0, -(double)i / q);
        size_t base = ((size_t)y * grid + x) * width;
        CHECK(table[base + i] == std::sin(y * w));
        CHECK(table[base + q + i] == std::cos(y * w));
        CHECK(table[base + 2 * q + i] == std::sin(x * w));
        CHECK(table[base + 3 * q + i] == std::cos(x * w));
      }

  // every grid position gets a distinct embedding row
  for (int r1 = 0; r1 < grid * grid; ++r1)
    for (int r2 = r1 + 1; r2 < grid * grid; ++r2) {
      double maxdiff = 0;
      for (int c = 0; c < width; ++c)
        maxdiff = std::max(maxdiff,
                           std::fabs(table[(size_t)r1 * width + c] - table[(size_t)r2 * width + c]));
      CHECK(maxdiff > 1e-3);
    }

  // deterministic
  CHECK(bits_equal(table, pfv::sincos_pos_table<double>(grid, width)));

  // the table is a constant in the encoder: no grad, not in the registry
  Rng rng(7);
  pfv::VitEncoder<double> enc;
  enc.init(pfv::find_preset("tiny8").enc, rng);
  CHECK_FALSE(enc.pos.requires_grad());
  ParamList<double> params;
  enc.collect("enc", params);
  for (const auto& p : params) CHECK(p.tensor.node() != enc.pos.node());
}

TEST_CASE("patchify layout matches loop oracle and unpatchify inverts it bitwise") {
  Rng rng(11);
  const int B = 2, H = 8, P = 4, g = H / P;
  auto img = rand_tensor<double>({B, H, H, 3}, rng);
  auto tok = pfv::patchify(img, P);
  REQUIRE(tok.shape() == Shape{B, g * g, P * P * 3});

  for (int b = 0; b < B; ++b)
    for (int py = 0; py < g; ++py)
      for (int px = 0; px < g; ++px)
        for (int dy = 0; dy < P; ++dy)
          for (int dx = 0; dx < P; ++dx)
            for (int c = 0; c < 3; ++c) {
              double want = img.data()[(size_t)(((b * H + py * P + dy) * H + px * P + dx) * 3 + c)];
              double got = tok.data()[(size_t)(((b * g + py) * g + px) * (P * P * 3) +
                                               (dy * P + dx) * 3 + c)];
              CHECK(std::memcmp(&want, &got, sizeof(double)) == 0);
            }

  auto back = pfv::unpatchify(tok, H, P);
  CHECK(back.shape() == img.shape());
  CHECK(bits_equal(back.data(), img.data()));

  CHECK_THROWS_WITH_AS(pfv::patchify(rand_tensor<double>({1, 8, 8, 1}, rng), 4),
                       doctest::Contains("patchify"), std::runtime_error);
}

TEST_CASE("cross-attention on two identical-value tensors equals self-attention bitwise") {
  Rng rng(31);
  pfv::TransformerBlock<float> blk;
  blk.init(16, 4, rng);
  auto x = rand_tensor<float>({2, 5, 16}, rng);
  auto x_twin = x.detach();  // separate node, same values
  auto self_out = blk.forward(x);
  auto cross_same_node = blk.forward(x, x);
  auto cross_twin = blk.forward(x, x_twin);
  CHECK(bits_equal(self_out.data(), cross_same_node.data()));
  CHECK(bits_equal(self_out.data(), cross_twin.data()));

  // genuinely different key/value stream changes the output
  auto other = rand_tensor<float>({2, 7, 16}, rng);
  auto cross = blk.forward(x, other);
  CHECK(cross.shape() == Shape{2, 5, 16});
  CHECK_FALSE(bits_equal(cross.data(), self_out.data()));
}

TEST_CASE("single-head block matches an independent loop computation") {
  Rng rng(33);
  const int W = 4, T = 3, HID = 4 * W;
  pfv::TransformerBlock<double> blk;
  blk.init(W, /*heads=*/1, rng);
  // randomize the pieces init leaves at neutral values (biases, norm affine)
  for (auto* t : {&blk.ln_attn.gamma, &blk.ln_attn.beta, &blk.ln_mlp.gamma, &blk.ln_mlp.beta,
                  &blk.wq.b, &blk.wk.b, &blk.wv.b, &blk.wo.b, &blk.fc1.b, &blk.fc2.b})
    for (auto& v : t->data()) v = rng.uniform(-0.5, 0.5);
  auto x = rand_tensor<double>({1, T, W}, rng);
  auto got = blk.forward(x);

  // independent recomputation with plain loops
  auto ln = [](const std::vector<double>& in, const std::vector<double>& g,
               const std::vector<double>& be, int rows, int cols) {
    std::vector<double> out((size_t)rows * cols);
    for (int r = 0; r < rows; ++r) {
      double mean = 0, var = 0;
      for (int c = 0; c < cols; ++c) mean += in[(size_t)r * cols + c];
      mean /= cols;
      for (int c = 0; c < cols; ++c) {
        double d = in[(size_t)r * cols + c] - mean;
        var += d * d;
      }
      var /= cols;
      double rstd = 1.0 / std::sqrt(var + 1e-6);
      for (int c = 0; c < cols; ++c)
        out[(size_t)r * cols + c] = (in[(size_t)r * cols + c] - mean) * rstd * g[(size_t)c] + be[(size_t)c];
    }
    return out;
  };
  auto lin = [](const std::vector<double>& in, const pfv::Linear<double>& l, int rows, int ic,
                int oc) {
    std::vector<double> out((size_t)rows * oc);
    for (int r = 0; r < rows; ++r)
      for (int o = 0; o < oc; ++o) {
        double s = l.b.data()[(size_t)o];
        for (int i = 0; i < ic; ++i)
          s += in[(size_t)r * ic + i] * l.w.data()[(size_t)i * oc + o];
        out[(size_t)r * oc + o] = s;
      }
    return out;
  };

  auto xn = ln(x.data(), blk.ln_attn.gamma.data(), blk.ln_attn.beta.data(), T, W);
  auto Q = lin(xn, blk.wq, T, W, W), K = lin(xn, blk.wk, T, W, W), V = lin(xn, blk.wv, T, W, W);
  std::vector<double> attn((size_t)T * T);
  for (int i = 0; i < T; ++i) {
    double mx = -1e300;
    std::vector<double> row(T);
    for (int j = 0; j < T; ++j) {
      double s = 0;
      for (int d = 0; d < W; ++d) s += Q[(size_t)i * W + d] * K[(size_t)j * W + d];
      row[(size_t)j] = s / std::sqrt((double)W);
      mx = std::max(mx, row[(size_t)j]);
    }
    double denom = 0;
    for (int j = 0; j < T; ++j) denom += std::exp(row[(size_t)j] - mx);
    for (int j = 0; j < T; ++j) attn[(size_t)i * T + j] = std::exp(row[(size_t)j] - mx) / denom;
  }
  std::vector<double> ctx((size_t)T * W, 0.0);
  for (int i = 0; i < T; ++i)
    for (int j = 0; j < T; ++j)
      for (int d = 0; d < W; ++d)
        ctx[(size_t)i * W + d] += attn[(size_t)i * T + j] * V[(size_t)j * W + d];
  auto proj = lin(ctx, blk.wo, T, W, W);
  std::vector<double> x1((size_t)T * W);
  for (size_t i = 0; i < x1.size(); ++i) x1[i] = x.data()[i] + proj[i];
  auto x1n = ln(x1, blk.ln_mlp.gamma.data(), blk.ln_mlp.beta.data(), T, W);
  auto h1 = lin(x1n, blk.fc1, T, W, HID);
  for (auto& v : h1) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
  auto h2 = lin(h1, blk.fc2, T, HID, W);
  for (int i = 0; i < T * W; ++i)
    CHECK(got.data()[(size_t)i] == doctest::Approx(x1[(size_t)i] + h2[(size_t)i]).epsilon(1e-12));
}

TEST_CASE("attention is set-equivariant over key/value token order") {
  Rng rng(34);
  pfv::TransformerBlock<double> blk;
  blk.init(16, 4, rng);
  auto q = rand_tensor<double>({2, 4, 16}, rng);
  auto kv = rand_tensor<double>({2, 6, 16}, rng);

  pfv::IndexMat perm;
  perm.rows = 2;
  perm.cols = 6;
  std::vector<int> p0{3, 0, 5, 1, 4, 2}, p1{2, 4, 0, 5, 3, 1};
  perm.idx.insert(perm.idx.end(), p0.begin(), p0.end());
  perm.idx.insert(perm.idx.end(), p1.begin(), p1.end());
  auto kv_shuffled = pfv::gather_rows(kv, perm);

  auto out = blk.forward(q, kv);
  auto out_shuffled = blk.forward(q, kv_shuffled);
  REQUIRE(out.shape() == out_shuffled.shape());
  for (size_t i = 0; i < out.data().size(); ++i)
    CHECK(out.data()[i] == doctest::Approx(out_shuffled.data()[i]).epsilon(1e-12));
}

TEST_CASE("attention weights are row-normalized and shaped (B*heads, Tq, Tk)") {
  Rng rng(32);
  pfv::TransformerBlock<double> blk;
  blk.init(16, 4, rng);
  blk.capture_attention = true;
  auto q = rand_tensor<double>({2, 5, 16}, rng);
  auto kv = rand_tensor<double>({2, 9, 16}, rng);
  (void)blk.forward(q, kv);
  REQUIRE(blk.last_attention.defined());
  REQUIRE(blk.last_attention.shape() == Shape{2 * 4, 5, 9});
  const auto& a = blk.last_attention.data();
  for (int row = 0; row < 2 * 4 * 5; ++row) {
    double s = 0;
    for (int c = 0; c < 9; ++c) {
      double v = a[(size_t)row * 9 + c];
      CHECK(v >= 0.0);
      s += v;
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("encoder forward: shapes, determinism, visible-subset path, grads everywhere") {
  Rng rng(41);
  pfv::VitEncoder<float> enc;
  enc.init(pfv::find_preset("nano").enc, rng);
  auto img = rand_tensor<float>({2, 32, 32, 3}, rng, 0.0, 1.0);

  auto out1 = enc.forward(img);
  REQUIRE(out1.shape() == Shape{2, 65, 64});
  auto out2 = enc.forward(img);
  CHECK(bits_equal(out1.data(), out2.data()));

  // visible-only path used by masked pre-training: embed, keep a subset, encode
  auto tokens = enc.embed_patches(img);
  REQUIRE(tokens.shape() == Shape{2, 64, 64});
  pfv::IndexMat keep;
  keep.rows = 2;
  keep.cols = 16;
  for (int b = 0; b < 2; ++b)
    for (int v = 0; v < 16; ++v) keep.idx.push_back(4 * v + (b ? 1 : 0));
  auto sub = pfv::gather_rows(tokens, keep);
  auto enc_sub = enc.encode_tokens(sub);
  CHECK(enc_sub.shape() == Shape{2, 17, 64});

  // one backward touches every parameter
  ParamList<float> params;
  enc.collect("enc", params);
  std::set<std::string> names;
  for (const auto& p : params) names.insert(p.name);
  CHECK(names.size() == params.size());  // unique names
  CHECK(names.count("enc.patch_embed.w") == 1);
  CHECK(names.count("enc.cls") == 1);
  CHECK(names.count("enc.stack.blocks.3.fc2.b") == 1);
  CHECK(names.count("enc.stack.final_ln.gamma") == 1);

  int64_t total = 0;
  for (const auto& p : params) total += p.tensor.numel();
  const int64_t expect = linear_params(48, 64) + 64 + 4 * block_params(64) + 2 * 64;
  CHECK(total == expect);

  pfv::mean_all(out1).backward();
  for (const auto& p : params) {
    REQUIRE_MESSAGE(!p.tensor.grad().empty(), p.name);
    float mx = 0;
    for (float gv : p.tensor.grad()) mx = std::max(mx, std::fabs(gv));
    CHECK_MESSAGE(mx > 0.0f, p.name);
  }
}

TEST_CASE("decoder: pixel head shapes, class-token drop, unpatchify composition") {
  Rng rng(61);
  const auto& preset = pfv::find_preset("nano");
  pfv::VitDecoder<float> dec;
  dec.init(preset.dec, rng);

  auto tokens = rand_tensor<float>({2, 64, 32}, rng);
  auto px = dec.forward(tokens);
  REQUIRE(px.shape() == Shape{2, 64, 48});
  auto img = pfv::unpatchify(px, 32, 4);
  CHECK(img.shape() == Shape{2, 32, 32, 3});

  // with a class-token row the output is the same composition minus row 0
  auto with_cls = rand_tensor<float>({2, 65, 32}, rng);
  auto got = dec.forward(with_cls);
  REQUIRE(got.shape() == Shape{2, 64, 48});
  auto expect = dec.pixel_head.forward(pfv::slice(dec.stack.forward(with_cls), 1, 1, 64));
  CHECK(bits_equal(got.data(), expect.data()));

  CHECK_THROWS_WITH_AS(dec.forward(rand_tensor<float>({2, 63, 32}, rng)),
                       doctest::Contains("VitDecoder"), std::runtime_error);

  // mask token bank: replicated learned token + fixed positions
  pfv::MaskTokenBank<float> bank;
  bank.init(/*grid=*/8, /*width=*/32, rng);
  auto grid = bank.grid_tokens(3);
  REQUIRE(grid.shape() == Shape{3, 64, 32});
  auto table = pfv::sincos_pos_table<float>(8, 32);
  for (int b = 0; b < 3; ++b)
    for (int n = 0; n < 64; ++n)
      for (int c = 0; c < 32; ++c) {
        float want = bank.m.data()[(size_t)c] + table[(size_t)n * 32 + c];
        CHECK(grid.data()[(size_t)((b * 64 + n) * 32 + c)] == want);
      }
  CHECK_FALSE(bank.pos.requires_grad());
  ParamList<float> bank_params;
  bank.collect("bank", bank_params);
  REQUIRE(bank_params.size() == 1);
  CHECK(bank_params[0].name == "bank.m");
}

TEST_CASE("224px preset towers produce the standard token geometry") {
  pfv::NoGradGuard ng;
  Rng rng(62);
  pfv::VitEncoder<float> enc;
  enc.init(pfv::find_preset("B").enc, rng);
  auto img = Tensor<float>::zeros({1, 224, 224, 3});
  auto z = enc.forward(img);
  CHECK(z.shape() == Shape{1, 197, 768});

  pfv::VitDecoder<float> dec;
  dec.init(pfv::find_preset("B").dec, rng);
  auto px = dec.forward(rand_tensor<float>({1, 196, 512}, rng));
  CHECK(px.shape() == Shape{1, 196, 768});  // 3 * 16 * 16 pixels per patch
  CHECK(pfv::unpatchify(px, 224, 16).shape() == Shape{1, 224, 224, 3});
}

TEST_CASE("fixed seed reproduces weights and outputs bitwise across instances") {
  auto run = []() {
    Rng rng(99);
    pfv::VitEncoder<float> enc;
    enc.init(pfv::find_preset("tiny8").enc, rng);
    auto img = Tensor<float>::zeros({1, 8, 8, 3});
    return enc.forward(img);
  };
  auto a = run();
  auto b = run();
  CHECK(bits_equal(a.data(), b.data()));
}

TEST_CASE("transformer block passes finite-difference gradcheck (64-bit)") {
  Rng rng(51);
  pfv::TransformerBlock<double> blk;
  blk.init(8, 2, rng);
  auto x = rand_tensor<double>({1, 3, 8}, rng, -0.8, 0.8, /*requires_grad=*/true);
  auto proj = rand_tensor<double>({1, 3, 8}, rng);

  ParamList<double> params;
  blk.collect("blk", params);
  params.push_back({"x", x});

  auto loss = [&]() { return pfv::mean_all(pfv::mul(blk.forward(x), proj)); };
  // Through a full block some q/k gradients are ~1e-8 while other coordinates
  // sit on visible softmax/layer-norm curvature; no single step size clears
  // 1e-6 for both, so use the wider step for low rounding noise and Richardson
  // extrapolation to cancel its truncation term.
  pfv::GradCheckOptions opt;
  opt.eps = 2e-4;
  opt.richardson = true;
  auto report = pfv::grad_check<double>(loss, params, opt);
  INFO(report.to_text());
  CHECK(report.all_pass);
}

TEST_CASE("full encoder passes finite-difference gradcheck (64-bit)") {
  Rng rng(52);
  pfv::VitEncoder<double> enc;
  enc.init(pfv::find_preset("tiny8").enc, rng);
  auto img = rand_tensor<double>({1, 8, 8, 3}, rng, 0.0, 1.0, /*requires_grad=*/true);
  auto proj = rand_tensor<double>({1, 5, 8}, rng);

  ParamList<double> params;
  enc.collect("enc", params);
  params.push_back({"img", img});

  auto loss = [&]() { return pfv::mean_all(pfv::mul(enc.forward(img), proj)); };
  pfv::GradCheckOptions opt;
  opt.eps = 2e-4;  // with Richardson; see block gradcheck above
  opt.richardson = true;
  opt.max_coords = 40;
  auto report = pfv::grad_check<double>(loss, params, opt);
  INFO(report.to_text());
  CHECK(report.all_pass);
}
