#include "pfv/vit.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace pfv {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

std::string cat(const std::string& prefix, const char* leaf) {
  return prefix.empty() ? std::string(leaf) : prefix + "." + leaf;
}

}  // namespace

template <typename T>
Tensor<T> trunc_normal_tensor(const Shape& shape, Rng& rng, double stddev) {
  std::vector<T> v((size_t)shape_numel(shape));
  for (auto& x : v) x = (T)rng.trunc_normal(stddev);
  return Tensor<T>::from_data(shape, std::move(v), /*requires_grad=*/true);
}

void ViTConfig::validate(const std::string& who) const {
  char buf[160];
  auto die = [&](const char* what) {
    std::snprintf(buf, sizeof(buf), "%s: %s (image=%d patch=%d width=%d depth=%d heads=%d)",
                  who.c_str(), what, image_size, patch_size, width, depth, heads);
    fail(buf);
  };
  if (image_size <= 0 || patch_size <= 0 || width <= 0 || depth <= 0 || heads <= 0)
    die("all config fields must be positive");
  if (image_size % patch_size != 0) die("image_size must be divisible by patch_size");
  if (width % heads != 0) die("width must be divisible by heads");
  if (width % 4 != 0) die("width must be divisible by 4 for the sin/cos position table");
}

namespace {
const ModelPreset kPresets[] = {
    // Gradcheck-sized: small enough for finite differences in double.
    {"tiny8", {8, 4, 8, 1, 2, "encoder"}, {8, 4, 8, 1, 2, "decoder"}},
    // 32x32 toy images.
    {"nano", {32, 4, 64, 4, 4, "encoder"}, {32, 4, 32, 2, 4, "decoder"}},
    // 224x224, standard tower sizes (head dim 64 encoder / 32 decoder).
    {"T", {224, 16, 192, 12, 3, "encoder"}, {224, 16, 128, 8, 4, "decoder"}},
    {"S", {224, 16, 384, 12, 6, "encoder"}, {224, 16, 256, 8, 8, "decoder"}},
    {"B", {224, 16, 768, 12, 12, "encoder"}, {224, 16, 512, 8, 16, "decoder"}},
};
}  // namespace

const ModelPreset& find_preset(const std::string& name) {
  for (const auto& p : kPresets)
    if (p.name == name) return p;
  std::string known;
  for (const auto& p : kPresets) known += (known.empty() ? "" : ", ") + p.name;
  fail("unknown model preset '" + name + "' (known: " + known + ")");
}

std::vector<std::string> preset_names() {
  std::vector<std::string> out;
  for (const auto& p : kPresets) out.push_back(p.name);
  return out;
}

template <typename T>
std::vector<T> sincos_pos_table(int grid, int width) {
  if (grid <= 0 || width <= 0 || width % 4 != 0)
    fail("sincos_pos_table: need grid > 0 and width divisible by 4");
  const int q = width / 4;
  std::vector<T> table((size_t)grid * grid * width);
  for (int y = 0; y < grid; ++y) {
    for (int x = 0; x < grid; ++x) {
      T* row = table.data() + ((size_t)y * grid + x) * width;
      for (int i = 0; i < q; ++i) {
        const double w = std::pow(10000.0, -(double)i / (double)q);
        row[i] = (T)std::sin(y * w);
        row[q + i] = (T)std::cos(y * w);
        row[2 * q + i] = (T)std::sin(x * w);
        row[3 * q + i] = (T)std::cos(x * w);
      }
    }
  }
  return table;
}

template <typename T>
Tensor<T> patchify(const Tensor<T>& images, int patch_size) {
  if (images.rank() != 4 || images.dim(3) != 3)
    fail("patchify: expected images (B,H,W,3), got " + shape_str(images.shape()));
  const int b = images.dim(0), h = images.dim(1), w = images.dim(2), p = patch_size;
  if (h != w || p <= 0 || h % p != 0)
    fail("patchify: image must be square with side divisible by patch_size");
  const int g = h / p;
  Tensor<T> t = reshape(images, {b, g, p, g, p, 3});
  t = permute(t, {0, 1, 3, 2, 4, 5});  // (B, gy, gx, py, px, 3)
  return reshape(t, {b, g * g, p * p * 3});
}

template <typename T>
Tensor<T> unpatchify(const Tensor<T>& tokens, int image_size, int patch_size) {
  const int p = patch_size, g = image_size / patch_size;
  if (tokens.rank() != 3 || tokens.dim(1) != g * g || tokens.dim(2) != p * p * 3)
    fail("unpatchify: expected tokens (B," + std::to_string(g * g) + "," +
         std::to_string(p * p * 3) + "), got " + shape_str(tokens.shape()));
  const int b = tokens.dim(0);
  Tensor<T> t = reshape(tokens, {b, g, g, p, p, 3});
  t = permute(t, {0, 1, 3, 2, 4, 5});  // (B, gy, py, gx, px, 3)
  return reshape(t, {b, image_size, image_size, 3});
}

template <typename T>
void Linear<T>::init(int in, int out, Rng& rng, double stddev) {
  w = trunc_normal_tensor<T>({in, out}, rng, stddev);
  b = Tensor<T>::zeros({out}, /*requires_grad=*/true);
}

template <typename T>
void Linear<T>::collect(const std::string& prefix, ParamList<T>& out) {
  out.push_back({cat(prefix, "w"), w});
  out.push_back({cat(prefix, "b"), b});
}

template <typename T>
void LayerNormP<T>::init(int dim) {
  gamma = Tensor<T>::from_data({dim}, std::vector<T>((size_t)dim, (T)1), true);
  beta = Tensor<T>::zeros({dim}, /*requires_grad=*/true);
}

template <typename T>
void LayerNormP<T>::collect(const std::string& prefix, ParamList<T>& out) {
  out.push_back({cat(prefix, "gamma"), gamma});
  out.push_back({cat(prefix, "beta"), beta});
}

template <typename T>
void TransformerBlock<T>::init(int width_, int heads_, Rng& rng) {
  width = width_;
  heads = heads_;
  if (width % heads != 0) fail("TransformerBlock: width must be divisible by heads");
  ln_attn.init(width);
  ln_mlp.init(width);
  wq.init(width, width, rng);
  wk.init(width, width, rng);
  wv.init(width, width, rng);
  wo.init(width, width, rng);
  fc1.init(width, 4 * width, rng);
  fc2.init(4 * width, width, rng);
}

template <typename T>
Tensor<T> TransformerBlock<T>::forward(const Tensor<T>& q_tokens,
                                       const Tensor<T>& kv_tokens) const {
  if (q_tokens.rank() != 3 || kv_tokens.rank() != 3 || q_tokens.dim(2) != width ||
      kv_tokens.dim(2) != width || q_tokens.dim(0) != kv_tokens.dim(0))
    fail("TransformerBlock: expected (B,Tq," + std::to_string(width) + ") and (B,Tk," +
         std::to_string(width) + "), got " + shape_str(q_tokens.shape()) + " and " +
         shape_str(kv_tokens.shape()));
  const int b = q_tokens.dim(0), tq = q_tokens.dim(1), tk = kv_tokens.dim(1);
  const int dh = width / heads;

  Tensor<T> qn = ln_attn.forward(q_tokens);
  // Same-node inputs reuse the normalized tensor, so self-attention is the
  // cross-attention path verbatim rather than a numerically-equal twin.
  Tensor<T> kvn = (q_tokens.node() == kv_tokens.node()) ? qn : ln_attn.forward(kv_tokens);

  auto split_heads = [&](const Tensor<T>& x, int t) {
    // (B,T,W) -> (B*heads, T, Dh)
    Tensor<T> y = reshape(x, {b, t, heads, dh});
    y = permute(y, {0, 2, 1, 3});
    return reshape(y, {b * heads, t, dh});
  };
  Tensor<T> qh = split_heads(wq.forward(qn), tq);
  Tensor<T> kh = split_heads(wk.forward(kvn), tk);
  Tensor<T> vh = split_heads(wv.forward(kvn), tk);

  Tensor<T> scores = bmm(qh, permute(kh, {0, 2, 1}));       // (B*H, Tq, Tk)
  scores = mul_scalar(scores, (T)(1.0 / std::sqrt((double)dh)));
  Tensor<T> attn = softmax_lastdim(scores);
  if (capture_attention) last_attention = attn.detach();
  Tensor<T> ctx = bmm(attn, vh);                            // (B*H, Tq, Dh)

  ctx = reshape(ctx, {b, heads, tq, dh});
  ctx = permute(ctx, {0, 2, 1, 3});
  ctx = reshape(ctx, {b, tq, width});

  Tensor<T> x = add(q_tokens, wo.forward(ctx));
  Tensor<T> h = fc2.forward(gelu(fc1.forward(ln_mlp.forward(x))));
  return add(x, h);
}

template <typename T>
void TransformerBlock<T>::collect(const std::string& prefix, ParamList<T>& out) {
  ln_attn.collect(cat(prefix, "ln_attn"), out);
  wq.collect(cat(prefix, "wq"), out);
  wk.collect(cat(prefix, "wk"), out);
  wv.collect(cat(prefix, "wv"), out);
  wo.collect(cat(prefix, "wo"), out);
  ln_mlp.collect(cat(prefix, "ln_mlp"), out);
  fc1.collect(cat(prefix, "fc1"), out);
  fc2.collect(cat(prefix, "fc2"), out);
}

template <typename T>
void BlockStack<T>::init(int width, int heads, int depth, Rng& rng) {
  blocks.assign((size_t)depth, TransformerBlock<T>{});
  for (auto& blk : blocks) blk.init(width, heads, rng);
  final_ln.init(width);
}

template <typename T>
Tensor<T> BlockStack<T>::forward(Tensor<T> x) const {
  for (const auto& blk : blocks) x = blk.forward(x);
  return final_ln.forward(x);
}

template <typename T>
void BlockStack<T>::collect(const std::string& prefix, ParamList<T>& out) {
  for (size_t i = 0; i < blocks.size(); ++i)
    blocks[i].collect(cat(prefix, ("blocks." + std::to_string(i)).c_str()), out);
  final_ln.collect(cat(prefix, "final_ln"), out);
}

template <typename T>
void VitEncoder<T>::init(const ViTConfig& c, Rng& rng) {
  c.validate("VitEncoder");
  cfg = c;
  patch_embed.init(cfg.patch_dim(), cfg.width, rng);
  cls = trunc_normal_tensor<T>({1, 1, cfg.width}, rng, 0.02);
  pos = Tensor<T>::from_data({cfg.num_patches(), cfg.width},
                             sincos_pos_table<T>(cfg.grid(), cfg.width));
  stack.init(cfg.width, cfg.heads, cfg.depth, rng);
}

template <typename T>
Tensor<T> VitEncoder<T>::embed_patches(const Tensor<T>& images) const {
  Tensor<T> tokens = patch_embed.forward(patchify(images, cfg.patch_size));
  return add(tokens, pos);  // (N,W) broadcasts over the batch
}

template <typename T>
Tensor<T> VitEncoder<T>::encode_tokens(const Tensor<T>& tokens) const {
  if (tokens.rank() != 3 || tokens.dim(2) != cfg.width)
    fail("VitEncoder::encode_tokens: expected (B,n," + std::to_string(cfg.width) + "), got " +
         shape_str(tokens.shape()));
  Tensor<T> c = broadcast_to(cls, {tokens.dim(0), 1, cfg.width});
  return stack.forward(concat(c, tokens, /*axis=*/1));
}

template <typename T>
void VitEncoder<T>::collect(const std::string& prefix, ParamList<T>& out) {
  patch_embed.collect(cat(prefix, "patch_embed"), out);
  out.push_back({cat(prefix, "cls"), cls});
  stack.collect(cat(prefix, "stack"), out);
}

template <typename T>
void VitDecoder<T>::init(const ViTConfig& c, Rng& rng) {
  c.validate("VitDecoder");
  cfg = c;
  stack.init(cfg.width, cfg.heads, cfg.depth, rng);
  pixel_head.init(cfg.width, cfg.patch_dim(), rng);
}

template <typename T>
Tensor<T> VitDecoder<T>::forward(const Tensor<T>& tokens) const {
  const int n = cfg.num_patches();
  if (tokens.rank() != 3 || tokens.dim(2) != cfg.width ||
      (tokens.dim(1) != n && tokens.dim(1) != n + 1))
    fail("VitDecoder: expected (B," + std::to_string(n) + " or " + std::to_string(n + 1) + "," +
         std::to_string(cfg.width) + "), got " + shape_str(tokens.shape()));
  Tensor<T> h = stack.forward(tokens);
  if (tokens.dim(1) == n + 1) h = slice(h, /*axis=*/1, /*start=*/1, /*len=*/n);
  return pixel_head.forward(h);
}

template <typename T>
void VitDecoder<T>::collect(const std::string& prefix, ParamList<T>& out) {
  stack.collect(cat(prefix, "stack"), out);
  pixel_head.collect(cat(prefix, "pixel_head"), out);
}

template <typename T>
void MaskTokenBank<T>::init(int grid, int width, Rng& rng) {
  m = trunc_normal_tensor<T>({1, 1, width}, rng, 0.02);
  pos = Tensor<T>::from_data({grid * grid, width}, sincos_pos_table<T>(grid, width));
}

template <typename T>
Tensor<T> MaskTokenBank<T>::grid_tokens(int batch) const {
  const int n = pos.dim(0), w = pos.dim(1);
  return add(broadcast_to(m, {batch, n, w}), pos);
}

template <typename T>
void MaskTokenBank<T>::collect(const std::string& prefix, ParamList<T>& out) {
  out.push_back({cat(prefix, "m"), m});
}

#define PFV_VIT_INSTANTIATE(T)                                                     \
  template std::vector<T> sincos_pos_table<T>(int, int);                           \
  template Tensor<T> trunc_normal_tensor<T>(const Shape&, Rng&, double);           \
  template Tensor<T> patchify<T>(const Tensor<T>&, int);                           \
  template Tensor<T> unpatchify<T>(const Tensor<T>&, int, int);                    \
  template struct Linear<T>;                                                       \
  template struct LayerNormP<T>;                                                   \
  template struct TransformerBlock<T>;                                             \
  template struct BlockStack<T>;                                                   \
  template struct VitEncoder<T>;                                                   \
  template struct VitDecoder<T>;                                                   \
  template struct MaskTokenBank<T>;

PFV_VIT_INSTANTIATE(float)
PFV_VIT_INSTANTIATE(double)

}  // namespace pfv
