#pragma once

#include <string>
#include <vector>

#include "pfv/ops.hpp"
#include "pfv/rng.hpp"
#include "pfv/tensor.hpp"

namespace pfv {

// Geometry of one transformer tower (encoder or decoder side).
struct ViTConfig {
  int image_size = 32;
  int patch_size = 4;
  int width = 64;  // token embedding dimension
  int depth = 4;
  int heads = 4;
  std::string role = "encoder";  // "encoder" | "decoder", descriptive

  int grid() const { return image_size / patch_size; }
  int num_patches() const { return grid() * grid(); }
  int patch_dim() const { return patch_size * patch_size * 3; }
  int head_dim() const { return width / heads; }
  void validate(const std::string& who) const;
};

struct ModelPreset {
  std::string name;
  ViTConfig enc;
  ViTConfig dec;
};

// Available presets: tiny8 (gradcheck-size), nano (32px toy), T, S, B
// (224px, patch 16, standard tower sizes).
const ModelPreset& find_preset(const std::string& name);
std::vector<std::string> preset_names();

// Fixed 2D sin/cos position table of shape (grid*grid, width), laid out in
// four quarters [sin(y w_i) | cos(y w_i) | sin(x w_i) | cos(x w_i)] with
// w_i = 10000^(-i/(width/4)). Never trained. width must be divisible by 4.
template <typename T>
std::vector<T> sincos_pos_table(int grid, int width);

// Fresh grad-requiring leaf filled from rng.trunc_normal(stddev).
template <typename T>
Tensor<T> trunc_normal_tensor(const Shape& shape, Rng& rng, double stddev);

// (B,H,W,3) -> (B, N, P*P*3), patches row-major, pixels row-major within a
// patch, channel fastest; unpatchify is the exact inverse.
template <typename T>
Tensor<T> patchify(const Tensor<T>& images, int patch_size);
template <typename T>
Tensor<T> unpatchify(const Tensor<T>& tokens, int image_size, int patch_size);

template <typename T>
struct Linear {
  Tensor<T> w;  // (in, out)
  Tensor<T> b;  // (out)
  void init(int in, int out, Rng& rng, double stddev = 0.02);
  Tensor<T> forward(const Tensor<T>& x) const { return add(matmul(x, w), b); }
  void collect(const std::string& prefix, ParamList<T>& out);
};

template <typename T>
struct LayerNormP {
  Tensor<T> gamma, beta;
  double eps = 1e-6;
  void init(int dim);
  Tensor<T> forward(const Tensor<T>& x) const {
    return add(mul(layer_norm_lastdim(x, (T)eps), gamma), beta);
  }
  void collect(const std::string& prefix, ParamList<T>& out);
};

// Pre-norm transformer block. forward(q, kv) is cross-attention with queries
// from q and keys/values from kv; one shared layer norm feeds both streams,
// so forward(x, x) is exactly self-attention (bitwise, not just numerically).
template <typename T>
struct TransformerBlock {
  int width = 0, heads = 0;
  LayerNormP<T> ln_attn, ln_mlp;
  Linear<T> wq, wk, wv, wo;
  Linear<T> fc1, fc2;  // MLP, hidden = 4x width

  void init(int width, int heads, Rng& rng);
  Tensor<T> forward(const Tensor<T>& q_tokens, const Tensor<T>& kv_tokens) const;
  Tensor<T> forward(const Tensor<T>& x) const { return forward(x, x); }
  void collect(const std::string& prefix, ParamList<T>& out);

  // Test hook: when set, stores the last attention weights (B*heads, Tq, Tk).
  mutable bool capture_attention = false;
  mutable Tensor<T> last_attention;
};

template <typename T>
struct BlockStack {
  std::vector<TransformerBlock<T>> blocks;
  LayerNormP<T> final_ln;
  void init(int width, int heads, int depth, Rng& rng);
  Tensor<T> forward(Tensor<T> x) const;
  void collect(const std::string& prefix, ParamList<T>& out);
};

// Patch embedding + class token + fixed position table + block stack.
// The class token carries no positional term.
template <typename T>
struct VitEncoder {
  ViTConfig cfg;
  Linear<T> patch_embed;
  Tensor<T> cls;  // (1,1,width), learned
  Tensor<T> pos;  // (N,width), fixed sin/cos, excluded from parameters
  BlockStack<T> stack;

  void init(const ViTConfig& c, Rng& rng);
  // patchify + embed + add positions (no class token yet): (B,N,width)
  Tensor<T> embed_patches(const Tensor<T>& images) const;
  // prepend class token and run the tower: (B,n,width) -> (B,1+n,width)
  Tensor<T> encode_tokens(const Tensor<T>& tokens) const;
  Tensor<T> forward(const Tensor<T>& images) const {
    return encode_tokens(embed_patches(images));
  }
  void collect(const std::string& prefix, ParamList<T>& out);
};

// Decoder tower: blocks at decoder width plus a linear pixel head producing
// one patch-pixel vector (3*P*P) per patch token. An input with one extra
// leading row (a class token) is accepted; that row is dropped from the pixel
// output.
template <typename T>
struct VitDecoder {
  ViTConfig cfg;
  BlockStack<T> stack;
  Linear<T> pixel_head;  // width -> 3*P*P

  void init(const ViTConfig& c, Rng& rng);
  // (B, N or N+1, width) -> (B, N, 3*P*P)
  Tensor<T> forward(const Tensor<T>& tokens) const;
  void collect(const std::string& prefix, ParamList<T>& out);
};

// Learned mask token plus the fixed decoder-width position table; decoding a
// masked sequence starts from this token replicated across the patch grid.
template <typename T>
struct MaskTokenBank {
  Tensor<T> m;    // (1,1,width), learned
  Tensor<T> pos;  // (N,width), fixed sin/cos, excluded from parameters
  void init(int grid, int width, Rng& rng);
  // (B, N, width): position-coded mask token at every grid slot.
  Tensor<T> grid_tokens(int batch) const;
  void collect(const std::string& prefix, ParamList<T>& out);
};

}  // namespace pfv
