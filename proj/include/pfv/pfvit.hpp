#pragma once

#include <string>
#include <vector>

#include "pfv/mae.hpp"
#include "pfv/rng.hpp"
#include "pfv/tensor.hpp"
#include "pfv/vit.hpp"

namespace pfv {

// Channel gate in squeeze-excitation style: mean over tokens, a two-layer
// bottleneck (width -> width/reduction -> width, relu between), sigmoid. The
// result is one gate value per channel shared by every token row. With
// per_token set, the pooling is skipped and each token gets its own gate.
template <typename T>
struct SeparatorGate {
  int width = 0, reduction = 4;
  bool per_token = false;
  Linear<T> fc1, fc2;

  void init(int width_, int reduction_, Rng& rng, bool per_token_ = false);
  // z (B, N1, W) -> sigmoid gate: (B, W), or (B, N1, W) when per_token.
  Tensor<T> forward(const Tensor<T>& z) const;
  void collect(const std::string& prefix, ParamList<T>& out);
};

// The gated split of a representation. By construction of the gated ops,
// ve + vp == z holds bitwise element-wise, and for a fixed channel the ratio
// ve/z is the same for every token row (the gate is shared across rows).
template <typename T>
struct Separated {
  Tensor<T> ve;    // emotion share, z * gate
  Tensor<T> vp;    // residue share, z * (1 - gate), the exact remainder
  Tensor<T> gate;  // sigmoid gate values
};

// Image critic on the decoder-tower geometry with its own patch embedding:
// patch-embed, add fixed positions, run the MSA stack, mean-pool the patch
// tokens, and map to num_classes+1 logits. Units 1..K score class membership,
// unit K+1 scores realness; every unit is an independent sigmoid label.
template <typename T>
struct Discriminator {
  ViTConfig cfg;
  int num_classes = 0;
  Linear<T> embed;  // patch_dim -> width
  Tensor<T> pos;    // (N, width), fixed sin/cos, excluded from parameters
  BlockStack<T> stack;
  Linear<T> head;  // width -> num_classes + 1

  void init(const ViTConfig& c, int num_classes_, Rng& rng);
  Tensor<T> forward(const Tensor<T>& images) const;  // (B, K+1)
  void collect(const std::string& prefix, ParamList<T>& out);
};

// baseline: encoder + linear head on the class token, nothing else.
// pfvit: encoder -> separator -> classifier, with the generation and
//   discrimination towers attached for training.
// multitask: the encoder sees only visible patches; visible and mask tokens
//   are fused by one self-attention block into a full-length representation
//   at decoder width, and separation/classification/generation happen there.
enum class PfvMode { baseline, pfvit, multitask };
std::string mode_name(PfvMode mode);
PfvMode mode_from_name(const std::string& name);

template <typename T>
struct PfvOutput {
  Tensor<T> z;       // full representation (B, N+1, W)
  Separated<T> sep;  // undefined tensors in baseline mode
  Tensor<T> logits;  // (B, K)
  // Generated images, each (B, S, S, 3) in [0,1]; undefined when generation
  // is skipped or the generator is absent.
  Tensor<T> xhat;           // reconstruction, from ve + vp
  Tensor<T> xtilde;         // neutralized face, from vp alone
  Tensor<T> emotion_image;  // emotion content, from ve alone
};

// The full separation/generation model. Components by party:
//   collaborative: encoder, separator, classifier, projection + mask bank +
//     fuse block + decoder (the generation tower);
//   adversarial: the discriminator.
// The classifier reads only encoder/separator outputs, so its logits are
// bit-identical whether or not the generation/discrimination towers exist.
template <typename T>
struct PfvitModel {
  PfvMode mode = PfvMode::pfvit;
  ViTConfig enc_cfg, dec_cfg;
  int num_classes = 0;
  bool has_generator = false, has_discriminator = false;

  VitEncoder<T> encoder;
  SeparatorGate<T> separator;  // absent in baseline mode
  Linear<T> classifier;        // rep width -> K, applied to the class token

  // Generation tower. In multitask mode proj/mask_bank/fuse are part of the
  // representation path and exist even without the generator.
  Linear<T> enc_to_dec;         // encoder width -> decoder width
  MaskTokenBank<T> mask_bank;   // m + fixed positions (the MCA queries)
  TransformerBlock<T> fuse;     // cross-attention fuse (self-attention in
                                // multitask mode)
  VitDecoder<T> decoder;        // token -> patch pixels

  Discriminator<T> disc;

  // Fresh initialization. Draw order is fixed (encoder, separator,
  // classifier, fuse parts, decoder, discriminator), so models built with
  // fewer components share the leading weights bit for bit.
  void init(const ViTConfig& enc, const ViTConfig& dec, int num_classes_, Rng& rng,
            PfvMode mode_ = PfvMode::pfvit, bool with_generator = true,
            bool with_discriminator = true, int sep_reduction = 4, bool per_token_gate = false);
  // Initialization from pre-trained weights: encoder, projection, mask bank
  // and decoder are copied; the decoder's pixel head is re-initialized (bias
  // at mid-gray 0.5) because it now predicts raw pixels, not normalized ones;
  // the discriminator tower adopts the decoder stack ("same initial weights"
  // as the generator); separator/classifier/fuse/heads are drawn fresh.
  void from_mae(MaeModel<T>& mae, int num_classes_, Rng& rng,
                PfvMode mode_ = PfvMode::pfvit, bool with_generator = true,
                bool with_discriminator = true, int sep_reduction = 4,
                bool per_token_gate = false);

  void collect(ParamList<T>& out);  // all, named "pfv.*"
  ParamList<T> parameters();
  ParamList<T> collaborative_parameters();  // everything but the discriminator
  ParamList<T> discriminator_parameters();  // "pfv.disc.*" only

  int rep_width() const;  // width the separator/classifier operate at

  Tensor<T> encode(const Tensor<T>& images) const;  // (B, N+1, We)
  Separated<T> separate(const Tensor<T>& z) const;
  Tensor<T> classify(const Tensor<T>& tokens) const;  // class-token row -> (B, K)

  // kv (B, N+1, We) -> MCA(mask queries, projected kv) -> (B, N, Wd).
  Tensor<T> fuse_tokens(const Tensor<T>& kv) const;
  // Full generation path from a representation at encoder width:
  // fuse -> decode -> unpatchify -> clamp to [0,1].
  Tensor<T> generate(const Tensor<T>& kv) const;
  // Generation from already-fused tokens at decoder width (B, N or N+1, Wd);
  // this is the multitask-mode path, where fusion happened up front.
  Tensor<T> generate_fused(const Tensor<T>& tokens) const;

  Tensor<T> discriminate(const Tensor<T>& images) const;  // (B, K+1)

  // encode -> separate -> classify, plus the three generation paths when the
  // generator is present and with_images is set. In multitask mode this is
  // the all-patches-visible case of multitask_forward.
  PfvOutput<T> forward(const Tensor<T>& images, bool with_images = true) const;
  // Multitask path: encoder sees the plan's visible patches; mask tokens fill
  // the gaps; one self-attention block fuses the full sequence into z.
  PfvOutput<T> multitask_forward(const Tensor<T>& images, const MaskPlan& plan,
                                 bool with_images = true) const;
};

// Argmax class per row of (B, K) logits, 1-based.
template <typename T>
std::vector<int> predict_classes(const Tensor<T>& logits);

}  // namespace pfv
