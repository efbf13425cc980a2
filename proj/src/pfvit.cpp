#include "pfv/pfvit.hpp"

#include <algorithm>
#include <stdexcept>

#include "pfv/ops.hpp"

namespace pfv {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

// Copies every named weight of `src` into the freshly initialized `dst`.
// Both sides run the same collect(), so names, order and shapes must agree;
// fixed buffers (position tables) are not parameters and are rebuilt equal by
// init. collect() is non-const, hence the non-const source.
template <typename T, typename C>
void copy_weights(C& dst, C& src, const std::string& what) {
  ParamList<T> d, s;
  dst.collect(what, d);
  src.collect(what, s);
  if (d.size() != s.size())
    fail("copy_weights(" + what + "): parameter lists differ in length");
  for (size_t i = 0; i < d.size(); ++i) {
    if (d[i].name != s[i].name || !same_shape(d[i].tensor.shape(), s[i].tensor.shape()))
      fail("copy_weights(" + what + "): mismatch at " + d[i].name + " vs " + s[i].name);
    d[i].tensor.data() = s[i].tensor.data();
  }
}

}  // namespace

// ---- separator gate ----

template <typename T>
void SeparatorGate<T>::init(int width_, int reduction_, Rng& rng, bool per_token_) {
  if (width_ <= 0 || reduction_ <= 0)
    fail("SeparatorGate: width and reduction must be positive");
  width = width_;
  reduction = reduction_;
  per_token = per_token_;
  const int hidden = std::max(1, width / reduction);
  fc1.init(width, hidden, rng);
  fc2.init(hidden, width, rng);
}

template <typename T>
Tensor<T> SeparatorGate<T>::forward(const Tensor<T>& z) const {
  if (z.rank() != 3 || z.dim(2) != width)
    fail("SeparatorGate: expected (B,N1," + std::to_string(width) + "), got " +
         shape_str(z.shape()));
  Tensor<T> x = per_token ? z : mean_tokens(z);  // (B,N1,W) or (B,W)
  return sigmoid(fc2.forward(relu(fc1.forward(x))));
}

template <typename T>
void SeparatorGate<T>::collect(const std::string& prefix, ParamList<T>& out) {
  fc1.collect(prefix + ".fc1", out);
  fc2.collect(prefix + ".fc2", out);
}

// ---- discriminator ----

template <typename T>
void Discriminator<T>::init(const ViTConfig& c, int num_classes_, Rng& rng) {
  cfg = c;
  cfg.role = "discriminator";
  cfg.validate("Discriminator");
  if (num_classes_ <= 0) fail("Discriminator: need at least one class");
  num_classes = num_classes_;
  embed.init(cfg.patch_dim(), cfg.width, rng);
  pos = Tensor<T>::from_data({cfg.num_patches(), cfg.width},
                             sincos_pos_table<T>(cfg.grid(), cfg.width));
  stack.init(cfg.width, cfg.heads, cfg.depth, rng);
  head.init(cfg.width, num_classes + 1, rng);
}

template <typename T>
Tensor<T> Discriminator<T>::forward(const Tensor<T>& images) const {
  if (images.rank() != 4 || images.dim(1) != cfg.image_size || images.dim(2) != cfg.image_size ||
      images.dim(3) != 3)
    fail("Discriminator: expected (B," + std::to_string(cfg.image_size) + "," +
         std::to_string(cfg.image_size) + ",3), got " + shape_str(images.shape()));
  Tensor<T> x = embed.forward(patchify(images, cfg.patch_size));  // (B,N,W)
  x = add(x, reshape(pos, {1, cfg.num_patches(), cfg.width}));
  x = stack.forward(x);
  return head.forward(mean_tokens(x));  // (B, K+1)
}

template <typename T>
void Discriminator<T>::collect(const std::string& prefix, ParamList<T>& out) {
  embed.collect(prefix + ".embed", out);
  stack.collect(prefix + ".stack", out);
  head.collect(prefix + ".head", out);
}

// ---- mode names ----

std::string mode_name(PfvMode mode) {
  switch (mode) {
    case PfvMode::baseline: return "baseline";
    case PfvMode::pfvit: return "pfvit";
    case PfvMode::multitask: return "multitask";
  }
  fail("mode_name: unknown mode");
}

PfvMode mode_from_name(const std::string& name) {
  if (name == "baseline") return PfvMode::baseline;
  if (name == "pfvit") return PfvMode::pfvit;
  if (name == "multitask") return PfvMode::multitask;
  fail("mode_from_name: unknown mode '" + name + "' (expected baseline, pfvit or multitask)");
}

// ---- model ----

template <typename T>
int PfvitModel<T>::rep_width() const {
  return mode == PfvMode::multitask ? dec_cfg.width : enc_cfg.width;
}

template <typename T>
void PfvitModel<T>::init(const ViTConfig& enc, const ViTConfig& dec, int num_classes_, Rng& rng,
                         PfvMode mode_, bool with_generator, bool with_discriminator,
                         int sep_reduction, bool per_token_gate) {
  enc.validate("PfvitModel(encoder)");
  dec.validate("PfvitModel(decoder)");
  if (enc.image_size != dec.image_size || enc.patch_size != dec.patch_size)
    fail("PfvitModel: encoder and decoder must share the image/patch geometry");
  if (num_classes_ <= 0) fail("PfvitModel: need at least one class");
  mode = mode_;
  enc_cfg = enc;
  dec_cfg = dec;
  num_classes = num_classes_;
  has_generator = with_generator;
  has_discriminator = with_discriminator;
  const bool fuse_parts = has_generator || mode == PfvMode::multitask;

  encoder.init(enc_cfg, rng);
  if (mode != PfvMode::baseline) separator.init(rep_width(), sep_reduction, rng, per_token_gate);
  classifier.init(rep_width(), num_classes, rng);
  if (fuse_parts) {
    enc_to_dec.init(enc_cfg.width, dec_cfg.width, rng);
    mask_bank.init(dec_cfg.grid(), dec_cfg.width, rng);
    fuse.init(dec_cfg.width, dec_cfg.heads, rng);
  }
  if (has_generator) {
    decoder.init(dec_cfg, rng);
    // The pixel head predicts raw pixels; starting at mid-gray keeps every
    // output inside the clamp's pass-through band.
    std::fill(decoder.pixel_head.b.data().begin(), decoder.pixel_head.b.data().end(), T(0.5));
  }
  if (has_discriminator) disc.init(dec_cfg, num_classes, rng);
}

template <typename T>
void PfvitModel<T>::from_mae(MaeModel<T>& mae, int num_classes_, Rng& rng, PfvMode mode_,
                             bool with_generator, bool with_discriminator, int sep_reduction,
                             bool per_token_gate) {
  init(mae.enc_cfg, mae.dec_cfg, num_classes_, rng, mode_, with_generator, with_discriminator,
       sep_reduction, per_token_gate);
  copy_weights<T>(encoder, mae.encoder, "enc");
  const bool fuse_parts = has_generator || mode == PfvMode::multitask;
  if (fuse_parts) {
    copy_weights<T>(enc_to_dec, mae.enc_to_dec, "proj");
    copy_weights<T>(mask_bank, mae.mask_bank, "mask");
  }
  if (has_generator) {
    copy_weights<T>(decoder, mae.decoder, "decoder");
    // Fresh pixel head: pre-training predicted per-patch normalized values,
    // the generator predicts raw [0,1] pixels, so a re-draw beats a copy.
    decoder.pixel_head.init(dec_cfg.width, dec_cfg.patch_dim(), rng);
    std::fill(decoder.pixel_head.b.data().begin(), decoder.pixel_head.b.data().end(), T(0.5));
  }
  // Generator and discriminator towers start from the same pre-trained
  // weights; only the discriminator's embedding and head are fresh.
  if (has_discriminator) copy_weights<T>(disc.stack, mae.decoder.stack, "stack");
}

template <typename T>
void PfvitModel<T>::collect(ParamList<T>& out) {
  encoder.collect("pfv.enc", out);
  if (mode != PfvMode::baseline) separator.collect("pfv.sep", out);
  classifier.collect("pfv.cls", out);
  if (has_generator || mode == PfvMode::multitask) {
    enc_to_dec.collect("pfv.gen.proj", out);
    mask_bank.collect("pfv.gen.mask", out);
    fuse.collect("pfv.gen.fuse", out);
  }
  if (has_generator) decoder.collect("pfv.gen.decoder", out);
  if (has_discriminator) disc.collect("pfv.disc", out);
}

template <typename T>
ParamList<T> PfvitModel<T>::parameters() {
  ParamList<T> out;
  collect(out);
  return out;
}

template <typename T>
ParamList<T> PfvitModel<T>::collaborative_parameters() {
  ParamList<T> all = parameters(), out;
  for (auto& p : all)
    if (p.name.rfind("pfv.disc.", 0) != 0) out.push_back(p);
  return out;
}

template <typename T>
ParamList<T> PfvitModel<T>::discriminator_parameters() {
  ParamList<T> all = parameters(), out;
  for (auto& p : all)
    if (p.name.rfind("pfv.disc.", 0) == 0) out.push_back(p);
  return out;
}

template <typename T>
Tensor<T> PfvitModel<T>::encode(const Tensor<T>& images) const {
  return encoder.forward(images);
}

template <typename T>
Separated<T> PfvitModel<T>::separate(const Tensor<T>& z) const {
  if (mode == PfvMode::baseline) fail("PfvitModel::separate: baseline mode has no separator");
  if (z.rank() != 3 || z.dim(2) != rep_width())
    fail("PfvitModel::separate: expected (B,N1," + std::to_string(rep_width()) + "), got " +
         shape_str(z.shape()));
  Separated<T> sep;
  sep.gate = separator.forward(z);
  sep.ve = gate_mul(z, sep.gate);
  sep.vp = gate_mul_complement(z, sep.gate);
  return sep;
}

template <typename T>
Tensor<T> PfvitModel<T>::classify(const Tensor<T>& tokens) const {
  if (tokens.rank() != 3 || tokens.dim(2) != rep_width())
    fail("PfvitModel::classify: expected (B,N1," + std::to_string(rep_width()) + "), got " +
         shape_str(tokens.shape()));
  Tensor<T> cls_row = reshape(slice(tokens, 1, 0, 1), {tokens.dim(0), rep_width()});
  return classifier.forward(cls_row);  // (B, K)
}

template <typename T>
Tensor<T> PfvitModel<T>::fuse_tokens(const Tensor<T>& kv) const {
  if (!has_generator) fail("PfvitModel::fuse_tokens: generator not instantiated");
  const int n = enc_cfg.num_patches();
  if (kv.rank() != 3 || kv.dim(1) != n + 1 || kv.dim(2) != enc_cfg.width)
    fail("PfvitModel::fuse_tokens: expected (B," + std::to_string(n + 1) + "," +
         std::to_string(enc_cfg.width) + "), got " + shape_str(kv.shape()));
  Tensor<T> proj = enc_to_dec.forward(kv);               // (B, N+1, Wd)
  Tensor<T> queries = mask_bank.grid_tokens(kv.dim(0));  // (B, N, Wd)
  return fuse.forward(queries, proj);                    // (B, N, Wd)
}

template <typename T>
Tensor<T> PfvitModel<T>::generate(const Tensor<T>& kv) const {
  return generate_fused(fuse_tokens(kv));
}

template <typename T>
Tensor<T> PfvitModel<T>::generate_fused(const Tensor<T>& tokens) const {
  if (!has_generator) fail("PfvitModel::generate: generator not instantiated");
  Tensor<T> patches = decoder.forward(tokens);  // (B, N, 3*P*P)
  return clamp01(unpatchify(patches, dec_cfg.image_size, dec_cfg.patch_size));
}

template <typename T>
Tensor<T> PfvitModel<T>::discriminate(const Tensor<T>& images) const {
  if (!has_discriminator) fail("PfvitModel::discriminate: discriminator not instantiated");
  return disc.forward(images);
}

template <typename T>
PfvOutput<T> PfvitModel<T>::forward(const Tensor<T>& images, bool with_images) const {
  if (mode == PfvMode::multitask)
    return multitask_forward(images, full_visibility_plan(enc_cfg.num_patches()), with_images);
  PfvOutput<T> out;
  out.z = encode(images);
  if (mode == PfvMode::baseline) {
    out.logits = classify(out.z);
    return out;
  }
  out.sep = separate(out.z);
  out.logits = classify(out.sep.ve);
  if (with_images && has_generator) {
    out.xhat = generate(add(out.sep.ve, out.sep.vp));  // ve + vp == z bitwise
    out.xtilde = generate(out.sep.vp);
    out.emotion_image = generate(out.sep.ve);
  }
  return out;
}

template <typename T>
PfvOutput<T> PfvitModel<T>::multitask_forward(const Tensor<T>& images, const MaskPlan& plan,
                                              bool with_images) const {
  if (mode != PfvMode::multitask)
    fail("PfvitModel::multitask_forward: model was not built in multitask mode");
  Tensor<T> full = masked_decoder_sequence(encoder, enc_to_dec, mask_bank, images, plan);
  PfvOutput<T> out;
  out.z = fuse.forward(full);  // self-attention fuse, (B, 1+N, Wd)
  out.sep = separate(out.z);
  out.logits = classify(out.sep.ve);
  if (with_images && has_generator) {
    out.xhat = generate_fused(add(out.sep.ve, out.sep.vp));
    out.xtilde = generate_fused(out.sep.vp);
    out.emotion_image = generate_fused(out.sep.ve);
  }
  return out;
}

template <typename T>
std::vector<int> predict_classes(const Tensor<T>& logits) {
  if (logits.rank() != 2) fail("predict_classes: expected (B,K) logits");
  const int b = logits.dim(0), k = logits.dim(1);
  std::vector<int> out((size_t)b);
  for (int i = 0; i < b; ++i) {
    const T* row = logits.data().data() + (size_t)i * k;
    out[(size_t)i] = 1 + (int)(std::max_element(row, row + k) - row);
  }
  return out;
}

#define PFV_PFVIT_INSTANTIATE(T)                                  \
  template struct SeparatorGate<T>;                               \
  template struct Discriminator<T>;                               \
  template struct PfvitModel<T>;                                  \
  template std::vector<int> predict_classes<T>(const Tensor<T>&);

PFV_PFVIT_INSTANTIATE(float)
PFV_PFVIT_INSTANTIATE(double)

}  // namespace pfv
