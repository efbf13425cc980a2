#include "pfv/mae.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "pfv/image_io.hpp"
#include "pfv/ops.hpp"

namespace pfv {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

// Same index row replicated for every sample in the batch.
IndexMat repeat_rows(const std::vector<int>& cols, int batch) {
  IndexMat im;
  im.rows = batch;
  im.cols = (int)cols.size();
  im.idx.reserve((size_t)batch * cols.size());
  for (int b = 0; b < batch; ++b) im.idx.insert(im.idx.end(), cols.begin(), cols.end());
  return im;
}

}  // namespace

MaskPlan random_mask(int n, double ratio, Rng& rng) {
  if (n <= 0) fail("random_mask: need at least one patch");
  if (!(ratio >= 0.0 && ratio < 1.0)) fail("random_mask: ratio must be in [0,1)");
  MaskPlan plan;
  plan.ratio = ratio;
  plan.rng_state = rng.state();
  const int m = (int)std::llround(ratio * n);
  std::vector<int> perm(static_cast<size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  plan.masked_idx.assign(perm.begin(), perm.begin() + m);
  plan.visible_idx.assign(perm.begin() + m, perm.end());
  std::sort(plan.masked_idx.begin(), plan.masked_idx.end());
  std::sort(plan.visible_idx.begin(), plan.visible_idx.end());
  return plan;
}

MaskPlan full_visibility_plan(int n) {
  if (n <= 0) fail("full_visibility_plan: need at least one patch");
  MaskPlan plan;
  plan.visible_idx.resize(static_cast<size_t>(n));
  std::iota(plan.visible_idx.begin(), plan.visible_idx.end(), 0);
  return plan;
}

template <typename T>
PatchTarget<T> mae_target(const Tensor<T>& images, int patch_size) {
  Tensor<T> patches;
  {
    NoGradGuard ng;  // targets are constants
    patches = patchify(images, patch_size);
  }
  const auto& s = patches.shape();
  const int64_t bn = (int64_t)s[0] * s[1];
  const int d = s[2];
  PatchTarget<T> out;
  out.normalized = Tensor<T>::zeros({s[0], s[1], d});
  out.mean = Tensor<T>::zeros({s[0], s[1], 1});
  out.stddev = Tensor<T>::zeros({s[0], s[1], 1});
  const T* p = patches.data().data();
  T* norm = out.normalized.data().data();
  T* mu = out.mean.data().data();
  T* sd = out.stddev.data().data();
#pragma omp parallel for schedule(static)
  for (int64_t r = 0; r < bn; ++r) {
    const T* row = p + r * d;
    double m = 0.0;
    for (int k = 0; k < d; ++k) m += (double)row[k];
    m /= d;
    double var = 0.0;
    for (int k = 0; k < d; ++k) {
      double c = (double)row[k] - m;
      var += c * c;
    }
    var /= d;
    double stddev = std::max(std::sqrt(var), 1e-6);
    mu[r] = (T)m;
    sd[r] = (T)stddev;
    for (int k = 0; k < d; ++k) norm[r * d + k] = (T)(((double)row[k] - m) / stddev);
  }
  return out;
}

template <typename T>
Tensor<T> mae_denormalize(const Tensor<T>& patches, const PatchTarget<T>& target) {
  return add(mul(patches, target.stddev), target.mean);
}

template <typename T>
Tensor<T> mae_loss(const Tensor<T>& pred, const PatchTarget<T>& target, const MaskPlan& plan) {
  const auto& s = pred.shape();
  if (s.size() != 3 || s != target.normalized.shape())
    fail("mae_loss: prediction and target shapes differ");
  if (plan.num_visible() + plan.num_masked() != s[1])
    fail("mae_loss: plan does not cover the patch grid");
  if (plan.num_masked() == 0) fail("mae_loss: no masked patches");
  IndexMat im = repeat_rows(plan.masked_idx, s[0]);
  auto diff = sub(gather_rows(pred, im), gather_rows(target.normalized, im));
  return mean_all(mul(diff, diff));
}

template <typename T>
void MaeModel<T>::init(const ViTConfig& enc, const ViTConfig& dec, Rng& rng) {
  enc.validate("mae encoder");
  dec.validate("mae decoder");
  if (enc.image_size != dec.image_size || enc.patch_size != dec.patch_size)
    fail("MaeModel: encoder and decoder must share the image/patch geometry");
  enc_cfg = enc;
  dec_cfg = dec;
  encoder.init(enc, rng);
  enc_to_dec.init(enc.width, dec.width, rng);
  mask_bank.init(dec.grid(), dec.width, rng);
  decoder.init(dec, rng);
}

template <typename T>
void MaeModel<T>::collect(const std::string& prefix, ParamList<T>& out) {
  encoder.collect(prefix + ".encoder", out);
  enc_to_dec.collect(prefix + ".enc_to_dec", out);
  mask_bank.collect(prefix + ".mask", out);
  decoder.collect(prefix + ".decoder", out);
}

template <typename T>
ParamList<T> MaeModel<T>::parameters() {
  ParamList<T> out;
  collect("mae", out);
  return out;
}

template <typename T>
Tensor<T> masked_decoder_sequence(const VitEncoder<T>& encoder, const Linear<T>& enc_to_dec,
                                  const MaskTokenBank<T>& mask_bank, const Tensor<T>& images,
                                  const MaskPlan& plan) {
  const int n = encoder.cfg.num_patches();
  if (plan.num_visible() + plan.num_masked() != n)
    fail("masked_decoder_sequence: mask plan does not match the patch grid");
  const int batch = images.shape()[0];
  const int v = plan.num_visible();
  const int wd = mask_bank.pos.shape()[1];

  // Encoder: visible patch tokens only, plus the class token.
  auto tokens = encoder.embed_patches(images);  // (B, N, We), positions added
  auto visible = v == n ? tokens : gather_rows(tokens, repeat_rows(plan.visible_idx, batch));
  auto encoded = encoder.encode_tokens(visible);  // (B, 1+V, We)
  if (encoded.shape() != Shape{batch, 1 + v, encoder.cfg.width})
    fail("masked_decoder_sequence: encoder saw a sequence other than class token + visible");

  // Full-length sequence: masked slots hold the mask token, visible slots the
  // projected encoder output, every patch slot position-coded.
  auto projected = enc_to_dec.forward(encoded);  // (B, 1+V, Wd)
  auto cls_tok = slice(projected, 1, 0, 1);
  auto vis_tok = slice(projected, 1, 1, v);
  auto pos_all = broadcast_to(reshape(mask_bank.pos, {1, n, wd}), {batch, n, wd});
  Tensor<T> seq;
  if (v == n) {
    seq = add(vis_tok, pos_all);
  } else {
    IndexMat iv = repeat_rows(plan.visible_idx, batch);
    auto vis_coded = add(vis_tok, gather_rows(pos_all, iv));
    seq = scatter_rows(mask_bank.grid_tokens(batch), iv, vis_coded);
  }
  return concat(cls_tok, seq, 1);  // (B, 1+N, Wd)
}

template <typename T>
Tensor<T> MaeModel<T>::forward_pretrain(const Tensor<T>& images, const MaskPlan& plan) const {
  auto full = masked_decoder_sequence(encoder, enc_to_dec, mask_bank, images, plan);
  return decoder.forward(full);  // (B, N, 3*P*P)
}

template <typename T>
T mae_pretrain_step(MaeModel<T>& model, const Tensor<T>& images, Adam<T>& opt, double ratio,
                    Rng& rng) {
  MaskPlan plan = random_mask(model.enc_cfg.num_patches(), ratio, rng);
  PatchTarget<T> target = mae_target(images, model.enc_cfg.patch_size);
  auto pred = model.forward_pretrain(images, plan);
  auto loss = mae_loss(pred, target, plan);
  opt.zero_grad();
  loss.backward();
  opt.step();
  return loss.data()[0];
}

template <typename T>
ReconstructDemo<T> reconstruct_demo(const MaeModel<T>& model, const Tensor<T>& image,
                                    double ratio, Rng& rng, const std::string& out_stem) {
  const auto& s = image.shape();
  if (s.size() != 4 || s[0] != 1) fail("reconstruct_demo: expected a single (1,H,W,3) image");
  const int size = model.enc_cfg.image_size;
  const int p = model.enc_cfg.patch_size;
  const int n = model.enc_cfg.num_patches();

  NoGradGuard ng;
  MaskPlan plan = random_mask(n, ratio, rng);
  PatchTarget<T> target = mae_target(image, p);
  auto pred = model.forward_pretrain(image, plan);
  auto recon_img = unpatchify(mae_denormalize(pred, target), size, p);

  ReconstructDemo<T> out;
  out.plan = plan;
  const size_t numel = (size_t)size * size * 3;
  out.masked_view.resize(numel);
  out.reconstruction.resize(numel);
  out.composite.resize(numel);
  std::vector<char> masked(static_cast<size_t>(n), 0);
  for (int i : plan.masked_idx) masked[(size_t)i] = 1;
  const int grid = model.enc_cfg.grid();
  const T* orig = image.data().data();
  const T* rec = recon_img.data().data();
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c) {
      bool is_masked = masked[(size_t)((r / p) * grid + (c / p))] != 0;
      for (int ch = 0; ch < 3; ++ch) {
        size_t k = (size_t)((r * size + c) * 3 + ch);
        float o = (float)orig[k];
        float re = std::clamp((float)rec[k], 0.0f, 1.0f);
        out.masked_view[k] = is_masked ? 0.5f : o;
        out.reconstruction[k] = re;
        out.composite[k] = is_masked ? re : o;
      }
    }

  if (!out_stem.empty()) {
    write_ppm(out_stem + "_masked.ppm", out.masked_view.data(), size, size);
    write_ppm(out_stem + "_recon.ppm", out.reconstruction.data(), size, size);
    write_ppm(out_stem + "_composite.ppm", out.composite.data(), size, size);
  }
  return out;
}

#define PFV_MAE_INSTANTIATE(T)                                                               \
  template struct PatchTarget<T>;                                                            \
  template PatchTarget<T> mae_target<T>(const Tensor<T>&, int);                              \
  template Tensor<T> mae_denormalize<T>(const Tensor<T>&, const PatchTarget<T>&);            \
  template Tensor<T> mae_loss<T>(const Tensor<T>&, const PatchTarget<T>&, const MaskPlan&);  \
  template struct MaeModel<T>;                                                               \
  template Tensor<T> masked_decoder_sequence<T>(const VitEncoder<T>&, const Linear<T>&,      \
                                                const MaskTokenBank<T>&, const Tensor<T>&,   \
                                                const MaskPlan&);                            \
  template T mae_pretrain_step<T>(MaeModel<T>&, const Tensor<T>&, Adam<T>&, double, Rng&);   \
  template ReconstructDemo<T> reconstruct_demo<T>(const MaeModel<T>&, const Tensor<T>&,      \
                                                  double, Rng&, const std::string&);

PFV_MAE_INSTANTIATE(float)
PFV_MAE_INSTANTIATE(double)

}  // namespace pfv
