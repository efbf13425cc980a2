#include "pfv/losses.hpp"

#include <stdexcept>
#include <type_traits>

#include "pfv/ops.hpp"

namespace pfv {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

void check_label(int y, int K, const char* who) {
  if (y < 1 || y > K)
    fail(std::string(who) + ": label " + std::to_string(y) + " outside [1, " +
         std::to_string(K) + "]");
}

// (B,) per-image root-mean-square pixel difference.
template <typename T>
Tensor<T> per_image_rms(const Tensor<T>& a, const Tensor<T>& b) {
  auto diff = sub(a, b);
  auto ss = sum_tail(mul(diff, diff), 1);  // (B,)
  const T inv_pixels = (T)(1.0 / (double)(a.numel() / a.dim(0)));
  return sqrt_elem(mul_scalar(ss, inv_pixels));
}

}  // namespace

std::string ortho_variant_name(OrthoVariant v) {
  return v == OrthoVariant::direct ? "direct" : "feature";
}

OrthoVariant ortho_variant_from_name(const std::string& name) {
  if (name == "direct") return OrthoVariant::direct;
  if (name == "feature") return OrthoVariant::feature;
  fail("ortho_variant_from_name: unknown variant '" + name + "' (expected direct or feature)");
}

template <typename T>
std::vector<T> disc_target_bits(ImageRole role, int y, int c, int K) {
  check_label(y, K, "disc_target_bits(y)");
  check_label(c, K, "disc_target_bits(c)");
  std::vector<T> bits((size_t)K + 1, T(0));
  const int cls = role == ImageRole::poker ? c : y;
  bits[(size_t)cls - 1] = T(1);
  bits[(size_t)K] = role == ImageRole::real ? T(1) : T(0);
  return bits;
}

template <typename T>
Tensor<T> disc_targets(ImageRole role, const std::vector<int>& labels, int neutral_class, int K) {
  if (labels.empty()) fail("disc_targets: empty batch");
  std::vector<T> rows;
  rows.reserve(labels.size() * ((size_t)K + 1));
  for (int y : labels) {
    auto bits = disc_target_bits<T>(role, y, neutral_class, K);
    rows.insert(rows.end(), bits.begin(), bits.end());
  }
  return Tensor<T>::from_data({(int)labels.size(), K + 1}, std::move(rows));
}

template <typename T>
Tensor<T> emotion_loss(const Tensor<T>& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2 || logits.dim(0) != (int)labels.size())
    fail("emotion_loss: expected (B,K) logits with one label per row, got " +
         shape_str(logits.shape()) + " and " + std::to_string(labels.size()) + " labels");
  std::vector<int> zero_based(labels.size());
  for (size_t i = 0; i < labels.size(); ++i) {
    check_label(labels[i], logits.dim(1), "emotion_loss");
    zero_based[i] = labels[i] - 1;
  }
  return mean_all(cross_entropy_rows(logits, zero_based));
}

template <typename T>
Tensor<T> reconstruction_loss(const Tensor<T>& x, const Tensor<T>& xhat, const Tensor<T>& xtilde,
                              const std::vector<int>& labels, int neutral_class) {
  if (!same_shape(x.shape(), xhat.shape()) || !same_shape(x.shape(), xtilde.shape()))
    fail("reconstruction_loss: image shapes differ: " + shape_str(x.shape()) + " vs " +
         shape_str(xhat.shape()) + " vs " + shape_str(xtilde.shape()));
  const int b = x.dim(0);
  if ((int)labels.size() != b) fail("reconstruction_loss: one label per image required");

  Tensor<T> loss = mean_all(per_image_rms(xhat, x));
  std::vector<int> neutral;
  for (int i = 0; i < b; ++i)
    if (labels[(size_t)i] == neutral_class) neutral.push_back(i);
  if (!neutral.empty()) {
    // Expectation over the whole batch of an indicator-gated term: the
    // neutral-subset sum divided by the full batch size. Rows with other
    // labels never enter this graph, so xtilde is untouched there.
    auto rms = per_image_rms(gather_batch(xtilde, neutral), gather_batch(x, neutral));
    loss = add(loss, mul_scalar(sum_all(rms), (T)(1.0 / b)));
  }
  return loss;
}

template <typename T>
Tensor<T> discrimination_loss(const Tensor<T>& disc_logits, const Tensor<T>& targets) {
  if (disc_logits.rank() != 2 || !same_shape(disc_logits.shape(), targets.shape()))
    fail("discrimination_loss: expected matching (B,K+1) logits and targets, got " +
         shape_str(disc_logits.shape()) + " and " + shape_str(targets.shape()));
  auto per_image = sum_tail(bce_with_logits(disc_logits, targets), 1);  // (B,)
  return mean_all(per_image);
}

template <typename T>
Tensor<T> abs_cosine_rows(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || !same_shape(a.shape(), b.shape()))
    fail("abs_cosine_rows: expected matching (B,M) inputs, got " + shape_str(a.shape()) +
         " and " + shape_str(b.shape()));
  auto dot = sum_tail(mul(a, b), 1);                         // (B,)
  auto na = sqrt_elem(sum_tail(mul(a, a), 1));               // (B,)
  auto nb = sqrt_elem(sum_tail(mul(b, b), 1));               // (B,)
  auto denom = add_scalar(mul(na, nb), (T)1e-30);
  return mean_all(abs_elem(divide(dot, denom)));
}

template <typename T>
Tensor<T> orthogonality_direct(const Tensor<T>& ve, const Tensor<T>& vp) {
  if (ve.rank() < 2 || !same_shape(ve.shape(), vp.shape()))
    fail("orthogonality_direct: expected matching batched inputs, got " +
         shape_str(ve.shape()) + " and " + shape_str(vp.shape()));
  const int b = ve.dim(0);
  const int m = (int)(ve.numel() / b);
  return abs_cosine_rows(reshape(ve, {b, m}), reshape(vp, {b, m}));
}

Tensor<float> orthogonality_feature(const IdentityExtractor& extractor,
                                    const Tensor<float>& emotion_image,
                                    const Tensor<float>& poker_image) {
  if (!extractor.frozen)
    fail("orthogonality_feature: the extractor must be frozen before use");
  return abs_cosine_rows(extractor.embed(emotion_image), extractor.embed(poker_image));
}

template <typename T>
Tensor<T> adversarial_g_loss(const Tensor<T>& d_recon, const Tensor<T>& d_poker,
                             const std::vector<int>& labels, int neutral_class, int K,
                             bool strict_minimax) {
  if (d_recon.rank() != 2 || d_recon.dim(1) != K + 1 || !same_shape(d_recon.shape(), d_poker.shape()))
    fail("adversarial_g_loss: expected matching (B,K+1) critic outputs, got " +
         shape_str(d_recon.shape()) + " and " + shape_str(d_poker.shape()));
  auto tr = disc_targets<T>(ImageRole::recon, labels, neutral_class, K);
  auto tp = disc_targets<T>(ImageRole::poker, labels, neutral_class, K);
  if (strict_minimax) {
    // Literal maximization of the critic loss on the generated images.
    auto dis = add(discrimination_loss(d_recon, tr), discrimination_loss(d_poker, tp));
    return neg(mul_scalar(dis, (T)0.5));
  }
  // Non-saturating form: same class bits, realness bit flipped to 1.
  auto flip_real = [&](Tensor<T> t) {
    auto& v = t.data();
    const size_t row = (size_t)K + 1;
    for (size_t i = 0; i < v.size(); i += row) v[i + (size_t)K] = T(1);
    return t;
  };
  auto lr = discrimination_loss(d_recon, flip_real(tr));
  auto lp = discrimination_loss(d_poker, flip_real(tp));
  return mul_scalar(add(lr, lp), (T)0.5);
}

template <typename T>
TotalLosses<T> total_losses(const Tensor<T>& x, const PfvOutput<T>& out,
                            const std::vector<int>& labels, int neutral_class,
                            const LossWeights<T>& weights, OrthoVariant variant,
                            const IdentityExtractor* extractor,
                            const std::function<Tensor<T>(const Tensor<T>&)>& discriminate,
                            bool strict_minimax) {
  if (!out.logits.defined() || !out.xhat.defined() || !out.xtilde.defined() ||
      !out.emotion_image.defined())
    fail("total_losses: needs a forward pass with generated images");
  if (!discriminate) fail("total_losses: needs a critic callback");
  const int K = out.logits.dim(1);

  TotalLosses<T> tl;
  tl.emo = emotion_loss(out.logits, labels);
  tl.rec = reconstruction_loss(x, out.xhat, out.xtilde, labels, neutral_class);
  if (variant == OrthoVariant::direct) {
    tl.orth = orthogonality_direct(out.sep.ve, out.sep.vp);
  } else {
    if constexpr (std::is_same_v<T, float>) {
      if (!extractor) fail("total_losses: the feature orthogonality variant needs an extractor");
      tl.orth = orthogonality_feature(*extractor, out.emotion_image, out.xtilde);
    } else {
      fail("total_losses: the feature orthogonality variant exists for float models only");
    }
  }
  tl.adv_g = adversarial_g_loss(discriminate(out.xhat), discriminate(out.xtilde), labels,
                                neutral_class, K, strict_minimax);
  tl.g_side = add(add(add(mul_scalar(tl.emo, weights.emo), mul_scalar(tl.rec, weights.rec)),
                      mul_scalar(tl.orth, weights.orth)),
                  mul_scalar(tl.adv_g, weights.adv));

  // Critic side: the real input plus gradient-detached copies of the fakes,
  // each against its own label bits, averaged over the three roles.
  auto l_real = discrimination_loss(discriminate(x),
                                    disc_targets<T>(ImageRole::real, labels, neutral_class, K));
  auto l_recon = discrimination_loss(discriminate(out.xhat.detach()),
                                     disc_targets<T>(ImageRole::recon, labels, neutral_class, K));
  auto l_poker = discrimination_loss(discriminate(out.xtilde.detach()),
                                     disc_targets<T>(ImageRole::poker, labels, neutral_class, K));
  tl.d_side = mul_scalar(add(add(l_real, l_recon), l_poker), (T)(1.0 / 3.0));
  return tl;
}

#define PFV_LOSSES_INSTANTIATE(T)                                                              \
  template struct LossWeights<T>;                                                              \
  template std::vector<T> disc_target_bits<T>(ImageRole, int, int, int);                       \
  template Tensor<T> disc_targets<T>(ImageRole, const std::vector<int>&, int, int);            \
  template Tensor<T> emotion_loss<T>(const Tensor<T>&, const std::vector<int>&);               \
  template Tensor<T> reconstruction_loss<T>(const Tensor<T>&, const Tensor<T>&,                \
                                            const Tensor<T>&, const std::vector<int>&, int);   \
  template Tensor<T> discrimination_loss<T>(const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> abs_cosine_rows<T>(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> orthogonality_direct<T>(const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> adversarial_g_loss<T>(const Tensor<T>&, const Tensor<T>&,                 \
                                           const std::vector<int>&, int, int, bool);           \
  template TotalLosses<T> total_losses<T>(                                                     \
      const Tensor<T>&, const PfvOutput<T>&, const std::vector<int>&, int,                     \
      const LossWeights<T>&, OrthoVariant, const IdentityExtractor*,                           \
      const std::function<Tensor<T>(const Tensor<T>&)>&, bool);

PFV_LOSSES_INSTANTIATE(float)
PFV_LOSSES_INSTANTIATE(double)

}  // namespace pfv
