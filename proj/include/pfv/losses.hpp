#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pfv/data.hpp"
#include "pfv/pfvit.hpp"
#include "pfv/tensor.hpp"

namespace pfv {

// Per-term weights of the collaborative objective. Defaults are declared
// tuning knobs (the terms are roughly magnitude-balanced), all overridable
// from the run configuration.
template <typename T>
struct LossWeights {
  T emo = (T)1;
  T rec = (T)1;
  T adv = (T)0.1;
  T orth = (T)0.1;
};

// What the critic is looking at: a dataset image, the generator's
// reconstruction of it, or the generator's neutralized version of it.
enum class ImageRole { real, recon, poker };

// How the orthogonality of the separated representations is measured:
// directly on the token matrices, or between frozen-extractor embeddings of
// the two generated images.
enum class OrthoVariant { direct, feature };
std::string ortho_variant_name(OrthoVariant v);
OrthoVariant ortho_variant_from_name(const std::string& name);

// K+1 label bits for one image under the critic. Bits 1..K carry the class a
// genuine image of this kind would have: the neutral class for a neutralized
// image, the sample's own label otherwise. Bit K+1 is 1 for real inputs only.
// y and c are 1-based labels in [1, K].
template <typename T>
std::vector<T> disc_target_bits(ImageRole role, int y, int c, int K);

// Batch version: (B, K+1) constant tensor from 1-based per-sample labels.
template <typename T>
Tensor<T> disc_targets(ImageRole role, const std::vector<int>& labels, int neutral_class, int K);

// Mean softmax cross-entropy of 1-based labels against (B, K) logits.
template <typename T>
Tensor<T> emotion_loss(const Tensor<T>& logits, const std::vector<int>& labels);

// Reconstruction objective: the per-image root-mean-square pixel error of
// xhat against x, batch-averaged, plus the same term for xtilde restricted
// to samples labeled with the neutral class. Both terms are expectations
// over the batch, so the neutral-subset sum is divided by the full batch
// size; samples with other labels contribute nothing to the xtilde term, in
// value or gradient. Per-image RMS (not a plain sum) keeps the magnitude
// resolution-independent.
template <typename T>
Tensor<T> reconstruction_loss(const Tensor<T>& x, const Tensor<T>& xhat, const Tensor<T>& xtilde,
                              const std::vector<int>& labels, int neutral_class);

// Critic objective: per-unit sigmoid cross-entropy summed over the K+1
// units, batch-averaged. Targets must be a constant (B, K+1) bit tensor.
template <typename T>
Tensor<T> discrimination_loss(const Tensor<T>& disc_logits, const Tensor<T>& targets);

// Mean over rows of |cos(a_row, b_row)| for (B, M) inputs. The denominator
// carries a 1e-30 guard, so an exact-zero row scores 0 instead of dividing
// by zero. Value in [0, 1]; 0 exactly when every row pair is orthogonal.
template <typename T>
Tensor<T> abs_cosine_rows(const Tensor<T>& a, const Tensor<T>& b);

// direct variant: |cos| between each sample's flattened token matrices.
template <typename T>
Tensor<T> orthogonality_direct(const Tensor<T>& ve, const Tensor<T>& vp);

// feature variant: |cos| between frozen-extractor embeddings of the two
// generated images. Gradients flow into the images (and upstream); the
// extractor itself must be frozen and stays constant.
Tensor<float> orthogonality_feature(const IdentityExtractor& extractor,
                                    const Tensor<float>& emotion_image,
                                    const Tensor<float>& poker_image);

// Generator-side adversarial term over the critic's outputs on the two
// generated images. Non-saturating form (default): both outputs are pushed
// toward "real" plus the class bits a genuine image of that kind would carry
// (label bits for the reconstruction, neutral bits for the poker face).
// strict_minimax instead returns the exact negated critic loss on the
// generated images. Labels are 1-based; d_recon/d_poker are (B, K+1).
template <typename T>
Tensor<T> adversarial_g_loss(const Tensor<T>& d_recon, const Tensor<T>& d_poker,
                             const std::vector<int>& labels, int neutral_class, int K,
                             bool strict_minimax = false);

// Both parties' objectives from one forward pass.
template <typename T>
struct TotalLosses {
  Tensor<T> emo, rec, orth, adv_g;  // unweighted components
  Tensor<T> g_side;  // emo*w_emo + rec*w_rec + orth*w_orth + adv_g*w_adv
  Tensor<T> d_side;  // critic loss over the real image and detached fakes
};

// Assembles every objective from one model forward. `discriminate` is called
// on the generated images as-is for the generator side (gradients reach the
// generator through the critic) and on detached copies plus the real input
// for the critic side, so d_side carries no gradient into the collaborative
// party. The feature orthogonality variant needs `extractor` and exists for
// float models only.
template <typename T>
TotalLosses<T> total_losses(const Tensor<T>& x, const PfvOutput<T>& out,
                            const std::vector<int>& labels, int neutral_class,
                            const LossWeights<T>& weights, OrthoVariant variant,
                            const IdentityExtractor* extractor,
                            const std::function<Tensor<T>(const Tensor<T>&)>& discriminate,
                            bool strict_minimax = false);

}  // namespace pfv
