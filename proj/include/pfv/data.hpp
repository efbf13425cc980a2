#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pfv/rng.hpp"
#include "pfv/tensor.hpp"
#include "pfv/vit.hpp"

namespace pfv {

// Classes are 1-based; index 1 is the neutral face.
inline constexpr int kNumClasses = 4;
inline constexpr int kNeutralClass = 1;
inline constexpr int kToyImageSize = 32;
const std::vector<std::string>& class_names();  // neutral, happy, sad, surprise

// Identity factors, each uniform over its documented range and drawn
// independently of the emotion label.
struct ToyIdentity {
  double hue;          // [0,1)    face tint rotation
  double tone;         // [0.55,0.90] face brightness
  double face_radius;  // [0.30,0.40] fraction of the canvas
  double eye_spacing;  // [0.13,0.21] half-distance between eye centers
  double eye_size;     // [0.030,0.055]
  double bg_shade;     // [0.30,0.60] background brightness offset
  static ToyIdentity sample(Rng& rng);
};

// Emotion-dependent strokes (mouth + brows) stay inside this inclusive pixel
// box for every identity in range; pixels outside it depend on the identity
// and noise only.
struct PixelBox {
  int row0, row1, col0, col1;
  bool contains(int r, int c) const { return r >= row0 && r <= row1 && c >= col0 && c <= col1; }
};
PixelBox emotion_pixel_box();

class LabeledFace {
 public:
  std::vector<float> image;  // size*size*3, row-major, [0,1]
  int label = 0;             // 1..K
  int identity = -1;         // toy identity tag; -1 for folder data

  bool has_hidden_pair() const { return !neutral_pair_.empty(); }
  // Evaluation-only ground truth: the same identity and noise stream rendered
  // with the neutral emotion. Reads are counted globally so tests can prove
  // the training path never touches them.
  const std::vector<float>& hidden_neutral_pair() const;
  void set_hidden_pair(std::vector<float> img) { neutral_pair_ = std::move(img); }

 private:
  std::vector<float> neutral_pair_;
};

int64_t hidden_pair_reads();
void reset_hidden_pair_reads();

struct Dataset {
  int image_size = kToyImageSize;
  int num_classes = kNumClasses;
  std::vector<LabeledFace> samples;
  int64_t count_label(int label) const;
};

// Deterministic rasterization (anti-aliased circles, strokes and arcs) plus
// clamped Gaussian pixel noise (sigma=0.01) drawn from rng; the draw count is
// fixed, so equal rng states give bitwise-equal images.
std::vector<float> synth_face(const ToyIdentity& id, int emotion, Rng& rng);

struct SynthSplits {
  Dataset train, test;
  std::vector<ToyIdentity> identities;  // indexed by LabeledFace::identity
};

// Identity-disjoint train/test split (train gets round(frac*n) identities),
// emotion assignment exactly class-balanced within each split, and every test
// sample carries a hidden neutral pair rendered from the same identity and
// noise stream.
SynthSplits synth_dataset(int n_identities, int samples_per_identity, Rng& rng,
                          double train_frac = 0.8);

// Binary snapshot of both splits including hidden pairs and identity tags.
void save_dataset(const SynthSplits& splits, const std::string& path);
SynthSplits load_dataset(const std::string& path);

// <root>/<class_name>/<index>.ppm; hidden pairs are not exported.
void export_image_folder(const Dataset& ds, const std::string& root);
// Reads that layout back (lexicographic file order, bilinear resize to
// image_size). A listed class directory that is missing or empty contributes
// zero samples with a warning; an unlisted subdirectory or unreadable file is
// an error naming the path.
Dataset load_image_folder(const std::string& root, int image_size);
Dataset load_image_folder(const std::string& root, int image_size,
                          const std::vector<std::string>& class_subdirs);

// Deterministic augmentation core: optional horizontal flip, then uniform
// rescale about the image center (bilinear, edge-clamped). flip=false,
// scale=1 is an exact identity.
std::vector<float> augment_apply(const std::vector<float>& image, int size, bool flip,
                                 double scale);
// Random policy: flip with p=0.5, scale uniform in [0.9, 1.1] (two rng draws
// always). Never changes the label.
std::vector<float> augment(const std::vector<float>& image, int size, Rng& rng);

// Batch helpers: rows of `indices` into a (B,S,S,3) tensor plus 1-based labels.
Tensor<float> image_batch(const Dataset& ds, const std::vector<int>& indices);
std::vector<int> label_batch(const Dataset& ds, const std::vector<int>& indices);

// Small frozen embedding network standing in for a pre-trained face
// recognizer: it is trained once on toy identity labels, then frozen; the
// feature-space orthogonality loss consumes its 32-dim embedding.
struct IdentityExtractor {
  static constexpr int kEmbedDim = 32;
  int image_size = kToyImageSize;
  Linear<float> fc1;   // 3*S*S -> 128
  Linear<float> fc2;   // 128 -> 32
  Linear<float> head;  // 32 -> n identities; only used during pre-training
  bool frozen = false;

  // (B,S,S,3) -> (B,32). Parameters are graph constants once frozen.
  Tensor<float> embed(const Tensor<float>& images) const;
  void freeze();
  void collect(const std::string& prefix, ParamList<float>& out);
};

// Trains the extractor on the dataset's identity tags (stratified holdout per
// identity for the reported accuracy), then freezes it. Requires >= 50
// identities.
IdentityExtractor extractor_pretrain(const Dataset& train, Rng& rng,
                                     double* holdout_accuracy = nullptr);

// Fallback when no identity-labeled data is available: the same network with
// random weights, frozen untrained. A fixed random projection still gives a
// usable feature space for comparing two renderings of the same face.
IdentityExtractor random_projection_extractor(int image_size, Rng& rng);

}  // namespace pfv
