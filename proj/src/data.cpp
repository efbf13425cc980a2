#include "pfv/data.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>

#include "pfv/image_io.hpp"
#include "pfv/ops.hpp"
#include "pfv/optim.hpp"

namespace fs = std::filesystem;

namespace pfv {

namespace {
[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

std::atomic<int64_t> g_hidden_pair_reads{0};

// ---- renderer geometry (normalized [0,1] canvas coordinates) ----
constexpr double kFaceCx = 0.50, kFaceCy = 0.52;
constexpr double kEyeY = 0.42;
constexpr double kBrowGap = 0.035;       // brow sits this far above the eye top
constexpr double kBrowHalf = 0.045;      // brow half-length
constexpr double kBrowThick = 0.012;
constexpr double kMouthCy = 0.68;
constexpr double kMouthHalf = 0.10;
constexpr double kMouthThick = 0.014;
constexpr double kMouthRx = 0.050, kMouthRy = 0.070;  // surprise ellipse
// per class (neutral, happy, sad, surprise): parabola curvature of the mouth
// stroke (y(t) = cy + curv*t^2) and vertical brow offset (negative = raised)
constexpr double kCurv[kNumClasses] = {0.0, -0.055, 0.055, 0.0};
constexpr double kBrowOff[kNumClasses] = {0.0, -0.012, 0.015, -0.030};
constexpr double kNoiseSigma = 0.01;

struct Rgb {
  double r, g, b;
};

Rgb hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  double c = v * s;
  double hp = h * 6.0;
  double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  switch ((int)hp) {
    case 0: r = c, g = x; break;
    case 1: r = x, g = c; break;
    case 2: g = c, b = x; break;
    case 3: g = x, b = c; break;
    case 4: r = x, b = c; break;
    default: r = c, b = x; break;
  }
  double m = v - c;
  return {r + m, g + m, b + m};
}

double sd_circle(double u, double v, double cx, double cy, double r) {
  return std::hypot(u - cx, v - cy) - r;
}

double sd_hseg(double u, double v, double cx, double cy, double half, double thick) {
  double dx = std::max(std::fabs(u - cx) - half, 0.0);
  double dy = v - cy;
  return std::hypot(dx, dy) - thick * 0.5;
}

// distance to the sampled mouth parabola, minus stroke half-thickness
double sd_mouth_arc(double u, double v, double curv) {
  double best = 1e9;
  for (int k = 0; k <= 32; ++k) {
    double t = -1.0 + 2.0 * k / 32.0;
    double px = kFaceCx + kMouthHalf * t;
    double py = kMouthCy + curv * t * t;
    best = std::min(best, std::hypot(u - px, v - py));
  }
  return best - kMouthThick * 0.5;
}

double sd_ellipse(double u, double v, double cx, double cy, double rx, double ry) {
  double f = std::hypot((u - cx) / rx, (v - cy) / ry);
  return (f - 1.0) * std::min(rx, ry);
}
}  // namespace

const std::vector<std::string>& class_names() {
  static const std::vector<std::string> names = {"neutral", "happy", "sad", "surprise"};
  return names;
}

ToyIdentity ToyIdentity::sample(Rng& rng) {
  ToyIdentity id;
  id.hue = rng.uniform(0.0, 1.0);
  id.tone = rng.uniform(0.55, 0.90);
  id.face_radius = rng.uniform(0.30, 0.40);
  id.eye_spacing = rng.uniform(0.13, 0.21);
  id.eye_size = rng.uniform(0.030, 0.055);
  id.bg_shade = rng.uniform(0.30, 0.60);
  return id;
}

PixelBox emotion_pixel_box() {
  // Union over all in-range identities and emotions of the brow and mouth
  // supports, padded by stroke width and the anti-alias ramp; derived from
  // the geometry constants above and verified empirically by tests.
  return {8, 25, 6, 25};
}

const std::vector<float>& LabeledFace::hidden_neutral_pair() const {
  if (neutral_pair_.empty()) fail("hidden_neutral_pair: sample carries no pair");
  g_hidden_pair_reads.fetch_add(1, std::memory_order_relaxed);
  return neutral_pair_;
}

int64_t hidden_pair_reads() { return g_hidden_pair_reads.load(std::memory_order_relaxed); }
void reset_hidden_pair_reads() { g_hidden_pair_reads.store(0, std::memory_order_relaxed); }

int64_t Dataset::count_label(int label) const {
  int64_t n = 0;
  for (const auto& s : samples) n += (s.label == label);
  return n;
}

std::vector<float> synth_face(const ToyIdentity& id, int emotion, Rng& rng) {
  if (emotion < 1 || emotion > kNumClasses) fail("synth_face: emotion label out of range");
  const int S = kToyImageSize;
  const double aa = 1.0 / S;
  auto coverage = [&](double d) { return std::clamp(0.5 - d / aa, 0.0, 1.0); };

  // Background texture and face shading are derived from identity factors
  // only, so they are constant across emotions (and across a hidden-pair
  // render). They keep patch statistics non-degenerate everywhere: a flat
  // canvas would make most patches pure sensor noise, which no reconstruction
  // objective can learn.
  constexpr double kTau = 6.283185307179586;
  const double tex_cos = std::cos(kTau / 12), tex_sin = std::sin(kTau / 12);  // fixed 30deg
  const double tex_phase = kTau / 6;  // fixed: the backdrop is studio furniture, not identity
  const Rgb face = hsv_to_rgb(id.hue, 0.35, id.tone);
  const Rgb sclera = {0.95, 0.95, 0.95};
  const Rgb pupil = {0.06, 0.06, 0.06};
  const Rgb brow = {0.12, 0.12, 0.12};
  const Rgb lip = {0.35, 0.10, 0.10};
  const Rgb mouth_inner = {0.18, 0.05, 0.05};

  const int e = emotion - 1;
  const double eye_lx = kFaceCx - id.eye_spacing, eye_rx = kFaceCx + id.eye_spacing;
  const double brow_y = kEyeY - id.eye_size - kBrowGap + kBrowOff[e];

  std::vector<float> img((size_t)S * S * 3);
  for (int y = 0; y < S; ++y) {
    for (int x = 0; x < S; ++x) {
      const double u = (x + 0.5) / S, v = (y + 0.5) / S;
      const double wave =
          std::sin(kTau * 5.5 * (u * tex_cos + v * tex_sin) + tex_phase);
      const double bg_px = id.bg_shade + 0.25 * wave;
      Rgb c = {bg_px, bg_px, bg_px};
      auto blend = [&](const Rgb& col, double alpha) {
        c.r += (col.r - c.r) * alpha;
        c.g += (col.g - c.g) * alpha;
        c.b += (col.b - c.b) * alpha;
      };

      const double rr = std::hypot(u - kFaceCx, v - kFaceCy) / id.face_radius;
      const double face_shade = 1.0 - 0.25 * std::min(rr * rr, 1.0);
      const Rgb face_px = {face.r * face_shade, face.g * face_shade, face.b * face_shade};
      blend(face_px, coverage(sd_circle(u, v, kFaceCx, kFaceCy, id.face_radius)));
      blend(brow, coverage(sd_hseg(u, v, eye_lx, brow_y, kBrowHalf, kBrowThick)));
      blend(brow, coverage(sd_hseg(u, v, eye_rx, brow_y, kBrowHalf, kBrowThick)));
      for (double ex : {eye_lx, eye_rx}) {
        blend(sclera, coverage(sd_circle(u, v, ex, kEyeY, id.eye_size)));
        blend(pupil, coverage(sd_circle(u, v, ex, kEyeY, id.eye_size * 0.45)));
      }
      // Mouth primitives have zero coverage outside this region (their
      // support plus the anti-alias ramp), so skipping them there changes
      // nothing and avoids the sampled-arc distance on most pixels.
      const bool near_mouth = std::fabs(u - kFaceCx) < 0.17 && v > 0.55 && v < 0.83;
      if (near_mouth) {
        if (emotion == 4) {
          double d = sd_ellipse(u, v, kFaceCx, kMouthCy + 0.01, kMouthRx, kMouthRy);
          blend(mouth_inner, coverage(d));
          blend(lip, coverage(std::fabs(d) - 0.006));
        } else {
          blend(lip, coverage(sd_mouth_arc(u, v, kCurv[e])));
        }
      }

      const size_t base = (size_t)(y * S + x) * 3;
      img[base + 0] = (float)c.r;
      img[base + 1] = (float)c.g;
      img[base + 2] = (float)c.b;
    }
  }
  for (auto& p : img)
    p = std::clamp(p + (float)(kNoiseSigma * rng.normal()), 0.0f, 1.0f);
  return img;
}

SynthSplits synth_dataset(int n_identities, int samples_per_identity, Rng& rng,
                          double train_frac) {
  if (n_identities < 2 || samples_per_identity < 1)
    fail("synth_dataset: need >= 2 identities and >= 1 sample each");
  if (!(train_frac > 0.0 && train_frac < 1.0)) fail("synth_dataset: train_frac must be in (0,1)");
  int n_train = (int)std::llround(train_frac * n_identities);
  n_train = std::clamp(n_train, 1, n_identities - 1);

  SynthSplits out;
  out.identities.reserve((size_t)n_identities);
  for (int i = 0; i < n_identities; ++i) out.identities.push_back(ToyIdentity::sample(rng));

  uint64_t tag = 0;
  auto fill = [&](Dataset& ds, int id_begin, int id_end, bool with_pairs) {
    int local = 0;
    for (int i = id_begin; i < id_end; ++i, ++local) {
      for (int s = 0; s < samples_per_identity; ++s, ++tag) {
        // exact class balance whenever the split size divides by K
        int emotion = (int)(((int64_t)local * samples_per_identity + s) % kNumClasses) + 1;
        LabeledFace face;
        face.label = emotion;
        face.identity = i;
        Rng noise = rng.fork(tag);
        if (with_pairs) {
          Rng noise_pair = noise;  // same stream: the pair differs only inside
                                   // the emotion pixel box
          face.image = synth_face(out.identities[(size_t)i], emotion, noise);
          face.set_hidden_pair(
              synth_face(out.identities[(size_t)i], kNeutralClass, noise_pair));
        } else {
          face.image = synth_face(out.identities[(size_t)i], emotion, noise);
        }
        ds.samples.push_back(std::move(face));
      }
    }
  };
  fill(out.train, 0, n_train, /*with_pairs=*/false);
  fill(out.test, n_train, n_identities, /*with_pairs=*/true);
  return out;
}

// ---- binary dataset snapshot ----
namespace {
constexpr char kDataMagic[4] = {'P', 'F', 'V', 'D'};
constexpr uint32_t kDataVersion = 1;

template <typename T>
void put(std::ofstream& f, const T& v) {
  f.write((const char*)&v, sizeof(T));
}
template <typename T>
void get(std::ifstream& f, T& v, const std::string& path) {
  f.read((char*)&v, sizeof(T));
  if (!f) fail("load_dataset: " + path + ": truncated file");
}

void put_floats(std::ofstream& f, const std::vector<float>& v) {
  put(f, (uint64_t)v.size());
  f.write((const char*)v.data(), (std::streamsize)(v.size() * sizeof(float)));
}
std::vector<float> get_floats(std::ifstream& f, const std::string& path, uint64_t expect) {
  uint64_t n = 0;
  get(f, n, path);
  if (n != expect) fail("load_dataset: " + path + ": unexpected image size");
  std::vector<float> v((size_t)n);
  f.read((char*)v.data(), (std::streamsize)(n * sizeof(float)));
  if (!f) fail("load_dataset: " + path + ": truncated file");
  return v;
}
}  // namespace

void save_dataset(const SynthSplits& splits, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail("save_dataset: cannot open " + path);
  f.write(kDataMagic, 4);
  put(f, kDataVersion);
  put(f, (int32_t)splits.train.image_size);
  put(f, (int32_t)splits.train.num_classes);
  put(f, (uint64_t)splits.identities.size());
  for (const auto& id : splits.identities) {
    for (double v : {id.hue, id.tone, id.face_radius, id.eye_spacing, id.eye_size, id.bg_shade})
      put(f, v);
  }
  for (const Dataset* ds : {&splits.train, &splits.test}) {
    put(f, (uint64_t)ds->samples.size());
    for (const auto& s : ds->samples) {
      put(f, (int32_t)s.label);
      put(f, (int32_t)s.identity);
      put(f, (uint8_t)(s.has_hidden_pair() ? 1 : 0));
      put_floats(f, s.image);
      if (s.has_hidden_pair()) put_floats(f, s.hidden_neutral_pair());
    }
  }
  if (!f) fail("save_dataset: write failed for " + path);
}

SynthSplits load_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail("load_dataset: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kDataMagic, 4) != 0)
    fail("load_dataset: " + path + ": not a dataset file (bad magic)");
  uint32_t version = 0;
  get(f, version, path);
  if (version != kDataVersion)
    fail("load_dataset: " + path + ": unsupported version " + std::to_string(version));
  int32_t image_size = 0, num_classes = 0;
  get(f, image_size, path);
  get(f, num_classes, path);
  SynthSplits out;
  uint64_t n_ids = 0;
  get(f, n_ids, path);
  out.identities.resize((size_t)n_ids);
  for (auto& id : out.identities) {
    get(f, id.hue, path);
    get(f, id.tone, path);
    get(f, id.face_radius, path);
    get(f, id.eye_spacing, path);
    get(f, id.eye_size, path);
    get(f, id.bg_shade, path);
  }
  const uint64_t numel = (uint64_t)image_size * image_size * 3;
  for (Dataset* ds : {&out.train, &out.test}) {
    ds->image_size = image_size;
    ds->num_classes = num_classes;
    uint64_t n = 0;
    get(f, n, path);
    ds->samples.resize((size_t)n);
    for (auto& s : ds->samples) {
      int32_t label = 0, identity = 0;
      uint8_t has_pair = 0;
      get(f, label, path);
      get(f, identity, path);
      get(f, has_pair, path);
      s.label = label;
      s.identity = identity;
      s.image = get_floats(f, path, numel);
      if (has_pair) s.set_hidden_pair(get_floats(f, path, numel));
    }
  }
  return out;
}

// ---- image-folder layout ----
void export_image_folder(const Dataset& ds, const std::string& root) {
  const auto& names = class_names();
  for (const auto& name : names) fs::create_directories(fs::path(root) / name);
  std::vector<int> counter(names.size(), 0);
  for (const auto& s : ds.samples) {
    if (s.label < 1 || s.label > (int)names.size()) fail("export_image_folder: bad label");
    char file[32];
    std::snprintf(file, sizeof(file), "%05d.ppm", counter[(size_t)s.label - 1]++);
    fs::path p = fs::path(root) / names[(size_t)s.label - 1] / file;
    write_ppm(p.string(), s.image.data(), ds.image_size, ds.image_size);
  }
}

Dataset load_image_folder(const std::string& root, int image_size) {
  return load_image_folder(root, image_size, class_names());
}

Dataset load_image_folder(const std::string& root, int image_size,
                          const std::vector<std::string>& class_subdirs) {
  if (!fs::is_directory(root)) fail("load_image_folder: not a directory: " + root);
  // any subdirectory that is not a listed class is an error
  for (const auto& entry : fs::directory_iterator(root)) {
    if (!entry.is_directory()) continue;
    std::string name = entry.path().filename().string();
    if (std::find(class_subdirs.begin(), class_subdirs.end(), name) == class_subdirs.end())
      fail("load_image_folder: unknown class directory: " + entry.path().string());
  }
  Dataset ds;
  ds.image_size = image_size;
  ds.num_classes = (int)class_subdirs.size();
  for (size_t ci = 0; ci < class_subdirs.size(); ++ci) {
    fs::path dir = fs::path(root) / class_subdirs[ci];
    std::vector<std::string> files;
    if (fs::is_directory(dir)) {
      for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file()) files.push_back(entry.path().string());
    }
    if (files.empty()) {
      std::fprintf(stderr, "load_image_folder: warning: no samples for class '%s' in %s\n",
                   class_subdirs[ci].c_str(), root.c_str());
      continue;
    }
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
      int h = 0, w = 0;
      std::vector<float> img = read_ppm(file, h, w);  // throws with path on failure
      LabeledFace s;
      s.image = resize_bilinear(img, h, w, image_size, image_size);
      s.label = (int)ci + 1;
      ds.samples.push_back(std::move(s));
    }
  }
  return ds;
}

// ---- augmentation ----
std::vector<float> augment_apply(const std::vector<float>& image, int size, bool flip,
                                 double scale) {
  if ((size_t)size * size * 3 != image.size()) fail("augment_apply: size mismatch");
  std::vector<float> cur = image;
  if (flip) {
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size / 2; ++x)
        for (int c = 0; c < 3; ++c)
          std::swap(cur[(size_t)((y * size + x) * 3 + c)],
                    cur[(size_t)((y * size + size - 1 - x) * 3 + c)]);
  }
  if (scale == 1.0) return cur;
  if (!(scale > 0.0)) fail("augment_apply: scale must be positive");
  std::vector<float> out((size_t)size * size * 3);
  const double c0 = (size - 1) / 2.0;
  for (int y = 0; y < size; ++y) {
    double sy = c0 + (y - c0) / scale;
    int y0 = (int)std::floor(sy);
    double fy = sy - y0;
    int y0c = std::clamp(y0, 0, size - 1), y1c = std::clamp(y0 + 1, 0, size - 1);
    for (int x = 0; x < size; ++x) {
      double sx = c0 + (x - c0) / scale;
      int x0 = (int)std::floor(sx);
      double fx = sx - x0;
      int x0c = std::clamp(x0, 0, size - 1), x1c = std::clamp(x0 + 1, 0, size - 1);
      for (int c = 0; c < 3; ++c) {
        auto at = [&](int yy, int xx) { return (double)cur[(size_t)((yy * size + xx) * 3 + c)]; };
        double top = at(y0c, x0c) * (1 - fx) + at(y0c, x1c) * fx;
        double bot = at(y1c, x0c) * (1 - fx) + at(y1c, x1c) * fx;
        out[(size_t)((y * size + x) * 3 + c)] = (float)(top * (1 - fy) + bot * fy);
      }
    }
  }
  return out;
}

std::vector<float> augment(const std::vector<float>& image, int size, Rng& rng) {
  const bool flip = rng.uniform() < 0.5;
  const double scale = rng.uniform(0.9, 1.1);
  return augment_apply(image, size, flip, scale);
}

// ---- batching ----
Tensor<float> image_batch(const Dataset& ds, const std::vector<int>& indices) {
  const int S = ds.image_size;
  const size_t numel = (size_t)S * S * 3;
  std::vector<float> data(indices.size() * numel);
  for (size_t b = 0; b < indices.size(); ++b) {
    const auto& s = ds.samples.at((size_t)indices[b]);
    if (s.image.size() != numel) fail("image_batch: sample size mismatch");
    std::memcpy(data.data() + b * numel, s.image.data(), numel * sizeof(float));
  }
  return Tensor<float>::from_data({(int)indices.size(), S, S, 3}, std::move(data));
}

std::vector<int> label_batch(const Dataset& ds, const std::vector<int>& indices) {
  std::vector<int> labels(indices.size());
  for (size_t b = 0; b < indices.size(); ++b)
    labels[b] = ds.samples.at((size_t)indices[b]).label;
  return labels;
}

// ---- identity extractor ----
Tensor<float> IdentityExtractor::embed(const Tensor<float>& images) const {
  if (images.rank() != 4 || images.dim(1) != image_size || images.dim(2) != image_size ||
      images.dim(3) != 3)
    fail("IdentityExtractor::embed: expected (B," + std::to_string(image_size) + "," +
         std::to_string(image_size) + ",3), got " + shape_str(images.shape()));
  Tensor<float> x =
      reshape(images, {images.dim(0), image_size * image_size * 3});
  return fc2.forward(relu(fc1.forward(x)));
}

void IdentityExtractor::freeze() {
  // Drop gradient eligibility and release any gradient buffers left over from
  // pre-training, so a non-empty grad on a frozen parameter is proof of a bug.
  for (Tensor<float>* t : {&fc1.w, &fc1.b, &fc2.w, &fc2.b, &head.w, &head.b})
    if (t->defined()) {
      t->set_requires_grad(false);
      t->grad().clear();
      t->grad().shrink_to_fit();
    }
  frozen = true;
}

void IdentityExtractor::collect(const std::string& prefix, ParamList<float>& out) {
  // the classification head is pre-training scaffolding and is not persisted
  fc1.collect(prefix + ".fc1", out);
  fc2.collect(prefix + ".fc2", out);
}

IdentityExtractor extractor_pretrain(const Dataset& train, Rng& rng, double* holdout_accuracy) {
  // contiguous 0-based identity labels
  std::map<int, int> id_map;
  for (const auto& s : train.samples) {
    if (s.identity < 0) fail("extractor_pretrain: dataset lacks toy identity tags");
    id_map.emplace(s.identity, 0);
  }
  if ((int)id_map.size() < 50)
    fail("extractor_pretrain: need >= 50 identities, got " + std::to_string(id_map.size()));
  int next = 0;
  for (auto& kv : id_map) kv.second = next++;
  const int n_ids = next;

  // stratified holdout: the last quarter of each identity's samples
  std::map<int, std::vector<int>> by_id;
  for (size_t i = 0; i < train.samples.size(); ++i)
    by_id[train.samples[i].identity].push_back((int)i);
  std::vector<int> fit_idx, hold_idx;
  for (auto& kv : by_id) {
    const auto& v = kv.second;
    size_t keep = v.size() - (v.size() >= 2 ? (v.size() + 3) / 4 : 0);
    for (size_t i = 0; i < v.size(); ++i) (i < keep ? fit_idx : hold_idx).push_back(v[i]);
  }

  IdentityExtractor ex;
  ex.image_size = train.image_size;
  const int in_dim = train.image_size * train.image_size * 3;
  ex.fc1.init(in_dim, 128, rng);
  ex.fc2.init(128, IdentityExtractor::kEmbedDim, rng);
  ex.head.init(IdentityExtractor::kEmbedDim, n_ids, rng);

  ParamList<float> params;
  ex.fc1.collect("fc1", params);
  ex.fc2.collect("fc2", params);
  ex.head.collect("head", params);
  AdamConfig ac;
  ac.lr = 1e-3;
  Adam<float> opt(params, ac);

  auto labels0 = [&](const std::vector<int>& idx) {
    std::vector<int> out(idx.size());
    for (size_t i = 0; i < idx.size(); ++i)
      out[i] = id_map.at(train.samples[(size_t)idx[i]].identity);
    return out;
  };

  const int kEpochs = 60, kBatch = 64;
  std::vector<int> order = fit_idx;
  for (int epoch = 0; epoch < kEpochs; ++epoch) {
    rng.shuffle(order);
    for (size_t at = 0; at < order.size(); at += kBatch) {
      std::vector<int> idx(order.begin() + at,
                           order.begin() + std::min(at + kBatch, order.size()));
      auto logits = ex.head.forward(ex.embed(image_batch(train, idx)));
      auto loss = mean_all(cross_entropy_rows(logits, labels0(idx)));
      opt.zero_grad();
      loss.backward();
      opt.step();
    }
  }

  double acc = 0.0;
  {
    NoGradGuard ng;
    int hit = 0;
    for (size_t at = 0; at < hold_idx.size(); at += kBatch) {
      std::vector<int> idx(hold_idx.begin() + at,
                           hold_idx.begin() + std::min(at + kBatch, hold_idx.size()));
      auto logits = ex.head.forward(ex.embed(image_batch(train, idx)));
      auto want = labels0(idx);
      for (size_t b = 0; b < idx.size(); ++b) {
        const float* row = logits.data().data() + b * (size_t)n_ids;
        int arg = 0;
        for (int k = 1; k < n_ids; ++k)
          if (row[k] > row[arg]) arg = k;
        hit += (arg == want[b]);
      }
    }
    acc = hold_idx.empty() ? 0.0 : (double)hit / (double)hold_idx.size();
  }
  if (holdout_accuracy) *holdout_accuracy = acc;
  ex.freeze();
  return ex;
}

IdentityExtractor random_projection_extractor(int image_size, Rng& rng) {
  if (image_size < 4) fail("random_projection_extractor: image_size too small");
  IdentityExtractor ex;
  ex.image_size = image_size;
  ex.fc1.init(image_size * image_size * 3, 128, rng);
  ex.fc2.init(128, IdentityExtractor::kEmbedDim, rng);
  ex.head.init(IdentityExtractor::kEmbedDim, 1, rng);  // unused, kept for shape parity
  ex.freeze();
  return ex;
}

}  // namespace pfv
