#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <string>
#include <unordered_set>
#include <vector>

#include "mrunet/metrics.hpp"
#include "mrunet/tensor_io.hpp"

namespace mrunet {

/// Image [H, W, C] with values in [0, 1] and its mask [H, W, 1].
struct Sample {
  Tensor<float> image;
  BinaryMask mask;
  std::string id;
};

struct Dataset {
  std::vector<Sample> samples;
  std::string source;

  std::size_t size() const noexcept { return samples.size(); }

  Dataset subset(const std::vector<std::size_t>& indices) const {
    Dataset d;
    d.source = source;
    d.samples.reserve(indices.size());
    for (auto i : indices) d.samples.push_back(samples.at(i));
    return d;
  }
};

inline void validate_sample(const Sample& s) {
  const Shape& is = s.image.shape();
  const Shape& ms = s.mask.shape();
  if (is.size() != 3 || ms.size() != 3 || ms[2] != 1 || is[0] != ms[0] || is[1] != ms[1])
    throw pairing_error("sample " + s.id + ": image " + shape_string(is) + " and mask " + shape_string(ms) +
                        " do not pair");
  for (float v : s.image.values())
    if (!(v >= 0.0f && v <= 1.0f)) throw domain_error("sample " + s.id + ": image value outside [0,1]");
}

// ---------------------------------------------------------------- netpbm

struct Netpbm {
  std::size_t width = 0, height = 0, channels = 0;
  std::vector<std::uint8_t> pixels;  // row-major, interleaved channels
};

namespace detail {

inline std::size_t netpbm_token(std::istream& is, const std::string& path) {
  int c = is.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = is.get();
    } else if (!std::isspace(c)) {
      break;
    }
    c = is.get();
  }
  if (c == EOF || !std::isdigit(c)) throw format_error(path + ": malformed netpbm header");
  std::size_t v = 0;
  while (c != EOF && std::isdigit(c)) {
    v = v * 10 + static_cast<std::size_t>(c - '0');
    if (v > (1u << 24)) throw format_error(path + ": netpbm header value too large");
    c = is.get();
  }
  if (c == EOF || !std::isspace(c)) throw format_error(path + ": malformed netpbm header");
  return v;
}

}  // namespace detail

/// Binary PGM (P5) or PPM (P6), maxval 255.
inline Netpbm read_netpbm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot open " + path);
  char magic[2] = {};
  if (!is.read(magic, 2) || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6'))
    throw format_error(path + ": not a binary PGM/PPM file");
  Netpbm img;
  img.channels = magic[1] == '5' ? 1 : 3;
  img.width = detail::netpbm_token(is, path);
  img.height = detail::netpbm_token(is, path);
  const std::size_t maxval = detail::netpbm_token(is, path);
  if (img.width == 0 || img.height == 0) throw format_error(path + ": zero image extent");
  if (maxval != 255) throw format_error(path + ": only maxval 255 is supported");
  img.pixels.resize(img.width * img.height * img.channels);
  if (!is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size())))
    throw format_error(path + ": truncated pixel data");
  return img;
}

inline void write_netpbm(const std::string& path, const Netpbm& img) {
  if (img.channels != 1 && img.channels != 3) throw format_error("netpbm supports 1 or 3 channels");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("cannot open " + path + " for writing");
  os << (img.channels == 1 ? "P5" : "P6") << '\n' << img.width << ' ' << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!os) throw io_error("write failed: " + path);
}

inline Tensor<float> netpbm_to_image(const Netpbm& img) {
  Tensor<float> t(Shape{img.height, img.width, img.channels});
  for (std::size_t i = 0; i < img.pixels.size(); ++i) t[i] = static_cast<float>(img.pixels[i]) / 255.0f;
  return t;
}

inline BinaryMask netpbm_to_mask(const Netpbm& img) {
  if (img.channels != 1) throw format_error("mask must be a grayscale PGM");
  std::vector<std::uint8_t> bits(img.pixels.size());
  for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = img.pixels[i] >= 128 ? 1 : 0;
  return BinaryMask(Shape{img.height, img.width, 1}, std::move(bits));
}

inline Netpbm image_to_netpbm(const Tensor<float>& t) {
  Netpbm img;
  img.height = t.extent(0);
  img.width = t.extent(1);
  img.channels = t.extent(2);
  img.pixels.resize(t.size());
  for (std::size_t i = 0; i < t.size(); ++i)
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(t[i], 0.0f, 1.0f) * 255.0f));
  return img;
}

inline Netpbm mask_to_netpbm(const BinaryMask& m) {
  Netpbm img;
  img.height = m.shape()[0];
  img.width = m.shape()[1];
  img.channels = 1;
  img.pixels.resize(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) img.pixels[i] = m[i] ? 255 : 0;
  return img;
}

// ---------------------------------------------------------------- loading

/// Reads an image (PGM, PPM or TNSR) and a PGM mask. Netpbm pixels are
/// divided by 255; TNSR images must already hold values in [0, 1]. Mask
/// pixels >= 128 are foreground.
inline Sample load_sample(const std::string& image_path, const std::string& mask_path) {
  Sample s;
  s.id = std::filesystem::path(image_path).stem().string();
  const std::string ext = std::filesystem::path(image_path).extension().string();
  if (ext == ".tnsr") {
    Tensor<float> t = load_tnsr<float>(image_path);
    if (t.rank() == 2) t = t.reshaped(Shape{t.extent(0), t.extent(1), 1});
    if (t.rank() != 3) throw format_error(image_path + ": TNSR image must be [H,W] or [H,W,C]");
    for (float v : t.values())
      if (!(v >= 0.0f && v <= 1.0f)) throw format_error(image_path + ": TNSR image values must lie in [0,1]");
    s.image = std::move(t);
  } else {
    s.image = netpbm_to_image(read_netpbm(image_path));
  }
  s.mask = netpbm_to_mask(read_netpbm(mask_path));
  validate_sample(s);
  return s;
}

/// `<root>/images/<id>.(pgm|ppm|tnsr)` paired with `<root>/masks/<id>.pgm`,
/// ordered by id.
inline Dataset load_dataset(const std::string& root) {
  namespace fs = std::filesystem;
  const fs::path images = fs::path(root) / "images";
  const fs::path masks = fs::path(root) / "masks";
  if (!fs::is_directory(images) || !fs::is_directory(masks))
    throw io_error(root + ": expected images/ and masks/ subdirectories");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(images)) {
    const std::string ext = e.path().extension().string();
    if (e.is_regular_file() && (ext == ".pgm" || ext == ".ppm" || ext == ".tnsr")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) { return a.stem().string() < b.stem().string(); });
  Dataset d;
  d.source = "dir:" + root;
  std::unordered_set<std::string> seen;
  for (const auto& f : files) {
    const std::string id = f.stem().string();
    if (!seen.insert(id).second) throw pairing_error(root + ": duplicate image id " + id);
    const fs::path m = masks / (id + ".pgm");
    if (!fs::exists(m)) throw pairing_error(root + ": no mask for image " + id);
    d.samples.push_back(load_sample(f.string(), m.string()));
  }
  if (d.samples.empty()) throw io_error(root + ": no images found");
  return d;
}

inline void save_dataset(const Dataset& d, const std::string& root) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(root) / "images");
  fs::create_directories(fs::path(root) / "masks");
  for (const auto& s : d.samples) {
    const std::size_t c = s.image.extent(2);
    const fs::path img = fs::path(root) / "images" / (s.id + (c == 1 ? ".pgm" : c == 3 ? ".ppm" : ".tnsr"));
    if (c == 1 || c == 3) {
      write_netpbm(img.string(), image_to_netpbm(s.image));
    } else {
      save_tnsr(img.string(), s.image);
    }
    write_netpbm((fs::path(root) / "masks" / (s.id + ".pgm")).string(), mask_to_netpbm(s.mask));
  }
}

// ---------------------------------------------------------------- resize

/// Bilinear resampling with half-pixel centers, for images [H, W, C].
inline Tensor<float> resize(const Tensor<float>& t, std::size_t out_h, std::size_t out_w) {
  if (t.rank() != 3) throw shape_error("resize: expected [H,W,C]");
  if (out_h == 0 || out_w == 0) throw invalid_shape_error("resize: zero target extent");
  const std::size_t h = t.extent(0), w = t.extent(1), c = t.extent(2);
  if (h == out_h && w == out_w) return t;
  Tensor<float> out(Shape{out_h, out_w, c});
  auto source = [](std::size_t dst, std::size_t in, std::size_t out, std::size_t& i0, std::size_t& i1, double& f) {
    const double s = std::clamp((static_cast<double>(dst) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5,
                                0.0, static_cast<double>(in - 1));
    i0 = static_cast<std::size_t>(std::floor(s));
    i1 = std::min(i0 + 1, in - 1);
    f = s - static_cast<double>(i0);
  };
  for (std::size_t y = 0; y < out_h; ++y) {
    std::size_t y0, y1;
    double fy;
    source(y, h, out_h, y0, y1, fy);
    for (std::size_t x = 0; x < out_w; ++x) {
      std::size_t x0, x1;
      double fx;
      source(x, w, out_w, x0, x1, fx);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double a = t[(y0 * w + x0) * c + ch], b = t[(y0 * w + x1) * c + ch];
        const double d = t[(y1 * w + x0) * c + ch], e = t[(y1 * w + x1) * c + ch];
        const double top = a + (b - a) * fx, bottom = d + (e - d) * fx;
        out[(y * out_w + x) * c + ch] = static_cast<float>(top + (bottom - top) * fy);
      }
    }
  }
  return out;
}

/// Nearest-neighbour resampling for masks; output stays binary.
inline BinaryMask resize(const BinaryMask& m, std::size_t out_h, std::size_t out_w) {
  if (m.shape().size() != 3) throw shape_error("resize: expected mask [H,W,1]");
  if (out_h == 0 || out_w == 0) throw invalid_shape_error("resize: zero target extent");
  const std::size_t h = m.shape()[0], w = m.shape()[1], c = m.shape()[2];
  std::vector<std::uint8_t> bits(out_h * out_w * c);
  for (std::size_t y = 0; y < out_h; ++y) {
    const std::size_t sy = std::min(h - 1, (2 * y + 1) * h / (2 * out_h));
    for (std::size_t x = 0; x < out_w; ++x) {
      const std::size_t sx = std::min(w - 1, (2 * x + 1) * w / (2 * out_w));
      for (std::size_t ch = 0; ch < c; ++ch) bits[(y * out_w + x) * c + ch] = m[(sy * w + sx) * c + ch];
    }
  }
  return BinaryMask(Shape{out_h, out_w, c}, std::move(bits));
}

inline Sample resize(const Sample& s, std::size_t out_h, std::size_t out_w) {
  return {resize(s.image, out_h, out_w), resize(s.mask, out_h, out_w), s.id};
}

// ---------------------------------------------------------------- k-fold

struct FoldSplit {
  std::vector<std::vector<std::size_t>> folds;

  std::size_t k() const noexcept { return folds.size(); }

  /// Every index outside fold `held_out`, ascending.
  std::vector<std::size_t> training_indices(std::size_t held_out) const {
    std::vector<std::size_t> out;
    for (std::size_t f = 0; f < folds.size(); ++f)
      if (f != held_out) out.insert(out.end(), folds[f].begin(), folds[f].end());
    std::sort(out.begin(), out.end());
    return out;
  }
};

/// Seeded shuffle of 0..n-1, cut into k contiguous folds; the first n % k
/// folds receive one extra element.
inline FoldSplit kfold_split(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw invalid_split_error("kfold_split: k must be at least 2");
  if (n < k) throw invalid_split_error("kfold_split: " + std::to_string(n) + " samples cannot fill " +
                                       std::to_string(k) + " folds");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  FoldSplit split;
  std::size_t pos = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t len = n / k + (f < n % k ? 1 : 0);
    split.folds.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(pos),
                             order.begin() + static_cast<std::ptrdiff_t>(pos + len));
    pos += len;
  }
  return split;
}

// ---------------------------------------------------------------- synthetic data

enum class Challenge { clean, scale_vary, faint_boundary, perturbed, outliers, majority_class };

inline const char* to_string(Challenge c) {
  switch (c) {
    case Challenge::clean: return "clean";
    case Challenge::scale_vary: return "scale_vary";
    case Challenge::faint_boundary: return "faint_boundary";
    case Challenge::perturbed: return "perturbed";
    case Challenge::outliers: return "outliers";
    case Challenge::majority_class: return "majority_class";
  }
  return "?";
}

inline Challenge parse_challenge(const std::string& s) {
  for (auto c : {Challenge::clean, Challenge::scale_vary, Challenge::faint_boundary, Challenge::perturbed,
                 Challenge::outliers, Challenge::majority_class})
    if (s == to_string(c)) return c;
  throw usage_error("unknown challenge '" + s + "'");
}

struct SynthSpec {
  std::size_t n = 200;
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t channels = 3;
  Challenge challenge = Challenge::clean;
  std::uint64_t seed = 0;
};

/// What the generator knows about each sample it drew.
struct SynthAudit {
  double foreground_fraction = 0.0;
  std::vector<std::size_t> distractor_pixels;  // flat h*w indices
};

struct SynthDataset {
  Dataset dataset;
  std::vector<SynthAudit> audit;
};

namespace detail {

struct Ellipse {
  double cy, cx, ry, rx, theta;

  /// Signed distance proxy: < 1 inside, in units of the radii.
  double radius_at(double y, double x) const {
    const double dy = y - cy, dx = x - cx;
    const double c = std::cos(theta), s = std::sin(theta);
    const double u = (dx * c + dy * s) / rx, v = (-dx * s + dy * c) / ry;
    return std::sqrt(u * u + v * v);
  }
};

}  // namespace detail

/// Elliptical foreground blobs on a darker background. Masks are exact;
/// each challenge perturbs only the image, except majority_class which
/// swaps foreground and background.
inline SynthDataset synth_generate(const SynthSpec& spec) {
  if (spec.height % 16 || spec.width % 16 || spec.height == 0 || spec.width == 0)
    throw shape_error("synth_generate: extents must be positive multiples of 16");
  if (spec.channels == 0) throw shape_error("synth_generate: need at least one channel");
  std::mt19937_64 rng(spec.seed ^ (static_cast<std::uint64_t>(spec.challenge) << 56));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  std::normal_distribution<double> gauss(0.0, 1.0);

  const std::size_t h = spec.height, w = spec.width, c = spec.channels, px = h * w;
  const double side = static_cast<double>(std::min(h, w));
  const Challenge ch = spec.challenge;
  const double lo_frac = ch == Challenge::clean || ch == Challenge::majority_class ? 0.05 : 0.02;
  const double hi_frac = ch == Challenge::clean ? 0.4 : ch == Challenge::majority_class ? 0.35 : 0.55;

  SynthDataset out;
  out.dataset.source = std::string("synth:") + to_string(ch) + ":" + std::to_string(spec.seed);
  for (std::size_t s = 0; s < spec.n; ++s) {
    std::vector<detail::Ellipse> blobs;
    std::vector<double> dist(px);
    std::vector<std::uint8_t> inside(px);
    double frac = 0.0;
    do {
      blobs.clear();
      const double scale = ch == Challenge::scale_vary ? std::exp(uniform(std::log(0.5), std::log(2.0))) : 1.0;
      const int count = 1 + static_cast<int>(unit(rng) * 3.0);
      for (int b = 0; b < count; ++b) {
        const double ry = std::max(2.0, side * uniform(0.08, 0.2) * scale);
        const double rx = std::max(2.0, side * uniform(0.08, 0.2) * scale);
        blobs.push_back({uniform(0.15, 0.85) * static_cast<double>(h), uniform(0.15, 0.85) * static_cast<double>(w),
                         ry, rx, uniform(0.0, std::numbers::pi)});
      }
      std::size_t fg = 0;
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          double d = 1e9;
          for (const auto& e : blobs) d = std::min(d, e.radius_at(static_cast<double>(y) + 0.5, static_cast<double>(x) + 0.5));
          dist[y * w + x] = d;
          inside[y * w + x] = d < 1.0 ? 1 : 0;
          fg += inside[y * w + x];
        }
      frac = static_cast<double>(fg) / static_cast<double>(px);
    } while (frac < lo_frac || frac > hi_frac);

    const double bg = uniform(0.1, 0.3);
    const double contrast = ch == Challenge::faint_boundary ? uniform(0.12, 0.2) : uniform(0.4, 0.6);
    const double fgv = bg + contrast;
    const double noise = ch == Challenge::perturbed ? 0.08 : ch == Challenge::faint_boundary ? 0.04 : 0.03;
    std::vector<double> tint(c);
    for (auto& t : tint) t = uniform(0.8, 1.0);
    const double fy = uniform(0.15, 0.45), fx = uniform(0.15, 0.45), phase = uniform(0.0, 6.28);

    std::vector<std::uint8_t> mask(px);
    Tensor<float> image(Shape{h, w, c});
    for (std::size_t i = 0; i < px; ++i) {
      const std::size_t y = i / w, x = i % w;
      double level;
      if (ch == Challenge::faint_boundary) {
        // Smoothstep ramp 0.3 radii wide, centred on the boundary.
        const double t = std::clamp((1.15 - dist[i]) / 0.3, 0.0, 1.0);
        level = bg + contrast * t * t * (3.0 - 2.0 * t);
      } else {
        level = inside[i] ? fgv : bg;
      }
      if (ch == Challenge::perturbed)
        level += 0.12 * std::sin(fy * static_cast<double>(y) + phase) * std::cos(fx * static_cast<double>(x));
      if (ch == Challenge::majority_class) level = inside[i] ? bg : fgv;
      mask[i] = ch == Challenge::majority_class ? static_cast<std::uint8_t>(1 - inside[i]) : inside[i];
      for (std::size_t k = 0; k < c; ++k)
        image[i * c + k] = static_cast<float>(std::clamp(level * tint[k] + noise * gauss(rng), 0.0, 1.0));
    }

    SynthAudit audit;
    if (ch == Challenge::outliers) {
      const int count = 3 + static_cast<int>(unit(rng) * 4.0);
      for (int d = 0; d < count; ++d) {
        for (int attempt = 0; attempt < 100; ++attempt) {
          const auto cy = static_cast<std::size_t>(uniform(2.0, static_cast<double>(h) - 3.0));
          const auto cx = static_cast<std::size_t>(uniform(2.0, static_cast<double>(w) - 3.0));
          bool clear = true;
          for (std::size_t y = cy - 2; y <= cy + 2 && clear; ++y)
            for (std::size_t x = cx - 2; x <= cx + 2; ++x)
              if (mask[y * w + x]) clear = false;
          if (!clear) continue;
          for (std::size_t y = cy - 1; y <= cy + 1; ++y)
            for (std::size_t x = cx - 1; x <= cx + 1; ++x) {
              for (std::size_t k = 0; k < c; ++k) image[(y * w + x) * c + k] = 1.0f;
              audit.distractor_pixels.push_back(y * w + x);
            }
          break;
        }
      }
      std::sort(audit.distractor_pixels.begin(), audit.distractor_pixels.end());
      audit.distractor_pixels.erase(std::unique(audit.distractor_pixels.begin(), audit.distractor_pixels.end()),
                                    audit.distractor_pixels.end());
    }

    Sample sample;
    sample.image = std::move(image);
    sample.mask = BinaryMask(Shape{h, w, 1}, std::move(mask));
    sample.id = std::string("synth_") + to_string(ch) + "_" + std::to_string(spec.seed) + "_" +
                std::string(4 - std::min<std::size_t>(4, std::to_string(s).size()), '0') + std::to_string(s);
    audit.foreground_fraction = sample.mask.coverage();
    out.dataset.samples.push_back(std::move(sample));
    out.audit.push_back(std::move(audit));
  }
  return out;
}

}  // namespace mrunet
