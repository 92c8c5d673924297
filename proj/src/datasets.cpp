#include "seggan/datasets.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>

#include "json.hpp"

#include "seggan/error.hpp"

namespace seggan {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr double kTint = 0.05;
constexpr double kBackgroundNoise = 0.2;
constexpr double kShapeNoise = 0.03;
constexpr double kMinSaturation = 0.5;

enum class ShapeKind { Circle, Square, Triangle };

struct Rgb {
  double r, g, b;
};

double quantize(double v) {
  return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
}

bool inside(ShapeKind kind, double cx, double cy, double s, double px, double py) {
  const double dx = px - cx;
  const double dy = py - cy;
  switch (kind) {
    case ShapeKind::Circle:
      return dx * dx + dy * dy <= s * s;
    case ShapeKind::Square:
      return std::abs(dx) <= 0.8 * s && std::abs(dy) <= 0.8 * s;
    case ShapeKind::Triangle:
      return dy >= -s && dy <= s && std::abs(dx) <= 0.5 * (dy + s);
  }
  return false;
}

double color_distance(const Rgb& a, const Rgb& b) {
  return std::sqrt((a.r - b.r) * (a.r - b.r) + (a.g - b.g) * (a.g - b.g) +
                   (a.b - b.b) * (a.b - b.b));
}

double saturation(const Rgb& c) {
  return std::max({c.r, c.g, c.b}) - std::min({c.r, c.g, c.b});
}

Rgb random_color(Rng& rng, double lo, double hi) {
  const double r = rng.uniform(lo, hi);
  const double g = rng.uniform(lo, hi);
  const double b = rng.uniform(lo, hi);
  return {r, g, b};
}

std::string sample_id(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "shapes_%05d", index);
  return buf;
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

void png_warn(png_structp, png_const_charp) {}

enum class LabelRead { Ok, Corrupt, BadFormat };

// Plain C-style decode so that libpng's longjmp never crosses C++ frames.
LabelRead decode_label_png(std::FILE* file, std::vector<std::uint8_t>& values,
                           int& height, int& width) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                           nullptr, png_warn);
  if (png == nullptr) return LabelRead::Corrupt;
  png_infop info = png_create_info_struct(png);
  png_bytep* volatile rows = nullptr;
  LabelRead result = LabelRead::Ok;
  if (info == nullptr || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::free(rows);
    return LabelRead::Corrupt;
  }
  png_init_io(png, file);
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int depth = png_get_bit_depth(png, info);
  const int type = png_get_color_type(png, info);
  if (depth != 8 || (type != PNG_COLOR_TYPE_GRAY && type != PNG_COLOR_TYPE_PALETTE)) {
    result = LabelRead::BadFormat;
  } else {
    height = static_cast<int>(png_get_image_height(png, info));
    width = static_cast<int>(png_get_image_width(png, info));
    values.assign(static_cast<std::size_t>(height) * width, 0);
    rows = static_cast<png_bytep*>(std::malloc(sizeof(png_bytep) * height));
    for (int y = 0; y < height; ++y) {
      rows[y] = values.data() + static_cast<std::size_t>(y) * width;
    }
    png_read_image(png, rows);
    png_read_end(png, nullptr);
  }
  std::free(rows);
  png_destroy_read_struct(&png, &info, nullptr);
  return result;
}

}  // namespace

void ShapesConfig::validate() const {
  if (num_samples < 2) throw ConfigError("shapes: num_samples must be >= 2");
  if (image_size < 32 || image_size % 32 != 0) {
    throw ConfigError("shapes: image_size must be a positive multiple of 32, got " +
                      std::to_string(image_size));
  }
  if (num_classes < 2 || num_classes > 4) {
    throw ConfigError("shapes: num_classes must lie in [2, 4]");
  }
  if (min_shapes < 1 || max_shapes < min_shapes) {
    throw ConfigError("shapes: need 1 <= min_shapes <= max_shapes");
  }
}

Sample gen_shapes_sample(const ShapesConfig& cfg, int index) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(index)));
  const int size = cfg.image_size;
  Sample s;
  s.id = sample_id(index);
  s.image = Tensor({1, 3, size, size});
  s.labels = LabelMap(1, size, size, 0);

  // Grey, grainy background; flat, saturated shapes.
  const double grey = rng.uniform(0.25, 0.75);
  const Rgb bg = {grey + rng.uniform(-kTint, kTint), grey + rng.uniform(-kTint, kTint),
                  grey + rng.uniform(-kTint, kTint)};
  std::vector<Rgb> pixel(static_cast<std::size_t>(size) * size);
  for (auto& p : pixel) {
    p = {bg.r + rng.uniform(-kBackgroundNoise, kBackgroundNoise),
         bg.g + rng.uniform(-kBackgroundNoise, kBackgroundNoise),
         bg.b + rng.uniform(-kBackgroundNoise, kBackgroundNoise)};
  }

  const int count = rng.range(cfg.min_shapes, cfg.max_shapes);
  const double min_size = 0.15 * size;
  const double max_size = 0.3 * size;
  struct Disc {
    double x, y, r;
  };
  std::vector<Disc> discs;
  for (int k = 0; k < count; ++k) {
    const int cls = 1 + static_cast<int>(rng.below(cfg.num_classes - 1));
    const auto kind = static_cast<ShapeKind>(cls - 1);
    const double extent = rng.uniform(min_size, max_size);
    double cx = 0.0, cy = 0.0;
    bool placed = false;
    for (int tries = 0; tries < 32 && !placed; ++tries) {
      cx = rng.uniform(extent, size - extent);
      cy = rng.uniform(extent, size - extent);
      placed = std::none_of(discs.begin(), discs.end(), [&](const Disc& d) {
        return std::hypot(cx - d.x, cy - d.y) < extent + d.r;
      });
    }
    if (!placed) continue;
    discs.push_back({cx, cy, extent});
    Rgb color = random_color(rng, 0.0, 1.0);
    for (int tries = 0; tries < 64 && (saturation(color) < kMinSaturation ||
                                        color_distance(color, bg) < 0.4);
         ++tries) {
      color = random_color(rng, 0.0, 1.0);
    }
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        if (!inside(kind, cx, cy, extent, x + 0.5, y + 0.5)) continue;
        const std::size_t i = static_cast<std::size_t>(y) * size + x;
        pixel[i] = {color.r + rng.uniform(-kShapeNoise, kShapeNoise),
                    color.g + rng.uniform(-kShapeNoise, kShapeNoise),
                    color.b + rng.uniform(-kShapeNoise, kShapeNoise)};
        s.labels.values[i] = static_cast<std::uint8_t>(cls);
      }
    }
  }
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const Rgb& p = pixel[static_cast<std::size_t>(y) * size + x];
      s.image.at(0, 0, y, x) = quantize(p.r);
      s.image.at(0, 1, y, x) = quantize(p.g);
      s.image.at(0, 2, y, x) = quantize(p.b);
    }
  }
  return s;
}

Dataset gen_shapes_dataset(const ShapesConfig& cfg) {
  cfg.validate();
  Dataset d;
  d.num_classes = cfg.num_classes;
  const int n_train = cfg.num_samples * 4 / 5;
  for (int i = 0; i < cfg.num_samples; ++i) {
    (i < n_train ? d.train : d.val).push_back(gen_shapes_sample(cfg, i));
  }
  return d;
}

Tensor read_rgb_png(const std::string& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw DataError(DataError::Kind::Unreadable,
                    "cannot read image " + path + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    throw DataError(DataError::Kind::Unreadable,
                    "cannot decode image " + path + ": " + img.message);
  }
  const int h = static_cast<int>(img.height);
  const int w = static_cast<int>(img.width);
  Tensor out({1, 3, h, w});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        out.at(0, c, y, x) = buf[(static_cast<std::size_t>(y) * w + x) * 3 + c] / 255.0;
      }
    }
  }
  return out;
}

void write_rgb_png(const std::string& path, const Tensor& image) {
  if (image.n() != 1 || image.c() != 3) {
    throw ConfigError("write_rgb_png: expected [1,3,H,W], got " + image.shape().str());
  }
  const int h = image.h();
  const int w = image.w();
  std::vector<png_byte> buf(static_cast<std::size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(image.at(0, c, y, x), 0.0, 1.0);
        buf[(static_cast<std::size_t>(y) * w + x) * 3 + c] =
            static_cast<png_byte>(std::lround(v * 255.0));
      }
    }
  }
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr)) {
    throw InputError("cannot write " + path + ": " + img.message);
  }
}

LabelMap read_label_png(const std::string& path) {
  std::unique_ptr<std::FILE, FileCloser> file(std::fopen(path.c_str(), "rb"));
  if (!file) throw DataError(DataError::Kind::Unreadable, "cannot open label " + path);
  png_byte sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw DataError(DataError::Kind::Unreadable, "not a PNG file: " + path);
  }
  LabelMap out;
  std::vector<std::uint8_t> values;
  int h = 0, w = 0;
  switch (decode_label_png(file.get(), values, h, w)) {
    case LabelRead::Corrupt:
      throw DataError(DataError::Kind::Unreadable, "cannot decode label " + path);
    case LabelRead::BadFormat:
      throw DataError(DataError::Kind::BadFormat,
                      "label " + path + " must be 8-bit grayscale or palette");
    case LabelRead::Ok:
      break;
  }
  out = LabelMap(1, h, w);
  out.values = std::move(values);
  return out;
}

void write_label_png(const std::string& path, const LabelMap& labels) {
  if (labels.n != 1) throw ConfigError("write_label_png: expected one label map");
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(labels.w);
  img.height = static_cast<png_uint_32>(labels.h);
  img.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.c_str(), 0, labels.values.data(), 0,
                               nullptr)) {
    throw InputError("cannot write " + path + ": " + img.message);
  }
}

Sample load_pair(const std::string& image_path, const std::string& label_path,
                 int num_classes) {
  Sample s;
  s.image = read_rgb_png(image_path);
  s.labels = read_label_png(label_path);
  if (s.image.h() != s.labels.h || s.image.w() != s.labels.w) {
    throw DataError(DataError::Kind::SizeMismatch,
                    "image " + image_path + " is " + std::to_string(s.image.w()) +
                        "x" + std::to_string(s.image.h()) + " but label is " +
                        std::to_string(s.labels.w) + "x" +
                        std::to_string(s.labels.h));
  }
  for (std::uint8_t v : s.labels.values) {
    if (v != kIgnoreLabel && v >= num_classes) {
      throw DataError(DataError::Kind::LabelOutOfRange,
                      "label " + label_path + " contains value " +
                          std::to_string(v) + " (classes: " +
                          std::to_string(num_classes) + ")");
    }
  }
  s.id = fs::path(image_path).stem().string();
  return s;
}

void write_dataset(const std::string& root, const Dataset& data,
                   const ShapesConfig& cfg) {
  const fs::path base(root);
  fs::create_directories(base / "images");
  fs::create_directories(base / "labels");
  json manifest;
  manifest["num_classes"] = data.num_classes;
  manifest["seed"] = cfg.seed;
  manifest["image_size"] = cfg.image_size;
  json ids = json::array();
  json splits = json::object();
  for (const auto* split : {&data.train, &data.val}) {
    json list = json::array();
    for (const Sample& s : *split) {
      write_rgb_png((base / "images" / (s.id + ".png")).string(), s.image);
      write_label_png((base / "labels" / (s.id + ".png")).string(), s.labels);
      list.push_back(s.id);
      ids.push_back(s.id);
    }
    splits[split == &data.train ? "train" : "val"] = list;
  }
  manifest["ids"] = ids;
  manifest["splits"] = splits;
  std::ofstream f(base / "manifest.json");
  if (!f) throw InputError("cannot write manifest in " + root);
  f << manifest.dump(2) << '\n';
}

Dataset load_dataset(const std::string& root) {
  const fs::path base(root);
  std::ifstream f(base / "manifest.json");
  if (!f) {
    throw DataError(DataError::Kind::Unreadable,
                    "no manifest.json in dataset directory " + root);
  }
  json manifest;
  try {
    f >> manifest;
  } catch (const json::exception& e) {
    throw DataError(DataError::Kind::BadFormat,
                    "malformed manifest in " + root + ": " + e.what());
  }
  Dataset d;
  try {
    d.num_classes = manifest.at("num_classes").get<int>();
    if (d.num_classes < 2 || d.num_classes > 255) {
      throw DataError(DataError::Kind::BadFormat, "manifest num_classes out of range");
    }
    const json& splits = manifest.at("splits");
    for (const char* name : {"train", "val"}) {
      auto& target = std::string(name) == "train" ? d.train : d.val;
      if (!splits.contains(name)) continue;
      for (const auto& id : splits.at(name)) {
        const std::string sid = id.get<std::string>();
        Sample s = load_pair((base / "images" / (sid + ".png")).string(),
                             (base / "labels" / (sid + ".png")).string(),
                             d.num_classes);
        s.id = sid;
        target.push_back(std::move(s));
      }
    }
  } catch (const json::exception& e) {
    throw DataError(DataError::Kind::BadFormat,
                    "malformed manifest in " + root + ": " + e.what());
  }
  return d;
}

Sample augment(const Sample& sample, int crop_size,
               std::pair<double, double> scale_range, Rng& rng) {
  if (crop_size < 1) throw ConfigError("augment: crop_size must be >= 1");
  if (!(scale_range.first > 0.0) || scale_range.second < scale_range.first) {
    throw ConfigError("augment: scale range must satisfy 0 < lo <= hi");
  }
  const double scale = rng.uniform(scale_range.first, scale_range.second);
  const int h = sample.image.h();
  const int w = sample.image.w();
  const int sh = std::max(1, static_cast<int>(std::lround(h * scale)));
  const int sw = std::max(1, static_cast<int>(std::lround(w * scale)));
  // A scaled image smaller than the crop lands at a random spot inside it.
  const int oy = rng.range(std::min(0, sh - crop_size), std::max(0, sh - crop_size));
  const int ox = rng.range(std::min(0, sw - crop_size), std::max(0, sw - crop_size));

  const double ry = static_cast<double>(h) / sh;
  const double rx = static_cast<double>(w) / sw;
  Sample out;
  out.id = sample.id;
  out.image = Tensor({1, 3, crop_size, crop_size});
  out.labels = LabelMap(1, crop_size, crop_size, kIgnoreLabel);
  for (int y = 0; y < crop_size; ++y) {
    const int sy = y + oy;
    if (sy < 0 || sy >= sh) continue;
    const double fy = std::clamp((sy + 0.5) * ry - 0.5, 0.0, h - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, h - 1);
    const double ty = fy - y0;
    const int ny = std::min(h - 1, static_cast<int>((sy + 0.5) * ry));
    for (int x = 0; x < crop_size; ++x) {
      const int sx = x + ox;
      if (sx < 0 || sx >= sw) continue;
      const double fx = std::clamp((sx + 0.5) * rx - 0.5, 0.0, w - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, w - 1);
      const double tx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double* p = sample.image.plane(0, c);
        const double a = p[y0 * w + x0] + tx * (p[y0 * w + x1] - p[y0 * w + x0]);
        const double b = p[y1 * w + x0] + tx * (p[y1 * w + x1] - p[y1 * w + x0]);
        out.image.at(0, c, y, x) = a + ty * (b - a);
      }
      const int nx = std::min(w - 1, static_cast<int>((sx + 0.5) * rx));
      out.labels.at(0, y, x) = sample.labels.at(0, ny, nx);
    }
  }
  return out;
}

}  // namespace seggan
