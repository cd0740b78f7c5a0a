#include "vidann/features.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "vidann/error.hpp"

namespace vidann {

FeatureMap FeatureExtractor::extract_window(const FrameStore& store, int frame, const CropWindow& window) const {
  return extract(crop_window(*store.frame(frame), window));
}

FeatureMap FeatureExtractor::extract_frame(const FrameStore& store, int frame, int resolution) const {
  return extract(resample_full(*store.frame(frame), resolution));
}

// ---------------------------------------------------------------------------------------------

GradientExtractor::GradientExtractor(GradientExtractorConfig config) : config_(std::move(config)) {
  if (config_.stride < 1) throw ContractViolation("GradientExtractor: stride must be >= 1");
  if (!(config_.epsilon > 0.0)) throw ContractViolation("GradientExtractor: epsilon must be positive");
}

std::string GradientExtractor::descriptor() const {
  std::ostringstream ss;
  ss << "gradient-hist/s" << config_.stride << "/c" << channels() << "/eps" << config_.epsilon;
  return ss.str();
}

namespace {

// Signed orientation in 8 sectors of 45 degrees, without atan2.
inline int orientation_bin(float gx, float gy) {
  const float ax = std::fabs(gx), ay = std::fabs(gy);
  const int q = gy < 0.0f ? (gx < 0.0f ? 2 : 3) : (gx > 0.0f ? 0 : 1);
  const int sub = (q & 1) ? !(ay > ax) : !(ay < ax);
  return 2 * q + sub;
}

}  // namespace

FeatureMap GradientExtractor::extract(const ImageF& patch) const {
  const int res = patch.width;
  if (patch.height != res ||
      std::find(config_.resolutions.begin(), config_.resolutions.end(), res) == config_.resolutions.end()) {
    throw ContractViolation("GradientExtractor: unsupported input resolution " + std::to_string(patch.width) + "x" +
                            std::to_string(patch.height));
  }
  const int s = config_.stride;
  const int n = res / s;
  const int off = (res - n * s) / 2;
  constexpr int C = kOrientationBins + 1;
  std::vector<double> cells(static_cast<std::size_t>(n) * n * C, 0.0);

  const int span = n * s;
  std::vector<float> gx(span), gy(span), mag(span);
  for (int y = off; y < off + span; ++y) {
    const float* row = &patch.pixels[static_cast<std::size_t>(y) * res];
    const float* up = &patch.pixels[static_cast<std::size_t>(std::max(y - 1, 0)) * res];
    const float* down = &patch.pixels[static_cast<std::size_t>(std::min(y + 1, res - 1)) * res];
    for (int i = 0; i < span; ++i) {
      const int x = off + i;
      gx[i] = 0.5f * (row[std::min(x + 1, res - 1)] - row[std::max(x - 1, 0)]);
      gy[i] = 0.5f * (down[x] - up[x]);
    }
    for (int i = 0; i < span; ++i) mag[i] = std::sqrt(gx[i] * gx[i] + gy[i] * gy[i]);
    double* cell_row = &cells[static_cast<std::size_t>((y - off) / s) * n * C];
    for (int i = 0; i < span; ++i) {
      if (mag[i] == 0.0f) continue;
      double* cell = cell_row + static_cast<std::size_t>(i / s) * C;
      cell[orientation_bin(gx[i], gy[i])] += mag[i];
      cell[kOrientationBins] += mag[i];
    }
  }
  const double inv_area = 1.0 / (static_cast<double>(s) * s);
  std::vector<double> energy(static_cast<std::size_t>(n) * n, 0.0);
  for (std::size_t i = 0; i < energy.size(); ++i) {
    double e = 0.0;
    for (int c = 0; c < C; ++c) {
      double& v = cells[i * C + c];
      v *= inv_area;
      e += v * v;
    }
    energy[i] = e;
  }
  FeatureMap out(n, n, C, 0.0f, s);
  const double eps2 = config_.epsilon * config_.epsilon;
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      double block = 0.0;
      int count = 0;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= n || xx < 0 || xx >= n) continue;
          block += energy[static_cast<std::size_t>(yy) * n + xx];
          ++count;
        }
      }
      const double inv_norm = 1.0 / std::sqrt(block / count + eps2);
      const std::size_t base = (static_cast<std::size_t>(y) * n + x) * C;
      for (int c = 0; c < C; ++c) out.values[base + c] = static_cast<float>(cells[base + c] * inv_norm);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------------------------

PrecomputedExtractor::PrecomputedExtractor(std::vector<FeatureMap> per_frame, int output_stride)
    : frames_(std::move(per_frame)), output_stride_(output_stride) {
  if (frames_.empty()) throw ValidationError("features", "no precomputed feature maps");
  if (output_stride_ < 1) throw ContractViolation("PrecomputedExtractor: stride must be >= 1");
  for (const auto& f : frames_) {
    if (!f.same_shape(frames_.front()) || f.stride != frames_.front().stride) {
      throw ValidationError("features", "precomputed feature maps differ in shape");
    }
  }
}

namespace {

std::vector<FeatureMap> read_feature_directory(const std::filesystem::path& directory) {
  std::error_code ec;
  if (!std::filesystem::is_directory(directory, ec)) throw IoError("feature directory does not exist: " + directory.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(directory)) {
    if (entry.is_regular_file() && entry.path().extension() == ".vafm") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<FeatureMap> maps;
  maps.reserve(files.size());
  for (const auto& f : files) maps.push_back(read_feature_file(f));
  return maps;
}

}  // namespace

PrecomputedExtractor::PrecomputedExtractor(const std::filesystem::path& directory, int output_stride)
    : PrecomputedExtractor(read_feature_directory(directory), output_stride) {}

std::string PrecomputedExtractor::descriptor() const {
  const auto& f = frames_.front();
  std::ostringstream ss;
  ss << "precomputed/" << f.height << "x" << f.width << "x" << f.channels << "/s" << f.stride << "/out"
     << output_stride_;
  return ss.str();
}

int PrecomputedExtractor::channels() const { return frames_.front().channels; }

FeatureMap PrecomputedExtractor::extract(const ImageF&) const {
  throw ContractViolation("PrecomputedExtractor: features are tied to frames; use extract_window");
}

FeatureMap PrecomputedExtractor::sample(int frame, double left, double top, double scale_x, double scale_y,
                                        int resolution) const {
  if (frame < 0 || frame >= frame_count()) {
    throw ContractViolation("PrecomputedExtractor: no features for frame " + std::to_string(frame));
  }
  const FeatureMap& src = frames_[static_cast<std::size_t>(frame)];
  const int n = resolution / output_stride_;
  const int off = (resolution - n * output_stride_) / 2;
  FeatureMap out(n, n, src.channels, 0.0f, output_stride_);
  for (int i = 0; i < n; ++i) {
    const double crop_y = off + i * output_stride_ + (output_stride_ - 1) / 2.0;
    const double fy = top + (crop_y + 0.5) * scale_y - 0.5;
    const double gy = std::clamp((fy + 0.5) / src.stride - 0.5, 0.0, src.height - 1.0);
    const int y0 = static_cast<int>(gy), y1 = std::min(y0 + 1, src.height - 1);
    const double wy = gy - y0;
    for (int j = 0; j < n; ++j) {
      const double crop_x = off + j * output_stride_ + (output_stride_ - 1) / 2.0;
      const double fx = left + (crop_x + 0.5) * scale_x - 0.5;
      const double gx = std::clamp((fx + 0.5) / src.stride - 0.5, 0.0, src.width - 1.0);
      const int x0 = static_cast<int>(gx), x1 = std::min(x0 + 1, src.width - 1);
      const double wx = gx - x0;
      for (int c = 0; c < src.channels; ++c) {
        const double top_v = src.at(y0, x0, c) * (1 - wx) + src.at(y0, x1, c) * wx;
        const double bot_v = src.at(y1, x0, c) * (1 - wx) + src.at(y1, x1, c) * wx;
        out.at(i, j, c) = static_cast<float>(top_v * (1 - wy) + bot_v * wy);
      }
    }
  }
  return out;
}

FeatureMap PrecomputedExtractor::extract_window(const FrameStore&, int frame, const CropWindow& window) const {
  const double scale = window.scale();
  return sample(frame, window.center_x - window.side / 2.0, window.center_y - window.side / 2.0, scale, scale,
                window.output_resolution);
}

FeatureMap PrecomputedExtractor::extract_frame(const FrameStore& store, int frame, int resolution) const {
  return sample(frame, 0.0, 0.0, static_cast<double>(store.width()) / resolution,
                static_cast<double>(store.height()) / resolution, resolution);
}

// ---------------------------------------------------------------------------------------------

namespace {

constexpr char kFeatureMagic[4] = {'V', 'A', 'F', 'M'};

void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in, const std::string& name) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw IoError(name + ": truncated header");
  return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_feature_file(const std::filesystem::path& path, const FeatureMap& map) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kFeatureMagic, 4);
  put_u32(out, 1);
  put_u32(out, static_cast<std::uint32_t>(map.height));
  put_u32(out, static_cast<std::uint32_t>(map.width));
  put_u32(out, static_cast<std::uint32_t>(map.channels));
  put_u32(out, static_cast<std::uint32_t>(map.stride));
  for (float v : map.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
}

FeatureMap read_feature_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string name = path.string();
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kFeatureMagic, 4) != 0) throw IoError(name + ": not a feature file");
  if (get_u32(in, name) != 1) throw IoError(name + ": unsupported feature file version");
  const auto h = get_u32(in, name), w = get_u32(in, name), c = get_u32(in, name), s = get_u32(in, name);
  if (h == 0 || w == 0 || c == 0 || s == 0 || h > 1 << 16 || w > 1 << 16 || c > 1 << 16) {
    throw IoError(name + ": invalid feature dimensions");
  }
  FeatureMap map(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c), 0.0f, static_cast<int>(s));
  for (float& v : map.values) {
    v = std::bit_cast<float>(get_u32(in, name));
    if (!std::isfinite(v)) throw IoError(name + ": non-finite feature value");
  }
  return map;
}

// ---------------------------------------------------------------------------------------------

FeatureMap fuse_templates(std::span<const FeatureMap> maps) {
  if (maps.empty()) throw ContractViolation("fuse_templates: no templates");
  FeatureMap fused = maps.front();
  for (const auto& m : maps.subspan(1)) {
    if (!m.same_shape(fused)) throw ContractViolation("fuse_templates: template shapes differ");
    for (std::size_t i = 0; i < fused.values.size(); ++i) fused.values[i] = std::max(fused.values[i], m.values[i]);
  }
  return fused;
}

ScoreMap cross_correlate(const FeatureMap& tmpl, const FeatureMap& search) {
  if (tmpl.channels != search.channels) throw ContractViolation("cross_correlate: channel counts differ");
  if (tmpl.height > search.height || tmpl.width > search.width || tmpl.height < 1 || tmpl.width < 1) {
    throw ContractViolation("cross_correlate: template larger than search region");
  }
  ScoreMap score;
  score.height = search.height - tmpl.height + 1;
  score.width = search.width - tmpl.width + 1;
  score.stride = tmpl.stride;
  score.values.assign(static_cast<std::size_t>(score.height) * score.width, 0.0);
  const int C = search.channels;
  // Channel-major copy of the search grid: for a fixed template tap the inner loop then runs over
  // contiguous output columns. Each output still accumulates its terms in (row, column, channel)
  // order, so the result equals the straightforward nested-loop sum bit for bit.
  const std::size_t plane = static_cast<std::size_t>(search.height) * search.width;
  std::vector<double> cm(plane * C);
  for (std::size_t i = 0; i < plane; ++i) {
    for (int c = 0; c < C; ++c) cm[c * plane + i] = search.values[i * C + c];
  }
  const int W = score.width;
  for (int v = 0; v < score.height; ++v) {
    double* acc = &score.values[static_cast<std::size_t>(v) * W];
    for (int a = 0; a < tmpl.height; ++a) {
      for (int b = 0; b < tmpl.width; ++b) {
        for (int c = 0; c < C; ++c) {
          const double t = tmpl.at(a, b, c);
          const double* s = &cm[c * plane + static_cast<std::size_t>(v + a) * search.width + b];
          for (int u = 0; u < W; ++u) acc[u] += t * s[u];
        }
      }
    }
  }
  return score;
}

// ---------------------------------------------------------------------------------------------

namespace {

double hann(int i, int n) { return 0.5 - 0.5 * std::cos(2.0 * M_PI * (i + 1) / (n + 1)); }

double parabolic_offset(double left, double center, double right) {
  const double denom = left - 2.0 * center + right;
  if (!(denom < 0.0)) return 0.0;
  return std::clamp(0.5 * (left - right) / denom, -0.5, 0.5);
}

}  // namespace

Localization score_to_box(std::span<const ScoreMap> per_scale, const CropWindow& window, const BoundingBox& prior,
                          const LocalizerConfig& cfg) {
  if (per_scale.empty()) throw ContractViolation("score_to_box: no score maps");
  const bool single = per_scale.size() == 1;
  if (!single && per_scale.size() != cfg.scales.size()) {
    throw ContractViolation("score_to_box: one score map per configured scale required");
  }
  auto scale_of = [&](std::size_t k) { return single ? 1.0 : cfg.scales[k]; };

  std::size_t best = 0;
  double best_peak = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < per_scale.size(); ++k) {
    const auto& m = per_scale[k];
    if (m.values.empty()) throw ContractViolation("score_to_box: empty score map");
    double peak = *std::max_element(m.values.begin(), m.values.end());
    if (scale_of(k) != 1.0) peak *= cfg.scale_damping;
    if (peak > best_peak || (peak == best_peak && std::fabs(scale_of(k) - 1.0) < std::fabs(scale_of(best) - 1.0))) {
      best_peak = peak;
      best = k;
    }
  }
  const ScoreMap& map = per_scale[best];
  const auto [mn_it, mx_it] = std::minmax_element(map.values.begin(), map.values.end());
  const double mn = *mn_it, mx = *mx_it;
  if (!(mx - mn > 1e-12 * std::max(1.0, std::fabs(mx)))) return {prior, 0.0, static_cast<int>(best)};

  double shifted_sum = 0.0, raw_sum = 0.0;
  for (double v : map.values) {
    shifted_sum += v - mn;
    raw_sum += v;
  }
  std::vector<double> combined(map.values.size());
  for (int y = 0; y < map.height; ++y) {
    for (int x = 0; x < map.width; ++x) {
      const double penalty = (1.0 - cfg.cosine_weight) + cfg.cosine_weight * hann(y, map.height) * hann(x, map.width) /
                                                             (hann(map.height / 2, map.height) * hann(map.width / 2, map.width));
      const std::size_t i = static_cast<std::size_t>(y) * map.width + x;
      combined[i] = (map.values[i] - mn) / shifted_sum * penalty;
    }
  }
  const auto arg = static_cast<int>(std::max_element(combined.begin(), combined.end()) - combined.begin());
  const int py = arg / map.width, px = arg % map.width;
  auto c_at = [&](int y, int x) { return combined[static_cast<std::size_t>(y) * map.width + x]; };
  double ref_x = px, ref_y = py;
  if (px > 0 && px + 1 < map.width) ref_x += parabolic_offset(c_at(py, px - 1), c_at(py, px), c_at(py, px + 1));
  if (py > 0 && py + 1 < map.height) ref_y += parabolic_offset(c_at(py - 1, px), c_at(py, px), c_at(py + 1, px));

  const double scale = scale_of(best);
  const double pixels_per_cell = map.stride * window.scale() * scale;
  const double dx = (ref_x - (map.width - 1) / 2.0) * pixels_per_cell + (window.center_x - prior.cx());
  const double dy = (ref_y - (map.height - 1) / 2.0) * pixels_per_cell + (window.center_y - prior.cy());
  BoundingBox box = prior;
  if (scale == 1.0) {
    box.x += dx;
    box.y += dy;
  } else {
    box.w = prior.w * scale;
    box.h = prior.h * scale;
    box.x = prior.x + dx - (box.w - prior.w) / 2.0;
    box.y = prior.y + dy - (box.h - prior.h) / 2.0;
  }
  const double confidence = raw_sum > 0.0 ? mx / raw_sum : 0.0;
  return {box, confidence, static_cast<int>(best)};
}

Localization score_to_box(const ScoreMap& score, const CropWindow& window, const BoundingBox& prior,
                          const LocalizerConfig& cfg) {
  return score_to_box(std::span<const ScoreMap>(&score, 1), window, prior, cfg);
}

}  // namespace vidann
