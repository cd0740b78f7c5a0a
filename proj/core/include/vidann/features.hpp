#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "vidann/geometry.hpp"
#include "vidann/image.hpp"
#include "vidann/media.hpp"

namespace vidann {

/// H x W x C grid of features stored row-major with channels innermost.
struct FeatureMap {
  int height = 0;
  int width = 0;
  int channels = 0;
  int stride = 1;  // input pixels per cell
  std::vector<float> values;

  FeatureMap() = default;
  FeatureMap(int h, int w, int c, float fill = 0.0f, int cell_stride = 1)
      : height(h), width(w), channels(c), stride(cell_stride),
        values(static_cast<std::size_t>(h) * w * c, fill) {}

  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  float at(int y, int x, int c) const { return values[index(y, x, c)]; }
  float& at(int y, int x, int c) { return values[index(y, x, c)]; }
  bool same_shape(const FeatureMap& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }

  friend bool operator==(const FeatureMap&, const FeatureMap&) = default;
};

/// Valid-mode correlation response. Cell (y, x) corresponds to a displacement of
/// ((x - (width-1)/2) * stride, (y - (height-1)/2) * stride) search-crop pixels from the crop center.
struct ScoreMap {
  int height = 0;
  int width = 0;
  int stride = 1;
  std::vector<double> values;

  double at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
  double& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
};

/// Deterministic feature backbone shared by the template and search branches.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;

  /// Name plus parameter digest, e.g. "gradient-hist/8x9/eps=8".
  virtual std::string descriptor() const = 0;
  virtual int stride() const = 0;
  virtual int channels() const = 0;

  /// Features of an already resampled square patch.
  virtual FeatureMap extract(const ImageF& patch) const = 0;

  /// Features of a crop window of a frame. Default: crop_window then extract.
  virtual FeatureMap extract_window(const FrameStore& store, int frame, const CropWindow& window) const;

  /// Features of the whole frame stretched to resolution x resolution. Default: resample then extract.
  virtual FeatureMap extract_frame(const FrameStore& store, int frame, int resolution) const;
};

struct GradientExtractorConfig {
  int stride = 8;
  double epsilon = 8.0;  // normalisation floor, in gradient units
  std::vector<int> resolutions{kTemplateResolution, kSearchResolution};
};

/// Toy backbone: central-difference gradients binned into 8 orientation channels plus a magnitude
/// channel, averaged over stride x stride cells, then L2-normalised over 3x3 cell blocks.
class GradientExtractor final : public FeatureExtractor {
 public:
  static constexpr int kOrientationBins = 8;

  explicit GradientExtractor(GradientExtractorConfig config = {});

  std::string descriptor() const override;
  int stride() const override { return config_.stride; }
  int channels() const override { return kOrientationBins + 1; }
  FeatureMap extract(const ImageF& patch) const override;

  /// Cell grid size for an input resolution.
  int cells_for(int resolution) const { return resolution / config_.stride; }

 private:
  GradientExtractorConfig config_;
};

/// Backend reading per-frame feature grids computed elsewhere (e.g. by a learned network).
/// One file per frame, ordered like frame images; see docs/formats.md. Crops are produced by
/// bilinear sampling of the stored grid, using the same cell layout as GradientExtractor.
class PrecomputedExtractor final : public FeatureExtractor {
 public:
  /// Reads every *.vafm file in the directory; all must share dimensions.
  explicit PrecomputedExtractor(const std::filesystem::path& directory, int output_stride = 8);
  PrecomputedExtractor(std::vector<FeatureMap> per_frame, int output_stride = 8);

  std::string descriptor() const override;
  int stride() const override { return output_stride_; }
  int channels() const override;
  int frame_count() const { return static_cast<int>(frames_.size()); }

  /// Not supported: precomputed features are tied to frames. Throws ContractViolation.
  FeatureMap extract(const ImageF& patch) const override;
  FeatureMap extract_window(const FrameStore& store, int frame, const CropWindow& window) const override;
  FeatureMap extract_frame(const FrameStore& store, int frame, int resolution) const override;

 private:
  FeatureMap sample(int frame, double left, double top, double scale_x, double scale_y, int resolution) const;

  std::vector<FeatureMap> frames_;
  int output_stride_;
};

/// Binary feature file: "VAFM", u32 version=1, u32 height, u32 width, u32 channels, u32 stride,
/// then height*width*channels little-endian float32 in (y, x, c) order.
void write_feature_file(const std::filesystem::path& path, const FeatureMap& map);
FeatureMap read_feature_file(const std::filesystem::path& path);

/// Element-wise maximum over templates. Throws ContractViolation on an empty list or mismatched shapes.
FeatureMap fuse_templates(std::span<const FeatureMap> maps);

/// score(y, x) = sum over template rows, columns and channels of template * search.
ScoreMap cross_correlate(const FeatureMap& template_features, const FeatureMap& search_features);

struct LocalizerConfig {
  std::vector<double> scales{0.96, 1.0, 1.04};
  double cosine_weight = 0.3;
  double scale_damping = 0.97;
  friend bool operator==(const LocalizerConfig&, const LocalizerConfig&) = default;
};

struct Localization {
  BoundingBox box;
  double confidence = 0.0;
  int scale_index = 0;
};

/// Picks the scale whose (damped) peak is highest, applies a multiplicative cosine window centred
/// on the prior, refines the arg-max with a parabola per axis and maps it back to frame pixels.
/// per_scale[k] must be the response for the window scaled by cfg.scales[k]; a single map is
/// treated as scale 1.
Localization score_to_box(std::span<const ScoreMap> per_scale, const CropWindow& window,
                          const BoundingBox& prior, const LocalizerConfig& cfg);
Localization score_to_box(const ScoreMap& score, const CropWindow& window, const BoundingBox& prior,
                          const LocalizerConfig& cfg);

}  // namespace vidann
