#pragma once

#include <compare>
#include <cstdint>
#include <string_view>

namespace vidann {

/// Axis-aligned box in continuous pixel coordinates: left, top, width, height.
/// Boxes may extend beyond the frame (partially visible objects).
struct BoundingBox {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  double cx() const noexcept { return x + w / 2.0; }
  double cy() const noexcept { return y + h / 2.0; }
  double area() const noexcept { return w * h; }

  static BoundingBox from_center(double cx, double cy, double w, double h) noexcept {
    return {cx - w / 2.0, cy - h / 2.0, w, h};
  }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

/// True when w > 0, h > 0 and every coordinate is finite.
bool is_valid(const BoundingBox& box) noexcept;

/// Throws ValidationError naming the offending field.
void validate(const BoundingBox& box);

enum class KeyframeSource : std::uint8_t { human, simulated_oracle };

std::string_view to_string(KeyframeSource source) noexcept;
KeyframeSource keyframe_source_from_string(std::string_view text);

/// A frame whose box was drawn by the annotator (or supplied by a simulated one).
struct Keyframe {
  int frame = 0;
  BoundingBox box;
  KeyframeSource source = KeyframeSource::human;

  friend bool operator==(const Keyframe&, const Keyframe&) = default;
};

/// Square crop region in frame coordinates, resampled to output_resolution^2 pixels.
struct CropWindow {
  double center_x = 0.0;
  double center_y = 0.0;
  double side = 0.0;
  int output_resolution = 0;

  /// Frame pixels per crop pixel.
  double scale() const noexcept { return side / output_resolution; }

  friend bool operator==(const CropWindow&, const CropWindow&) = default;
};

inline constexpr int kTemplateResolution = 127;
inline constexpr int kSearchResolution = 255;
inline constexpr double kDefaultContextFactor = 2.0;

double iou(const BoundingBox& a, const BoundingBox& b) noexcept;

/// Center and size interpolated independently; exact at both endpoints.
/// Throws ContractViolation unless k1.frame < k2.frame and t lies in [k1.frame, k2.frame].
BoundingBox linear_interpolate(const Keyframe& k1, const Keyframe& k2, int t);

/// Template crop: side sqrt((w+2p)(h+2p)) with p = (w+h)/4, resolution 127.
CropWindow template_window(const BoundingBox& box) noexcept;
CropWindow template_window(const BoundingBox& box, double padding) noexcept;

/// Search crop around a prior: side = context_factor * template side, resolution 255.
CropWindow search_window(const BoundingBox& prior, double context_factor = kDefaultContextFactor);

/// Geometric weight: (1 - dt/Delta)^2 inside the neighbourhood, 0 beyond it.
/// A non-positive Delta disables blending (1 only at the keyframe itself).
double blend_weight(double delta_t, double delta) noexcept;

/// weight * geometric + (1 - weight) * visual, on center and size separately.
BoundingBox blend_boxes(const BoundingBox& geometric, const BoundingBox& visual, double weight);

}  // namespace vidann
