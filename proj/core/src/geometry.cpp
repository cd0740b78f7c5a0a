#include "vidann/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "vidann/error.hpp"

namespace vidann {

bool is_valid(const BoundingBox& box) noexcept {
  return std::isfinite(box.x) && std::isfinite(box.y) && std::isfinite(box.w) &&
         std::isfinite(box.h) && box.w > 0.0 && box.h > 0.0;
}

void validate(const BoundingBox& box) {
  if (!std::isfinite(box.x)) throw ValidationError("x", "must be finite");
  if (!std::isfinite(box.y)) throw ValidationError("y", "must be finite");
  if (!std::isfinite(box.w) || box.w <= 0.0) throw ValidationError("w", "must be positive");
  if (!std::isfinite(box.h) || box.h <= 0.0) throw ValidationError("h", "must be positive");
}

std::string_view to_string(KeyframeSource source) noexcept {
  return source == KeyframeSource::human ? "human" : "simulated-oracle";
}

KeyframeSource keyframe_source_from_string(std::string_view text) {
  if (text == "human") return KeyframeSource::human;
  if (text == "simulated-oracle") return KeyframeSource::simulated_oracle;
  throw ValidationError("source", "unknown keyframe source '" + std::string(text) + "'");
}

double iou(const BoundingBox& a, const BoundingBox& b) noexcept {
  const double ax2 = a.x + a.w, ay2 = a.y + a.h;
  const double bx2 = b.x + b.w, by2 = b.y + b.h;
  const double iw = std::min(ax2, bx2) - std::max(a.x, b.x);
  const double ih = std::min(ay2, by2) - std::max(a.y, b.y);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  // Areas from the same corner differences as the intersection so that iou(a, a) == 1 exactly.
  const double area_a = (ax2 - a.x) * (ay2 - a.y);
  const double area_b = (bx2 - b.x) * (by2 - b.y);
  const double inter = iw * ih;
  return inter / (area_a + area_b - inter);
}

BoundingBox linear_interpolate(const Keyframe& k1, const Keyframe& k2, int t) {
  if (k1.frame >= k2.frame) {
    throw ContractViolation("linear_interpolate: keyframes must be strictly ordered");
  }
  if (t < k1.frame || t > k2.frame) {
    throw ContractViolation("linear_interpolate: frame " + std::to_string(t) + " outside [" +
                            std::to_string(k1.frame) + ", " + std::to_string(k2.frame) + "]");
  }
  if (t == k1.frame || k1.box == k2.box) return k1.box;
  if (t == k2.frame) return k2.box;
  const double alpha = static_cast<double>(t - k1.frame) / static_cast<double>(k2.frame - k1.frame);
  auto lerp = [alpha](double a, double b) { return a + alpha * (b - a); };
  return BoundingBox::from_center(lerp(k1.box.cx(), k2.box.cx()), lerp(k1.box.cy(), k2.box.cy()),
                                  lerp(k1.box.w, k2.box.w), lerp(k1.box.h, k2.box.h));
}

CropWindow template_window(const BoundingBox& box) noexcept {
  return template_window(box, (box.w + box.h) / 4.0);
}

CropWindow template_window(const BoundingBox& box, double padding) noexcept {
  const double side = std::sqrt((box.w + 2.0 * padding) * (box.h + 2.0 * padding));
  return {box.cx(), box.cy(), side, kTemplateResolution};
}

CropWindow search_window(const BoundingBox& prior, double context_factor) {
  if (!(context_factor >= 1.0)) {
    throw ContractViolation("search_window: context factor must be >= 1");
  }
  CropWindow window = template_window(prior);
  window.side *= context_factor;
  window.output_resolution = kSearchResolution;
  return window;
}

double blend_weight(double delta_t, double delta) noexcept {
  if (delta <= 0.0) return delta_t == 0.0 ? 1.0 : 0.0;
  if (delta_t > delta) return 0.0;
  const double r = delta_t / delta;
  return (1.0 - r) * (1.0 - r);
}

BoundingBox blend_boxes(const BoundingBox& geometric, const BoundingBox& visual, double weight) {
  if (!(weight >= 0.0 && weight <= 1.0)) {
    throw ContractViolation("blend_boxes: weight must lie in [0, 1]");
  }
  if (weight == 1.0) return geometric;
  if (weight == 0.0) return visual;
  auto mix = [weight](double g, double v) { return weight * g + (1.0 - weight) * v; };
  return BoundingBox::from_center(mix(geometric.cx(), visual.cx()), mix(geometric.cy(), visual.cy()),
                                  mix(geometric.w, visual.w), mix(geometric.h, visual.h));
}

}  // namespace vidann
