#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "vidann/geometry.hpp"
#include "vidann/image.hpp"

namespace vidann {

/// Dense, 0-based sequence of equally sized grayscale frames. Frames decode lazily on first
/// access and are cached; concurrent readers are safe.
class FrameStore {
 public:
  using Loader = std::function<Image(int)>;

  FrameStore(int frame_count, int width, int height, Loader loader, std::string name = {});
  static std::shared_ptr<FrameStore> from_frames(std::vector<Image> frames, std::string name = {});

  int frame_count() const noexcept { return frame_count_; }
  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  const std::string& name() const noexcept { return name_; }

  /// Throws ContractViolation for out-of-range indices.
  std::shared_ptr<const Image> frame(int index) const;

 private:
  int frame_count_;
  int width_;
  int height_;
  Loader loader_;
  std::string name_;
  mutable std::mutex mutex_;
  mutable std::vector<std::shared_ptr<const Image>> cache_;
};

struct GroundTruthTrack {
  int object_id = 0;
  std::map<int, BoundingBox> boxes;  // absent frames are gaps

  bool contains(int frame) const { return boxes.contains(frame); }
  friend bool operator==(const GroundTruthTrack&, const GroundTruthTrack&) = default;
};

/// Image files in a directory (png, pgm, ppm, pnm), ordered by the number embedded in the file
/// name, then lexicographically. Errors: missing directory, no frames, inconsistent dimensions.
std::shared_ptr<FrameStore> load_frame_sequence(const std::filesystem::path& directory);

/// Sorted frame file list used by load_frame_sequence.
std::vector<std::filesystem::path> list_frame_files(const std::filesystem::path& directory);

struct MotLoadResult {
  std::vector<GroundTruthTrack> tracks;  // sorted by object id
  int skipped_rows = 0;                  // rows with non-positive width or height
};

/// MOT CSV: frame, id, bb_left, bb_top, bb_width, bb_height, conf, ... with 1-based frames.
MotLoadResult load_mot_ground_truth(const std::filesystem::path& path);
MotLoadResult parse_mot_ground_truth(std::istream& in, const std::string& source = "<stream>");
void write_mot_ground_truth(const std::filesystem::path& path, const std::vector<GroundTruthTrack>& tracks);
void write_mot_ground_truth(std::ostream& out, const std::vector<GroundTruthTrack>& tracks);

/// One "x,y,w,h" line per frame; an all-zero box marks the object absent in that frame.
GroundTruthTrack load_single_object_track(const std::filesystem::path& path);
GroundTruthTrack parse_single_object_track(std::istream& in, const std::string& source = "<stream>");

/// Frames in [0, frame_count) covered by the track, in order.
std::vector<int> track_frames(const GroundTruthTrack& track);

}  // namespace vidann
