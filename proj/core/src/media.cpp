#include "vidann/media.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "vidann/error.hpp"

namespace vidann {

FrameStore::FrameStore(int frame_count, int width, int height, Loader loader, std::string name)
    : frame_count_(frame_count),
      width_(width),
      height_(height),
      loader_(std::move(loader)),
      name_(std::move(name)),
      cache_(static_cast<std::size_t>(std::max(frame_count, 0))) {
  if (frame_count <= 0) throw ValidationError("frames", "no frames");
  if (width <= 0 || height <= 0) throw ValidationError("frames", "invalid frame dimensions");
}

std::shared_ptr<FrameStore> FrameStore::from_frames(std::vector<Image> frames, std::string name) {
  if (frames.empty()) throw ValidationError("frames", "no frames");
  const int w = frames.front().width;
  const int h = frames.front().height;
  for (const auto& f : frames) {
    if (f.width != w || f.height != h) throw ValidationError("frames", "inconsistent dimensions");
  }
  auto shared = std::make_shared<std::vector<Image>>(std::move(frames));
  const int n = static_cast<int>(shared->size());
  return std::make_shared<FrameStore>(
      n, w, h, [shared](int i) { return (*shared)[static_cast<std::size_t>(i)]; }, std::move(name));
}

std::shared_ptr<const Image> FrameStore::frame(int index) const {
  if (index < 0 || index >= frame_count_) {
    throw ContractViolation("frame index " + std::to_string(index) + " outside [0, " +
                            std::to_string(frame_count_) + ")");
  }
  {
    std::lock_guard lock(mutex_);
    if (auto cached = cache_[static_cast<std::size_t>(index)]) return cached;
  }
  auto decoded = std::make_shared<const Image>(loader_(index));
  if (decoded->width != width_ || decoded->height != height_) {
    throw ValidationError("frames", "inconsistent dimensions at frame " + std::to_string(index));
  }
  std::lock_guard lock(mutex_);
  auto& slot = cache_[static_cast<std::size_t>(index)];
  if (!slot) slot = std::move(decoded);
  return slot;
}

namespace {

bool is_frame_file(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".pgm" || ext == ".ppm" || ext == ".pnm";
}

// Last run of digits in the stem, or -1.
long long embedded_number(const std::filesystem::path& p) {
  const std::string stem = p.stem().string();
  long long value = -1;
  std::size_t i = 0;
  while (i < stem.size()) {
    if (std::isdigit(static_cast<unsigned char>(stem[i]))) {
      std::size_t j = i;
      while (j < stem.size() && std::isdigit(static_cast<unsigned char>(stem[j]))) ++j;
      long long v = 0;
      std::from_chars(stem.data() + i, stem.data() + std::min(j, i + 18), v);
      value = v;
      i = j;
    } else {
      ++i;
    }
  }
  return value;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

double parse_number(const std::string& text, const std::string& source, int line, const char* what) {
  const std::string t = trim(text);
  if (t.empty()) throw ParseError(source, line, std::string("empty ") + what);
  char* end = nullptr;
  const double v = std::strtod(t.c_str(), &end);
  if (end != t.c_str() + t.size()) throw ParseError(source, line, std::string("bad ") + what + " '" + t + "'");
  return v;
}

}  // namespace

std::vector<std::filesystem::path> list_frame_files(const std::filesystem::path& directory) {
  std::error_code ec;
  if (!std::filesystem::is_directory(directory, ec)) {
    throw IoError("frame directory does not exist: " + directory.string());
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(directory)) {
    if (entry.is_regular_file() && is_frame_file(entry.path())) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(), [](const auto& a, const auto& b) {
    const auto na = embedded_number(a), nb = embedded_number(b);
    if (na != nb) return na < nb;
    return a.filename() < b.filename();
  });
  return files;
}

std::shared_ptr<FrameStore> load_frame_sequence(const std::filesystem::path& directory) {
  auto files = list_frame_files(directory);
  if (files.empty()) throw ValidationError("frames", "no frames in " + directory.string());
  const auto [w, h] = read_image_size(files.front());
  for (const auto& f : files) {
    const auto size = read_image_size(f);
    if (size.first != w || size.second != h) {
      throw ValidationError("frames", "inconsistent dimensions: " + f.filename().string());
    }
  }
  auto shared = std::make_shared<std::vector<std::filesystem::path>>(std::move(files));
  return std::make_shared<FrameStore>(
      static_cast<int>(shared->size()), w, h,
      [shared](int i) { return read_image((*shared)[static_cast<std::size_t>(i)]); },
      directory.string());
}

MotLoadResult parse_mot_ground_truth(std::istream& in, const std::string& source) {
  std::map<int, GroundTruthTrack> by_id;
  MotLoadResult result;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() < 6) {
      throw ParseError(source, line_no, "expected at least 6 fields, got " + std::to_string(fields.size()));
    }
    const double frame = parse_number(fields[0], source, line_no, "frame");
    const double id = parse_number(fields[1], source, line_no, "id");
    if (frame < 1 || frame != std::floor(frame)) throw ParseError(source, line_no, "frame must be an integer >= 1");
    if (id != std::floor(id)) throw ParseError(source, line_no, "id must be an integer");
    const BoundingBox box{parse_number(fields[2], source, line_no, "bb_left"),
                          parse_number(fields[3], source, line_no, "bb_top"),
                          parse_number(fields[4], source, line_no, "bb_width"),
                          parse_number(fields[5], source, line_no, "bb_height")};
    if (!(box.w > 0.0) || !(box.h > 0.0)) {
      ++result.skipped_rows;
      continue;
    }
    if (!is_valid(box)) throw ParseError(source, line_no, "non-finite box");
    auto& track = by_id[static_cast<int>(id)];
    track.object_id = static_cast<int>(id);
    track.boxes[static_cast<int>(frame) - 1] = box;
  }
  for (auto& [id, track] : by_id) result.tracks.push_back(std::move(track));
  return result;
}

MotLoadResult load_mot_ground_truth(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return parse_mot_ground_truth(in, path.string());
}

void write_mot_ground_truth(std::ostream& out, const std::vector<GroundTruthTrack>& tracks) {
  // Rows ordered by frame then id, as in published MOT files.
  std::vector<std::tuple<int, int, BoundingBox>> rows;
  for (const auto& t : tracks) {
    for (const auto& [frame, box] : t.boxes) rows.emplace_back(frame, t.object_id, box);
  }
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    return std::tie(std::get<0>(a), std::get<1>(a)) < std::tie(std::get<0>(b), std::get<1>(b));
  });
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& [frame, id, box] : rows) {
    out << frame + 1 << ',' << id << ',' << box.x << ',' << box.y << ',' << box.w << ',' << box.h
        << ",1,-1,-1,-1\n";
  }
}

void write_mot_ground_truth(const std::filesystem::path& path, const std::vector<GroundTruthTrack>& tracks) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  write_mot_ground_truth(out, tracks);
}

GroundTruthTrack parse_single_object_track(std::istream& in, const std::string& source) {
  GroundTruthTrack track;
  track.object_id = 1;
  std::string line;
  int line_no = 0;
  int frame = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_csv(line);
    if (fields.size() == 1) {  // some exports separate with whitespace or tabs
      std::istringstream ss(line);
      fields.clear();
      for (std::string tok; ss >> tok;) fields.push_back(tok);
    }
    if (fields.size() != 4) {
      throw ParseError(source, line_no, "expected 4 fields x,y,w,h, got " + std::to_string(fields.size()));
    }
    const BoundingBox box{parse_number(fields[0], source, line_no, "x"), parse_number(fields[1], source, line_no, "y"),
                          parse_number(fields[2], source, line_no, "w"), parse_number(fields[3], source, line_no, "h")};
    const bool absent = (box.x == 0 && box.y == 0 && box.w == 0 && box.h == 0) || std::isnan(box.x);
    if (!absent) {
      if (!is_valid(box)) throw ParseError(source, line_no, "invalid box");
      track.boxes[frame] = box;
    }
    ++frame;
  }
  if (frame == 0) throw ParseError(source, line_no, "empty track file");
  return track;
}

GroundTruthTrack load_single_object_track(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return parse_single_object_track(in, path.string());
}

std::vector<int> track_frames(const GroundTruthTrack& track) {
  std::vector<int> frames;
  frames.reserve(track.boxes.size());
  for (const auto& [f, box] : track.boxes) frames.push_back(f);
  return frames;
}

}  // namespace vidann
