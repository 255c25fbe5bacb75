#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "mfnet/data.hpp"
#include "mfnet/error.hpp"

namespace fs = std::filesystem;

namespace mfnet {

VideoSample VideoSample::in_memory(std::string id, int label, std::vector<Frame> frames) {
  if (frames.empty()) throw InputError("clip '" + id + "' has no frames");
  for (const auto& f : frames)
    if (f.height != frames.front().height || f.width != frames.front().width)
      throw InputError("clip '" + id + "' mixes frame extents");
  VideoSample s;
  s.id_ = std::move(id);
  s.label_ = label;
  s.height_ = frames.front().height;
  s.width_ = frames.front().width;
  s.frames_ = std::move(frames);
  return s;
}

VideoSample VideoSample::from_files(std::string id, int label, std::vector<fs::path> files, int height, int width) {
  if (files.empty()) throw InputError("clip '" + id + "' has no frames");
  VideoSample s;
  s.id_ = std::move(id);
  s.label_ = label;
  s.height_ = height;
  s.width_ = width;
  s.files_ = std::move(files);
  return s;
}

int VideoSample::num_frames() const {
  return static_cast<int>(frames_.empty() ? files_.size() : frames_.size());
}

Frame VideoSample::frame(int index) const {
  if (index < 0 || index >= num_frames())
    throw InputError("frame " + std::to_string(index) + " out of range for clip '" + id_ + "'");
  if (!frames_.empty()) return frames_[static_cast<std::size_t>(index)];
  Frame f = read_ppm(files_[static_cast<std::size_t>(index)]);
  if (f.height != height_ || f.width != width_)
    throw InputError("frame " + files_[static_cast<std::size_t>(index)].string() + " changed extent since ingestion");
  return f;
}

namespace {

struct PpmHeader {
  int width = 0;
  int height = 0;
  std::streamoff data_offset = 0;
};

// Reads the next whitespace-delimited token, skipping '#' comments.
std::string next_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

int parse_positive(const std::string& tok, const fs::path& path) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size() || v <= 0)
    throw InputError(path.string() + ": bad PPM header field '" + tok + "'");
  return v;
}

PpmHeader read_header(std::istream& in, const fs::path& path) {
  if (next_token(in) != "P6") throw InputError(path.string() + ": not a binary PPM (P6) file");
  PpmHeader h;
  h.width = parse_positive(next_token(in), path);
  h.height = parse_positive(next_token(in), path);
  if (parse_positive(next_token(in), path) != 255) throw InputError(path.string() + ": only maxval 255 is supported");
  h.data_offset = in.tellg();
  return h;
}

PpmHeader probe_ppm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError(path.string() + ": cannot open");
  const PpmHeader h = read_header(in, path);
  const auto expected = static_cast<std::uintmax_t>(h.data_offset) + 3ull * h.width * h.height;
  if (fs::file_size(path) < expected) throw InputError(path.string() + ": truncated pixel data");
  return h;
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

}  // namespace

void write_ppm(const fs::path& path, const Frame& frame) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P6\n" << frame.width << ' ' << frame.height << "\n255\n";
  std::vector<char> row(static_cast<std::size_t>(frame.width) * 3);
  for (int y = 0; y < frame.height; ++y) {
    for (int x = 0; x < frame.width; ++x)
      for (int c = 0; c < 3; ++c) row[static_cast<std::size_t>(x) * 3 + c] = static_cast<char>(frame.at(c, y, x));
    out.write(row.data(), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw IoError("failed writing " + path.string());
}

Frame read_ppm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError(path.string() + ": cannot open");
  const PpmHeader h = read_header(in, path);
  Frame f(h.height, h.width);
  std::vector<char> row(static_cast<std::size_t>(h.width) * 3);
  for (int y = 0; y < h.height; ++y) {
    if (!in.read(row.data(), static_cast<std::streamsize>(row.size())))
      throw InputError(path.string() + ": truncated pixel data");
    for (int x = 0; x < h.width; ++x)
      for (int c = 0; c < 3; ++c) f.at(c, y, x) = static_cast<std::uint8_t>(row[static_cast<std::size_t>(x) * 3 + c]);
  }
  return f;
}

void export_frame_folder(const Dataset& data, const std::vector<std::string>& class_names, const fs::path& root) {
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw IoError("cannot create " + root.string() + ": " + ec.message());
  std::ofstream labels(root / "labels.csv");
  std::ofstream classes(root / "classes.txt");
  if (!labels || !classes) throw IoError("cannot write index files under " + root.string());
  for (const auto& name : class_names) classes << name << '\n';
  for (const auto& sample : data) {
    if (sample.label() < 0 || sample.label() >= static_cast<int>(class_names.size()))
      throw InputError("clip '" + sample.id() + "' has label outside the class list");
    const fs::path dir = root / sample.id();
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    for (int t = 0; t < sample.num_frames(); ++t) {
      char name[32];
      std::snprintf(name, sizeof name, "frame_%05d.ppm", t);
      write_ppm(dir / name, sample.frame(t));
    }
    labels << sample.id() << ',' << sample.label() << '\n';
  }
  if (!labels || !classes) throw IoError("failed writing index files under " + root.string());
}

FrameFolder load_frame_folder(const fs::path& root) {
  if (!fs::is_directory(root)) throw InputError(root.string() + " is not a directory");
  FrameFolder folder;
  for (auto& line : read_lines(root / "classes.txt"))
    if (!line.empty()) folder.class_names.push_back(line);
  if (folder.class_names.empty()) throw InputError(root.string() + "/classes.txt lists no classes");
  const int num_classes = static_cast<int>(folder.class_names.size());

  std::map<std::string, int> labels;
  const auto label_lines = read_lines(root / "labels.csv");
  for (std::size_t i = 0; i < label_lines.size(); ++i) {
    const std::string& line = label_lines[i];
    if (line.empty()) continue;
    const auto comma = line.rfind(',');
    int label = -1;
    if (comma != std::string::npos) {
      const char* b = line.data() + comma + 1;
      const char* e = line.data() + line.size();
      const auto [ptr, err] = std::from_chars(b, e, label);
      if (err != std::errc() || ptr != e) label = -1;
    }
    const std::string id = comma == std::string::npos ? line : line.substr(0, comma);
    if (label < 0 || label >= num_classes) {
      folder.errors.push_back({id, "labels.csv line " + std::to_string(i + 1) + ": invalid class index"});
      continue;
    }
    labels[id] = label;
  }

  std::set<std::string> seen;
  std::vector<fs::path> clip_dirs;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory()) clip_dirs.push_back(entry.path());
  std::sort(clip_dirs.begin(), clip_dirs.end());

  for (const auto& dir : clip_dirs) {
    const std::string id = dir.filename().string();
    seen.insert(id);
    const auto label = labels.find(id);
    if (label == labels.end()) {
      folder.errors.push_back({id, "no label in labels.csv"});
      continue;
    }
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir))
      if (entry.is_regular_file()) files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) {
      folder.errors.push_back({id, "clip directory holds no frames"});
      continue;
    }
    try {
      const PpmHeader first = probe_ppm(files.front());
      for (std::size_t i = 1; i < files.size(); ++i) {
        const PpmHeader h = probe_ppm(files[i]);
        if (h.width != first.width || h.height != first.height)
          throw InputError(files[i].string() + ": frame extent differs from the first frame");
      }
      folder.samples.push_back(VideoSample::from_files(id, label->second, std::move(files), first.height, first.width));
    } catch (const InputError& e) {
      folder.errors.push_back({id, e.what()});
    }
  }
  for (const auto& [id, label] : labels)
    if (!seen.count(id)) folder.errors.push_back({id, "listed in labels.csv but has no clip directory"});
  return folder;
}

}  // namespace mfnet
