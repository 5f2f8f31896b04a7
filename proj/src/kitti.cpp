#include "auxdepth/kitti.hpp"

#include "auxdepth/geometry.hpp"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace auxdepth::kitti {

namespace {

double parse_field(const std::string& tok, int column, int line_number) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(tok, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != tok.size())
    fail(Error::Kind::Parse, "label line " + std::to_string(line_number) +
                                 ": non-numeric field in column " + std::to_string(column) +
                                 ": '" + tok + "'");
  return v;
}

}  // namespace

Label parse_label_line(const std::string& line, int line_number) {
  std::istringstream ss(line);
  std::vector<std::string> tok;
  std::string t;
  while (ss >> t) tok.push_back(t);
  if (tok.size() != 15 && tok.size() != 16)
    fail(Error::Kind::Parse, "label line " + std::to_string(line_number) + ": expected 15 or 16 fields, got " +
                                 std::to_string(tok.size()));
  Label lb;
  lb.type = tok[0];
  lb.truncated = parse_field(tok[1], 1, line_number);
  lb.occluded = static_cast<int>(parse_field(tok[2], 2, line_number));
  lb.alpha = parse_field(tok[3], 3, line_number);
  lb.x1 = parse_field(tok[4], 4, line_number);
  lb.y1 = parse_field(tok[5], 5, line_number);
  lb.x2 = parse_field(tok[6], 6, line_number);
  lb.y2 = parse_field(tok[7], 7, line_number);
  lb.h = parse_field(tok[8], 8, line_number);
  lb.w = parse_field(tok[9], 9, line_number);
  lb.l = parse_field(tok[10], 10, line_number);
  lb.x = parse_field(tok[11], 11, line_number);
  lb.y = parse_field(tok[12], 12, line_number);
  lb.z = parse_field(tok[13], 13, line_number);
  lb.ry = parse_field(tok[14], 14, line_number);
  if (tok.size() == 16) {
    lb.has_score = true;
    lb.score = parse_field(tok[15], 15, line_number);
  }
  return lb;
}

std::string serialize_label(const Label& lb) {
  char buf[512];
  int n = std::snprintf(buf, sizeof(buf),
                        "%s %.2f %d %.2f %.2f %.2f %.2f %.2f %.2f %.2f %.2f %.2f %.2f %.2f %.2f",
                        lb.type.c_str(), lb.truncated, lb.occluded, lb.alpha, lb.x1, lb.y1,
                        lb.x2, lb.y2, lb.h, lb.w, lb.l, lb.x, lb.y, lb.z, lb.ry);
  if (lb.has_score)
    n += std::snprintf(buf + n, sizeof(buf) - static_cast<std::size_t>(n), " %.2f", lb.score);
  return std::string(buf, static_cast<std::size_t>(n));
}

std::vector<Label> read_label_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(Error::Kind::Io, "cannot open label file " + path);
  std::vector<Label> labels;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    bool blank = true;
    for (char c : line)
      if (!std::isspace(static_cast<unsigned char>(c))) blank = false;
    if (blank) continue;
    labels.push_back(parse_label_line(line, number));
  }
  return labels;
}

void write_label_file(const std::string& path, const std::vector<Label>& labels) {
  std::ofstream out(path);
  if (!out) fail(Error::Kind::Io, "cannot write label file " + path);
  for (const auto& lb : labels) out << serialize_label(lb) << "\n";
}

Calibration parse_calib_text(const std::string& content) {
  std::istringstream in(content);
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    if (key != "P2:") continue;
    Calibration c;
    for (int i = 0; i < 12; ++i)
      if (!(ss >> c.p2[static_cast<std::size_t>(i)]))
        fail(Error::Kind::Parse, "calibration: P2 needs 12 values");
    if (!(c.p2[0] > 0.0)) fail(Error::Kind::Parse, "calibration: focal length must be positive");
    return c;
  }
  fail(Error::Kind::Parse, "calibration: no P2 line found");
}

Calibration read_calib_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(Error::Kind::Io, "cannot open calibration file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_calib_text(ss.str());
}

void write_calib_file(const std::string& path, const Calibration& calib) {
  std::ofstream out(path);
  if (!out) fail(Error::Kind::Io, "cannot write calibration file " + path);
  out << "P2:";
  char buf[64];
  for (double v : calib.p2) {
    std::snprintf(buf, sizeof(buf), " %.12e", v);
    out << buf;
  }
  out << "\n";
}

Difficulty classify_difficulty(const Label& lb) {
  const double h_px = lb.y2 - lb.y1;
  if (h_px >= 40.0 && lb.occluded <= 0 && lb.truncated <= 0.15) return Difficulty::Easy;
  if (h_px >= 25.0 && lb.occluded <= 1 && lb.truncated <= 0.30) return Difficulty::Moderate;
  if (h_px >= 25.0 && lb.occluded <= 2 && lb.truncated <= 0.50) return Difficulty::Hard;
  return Difficulty::Ignored;
}

std::vector<Label> flip_labels(const std::vector<Label>& labels, double image_width) {
  std::vector<Label> out = labels;
  for (auto& lb : out) {
    const double x1 = lb.x1;
    lb.x1 = image_width - lb.x2;
    lb.x2 = image_width - x1;
    lb.x = -lb.x;
    lb.ry = wrap_angle(M_PI - lb.ry);
    lb.alpha = wrap_angle(M_PI - lb.alpha);
  }
  return out;
}

void write_ppm(const std::string& path, const std::vector<double>& rgb, Index h, Index w) {
  if (static_cast<Index>(rgb.size()) != 3 * h * w)
    fail(Error::Kind::Dimension, "write_ppm: buffer size does not match 3x" +
                                     std::to_string(h) + "x" + std::to_string(w));
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(Error::Kind::Io, "cannot write " + path);
  out << "P6\n" << w << " " << h << "\n255\n";
  const Index hw = h * w;
  std::vector<unsigned char> row(static_cast<std::size_t>(w) * 3);
  for (Index r = 0; r < h; ++r) {
    for (Index c = 0; c < w; ++c)
      for (Index ch = 0; ch < 3; ++ch) {
        double v = rgb[static_cast<std::size_t>(ch * hw + r * w + c)];
        v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        row[static_cast<std::size_t>(c * 3 + ch)] =
            static_cast<unsigned char>(v * 255.0 + 0.5);
      }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
}

std::vector<double> read_ppm(const std::string& path, Index& h, Index& w) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Error::Kind::Io, "cannot open " + path);
  std::string magic;
  in >> magic;
  if (magic != "P6") fail(Error::Kind::Parse, path + ": not a binary PPM file");
  long wl = 0, hl = 0, maxval = 0;
  in >> wl >> hl >> maxval;
  if (maxval != 255) fail(Error::Kind::Parse, path + ": expected 8-bit PPM");
  in.get();  // single whitespace after the header
  w = wl;
  h = hl;
  const Index hw = h * w;
  std::vector<unsigned char> raw(static_cast<std::size_t>(hw) * 3);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in) fail(Error::Kind::Parse, path + ": truncated pixel data");
  std::vector<double> rgb(static_cast<std::size_t>(hw) * 3);
  for (Index r = 0; r < h; ++r)
    for (Index c = 0; c < w; ++c)
      for (Index ch = 0; ch < 3; ++ch)
        rgb[static_cast<std::size_t>(ch * hw + r * w + c)] =
            raw[static_cast<std::size_t>((r * w + c) * 3 + ch)] / 255.0;
  return rgb;
}

void write_depth(const std::string& path, const std::vector<double>& depth, Index h, Index w) {
  if (static_cast<Index>(depth.size()) != h * w)
    fail(Error::Kind::Dimension, "write_depth: buffer size mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(Error::Kind::Io, "cannot write " + path);
  const std::int32_t header[3] = {static_cast<std::int32_t>(h), static_cast<std::int32_t>(w), 1};
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  std::vector<float> f32(depth.size());
  for (std::size_t i = 0; i < depth.size(); ++i) f32[i] = static_cast<float>(depth[i]);
  out.write(reinterpret_cast<const char*>(f32.data()),
            static_cast<std::streamsize>(f32.size() * sizeof(float)));
}

std::vector<double> read_depth(const std::string& path, Index& h, Index& w) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Error::Kind::Io, "cannot open " + path);
  std::int32_t header[3] = {0, 0, 0};
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  if (!in || header[2] != 1) fail(Error::Kind::Parse, path + ": bad depth header");
  h = header[0];
  w = header[1];
  std::vector<float> f32(static_cast<std::size_t>(h * w));
  in.read(reinterpret_cast<char*>(f32.data()),
          static_cast<std::streamsize>(f32.size() * sizeof(float)));
  if (!in) fail(Error::Kind::Parse, path + ": truncated depth data");
  return std::vector<double>(f32.begin(), f32.end());
}

}  // namespace auxdepth::kitti
