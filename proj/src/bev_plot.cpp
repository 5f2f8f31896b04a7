#include "auxdepth/bev_plot.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "auxdepth/evaluator.hpp"
#include "auxdepth/geometry.hpp"

namespace auxdepth {

namespace {

// plot frame: x right (lateral meters), z up (forward meters)
constexpr double kXMin = -40.0, kXMax = 40.0;
constexpr double kZMin = 0.0, kZMax = 80.0;
constexpr double kScale = 8.0;  // px per meter

double px(double x) { return (x - kXMin) * kScale; }
double py(double z) { return (kZMax - z) * kScale; }

void append_box(std::string& svg, const kitti::Label& lb, const char* color) {
  const Box3D box = eval::label_box3d(lb);
  const auto corners = bev_corners(box);
  char buf[256];
  svg += "  <polygon points=\"";
  for (const auto& c : corners) {
    std::snprintf(buf, sizeof(buf), "%.2f,%.2f ", px(c.x()), py(c.y()));
    svg += buf;
  }
  std::snprintf(buf, sizeof(buf),
                "\" fill=\"none\" stroke=\"%s\" stroke-width=\"1.5\"/>\n", color);
  svg += buf;
  // heading tick from the center toward +l/2
  const double hx = box.x + 0.5 * box.l * std::cos(box.ry);
  const double hz = box.z - 0.5 * box.l * std::sin(box.ry);
  std::snprintf(buf, sizeof(buf),
                "  <line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" "
                "stroke=\"%s\" stroke-width=\"1.5\"/>\n",
                px(box.x), py(box.z), px(hx), py(hz), color);
  svg += buf;
}

}  // namespace

std::string bev_plot_svg(const std::vector<kitti::Label>& gts,
                         const std::vector<kitti::Label>& preds) {
  const double width = (kXMax - kXMin) * kScale;
  const double height = (kZMax - kZMin) * kScale;
  char buf[256];
  std::string svg;
  std::snprintf(buf, sizeof(buf),
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" "
                "viewBox=\"0 0 %.0f %.0f\">\n",
                width, height, width, height);
  svg += buf;
  svg += "  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (double x = kXMin; x <= kXMax + 1e-9; x += 10.0) {
    std::snprintf(buf, sizeof(buf),
                  "  <line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" "
                  "stroke=\"#dddddd\" stroke-width=\"1\"/>\n",
                  px(x), py(kZMin), px(x), py(kZMax));
    svg += buf;
  }
  for (double z = kZMin; z <= kZMax + 1e-9; z += 10.0) {
    std::snprintf(buf, sizeof(buf),
                  "  <line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" "
                  "stroke=\"#dddddd\" stroke-width=\"1\"/>\n",
                  px(kXMin), py(z), px(kXMax), py(z));
    svg += buf;
    std::snprintf(buf, sizeof(buf),
                  "  <text x=\"%.2f\" y=\"%.2f\" font-size=\"10\" fill=\"#888888\">%.0f m"
                  "</text>\n",
                  px(kXMin) + 4.0, py(z) - 4.0, z);
    svg += buf;
  }
  for (const auto& lb : gts)
    if (lb.type != "DontCare") append_box(svg, lb, "blue");
  for (const auto& lb : preds)
    if (lb.type != "DontCare") append_box(svg, lb, "red");
  svg += "</svg>\n";
  return svg;
}

void write_bev_plot(const std::string& path, const std::vector<kitti::Label>& gts,
                    const std::vector<kitti::Label>& preds) {
  std::ofstream out(path);
  if (!out) fail(Error::Kind::Io, "cannot write " + path);
  out << bev_plot_svg(gts, preds);
}

}  // namespace auxdepth
