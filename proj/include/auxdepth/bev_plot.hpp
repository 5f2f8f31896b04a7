#pragma once

// Static bird's-eye-view plot of ground-truth and predicted boxes as a
// self-contained SVG: a metric grid every 10 m, gt footprints in blue,
// predictions in red, a heading tick on every box.

#include <string>
#include <vector>

#include "auxdepth/kitti.hpp"

namespace auxdepth {

std::string bev_plot_svg(const std::vector<kitti::Label>& gts,
                         const std::vector<kitti::Label>& preds);

void write_bev_plot(const std::string& path, const std::vector<kitti::Label>& gts,
                    const std::vector<kitti::Label>& preds);

}  // namespace auxdepth
