#pragma once

#include "ma2mi/pretrain.hpp"

#include <string>
#include <vector>

namespace ma2mi::viz {

// horizontal strip of equally sized panes with a thin separator
Image make_grid(const std::vector<Image>& panes, int pad = 2);

struct ReconResult {
    Image i_t, i_td, recon, diff;  // diff = |recon - i_t|
    Image grid;
};

// I_t, I_{t+delta}, decode(reconstruct(encode(I_t), C_delta)), |difference|
ReconResult viz_recon(train::Pipeline& p, const data::FramePair& pair);

// fraction of total pixel mass of `img` inside the box (inclusive bounds)
double box_energy_ratio(const Image& img, int x0, int y0, int x1, int y1);

struct CamResult {
    std::vector<double> heat;  // grid_h*grid_w in [0,1]
    int grid_h = 0, grid_w = 0;
    int argmax_y = 0, argmax_x = 0;
    bool degenerate = false;  // constant map, fell back to zeros
    Image overlay;            // heat blended over the onset frame
};

// gradient-weighted activation map over the action encoder's final spatial
// feature for the target logit; target_class = -1 uses the predicted class
CamResult viz_cam(train::Pipeline& p, const data::FramePair& pair, int target_class);

}  // namespace ma2mi::viz
