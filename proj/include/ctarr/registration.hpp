#pragma once

#include <string>
#include <vector>

#include "ctarr/types.hpp"

namespace ctarr {

// w~_c = moving_volumes[c] / atlas_volumes[c], normalized to sum to 1.
// Down-weights classes only partially inside the field of view.
CoverageWeights coverage_weights(const std::vector<double>& moving_volumes,
                                 const std::vector<double>& atlas_volumes);

struct LsqResult {
    Arr3d t{0, 0, 0};
    double residual = 0.0;  // sum_i w_i |x_i + t - y_i|^2
};

// Closed-form minimizer of the weighted landmark alignment error:
// t_j = sum_i w_i (y_ij - x_ij).
LsqResult lsq_translation(const LandmarkSet& moving, const std::vector<Arr3d>& atlas_landmarks,
                          const CoverageWeights& w);

struct OrientationResult {
    RestrictedOrientation orientation;
    Arr3d t0{0, 0, 0};
    double residual = 0.0;
};

// Tries all 8 restricted orientations on the moving landmarks (pivoting on
// the volume's physical center, matching apply_orientation) and returns the
// one with the least LSQ residual; ties break toward lower (k_rot, flip_z).
OrientationResult orientation_search(const LabelVolume& moving, const AtlasSegmentation& atlas);

// Precomputed loss evaluation domain: atlas voxels within 5 face-connected
// dilation steps of the union of class supports, plus sparse per-voxel class
// probabilities. The loss restricted to this set has the same optimum and is
// several times cheaper than a full-grid sweep.
class DiceLossContext {
public:
    explicit DiceLossContext(const AtlasSegmentation& atlas);

    const AtlasSegmentation& atlas() const { return *atlas_; }
    std::int64_t active_count() const { return std::int64_t(vi_.size()); }

    double evaluate(const LabelVolume& moving_norm, const Arr3d& scale,
                    const Arr3d& translation_mm, const CoverageWeights& w) const;

private:
    const AtlasSegmentation* atlas_;
    std::vector<std::int16_t> vi_, vj_, vk_;  // active voxel indices
    std::vector<std::int32_t> row_offset_;    // per active voxel, into rows
    std::vector<std::uint8_t> row_cls_;       // class - 1
    std::vector<float> row_q_;
};

// Reference soft Dice loss: every moving channel is pulled onto the atlas
// grid at (y - t) / s with trilinear interpolation (zero outside), and
// per-class dice terms are combined with the coverage weights. Agrees
// bit-for-bit with DiceLossContext::evaluate on one-hot channels.
double soft_dice_loss(const std::vector<FloatVolume>& moving_soft, const Arr3d& scale,
                      const Arr3d& translation_mm, const AtlasSegmentation& atlas,
                      const CoverageWeights& w);

struct RefineResult {
    Arr3d scale{1, 1, 1};
    Arr3d translation_mm{0, 0, 0};
    double loss_init = 0.0;
    double loss_final = 0.0;
    int iterations = 0;
    int step_reductions = 0;
    std::vector<double> loss_trace;  // loss_init followed by each accepted loss
};

// Gradient descent on theta = (u / extent, s), where u = t + (s - 1) * xbar
// recenters scaling on the anatomy's weighted center xbar so scale and shift
// stay decoupled. Starts at u = t0 with s moment-matched from the weighted
// landmark spreads (falling back to s = 1 whenever that is no worse).
// Gradients by central finite differences (half an atlas voxel in u, 1e-3 in
// s, probes clamped to the scale bounds); proposals theta - eta * g / max|g|
// with eta starting at 0.05. A proposal that worsens the loss is rejected;
// eta halves whenever a proposal improves the loss by less than 0.005, and
// iteration stops at the fourth halving or after 500 proposals. The
// accepted-loss trace is non-increasing, so the end state is the best seen;
// scale is clamped to [0.5, 2] after every step.
RefineResult refine_transform(const LabelVolume& moving_norm, const AtlasSegmentation& atlas,
                              const Arr3d& t0, const CoverageWeights& w);

struct RegistrationReport {
    CoverageWeights weights;
    double residual_landmark = 0.0;
    double loss_init = 0.0;
    double loss_final = 0.0;
    int iterations = 0;
    int step_reductions = 0;
    double wall_ms = 0.0;
    std::vector<double> loss_trace;
};

struct RegistrationResult {
    RestrictedAffine transform;
    RegistrationReport report;
};

// Full two-stage registration: orientation search on the native-spacing
// volume (exact group equivariance), orientation normalization, resampling
// to the atlas spacing, then Dice refinement of (s, t).
RegistrationResult register_to_atlas(const LabelVolume& moving, const AtlasSegmentation& atlas);

// JSON round trip for transforms; the report travels with the transform.
std::string transform_to_json(const RegistrationResult& result);
RestrictedAffine transform_from_json(const std::string& text);

}  // namespace ctarr
