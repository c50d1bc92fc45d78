#pragma once

#include "lanesmith/scene.hpp"
#include "lanesmith/tensor.hpp"

namespace lanesmith {

struct CropResult {
  Scene scene;
  std::vector<int> lane_source;    // index into the input scene per output lane
  std::vector<int> object_source;  // index into the input scene per output object
};

// Transforms the scene into `center`'s frame, clips lanes to the square FOV,
// resamples each surviving piece to 20 points and drops outside objects.
// Throws when no lane survives.
CropResult crop_fov(const Scene& scene, const SE2& center, double half_extent);

// Concatenates lane pairs (i, j) where j is i's unique successor and i is
// j's unique predecessor, to fixpoint. Pure degree-2 cycles collapse into a
// single loop lane and set `merged_loop`.
Scene merge_degree2_lanes(const Scene& scene);

struct PartitionResult {
  Scene scene;
  std::vector<int> lane_source;
};

// Splits every lane crossing x=0 at each crossing, resamples the halves and
// links them with successor edges. The result has partitioned = true.
PartitionResult partition_scene(const Scene& scene);

struct Ordering {
  std::vector<int> lanes;    // lanes[k] = source index of the k-th ordered lane
  std::vector<int> objects;
};

// Recursive spatial ordering: min-x, then (within epsilon clusters) min-y,
// max-x, max-y, exact values, original index. Clusters chain values whose
// consecutive gaps are below epsilon, which makes the order total and
// invariant to input shuffling. In partitioned scenes every F_N element
// precedes every F_P element.
Ordering order_elements(const Scene& scene, double epsilon = 0.5);

// Applies an ordering, producing a scene whose elements are physically
// sorted; the stored order fields become the identity.
Scene reorder_scene(const Scene& scene, const Ordering& ordering);

// Convenience: order + reorder.
Scene canonicalize_scene(const Scene& scene, double epsilon = 0.5);

struct FieldRange {
  double min = 0.0;
  double max = 0.0;
};

struct FeatureStats {
  FieldRange lane_x, lane_y;
  FieldRange obj_x, obj_y, speed, cos_h, sin_h, length, width;
};

FeatureStats compute_feature_stats(const std::vector<Scene>& corpus);

inline constexpr int kLaneFeatureDim = 2 * kLanePoints;  // 40
inline constexpr int kObjectFeatureDim = 7;

struct SceneFeatures {
  tc::Tensor lanes;                 // [N_l, 40] in [-1, 1]
  std::vector<int> lane_types;
  tc::Tensor objects;               // [N_o, 7] in [-1, 1]
  std::vector<int> object_classes;
  int clipped = 0;                  // values outside the training range
};

SceneFeatures normalize_features(const Scene& scene, const FeatureStats& stats);

Lane denormalize_lane(const tc::Tensor& features, int row, int lane_type,
                      const FeatureStats& stats);
Object denormalize_object(const tc::Tensor& features, int row, int object_class,
                          const FeatureStats& stats);

double normalize_value(double v, const FieldRange& r, int* clipped = nullptr);
double denormalize_value(double v, const FieldRange& r);

}  // namespace lanesmith
