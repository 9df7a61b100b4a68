#pragma once

#include "epseg/data.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace epseg {

enum class ShapeKind { ellipse, rectangle };

struct ShapeSpec {
  ShapeKind kind = ShapeKind::ellipse;
  double cx = 0, cy = 0;
  double rx = 1, ry = 1;  // semi-axes / half extents
  double angle = 0;       // radians
  std::array<std::uint8_t, 3> color{255, 255, 255};
};

BinaryMask rasterize_shape(const ShapeSpec& shape, int width, int height);

/// One object (ellipse or rotated rectangle) on a noisy gradient background.
struct SyntheticScene {
  Image image;
  BinaryMask mask;
  int class_id = 0;
};

SyntheticScene random_scene(Rng& rng, int width, int height);

/// Memorisable set of `count` single-object scenes, cropped to `config.input_size`.
/// Even indices get class 0, odd indices class 3.
std::vector<SyntheticScene> overfit_scenes(int count, std::uint64_t seed, int width = 96, int height = 80);
std::vector<InstanceSample> overfit_fixture(int count, std::uint64_t seed, const DataConfig& config);

/// Crops that each hold two overlapping shapes drawn in random order; a random one
/// of them is the target. Only the extreme-points channel tells the two apart.
std::vector<InstanceSample> overlapping_shapes_dataset(int count, int size, std::uint64_t seed, int ep_radius);

/// Writes scenes as PNG pairs plus index.json. Scenes [0, train_count) are "train";
/// the rest are "val". With `val_equals_train` every scene is also listed as "val".
void write_scene_dataset(const std::filesystem::path& root, const std::vector<SyntheticScene>& scenes,
                         std::size_t train_count, bool val_equals_train);

}  // namespace epseg
