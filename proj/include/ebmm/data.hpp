#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ebmm/tensor.hpp"

namespace ebmm {

enum class DatasetFamily { GmmPair, BitmapDigits };

struct DatasetSpec {
  DatasetFamily family = DatasetFamily::GmmPair;
  int classes = 3;      // K
  int modalities = 2;   // both families are pairs
  double noise = 0.3;   // per-coordinate noise scale
  int n_train = 3000;
  int n_test = 1000;
  std::uint64_t seed = 7;
  // gmm_pair geometry
  double radius = 4.0;
  // bitmap_digits style levels
  double background_a = 0.1;
  double background_b = 0.2;
  std::string train_path;
  std::string test_path;
};

/// Aligned multimodal examples. views[i] holds n rows of dims[i] values,
/// row-major. Every view of example r carries labels[r].
struct Dataset {
  int modalities = 0;
  int classes = 0;
  std::vector<int> dims;                  // per-modality extent
  std::vector<int> labels;                // n entries, each in [0, classes)
  std::vector<std::vector<double>> views; // [modality][n * dims[modality]]

  int size() const { return static_cast<int>(labels.size()); }
};

struct Batch {
  std::vector<Tensor> views;  // [modality] -> [batch x dims[modality]]
  std::vector<int> labels;

  int size() const { return static_cast<int>(labels.size()); }
};

/// Rounds v to 9 significant decimal digits (the dataset file precision), so
/// generated values survive a save/load round trip bitwise.
double quantize9(double v);

/// Class-k centers on a radius circle; modality B's circle is rotated and
/// its class assignment permuted, so the pairing is informative but the two
/// views are not rigid copies.
std::pair<Dataset, Dataset> generate_gmm_pair(const DatasetSpec& spec);
/// 8x8 glyph bitmaps; modality A draws the glyph on a dim background,
/// modality B draws the photographic negative on its own background level.
std::pair<Dataset, Dataset> generate_bitmap_digits(const DatasetSpec& spec);
/// Dispatch on spec.family; validates the spec.
std::pair<Dataset, Dataset> generate_dataset(const DatasetSpec& spec);

void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

Batch make_batch(const Dataset& ds, const std::vector<int>& indices);
Batch full_batch(const Dataset& ds);

}  // namespace ebmm
