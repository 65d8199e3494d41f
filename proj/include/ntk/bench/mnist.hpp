#pragma once

#include "ntk/linalg.hpp"
#include "ntk/model.hpp"

#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

namespace ntk::bench {

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;
inline constexpr Index kMnistPixels = 28 * 28;
inline constexpr int kMnistClasses = 10;

struct MnistDataset {
  DenseMatrix images;        // count x 784, pixels in [0, 1]
  std::vector<int> labels;   // count, values 0-9

  Index size() const { return images.rows(); }
  /// Rows [begin, begin + count) as MLP inputs (batch x features).
  StateTensor inputs(Index begin, Index count) const;
  MnistDataset slice(Index begin, Index count) const;
};

/// Parses an IDX image file (magic 0x00000803, count x 28 x 28 unsigned bytes)
/// and scales pixels by 1/255. Throws FormatError naming the byte offset of the
/// first problem, DatasetNotFoundError when the file is missing.
DenseMatrix load_idx_images(const std::filesystem::path& path);
std::vector<int> load_idx_labels(const std::filesystem::path& path);

/// In-memory variants used by the file loaders.
DenseMatrix parse_idx_images(std::string_view bytes);
std::vector<int> parse_idx_labels(std::string_view bytes);

/// Loads `<dir>/<split>-images-idx3-ubyte` and `<dir>/<split>-labels-idx1-ubyte`
/// where split is "train" or "t10k".
MnistDataset load_mnist(const std::filesystem::path& dir, std::string_view split);

/// Offline stand-in: Gaussian blobs around 10 fixed class centres, clipped to
/// [0, 1]. Labels cycle through the classes.
MnistDataset synthetic_mnist(Index count, std::uint64_t seed);

}  // namespace ntk::bench
