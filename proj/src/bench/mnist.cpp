#include "ntk/bench/mnist.hpp"

#include "ntk/errors.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>
#include <string>

namespace ntk::bench {

namespace {

std::uint32_t read_be32(std::string_view bytes, std::size_t offset, std::string_view what) {
  if (bytes.size() < offset + 4) {
    throw FormatError(std::string(what) + ": truncated header", offset);
  }
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    v = (v << 8) | static_cast<unsigned char>(bytes[offset + i]);
  }
  return v;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DatasetNotFoundError("cannot open " + path.string() +
                               "; run tools/fetch_mnist.sh <dir> to download MNIST, or use the "
                               "synthetic dataset");
  }
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string hex(std::uint32_t v) {
  std::ostringstream os;
  os << "0x" << std::hex << v;
  return os.str();
}

}  // namespace

StateTensor MnistDataset::inputs(Index begin, Index count) const {
  if (begin < 0 || count < 1 || begin + count > size()) {
    throw std::out_of_range("MnistDataset::inputs: rows out of range");
  }
  StateTensor t;
  t.axes = {{"batch", count}, {"features", images.cols()}};
  // flat layout is features-fastest, i.e. the transpose in column-major order
  const DenseMatrix block = images.middleRows(begin, count).transpose();
  t.data = Eigen::Map<const Vector>(block.data(), block.size());
  return t;
}

MnistDataset MnistDataset::slice(Index begin, Index count) const {
  if (begin < 0 || count < 0 || begin + count > size()) {
    throw std::out_of_range("MnistDataset::slice: rows out of range");
  }
  return {images.middleRows(begin, count),
          std::vector<int>(labels.begin() + begin, labels.begin() + begin + count)};
}

DenseMatrix parse_idx_images(std::string_view bytes) {
  const auto magic = read_be32(bytes, 0, "IDX images");
  if (magic != kIdxImagesMagic) {
    throw FormatError("IDX images: bad magic " + hex(magic), 0);
  }
  const auto count = read_be32(bytes, 4, "IDX images");
  const auto rows = read_be32(bytes, 8, "IDX images");
  const auto cols = read_be32(bytes, 12, "IDX images");
  if (rows != 28) throw FormatError("IDX images: expected 28 rows, got " + std::to_string(rows), 8);
  if (cols != 28) throw FormatError("IDX images: expected 28 columns, got " + std::to_string(cols), 12);
  constexpr std::size_t header = 16;
  const std::size_t need = header + static_cast<std::size_t>(count) * kMnistPixels;
  if (bytes.size() < need) {
    throw FormatError("IDX images: truncated pixel data (" + std::to_string(bytes.size()) + " of " +
                          std::to_string(need) + " bytes)",
                      bytes.size());
  }
  DenseMatrix out(static_cast<Index>(count), kMnistPixels);
  for (Index i = 0; i < out.rows(); ++i) {
    for (Index j = 0; j < kMnistPixels; ++j) {
      const auto b = static_cast<unsigned char>(bytes[header + i * kMnistPixels + j]);
      out(i, j) = static_cast<double>(b) / 255.0;
    }
  }
  return out;
}

std::vector<int> parse_idx_labels(std::string_view bytes) {
  const auto magic = read_be32(bytes, 0, "IDX labels");
  if (magic != kIdxLabelsMagic) {
    throw FormatError("IDX labels: bad magic " + hex(magic), 0);
  }
  const auto count = read_be32(bytes, 4, "IDX labels");
  constexpr std::size_t header = 8;
  if (bytes.size() < header + count) {
    throw FormatError("IDX labels: truncated label data", bytes.size());
  }
  std::vector<int> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    const int label = static_cast<unsigned char>(bytes[header + i]);
    if (label >= kMnistClasses) {
      throw FormatError("IDX labels: label " + std::to_string(label) + " out of range", header + i);
    }
    out[i] = label;
  }
  return out;
}

DenseMatrix load_idx_images(const std::filesystem::path& path) {
  return parse_idx_images(read_file(path));
}

std::vector<int> load_idx_labels(const std::filesystem::path& path) {
  return parse_idx_labels(read_file(path));
}

MnistDataset load_mnist(const std::filesystem::path& dir, std::string_view split) {
  const std::string prefix(split);
  MnistDataset data{load_idx_images(dir / (prefix + "-images-idx3-ubyte")),
                    load_idx_labels(dir / (prefix + "-labels-idx1-ubyte"))};
  if (static_cast<std::size_t>(data.images.rows()) != data.labels.size()) {
    throw FormatError("MNIST " + prefix + ": image and label counts differ", 4);
  }
  return data;
}

MnistDataset synthetic_mnist(Index count, std::uint64_t seed) {
  if (count < 1) throw std::invalid_argument("synthetic_mnist: count must be >= 1");
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> centre(0.1, 0.9);
  std::normal_distribution<double> noise(0.0, 0.15);

  DenseMatrix centres(kMnistClasses, kMnistPixels);
  for (Index c = 0; c < kMnistClasses; ++c) {
    for (Index j = 0; j < kMnistPixels; ++j) centres(c, j) = centre(gen);
  }
  MnistDataset data{DenseMatrix(count, kMnistPixels), std::vector<int>(count)};
  for (Index i = 0; i < count; ++i) {
    const int label = static_cast<int>(i % kMnistClasses);
    data.labels[i] = label;
    for (Index j = 0; j < kMnistPixels; ++j) {
      data.images(i, j) = std::clamp(centres(label, j) + noise(gen), 0.0, 1.0);
    }
  }
  return data;
}

}  // namespace ntk::bench
