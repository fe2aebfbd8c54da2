#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "geomerge/dtype.hpp"

namespace geomerge {

using Shape = std::vector<std::int64_t>;
using Metadata = std::map<std::string, std::string>;

std::size_t element_count(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// One named tensor held in its storage dtype.
struct TensorRecord {
  std::string name;
  DType dtype = DType::F32;
  Shape shape;
  std::vector<std::byte> data;  // little-endian, row-major

  std::size_t numel() const { return element_count(shape); }
  std::vector<double> values() const { return decode(dtype, data); }

  /// Encodes working-precision values into `dtype`.
  static TensorRecord from_values(std::string name, DType dtype, Shape shape,
                                  std::span<const double> values);
};

/// Re-encodes through working precision with round-to-nearest-even.
TensorRecord convert_dtype(const TensorRecord& t, DType target);

/// Header entry: where a tensor lives relative to the start of the data region.
struct TensorInfo {
  std::string name;
  DType dtype = DType::F32;
  Shape shape;
  std::uint64_t begin = 0;
  std::uint64_t end = 0;

  std::size_t numel() const { return element_count(shape); }
  std::uint64_t nbytes() const { return end - begin; }
};

/// Read-only handle onto a checkpoint file. Opening parses only the header;
/// tensor data is fetched on demand with positional reads, so one handle can
/// serve concurrent read_tensor calls from several threads.
class Checkpoint {
 public:
  static Checkpoint open(const std::filesystem::path& path);

  const std::filesystem::path& path() const { return path_; }
  const std::vector<TensorInfo>& tensors() const { return tensors_; }
  const Metadata& metadata() const { return metadata_; }
  std::uint64_t header_size() const { return header_size_; }
  std::uint64_t file_size() const { return file_size_; }

  const TensorInfo* find(std::string_view name) const;
  TensorRecord read_tensor(std::string_view name) const;
  TensorRecord read_tensor(const TensorInfo& info) const;

 private:
  class File;

  std::filesystem::path path_;
  std::shared_ptr<const File> file_;
  std::vector<TensorInfo> tensors_;
  std::map<std::string, std::size_t, std::less<>> index_;
  Metadata metadata_;
  std::uint64_t header_size_ = 0;
  std::uint64_t file_size_ = 0;
};

struct TensorLayout {
  std::string name;
  DType dtype = DType::F32;
  Shape shape;
};

/// Streaming writer. The header is emitted up front from the declared layout,
/// after which tensors are appended one at a time in layout order.
class CheckpointWriter {
 public:
  CheckpointWriter(const std::filesystem::path& path, std::vector<TensorLayout> layout,
                   const Metadata& metadata);

  void write(const TensorRecord& tensor);
  void finish();
  std::size_t written() const { return next_; }

 private:
  std::filesystem::path path_;
  std::vector<TensorLayout> layout_;
  std::ofstream out_;
  std::size_t next_ = 0;
};

/// Serialises the header (length prefix included) for a layout.
std::string encode_header(std::span<const TensorLayout> layout, const Metadata& metadata);

void write_checkpoint(const std::filesystem::path& path, std::span<const TensorRecord> tensors,
                      const Metadata& metadata = {});

}  // namespace geomerge
