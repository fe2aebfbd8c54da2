#include "geomerge/checkpoint.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <limits>
#include <nlohmann/json.hpp>
#include <set>

#include "geomerge/error.hpp"

namespace geomerge {

using ordered_json = nlohmann::ordered_json;

namespace {

constexpr std::uint64_t kMaxHeaderBytes = std::uint64_t{100} << 20;

[[noreturn]] void malformed(const std::filesystem::path& path, const std::string& why) {
  throw Error(ErrorCode::MalformedHeader, path.string() + ": " + why);
}

std::uint64_t checked_numel(const Shape& shape) {
  std::uint64_t n = 1;
  for (auto d : shape) {
    if (d < 0) return std::numeric_limits<std::uint64_t>::max();
    const auto ud = static_cast<std::uint64_t>(d);
    if (ud != 0 && n > std::numeric_limits<std::uint64_t>::max() / ud)
      return std::numeric_limits<std::uint64_t>::max();
    n *= ud;
  }
  return n;
}

}  // namespace

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

TensorRecord TensorRecord::from_values(std::string name, DType dtype, Shape shape,
                                       std::span<const double> values) {
  TensorRecord t{std::move(name), dtype, std::move(shape), {}};
  if (t.numel() != values.size())
    throw Error(ErrorCode::ShapeMismatch,
                t.name + ": shape " + shape_to_string(t.shape) + " does not hold " +
                    std::to_string(values.size()) + " values");
  t.data = encode(dtype, values);
  return t;
}

TensorRecord convert_dtype(const TensorRecord& t, DType target) {
  if (t.dtype == target) return t;
  const auto v = t.values();
  return TensorRecord::from_values(t.name, target, t.shape, v);
}

// ---------------------------------------------------------------------------
// Reader

class Checkpoint::File {
 public:
  explicit File(const std::filesystem::path& path) {
    fd_ = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
    if (fd_ < 0)
      throw Error(ErrorCode::IoFailure, path.string() + ": " + std::strerror(errno));
  }
  ~File() {
    if (fd_ >= 0) ::close(fd_);
  }
  File(const File&) = delete;
  File& operator=(const File&) = delete;

  std::uint64_t size() const {
    struct stat st {};
    if (::fstat(fd_, &st) != 0) throw Error(ErrorCode::IoFailure, std::strerror(errno));
    return static_cast<std::uint64_t>(st.st_size);
  }

  // Returns the number of bytes actually read (short only at EOF).
  std::size_t read_at(std::uint64_t offset, std::span<std::byte> out) const {
    std::size_t done = 0;
    while (done < out.size()) {
      const ssize_t r = ::pread(fd_, out.data() + done, out.size() - done,
                                static_cast<off_t>(offset + done));
      if (r < 0) {
        if (errno == EINTR) continue;
        throw Error(ErrorCode::IoFailure, std::strerror(errno));
      }
      if (r == 0) break;
      done += static_cast<std::size_t>(r);
    }
    return done;
  }

 private:
  int fd_ = -1;
};

Checkpoint Checkpoint::open(const std::filesystem::path& path) {
  Checkpoint ck;
  ck.path_ = path;
  auto file = std::make_shared<const File>(path);
  ck.file_size_ = file->size();

  std::array<std::byte, 8> prefix{};
  if (ck.file_size_ < 8 || file->read_at(0, prefix) != 8)
    malformed(path, "file shorter than the 8-byte length prefix");
  std::uint64_t n = 0;
  for (int i = 7; i >= 0; --i) n = (n << 8) | std::to_integer<std::uint64_t>(prefix[i]);
  if (n > ck.file_size_ - 8) malformed(path, "header length " + std::to_string(n) + " exceeds file size");
  if (n > kMaxHeaderBytes) malformed(path, "header length " + std::to_string(n) + " is unreasonably large");
  ck.header_size_ = n;

  std::string text(n, '\0');
  if (file->read_at(8, std::as_writable_bytes(std::span(text))) != n)
    malformed(path, "short read in header");

  std::set<std::string> seen;
  std::string duplicate;
  ordered_json::parser_callback_t cb = [&](int depth, ordered_json::parse_event_t ev,
                                           ordered_json& parsed) {
    if (depth == 1 && ev == ordered_json::parse_event_t::key) {
      auto k = parsed.get<std::string>();
      if (!seen.insert(k).second && duplicate.empty()) duplicate = k;
    }
    return true;
  };
  ordered_json header;
  try {
    header = ordered_json::parse(text, cb);
  } catch (const ordered_json::exception& e) {
    malformed(path, std::string("invalid header JSON: ") + e.what());
  }
  if (!header.is_object()) malformed(path, "header is not a JSON object");
  if (!duplicate.empty()) malformed(path, "duplicate tensor name '" + duplicate + "'");

  const std::uint64_t data_size = ck.file_size_ - 8 - n;
  std::uint64_t cursor = 0;
  for (auto& [key, entry] : header.items()) {
    if (key == "__metadata__") {
      if (!entry.is_object()) malformed(path, "__metadata__ is not an object");
      for (auto& [mk, mv] : entry.items()) {
        if (!mv.is_string()) malformed(path, "metadata value for '" + mk + "' is not a string");
        ck.metadata_[mk] = mv.get<std::string>();
      }
      continue;
    }
    if (key.empty()) malformed(path, "empty tensor name");
    if (!entry.is_object()) malformed(path, "entry '" + key + "' is not an object");
    auto dt = entry.find("dtype");
    auto sh = entry.find("shape");
    auto off = entry.find("data_offsets");
    if (dt == entry.end() || !dt->is_string() || sh == entry.end() || !sh->is_array() ||
        off == entry.end() || !off->is_array() || off->size() != 2)
      malformed(path, "entry '" + key + "' lacks dtype/shape/data_offsets");

    TensorInfo info;
    info.name = key;
    const auto dname = dt->get<std::string>();
    auto parsed = parse_dtype(dname);
    if (!parsed)
      throw Error(ErrorCode::UnsupportedDType, path.string() + ": tensor '" + key + "' has dtype " + dname);
    info.dtype = *parsed;
    for (auto& d : *sh) {
      if (!d.is_number_integer() || d.get<std::int64_t>() < 0)
        malformed(path, "tensor '" + key + "' has an invalid dimension");
      info.shape.push_back(d.get<std::int64_t>());
    }
    for (auto& o : *off)
      if (!o.is_number_unsigned()) malformed(path, "tensor '" + key + "' has invalid data_offsets");
    info.begin = (*off)[0].get<std::uint64_t>();
    info.end = (*off)[1].get<std::uint64_t>();
    if (info.end < info.begin) malformed(path, "tensor '" + key + "' has reversed data_offsets");
    if (info.begin < cursor) malformed(path, "tensor '" + key + "' overlaps or precedes its predecessor");
    if (info.end > data_size) malformed(path, "tensor '" + key + "' extends past the end of the file");
    const auto numel = checked_numel(info.shape);
    if (numel > data_size || numel * byte_width(info.dtype) != info.nbytes())
      malformed(path, "tensor '" + key + "' byte range does not match shape " + shape_to_string(info.shape));
    cursor = info.end;
    ck.index_.emplace(info.name, ck.tensors_.size());
    ck.tensors_.push_back(std::move(info));
  }
  ck.file_ = std::move(file);
  return ck;
}

const TensorInfo* Checkpoint::find(std::string_view name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &tensors_[it->second];
}

TensorRecord Checkpoint::read_tensor(std::string_view name) const {
  const TensorInfo* info = find(name);
  if (!info) throw Error(ErrorCode::UnknownTensor, path_.string() + ": no tensor named '" + std::string(name) + "'");
  return read_tensor(*info);
}

TensorRecord Checkpoint::read_tensor(const TensorInfo& info) const {
  TensorRecord t{info.name, info.dtype, info.shape, std::vector<std::byte>(info.nbytes())};
  const auto got = file_->read_at(8 + header_size_ + info.begin, t.data);
  if (got != t.data.size())
    throw Error(ErrorCode::TruncatedData, path_.string() + ": tensor '" + info.name + "' is truncated");
  return t;
}

// ---------------------------------------------------------------------------
// Writer

std::string encode_header(std::span<const TensorLayout> layout, const Metadata& metadata) {
  ordered_json header = ordered_json::object();
  if (!metadata.empty()) {
    ordered_json meta = ordered_json::object();
    for (const auto& [k, v] : metadata) meta[k] = v;
    header["__metadata__"] = std::move(meta);
  }
  std::set<std::string_view> names;
  std::uint64_t offset = 0;
  for (const auto& t : layout) {
    if (t.name.empty()) throw Error(ErrorCode::InvalidRecipe, "tensor name must be non-empty");
    if (t.name == "__metadata__") throw Error(ErrorCode::InvalidRecipe, "'__metadata__' is reserved");
    if (!names.insert(t.name).second)
      throw Error(ErrorCode::DuplicateName, "tensor '" + t.name + "' appears more than once");
    const std::uint64_t nbytes = element_count(t.shape) * byte_width(t.dtype);
    header[t.name] = {{"dtype", std::string(to_string(t.dtype))},
                      {"shape", t.shape},
                      {"data_offsets", {offset, offset + nbytes}}};
    offset += nbytes;
  }
  std::string text = header.dump();
  // Pad with spaces so the data region starts 8-byte aligned.
  text.append((8 - text.size() % 8) % 8, ' ');
  std::string out(8, '\0');
  std::uint64_t n = text.size();
  for (int i = 0; i < 8; ++i) out[i] = static_cast<char>((n >> (8 * i)) & 0xFF);
  return out + text;
}

CheckpointWriter::CheckpointWriter(const std::filesystem::path& path, std::vector<TensorLayout> layout,
                                   const Metadata& metadata)
    : path_(path), layout_(std::move(layout)) {
  const std::string header = encode_header(layout_, metadata);
  out_.open(path, std::ios::binary | std::ios::trunc);
  if (!out_) throw Error(ErrorCode::IoFailure, path.string() + ": cannot open for writing");
  out_.write(header.data(), static_cast<std::streamsize>(header.size()));
  if (!out_) throw Error(ErrorCode::IoFailure, path.string() + ": write failed");
}

void CheckpointWriter::write(const TensorRecord& tensor) {
  if (next_ >= layout_.size())
    throw Error(ErrorCode::InvalidRecipe, "tensor '" + tensor.name + "' was not declared in the layout");
  const auto& slot = layout_[next_];
  if (tensor.name != slot.name || tensor.dtype != slot.dtype || tensor.shape != slot.shape)
    throw Error(ErrorCode::InvalidRecipe, "tensor '" + tensor.name + "' does not match declared slot '" + slot.name + "'");
  if (tensor.data.size() != tensor.numel() * byte_width(tensor.dtype))
    throw Error(ErrorCode::ShapeMismatch, "tensor '" + tensor.name + "' buffer does not match its shape");
  out_.write(reinterpret_cast<const char*>(tensor.data.data()),
             static_cast<std::streamsize>(tensor.data.size()));
  if (!out_) throw Error(ErrorCode::IoFailure, path_.string() + ": write failed");
  ++next_;
}

void CheckpointWriter::finish() {
  if (next_ != layout_.size())
    throw Error(ErrorCode::InvalidRecipe, path_.string() + ": only " + std::to_string(next_) + " of " +
                                              std::to_string(layout_.size()) + " tensors written");
  out_.flush();
  out_.close();
  if (out_.fail()) throw Error(ErrorCode::IoFailure, path_.string() + ": flush failed");
}

void write_checkpoint(const std::filesystem::path& path, std::span<const TensorRecord> tensors,
                      const Metadata& metadata) {
  std::vector<TensorLayout> layout;
  layout.reserve(tensors.size());
  for (const auto& t : tensors) layout.push_back({t.name, t.dtype, t.shape});
  CheckpointWriter w(path, std::move(layout), metadata);
  for (const auto& t : tensors) w.write(t);
  w.finish();
}

}  // namespace geomerge
