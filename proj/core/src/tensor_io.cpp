#include "flilab/tensor_io.hpp"

#include <fstream>
#include <limits>

#include "binary_io.hpp"

namespace flilab {

void write_tensor_container(std::ostream& os, const Magic& magic, const std::vector<StoredTensor>& tensors) {
  os.write(magic.data(), 4);
  detail::put_le<std::uint32_t>(os, kContainerVersion);
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    if (t.name.size() > std::numeric_limits<std::uint16_t>::max()) throw ContractError("tensor name too long: " + t.name);
    if (t.shape.size() > std::numeric_limits<std::uint8_t>::max()) throw ContractError("tensor rank too large: " + t.name);
    if (numel(t.shape) != t.data.size()) throw DimensionError("tensor " + t.name + ": data does not match shape");
    detail::put_le<std::uint16_t>(os, static_cast<std::uint16_t>(t.name.size()));
    os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    detail::put_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.shape.size()));
    for (auto d : t.shape) detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    detail::put_floats(os, t.data);
  }
  if (!os) throw IoError("write failed");
}

std::vector<StoredTensor> read_tensor_container(std::istream& is, const Magic& magic, const ShapeCheck& check) {
  Magic got{};
  if (!is.read(got.data(), 4)) throw FormatError(FormatErrorCode::truncated, "file shorter than its magic");
  if (got != magic)
    throw FormatError(FormatErrorCode::bad_magic,
                      "expected '" + std::string(magic.data(), 4) + "', found '" + std::string(got.data(), 4) + "'");
  const auto version = detail::get_le<std::uint32_t>(is, "version");
  if (version != kContainerVersion)
    throw FormatError(FormatErrorCode::unsupported_version, "version " + std::to_string(version));
  const auto count = detail::get_le<std::uint32_t>(is, "tensor count");
  std::vector<StoredTensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    StoredTensor t;
    const auto len = detail::get_le<std::uint16_t>(is, "tensor name length");
    t.name.resize(len);
    if (!is.read(t.name.data(), len)) throw FormatError(FormatErrorCode::truncated, "tensor name");
    const auto rank = detail::get_le<std::uint8_t>(is, "rank of " + t.name);
    std::size_t n = 1;
    for (std::uint8_t k = 0; k < rank; ++k) {
      const auto d = detail::get_le<std::uint32_t>(is, "dims of " + t.name);
      if (d == 0) throw FormatError(FormatErrorCode::shape_mismatch, "tensor " + t.name + " has a zero dimension");
      t.shape.push_back(d);
      n *= d;
      if (n > (std::size_t{1} << 34)) throw FormatError(FormatErrorCode::shape_mismatch, "tensor " + t.name + " is implausibly large");
    }
    if (check) check(t.name, t.shape);
    detail::get_floats(is, t.data, n, "data of " + t.name);
    out.push_back(std::move(t));
  }
  return out;
}

void write_tensor_file(const std::string& path, const Magic& magic, const std::vector<StoredTensor>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_tensor_container(os, magic, tensors);
  os.close();
  if (!os) throw IoError("failed writing " + path);
}

std::vector<StoredTensor> read_tensor_file(const std::string& path, const Magic& magic, const ShapeCheck& check) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  return read_tensor_container(is, magic, check);
}

StoredTensor to_stored(const std::string& name, const Tensor& t) {
  StoredTensor s{name, t.shape(), {}};
  const auto v = t.data();
  s.data.assign(v.begin(), v.end());
  return s;
}

void assign_stored(const StoredTensor& src, Tensor& dst) {
  if (src.shape != dst.shape())
    throw FormatError(FormatErrorCode::shape_mismatch,
                      "tensor " + src.name + " has shape " + to_string(src.shape) + ", expected " + to_string(dst.shape()));
  auto out = dst.mutable_data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(src.data[i]);
}

}  // namespace flilab
