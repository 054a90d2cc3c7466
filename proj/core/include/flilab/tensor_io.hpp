#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "flilab/tensor.hpp"

namespace flilab {

/// One record of a named-tensor container.
struct StoredTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

using Magic = std::array<char, 4>;

/// Container layout shared by FLW1 and FLO1: magic, version u32, count u32,
/// then per tensor name length u16, name bytes, rank u8, dims u32 each and
/// little-endian float32 data. Values are rounded to float on write.
void write_tensor_container(std::ostream& os, const Magic& magic, const std::vector<StoredTensor>& tensors);
/// Called with each tensor's name and declared shape before its data is read;
/// throwing from it aborts the load.
using ShapeCheck = std::function<void(const std::string& name, const Shape& shape)>;

std::vector<StoredTensor> read_tensor_container(std::istream& is, const Magic& magic, const ShapeCheck& check = {});

void write_tensor_file(const std::string& path, const Magic& magic, const std::vector<StoredTensor>& tensors);
std::vector<StoredTensor> read_tensor_file(const std::string& path, const Magic& magic, const ShapeCheck& check = {});

StoredTensor to_stored(const std::string& name, const Tensor& t);

/// Copies `src` into `dst` after checking the shape; the error names the tensor.
void assign_stored(const StoredTensor& src, Tensor& dst);

constexpr std::uint32_t kContainerVersion = 1;
constexpr Magic kWeightsMagic{'F', 'L', 'W', '1'};
constexpr Magic kOptimizerMagic{'F', 'L', 'O', '1'};

}  // namespace flilab
