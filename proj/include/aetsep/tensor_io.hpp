#pragma once

// Binary containers (little-endian float64 payloads) and CSV dumps.
//
// Named-tensor container:
//   "AETSNT01"                     8-byte magic
//   u64 header_len, header bytes   free-form text (model spec)
//   u32 count
//   count x { u32 name_len, name, u32 rank, u64 dims[rank] }   directory
//   payloads in directory order, f64 each
//
// Grid dump:
//   "AETGRID1", u32 rank, u64 dims[rank], f64 payload

#include <string>
#include <utility>
#include <vector>

#include "aetsep/tensor.hpp"

namespace aetsep::io {

using NamedTensor = std::pair<std::string, Tensor>;

struct NamedTensorFile {
  std::string header;
  std::vector<NamedTensor> tensors;

  const Tensor& find(const std::string& name) const;
};

void write_named_tensors(const std::string& path, const NamedTensorFile& file);
NamedTensorFile read_named_tensors(const std::string& path);

void write_grid_raw(const std::string& path, const Tensor& grid);
Tensor read_grid_raw(const std::string& path);
// One line per frame (row), comma separated, %.17g.
void write_grid_csv(const std::string& path, const Tensor& grid);

}  // namespace aetsep::io
