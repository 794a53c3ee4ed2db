#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "pad/tensor.hpp"

namespace pad::io {

// Tensor container: magic "PADT", u32 version (=1), u32 rank, rank x u32
// dims, then row-major float64 payload. All integers and floats little
// endian.
void write_tensor(std::ostream& os, const Tensor& t);
void write_tensor(const std::string& path, const Tensor& t);
Tensor read_tensor(std::istream& is);
Tensor read_tensor(const std::string& path);

// Checkpoint container: magic "PADC", u32 record count, then per record a
// u32 byte length + UTF-8 name followed by an embedded PADT blob. Gradients
// are not persisted.
void write_checkpoint(const std::string& path, const std::vector<Parameter>& params);
std::vector<Parameter> read_checkpoint(const std::string& path);

}  // namespace pad::io
