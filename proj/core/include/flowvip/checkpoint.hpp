#pragma once

#include <string>

#include "flowvip/nn.hpp"

namespace flowvip::io {

/// Tensor record file: "FVIPCKPT", u32 version, u32 scalar width, u64-prefixed
/// header text, u64 record count, then per record u32-prefixed name, u32 rank,
/// u64 extents, u64 payload length and the raw little-endian scalars.
struct RecordFile {
  std::string header;
  nn::ParameterList records;
};

void write_records(const std::string& path, const std::string& header, const nn::ParameterList& records);
RecordFile read_records(const std::string& path);

/// Copies values by name into existing tensors; every destination must be
/// present with an identical shape.
void assign_records(const nn::ParameterList& destination, const nn::ParameterList& source);

}  // namespace flowvip::io
