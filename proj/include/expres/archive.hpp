#pragma once

// Binary tensor containers.
//
// XT01 record:  "XT01" | u8 dtype (0 = f32 LE) | u8 rank | rank x u32 LE extents | payload
// Archive:      u32 LE entry count | per entry: u16 LE name length, UTF-8 name, XT01 record

#include <filesystem>
#include <iosfwd>
#include <string>

#include "expres/tensor.hpp"

namespace expres {

void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);
void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

void write_archive(std::ostream& os, const TensorMap& tensors);
TensorMap read_archive(std::istream& is);
void save_archive(const std::filesystem::path& path, const TensorMap& tensors);
TensorMap load_archive(const std::filesystem::path& path);

// SHA-1 over "blob <size>\0<bytes>", hex encoded (same digest git uses for blobs).
std::string git_blob_hash(const std::string& bytes);
// git_blob_hash of the serialized archive; independent of insertion order.
std::string content_hash(const TensorMap& tensors);
std::string file_hash(const std::filesystem::path& path);

}  // namespace expres
