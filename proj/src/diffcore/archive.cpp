#include "expres/archive.hpp"

#include <openssl/evp.h>

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

#include "expres/errors.hpp"

namespace expres {
namespace {

constexpr char kMagic[4] = {'X', 'T', '0', '1'};
constexpr std::uint8_t kDtypeF32 = 0;

void put_u8(std::ostream& os, std::uint8_t v) { os.put(static_cast<char>(v)); }

void put_u16(std::ostream& os, std::uint16_t v) {
  const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
  os.write(b, 2);
}

void put_u32(std::ostream& os, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}

void read_exact(std::istream& is, char* dst, std::size_t n, const char* what) {
  is.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) {
    throw FormatError(std::string("truncated input while reading ") + what);
  }
}

std::uint8_t get_u8(std::istream& is, const char* what) {
  char c;
  read_exact(is, &c, 1, what);
  return static_cast<std::uint8_t>(c);
}

std::uint16_t get_u16(std::istream& is, const char* what) {
  unsigned char b[2];
  read_exact(is, reinterpret_cast<char*>(b), 2, what);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t get_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  read_exact(is, reinterpret_cast<char*>(b), 4, what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  return os;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path.string() + "' for reading");
  return is;
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
  if (t.rank() > std::numeric_limits<std::uint8_t>::max()) throw FormatError("tensor rank exceeds 255");
  os.write(kMagic, 4);
  put_u8(os, kDtypeF32);
  put_u8(os, static_cast<std::uint8_t>(t.rank()));
  for (auto d : t.dims()) {
    if (d > std::numeric_limits<std::uint32_t>::max()) throw FormatError("tensor extent exceeds u32");
    put_u32(os, static_cast<std::uint32_t>(d));
  }
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
  } else {
    for (float v : t.values()) put_u32(os, std::bit_cast<std::uint32_t>(v));
  }
  if (!os) throw IoError("write failed");
}

Tensor read_tensor(std::istream& is) {
  char magic[4];
  read_exact(is, magic, 4, "XT01 magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad magic: expected XT01");
  const auto dtype = get_u8(is, "dtype");
  if (dtype != kDtypeF32) throw FormatError("unsupported dtype code " + std::to_string(dtype));
  const auto rank = get_u8(is, "rank");
  Dims dims(rank);
  for (auto& d : dims) d = get_u32(is, "extent");
  std::vector<float> values(product(dims));
  if constexpr (std::endian::native == std::endian::little) {
    read_exact(is, reinterpret_cast<char*>(values.data()), values.size() * sizeof(float), "tensor payload");
  } else {
    for (auto& v : values) v = std::bit_cast<float>(get_u32(is, "tensor payload"));
  }
  return Tensor(std::move(dims), std::move(values));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  auto os = open_out(path);
  write_tensor(os, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  auto is = open_in(path);
  return read_tensor(is);
}

void write_archive(std::ostream& os, const TensorMap& tensors) {
  put_u32(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) throw FormatError("entry name too long: " + name);
    put_u16(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(os, t);
  }
  if (!os) throw IoError("write failed");
}

TensorMap read_archive(std::istream& is) {
  const auto count = get_u32(is, "archive entry count");
  TensorMap out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get_u16(is, "entry name length");
    std::string name(len, '\0');
    read_exact(is, name.data(), len, "entry name");
    Tensor t;
    try {
      t = read_tensor(is);
    } catch (const FormatError& e) {
      throw FormatError("entry '" + name + "': " + e.what());
    }
    if (!out.emplace(name, std::move(t)).second) throw FormatError("duplicate entry '" + name + "'");
  }
  return out;
}

void save_archive(const std::filesystem::path& path, const TensorMap& tensors) {
  auto os = open_out(path);
  write_archive(os, tensors);
}

TensorMap load_archive(const std::filesystem::path& path) {
  auto is = open_in(path);
  return read_archive(is);
}

std::string git_blob_hash(const std::string& bytes) {
  const std::string header = "blob " + std::to_string(bytes.size()) + '\0';
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int length = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx, header.data(), header.size()) != 1 ||
      EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) != 1 || EVP_DigestFinal_ex(ctx, digest.data(), &length) != 1) {
    EVP_MD_CTX_free(ctx);
    throw IoError("sha1 digest failed");
  }
  EVP_MD_CTX_free(ctx);
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < length; ++i) {
    const unsigned char c = digest[i];
    out += hex[c >> 4];
    out += hex[c & 0xf];
  }
  return out;
}

std::string content_hash(const TensorMap& tensors) {
  std::ostringstream os(std::ios::binary);
  write_archive(os, tensors);
  return git_blob_hash(os.str());
}

std::string file_hash(const std::filesystem::path& path) {
  auto is = open_in(path);
  const std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return git_blob_hash(bytes);
}

}  // namespace expres
