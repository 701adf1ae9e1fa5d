#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "animer/tensor.hpp"

namespace animer::io {

enum class Dtype : std::uint8_t { f32 = 0, f64 = 1, u8 = 2 };

std::size_t dtype_size(Dtype d);

/// One named tensor payload. On disk: u32 name length, name bytes, u8 dtype,
/// u32 rank, u64 dims, then the little-endian row-major payload.
struct Blob {
  std::string name;
  Dtype dtype = Dtype::f64;
  std::vector<std::size_t> shape;
  std::vector<unsigned char> raw;

  static Blob from_tensor(const std::string& name, const Tensor& t, Dtype dtype = Dtype::f64);
  Tensor to_tensor() const;
  std::size_t payload_elements() const;
};

struct BlobSpan {
  std::string name;
  std::uint64_t offset;  // of the blob header within the file
  std::uint64_t length;  // total encoded length
};

/// Appends blobs to an open stream, returning their spans.
std::vector<BlobSpan> append_blobs(std::ostream& os, const std::vector<Blob>& blobs);
Blob read_blob(std::istream& is);
Blob read_blob_at(const std::string& path, std::uint64_t offset);
std::vector<Blob> read_all_blobs(const std::string& path);

// 8-bit binary PGM (P5); values 0/255 for masks.
void write_pgm(const std::string& path, const std::vector<std::uint8_t>& pixels,
               std::size_t height, std::size_t width);
std::vector<std::uint8_t> read_pgm(const std::string& path, std::size_t& height,
                                   std::size_t& width);

// f32 little-endian raster, 16-byte header: magic "DEPTHF32", u32 H, u32 W.
void write_depth(const std::string& path, const std::vector<float>& depth, std::size_t height,
                 std::size_t width);
std::vector<float> read_depth(const std::string& path, std::size_t& height, std::size_t& width);

// Wavefront OBJ, ASCII, 9 significant digits, 1-indexed faces.
void export_obj(const std::string& path, const Tensor& vertices,
                const std::vector<std::array<std::size_t, 3>>& faces);
void import_obj(const std::string& path, Tensor& vertices,
                std::vector<std::array<std::size_t, 3>>& faces);

/// Checkpoint container: magic "ANIMERCK", u32 format version, u64
/// length-prefixed JSON metadata block, then named tensor blobs.
struct Checkpoint {
  nlohmann::json meta;
  std::map<std::string, Tensor> tensors;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace animer::io
