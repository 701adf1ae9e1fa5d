#include "animer/io.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace animer::io {

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw std::runtime_error(what + ": " + path);
}

template <typename T>
void put(std::ostream& os, T v) {
  // platform is little-endian; payloads are defined LE on disk
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("unexpected end of stream");
  return v;
}

}  // namespace

std::size_t dtype_size(Dtype d) {
  switch (d) {
    case Dtype::f32: return 4;
    case Dtype::f64: return 8;
    case Dtype::u8: return 1;
  }
  throw std::invalid_argument("unknown dtype");
}

std::size_t Blob::payload_elements() const {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Blob Blob::from_tensor(const std::string& name, const Tensor& t, Dtype dtype) {
  Blob b;
  b.name = name;
  b.dtype = dtype;
  b.shape = t.shape();
  const std::size_t n = t.size();
  b.raw.resize(n * dtype_size(dtype));
  if (dtype == Dtype::f64) {
    std::memcpy(b.raw.data(), t.data(), n * 8);
  } else if (dtype == Dtype::f32) {
    for (std::size_t i = 0; i < n; ++i) {
      const float f = static_cast<float>(t[i]);
      std::memcpy(b.raw.data() + i * 4, &f, 4);
    }
  } else {
    for (std::size_t i = 0; i < n; ++i)
      b.raw[i] = static_cast<unsigned char>(t[i] < 0 ? 0 : (t[i] > 255 ? 255 : t[i] + 0.5));
  }
  return b;
}

Tensor Blob::to_tensor() const {
  const std::size_t n = payload_elements();
  if (raw.size() != n * dtype_size(dtype))
    throw std::runtime_error("blob payload length mismatch: " + name);
  Tensor t(shape);
  if (dtype == Dtype::f64) {
    std::memcpy(t.data(), raw.data(), n * 8);
  } else if (dtype == Dtype::f32) {
    for (std::size_t i = 0; i < n; ++i) {
      float f;
      std::memcpy(&f, raw.data() + i * 4, 4);
      t[i] = f;
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) t[i] = raw[i];
  }
  return t;
}

std::vector<BlobSpan> append_blobs(std::ostream& os, const std::vector<Blob>& blobs) {
  std::vector<BlobSpan> spans;
  for (const Blob& b : blobs) {
    BlobSpan span;
    span.name = b.name;
    span.offset = static_cast<std::uint64_t>(os.tellp());
    put<std::uint32_t>(os, static_cast<std::uint32_t>(b.name.size()));
    os.write(b.name.data(), static_cast<std::streamsize>(b.name.size()));
    put<std::uint8_t>(os, static_cast<std::uint8_t>(b.dtype));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(b.shape.size()));
    for (auto d : b.shape) put<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(b.raw.data()),
             static_cast<std::streamsize>(b.raw.size()));
    span.length = static_cast<std::uint64_t>(os.tellp()) - span.offset;
    spans.push_back(span);
  }
  return spans;
}

Blob read_blob(std::istream& is) {
  Blob b;
  const auto name_len = get<std::uint32_t>(is);
  b.name.resize(name_len);
  is.read(b.name.data(), name_len);
  b.dtype = static_cast<Dtype>(get<std::uint8_t>(is));
  const auto rank = get<std::uint32_t>(is);
  b.shape.resize(rank);
  for (auto& d : b.shape) d = get<std::uint64_t>(is);
  b.raw.resize(b.payload_elements() * dtype_size(b.dtype));
  is.read(reinterpret_cast<char*>(b.raw.data()), static_cast<std::streamsize>(b.raw.size()));
  if (!is) throw std::runtime_error("truncated blob: " + b.name);
  return b;
}

Blob read_blob_at(const std::string& path, std::uint64_t offset) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(path, "cannot open");
  is.seekg(static_cast<std::streamoff>(offset));
  return read_blob(is);
}

std::vector<Blob> read_all_blobs(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(path, "cannot open");
  std::vector<Blob> blobs;
  while (is.peek() != std::char_traits<char>::eof()) blobs.push_back(read_blob(is));
  return blobs;
}

void write_pgm(const std::string& path, const std::vector<std::uint8_t>& pixels,
               std::size_t height, std::size_t width) {
  if (pixels.size() != height * width) throw std::invalid_argument("pgm size mismatch");
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(path, "cannot open for write");
  os << "P5\n" << width << " " << height << "\n255\n";
  os.write(reinterpret_cast<const char*>(pixels.data()),
           static_cast<std::streamsize>(pixels.size()));
  if (!os) fail(path, "write failed");
}

std::vector<std::uint8_t> read_pgm(const std::string& path, std::size_t& height,
                                   std::size_t& width) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(path, "cannot open");
  std::string magic;
  is >> magic;
  if (magic != "P5") fail(path, "not a P5 PGM");
  std::size_t maxval;
  is >> width >> height >> maxval;
  is.get();  // single whitespace after header
  std::vector<std::uint8_t> pixels(height * width);
  is.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!is) fail(path, "truncated PGM");
  return pixels;
}

void write_depth(const std::string& path, const std::vector<float>& depth, std::size_t height,
                 std::size_t width) {
  if (depth.size() != height * width) throw std::invalid_argument("depth size mismatch");
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(path, "cannot open for write");
  os.write("DEPTHF32", 8);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(height));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(width));
  os.write(reinterpret_cast<const char*>(depth.data()),
           static_cast<std::streamsize>(depth.size() * 4));
  if (!os) fail(path, "write failed");
}

std::vector<float> read_depth(const std::string& path, std::size_t& height, std::size_t& width) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(path, "cannot open");
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, "DEPTHF32", 8) != 0) fail(path, "bad depth magic");
  height = get<std::uint32_t>(is);
  width = get<std::uint32_t>(is);
  std::vector<float> depth(height * width);
  is.read(reinterpret_cast<char*>(depth.data()), static_cast<std::streamsize>(depth.size() * 4));
  if (!is) fail(path, "truncated depth raster");
  return depth;
}

void export_obj(const std::string& path, const Tensor& vertices,
                const std::vector<std::array<std::size_t, 3>>& faces) {
  if (vertices.rank() != 2 || vertices.dim(1) != 3)
    throw std::invalid_argument("export_obj expects n x 3 vertices");
  std::ofstream os(path);
  if (!os) fail(path, "cannot open for write");
  os.precision(9);
  for (std::size_t i = 0; i < vertices.dim(0); ++i)
    os << "v " << vertices.at(i, 0) << " " << vertices.at(i, 1) << " " << vertices.at(i, 2)
       << "\n";
  for (const auto& f : faces) os << "f " << f[0] + 1 << " " << f[1] + 1 << " " << f[2] + 1 << "\n";
  if (!os) fail(path, "write failed");
}

void import_obj(const std::string& path, Tensor& vertices,
                std::vector<std::array<std::size_t, 3>>& faces) {
  std::ifstream is(path);
  if (!is) fail(path, "cannot open");
  std::vector<double> verts;
  faces.clear();
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "v") {
      double x, y, z;
      ls >> x >> y >> z;
      verts.push_back(x);
      verts.push_back(y);
      verts.push_back(z);
    } else if (tag == "f") {
      std::size_t a, b, c;
      ls >> a >> b >> c;
      faces.push_back({a - 1, b - 1, c - 1});
    }
  }
  const std::size_t n = verts.size() / 3;  // before the move below
  vertices = Tensor({n, 3}, std::move(verts));
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(path, "cannot open for write");
  os.write("ANIMERCK", 8);
  put<std::uint32_t>(os, kCheckpointVersion);
  const std::string meta = ck.meta.dump();
  put<std::uint64_t>(os, meta.size());
  os.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  std::vector<Blob> blobs;
  for (const auto& [name, t] : ck.tensors) blobs.push_back(Blob::from_tensor(name, t));
  append_blobs(os, blobs);
  if (!os) fail(path, "write failed");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(path, "cannot open");
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, "ANIMERCK", 8) != 0) fail(path, "bad checkpoint magic");
  const auto version = get<std::uint32_t>(is);
  if (version != kCheckpointVersion) fail(path, "unsupported checkpoint version");
  const auto meta_len = get<std::uint64_t>(is);
  std::string meta(meta_len, '\0');
  is.read(meta.data(), static_cast<std::streamsize>(meta_len));
  Checkpoint ck;
  ck.meta = nlohmann::json::parse(meta);
  while (is.peek() != std::char_traits<char>::eof()) {
    Blob b = read_blob(is);
    ck.tensors[b.name] = b.to_tensor();
  }
  return ck;
}

}  // namespace animer::io
