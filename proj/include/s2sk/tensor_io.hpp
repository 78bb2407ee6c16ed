#pragma once

#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "s2sk/grid.hpp"
#include "s2sk/tensor.hpp"

namespace s2sk {

// Binary layout, little-endian throughout:
//   "S2SK" | u16 version | u8 dtype | u8 ndim | ndim x u64 dims | payload
// The payload is row-major with product(dims) elements. Metadata lives in a
// JSON sidecar next to the file, "<path>.json".
enum class DType : std::uint8_t { f32 = 1, f64 = 2 };

inline constexpr std::uint16_t kTensorFileVersion = 1;

std::size_t dtype_size(DType t);
std::string_view to_string(DType t);
DType parse_dtype(std::string_view s);
std::size_t header_bytes(std::size_t ndim);
std::string sidecar_path(const std::string& path);

struct TensorFile {
  Tensor data;
  DType dtype = DType::f64;
  nlohmann::json sidecar;  // null when no sidecar exists
};

// Writes the tensor and, unless `sidecar` is null, its sidecar.
void write_tensor(const std::string& path, const Tensor& t, DType dtype = DType::f64,
                  const nlohmann::json& sidecar = nullptr);
// Validates header and size before reading any payload.
TensorFile read_tensor(const std::string& path);

// Streams a tensor to disk one leading-axis slab at a time.
class TensorWriter {
 public:
  TensorWriter(const std::string& path, DType dtype, Shape shape);
  void append(std::span<const double> slab);
  // Checks that every slab was written, then writes the sidecar.
  void finish(const nlohmann::json& sidecar = nullptr);

 private:
  std::string path_;
  DType dtype_;
  Shape shape_;
  std::ofstream out_;
  std::size_t slabs_written_ = 0;
  bool finished_ = false;
};

// Reads leading-axis slabs on demand.
class TensorReader {
 public:
  explicit TensorReader(const std::string& path);
  const Shape& shape() const { return shape_; }
  DType dtype() const { return dtype_; }
  const nlohmann::json& sidecar() const { return sidecar_; }
  std::size_t slab_count() const { return shape_.empty() ? 1 : shape_[0]; }
  std::vector<double> read_slab(std::size_t k);

 private:
  std::string path_;
  std::ifstream in_;
  Shape shape_;
  DType dtype_ = DType::f64;
  std::size_t data_offset_ = 0;
  nlohmann::json sidecar_;
};

nlohmann::json grid_to_json(const GridSpec& g);
GridSpec grid_from_json(const nlohmann::json& j);
nlohmann::json channels_to_json(const std::vector<Channel>& channels);

// A daily series of FieldSets as one [time, channel, n_lat, n_lon] file.
// Channel masks are recovered from the NaN pattern of the first time step.
void write_series(const std::string& path, std::span<const FieldSet> series, DType dtype = DType::f32,
                  const nlohmann::json& extra = nlohmann::json::object());
std::vector<FieldSet> read_series(const std::string& path);

// Reads one time step of a series file at a time.
class SeriesReader {
 public:
  explicit SeriesReader(const std::string& path);
  std::size_t size() const { return dates_.size(); }
  const GridSpec& grid() const { return grid_; }
  const std::vector<Channel>& channels() const { return channels_; }
  const std::vector<Date>& dates() const { return dates_; }
  const nlohmann::json& sidecar() const { return reader_.sidecar(); }
  FieldSet read(std::size_t t);

 private:
  std::string path_;
  TensorReader reader_;
  GridSpec grid_;
  std::vector<Channel> channels_;
  std::vector<Date> dates_;
};

// Streaming variant of write_series for long series.
class SeriesWriter {
 public:
  SeriesWriter(const std::string& path, std::size_t length, DType dtype = DType::f32);
  void append(const FieldSet& x);
  void finish(const nlohmann::json& extra = nlohmann::json::object());

 private:
  std::string path_;
  std::size_t length_;
  DType dtype_;
  std::unique_ptr<TensorWriter> writer_;
  GridSpec grid_;
  std::vector<Channel> channels_;
  std::vector<std::string> dates_;
};

void write_climatology(const std::string& path, const Climatology& clim, DType dtype = DType::f32);
Climatology read_climatology(const std::string& path);

}  // namespace s2sk
