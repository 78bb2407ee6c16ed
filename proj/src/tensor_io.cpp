#include "s2sk/tensor_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <memory>

#include "s2sk/error.hpp"

namespace s2sk {

static_assert(std::endian::native == std::endian::little, "tensor files assume a little-endian host");

namespace {

constexpr char kMagic[4] = {'S', '2', 'S', 'K'};

void write_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path);
}

nlohmann::json read_json_if_exists(const std::string& path) {
  if (!std::filesystem::exists(path)) return nullptr;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed sidecar " + path + ": " + e.what());
  }
}

void write_header(std::ostream& out, DType dtype, const Shape& shape) {
  if (shape.size() > 255) throw ValidationError("tensor rank above 255");
  out.write(kMagic, 4);
  const std::uint16_t version = kTensorFileVersion;
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  const auto dt = static_cast<std::uint8_t>(dtype);
  const auto nd = static_cast<std::uint8_t>(shape.size());
  out.write(reinterpret_cast<const char*>(&dt), 1);
  out.write(reinterpret_cast<const char*>(&nd), 1);
  for (std::size_t d : shape) {
    const auto v = static_cast<std::uint64_t>(d);
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
}

void encode(std::span<const double> src, DType dtype, std::vector<char>& buf) {
  buf.resize(src.size() * dtype_size(dtype));
  if (dtype == DType::f64) {
    std::memcpy(buf.data(), src.data(), buf.size());
  } else {
    for (std::size_t i = 0; i < src.size(); ++i) {
      const auto f = static_cast<float>(src[i]);
      std::memcpy(buf.data() + i * 4, &f, 4);
    }
  }
}

void decode(const char* src, std::size_t n, DType dtype, double* dst) {
  if (dtype == DType::f64) {
    std::memcpy(dst, src, n * 8);
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      float f;
      std::memcpy(&f, src + i * 4, 4);
      dst[i] = static_cast<double>(f);
    }
  }
}

struct Header {
  DType dtype;
  Shape shape;
  std::size_t bytes;
};

Header read_header(std::istream& in, const std::string& path, std::uintmax_t file_size) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw IoError(path + ": not a tensor file (bad magic)");
  std::uint16_t version = 0;
  std::uint8_t dt = 0, nd = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&dt), 1);
  in.read(reinterpret_cast<char*>(&nd), 1);
  if (!in) throw IoError(path + ": truncated header");
  if (version != kTensorFileVersion)
    throw IoError(path + ": unsupported tensor file version " + std::to_string(version));
  if (dt != 1 && dt != 2) throw IoError(path + ": unknown dtype code " + std::to_string(dt));
  Header h{static_cast<DType>(dt), Shape(nd), header_bytes(nd)};
  for (auto& d : h.shape) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    d = static_cast<std::size_t>(v);
  }
  if (!in) throw IoError(path + ": truncated header");
  const std::uintmax_t expected = h.bytes + element_count(h.shape) * dtype_size(h.dtype);
  if (file_size != expected)
    throw IoError(path + ": payload size mismatch, expected " + std::to_string(expected) + " bytes, found " +
                  std::to_string(file_size));
  return h;
}

std::uintmax_t file_size_of(const std::string& path) {
  std::error_code ec;
  const auto size = std::filesystem::file_size(path, ec);
  if (ec) throw IoError("cannot stat " + path + ": " + ec.message());
  return size;
}

std::vector<Channel> channels_from_json(const nlohmann::json& j) {
  std::vector<Channel> out;
  for (const auto& c : j) out.push_back({c.at("name").get<std::string>(), parse_sphere(c.at("sphere").get<std::string>()), nullptr});
  return out;
}

// Masks from the NaN pattern of `slab` ([channel, cells]) for channels the
// sidecar marks as masked. Channels with identical patterns share a mask.
void attach_masks(std::vector<Channel>& channels, const nlohmann::json& meta, std::span<const double> slab,
                  std::size_t cells) {
  std::vector<std::shared_ptr<const Mask>> seen;
  for (std::size_t c = 0; c < channels.size(); ++c) {
    if (!meta.at(c).value("masked", false)) continue;
    Mask m(cells);
    for (std::size_t k = 0; k < cells; ++k) m[k] = std::isnan(slab[c * cells + k]) ? 0 : 1;
    std::shared_ptr<const Mask> ptr;
    for (const auto& s : seen)
      if (*s == m) ptr = s;
    if (!ptr) {
      ptr = std::make_shared<const Mask>(std::move(m));
      seen.push_back(ptr);
    }
    channels[c].valid = ptr;
  }
}

nlohmann::json series_sidecar(const GridSpec& grid, const std::vector<Channel>& channels,
                              const std::vector<std::string>& dates, const nlohmann::json& extra) {
  nlohmann::json j = extra.is_object() ? extra : nlohmann::json::object();
  j["kind"] = j.value("kind", std::string("series"));
  j["axes"] = {"time", "channel", "lat", "lon"};
  j["channel_axis"] = 1;
  j["grid"] = grid_to_json(grid);
  j["channels"] = channels_to_json(channels);
  j["dates"] = dates;
  return j;
}

}  // namespace

std::size_t dtype_size(DType t) { return t == DType::f32 ? 4 : 8; }
std::string_view to_string(DType t) { return t == DType::f32 ? "f32" : "f64"; }

DType parse_dtype(std::string_view s) {
  if (s == "f32") return DType::f32;
  if (s == "f64") return DType::f64;
  throw ValidationError("unknown dtype '" + std::string(s) + "' (expected f32 or f64)");
}

std::size_t header_bytes(std::size_t ndim) { return 4 + 2 + 1 + 1 + 8 * ndim; }
std::string sidecar_path(const std::string& path) { return path + ".json"; }

void write_tensor(const std::string& path, const Tensor& t, DType dtype, const nlohmann::json& sidecar) {
  TensorWriter w(path, dtype, t.shape());
  if (t.rank() == 0) {
    w.append(t.values());
  } else {
    for (std::size_t k = 0; k < t.dim(0); ++k) w.append(t.slab(k));
  }
  w.finish(sidecar);
}

TensorFile read_tensor(const std::string& path) {
  TensorReader r(path);
  TensorFile f;
  f.dtype = r.dtype();
  f.sidecar = r.sidecar();
  std::vector<double> data;
  data.reserve(element_count(r.shape()));
  for (std::size_t k = 0; k < r.slab_count(); ++k) {
    const auto s = r.read_slab(k);
    data.insert(data.end(), s.begin(), s.end());
  }
  f.data = Tensor(r.shape(), std::move(data));
  return f;
}

TensorWriter::TensorWriter(const std::string& path, DType dtype, Shape shape)
    : path_(path), dtype_(dtype), shape_(std::move(shape)) {
  out_.open(path_, std::ios::binary | std::ios::trunc);
  if (!out_) throw IoError("cannot open " + path_ + " for writing");
  write_header(out_, dtype_, shape_);
}

void TensorWriter::append(std::span<const double> slab) {
  const std::size_t expected = shape_.empty() ? 1 : element_count(shape_) / std::max<std::size_t>(shape_[0], 1);
  const std::size_t total = shape_.empty() ? 1 : shape_[0];
  if (slabs_written_ >= total) throw ValidationError(path_ + ": more slabs than the declared shape");
  if (slab.size() != expected)
    throw ValidationError(path_ + ": slab has " + std::to_string(slab.size()) + " values, expected " +
                          std::to_string(expected));
  std::vector<char> buf;
  encode(slab, dtype_, buf);
  out_.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out_) throw IoError("failed writing " + path_);
  ++slabs_written_;
}

void TensorWriter::finish(const nlohmann::json& sidecar) {
  if (finished_) return;
  const std::size_t total = shape_.empty() ? 1 : shape_[0];
  if (slabs_written_ != total)
    throw ValidationError(path_ + ": wrote " + std::to_string(slabs_written_) + " of " + std::to_string(total) +
                          " slabs");
  out_.close();
  if (!out_) throw IoError("failed closing " + path_);
  if (!sidecar.is_null()) write_json(sidecar_path(path_), sidecar);
  finished_ = true;
}

TensorReader::TensorReader(const std::string& path) : path_(path) {
  const auto size = file_size_of(path_);
  in_.open(path_, std::ios::binary);
  if (!in_) throw IoError("cannot open " + path_);
  const Header h = read_header(in_, path_, size);
  shape_ = h.shape;
  dtype_ = h.dtype;
  data_offset_ = h.bytes;
  sidecar_ = read_json_if_exists(sidecar_path(path_));
}

std::vector<double> TensorReader::read_slab(std::size_t k) {
  if (k >= slab_count()) throw ValidationError(path_ + ": slab index out of range");
  const std::size_t per = shape_.empty() ? 1 : element_count(shape_) / std::max<std::size_t>(shape_[0], 1);
  const std::size_t bytes = per * dtype_size(dtype_);
  std::vector<char> buf(bytes);
  in_.seekg(static_cast<std::streamoff>(data_offset_ + k * bytes));
  in_.read(buf.data(), static_cast<std::streamsize>(bytes));
  if (!in_) throw IoError(path_ + ": short read of slab " + std::to_string(k));
  std::vector<double> out(per);
  decode(buf.data(), per, dtype_, out.data());
  return out;
}

nlohmann::json grid_to_json(const GridSpec& g) {
  return {{"n_lat", g.n_lat},
          {"n_lon", g.n_lon},
          {"lat_start_deg", g.lat_start_deg},
          {"lat_step_deg", g.lat_step_deg},
          {"lon_start_deg", g.lon_start_deg},
          {"lon_step_deg", g.lon_step_deg}};
}

GridSpec grid_from_json(const nlohmann::json& j) {
  try {
    GridSpec g;
    g.n_lat = j.at("n_lat").get<std::size_t>();
    g.n_lon = j.at("n_lon").get<std::size_t>();
    g.lat_start_deg = j.at("lat_start_deg").get<double>();
    g.lat_step_deg = j.at("lat_step_deg").get<double>();
    g.lon_start_deg = j.at("lon_start_deg").get<double>();
    g.lon_step_deg = j.at("lon_step_deg").get<double>();
    g.validate();
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("grid metadata: ") + e.what());
  }
}

nlohmann::json channels_to_json(const std::vector<Channel>& channels) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& c : channels)
    arr.push_back({{"name", c.name}, {"sphere", to_string(c.sphere)}, {"masked", c.masked()}});
  return arr;
}

void write_series(const std::string& path, std::span<const FieldSet> series, DType dtype,
                  const nlohmann::json& extra) {
  if (series.empty()) throw ValidationError("cannot write an empty series");
  SeriesWriter w(path, series.size(), dtype);
  for (const auto& x : series) w.append(x);
  w.finish(extra);
}

std::vector<FieldSet> read_series(const std::string& path) {
  SeriesReader r(path);
  std::vector<FieldSet> out;
  out.reserve(r.size());
  for (std::size_t t = 0; t < r.size(); ++t) out.push_back(r.read(t));
  return out;
}

SeriesReader::SeriesReader(const std::string& path) : path_(path), reader_(path) {
  const auto& meta = reader_.sidecar();
  if (meta.is_null()) throw IoError(path + ": missing sidecar " + sidecar_path(path));
  const Shape& shape = reader_.shape();
  if (shape.size() != 4) throw ValidationError(path + ": series must be rank 4, got " + shape_string(shape));
  try {
    grid_ = grid_from_json(meta.at("grid"));
    channels_ = channels_from_json(meta.at("channels"));
    for (const auto& d : meta.at("dates")) dates_.push_back(parse_date(d.get<std::string>()));
    if (channels_.size() != shape[1])
      throw ValidationError(path + ": sidecar lists " + std::to_string(channels_.size()) + " channels, tensor has " +
                            std::to_string(shape[1]));
    if (dates_.size() != shape[0]) throw ValidationError(path + ": sidecar date count does not match");
    if (shape[2] != grid_.n_lat || shape[3] != grid_.n_lon)
      throw ValidationError(path + ": tensor shape does not match the sidecar grid");
    if (shape[0] > 0) attach_masks(channels_, meta.at("channels"), reader_.read_slab(0), grid_.cells());
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path + ": malformed sidecar: " + e.what());
  }
}

FieldSet SeriesReader::read(std::size_t t) {
  if (t >= size()) throw ValidationError(path_ + ": time index " + std::to_string(t) + " out of range");
  return FieldSet{grid_, channels_, Tensor({channels_.size(), grid_.n_lat, grid_.n_lon}, reader_.read_slab(t)),
                  dates_[t]};
}

SeriesWriter::SeriesWriter(const std::string& path, std::size_t length, DType dtype)
    : path_(path), length_(length), dtype_(dtype) {
  if (length_ == 0) throw ValidationError("cannot write an empty series");
}

void SeriesWriter::append(const FieldSet& x) {
  if (!writer_) {
    grid_ = x.grid;
    channels_ = x.channels;
    writer_ = std::make_unique<TensorWriter>(path_, dtype_, Shape{length_, channels_.size(), grid_.n_lat, grid_.n_lon});
  } else {
    if (x.grid != grid_ || x.channels.size() != channels_.size())
      throw ValidationError("series members differ in grid or channel count");
    for (std::size_t c = 0; c < channels_.size(); ++c)
      if (!x.channels[c].same_identity(channels_[c])) throw ValidationError("series members differ in channels");
  }
  writer_->append(x.values.values());
  dates_.push_back(format_date(x.valid_time));
}

void SeriesWriter::finish(const nlohmann::json& extra) {
  if (!writer_) throw ValidationError("cannot write an empty series");
  writer_->finish(series_sidecar(grid_, channels_, dates_, extra));
}

void write_climatology(const std::string& path, const Climatology& clim, DType dtype) {
  nlohmann::json j;
  j["kind"] = "climatology";
  j["axes"] = {"calendar_slot", "channel", "lat", "lon"};
  j["channel_axis"] = 1;
  j["grid"] = grid_to_json(clim.grid);
  j["channels"] = channels_to_json(clim.channels);
  j["start_year"] = clim.start_year;
  j["end_year"] = clim.end_year;
  j["window_halfwidth_days"] = clim.window_halfwidth_days;
  j["calendar"] = "366-slot circular; slot 59 is Feb 29 and is skipped in non-leap years";
  write_tensor(path, clim.mean, dtype, j);
}

Climatology read_climatology(const std::string& path) {
  TensorFile f = read_tensor(path);
  if (f.sidecar.is_null() || f.sidecar.value("kind", "") != "climatology")
    throw ValidationError(path + ": not a climatology file");
  try {
    Climatology c;
    c.grid = grid_from_json(f.sidecar.at("grid"));
    c.channels = channels_from_json(f.sidecar.at("channels"));
    const Shape want{static_cast<std::size_t>(kCalendarSlots), c.channels.size(), c.grid.n_lat, c.grid.n_lon};
    if (f.data.shape() != want)
      throw ValidationError(path + ": climatology shape " + shape_string(f.data.shape()) + ", expected " +
                            shape_string(want));
    attach_masks(c.channels, f.sidecar.at("channels"), f.data.slab(0), c.grid.cells());
    c.start_year = f.sidecar.at("start_year").get<int>();
    c.end_year = f.sidecar.at("end_year").get<int>();
    c.window_halfwidth_days = f.sidecar.at("window_halfwidth_days").get<int>();
    c.mean = std::move(f.data);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path + ": malformed sidecar: " + e.what());
  }
}

}  // namespace s2sk
