#include "tsa/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "tsa/error.hpp"

namespace tsa {

using nlohmann::json;

std::string to_string(DType dtype) { return dtype == DType::f32 ? "f32" : "f64"; }

DType parse_dtype(const std::string& name) {
  if (name == "f32") return DType::f32;
  if (name == "f64") return DType::f64;
  throw FormatError("unknown dtype '" + name + "'");
}

namespace {

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

template <typename T>
void write_le(std::ostream& out, const T* data, std::size_t count) {
  std::vector<T> buf(count);
  for (std::size_t k = 0; k < count; ++k) buf[k] = to_little(data[k]);
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(count * sizeof(T)));
}

template <typename T>
std::vector<T> read_le(std::istream& in, std::size_t count, const std::string& source) {
  std::vector<T> buf(count);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(count * sizeof(T)));
  const auto got = static_cast<std::size_t>(in.gcount());
  if (got != count * sizeof(T)) {
    throw FormatError(source + ": truncated blob, expected " + std::to_string(count * sizeof(T)) +
                      " bytes, got " + std::to_string(got));
  }
  for (T& v : buf) v = to_little(v);
  return buf;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return in;
}

std::string ft1_header(const Dims5& d, DType dtype) {
  std::ostringstream h;
  h << R"({"magic":"FT1","dims":[)" << d.n << ',' << d.t << ',' << d.h << ',' << d.w << ',' << d.c
    << R"(],"dtype":")" << to_string(dtype) << "\"}\n";
  return h.str();
}

}  // namespace

void write_ft1(std::ostream& out, const FeatureTensorXd& x, DType dtype) {
  out << ft1_header(x.dims(), dtype);
  const auto count = static_cast<std::size_t>(x.dims().size());
  if (dtype == DType::f64) {
    write_le(out, x.data().data(), count);
  } else {
    const MatrixXf narrow = x.data().cast<float>();
    write_le(out, narrow.data(), count);
  }
  if (!out) throw DataError("FT1 write failed");
}

void write_ft1(const std::filesystem::path& path, const FeatureTensorXd& x, DType dtype) {
  auto out = open_out(path);
  write_ft1(out, x, dtype);
}

void write_ft1(const std::filesystem::path& path, const FeatureTensorXf& x) {
  auto out = open_out(path);
  out << ft1_header(x.dims(), DType::f32);
  write_le(out, x.data().data(), static_cast<std::size_t>(x.dims().size()));
  if (!out) throw DataError(path.string() + ": FT1 write failed");
}

Ft1Contents read_ft1(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError(source + ": missing FT1 header line");
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    throw FormatError(source + ": FT1 header is not JSON: " + e.what());
  }
  if (!header.is_object() || header.value("magic", "") != "FT1") throw FormatError(source + ": bad FT1 magic");
  if (!header.contains("dims") || !header["dims"].is_array() || header["dims"].size() != 5) {
    throw FormatError(source + ": FT1 dims must be a 5-element array");
  }
  std::array<Index, 5> d{};
  for (std::size_t k = 0; k < 5; ++k) {
    const json& v = header["dims"][k];
    if (!v.is_number_integer() || v.get<std::int64_t>() < 1) {
      throw FormatError(source + ": FT1 dims must be positive integers");
    }
    d[k] = v.get<Index>();
  }
  if (!header.contains("dtype") || !header["dtype"].is_string()) throw FormatError(source + ": FT1 dtype missing");
  Ft1Contents result;
  result.dtype = parse_dtype(header["dtype"].get<std::string>());
  const Dims5 dims{d[0], d[1], d[2], d[3], d[4]};
  const auto count = static_cast<std::size_t>(dims.size());
  MatrixXd values(dims.positions(), dims.c);
  if (result.dtype == DType::f64) {
    const auto raw = read_le<double>(in, count, source);
    std::memcpy(values.data(), raw.data(), count * sizeof(double));
  } else {
    const auto raw = read_le<float>(in, count, source);
    for (std::size_t k = 0; k < count; ++k) values.data()[k] = static_cast<double>(raw[k]);
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError(source + ": trailing bytes after " + std::to_string(count) + " scalars");
  }
  if (!values.allFinite()) throw FormatError(source + ": tensor holds non-finite values");
  result.tensor = FeatureTensorXd(dims, std::move(values));
  return result;
}

Ft1Contents read_ft1_contents(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_ft1(in, path.string());
}

FeatureTensorXd read_ft1(const std::filesystem::path& path) { return read_ft1_contents(path).tensor; }

std::vector<TrackBox> read_boxes(std::istream& in, const std::string& source) {
  std::vector<TrackBox> boxes;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw FormatError(where + ": malformed JSON: " + e.what());
    }
    if (!rec.is_object() || !rec.contains("frame") || !rec["frame"].is_number_integer()) {
      throw FormatError(where + ": expected integer field 'frame'");
    }
    if (!rec.contains("pts") || !rec["pts"].is_array() || rec["pts"].size() != 4) {
      throw FormatError(where + ": 'pts' must hold 4 points");
    }
    TrackBox box;
    box.frame = rec["frame"].get<std::int64_t>();
    if (box.frame < 0) throw DataError(where + ": negative frame index");
    for (std::size_t k = 0; k < 4; ++k) {
      const json& p = rec["pts"][k];
      if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number()) {
        throw FormatError(where + ": point " + std::to_string(k) + " must be [x, y]");
      }
      box.pts[k] = Point2(p[0].get<double>(), p[1].get<double>());
    }
    if (!boxes.empty() && box.frame <= boxes.back().frame) {
      throw DataError(where + ": frames must be strictly ascending (" + std::to_string(box.frame) + " after " +
                      std::to_string(boxes.back().frame) + ")");
    }
    boxes.push_back(box);
  }
  return boxes;
}

std::vector<TrackBox> read_boxes(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_boxes(in, path.string());
}

void write_boxes(std::ostream& out, const std::vector<TrackBox>& boxes) {
  for (const TrackBox& b : boxes) {
    json pts = json::array();
    for (const Point2& p : b.pts) pts.push_back({p.x(), p.y()});
    json rec;
    rec["frame"] = b.frame;
    rec["pts"] = std::move(pts);
    out << rec.dump() << '\n';
  }
}

void write_boxes(const std::filesystem::path& path, const std::vector<TrackBox>& boxes) {
  auto out = open_out(path);
  write_boxes(out, boxes);
}

json read_json_file(const std::filesystem::path& path) {
  auto in = open_in(path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const json& doc) {
  auto out = open_out(path);
  out << doc.dump(2) << '\n';
  if (!out) throw DataError("write failed: " + path.string());
}

void write_le_doubles(std::ostream& out, const double* data, std::size_t count) { write_le(out, data, count); }

void read_le_doubles(std::istream& in, double* data, std::size_t count, const std::string& source) {
  const auto raw = read_le<double>(in, count, source);
  std::memcpy(data, raw.data(), count * sizeof(double));
}

}  // namespace tsa
