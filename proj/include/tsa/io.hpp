#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "tsa/geometry.hpp"
#include "tsa/tensor.hpp"

namespace tsa {

enum class DType { f32, f64 };

std::string to_string(DType dtype);
DType parse_dtype(const std::string& name);

// FT1 tensor files: one JSON header line, then raw little-endian scalars in
// (n,t,i,j,c) order.
void write_ft1(std::ostream& out, const FeatureTensorXd& x, DType dtype = DType::f64);
void write_ft1(const std::filesystem::path& path, const FeatureTensorXd& x, DType dtype = DType::f64);
void write_ft1(const std::filesystem::path& path, const FeatureTensorXf& x);

struct Ft1Contents {
  DType dtype = DType::f64;
  FeatureTensorXd tensor;
};
Ft1Contents read_ft1(std::istream& in, const std::string& source = "<stream>");
FeatureTensorXd read_ft1(const std::filesystem::path& path);
Ft1Contents read_ft1_contents(const std::filesystem::path& path);

// boxes.jsonl: {"frame": l, "pts": [[x,y] x4]} per line, frames strictly ascending.
std::vector<TrackBox> read_boxes(std::istream& in, const std::string& source = "<stream>");
std::vector<TrackBox> read_boxes(const std::filesystem::path& path);
void write_boxes(std::ostream& out, const std::vector<TrackBox>& boxes);
void write_boxes(const std::filesystem::path& path, const std::vector<TrackBox>& boxes);

nlohmann::json read_json_file(const std::filesystem::path& path);
/// Writes pretty-printed JSON followed by a newline.
void write_json_file(const std::filesystem::path& path, const nlohmann::json& doc);

/// Raw little-endian scalar blobs, used by checkpoints.
void write_le_doubles(std::ostream& out, const double* data, std::size_t count);
void read_le_doubles(std::istream& in, double* data, std::size_t count, const std::string& source);

}  // namespace tsa
