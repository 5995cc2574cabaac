#include "nnif/matrix_io.hpp"

#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "nnif/common.hpp"

namespace nnif {

namespace {
constexpr char kMagic[8] = {'N', 'N', 'I', 'F', 'M', 'A', 'T', '1'};
}

void write_matrix_bin(const Eigen::MatrixXd& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write matrix: " + path);
  out.write(kMagic, sizeof kMagic);
  const std::int64_t dims[2] = {m.rows(), m.cols()};
  out.write(reinterpret_cast<const char*>(dims), sizeof dims);
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
  out.write(reinterpret_cast<const char*>(rm.data()), static_cast<std::streamsize>(sizeof(double) * rm.size()));
}

Eigen::MatrixXd read_matrix_bin(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open matrix: " + path);
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw ConfigError("matrix " + path + ": bad header");
  std::int64_t dims[2];
  in.read(reinterpret_cast<char*>(dims), sizeof dims);
  if (!in || dims[0] < 0 || dims[1] < 0) throw ConfigError("matrix " + path + ": bad dimensions");
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(dims[0], dims[1]);
  in.read(reinterpret_cast<char*>(rm.data()), static_cast<std::streamsize>(sizeof(double) * rm.size()));
  if (!in) throw ConfigError("matrix " + path + ": truncated data");
  return rm;
}

void write_json(const nlohmann::json& j, const std::string& path, int indent) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write file: " + path);
  out << j.dump(indent) << '\n';
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open file: " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::string format_double(double x) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  if (ec != std::errc()) return "nan";
  return std::string(buf, ptr);
}

void write_csv(const std::string& path, const std::vector<std::string>& header, const Eigen::MatrixXd& rows,
               const std::string& comment) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write file: " + path);
  if (!comment.empty()) out << "# " << comment << '\n';
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << '\n';
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    for (Eigen::Index c = 0; c < rows.cols(); ++c) out << (c ? "," : "") << format_double(rows(r, c));
    out << '\n';
  }
}

}  // namespace nnif
