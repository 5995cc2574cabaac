#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace nnif {

/// "NNIFMAT1", int64 rows, int64 cols, then row-major float64 values.
void write_matrix_bin(const Eigen::MatrixXd& m, const std::string& path);
Eigen::MatrixXd read_matrix_bin(const std::string& path);

void write_json(const nlohmann::json& j, const std::string& path, int indent = 2);
nlohmann::json read_json(const std::string& path);

/// CSV with a header row; values printed with round-trip precision.
void write_csv(const std::string& path, const std::vector<std::string>& header, const Eigen::MatrixXd& rows,
               const std::string& comment = "");

/// Shortest round-trip decimal representation of a double.
std::string format_double(double x);

}  // namespace nnif
