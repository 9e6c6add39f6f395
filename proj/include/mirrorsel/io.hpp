#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mirrorsel/datagen.hpp"
#include "mirrorsel/diag.hpp"
#include "mirrorsel/net.hpp"
#include "mirrorsel/select.hpp"

namespace mirrorsel::io {

/// Shortest decimal string that parses back to the same double; "inf",
/// "-inf" and "nan" for non-finite values.
std::string format_double(double v);
double parse_double(const std::string& s);

/// Comma-separated rows with a header line and LF endings.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  CsvTable& row(std::vector<std::string> cells);
  std::string str() const;
  void write(const std::filesystem::path& path) const;

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

/// Header-less numeric CSV as written by save_dataset.
Matrix read_matrix_csv(const std::filesystem::path& path);
void write_matrix_csv(const std::filesystem::path& path, const Matrix& m);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);
nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

struct DatasetManifest {
  std::size_t m = 0;
  std::size_t n = 0;
  std::size_t q_star = 0;
  std::string family;
  std::uint64_t seed = 0;
  Dgp dgp = Dgp::Regression51;
};

/// X.csv, y.csv, B.csv and manifest.json under `dir`.
void save_dataset(const std::filesystem::path& dir, const Dataset& ds, const std::string& family,
                  std::uint64_t seed);
std::pair<Dataset, DatasetManifest> load_dataset(const std::filesystem::path& dir);

/// manifest.json (shapes, spec, seed) plus one little-endian float64
/// row-major file per matrix: W1.bin, tail<k>_W.bin, tail<k>_b.bin.
void save_params(const std::filesystem::path& dir, const NetworkSpec& spec,
                 const NetworkParams& params, std::uint64_t seed);
std::pair<NetworkSpec, NetworkParams> load_params(const std::filesystem::path& dir);

nlohmann::json to_json(const NetworkSpec& spec);
NetworkSpec network_spec_from_json(const nlohmann::json& j, std::size_t n_in);

/// j, xi1, xi2, M, selected
CsvTable mirror_result_table(const MirrorResult& r);

/// standardized.csv, qq.csv, hist.csv
void write_normality_csvs(const std::filesystem::path& dir, const NormalityReport& r);

}  // namespace mirrorsel::io
