#include "mirrorsel/io.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mirrorsel/errors.hpp"

namespace mirrorsel::io {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return {buf, res.ptr};
}

double parse_double(const std::string& s) {
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ConfigError("not a number: '" + s + "'");
  return v;
}

CsvTable& CsvTable::row(std::vector<std::string> cells) {
  if (cells.size() != header_.size())
    throw InvalidArgument("CsvTable: row has " + std::to_string(cells.size()) + " cells, header " +
                          std::to_string(header_.size()));
  rows_.push_back(std::move(cells));
  return *this;
}

std::string CsvTable::str() const {
  std::string out;
  auto emit = [&](const std::vector<std::string>& cells) {
    for (std::size_t k = 0; k < cells.size(); ++k) {
      if (k) out.push_back(',');
      out += cells[k];
    }
    out.push_back('\n');
  };
  emit(header_);
  for (const auto& r : rows_) emit(r);
  return out;
}

void CsvTable::write(const fs::path& path) const { write_text(path, str()); }

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open '" + path.string() + "' for writing");
  f << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot read '" + path.string() + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

json read_json(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw ConfigError("malformed JSON in '" + path.string() + "': " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

void write_matrix_csv(const fs::path& path, const Matrix& m) {
  std::string out;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out.push_back(',');
      out += format_double(m(i, j));
    }
    out.push_back('\n');
  }
  write_text(path, out);
}

Matrix read_matrix_csv(const fs::path& path) {
  const std::string text = read_text(path);
  std::vector<std::vector<double>> rows;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    std::vector<double> r;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      r.push_back(parse_double(line.substr(start, comma - start)));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (!rows.empty() && r.size() != rows.front().size())
      throw ConfigError("ragged CSV '" + path.string() + "'");
    rows.push_back(std::move(r));
  }
  Matrix m(static_cast<Eigen::Index>(rows.size()),
           rows.empty() ? 0 : static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return m;
}

void save_dataset(const fs::path& dir, const Dataset& ds, const std::string& family,
                  std::uint64_t seed) {
  fs::create_directories(dir);
  write_matrix_csv(dir / "X.csv", ds.X);
  write_matrix_csv(dir / "y.csv", ds.y);
  write_matrix_csv(dir / "B.csv", ds.signal.B);
  write_json(dir / "manifest.json", {{"m", ds.m()},
                                     {"n", ds.n()},
                                     {"q_star", ds.signal.q_star()},
                                     {"family", family},
                                     {"seed", seed},
                                     {"dgp", to_string(ds.dgp)}});
}

std::pair<Dataset, DatasetManifest> load_dataset(const fs::path& dir) {
  const json j = read_json(dir / "manifest.json");
  DatasetManifest man;
  try {
    man.m = j.at("m").get<std::size_t>();
    man.n = j.at("n").get<std::size_t>();
    man.q_star = j.at("q_star").get<std::size_t>();
    man.family = j.at("family").get<std::string>();
    man.seed = j.at("seed").get<std::uint64_t>();
    man.dgp = dgp_from_string(j.at("dgp").get<std::string>());
  } catch (const json::exception& e) {
    throw ConfigError("bad dataset manifest in '" + dir.string() + "': " + e.what());
  }
  Dataset ds;
  ds.X = read_matrix_csv(dir / "X.csv");
  const Matrix y = read_matrix_csv(dir / "y.csv");
  ds.signal = SignalMatrix::from_matrix(read_matrix_csv(dir / "B.csv"));
  ds.dgp = man.dgp;
  if (static_cast<std::size_t>(ds.X.rows()) != man.m || static_cast<std::size_t>(ds.X.cols()) != man.n ||
      static_cast<std::size_t>(y.rows()) != man.m || y.cols() != 1 ||
      static_cast<std::size_t>(ds.signal.B.rows()) != man.n ||
      static_cast<std::size_t>(ds.signal.B.cols()) != man.q_star)
    throw ConfigError("dataset files in '" + dir.string() + "' disagree with manifest shapes");
  ds.y = y.col(0);
  return {std::move(ds), man};
}

namespace {

void write_f64(const fs::path& path, const Matrix& m) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open '" + path.string() + "' for writing");
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      auto bits = std::bit_cast<std::uint64_t>(m(i, j));
      if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
      f.write(reinterpret_cast<const char*>(&bits), sizeof(bits));
    }
  }
}

Matrix read_f64(const fs::path& path, Eigen::Index rows, Eigen::Index cols) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot read '" + path.string() + "'");
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      std::uint64_t bits = 0;
      if (!f.read(reinterpret_cast<char*>(&bits), sizeof(bits)))
        throw ConfigError("truncated parameter file '" + path.string() + "'");
      if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
      m(i, j) = std::bit_cast<double>(bits);
    }
  }
  if (f.peek() != std::char_traits<char>::eof())
    throw ConfigError("trailing bytes in parameter file '" + path.string() + "'");
  return m;
}

}  // namespace

json to_json(const NetworkSpec& spec) {
  return {{"n_in", spec.n_in},
          {"first_width", spec.first_width},
          {"tail_widths", spec.tail_widths},
          {"out_width", spec.out_width},
          {"activation", "ReLU"},
          {"dropout_rate", spec.dropout_rate},
          {"init", to_string(spec.init)}};
}

NetworkSpec network_spec_from_json(const json& j, std::size_t n_in) {
  NetworkSpec s;
  try {
    for (const auto& [key, _] : j.items()) {
      static const char* kKnown[] = {"n_in", "first_width", "tail_widths", "out_width",
                                     "activation", "dropout_rate", "init"};
      if (std::find_if(std::begin(kKnown), std::end(kKnown),
                       [&](const char* k) { return key == k; }) == std::end(kKnown))
        throw ConfigError("unknown netspec field '" + key + "'");
    }
    s.n_in = j.value("n_in", n_in);
    s.first_width = j.at("first_width").get<std::size_t>();
    s.tail_widths = j.value("tail_widths", std::vector<std::size_t>{});
    s.out_width = j.value("out_width", std::size_t{1});
    if (j.value("activation", std::string("ReLU")) != "ReLU")
      throw ConfigError("only ReLU activation is supported");
    s.dropout_rate = j.value("dropout_rate", 0.0);
    s.init = init_scheme_from_string(j.value("init", std::string("HeNormal")));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad netspec: ") + e.what());
  }
  return s;
}

void save_params(const fs::path& dir, const NetworkSpec& spec, const NetworkParams& params,
                 std::uint64_t seed) {
  fs::create_directories(dir);
  json shapes = json::array();
  auto record = [&](const std::string& file, const Matrix& m) {
    write_f64(dir / file, m);
    shapes.push_back({{"file", file}, {"rows", m.rows()}, {"cols", m.cols()}});
  };
  record("W1.bin", params.W1);
  for (std::size_t l = 0; l < params.tail.size(); ++l) {
    record("tail" + std::to_string(l) + "_W.bin", params.tail[l].W);
    record("tail" + std::to_string(l) + "_b.bin", params.tail[l].b);
  }
  write_json(dir / "manifest.json", {{"spec", to_json(spec)},
                                     {"seed", seed},
                                     {"dtype", "float64"},
                                     {"byte_order", "little"},
                                     {"layout", "row-major"},
                                     {"matrices", shapes}});
}

std::pair<NetworkSpec, NetworkParams> load_params(const fs::path& dir) {
  const json j = read_json(dir / "manifest.json");
  NetworkSpec spec = network_spec_from_json(j.at("spec"), 0);
  spec.validate();
  NetworkParams params;
  auto load = [&](std::size_t k) {
    const auto& entry = j.at("matrices").at(k);
    return read_f64(dir / entry.at("file").get<std::string>(), entry.at("rows").get<Eigen::Index>(),
                    entry.at("cols").get<Eigen::Index>());
  };
  try {
    params.W1 = load(0);
    for (std::size_t l = 0; l < spec.tail_depth(); ++l) {
      Matrix w = load(1 + 2 * l);
      Matrix b = load(2 + 2 * l);
      params.tail.push_back({std::move(w), b.col(0)});
    }
  } catch (const json::exception& e) {
    throw ConfigError("bad parameter manifest in '" + dir.string() + "': " + e.what());
  }
  bool ok = params.W1.rows() == static_cast<Eigen::Index>(spec.n_in) &&
            params.W1.cols() == static_cast<Eigen::Index>(spec.first_width);
  std::size_t in = spec.first_width;
  for (std::size_t l = 0; ok && l < params.tail.size(); ++l) {
    const std::size_t out = l < spec.tail_widths.size() ? spec.tail_widths[l] : spec.out_width;
    ok = params.tail[l].W.rows() == static_cast<Eigen::Index>(in) &&
         params.tail[l].W.cols() == static_cast<Eigen::Index>(out) &&
         params.tail[l].b.size() == static_cast<Eigen::Index>(out);
    in = out;
  }
  if (!ok) throw ConfigError("parameter shapes in '" + dir.string() + "' disagree with the spec");
  return {spec, std::move(params)};
}

CsvTable mirror_result_table(const MirrorResult& r) {
  CsvTable t({"j", "xi1", "xi2", "M", "selected"});
  std::size_t next = 0;
  for (Eigen::Index j = 0; j < r.M.size(); ++j) {
    const bool sel = next < r.selected.size() && r.selected[next] == static_cast<std::size_t>(j);
    if (sel) ++next;
    t.row({std::to_string(j), format_double(r.xi1(j)), format_double(r.xi2(j)),
           format_double(r.M(j)), sel ? "1" : "0"});
  }
  return t;
}

void write_normality_csvs(const fs::path& dir, const NormalityReport& r) {
  CsvTable standardized({"value"});
  for (Eigen::Index k = 0; k < r.standardized.size(); ++k)
    standardized.row({format_double(r.standardized(k))});
  standardized.write(dir / "standardized.csv");
  CsvTable qq({"theoretical", "empirical"});
  for (const auto& p : r.qq_points) qq.row({format_double(p.theoretical), format_double(p.empirical)});
  qq.write(dir / "qq.csv");
  CsvTable hist({"left", "width", "count"});
  for (const auto& b : r.hist)
    hist.row({format_double(b.left), format_double(b.width), std::to_string(b.count)});
  hist.write(dir / "hist.csv");
}

}  // namespace mirrorsel::io
