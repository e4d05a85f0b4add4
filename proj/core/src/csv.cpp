#include "gmflow/csv.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <system_error>

#include "gmflow/errors.hpp"

namespace gmflow {
namespace {

std::string quote(const std::string& cell) {
  if (cell.find_first_of(",\"\n\r") == std::string::npos) return cell;
  std::string out = "\"";
  for (char c : cell) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  cells.push_back(cur);
  return cells;
}

bool parse_number(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size();
}

}  // namespace

std::size_t Column::size() const {
  return std::visit([](const auto& v) { return v.size(); }, values);
}

std::string format_csv(const Series& series) {
  if (series.empty()) return "\n";
  const std::size_t rows = series.front().size();
  for (const auto& col : series)
    if (col.size() != rows)
      throw ValidationError("series", "column '" + col.name + "' has " + std::to_string(col.size()) +
                                          " rows, expected " + std::to_string(rows));

  std::string out;
  for (std::size_t c = 0; c < series.size(); ++c) {
    if (c) out += ',';
    out += quote(series[c].name);
  }
  out += '\n';
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < series.size(); ++c) {
      if (c) out += ',';
      std::visit(
          [&](const auto& v) {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, std::vector<double>>)
              out += format_number(v[r]);
            else
              out += quote(v[r]);
          },
          series[c].values);
    }
    out += '\n';
  }
  return out;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  const auto parent = path.parent_path();
  std::error_code ec;
  if (!parent.empty()) std::filesystem::create_directories(parent, ec);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + tmp.string());
    f << content;
    if (!f.flush()) throw std::runtime_error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw std::runtime_error("cannot rename " + tmp.string() + ": " + ec.message());
}

void emit_csv(const Series& series, const std::filesystem::path& path) {
  write_file_atomic(path, format_csv(series));
}

Series read_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  Series series;
  if (!std::getline(f, line) || line.empty()) return series;
  std::vector<std::vector<std::string>> cells;
  for (const auto& name : split_line(line)) series.push_back({name, std::vector<double>{}});
  cells.resize(series.size());
  while (std::getline(f, line)) {
    const auto row = split_line(line);
    for (std::size_t c = 0; c < series.size() && c < row.size(); ++c) cells[c].push_back(row[c]);
  }
  for (std::size_t c = 0; c < series.size(); ++c) {
    std::vector<double> nums;
    bool numeric = true;
    for (const auto& s : cells[c]) {
      double v = 0.0;
      if (!parse_number(s, v)) {
        numeric = false;
        break;
      }
      nums.push_back(v);
    }
    if (numeric)
      series[c].values = std::move(nums);
    else
      series[c].values = std::move(cells[c]);
  }
  return series;
}

}  // namespace gmflow
