// SPDX-License-Identifier: Apache-2.0
#include "cme/logits_csv.hpp"

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cme/errors.hpp"

namespace cme {
namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

std::string logits_csv_string(const LogitTable& t) {
  std::ostringstream os;
  os << "id,label";
  for (std::size_t c = 0; c < t.logits.cols(); ++c) os << ",logit_" << c;
  os << '\n';
  char buf[40];
  for (std::size_t i = 0; i < t.logits.rows(); ++i) {
    os << (i < t.ids.size() ? t.ids[i] : std::to_string(i)) << ',' << t.labels.at(i);
    for (double v : t.logits.row(i)) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      os << ',' << buf;
    }
    os << '\n';
  }
  return os.str();
}

void write_logits_csv(const std::filesystem::path& path, const LogitTable& table) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write logits file " + path.string());
  out << logits_csv_string(table);
}

LogitTable read_logits_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open logits file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty logits file");
  const auto header = split_csv(line);
  if (header.size() < 4 || header[0] != "id" || header[1] != "label") {
    throw DataError(path.string() + ":1: header must be id,label,logit_0,... with at least two classes");
  }
  const std::size_t C = header.size() - 2;
  for (std::size_t c = 0; c < C; ++c) {
    if (header[2 + c] != "logit_" + std::to_string(c)) {
      throw DataError(path.string() + ":1: expected column logit_" + std::to_string(c));
    }
  }
  LogitTable t;
  std::vector<double> values;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv(line);
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (f.size() != C + 2) throw DataError(where + ": expected " + std::to_string(C + 2) + " columns");
    int label = 0;
    auto [p, ec] = std::from_chars(f[1].data(), f[1].data() + f[1].size(), label);
    if (ec != std::errc() || p != f[1].data() + f[1].size() || label < 0 ||
        static_cast<std::size_t>(label) >= C) {
      throw DataError(where + ": bad label '" + f[1] + "'");
    }
    t.ids.push_back(f[0]);
    t.labels.push_back(label);
    for (std::size_t c = 0; c < C; ++c) {
      const std::string& s = f[2 + c];
      char* end = nullptr;
      const double v = std::strtod(s.c_str(), &end);
      if (s.empty() || end != s.c_str() + s.size()) throw DataError(where + ": bad logit '" + s + "'");
      values.push_back(v);
    }
  }
  t.logits = Tensor2D(t.labels.size(), C, std::move(values));
  return t;
}

}  // namespace cme
