#pragma once

#include <Eigen/Core>
#include <boost/version.hpp>
#include <json.hpp>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "qte/simgen.hpp"

namespace qte::cli {

inline constexpr const char* kVersion = "0.1.0";

/// Bad command line or config file (exit 1).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Input that fails a checkable precondition (exit 2). Carries every diagnostic found.
struct ValidationError : std::runtime_error {
  std::vector<std::string> diagnostics;
  explicit ValidationError(std::vector<std::string> diags)
      : std::runtime_error(diags.empty() ? "validation failed" : diags.front()),
        diagnostics(std::move(diags)) {}
};

/// Shortest decimal form that parses back to the same double.
inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, res.ptr};
}

inline std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[i] = digits[v & 0xf];
  return s;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw UsageError("cannot open '" + p.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/**
 * The only place the CLI writes files. Names are plain file names inside the
 * configured directory; anything with a separator, "..", or a root is refused.
 */
class OutputDir {
 public:
  explicit OutputDir(std::filesystem::path root) : root_(std::move(root)) {
    if (root_.empty()) throw UsageError("output directory is required");
    std::error_code ec;
    std::filesystem::create_directories(root_, ec);
    if (ec || !std::filesystem::is_directory(root_)) {
      throw std::runtime_error("cannot create output directory '" + root_.string() + "'");
    }
  }

  static void check_name(std::string_view name) {
    const bool bad = name.empty() || name == "." || name == ".." ||
                     name.find('/') != std::string_view::npos ||
                     name.find('\\') != std::string_view::npos;
    if (bad) throw std::invalid_argument("refusing to write '" + std::string(name) + "' outside the output directory");
  }

  void write(const std::string& name, const std::string& content) {
    check_name(name);
    const auto path = root_ / name;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << content;
    if (!out.flush()) throw std::runtime_error("write failed: " + path.string());
    files_[name] = hex64(fnv1a(content));
  }

  const std::filesystem::path& root() const noexcept { return root_; }
  /// name -> content hash of everything written so far.
  const std::map<std::string, std::string>& files() const noexcept { return files_; }

 private:
  std::filesystem::path root_;
  std::map<std::string, std::string> files_;
};

inline nlohmann::json versions() {
  return {
      {"qte", kVersion},
      {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                    "." + std::to_string(EIGEN_MINOR_VERSION)},
      {"boost", BOOST_LIB_VERSION},
      {"compiler", __VERSION__},
  };
}

/// Manifest skeleton; `config` is the resolved key -> value text of the run.
inline nlohmann::json make_manifest(const std::string& command,
                                    const std::map<std::string, std::string>& config) {
  std::string flat;
  for (const auto& [k, v] : config) flat += k + "=" + v + "\n";
  nlohmann::json m;
  m["command"] = command;
  m["config"] = config;
  m["config_hash"] = hex64(fnv1a(flat));
  m["versions"] = versions();
  return m;
}

/// Writes manifest.json listing every other file in `out` with its hash.
inline void write_manifest(OutputDir& out, nlohmann::json manifest) {
  manifest["files"] = out.files();
  out.write("manifest.json", manifest.dump(2) + "\n");
}

// ---- dataset CSV: y,t,x1..xd[,pi,y0,y1] ----

inline void write_dataset_csv(std::ostream& os, const Dataset& d) {
  os << "y,t";
  for (int j = 0; j < d.dim(); ++j) os << ",x" << j + 1;
  const auto n = static_cast<Eigen::Index>(d.size());
  const bool has_pi = d.pi.size() == n;
  const bool truth = has_pi && d.y0.size() == n && d.y1.size() == n;
  if (has_pi) os << ",pi";
  if (truth) os << ",y0,y1";
  os << '\n';
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    os << fmt(d.y[r]) << ',' << d.t[i];
    for (int j = 0; j < d.dim(); ++j) os << ',' << fmt(d.x(r, j));
    if (has_pi) os << ',' << fmt(d.pi[r]);
    if (truth) os << ',' << fmt(d.y0[r]) << ',' << fmt(d.y1[r]);
    os << '\n';
  }
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma - start)));
    if (comma == std::string_view::npos) return out;
    start = comma + 1;
  }
}

inline bool parse_double(std::string_view s, double& v) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  return res.ec == std::errc() && res.ptr == s.data() + s.size() && !s.empty();
}

}  // namespace detail

/**
 * Parses and validates a dataset. Every problem is reported as
 * "<label>:<line>: message" and thrown together as a ValidationError.
 */
inline Dataset read_dataset_csv(std::istream& is, const std::string& label) {
  constexpr std::size_t kMaxDiagnostics = 20;
  std::vector<std::string> diags;
  auto report = [&](int line, const std::string& msg) {
    if (diags.size() < kMaxDiagnostics) diags.push_back(label + ":" + std::to_string(line) + ": " + msg);
  };

  std::string text;
  if (!std::getline(is, text)) throw ValidationError({label + ":1: empty file, expected a header"});
  const auto header_fields = detail::split(detail::trim(text));
  const std::vector<std::string> header(header_fields.begin(), header_fields.end());
  int col_y = -1, col_t = -1, col_pi = -1, col_y0 = -1, col_y1 = -1;
  std::map<int, int> xcols;  // covariate index (1-based) -> column
  for (int c = 0; c < static_cast<int>(header.size()); ++c) {
    const std::string name(header[c]);
    int* slot = name == "y" ? &col_y : name == "t" ? &col_t : name == "pi" ? &col_pi
              : name == "y0" ? &col_y0 : name == "y1" ? &col_y1 : nullptr;
    if (slot) {
      if (*slot >= 0) report(1, "duplicate column '" + name + "'");
      *slot = c;
      continue;
    }
    int k = 0;
    if (name.size() > 1 && name[0] == 'x') {
      auto res = std::from_chars(name.data() + 1, name.data() + name.size(), k);
      if (res.ec != std::errc() || res.ptr != name.data() + name.size()) k = 0;
    }
    if (k < 1) {
      report(1, "unknown column '" + name + "' (expected y, t, x1..xd, optional pi, y0, y1)");
    } else if (!xcols.emplace(k, c).second) {
      report(1, "duplicate column '" + name + "'");
    }
  }
  if (col_y < 0) report(1, "missing column 'y'");
  if (col_t < 0) report(1, "missing column 't'");
  const int d = static_cast<int>(xcols.size());
  if (d > 0 && xcols.rbegin()->first != d) report(1, "covariate columns must be x1..x" + std::to_string(d) + " without gaps");
  const bool has_pi = col_pi >= 0;
  const bool has_potential = col_y0 >= 0 || col_y1 >= 0;
  if (has_potential && !(col_y0 >= 0 && col_y1 >= 0 && has_pi)) {
    report(1, "potential outcomes need pi, y0 and y1 together");
  }
  if (!diags.empty()) throw ValidationError(std::move(diags));

  std::vector<double> y, pi, y0, y1, x;
  std::vector<int> t;
  int line_no = 1;
  while (std::getline(is, text)) {
    ++line_no;
    const auto line = detail::trim(text);
    if (line.empty()) continue;
    const auto fields = detail::split(line);
    if (fields.size() != header.size()) {
      report(line_no, "expected " + std::to_string(header.size()) + " fields, found " + std::to_string(fields.size()));
      continue;
    }
    auto get = [&](int c) {
      double v = 0.0;
      if (!detail::parse_double(fields[c], v)) {
        report(line_no, "column '" + std::string(header[c]) + "': '" + std::string(fields[c]) + "' is not a number");
      } else if (!std::isfinite(v)) {
        report(line_no, "column '" + std::string(header[c]) + "': non-finite value");
      }
      return v;
    };
    y.push_back(get(col_y));
    const double tv = get(col_t);
    if (tv != 0.0 && tv != 1.0) report(line_no, "column 't': treatment must be 0 or 1, got '" + std::string(fields[col_t]) + "'");
    t.push_back(tv == 1.0 ? 1 : 0);
    for (const auto& [k, c] : xcols) x.push_back(get(c));
    if (has_pi) {
      const double p = get(col_pi);
      if (!(p > 0.0 && p < 1.0)) report(line_no, "column 'pi': propensity must lie in (0, 1)");
      pi.push_back(p);
    }
    if (has_potential) {
      y0.push_back(get(col_y0));
      y1.push_back(get(col_y1));
    }
  }
  const auto n = static_cast<Eigen::Index>(y.size());
  if (n == 0) report(line_no, "no data rows");
  const auto treated = std::count(t.begin(), t.end(), 1);
  if (n > 0 && (treated == 0 || treated == n)) {
    report(line_no, "single-arm data: all " + std::to_string(n) + " rows have t=" +
                        std::to_string(treated ? 1 : 0) + "; both arms are required");
  }
  if (!diags.empty()) throw ValidationError(std::move(diags));

  Dataset out;
  out.y = Eigen::Map<Eigen::VectorXd>(y.data(), n);
  out.t = std::move(t);
  out.x = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(x.data(), n, d);
  if (has_pi) out.pi = Eigen::Map<Eigen::VectorXd>(pi.data(), n);
  if (has_potential) {
    out.y0 = Eigen::Map<Eigen::VectorXd>(y0.data(), n);
    out.y1 = Eigen::Map<Eigen::VectorXd>(y1.data(), n);
  }
  return out;
}

}  // namespace qte::cli
