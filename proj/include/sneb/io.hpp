#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sneb/dataset.hpp"
#include "sneb/errors.hpp"
#include "sneb/priors.hpp"
#include "sneb/simulate.hpp"

namespace sneb {

enum class InputFormat { YzCsv, TwoGroupCsv };

enum class PoolingRule { AsPrinted, Standard };

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

inline std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return char(std::tolower(c)); });
  return s;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline double parse_double(const std::string& cell, std::size_t row, const char* column) {
  double value = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  const auto res = std::from_chars(first, last, value);
  if (res.ec != std::errc{} || res.ptr != last)
    throw Error(ErrorKind::ParseError,
                std::string("row ") + std::to_string(row) + ": cannot parse " + column +
                    " value '" + cell + "'",
                std::ptrdiff_t(row));
  return value;
}

// round-trip formatting shared by every CSV/JSON writer
inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

// CSV with header `y,sigma`. Row numbers in errors are 1-based and count the
// header.
inline Dataset load_observations_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line))
    throw Error(ErrorKind::EmptyFile, "observations file is empty");
  auto header = detail::split_csv_line(line);
  for (auto& h : header) h = detail::lower(h);
  if (header.size() != 2 || header[0] != "y" || header[1] != "sigma")
    throw Error(ErrorKind::MissingColumns, "expected header 'y,sigma'");

  Dataset data;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != 2)
      throw Error(ErrorKind::ParseError,
                  "row " + std::to_string(row) + ": expected 2 columns", std::ptrdiff_t(row));
    const double y = detail::parse_double(cells[0], row, "y");
    const double sigma = detail::parse_double(cells[1], row, "sigma");
    if (!std::isfinite(y))
      throw Error(ErrorKind::InvalidValue, "row " + std::to_string(row) + ": non-finite y",
                  std::ptrdiff_t(row));
    if (!(sigma > 0.0) || !std::isfinite(sigma))
      throw Error(ErrorKind::InvalidValue,
                  "row " + std::to_string(row) + ": sigma must be positive and finite",
                  std::ptrdiff_t(row));
    data.y.push_back(y);
    data.sigma.push_back(sigma);
  }
  if (data.y.empty())
    throw Error(ErrorKind::EmptyFile, "observations file has no data rows");
  return data;
}

inline Dataset load_observations(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoFailure, "cannot open '" + path + "'");
  return load_observations_csv(in);
}

inline void write_observations(std::ostream& out, const Dataset& data) {
  out << "y,sigma\n";
  for (std::size_t i = 0; i < data.size(); ++i)
    out << detail::fmt_double(data.y[i]) << ',' << detail::fmt_double(data.sigma[i]) << '\n';
}

// Rectangular per-gene expression matrices, one row per gene.
struct TwoGroupData {
  std::vector<std::string> labels;  // optional leading label column
  std::vector<std::vector<double>> group1;
  std::vector<std::vector<double>> group2;
};

// CSV whose header assigns columns to groups: cells starting with `g1` or
// `g2` (case-insensitive); an optional first column with any other name
// carries gene labels.
inline TwoGroupData load_two_group_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line))
    throw Error(ErrorKind::EmptyFile, "two-group file is empty");
  const auto header = detail::split_csv_line(line);
  std::vector<int> role(header.size(), 0);  // 0 label, 1 group1, 2 group2
  std::size_t n1 = 0, n2 = 0;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string h = detail::lower(header[c]);
    if (h.rfind("g1", 0) == 0) {
      role[c] = 1;
      ++n1;
    } else if (h.rfind("g2", 0) == 0) {
      role[c] = 2;
      ++n2;
    } else if (c == 0) {
      role[c] = 0;
    } else {
      throw Error(ErrorKind::MissingColumns,
                  "column '" + header[c] + "' is neither g1* nor g2*");
    }
  }
  if (n1 == 0 || n2 == 0)
    throw Error(ErrorKind::MissingColumns, "two-group file needs g1* and g2* columns");

  TwoGroupData data;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw Error(ErrorKind::ParseError,
                  "row " + std::to_string(row) + ": expected " +
                      std::to_string(header.size()) + " columns",
                  std::ptrdiff_t(row));
    std::vector<double> g1, g2;
    g1.reserve(n1);
    g2.reserve(n2);
    std::string label;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (role[c] == 0) {
        label = cells[c];
      } else {
        const double v = detail::parse_double(cells[c], row, header[c].c_str());
        if (!std::isfinite(v))
          throw Error(ErrorKind::InvalidValue,
                      "row " + std::to_string(row) + ": non-finite expression value",
                      std::ptrdiff_t(row));
        (role[c] == 1 ? g1 : g2).push_back(v);
      }
    }
    data.labels.push_back(label);
    data.group1.push_back(std::move(g1));
    data.group2.push_back(std::move(g2));
  }
  if (data.group1.empty())
    throw Error(ErrorKind::EmptyFile, "two-group file has no data rows");
  return data;
}

inline TwoGroupData load_two_group(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoFailure, "cannot open '" + path + "'");
  return load_two_group_csv(in);
}

inline Dataset pooled_two_sample(const std::vector<std::vector<double>>& group1,
                                 const std::vector<std::vector<double>>& group2,
                                 PoolingRule rule);

// Format-dispatching loader; two-group files are reduced to (y, sigma) via
// the pooled two-sample preprocessing.
inline Dataset load_dataset(const std::string& path, InputFormat format,
                            PoolingRule pooling = PoolingRule::AsPrinted) {
  if (format == InputFormat::TwoGroupCsv) {
    const auto groups = load_two_group(path);
    return pooled_two_sample(groups.group1, groups.group2, pooling);
  }
  return load_observations(path);
}

// Per-gene mean difference and pooled standard deviation. AsPrinted pairs
// (n2-1) with s1^2 and (n1-1) with s2^2; Standard uses the conventional
// pairing.
inline Dataset pooled_two_sample(const std::vector<std::vector<double>>& group1,
                                 const std::vector<std::vector<double>>& group2,
                                 PoolingRule rule = PoolingRule::AsPrinted) {
  if (group1.size() != group2.size())
    throw Error(ErrorKind::InvalidArgument, "pooled_two_sample: gene counts differ");
  Dataset data;
  for (std::size_t g = 0; g < group1.size(); ++g) {
    const auto& x1 = group1[g];
    const auto& x2 = group2[g];
    const std::size_t n1 = x1.size(), n2 = x2.size();
    if (n1 < 2 || n2 < 2)
      throw Error(ErrorKind::InvalidArgument,
                  "pooled_two_sample: both groups need at least 2 samples per gene",
                  std::ptrdiff_t(g));
    const auto mean = [](const std::vector<double>& x) {
      return std::accumulate(x.begin(), x.end(), 0.0) / double(x.size());
    };
    const auto var = [&](const std::vector<double>& x, double mu) {
      double ss = 0.0;
      for (double v : x) ss += (v - mu) * (v - mu);
      return ss / double(x.size() - 1);
    };
    const double m1 = mean(x1), m2 = mean(x2);
    const double s1 = var(x1, m1), s2 = var(x2, m2);
    const double w1 = rule == PoolingRule::AsPrinted ? double(n2 - 1) : double(n1 - 1);
    const double w2 = rule == PoolingRule::AsPrinted ? double(n1 - 1) : double(n2 - 1);
    const double pooled =
        (w1 * s1 + w2 * s2) / double(n1 + n2 - 2) * (1.0 / double(n1) + 1.0 / double(n2));
    const double sigma = std::sqrt(pooled);
    if (!(sigma > 0.0) || !std::isfinite(sigma))
      throw Error(ErrorKind::InvalidValue,
                  "pooled_two_sample: gene " + std::to_string(g) +
                      " has non-positive pooled standard deviation",
                  std::ptrdiff_t(g));
    data.y.push_back(m2 - m1);
    data.sigma.push_back(sigma);
  }
  return data;
}

// ---- JSON artifacts ----

inline nlohmann::json grid_to_json(const Grid& grid) {
  return {{"points", grid.points}, {"spacing", grid.spacing}, {"zero_index", grid.zero_index}};
}

inline Grid grid_from_json(const nlohmann::json& j) {
  return Grid::from_points(j.at("points").get<std::vector<double>>());
}

inline nlohmann::json prior_to_json(const DnpPrior& prior) {
  return {{"kind", "dnp"}, {"grid", grid_to_json(prior.grid)}, {"pi", prior.pi},
          {"sparsity", prior.sparsity()}};
}

inline nlohmann::json prior_to_json(const SnpPrior& prior) {
  return {{"kind", "snp"},     {"grid", grid_to_json(prior.grid)},
          {"omega", prior.omega}, {"lambda0", prior.lambda0},
          {"gamma_pi", prior.gamma_pi}};
}

inline DnpPrior dnp_prior_from_json(const nlohmann::json& j) {
  if (j.at("kind") != "dnp")
    throw Error(ErrorKind::ParseError, "prior JSON is not a dnp prior");
  DnpPrior p{grid_from_json(j.at("grid")), j.at("pi").get<std::vector<double>>()};
  p.validate();
  return p;
}

inline SnpPrior snp_prior_from_json(const nlohmann::json& j) {
  if (j.at("kind") != "snp")
    throw Error(ErrorKind::ParseError, "prior JSON is not an snp prior");
  SnpPrior p{grid_from_json(j.at("grid")), j.at("omega").get<double>(),
             j.at("lambda0").get<double>(), j.at("gamma_pi").get<std::vector<double>>()};
  p.validate();
  return p;
}

// Long-format CSV: one row per (method, alpha, metric, rep).
inline std::string metrics_to_csv(const MonteCarloResult& result) {
  std::string out = "n,w,V,u,seed,reps,method,alpha,metric,value,rep\n";
  const auto& d = result.design;
  const std::string prefix = std::to_string(d.n) + ',' + detail::fmt_double(d.w) + ',' +
                             detail::fmt_double(d.V) + ',' + detail::fmt_double(d.u) + ',' +
                             std::to_string(d.seed) + ',' + std::to_string(d.reps) + ',';
  for (const auto& s : result.series) {
    const std::string alpha_cell = s.alpha ? detail::fmt_double(*s.alpha) : std::string();
    for (std::size_t r = 0; r < s.values.size(); ++r) {
      if (std::isnan(s.values[r])) continue;  // failed rep
      out += prefix;
      out += s.method;
      out += ',';
      out += alpha_cell;
      out += ',';
      out += s.metric;
      out += ',';
      out += detail::fmt_double(s.values[r]);
      out += ',';
      out += std::to_string(r);
      out += '\n';
    }
  }
  return out;
}

inline nlohmann::json metrics_to_json(const MonteCarloResult& result) {
  nlohmann::json j;
  j["design"] = {{"n", result.design.n},       {"w", result.design.w},
                 {"V", result.design.V},       {"u", result.design.u},
                 {"seed", result.design.seed}, {"reps", result.design.reps}};
  j["alpha_grid"] = result.alpha_grid;
  j["failed_reps"] = result.failed_reps;
  j["failure_messages"] = result.failure_messages;
  j["series"] = nlohmann::json::array();
  for (const auto& s : result.series) {
    nlohmann::json js = {{"method", s.method}, {"metric", s.metric},
                         {"mean", s.mean},     {"mc_se", s.mc_se},
                         {"values", s.values}};
    if (s.alpha) js["alpha"] = *s.alpha;
    j["series"].push_back(std::move(js));
  }
  return j;
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::IoFailure, "cannot write '" + path + "'");
  out << content;
  if (!out) throw Error(ErrorKind::IoFailure, "write failed for '" + path + "'");
}

}  // namespace sneb
