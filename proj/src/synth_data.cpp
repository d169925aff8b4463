#include "fhalab/synth_data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fhalab::data {

namespace {

constexpr double kTau = 2.0 * 3.14159265358979323846;
constexpr double kBlobRadius = 4.0;

std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& cell, std::size_t row, const std::string& col) {
  double v;
  const char* begin = cell.c_str();
  auto res = std::from_chars(begin, begin + cell.size(), v);
  if (res.ec != std::errc{} || res.ptr != begin + cell.size())
    throw std::invalid_argument("csv row " + std::to_string(row) + ": non-numeric value '" +
                                cell + "' in column " + col);
  return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  cells.push_back(cur);
  return cells;
}

}  // namespace

const char* domain_name(DomainTag tag) {
  switch (tag) {
    case DomainTag::source: return "source";
    case DomainTag::target: return "target";
    case DomainTag::generated: return "generated";
  }
  return "?";
}

DomainTag parse_domain(const std::string& name) {
  if (name == "source") return DomainTag::source;
  if (name == "target") return DomainTag::target;
  if (name == "generated") return DomainTag::generated;
  throw std::invalid_argument("unknown domain tag '" + name + "'");
}

std::size_t DomainDataset::class_count() const {
  std::size_t k = 0;
  for (std::size_t l : labels) k = std::max(k, l + 1);
  return k;
}

void DomainDataset::validate() const {
  if (features.rank() != 2)
    throw std::invalid_argument("DomainDataset: features must be NxD");
  if (features.rows() != labels.size())
    throw std::invalid_argument("DomainDataset: " + std::to_string(features.rows()) +
                                " rows vs " + std::to_string(labels.size()) + " labels");
}

void ShiftSpec::validate(std::size_t dims) const {
  if (angle < 0.0 || angle >= kTau)
    throw std::invalid_argument("ShiftSpec: angle must be in [0, 2pi)");
  if (!scale.empty() && scale.size() != dims)
    throw std::invalid_argument("ShiftSpec: scale has " + std::to_string(scale.size()) +
                                " factors for " + std::to_string(dims) + " dims");
  for (double s : scale)
    if (s <= 0.0) throw std::invalid_argument("ShiftSpec: scale factors must be positive");
  if (!offset.empty() && offset.size() != dims)
    throw std::invalid_argument("ShiftSpec: offset has " + std::to_string(offset.size()) +
                                " entries for " + std::to_string(dims) + " dims");
  if (noise_std < 0.0) throw std::invalid_argument("ShiftSpec: noise_std must be non-negative");
}

bool ShiftSpec::is_identity() const {
  if (angle != 0.0) return false;
  for (double s : scale)
    if (s != 1.0) return false;
  for (double o : offset)
    if (o != 0.0) return false;
  return true;
}

DomainDataset make_blobs(std::size_t classes, std::size_t per_class, std::size_t dims,
                         double spread, std::uint64_t seed, DomainTag tag) {
  if (classes < 2) throw std::invalid_argument("make_blobs: need at least 2 classes");
  if (dims < 2) throw std::invalid_argument("make_blobs: need at least 2 dimensions");
  if (per_class == 0) throw std::invalid_argument("make_blobs: per_class must be positive");
  if (spread < 0.0) throw std::invalid_argument("make_blobs: spread must be non-negative");

  std::mt19937_64 g(seed);
  DomainDataset ds;
  ds.domain = tag;
  ds.features = ad::Tensor::zeros({classes * per_class, dims});
  ds.labels.resize(classes * per_class);
  std::ostringstream prov;
  prov << "make_blobs(K=" << classes << ",per_class=" << per_class << ",d=" << dims
       << ",spread=" << spread << ",seed=" << seed << ")";
  ds.provenance = prov.str();

  for (std::size_t c = 0; c < classes; ++c) {
    double theta = kTau * static_cast<double>(c) / static_cast<double>(classes);
    double mx = kBlobRadius * std::cos(theta);
    double my = kBlobRadius * std::sin(theta);
    for (std::size_t i = 0; i < per_class; ++i) {
      std::size_t row = c * per_class + i;
      ds.labels[row] = c;
      ds.features.at(row, 0) = mx + spread * rng::normal(g);
      ds.features.at(row, 1) = my + spread * rng::normal(g);
      for (std::size_t k = 2; k < dims; ++k) ds.features.at(row, k) = spread * rng::normal(g);
    }
  }
  return ds;
}

DomainDataset apply_shift(const DomainDataset& ds, const ShiftSpec& shift) {
  ds.validate();
  std::size_t dims = ds.dim();
  shift.validate(dims);

  DomainDataset out = ds;
  out.domain = DomainTag::target;
  double ca = std::cos(shift.angle), sa = std::sin(shift.angle);
  for (std::size_t i = 0; i < out.features.rows(); ++i) {
    double x = out.features.at(i, 0), y = out.features.at(i, 1);
    out.features.at(i, 0) = ca * x - sa * y;
    out.features.at(i, 1) = sa * x + ca * y;
    if (!shift.scale.empty())
      for (std::size_t k = 0; k < dims; ++k) out.features.at(i, k) *= shift.scale[k];
    if (!shift.offset.empty())
      for (std::size_t k = 0; k < dims; ++k) out.features.at(i, k) += shift.offset[k];
  }
  return out;
}

FewShotSplit few_shot_sample(const DomainDataset& ds, std::size_t per_class, std::uint64_t seed,
                             bool warn_above_protocol) {
  ds.validate();
  if (per_class == 0) throw std::invalid_argument("few_shot_sample: per_class must be >= 1");
  if (per_class > 7 && warn_above_protocol)
    std::cerr << "few_shot_sample: " << per_class
              << " labeled samples per class exceeds the 7-per-class protocol cap\n";

  std::size_t classes = ds.class_count();
  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < ds.labels.size(); ++i) by_class[ds.labels[i]].push_back(i);
  for (std::size_t c = 0; c < classes; ++c)
    if (by_class[c].size() < per_class + 10)
      throw std::invalid_argument("few_shot_sample: class " + std::to_string(c) + " has " +
                                  std::to_string(by_class[c].size()) +
                                  " samples, needs at least " + std::to_string(per_class + 10));

  std::mt19937_64 g(seed);
  std::vector<bool> picked(ds.labels.size(), false);
  std::vector<std::size_t> labeled_rows;
  for (std::size_t c = 0; c < classes; ++c) {
    auto pool = by_class[c];
    for (std::size_t k = 0; k < per_class; ++k) {
      std::size_t j = rng::index(g, pool.size());
      labeled_rows.push_back(pool[j]);
      picked[pool[j]] = true;
      pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(j));
    }
  }
  std::sort(labeled_rows.begin(), labeled_rows.end());

  auto extract = [&](const std::vector<std::size_t>& rows) {
    DomainDataset sub;
    sub.domain = ds.domain;
    sub.provenance = ds.provenance;
    sub.features = ad::Tensor::zeros({rows.size(), ds.dim()});
    sub.labels.resize(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      sub.labels[r] = ds.labels[rows[r]];
      for (std::size_t k = 0; k < ds.dim(); ++k)
        sub.features.at(r, k) = ds.features.at(rows[r], k);
    }
    return sub;
  };

  std::vector<std::size_t> eval_rows;
  for (std::size_t i = 0; i < ds.labels.size(); ++i)
    if (!picked[i]) eval_rows.push_back(i);

  FewShotSplit split;
  split.labeled = extract(labeled_rows);
  split.evaluation = extract(eval_rows);
  return split;
}

void save_csv(const DomainDataset& ds, const std::string& path) {
  ds.validate();
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("save_csv: cannot open " + path);
  std::size_t d = ds.dim();
  for (std::size_t k = 0; k < d; ++k) out << "x" << (k + 1) << ",";
  out << "label,domain\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t k = 0; k < d; ++k) out << format_double(ds.features.at(i, k)) << ",";
    out << ds.labels[i] << "," << domain_name(ds.domain) << "\n";
  }
  if (!out) throw std::runtime_error("save_csv: write failed for " + path);
}

DomainDataset load_csv(const std::string& path, std::size_t expected_classes) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("load_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("load_csv: " + path + " is empty");
  auto header = split_csv_line(line);
  if (header.size() < 3 || header[header.size() - 2] != "label" ||
      header[header.size() - 1] != "domain")
    throw std::invalid_argument("load_csv: header must be x1..xd,label,domain");
  std::size_t d = header.size() - 2;
  for (std::size_t k = 0; k < d; ++k)
    if (header[k] != "x" + std::to_string(k + 1))
      throw std::invalid_argument("load_csv: expected column x" + std::to_string(k + 1) +
                                  ", found '" + header[k] + "'");

  std::vector<double> values;
  std::vector<std::size_t> labels;
  DomainTag tag = DomainTag::source;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != d + 2)
      throw std::invalid_argument("csv row " + std::to_string(row) + ": expected " +
                                  std::to_string(d + 2) + " columns, found " +
                                  std::to_string(cells.size()));
    for (std::size_t k = 0; k < d; ++k)
      values.push_back(parse_double(cells[k], row, "x" + std::to_string(k + 1)));
    double raw_label = parse_double(cells[d], row, "label");
    if (raw_label < 0 || raw_label != std::floor(raw_label))
      throw std::invalid_argument("csv row " + std::to_string(row) + ": label must be a "
                                  "non-negative integer");
    auto label = static_cast<std::size_t>(raw_label);
    if (expected_classes > 0 && label >= expected_classes)
      throw std::invalid_argument("csv row " + std::to_string(row) + ": label " +
                                  std::to_string(label) + " out of range for K=" +
                                  std::to_string(expected_classes));
    labels.push_back(label);
    try {
      tag = parse_domain(cells[d + 1]);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("csv row " + std::to_string(row) + ": " + e.what());
    }
  }
  if (labels.empty()) throw std::invalid_argument("load_csv: " + path + " has no data rows");

  DomainDataset ds;
  ds.features = ad::Tensor::matrix(labels.size(), d, std::move(values));
  ds.labels = std::move(labels);
  ds.domain = tag;
  ds.provenance = path;
  return ds;
}

ad::Tensor load_matrix_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("load_matrix_csv: cannot open " + path);
  std::vector<double> values;
  std::size_t cols = 0, rows = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (rows == 0 && cols == 0) {
      // header auto-detection: skip a first line that fails numeric parsing
      double probe;
      const char* b = cells[0].c_str();
      auto res = std::from_chars(b, b + cells[0].size(), probe);
      if (res.ec != std::errc{} || res.ptr != b + cells[0].size()) {
        cols = cells.size();
        continue;
      }
    }
    if (cols == 0) cols = cells.size();
    if (cells.size() != cols)
      throw std::invalid_argument("load_matrix_csv row " + std::to_string(lineno) +
                                  ": expected " + std::to_string(cols) + " columns");
    for (auto& c : cells) values.push_back(parse_double(c, lineno, "matrix"));
    ++rows;
  }
  if (rows == 0) throw std::invalid_argument("load_matrix_csv: " + path + " has no data rows");
  return ad::Tensor::matrix(rows, cols, std::move(values));
}

}  // namespace fhalab::data
