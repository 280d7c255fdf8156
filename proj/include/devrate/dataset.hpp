#pragma once

#include "core.hpp"
#include "io.hpp"

#include <fstream>
#include <sstream>
#include <span>
#include <string>
#include <vector>

namespace devrate {

//! Row-major sample of (X, Y) pairs, X in R^dx and Y in R^dy.
class Dataset
{
public:
  Dataset(int dx, int dy)
    : dx_(dx)
    , dy_(dy)
  {
    if (dx < 1 || dy < 1)
      throw InputError("dataset dimensions must be positive");
  }

  int dx() const { return dx_; }
  int dy() const { return dy_; }
  size_t size() const { return x_.size() / static_cast<size_t>(dx_); }
  bool empty() const { return x_.empty(); }

  std::span<const double> x(size_t i) const
  {
    return { x_.data() + i * static_cast<size_t>(dx_),
             static_cast<size_t>(dx_) };
  }
  std::span<const double> y(size_t i) const
  {
    return { y_.data() + i * static_cast<size_t>(dy_),
             static_cast<size_t>(dy_) };
  }

  void push_back(std::span<const double> xi, std::span<const double> yi)
  {
    if (static_cast<int>(xi.size()) != dx_ || static_cast<int>(yi.size()) != dy_)
      throw InputError("observation dimension does not match dataset");
    x_.insert(x_.end(), xi.begin(), xi.end());
    y_.insert(y_.end(), yi.begin(), yi.end());
  }
  void push_back(const Vec& xi, const Vec& yi)
  {
    push_back(std::span<const double>(xi.data(), xi.size()),
              std::span<const double>(yi.data(), yi.size()));
  }

  //! Scales every response by alpha.
  Dataset scaled_y(double alpha) const
  {
    Dataset out = *this;
    for (auto& v : out.y_)
      v *= alpha;
    return out;
  }

private:
  int dx_;
  int dy_;
  std::vector<double> x_;
  std::vector<double> y_;
};

inline void
write_csv(std::ostream& os, const Dataset& data, const nlohmann::json& meta = {})
{
  CsvWriter w(os);
  if (!meta.is_null())
    w.metadata(meta);
  std::vector<std::string> cols;
  for (int j = 1; j <= data.dx(); ++j)
    cols.push_back("x_" + std::to_string(j));
  for (int j = 1; j <= data.dy(); ++j)
    cols.push_back("y_" + std::to_string(j));
  w.header(cols);
  for (size_t i = 0; i < data.size(); ++i) {
    std::vector<std::string> cells;
    for (double v : data.x(i))
      cells.push_back(format_double(v));
    for (double v : data.y(i))
      cells.push_back(format_double(v));
    w.row(cells);
  }
}

//! Reads columns x_1..x_d, y_1..y_q (header row required; '#' lines skipped).
inline Dataset
read_dataset_csv(std::istream& is)
{
  std::string line;
  std::vector<std::string> header;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    if (line.empty() || line[0] == '#')
      continue;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ','))
      header.push_back(cell);
    break;
  }
  int dx = 0, dy = 0;
  for (const auto& h : header) {
    if (h.rfind("x_", 0) == 0)
      ++dx;
    else if (h.rfind("y_", 0) == 0)
      ++dy;
    else
      throw InputError("unexpected dataset column: " + h);
  }
  Dataset data(dx, dy);
  std::vector<double> xs(static_cast<size_t>(dx)), ys(static_cast<size_t>(dy));
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    if (line.empty() || line[0] == '#')
      continue;
    std::stringstream ss(line);
    std::string cell;
    size_t col = 0;
    while (std::getline(ss, cell, ',')) {
      if (col >= header.size())
        throw InputError("too many columns in dataset row");
      double v = std::stod(cell);
      if (col < static_cast<size_t>(dx))
        xs[col] = v;
      else
        ys[col - static_cast<size_t>(dx)] = v;
      ++col;
    }
    if (col != header.size())
      throw InputError("dataset row has the wrong number of columns");
    data.push_back(xs, ys);
  }
  return data;
}

} // namespace devrate
