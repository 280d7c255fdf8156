#pragma once

#include "core.hpp"

#include <json.hpp>

#include <charconv>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace devrate {

//! Shortest round-trip decimal form; "inf", "-inf" and "nan" for the
//! non-finite values.
inline std::string
format_double(double v)
{
  if (std::isnan(v))
    return "nan";
  if (std::isinf(v))
    return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string
format_extended(const Extended& e)
{
  return e.is_infinite() ? "inf" : format_double(e.value());
}

inline nlohmann::json
extended_to_json(const Extended& e)
{
  if (e.is_infinite())
    return "inf";
  return e.value();
}

//! RFC-4180 field quoting.
inline std::string
csv_field(const std::string& s)
{
  if (s.find_first_of(",\"\r\n") == std::string::npos)
    return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"')
      out += '"';
    out += c;
  }
  return out + "\"";
}

//! CSV writer. Metadata (resolved config, seed) goes into leading '#' lines
//! so every artifact describes itself.
class CsvWriter
{
public:
  explicit CsvWriter(std::ostream& os)
    : os_(os)
  {}

  void metadata(const nlohmann::json& meta)
  {
    std::istringstream lines(meta.dump(2));
    std::string line;
    while (std::getline(lines, line))
      os_ << "# " << line << "\r\n";
  }

  void header(const std::vector<std::string>& cols) { row(cols); }

  void row(const std::vector<std::string>& cells)
  {
    for (size_t i = 0; i < cells.size(); ++i) {
      if (i)
        os_ << ',';
      os_ << csv_field(cells[i]);
    }
    os_ << "\r\n";
  }

private:
  std::ostream& os_;
};

inline Vec
vec_from_json(const nlohmann::json& j, const std::string& what)
{
  if (!j.is_array() || j.empty() || j.size() > kMaxDim)
    throw ConfigError(what + " must be a non-empty array of at most " +
                      std::to_string(kMaxDim) + " numbers");
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (size_t i = 0; i < j.size(); ++i)
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  return v;
}

inline nlohmann::json
vec_to_json(const Vec& v)
{
  nlohmann::json out = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i)
    out.push_back(v(i));
  return out;
}

} // namespace devrate
