#include "g2n/analysis.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

namespace g2n {

int64_t count_params(const std::vector<LayerStat>& rows) {
  int64_t total = 0;
  for (const auto& r : rows) total += r.params;
  return total;
}

int64_t count_macs(const std::vector<LayerStat>& rows) {
  int64_t total = 0;
  for (const auto& r : rows) total += r.macs;
  return total;
}

std::string format_summary_table(const std::vector<LayerStat>& rows) {
  size_t name_w = 5;
  for (const auto& r : rows) name_w = std::max(name_w, r.name.size());
  std::ostringstream os;
  os << std::left << std::setw(int(name_w) + 2) << "layer" << std::right
     << std::setw(14) << "params" << std::setw(16) << "macs" << "  out_shape\n";
  for (const auto& r : rows)
    os << std::left << std::setw(int(name_w) + 2) << r.name << std::right
       << std::setw(14) << r.params << std::setw(16) << r.macs << "  "
       << r.out_shape.str() << "\n";
  os << std::left << std::setw(int(name_w) + 2) << "TOTAL" << std::right
     << std::setw(14) << count_params(rows) << std::setw(16) << count_macs(rows)
     << "\n";
  return os.str();
}

std::string summary_csv(const std::vector<LayerStat>& rows) {
  std::ostringstream os;
  os << "name,params,macs,out_shape\n";
  for (const auto& r : rows) {
    std::string shape = r.out_shape.str();
    std::replace(shape.begin(), shape.end(), ',', ';');
    os << r.name << "," << r.params << "," << r.macs << "," << shape << "\n";
  }
  os << "TOTAL," << count_params(rows) << "," << count_macs(rows) << ",\n";
  return os.str();
}

}  // namespace g2n
