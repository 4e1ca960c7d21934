#include "g2n/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace g2n {

template <typename T>
std::vector<PruneMask> build_masks(Model<T>& model, double ratio) {
  G2N_CHECK(ratio >= 0.0 && ratio <= 1.0, "prune: ratio must be in [0, 1], got ",
            ratio);
  std::vector<PruneMask> masks;
  Registry<T> reg = model.registry();
  for (auto& p : reg.params) {
    if (!p.passage || p.kind != ParamKind::ConvWeight) continue;
    const auto w = p.tensor.value();
    const int64_t n = int64_t(w.size());
    const int64_t drop = int64_t(std::floor(ratio * double(n)));

    std::vector<int64_t> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int64_t a, int64_t b) {
      const T ma = std::abs(w[size_t(a)]), mb = std::abs(w[size_t(b)]);
      if (ma != mb) return ma < mb;
      return a < b;
    });

    PruneMask m;
    m.target = p.name;
    m.shape = p.tensor.shape();
    m.ratio = ratio;
    m.mask.assign(size_t(n), 1);
    for (int64_t i = 0; i < drop; ++i) m.mask[size_t(idx[size_t(i)])] = 0;
    masks.push_back(std::move(m));
  }
  return masks;
}

template <typename T>
void apply_masks(Model<T>& model, const std::vector<PruneMask>& masks) {
  Registry<T> reg = model.registry();
  for (const auto& m : masks) {
    ParamRef<T>* p = reg.find(m.target);
    G2N_CHECK(p != nullptr, "prune: mask target '", m.target,
              "' not found in model");
    G2N_CHECK(p->tensor.shape() == m.shape, "prune: mask shape ", m.shape.str(),
              " does not match target '", m.target, "' shape ",
              p->tensor.shape().str());
    G2N_CHECK(int64_t(m.mask.size()) == p->tensor.numel(),
              "prune: mask length mismatch for '", m.target, "'");
    auto w = p->tensor.mutable_value();
    for (size_t i = 0; i < m.mask.size(); ++i)
      if (!m.mask[i]) w[i] = T(0);
    G2N_CHECK(p->mask != nullptr, "prune: target '", m.target,
              "' cannot hold a mask");
    *p->mask = m.mask;
  }
}

template <typename T>
SparsityReport sparsity_report(Model<T>& model) {
  SparsityReport rep;
  Registry<T> reg = model.registry();
  for (auto& p : reg.params) {
    if (!p.passage || p.kind != ParamKind::ConvWeight) continue;
    SparsityRow row;
    row.target = p.name;
    row.numel = p.tensor.numel();
    if (p.mask && !p.mask->empty())
      for (uint8_t m : *p.mask) row.masked_zeros += (m == 0);
    rep.masked_zeros += row.masked_zeros;
    rep.numel += row.numel;
    rep.rows.push_back(std::move(row));
  }
  rep.aggregate =
      rep.numel > 0 ? double(rep.masked_zeros) / double(rep.numel) : 0.0;
  return rep;
}

std::string SparsityReport::table() const {
  size_t name_w = 6;
  for (const auto& r : rows) name_w = std::max(name_w, r.target.size());
  std::ostringstream os;
  os << std::left << std::setw(int(name_w) + 2) << "target" << std::right
     << std::setw(12) << "zeros" << std::setw(12) << "numel" << std::setw(12)
     << "fraction" << "\n";
  for (const auto& r : rows)
    os << std::left << std::setw(int(name_w) + 2) << r.target << std::right
       << std::setw(12) << r.masked_zeros << std::setw(12) << r.numel
       << std::setw(12) << std::fixed << std::setprecision(6)
       << (r.numel ? double(r.masked_zeros) / double(r.numel) : 0.0) << "\n";
  os << std::left << std::setw(int(name_w) + 2) << "TOTAL" << std::right
     << std::setw(12) << masked_zeros << std::setw(12) << numel << std::setw(12)
     << std::fixed << std::setprecision(6) << aggregate << "\n";
  return os.str();
}

template std::vector<PruneMask> build_masks<float>(Model<float>&, double);
template std::vector<PruneMask> build_masks<double>(Model<double>&, double);
template void apply_masks<float>(Model<float>&, const std::vector<PruneMask>&);
template void apply_masks<double>(Model<double>&,
                                  const std::vector<PruneMask>&);
template SparsityReport sparsity_report<float>(Model<float>&);
template SparsityReport sparsity_report<double>(Model<double>&);

}  // namespace g2n
