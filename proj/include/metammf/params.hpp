#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace metammf {

// Named, shaped window onto one trainable array. Models expose their
// parameters as an ordered list of these so that the optimizer,
// regularizer, checkpoint writer and gradient checker share one layout.
template <class T>
struct BasicParamView {
  std::string name;
  std::vector<std::size_t> dims;
  std::span<T> values;
};

using ParamView = BasicParamView<double>;
using ConstParamView = BasicParamView<const double>;

inline std::vector<ConstParamView> as_const(const std::vector<ParamView>& views) {
  std::vector<ConstParamView> out;
  out.reserve(views.size());
  for (const auto& v : views) out.push_back({v.name, v.dims, v.values});
  return out;
}

inline std::size_t total_size(const std::vector<ConstParamView>& views) {
  std::size_t n = 0;
  for (const auto& v : views) n += v.values.size();
  return n;
}

}  // namespace metammf
