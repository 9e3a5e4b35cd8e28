#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cra {

// Extents of a dense row-major array. All extents are positive.
using Shape = std::vector<int>;

inline int64_t numel_of(const Shape& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace detail {
inline void cat_into(std::ostringstream&) {}
template <typename A, typename... R>
void cat_into(std::ostringstream& os, const A& a, const R&... rest) {
  os << a;
  cat_into(os, rest...);
}
}  // namespace detail

template <typename... A>
std::string cat(const A&... args) {
  std::ostringstream os;
  detail::cat_into(os, args...);
  return os.str();
}

// Retrieval protocol: CrossCamera drops gallery entries sharing both
// identity and camera with the query; Plain keeps the whole gallery.
enum class Protocol { Plain, CrossCamera };

// Error taxonomy. Messages name the offending shapes or values.
struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SamplingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DatasetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct LoadError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <typename Err, typename... A>
void check(bool cond, const A&... msg_parts) {
  if (!cond) throw Err(cat(msg_parts...));
}

}  // namespace cra
