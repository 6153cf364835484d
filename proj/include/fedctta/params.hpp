#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "fedctta/errors.hpp"

namespace fedctta::nn {

enum class ParamRole : std::uint8_t {
  weight = 0,
  bias = 1,
  gamma = 2,
  beta = 3,
  run_mean = 4,
  run_var = 5,
};

constexpr bool is_trainable(ParamRole r) {
  return r == ParamRole::weight || r == ParamRole::bias || r == ParamRole::gamma ||
         r == ParamRole::beta;
}

const char* role_name(ParamRole r);

struct ParamSegment {
  int layer = 0;
  ParamRole role = ParamRole::weight;
  std::size_t offset = 0;
  std::size_t length = 0;
  bool operator==(const ParamSegment&) const = default;
};

// Flat view of every model parameter, running statistics included: the unit
// servers aggregate and checkpoints store.
struct ParamVector {
  std::vector<double> values;
  std::vector<ParamSegment> layout;

  std::size_t size() const { return values.size(); }
  bool same_layout(const ParamVector& o) const { return layout == o.layout; }
  bool operator==(const ParamVector&) const = default;
};

// values - lr * grads elementwise; ShapeError on layout mismatch.
ParamVector sgd_step(const ParamVector& params, const ParamVector& grads, double lr);

// Zero every entry of segments with the given role (gradient masking).
void zero_role(ParamVector& pv, ParamRole role);

// Binary wire format: u64 segment count; per segment u32 layer, u32 role,
// u64 length; then all values as little-endian IEEE-754 doubles.
void write_param_vector(std::ostream& out, const ParamVector& pv);
ParamVector read_param_vector(std::istream& in);

}  // namespace fedctta::nn
