#include "fedctta/params.hpp"

#include <bit>
#include <cstring>
#include <istream>
#include <ostream>

namespace fedctta::nn {

const char* role_name(ParamRole r) {
  switch (r) {
    case ParamRole::weight: return "weight";
    case ParamRole::bias: return "bias";
    case ParamRole::gamma: return "gamma";
    case ParamRole::beta: return "beta";
    case ParamRole::run_mean: return "run_mean";
    case ParamRole::run_var: return "run_var";
  }
  return "?";
}

ParamVector sgd_step(const ParamVector& params, const ParamVector& grads, double lr) {
  if (!params.same_layout(grads) || params.size() != grads.size())
    throw ShapeError("sgd_step: parameter/gradient layout mismatch");
  ParamVector out = params;
  for (std::size_t k = 0; k < out.values.size(); ++k)
    out.values[k] = params.values[k] - lr * grads.values[k];
  return out;
}

void zero_role(ParamVector& pv, ParamRole role) {
  for (const ParamSegment& s : pv.layout) {
    if (s.role != role) continue;
    for (std::size_t k = 0; k < s.length; ++k) pv.values[s.offset + k] = 0.0;
  }
}

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw ShapeError("param vector: truncated stream");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw ShapeError("param vector: truncated stream");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void write_param_vector(std::ostream& out, const ParamVector& pv) {
  put_u64(out, pv.layout.size());
  for (const ParamSegment& s : pv.layout) {
    put_u32(out, static_cast<std::uint32_t>(s.layer));
    put_u32(out, static_cast<std::uint32_t>(s.role));
    put_u64(out, s.length);
  }
  for (double v : pv.values) put_u64(out, std::bit_cast<std::uint64_t>(v));
}

ParamVector read_param_vector(std::istream& in) {
  ParamVector pv;
  std::uint64_t nseg = get_u64(in);
  std::size_t offset = 0;
  pv.layout.reserve(nseg);
  for (std::uint64_t s = 0; s < nseg; ++s) {
    ParamSegment seg;
    seg.layer = static_cast<int>(get_u32(in));
    std::uint32_t role = get_u32(in);
    if (role > static_cast<std::uint32_t>(ParamRole::run_var))
      throw ShapeError("param vector: corrupt role tag");
    seg.role = static_cast<ParamRole>(role);
    seg.length = get_u64(in);
    seg.offset = offset;
    offset += seg.length;
    pv.layout.push_back(seg);
  }
  pv.values.resize(offset);
  for (std::size_t k = 0; k < offset; ++k)
    pv.values[k] = std::bit_cast<double>(get_u64(in));
  return pv;
}

}  // namespace fedctta::nn
