#include "cmda/checkpoint.hpp"

#include <bit>
#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>
#include <vector>

#include "cmda/error.hpp"
#include "cmda/nifti.hpp"

namespace cmda {
namespace {

void append_f32(std::vector<std::uint8_t>& out, float v) {
  const std::uint32_t u = std::bit_cast<std::uint32_t>(v);
  out.push_back(static_cast<std::uint8_t>(u & 0xff));
  out.push_back(static_cast<std::uint8_t>((u >> 8) & 0xff));
  out.push_back(static_cast<std::uint8_t>((u >> 16) & 0xff));
  out.push_back(static_cast<std::uint8_t>((u >> 24) & 0xff));
}

float take_f32(const std::uint8_t* p) {
  const std::uint32_t u = static_cast<std::uint32_t>(p[0]) |
                          (static_cast<std::uint32_t>(p[1]) << 8) |
                          (static_cast<std::uint32_t>(p[2]) << 16) |
                          (static_cast<std::uint32_t>(p[3]) << 24);
  return std::bit_cast<float>(u);
}

struct Scanner {
  const std::uint8_t* p;
  std::size_t n;
  std::size_t pos = 0;

  std::string line() {
    std::size_t e = pos;
    while (e < n && p[e] != '\n') ++e;
    if (e >= n) throw FormatError("checkpoint: unterminated header line");
    std::string s(reinterpret_cast<const char*>(p) + pos, e - pos);
    pos = e + 1;
    return s;
  }
};

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && s[i] == ' ') ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

std::uint64_t parse_u64(const std::string& tok) {
  errno = 0;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(tok.c_str(), &end, 10);
  if (errno != 0 || end == tok.c_str() || *end != '\0')
    throw FormatError("checkpoint: bad integer '" + tok + "'");
  return static_cast<std::uint64_t>(v);
}

std::int64_t parse_i64(const std::string& tok) {
  errno = 0;
  char* end = nullptr;
  const long long v = std::strtoll(tok.c_str(), &end, 10);
  if (errno != 0 || end == tok.c_str() || *end != '\0')
    throw FormatError("checkpoint: bad integer '" + tok + "'");
  return static_cast<std::int64_t>(v);
}

int parse_int(const std::string& tok) {
  const std::int64_t v = parse_i64(tok);
  if (v < -(1ll << 31) || v >= (1ll << 31))
    throw FormatError("checkpoint: integer out of range '" + tok + "'");
  return static_cast<int>(v);
}

double parse_f64(const std::string& tok) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (errno != 0 || end == tok.c_str() || *end != '\0')
    throw FormatError("checkpoint: bad float '" + tok + "'");
  return v;
}

std::string hexfloat(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return buf;
}

std::vector<std::string> expect(Scanner& sc, const std::string& keyword,
                                std::size_t n_args) {
  const std::vector<std::string> toks = split(sc.line());
  if (toks.empty() || toks[0] != keyword)
    throw FormatError("checkpoint: expected '" + keyword + "' line");
  if (toks.size() != n_args + 1)
    throw FormatError("checkpoint: malformed '" + keyword + "' line");
  return toks;
}

void append_payload(std::vector<std::uint8_t>& out,
                    const std::vector<Tensor<float>>& tensors) {
  for (const auto& t : tensors)
    for (std::size_t i = 0; i < t.numel(); ++i) append_f32(out, t[i]);
}

void read_payload(const std::vector<std::uint8_t>& bytes, std::size_t start,
                  std::size_t count, std::vector<Tensor<float>*> tensors) {
  if (bytes.size() < start + count * 4)
    throw TruncationError("checkpoint: payload shorter than declared");
  if (bytes.size() != start + count * 4)
    throw FormatError("checkpoint: trailing bytes after payload");
  std::size_t off = start;
  for (Tensor<float>* t : tensors)
    for (std::size_t i = 0; i < t->numel(); ++i, off += 4)
      (*t)[i] = take_f32(bytes.data() + off);
}

}  // namespace

void save_params(const std::string& path, const ModelParams& params) {
  std::string head;
  head += "cmda-checkpoint v1\n";
  head += "arch " + params.arch + "\n";
  head += "seed " + std::to_string(params.init_seed) + "\n";
  head += "cfgs " + std::to_string(params.cfg.size()) + "\n";
  for (const auto& [k, v] : params.cfg)
    head += "cfg " + k + " " + std::to_string(v) + "\n";
  head += "tensors " + std::to_string(params.tensors.size()) + "\n";
  std::size_t total = 0;
  for (const auto& [name, t] : params.tensors) {
    head += "tensor " + name + " " + std::to_string(t.ndim());
    for (int i = 0; i < t.ndim(); ++i)
      head += " " + std::to_string(t.dim(i));
    head += "\n";
    total += t.numel();
  }
  head += "payload " + std::to_string(total) + "\n";

  std::vector<std::uint8_t> bytes(head.begin(), head.end());
  bytes.reserve(bytes.size() + total * 4);
  for (const auto& [name, t] : params.tensors)
    for (std::size_t i = 0; i < t.numel(); ++i) append_f32(bytes, t[i]);
  nifti::write_file_bytes(path, bytes);
}

ModelParams load_params(const std::string& path) {
  const std::vector<std::uint8_t> bytes = nifti::read_file_bytes(path);
  Scanner sc{bytes.data(), bytes.size()};
  if (sc.line() != "cmda-checkpoint v1")
    throw FormatError("checkpoint: bad magic line");
  ModelParams p;
  {
    const auto toks = expect(sc, "arch", 1);
    p.arch = toks[1];
  }
  p.init_seed = parse_u64(expect(sc, "seed", 1)[1]);
  const int n_cfg = parse_int(expect(sc, "cfgs", 1)[1]);
  for (int i = 0; i < n_cfg; ++i) {
    const auto toks = expect(sc, "cfg", 2);
    p.cfg[toks[1]] = parse_int(toks[2]);
  }
  const int n_tensors = parse_int(expect(sc, "tensors", 1)[1]);
  if (n_tensors < 0) throw FormatError("checkpoint: negative tensor count");
  std::size_t total = 0;
  for (int i = 0; i < n_tensors; ++i) {
    const std::vector<std::string> toks = split(sc.line());
    if (toks.size() < 3 || toks[0] != "tensor")
      throw FormatError("checkpoint: malformed tensor line");
    const int ndim = parse_int(toks[2]);
    if (ndim < 1 || toks.size() != static_cast<std::size_t>(ndim) + 3)
      throw FormatError("checkpoint: malformed tensor line");
    std::vector<int> shape;
    for (int d = 0; d < ndim; ++d)
      shape.push_back(parse_int(toks[static_cast<std::size_t>(d) + 3]));
    Tensor<float> t(shape);
    total += t.numel();
    p.tensors.emplace_back(toks[1], std::move(t));
  }
  const std::uint64_t declared = parse_u64(expect(sc, "payload", 1)[1]);
  if (declared != total)
    throw FormatError("checkpoint: payload count disagrees with shapes");
  std::vector<Tensor<float>*> ptrs;
  for (auto& [name, t] : p.tensors) ptrs.push_back(&t);
  read_payload(bytes, sc.pos, total, std::move(ptrs));
  return p;
}

void save_optim(const std::string& path, const OptimState& state) {
  if (state.m.size() != state.v.size())
    throw ValidationError("optim checkpoint: moment lists differ in length");
  std::string head;
  head += "cmda-optim v1\n";
  head += "beta1 " + hexfloat(state.beta1) + "\n";
  head += "beta2 " + hexfloat(state.beta2) + "\n";
  head += "eps " + hexfloat(state.eps) + "\n";
  head += "t " + std::to_string(state.t) + "\n";
  head += "tensors " + std::to_string(state.m.size()) + "\n";
  std::size_t total = 0;
  for (const auto& t : state.m) {
    head += "shape " + std::to_string(t.ndim());
    for (int i = 0; i < t.ndim(); ++i)
      head += " " + std::to_string(t.dim(i));
    head += "\n";
    total += t.numel();
  }
  head += "payload " + std::to_string(2 * total) + "\n";
  std::vector<std::uint8_t> bytes(head.begin(), head.end());
  bytes.reserve(bytes.size() + 8 * total);
  append_payload(bytes, state.m);
  append_payload(bytes, state.v);
  nifti::write_file_bytes(path, bytes);
}

OptimState load_optim(const std::string& path) {
  const std::vector<std::uint8_t> bytes = nifti::read_file_bytes(path);
  Scanner sc{bytes.data(), bytes.size()};
  if (sc.line() != "cmda-optim v1")
    throw FormatError("checkpoint: bad magic line");
  OptimState st;
  st.beta1 = parse_f64(expect(sc, "beta1", 1)[1]);
  st.beta2 = parse_f64(expect(sc, "beta2", 1)[1]);
  st.eps = parse_f64(expect(sc, "eps", 1)[1]);
  st.t = parse_i64(expect(sc, "t", 1)[1]);
  if (st.t < 0) throw FormatError("checkpoint: negative step count");
  const int n_tensors = parse_int(expect(sc, "tensors", 1)[1]);
  if (n_tensors < 0) throw FormatError("checkpoint: negative tensor count");
  std::size_t total = 0;
  for (int i = 0; i < n_tensors; ++i) {
    const std::vector<std::string> toks = split(sc.line());
    if (toks.size() < 2 || toks[0] != "shape")
      throw FormatError("checkpoint: malformed shape line");
    const int ndim = parse_int(toks[1]);
    if (ndim < 1 || toks.size() != static_cast<std::size_t>(ndim) + 2)
      throw FormatError("checkpoint: malformed shape line");
    std::vector<int> shape;
    for (int d = 0; d < ndim; ++d)
      shape.push_back(parse_int(toks[static_cast<std::size_t>(d) + 2]));
    st.m.emplace_back(shape);
    st.v.emplace_back(shape);
    total += st.m.back().numel();
  }
  const std::uint64_t declared = parse_u64(expect(sc, "payload", 1)[1]);
  if (declared != 2 * total)
    throw FormatError("checkpoint: payload count disagrees with shapes");
  std::vector<Tensor<float>*> ptrs;
  for (auto& t : st.m) ptrs.push_back(&t);
  for (auto& t : st.v) ptrs.push_back(&t);
  read_payload(bytes, sc.pos, 2 * total, std::move(ptrs));
  return st;
}

}  // namespace cmda
