#include <array>
#include <bit>
#include <cstring>
#include <istream>
#include <ostream>

#include "fgm/autodiff.hpp"

namespace fgm::ad {

namespace {

constexpr std::array<char, 4> kMagic{'F', 'G', 'M', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
  std::array<char, 4> b{};
  for (int i = 0; i < 4; ++i) b[static_cast<std::size_t>(i)] = static_cast<char>((v >> (8 * i)) & 0xFFu);
  out.write(b.data(), 4);
}

void put_f64(std::ostream& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  std::array<char, 8> b{};
  for (int i = 0; i < 8; ++i) b[static_cast<std::size_t>(i)] = static_cast<char>((bits >> (8 * i)) & 0xFFu);
  out.write(b.data(), 8);
}

void read_exact(std::istream& in, char* dst, std::size_t n, const char* what) {
  in.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) {
    throw ConfigError(std::string("checkpoint truncated while reading ") + what);
  }
}

std::uint32_t get_u32(std::istream& in, const char* what) {
  std::array<unsigned char, 4> b{};
  read_exact(in, reinterpret_cast<char*>(b.data()), 4, what);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[static_cast<std::size_t>(i)]) << (8 * i);
  return v;
}

double get_f64(std::istream& in) {
  std::array<unsigned char, 8> b{};
  read_exact(in, reinterpret_cast<char*>(b.data()), 8, "values");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[static_cast<std::size_t>(i)]) << (8 * i);
  return std::bit_cast<double>(v);
}

}  // namespace

std::string_view group_name(Group g) {
  switch (g) {
    case Group::Theta:
      return "theta";
    case Group::Phi:
      return "phi";
    case Group::Eta:
      return "eta";
  }
  return "unknown";
}

ParamId ParameterStore::add(std::string name, Group group, Matrix init) {
  if (by_name_.contains(name)) throw StructuralError("duplicate parameter name '" + name + "'");
  const std::size_t index = params_.size();
  by_name_.emplace(name, index);
  params_.push_back(Parameter{std::move(name), group, std::move(init)});
  return ParamId{index};
}

std::optional<ParamId> ParameterStore::find(std::string_view name) const {
  auto it = by_name_.find(std::string(name));
  if (it == by_name_.end()) return std::nullopt;
  return ParamId{it->second};
}

std::size_t ParameterStore::group_size(Group g) const {
  std::size_t n = 0;
  for (const auto& p : params_) {
    if (p.group == g) n += static_cast<std::size_t>(p.value.size());
  }
  return n;
}

void ParameterStore::assign_from(const ParameterStore& other) {
  if (other.size() != size()) {
    throw ConfigError("checkpoint has " + std::to_string(other.size()) + " parameters, model has " +
                      std::to_string(size()));
  }
  for (std::size_t i = 0; i < size(); ++i) {
    const Parameter& src = other.params_[i];
    Parameter& dst = params_[i];
    if (src.name != dst.name || src.group != dst.group || src.value.rows() != dst.value.rows() ||
        src.value.cols() != dst.value.cols()) {
      throw ConfigError("checkpoint parameter '" + src.name + "' does not match model parameter '" + dst.name + "'");
    }
    dst.value = src.value;
  }
}

void ParameterStore::save(std::ostream& out) const {
  out.write(kMagic.data(), kMagic.size());
  put_u32(out, kCheckpointVersion);
  for (const auto& p : params_) {
    put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    out.put(static_cast<char>(p.group));
    put_u32(out, static_cast<std::uint32_t>(p.value.rows()));
    put_u32(out, static_cast<std::uint32_t>(p.value.cols()));
    for (Eigen::Index r = 0; r < p.value.rows(); ++r) {
      for (Eigen::Index c = 0; c < p.value.cols(); ++c) put_f64(out, p.value(r, c));
    }
  }
  if (!out) throw ConfigError("failed writing checkpoint");
}

ParameterStore ParameterStore::load(std::istream& in) {
  std::array<char, 4> magic{};
  read_exact(in, magic.data(), 4, "magic");
  if (magic != kMagic) throw ConfigError("not a checkpoint file (bad magic)");
  const std::uint32_t version = get_u32(in, "version");
  if (version != kCheckpointVersion) {
    throw ConfigError("unsupported checkpoint version " + std::to_string(version));
  }
  ParameterStore store;
  while (in.peek() != std::char_traits<char>::eof()) {
    const std::uint32_t len = get_u32(in, "name length");
    std::string name(len, '\0');
    read_exact(in, name.data(), len, "name");
    char tag = 0;
    read_exact(in, &tag, 1, "group tag");
    if (static_cast<unsigned char>(tag) > 2) throw ConfigError("bad group tag for '" + name + "'");
    const std::uint32_t rows = get_u32(in, "rows");
    const std::uint32_t cols = get_u32(in, "cols");
    Matrix value(rows, cols);
    for (std::uint32_t r = 0; r < rows; ++r) {
      for (std::uint32_t c = 0; c < cols; ++c) value(r, c) = get_f64(in);
    }
    store.add(std::move(name), static_cast<Group>(tag), std::move(value));
  }
  return store;
}

}  // namespace fgm::ad
