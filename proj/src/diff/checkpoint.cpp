#include "spatialrl/diff/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>

namespace spatialrl::diff {

namespace {

constexpr std::string_view kMagic = "spatialrl-checkpoint 1";

void put_le(std::string& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xffU));
}

double get_le(const char* p) {
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[b])) << (8 * b);
  return std::bit_cast<double>(bits);
}

}  // namespace

std::string encode_checkpoint(const ParameterSet& params) {
  std::ostringstream header;
  header << kMagic << '\n' << params.size() << '\n';
  std::size_t offset = 0;
  for (const auto& [name, t] : params.entries()) {
    if (name.empty() || name.find_first_of(" \t\n\r") != std::string::npos) {
      throw CheckpointError("checkpoint: parameter name '" + name + "' contains whitespace");
    }
    header << name << ' ' << offset << ' ' << t.rank();
    for (auto d : t.shape()) header << ' ' << d;
    header << '\n';
    offset += t.size() * 8;
  }
  header << "data\n";
  std::string out = header.str();
  out.reserve(out.size() + offset);
  for (const auto& e : params.entries()) {
    for (double v : e.second.data()) put_le(out, v);
  }
  return out;
}

ParameterSet decode_checkpoint(const std::string& bytes) {
  const auto data_marker = bytes.find("\ndata\n");
  if (bytes.rfind(kMagic, 0) != 0 || data_marker == std::string::npos) {
    throw CheckpointError("checkpoint: missing header or data marker");
  }
  const std::size_t data_start = data_marker + 6;
  std::istringstream header(bytes.substr(0, data_marker + 1));
  std::string line;
  std::getline(header, line);
  std::size_t count = 0;
  if (!(header >> count)) throw CheckpointError("checkpoint: bad tensor count");

  ParameterSet out;
  for (std::size_t i = 0; i < count; ++i) {
    std::string name;
    std::size_t offset = 0;
    std::size_t rank = 0;
    if (!(header >> name >> offset >> rank)) throw CheckpointError("checkpoint: truncated manifest at entry " + std::to_string(i));
    Shape shape(rank);
    for (auto& d : shape) {
      if (!(header >> d)) throw CheckpointError("checkpoint: truncated shape for '" + name + "'");
    }
    const std::size_t n = shape_size(shape);
    if (data_start + offset + n * 8 > bytes.size()) {
      throw CheckpointError("checkpoint: data for '" + name + "' runs past end of file");
    }
    std::vector<double> values(n);
    const char* p = bytes.data() + data_start + offset;
    for (std::size_t j = 0; j < n; ++j) values[j] = get_le(p + 8 * j);
    out.add(name, Tensor::from(std::move(shape), std::move(values)));
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params) {
  const std::string bytes = encode_checkpoint(params);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("checkpoint: cannot open '" + path.string() + "' for writing");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw CheckpointError("checkpoint: write failed for '" + path.string() + "'");
}

ParameterSet read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("checkpoint: cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return decode_checkpoint(ss.str());
}

void load_values(const ParameterSet& source, ParameterSet& into) {
  if (source.size() != into.size()) {
    throw CheckpointError("checkpoint: file has " + std::to_string(source.size()) + " tensors, model expects " +
                          std::to_string(into.size()));
  }
  for (const auto& [name, t] : into.entries()) {
    if (!source.contains(name)) throw CheckpointError("checkpoint: missing parameter '" + name + "'");
    const Tensor& src = source.get(name);
    if (src.shape() != t.shape()) {
      throw CheckpointError("checkpoint: dimension mismatch for '" + name + "': file " + shape_string(src.shape()) +
                            ", model " + shape_string(t.shape()));
    }
  }
  for (auto& [name, t] : into.entries()) {
    const Tensor& src = source.get(name);
    std::copy(src.data().begin(), src.data().end(), t.mutable_data().begin());
  }
}

void load_checkpoint(const std::filesystem::path& path, ParameterSet& into) { load_values(read_checkpoint(path), into); }

}  // namespace spatialrl::diff
