#include "imvc/checkpoint.hpp"

#include <fstream>

#include "imvc/binio.hpp"
#include "imvc/error.hpp"

namespace imvc {

namespace {
constexpr std::uint64_t kMaxRank = 8;
constexpr std::uint64_t kMaxName = 4096;
}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open checkpoint for writing: " + path.string());
  os.write(kCheckpointTag.data(), static_cast<std::streamsize>(kCheckpointTag.size()));
  binio::write_u64(os, params.step());
  binio::write_u64(os, params.params().size());
  for (const auto& [name, p] : params.params()) {
    binio::write_u64(os, name.size());
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    const auto& shape = p.value().shape();
    binio::write_u64(os, shape.size());
    for (auto d : shape) binio::write_u64(os, d);
    for (double x : p.value().data()) binio::write_f64(os, x);
  }
  if (!os) throw Error("failed writing checkpoint " + path.string());
}

CheckpointData read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open checkpoint: " + path.string());
  std::string tag(kCheckpointTag.size(), '\0');
  if (!is.read(tag.data(), static_cast<std::streamsize>(tag.size())) || tag != kCheckpointTag) {
    throw FormatError("not an imvcdc checkpoint: " + path.string());
  }
  CheckpointData out;
  out.step = binio::read_u64(is, "step counter");
  const std::uint64_t count = binio::read_u64(is, "entry count");
  for (std::uint64_t e = 0; e < count; ++e) {
    const std::uint64_t len = binio::read_u64(is, "name length");
    if (len > kMaxName) throw FormatError("parameter name too long in " + path.string());
    std::string name(len, '\0');
    if (!is.read(name.data(), static_cast<std::streamsize>(len))) throw FormatError("truncated parameter name");
    const std::uint64_t rank = binio::read_u64(is, "rank");
    if (rank > kMaxRank) throw FormatError("rank too large for " + name);
    std::vector<std::size_t> shape(rank);
    std::uint64_t total = 1;
    for (auto& d : shape) {
      d = binio::read_u64(is, "dimension");
      if (d != 0 && total > (std::uint64_t{1} << 40) / d) throw FormatError("dimension overflow for " + name);
      total *= d;
    }
    std::vector<double> data(total);
    for (auto& x : data) x = binio::read_f64(is, "payload");
    out.tensors.emplace(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return out;
}

void load_checkpoint(const std::filesystem::path& path, ParamStore& params) {
  CheckpointData data = read_checkpoint(path);
  if (data.tensors.size() != params.params().size()) {
    throw FormatError("checkpoint " + path.string() + " has " + std::to_string(data.tensors.size()) +
                      " tensors, store expects " + std::to_string(params.params().size()));
  }
  for (const auto& [name, p] : params.params()) {
    auto it = data.tensors.find(name);
    if (it == data.tensors.end()) throw FormatError("checkpoint lacks parameter " + name);
    if (!it->second.same_shape(p.value())) throw FormatError("shape mismatch for parameter " + name);
  }
  for (const auto& [name, p] : params.params()) {
    Var param = p;
    param.mutable_value() = data.tensors.at(name);
  }
  params.set_step(data.step);
}

}  // namespace imvc
