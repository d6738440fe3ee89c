#include "inject/archive.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "inject/errors.hpp"

namespace inject {

namespace {

constexpr char kMagic[5] = {'N', 'T', 'A', 'R', '1'};

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

const char* dtype_name(DType t) { return t == DType::f32 ? "f32" : "f64"; }

DType parse_dtype(const std::string& s, const std::string& name) {
  if (s == "f32") return DType::f32;
  if (s == "f64") return DType::f64;
  throw IoError("archive entry " + name + ": unknown dtype " + s);
}

}  // namespace

void write_archive(const std::filesystem::path& path, const NamedTensorMap& entries) {
  nlohmann::json header = nlohmann::json::object();
  std::vector<char> payload;
  for (const auto& [name, entry] : entries) {
    if (shape_numel(entry.shape) != entry.values.size())
      throw DimensionError("archive entry " + name + ": shape " + shape_str(entry.shape) + " holds " +
                           std::to_string(entry.values.size()) + " values");
    const std::size_t offset = payload.size();
    if (entry.dtype == DType::f64) {
      payload.resize(offset + entry.values.size() * sizeof(double));
      std::memcpy(payload.data() + offset, entry.values.data(), entry.values.size() * sizeof(double));
    } else {
      payload.resize(offset + entry.values.size() * sizeof(float));
      for (std::size_t i = 0; i < entry.values.size(); ++i) {
        const float f = static_cast<float>(entry.values[i]);
        std::memcpy(payload.data() + offset + i * sizeof(float), &f, sizeof(float));
      }
    }
    header[name] = {{"dtype", dtype_name(entry.dtype)},
                    {"shape", entry.shape},
                    {"offset", offset},
                    {"byte_length", payload.size() - offset}};
  }
  const std::string text = header.dump();
  const std::uint64_t length = text.size();

  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&length), sizeof length);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

NamedTensorMap read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open archive " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof kMagic + sizeof(std::uint64_t) || !std::equal(kMagic, kMagic + 5, bytes.begin()))
    throw IoError(path.string() + " is not a named-tensor archive");
  std::uint64_t length = 0;
  std::memcpy(&length, bytes.data() + sizeof kMagic, sizeof length);
  const std::size_t header_start = sizeof kMagic + sizeof length;
  if (header_start + length > bytes.size()) throw IoError(path.string() + ": truncated header");
  const auto header = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(header_start),
                                            bytes.begin() + static_cast<std::ptrdiff_t>(header_start + length));
  const std::size_t payload_start = header_start + length;
  const std::size_t payload_size = bytes.size() - payload_start;

  NamedTensorMap entries;
  for (const auto& [name, meta] : header.items()) {
    ArchiveEntry entry;
    entry.dtype = parse_dtype(meta.at("dtype").get<std::string>(), name);
    entry.shape = meta.at("shape").get<Shape>();
    const auto offset = meta.at("offset").get<std::size_t>();
    const auto byte_length = meta.at("byte_length").get<std::size_t>();
    const std::size_t width = entry.dtype == DType::f64 ? sizeof(double) : sizeof(float);
    const std::size_t count = shape_numel(entry.shape);
    if (byte_length != count * width || offset + byte_length > payload_size)
      throw IoError("archive entry " + name + ": inconsistent offset/length");
    const char* src = bytes.data() + payload_start + offset;
    entry.values.resize(count);
    if (entry.dtype == DType::f64) {
      std::memcpy(entry.values.data(), src, byte_length);
    } else {
      for (std::size_t i = 0; i < count; ++i) {
        float f;
        std::memcpy(&f, src + i * sizeof(float), sizeof f);
        entry.values[i] = f;
      }
    }
    entries.emplace(name, std::move(entry));
  }
  return entries;
}

void save_named_tensors(const std::filesystem::path& path, const std::vector<NamedTensor>& params) {
  NamedTensorMap entries;
  for (const auto& p : params) {
    if (entries.count(p.name)) throw ContractError("duplicate parameter name " + p.name);
    const auto v = p.tensor.values();
    entries.emplace(p.name, ArchiveEntry{DType::f64, p.tensor.shape(), std::vector<double>(v.begin(), v.end())});
  }
  write_archive(path, entries);
}

LoadReport assign_named_tensors(const NamedTensorMap& archive, const std::string& prefix,
                                const std::vector<NamedTensor>& params) {
  LoadReport report;
  std::set<std::string> used;
  for (const auto& p : params) {
    const std::string key = prefix + p.name;
    auto it = archive.find(key);
    if (it == archive.end()) {
      report.missing.push_back(p.name);
      continue;
    }
    if (it->second.shape != p.tensor.shape())
      throw DimensionError("parameter " + p.name + ": model shape " + shape_str(p.tensor.shape()) +
                           " but archive shape " + shape_str(it->second.shape));
    Tensor target = p.tensor;
    std::copy(it->second.values.begin(), it->second.values.end(), target.mutable_values().begin());
    used.insert(key);
    report.assigned.push_back(p.name);
  }
  for (const auto& [name, entry] : archive) {
    if (name.rfind(prefix, 0) == 0 && !used.count(name)) report.unused.push_back(name);
  }
  return report;
}

LoadReport load_named_tensors(const std::filesystem::path& path, const std::string& prefix,
                              const std::vector<NamedTensor>& params) {
  return assign_named_tensors(read_archive(path), prefix, params);
}

}  // namespace inject
