#include "cra/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace cra {

static_assert(std::endian::native == std::endian::little,
              "payload layout assumes a little-endian host");
static_assert(sizeof(float) == 4);

namespace {

std::string shape_tag(const Shape& shape) {
  std::string s;
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += 'x';
    s += std::to_string(shape[i]);
  }
  return s;
}

Shape parse_shape_tag(const std::string& tag) {
  Shape shape;
  std::string part;
  std::istringstream in(tag);
  while (std::getline(in, part, 'x')) {
    check<IoError>(!part.empty() && part.find_first_not_of("0123456789") ==
                                        std::string::npos,
                   "bad shape tag '", tag, "' in manifest");
    shape.push_back(std::stoi(part));
  }
  check<IoError>(!shape.empty(), "bad shape tag '", tag, "' in manifest");
  return shape;
}

}  // namespace

template <typename T>
void CheckpointWriter::add(const std::string& name, const Shape& shape,
                           const T* data) {
  check<ContractError>(!finished_, "checkpoint writer already finished");
  check<ContractError>(!name.empty() &&
                           name.find_first_of(" \t\n") == std::string::npos,
                       "tensor name '", name, "' is not manifest-safe");
  const int64_t count = numel_of(shape);
  CheckpointEntry e;
  e.name = name;
  e.dtype = "f32";
  e.shape = shape;
  e.offset = (int64_t)payload_.size() * 4;
  e.length = count * 4;
  entries_.push_back(std::move(e));
  payload_.reserve(payload_.size() + count);
  for (int64_t i = 0; i < count; ++i) payload_.push_back((float)data[i]);
}

void CheckpointWriter::finish() {
  check<ContractError>(!finished_, "checkpoint writer already finished");
  finished_ = true;

  std::ofstream manifest(prefix_ + ".manifest");
  check<IoError>(manifest.good(), "cannot write ", prefix_, ".manifest");
  manifest << "crakit-checkpoint 1\n";
  for (const CheckpointEntry& e : entries_)
    manifest << e.name << ' ' << e.dtype << ' ' << shape_tag(e.shape) << ' '
             << e.offset << ' ' << e.length << '\n';
  manifest.close();
  check<IoError>(manifest.good(), "failed writing ", prefix_, ".manifest");

  std::ofstream payload(prefix_ + ".payload", std::ios::binary);
  check<IoError>(payload.good(), "cannot write ", prefix_, ".payload");
  payload.write(reinterpret_cast<const char*>(payload_.data()),
                (std::streamsize)(payload_.size() * 4));
  payload.close();
  check<IoError>(payload.good(), "failed writing ", prefix_, ".payload");
}

CheckpointReader::CheckpointReader(const std::string& prefix) {
  std::ifstream manifest(prefix + ".manifest");
  check<IoError>(manifest.good(), "cannot open ", prefix, ".manifest");
  std::string line;
  check<IoError>(std::getline(manifest, line) &&
                     line == "crakit-checkpoint 1",
                 prefix, ".manifest is not a version-1 checkpoint manifest");
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream in(line);
    CheckpointEntry e;
    std::string tag;
    check<IoError>(
        (bool)(in >> e.name >> e.dtype >> tag >> e.offset >> e.length),
        "garbled manifest record '", line, "'");
    check<IoError>(e.dtype == "f32", "unsupported dtype '", e.dtype,
                   "' for tensor ", e.name);
    e.shape = parse_shape_tag(tag);
    check<IoError>(e.length == numel_of(e.shape) * 4 && e.offset >= 0 &&
                       e.offset % 4 == 0,
                   "inconsistent record for tensor ", e.name);
    check<IoError>(index_.emplace(e.name, entries_.size()).second,
                   "duplicate tensor ", e.name, " in manifest");
    entries_.push_back(std::move(e));
  }

  std::ifstream payload(prefix + ".payload",
                        std::ios::binary | std::ios::ate);
  check<IoError>(payload.good(), "cannot open ", prefix, ".payload");
  const int64_t bytes = (int64_t)payload.tellg();
  check<IoError>(bytes % 4 == 0, prefix, ".payload is not float-aligned");
  payload_.resize(bytes / 4);
  payload.seekg(0);
  payload.read(reinterpret_cast<char*>(payload_.data()), bytes);
  check<IoError>(payload.good() || bytes == 0, "failed reading ", prefix,
                 ".payload");
  for (const CheckpointEntry& e : entries_)
    check<IoError>(e.offset + e.length <= bytes, "tensor ", e.name,
                   " extends past the payload");
}

bool CheckpointReader::contains(const std::string& name) const {
  return index_.count(name) > 0;
}

const CheckpointEntry& CheckpointReader::entry(const std::string& name) const {
  auto it = index_.find(name);
  check<LoadError>(it != index_.end(), "checkpoint has no tensor '", name,
                   "'");
  return entries_[it->second];
}

template <typename T>
void CheckpointReader::read_into(const std::string& name,
                                 const Shape& expected, T* dst) const {
  const CheckpointEntry& e = entry(name);
  check<LoadError>(e.shape == expected, "tensor '", name, "' has shape ",
                   shape_str(e.shape), " but the model expects ",
                   shape_str(expected));
  const float* src = payload_.data() + e.offset / 4;
  const int64_t count = numel_of(expected);
  for (int64_t i = 0; i < count; ++i) dst[i] = (T)src[i];
}

template void CheckpointWriter::add<float>(const std::string&, const Shape&,
                                           const float*);
template void CheckpointWriter::add<double>(const std::string&, const Shape&,
                                            const double*);
template void CheckpointReader::read_into<float>(const std::string&,
                                                 const Shape&, float*) const;
template void CheckpointReader::read_into<double>(const std::string&,
                                                  const Shape&,
                                                  double*) const;

}  // namespace cra
