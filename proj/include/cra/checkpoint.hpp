#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "cra/common.hpp"

namespace cra {

// Checkpoints are a pair of files: "<prefix>.manifest", a text table with
// one record per tensor (name, dtype tag, shape, byte offset, byte length),
// and "<prefix>.payload", the concatenated tensor data as little-endian
// 32-bit floats in row-major order.
struct CheckpointEntry {
  std::string name;
  std::string dtype;
  Shape shape;
  int64_t offset = 0;
  int64_t length = 0;
};

class CheckpointWriter {
 public:
  explicit CheckpointWriter(std::string prefix) : prefix_(std::move(prefix)) {}

  template <typename T>
  void add(const std::string& name, const Shape& shape, const T* data);
  // Writes both files; the writer is spent afterwards.
  void finish();

 private:
  std::string prefix_;
  std::vector<CheckpointEntry> entries_;
  std::vector<float> payload_;
  bool finished_ = false;
};

class CheckpointReader {
 public:
  explicit CheckpointReader(const std::string& prefix);

  bool contains(const std::string& name) const;
  const CheckpointEntry& entry(const std::string& name) const;
  const std::vector<CheckpointEntry>& entries() const { return entries_; }

  // Copies one tensor out, converting from the stored 32-bit floats. A
  // missing name or a shape mismatch is a load error naming the tensor.
  template <typename T>
  void read_into(const std::string& name, const Shape& expected,
                 T* dst) const;

 private:
  std::vector<CheckpointEntry> entries_;
  std::unordered_map<std::string, size_t> index_;
  std::vector<float> payload_;
};

}  // namespace cra
