#pragma once

#include <cstddef>
#include <vector>

#include "darkforge/image.hpp"
#include "darkforge/raw_core.hpp"

namespace darkforge {

/// One aligned training triple: short-exposure colour mosaic, long-exposure
/// monochrome ground truth and RGB ground truth, all at sensor resolution.
struct TrainingSample {
  BayerRaw input;
  MonoRaw mono_gt;
  RgbImage rgb_gt;
  double ratio = 1.0;
};

class Dataset {
 public:
  virtual ~Dataset() = default;
  virtual std::size_t size() const = 0;
  virtual TrainingSample get(std::size_t index) const = 0;
};

class InMemoryDataset final : public Dataset {
 public:
  InMemoryDataset() = default;
  explicit InMemoryDataset(std::vector<TrainingSample> samples) : samples_(std::move(samples)) {}

  void add(TrainingSample s) { samples_.push_back(std::move(s)); }
  std::size_t size() const override { return samples_.size(); }
  TrainingSample get(std::size_t index) const override { return samples_.at(index); }

 private:
  std::vector<TrainingSample> samples_;
};

}  // namespace darkforge
