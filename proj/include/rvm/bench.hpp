#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "rvm/pipeline.hpp"

namespace rvm {

struct TimingRow {
  std::string name;
  std::size_t samples = 0;
  double mean_ms = 0.0;
  double median_ms = 0.0;
  double p95_ms = 0.0;
  bool low_confidence = false;  // fewer than 5 samples

  bool operator==(const TimingRow&) const = default;
};

/// Mean, median and nearest-rank p95 of wall-time samples in milliseconds.
TimingRow summarize_timings(const std::string& name, std::vector<double> samples_ms);

struct BenchReport {
  std::vector<TimingRow> rows;

  const TimingRow* find(const std::string& name) const;
  /// Sequential over parallel scan time, when both rows exist.
  double scan_speedup() const;
  std::string to_csv() const;
  static BenchReport from_csv(const std::string& text);
};

struct BenchConfig {
  std::size_t reps = 10;
  std::size_t db_size = 1000;
  std::size_t scan_length = 900;
  unsigned threads = 4;
};

/// Times descriptor extraction on random input of the model's input shape,
/// db_search over a random database, and both scan kernels.
BenchReport bench(const Pipeline& model, const BenchConfig& cfg);

}  // namespace rvm
