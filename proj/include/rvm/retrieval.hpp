#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rvm/config.hpp"
#include "rvm/gdg.hpp"
#include "rvm/rangeview.hpp"

namespace rvm {

/// Ordered descriptors with unique scan ids and one shared dimension.
class DescriptorDb {
 public:
  explicit DescriptorDb(std::size_t dim = 256) : dim_(dim) {}

  void add(std::uint32_t id, std::span<const double> values);
  void add(const GlobalDescriptor& g) { add(g.scan_id, g.values); }

  std::size_t size() const { return ids_.size(); }
  bool empty() const { return ids_.empty(); }
  std::size_t dim() const { return dim_; }
  std::uint32_t id(std::size_t i) const { return ids_[i]; }
  std::span<const double> values(std::size_t i) const {
    return {data_.data() + i * dim_, dim_};
  }
  const std::vector<std::uint32_t>& ids() const { return ids_; }

  /// OMDB: magic, u32 count, u32 dim, then u32 id and dim f32 values per entry.
  void save(const std::filesystem::path& path) const;
  static DescriptorDb load(const std::filesystem::path& path);

 private:
  std::size_t dim_;
  std::vector<std::uint32_t> ids_;
  std::vector<double> data_;
};

struct SearchHit {
  std::uint32_t id = 0;
  double distance = 0.0;
};

double euclidean(std::span<const double> a, std::span<const double> b);

/// Exact k nearest entries by Euclidean distance, ascending, ties by id.
std::vector<SearchHit> db_search(const DescriptorDb& db, std::span<const double> query,
                                 std::size_t k);
/// Same, restricted to the entries at `candidates` (indices into db).
std::vector<SearchHit> db_search(const DescriptorDb& db, std::span<const double> query,
                                 std::size_t k, std::span<const std::size_t> candidates);

struct ScoredPair {
  double similarity = 0.0;
  bool positive = false;
};

struct PrPoint {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

struct PrMetrics {
  double auc = 0.0;
  double f1max = 0.0;
  std::vector<PrPoint> curve;  // one point per distinct score, descending threshold
};

/// Threshold sweep over the distinct scores (accept when score >= t).
/// AUC is the trapezoidal area under precision over recall, starting from
/// (recall 0, precision 1). Throws DegenerateInput without both label kinds.
PrMetrics pr_metrics(std::span<const ScoredPair> scores);

struct RecallResult {
  double recall = 0.0;  // NaN when no query was evaluated
  std::size_t evaluated = 0;
  std::size_t excluded = 0;  // queries without any ground-truth positive
};

/// Fraction of queries whose first n ranked ids contain a ground-truth id.
/// In percent mode n is ceil(0.01 · candidates[q]) per query (`candidates`
/// defaults to the ranked-list lengths).
RecallResult recall_at(const std::vector<std::vector<std::uint32_t>>& ranked,
                       const std::vector<std::vector<std::uint32_t>>& truth, std::size_t n,
                       bool percent_mode = false,
                       const std::vector<std::size_t>* candidates = nullptr);

enum class ProtocolKind { loop_closure, place_recognition };

struct EvalProtocol {
  ProtocolKind kind = ProtocolKind::loop_closure;
  std::size_t exclusion_window = 100;
  double distance_threshold = 10.0;
  std::size_t query_step = 1;
  std::size_t db_step = 1;
  double overlap_threshold = 0.3;

  void validate() const;
  static EvalProtocol from_keys(const KeyValues& kv);
  static EvalProtocol load(const std::filesystem::path& path);
  static EvalProtocol place_recognition_defaults();
};

struct LoopClosureReport {
  std::size_t queries = 0;
  std::size_t queries_with_candidates = 0;
  std::size_t queries_with_loops = 0;
  std::size_t positive_rank1 = 0;
  std::optional<PrMetrics> pr;
  RecallResult recall1;
  RecallResult recall1pct;

  /// True when the metrics had to be omitted (no candidates or no positives).
  bool degenerate() const { return !pr.has_value(); }
  std::string to_csv() const;
};

/// Scans are identified by db id in temporal order. A query i searches only
/// ids j < i - exclusion_window; a match is a true loop when the overlap of
/// (i, j) or (j, i) exceeds the threshold. `poses`, when given, must have one
/// entry per scan id.
LoopClosureReport eval_loop_closure(const DescriptorDb& db,
                                    const std::vector<OverlapLabel>& overlaps,
                                    const EvalProtocol& protocol,
                                    const std::vector<Pose>* poses = nullptr);

struct PlaceReport {
  std::size_t queries = 0;
  std::size_t excluded = 0;
  RecallResult ar1, ar5, ar20;

  bool degenerate() const { return ar1.evaluated == 0; }
  std::string to_csv() const;
};

/// Queries sampled every query_step entries, database every db_step; ground
/// truth is every database pose strictly within distance_threshold.
/// Poses are indexed by scan id.
PlaceReport eval_place_recognition(const DescriptorDb& db, const DescriptorDb& queries,
                                   const std::vector<Pose>& db_poses,
                                   const std::vector<Pose>& query_poses,
                                   const EvalProtocol& protocol);

}  // namespace rvm
