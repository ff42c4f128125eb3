#include "rvm/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "rvm/binio.hpp"
#include "rvm/error.hpp"

namespace rvm {

void DescriptorDb::add(std::uint32_t id, std::span<const double> values) {
  if (values.size() != dim_)
    throw DimensionError("descriptor of dim " + std::to_string(values.size()) +
                         " added to a db of dim " + std::to_string(dim_));
  if (std::find(ids_.begin(), ids_.end(), id) != ids_.end())
    throw ContractError("duplicate scan id " + std::to_string(id) + " in descriptor db");
  ids_.push_back(id);
  data_.insert(data_.end(), values.begin(), values.end());
}

void DescriptorDb::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  binio::write_magic(os, "OMDB");
  binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(size()));
  binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(dim_));
  for (std::size_t i = 0; i < size(); ++i) {
    binio::write_le<std::uint32_t>(os, ids_[i]);
    for (double v : values(i)) binio::write_le<float>(os, static_cast<float>(v));
  }
  if (!os) throw IoError("write failed for " + path.string());
}

DescriptorDb DescriptorDb::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  binio::expect_magic(is, "OMDB", path.string());
  const auto count = binio::read_le<std::uint32_t>(is);
  const auto dim = binio::read_le<std::uint32_t>(is);
  if (dim == 0) throw IoError(path.string() + ": zero descriptor dimension");
  DescriptorDb db(dim);
  std::vector<double> v(dim);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto id = binio::read_le<std::uint32_t>(is);
    for (auto& x : v) x = binio::read_le<float>(is);
    db.add(id, v);
  }
  return db;
}

double euclidean(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw DimensionError("distance between descriptors of dims " + std::to_string(a.size()) +
                         " and " + std::to_string(b.size()));
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

std::vector<SearchHit> db_search(const DescriptorDb& db, std::span<const double> query,
                                 std::size_t k, std::span<const std::size_t> candidates) {
  if (k < 1) throw ContractError("db_search: k must be at least 1");
  if (db.empty()) throw ContractError("db_search: empty database");
  std::vector<SearchHit> hits;
  hits.reserve(candidates.size());
  for (auto i : candidates) hits.push_back({db.id(i), euclidean(db.values(i), query)});
  const auto less = [](const SearchHit& a, const SearchHit& b) {
    return a.distance != b.distance ? a.distance < b.distance : a.id < b.id;
  };
  const std::size_t keep = std::min(k, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(keep), hits.end(), less);
  hits.resize(keep);
  return hits;
}

std::vector<SearchHit> db_search(const DescriptorDb& db, std::span<const double> query,
                                 std::size_t k) {
  std::vector<std::size_t> all(db.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return db_search(db, query, k, all);
}

PrMetrics pr_metrics(std::span<const ScoredPair> scores) {
  std::size_t total_pos = 0;
  for (const auto& s : scores) {
    if (!std::isfinite(s.similarity)) throw ContractError("pr_metrics: non-finite score");
    total_pos += s.positive ? 1 : 0;
  }
  if (total_pos == 0 || total_pos == scores.size())
    throw DegenerateInput("pr_metrics needs at least one positive and one negative label");
  std::vector<ScoredPair> sorted(scores.begin(), scores.end());
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const ScoredPair& a, const ScoredPair& b) { return a.similarity > b.similarity; });
  PrMetrics out;
  std::size_t tp = 0, fp = 0;
  double prev_r = 0.0, prev_p = 1.0;
  for (std::size_t i = 0; i < sorted.size();) {
    const double t = sorted[i].similarity;
    for (; i < sorted.size() && sorted[i].similarity == t; ++i) (sorted[i].positive ? tp : fp) += 1;
    const double p = static_cast<double>(tp) / static_cast<double>(tp + fp);
    const double r = static_cast<double>(tp) / static_cast<double>(total_pos);
    const double f1 = tp == 0 ? 0.0 : 2.0 * p * r / (p + r);
    out.f1max = std::max(out.f1max, f1);
    out.auc += (r - prev_r) * (p + prev_p) / 2.0;
    prev_r = r;
    prev_p = p;
    out.curve.push_back({t, p, r});
  }
  return out;
}

RecallResult recall_at(const std::vector<std::vector<std::uint32_t>>& ranked,
                       const std::vector<std::vector<std::uint32_t>>& truth, std::size_t n,
                       bool percent_mode, const std::vector<std::size_t>* candidates) {
  if (ranked.size() != truth.size())
    throw ContractError("recall_at: " + std::to_string(ranked.size()) + " result lists for " +
                        std::to_string(truth.size()) + " ground-truth sets");
  if (candidates && candidates->size() != ranked.size())
    throw ContractError("recall_at: candidate counts do not match the query count");
  if (!percent_mode && n < 1) throw ContractError("recall_at: N must be at least 1");
  RecallResult out;
  std::size_t hits = 0;
  for (std::size_t q = 0; q < ranked.size(); ++q) {
    if (truth[q].empty()) {
      ++out.excluded;
      continue;
    }
    ++out.evaluated;
    std::size_t top = n;
    if (percent_mode) {
      const std::size_t pool = candidates ? (*candidates)[q] : ranked[q].size();
      top = static_cast<std::size_t>(std::ceil(0.01 * static_cast<double>(pool)));
    }
    top = std::min(top, ranked[q].size());
    const std::set<std::uint32_t> gt(truth[q].begin(), truth[q].end());
    for (std::size_t r = 0; r < top; ++r)
      if (gt.count(ranked[q][r])) {
        ++hits;
        break;
      }
  }
  out.recall = out.evaluated ? static_cast<double>(hits) / static_cast<double>(out.evaluated)
                             : std::numeric_limits<double>::quiet_NaN();
  return out;
}

void EvalProtocol::validate() const {
  if (query_step < 1 || db_step < 1) throw ConfigError("protocol steps must be at least 1");
  if (!(overlap_threshold > 0.0)) throw ConfigError("protocol overlap threshold must be positive");
  if (kind == ProtocolKind::place_recognition && distance_threshold < 0.0)
    throw ConfigError("protocol distance threshold must be nonnegative");
}

EvalProtocol EvalProtocol::from_keys(const KeyValues& kv) {
  EvalProtocol p;
  const std::string kind = kv.get("kind", "loop_closure");
  if (kind == "loop_closure") {
    p.kind = ProtocolKind::loop_closure;
  } else if (kind == "place_recognition") {
    p = place_recognition_defaults();
  } else {
    throw ConfigError("protocol kind must be loop_closure or place_recognition, got '" + kind + "'");
  }
  p.exclusion_window = kv.get_size("exclusion_window", p.exclusion_window);
  p.distance_threshold = kv.get_double("distance_threshold", p.distance_threshold);
  p.query_step = kv.get_size("query_step", p.query_step);
  p.db_step = kv.get_size("db_step", p.db_step);
  p.overlap_threshold = kv.get_double("overlap_threshold", p.overlap_threshold);
  p.validate();
  return p;
}

EvalProtocol EvalProtocol::load(const std::filesystem::path& path) {
  return from_keys(KeyValues::load(path));
}

EvalProtocol EvalProtocol::place_recognition_defaults() {
  EvalProtocol p;
  p.kind = ProtocolKind::place_recognition;
  p.query_step = 5;
  p.db_step = 1;
  return p;
}

namespace {

std::string fmt(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::string LoopClosureReport::to_csv() const {
  std::ostringstream os;
  os << "metric,value\n"
     << "queries," << queries << "\n"
     << "queries_with_candidates," << queries_with_candidates << "\n"
     << "queries_with_loops," << queries_with_loops << "\n"
     << "positive_rank1," << positive_rank1 << "\n";
  if (pr) {
    os << "auc," << fmt(pr->auc) << "\n"
       << "f1max," << fmt(pr->f1max) << "\n";
  } else {
    os << "auc,\nf1max,\n";
  }
  os << "recall@1," << fmt(recall1.recall) << "\n"
     << "recall@1%," << fmt(recall1pct.recall) << "\n"
     << "recall_excluded," << recall1.excluded << "\n"
     << "status," << (degenerate() ? "degenerate" : "ok") << "\n";
  return os.str();
}

LoopClosureReport eval_loop_closure(const DescriptorDb& db,
                                    const std::vector<OverlapLabel>& overlaps,
                                    const EvalProtocol& protocol, const std::vector<Pose>* poses) {
  protocol.validate();
  std::map<std::pair<std::uint32_t, std::uint32_t>, double> overlap;
  for (const auto& l : overlaps) {
    const auto a = static_cast<std::uint32_t>(l.query), b = static_cast<std::uint32_t>(l.candidate);
    overlap[{std::min(a, b), std::max(a, b)}] =
        std::max(overlap[{std::min(a, b), std::max(a, b)}], l.overlap);
  }
  if (poses)
    for (auto id : db.ids())
      if (id >= poses->size())
        throw ContractError("scan id " + std::to_string(id) + " has no pose (" +
                            std::to_string(poses->size()) + " poses)");
  const auto is_loop = [&](std::uint32_t a, std::uint32_t b) {
    const auto it = overlap.find({std::min(a, b), std::max(a, b)});
    return it != overlap.end() && it->second > protocol.overlap_threshold;
  };

  LoopClosureReport rep;
  std::vector<ScoredPair> scored;
  std::vector<std::vector<std::uint32_t>> ranked, truth;
  std::vector<std::size_t> pool;
  for (std::size_t qi = 0; qi < db.size(); ++qi) {
    ++rep.queries;
    const std::uint32_t qid = db.id(qi);
    std::vector<std::size_t> cands;
    for (std::size_t j = 0; j < db.size(); ++j)
      if (static_cast<std::uint64_t>(db.id(j)) + protocol.exclusion_window < qid) cands.push_back(j);
    if (cands.empty()) continue;
    ++rep.queries_with_candidates;
    const auto hits = db_search(db, db.values(qi), cands.size(), cands);
    std::vector<std::uint32_t> order, gt;
    for (const auto& h : hits) order.push_back(h.id);
    for (auto j : cands)
      if (is_loop(qid, db.id(j))) gt.push_back(db.id(j));
    if (!gt.empty()) ++rep.queries_with_loops;
    const bool correct = is_loop(qid, hits.front().id);
    rep.positive_rank1 += correct ? 1 : 0;
    scored.push_back({-hits.front().distance, correct});
    ranked.push_back(std::move(order));
    truth.push_back(std::move(gt));
    pool.push_back(cands.size());
  }
  if (rep.positive_rank1 > 0 && rep.positive_rank1 < scored.size()) rep.pr = pr_metrics(scored);
  rep.recall1 = recall_at(ranked, truth, 1);
  rep.recall1pct = recall_at(ranked, truth, 0, true, &pool);
  if (rep.positive_rank1 > 0 && rep.positive_rank1 == scored.size()) {
    // Every accepted rank-1 match is correct: precision is 1 at every threshold.
    PrMetrics perfect;
    perfect.auc = 1.0;
    perfect.f1max = 1.0;
    rep.pr = perfect;
  }
  return rep;
}

std::string PlaceReport::to_csv() const {
  std::ostringstream os;
  os << "metric,value\n"
     << "queries," << queries << "\n"
     << "excluded," << excluded << "\n"
     << "AR@1," << fmt(ar1.recall) << "\n"
     << "AR@5," << fmt(ar5.recall) << "\n"
     << "AR@20," << fmt(ar20.recall) << "\n"
     << "status," << (degenerate() ? "degenerate" : "ok") << "\n";
  return os.str();
}

PlaceReport eval_place_recognition(const DescriptorDb& db, const DescriptorDb& queries,
                                   const std::vector<Pose>& db_poses,
                                   const std::vector<Pose>& query_poses,
                                   const EvalProtocol& protocol) {
  protocol.validate();
  if (db.empty()) throw ContractError("place recognition: empty database");
  if (db.dim() != queries.dim())
    throw DimensionError("place recognition: database and query descriptors differ in dim");
  std::vector<std::size_t> dbsel;
  for (std::size_t j = 0; j < db.size(); j += protocol.db_step) {
    if (db.id(j) >= db_poses.size())
      throw ContractError("database scan " + std::to_string(db.id(j)) + " has no pose");
    dbsel.push_back(j);
  }
  PlaceReport rep;
  std::vector<std::vector<std::uint32_t>> ranked, truth;
  for (std::size_t q = 0; q < queries.size(); q += protocol.query_step) {
    const auto qid = queries.id(q);
    if (qid >= query_poses.size())
      throw ContractError("query scan " + std::to_string(qid) + " has no pose");
    ++rep.queries;
    const auto& tq = query_poses[qid].translation;
    std::vector<std::uint32_t> gt;
    for (auto j : dbsel) {
      const auto& tj = db_poses[db.id(j)].translation;
      const double d = std::hypot(tq[0] - tj[0], tq[1] - tj[1], tq[2] - tj[2]);
      if (d < protocol.distance_threshold) gt.push_back(db.id(j));
    }
    const auto hits = db_search(db, queries.values(q), 20, dbsel);
    std::vector<std::uint32_t> order;
    for (const auto& h : hits) order.push_back(h.id);
    ranked.push_back(std::move(order));
    truth.push_back(std::move(gt));
  }
  rep.ar1 = recall_at(ranked, truth, 1);
  rep.ar5 = recall_at(ranked, truth, 5);
  rep.ar20 = recall_at(ranked, truth, 20);
  rep.excluded = rep.ar1.excluded;
  return rep;
}

}  // namespace rvm
