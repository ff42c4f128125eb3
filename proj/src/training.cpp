#include "rvm/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "rvm/error.hpp"
#include "rvm/ops.hpp"
#include "rvm/retrieval.hpp"

namespace rvm {

void LossConfig::validate() const {
  if (!(alpha > 0.0)) throw ConfigError("loss margin alpha must be positive");
  if (!(lambda >= 0.0)) throw ConfigError("loss lambda must be nonnegative");
}

double sq_dist(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw DimensionError("sq_dist: dims " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()));
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

double sq_dist(const GlobalDescriptor& a, const GlobalDescriptor& b) {
  return sq_dist(a.values, b.values);
}

namespace {

void require_sets(std::span<const Tensor> pos, std::span<const Tensor> neg, const char* what) {
  if (pos.empty()) throw ContractError(std::string(what) + ": empty positive set");
  if (neg.empty()) throw ContractError(std::string(what) + ": empty negative set");
}

// Up to k_p positives and k_n negatives drawn without replacement.
TrainingTuple sample_members(const TrainingTuple& pool, std::size_t k_p, std::size_t k_n, Rng& rng) {
  TrainingTuple t = pool;
  if (t.positives.size() > k_p) {
    shuffle(std::span<std::size_t>(t.positives), rng);
    t.positives.resize(k_p);
  }
  if (t.negatives.size() > k_n) {
    shuffle(std::span<std::size_t>(t.negatives), rng);
    t.negatives.resize(k_n);
  }
  return t;
}

std::vector<double> distances(const Tensor& q, std::span<const Tensor> set) {
  std::vector<double> d;
  d.reserve(set.size());
  for (const auto& t : set) d.push_back(sq_dist(q.data(), t.data()));
  return d;
}

}  // namespace

Tensor triplet_loss(const Tensor& q, std::span<const Tensor> positives,
                    std::span<const Tensor> negatives, const LossConfig& cfg, Rng& rng) {
  cfg.validate();
  require_sets(positives, negatives, "triplet_loss");
  std::vector<std::size_t> pi(positives.size()), ni(negatives.size());
  std::iota(pi.begin(), pi.end(), std::size_t{0});
  std::iota(ni.begin(), ni.end(), std::size_t{0});
  shuffle(std::span<std::size_t>(pi), rng);
  shuffle(std::span<std::size_t>(ni), rng);
  const std::size_t pairs = std::min(pi.size(), ni.size());
  Tensor total;
  for (std::size_t i = 0; i < pairs; ++i) {
    Tensor term = add_scalar(sub(rvm::sq_dist(q, positives[pi[i]]), rvm::sq_dist(q, negatives[ni[i]])),
                             cfg.alpha);
    term = relu(term);
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

std::pair<std::size_t, std::size_t> mine_hardest(std::span<const double> pos_dist,
                                                 std::span<const double> neg_dist) {
  if (pos_dist.empty() || neg_dist.empty())
    throw ContractError("mine_hardest: empty positive or negative set");
  std::size_t hp = 0, hn = 0;
  for (std::size_t i = 1; i < pos_dist.size(); ++i)
    if (pos_dist[i] > pos_dist[hp]) hp = i;
  for (std::size_t i = 1; i < neg_dist.size(); ++i)
    if (neg_dist[i] < neg_dist[hn]) hn = i;
  return {hp, hn};
}

std::pair<std::size_t, std::size_t> mine_hardest(const Tensor& q,
                                                 std::span<const Tensor> positives,
                                                 std::span<const Tensor> negatives) {
  require_sets(positives, negatives, "mine_hardest");
  const auto dp = distances(q, positives);
  const auto dn = distances(q, negatives);
  return mine_hardest(dp, dn);
}

Tensor imtrihard_loss(const Tensor& q, std::span<const Tensor> positives,
                      std::span<const Tensor> negatives, const LossConfig& cfg) {
  cfg.validate();
  require_sets(positives, negatives, "imtrihard_loss");
  const auto [hp, hn] = mine_hardest(q, positives, negatives);
  const double kp = static_cast<double>(cfg.k_p ? cfg.k_p : positives.size());
  const double kn = static_cast<double>(cfg.k_n ? cfg.k_n : negatives.size());
  Tensor pos_sum;
  for (const auto& p : positives) {
    Tensor d = rvm::sq_dist(q, p);
    pos_sum = pos_sum.defined() ? add(pos_sum, d) : d;
  }
  const Tensor mean_term = scale(pos_sum, cfg.lambda / static_cast<double>(positives.size()));
  const Tensor hard_pos = scale(add_scalar(rvm::sq_dist(q, positives[hp]), cfg.alpha), kp);
  const Tensor hard_neg = scale(rvm::sq_dist(q, negatives[hn]), kn);
  Tensor loss = sub(add(mean_term, hard_pos), hard_neg);
  return cfg.clamp_at_zero ? relu(loss) : loss;
}

Tensor compute_loss(const Tensor& q, std::span<const Tensor> positives,
                    std::span<const Tensor> negatives, const LossConfig& cfg, Rng& rng) {
  return cfg.kind == LossKind::triplet ? triplet_loss(q, positives, negatives, cfg, rng)
                                       : imtrihard_loss(q, positives, negatives, cfg);
}

void TrainConfig::validate() const {
  loss.validate();
  if (!(lr >= 0.0)) throw ConfigError("learning rate must be nonnegative");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (k_p < 1 || k_n < 1) throw ConfigError("k_p and k_n must be at least 1");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0))
    throw ConfigError("val_fraction must lie in [0, 1)");
}

TrainConfig TrainConfig::from_keys(const KeyValues& kv) {
  TrainConfig c;
  const std::string loss = kv.get("loss", "imtrihard");
  if (loss == "imtrihard") c.loss.kind = LossKind::imtrihard;
  else if (loss == "triplet") c.loss.kind = LossKind::triplet;
  else throw ConfigError("loss must be imtrihard or triplet, got '" + loss + "'");
  c.loss.alpha = kv.get_double("alpha", c.loss.alpha);
  c.loss.lambda = kv.get_double("lambda", c.loss.lambda);
  c.loss.clamp_at_zero = kv.get_bool("clamp_at_zero", c.loss.clamp_at_zero);
  c.loss.k_p = kv.get_size("loss_k_p", 0);
  c.loss.k_n = kv.get_size("loss_k_n", 0);
  c.lr = kv.get_double("lr", c.lr);
  c.epochs = kv.get_size("epochs", c.epochs);
  c.k_p = kv.get_size("k_p", c.k_p);
  c.k_n = kv.get_size("k_n", c.k_n);
  c.seed = kv.get_u64("seed", c.seed);
  c.overlap_threshold = kv.get_double("overlap_threshold", c.overlap_threshold);
  c.max_steps = kv.get_size("max_steps", c.max_steps);
  c.val_fraction = kv.get_double("val_fraction", c.val_fraction);
  c.validate();
  return c;
}

std::string TrainConfig::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "loss=" << (loss.kind == LossKind::triplet ? "triplet" : "imtrihard") << "\n"
     << "alpha=" << loss.alpha << "\n"
     << "lambda=" << loss.lambda << "\n"
     << "clamp_at_zero=" << (loss.clamp_at_zero ? "true" : "false") << "\n"
     << "lr=" << lr << "\n"
     << "epochs=" << epochs << "\n"
     << "k_p=" << k_p << "\n"
     << "k_n=" << k_n << "\n"
     << "seed=" << seed << "\n"
     << "overlap_threshold=" << overlap_threshold << "\n"
     << "max_steps=" << max_steps << "\n"
     << "val_fraction=" << val_fraction << "\n";
  return os.str();
}

std::string TrainingReport::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,mean_loss,val_f1max\n";
  for (const auto& e : epochs) {
    os << e.epoch << ',' << e.mean_loss << ',';
    if (!std::isnan(e.val_f1max)) os << e.val_f1max;
    os << "\n";
  }
  return os.str();
}

double validation_f1max(const Pipeline& model, const std::vector<Tensor>& inputs,
                        std::span<const TrainingTuple> tuples) {
  std::map<std::size_t, GlobalDescriptor> cache;
  const auto desc = [&](std::size_t i) -> const GlobalDescriptor& {
    auto it = cache.find(i);
    if (it == cache.end())
      it = cache.emplace(i, model.embed_input(inputs.at(i), static_cast<std::uint32_t>(i))).first;
    return it->second;
  };
  std::vector<ScoredPair> pairs;
  for (const auto& t : tuples) {
    const auto& q = desc(t.query);
    for (auto p : t.positives) pairs.push_back({-std::sqrt(sq_dist(q, desc(p))), true});
    for (auto n : t.negatives) pairs.push_back({-std::sqrt(sq_dist(q, desc(n))), false});
  }
  return pr_metrics(pairs).f1max;
}

double nearest_neighbor_recall(const std::vector<GlobalDescriptor>& descriptors,
                               const std::vector<std::size_t>& group) {
  if (descriptors.size() != group.size())
    throw ContractError("nearest_neighbor_recall: group ids do not match descriptors");
  if (descriptors.size() < 2) throw ContractError("nearest_neighbor_recall: need two descriptors");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < descriptors.size(); ++i) {
    std::size_t best = i == 0 ? 1 : 0;
    double best_d = sq_dist(descriptors[i], descriptors[best]);
    for (std::size_t j = 0; j < descriptors.size(); ++j) {
      if (j == i) continue;
      const double d = sq_dist(descriptors[i], descriptors[j]);
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    hits += group[best] == group[i] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(descriptors.size());
}

TrainingReport train(Pipeline& model, const std::vector<Tensor>& inputs,
                     const std::vector<TrainingTuple>& tuples, const TrainConfig& cfg,
                     const std::optional<std::filesystem::path>& out_dir,
                     const TrainHooks& hooks) {
  cfg.validate();
  if (tuples.empty()) throw DegenerateInput("training needs at least one tuple");
  for (const auto& t : tuples) {
    if (t.positives.empty() || t.negatives.empty())
      throw ContractError("training tuple for query " + std::to_string(t.query) +
                          " lacks positives or negatives");
    (void)inputs.at(t.query);
    for (auto i : t.positives) (void)inputs.at(i);
    for (auto i : t.negatives) (void)inputs.at(i);
  }
  std::size_t n_val = static_cast<std::size_t>(std::floor(cfg.val_fraction * double(tuples.size())));
  if (n_val >= tuples.size()) n_val = 0;
  const std::size_t n_train = tuples.size() - n_val;
  const std::span<const TrainingTuple> val(tuples.data() + n_train, n_val);

  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    model.config().save(*out_dir / "pipeline.cfg");
    std::ofstream(*out_dir / "train.cfg") << cfg.to_text();
  }

  TrainingReport report;
  report.train_tuples = n_train;
  report.val_tuples = n_val;
  auto& params = model.parameters();
  AdamState adam(AdamConfig{cfg.lr});
  Rng rng(cfg.seed);
  bool stop = false;
  for (std::size_t epoch = 1; epoch <= cfg.epochs && !stop; ++epoch) {
    std::vector<std::size_t> order(n_train);
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(std::span<std::size_t>(order), rng);
    double loss_sum = 0.0;
    std::size_t count = 0;
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
      if (cfg.max_steps && report.steps >= cfg.max_steps) {
        stop = true;
        break;
      }
      const TrainingTuple t = sample_members(tuples[order[pos]], cfg.k_p, cfg.k_n, rng);
      Tape tape;
      Tensor loss;
      {
        TapeScope scope(tape);
        const Tensor q = model.descriptor(inputs[t.query], rng, true);
        std::vector<Tensor> ps, ns;
        for (auto i : t.positives) ps.push_back(model.descriptor(inputs[i], rng, true));
        for (auto i : t.negatives) ns.push_back(model.descriptor(inputs[i], rng, true));
        loss = compute_loss(q, ps, ns, cfg.loss, rng);
      }
      const double value = loss.item();
      if (!std::isfinite(value))
        throw TrainingDiverged("non-finite loss at epoch " + std::to_string(epoch) + ", tuple " +
                               std::to_string(order[pos]) + " (query scan " +
                               std::to_string(t.query) + ")");
      if (loss.requires_grad()) tape.backward(loss);
      for (auto& p : params) p.value.grad_buffer();
      adam_step(params, adam);
      loss_sum += value;
      ++count;
      ++report.steps;
    }
    if (count == 0) break;
    EpochReport er;
    er.epoch = epoch;
    er.mean_loss = loss_sum / static_cast<double>(count);
    er.val_f1max = val.empty() ? std::numeric_limits<double>::quiet_NaN()
                               : validation_f1max(model, inputs, val);
    report.epochs.push_back(er);
    if (out_dir) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%03zu.omck", epoch);
      model.save(*out_dir / name);
      std::ofstream(*out_dir / "report.csv") << report.to_csv();
    }
    if (hooks.on_epoch && !hooks.on_epoch(er)) stop = true;
  }
  if (out_dir) {
    model.save(*out_dir / "model.omck");
    std::ofstream(*out_dir / "report.csv") << report.to_csv();
  }
  return report;
}

}  // namespace rvm
