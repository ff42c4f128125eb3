#include "rvm/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "rvm/error.hpp"
#include "rvm/random.hpp"
#include "rvm/retrieval.hpp"
#include "rvm/ssm.hpp"

namespace rvm {

TimingRow summarize_timings(const std::string& name, std::vector<double> samples_ms) {
  if (samples_ms.empty()) throw ContractError("timing summary needs at least one sample");
  std::sort(samples_ms.begin(), samples_ms.end());
  const std::size_t n = samples_ms.size();
  TimingRow row;
  row.name = name;
  row.samples = n;
  row.mean_ms = std::accumulate(samples_ms.begin(), samples_ms.end(), 0.0) / double(n);
  row.median_ms = n % 2 ? samples_ms[n / 2] : 0.5 * (samples_ms[n / 2 - 1] + samples_ms[n / 2]);
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * double(n)));
  row.p95_ms = samples_ms[std::max<std::size_t>(rank, 1) - 1];
  row.low_confidence = n < 5;
  return row;
}

const TimingRow* BenchReport::find(const std::string& name) const {
  for (const auto& r : rows)
    if (r.name == name) return &r;
  return nullptr;
}

double BenchReport::scan_speedup() const {
  const auto* seq = find("scan_sequential");
  const auto* par = find("scan_parallel");
  if (!seq || !par || par->mean_ms <= 0.0) return std::nan("");
  return seq->mean_ms / par->mean_ms;
}

std::string BenchReport::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "name,samples,mean_ms,median_ms,p95_ms,low_confidence\n";
  for (const auto& r : rows)
    os << r.name << ',' << r.samples << ',' << r.mean_ms << ',' << r.median_ms << ',' << r.p95_ms
       << ',' << (r.low_confidence ? 1 : 0) << '\n';
  return os.str();
}

BenchReport BenchReport::from_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != "name,samples,mean_ms,median_ms,p95_ms,low_confidence")
    throw IoError("bench csv: unexpected header");
  BenchReport rep;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 6) throw IoError("bench csv: expected 6 fields in '" + line + "'");
    TimingRow r;
    r.name = f[0];
    r.samples = std::stoull(f[1]);
    r.mean_ms = std::stod(f[2]);
    r.median_ms = std::stod(f[3]);
    r.p95_ms = std::stod(f[4]);
    r.low_confidence = f[5] == "1";
    rep.rows.push_back(r);
  }
  return rep;
}

namespace {

template <class F>
std::vector<double> time_reps(std::size_t reps, F&& f) {
  using clock = std::chrono::steady_clock;
  std::vector<double> out;
  for (std::size_t i = 0; i < reps; ++i) {
    const auto t0 = clock::now();
    f();
    out.push_back(std::chrono::duration<double, std::milli>(clock::now() - t0).count());
  }
  return out;
}

}  // namespace

BenchReport bench(const Pipeline& model, const BenchConfig& cfg) {
  if (cfg.reps < 1) throw ContractError("bench: repetitions must be at least 1");
  Rng rng(12345);
  const auto& pc = model.config().projection;
  Tensor input({1, pc.height, pc.width});
  for (auto& v : input.mutable_data()) v = uniform01(rng);

  BenchReport rep;
  (void)model.embed_input(input, 0);  // warm-up
  rep.rows.push_back(summarize_timings(
      "descriptor_extraction", time_reps(cfg.reps, [&] { (void)model.embed_input(input, 0); })));

  const std::size_t dim = model.config().vlad.output_dim;
  DescriptorDb db(dim);
  std::vector<double> v(dim);
  for (std::size_t i = 0; i < std::max<std::size_t>(cfg.db_size, 1); ++i) {
    for (auto& x : v) x = normal(rng);
    db.add(static_cast<std::uint32_t>(i), v);
  }
  for (auto& x : v) x = normal(rng);
  rep.rows.push_back(summarize_timings(
      "db_search", time_reps(cfg.reps, [&] { (void)db_search(db, v, 1); })));

  const std::size_t m = cfg.scan_length, e = 16, n = 16;
  Tensor delta({1, m, e}), a({e, n}), b({1, m, n}), c({1, m, n}), d({e}), x({1, m, e});
  for (auto& t : delta.mutable_data()) t = uniform(rng, 0.01, 0.1);
  for (auto& t : a.mutable_data()) t = -uniform(rng, 0.5, 2.0);
  for (Tensor* t : {&b, &c, &d, &x})
    for (auto& s : t->mutable_data()) s = normal(rng);
  const auto dssm = ssm::discretize(delta, a, b, ssm::Discretization::euler);
  rep.rows.push_back(summarize_timings(
      "scan_sequential", time_reps(cfg.reps, [&] { (void)ssm::scan_sequential(dssm, c, d, x); })));
  rep.rows.push_back(summarize_timings("scan_parallel", time_reps(cfg.reps, [&] {
    (void)ssm::scan_parallel(dssm, c, d, x, cfg.threads);
  })));
  return rep;
}

}  // namespace rvm
