#include "ccl/curriculum.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include <boost/multiprecision/cpp_int.hpp>

#include "ccl/error.hpp"
#include "ccl/hash.hpp"
#include "ccl/random.hpp"

namespace ccl::curriculum {

using boost::multiprecision::cpp_rational;

std::vector<std::size_t> bucket_sizes(std::size_t n, std::size_t p) {
  if (p == 0) throw ValidationError("bucket count must be >= 1");
  std::vector<std::size_t> sizes(p, n / p);
  for (std::size_t i = 0; i < n % p; ++i) ++sizes[i];
  return sizes;
}

CurriculumDataset rank_and_partition(std::span<const SampleRecord> records, std::size_t p) {
  if (records.empty()) throw ValidationError("no sample records to partition");
  if (p == 0) throw ValidationError("bucket count must be >= 1");
  if (p > records.size())
    throw ValidationError("cannot split " + std::to_string(records.size()) + " records into " +
                          std::to_string(p) + " buckets");

  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return records[a].accuracy > records[b].accuracy;
  });

  CurriculumDataset ds;
  std::size_t pos = 0;
  for (std::size_t size : bucket_sizes(records.size(), p)) {
    auto& bucket = ds.buckets.emplace_back();
    for (std::size_t i = 0; i < size; ++i, ++pos) bucket.push_back(records[order[pos]].problem_id);
  }
  for (const auto& r : records) {
    if (!ds.accuracy_index.emplace(r.problem_id, r.accuracy).second)
      throw ValidationError("duplicate sample record for \"" + r.problem_id + "\"");
    ds.provenance[r.problem_id] = Provenance::original;
  }
  return ds;
}

std::vector<std::string> mix_with_review(const CurriculumDataset& dataset, std::size_t stage,
                                         double review_ratio, std::uint64_t seed) {
  if (stage < 1 || stage > dataset.buckets.size())
    throw ValidationError("stage " + std::to_string(stage) + " out of range 1.." +
                          std::to_string(dataset.buckets.size()));
  if (!(review_ratio >= 0.0 && review_ratio < 1.0)) throw ValidationError("review_ratio must be in [0, 1)");

  const auto& current = dataset.buckets[stage - 1];
  if (stage == 1) return current;

  std::vector<std::string> pool;
  for (std::size_t b = 0; b + 1 < stage; ++b)
    pool.insert(pool.end(), dataset.buckets[b].begin(), dataset.buckets[b].end());

  // The epsilon keeps products such as 0.2 * 10 from rounding up to 3.
  const double want = std::ceil(review_ratio * static_cast<double>(current.size()) - 1e-9);
  const std::size_t count = std::min(pool.size(), static_cast<std::size_t>(std::max(0.0, want)));

  Rng rng(hash_combine(seed, stage));
  // Partial Fisher-Yates: the first `count` slots become the sample.
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
    std::swap(pool[i], pool[j]);
  }

  std::vector<std::string> out = current;
  out.insert(out.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(count));
  rng.shuffle(std::span<std::string>(out));
  return out;
}

Json PartitionReport::to_json() const {
  Json rows = Json::array();
  for (std::size_t i = 0; i < buckets.size(); ++i) {
    const auto& b = buckets[i];
    rows.push_back({{"bucket", i + 1},
                    {"count", b.count},
                    {"mean_accuracy", b.mean},
                    {"mean_accuracy_exact", b.mean_exact},
                    {"min_accuracy", b.min},
                    {"max_accuracy", b.max},
                    {"adapted", b.adapted}});
  }
  return Json{{"buckets", rows}, {"adapted", adapted}, {"discarded", discarded}};
}

std::string PartitionReport::table() const {
  std::ostringstream out;
  out << "bucket  count  mean_acc  min_acc  max_acc  adapted\n";
  out << std::fixed << std::setprecision(4);
  for (std::size_t i = 0; i < buckets.size(); ++i) {
    const auto& b = buckets[i];
    out << std::setw(6) << i + 1 << std::setw(7) << b.count << std::setw(10) << b.mean << std::setw(9) << b.min
        << std::setw(9) << b.max << std::setw(9) << b.adapted << '\n';
  }
  out << "adapted: " << adapted << "  discarded: " << discarded << '\n';
  return out.str();
}

PartitionReport partition_report(const CurriculumDataset& dataset, std::span<const SampleRecord> records) {
  std::map<std::string, Accuracy> acc = dataset.accuracy_index;
  for (const auto& r : records) acc[r.problem_id] = r.accuracy;

  PartitionReport report;
  for (const auto& bucket : dataset.buckets) {
    BucketStats stats;
    stats.count = bucket.size();
    cpp_rational sum = 0;
    stats.min = 1.0;
    stats.max = 0.0;
    for (const auto& id : bucket) {
      auto it = acc.find(id);
      if (it == acc.end()) throw ValidationError("no accuracy recorded for \"" + id + "\"");
      sum += cpp_rational(it->second.correct, it->second.total);
      stats.min = std::min(stats.min, it->second.value());
      stats.max = std::max(stats.max, it->second.value());
      auto prov = dataset.provenance.find(id);
      if (prov != dataset.provenance.end() && prov->second == Provenance::adapted) ++stats.adapted;
    }
    if (bucket.empty()) {
      stats.min = stats.max = 0.0;
      stats.mean_exact = "0";
    } else {
      const cpp_rational mean = sum / static_cast<long long>(bucket.size());
      stats.mean_exact = boost::multiprecision::numerator(mean).str();
      if (boost::multiprecision::denominator(mean) != 1)
        stats.mean_exact += "/" + boost::multiprecision::denominator(mean).str();
      stats.mean = static_cast<double>(mean);
    }
    report.adapted += stats.adapted;
    report.buckets.push_back(std::move(stats));
  }
  for (const auto& [id, prov] : dataset.provenance)
    if (prov == Provenance::discarded) ++report.discarded;
  return report;
}

void validate_dataset(const CurriculumDataset& dataset, std::span<const std::string> corpus_ids) {
  std::set<std::string> seen;
  for (const auto& bucket : dataset.buckets) {
    for (const auto& id : bucket) {
      if (!seen.insert(id).second) throw ValidationError("\"" + id + "\" appears in more than one bucket");
      auto prov = dataset.provenance.find(id);
      if (prov != dataset.provenance.end() && prov->second == Provenance::discarded)
        throw ValidationError("discarded problem \"" + id + "\" is still in a bucket");
    }
  }
  for (const auto& [id, prov] : dataset.provenance) {
    if (prov == Provenance::discarded && !seen.insert(id).second)
      throw ValidationError("\"" + id + "\" is both bucketed and discarded");
  }
  const std::set<std::string> corpus(corpus_ids.begin(), corpus_ids.end());
  if (seen != corpus) throw ValidationError("buckets plus discarded set do not match the corpus");

  for (std::size_t b = 0; b + 1 < dataset.buckets.size(); ++b) {
    const auto& hi = dataset.buckets[b];
    const auto& lo = dataset.buckets[b + 1];
    if (hi.empty() || lo.empty()) continue;
    auto acc = [&](const std::string& id) {
      auto it = dataset.accuracy_index.find(id);
      if (it == dataset.accuracy_index.end()) throw ValidationError("no accuracy recorded for \"" + id + "\"");
      return it->second;
    };
    Accuracy min_hi = acc(hi.front());
    for (const auto& id : hi) min_hi = std::min(min_hi, acc(id));
    Accuracy max_lo = acc(lo.front());
    for (const auto& id : lo) max_lo = std::max(max_lo, acc(id));
    if (min_hi < max_lo)
      throw ValidationError("bucket " + std::to_string(b + 1) + " is not at least as easy as bucket " +
                            std::to_string(b + 2));
  }
}

Json to_json(const CurriculumDataset& dataset) {
  Json provenance = Json::object();
  for (const auto& [id, p] : dataset.provenance) provenance[id] = to_string(p);
  Json accuracy = Json::object();
  for (const auto& [id, a] : dataset.accuracy_index) accuracy[id] = {{"correct", a.correct}, {"total", a.total}};
  return Json{{"seed", dataset.seed}, {"buckets", dataset.buckets}, {"provenance", provenance}, {"accuracy", accuracy}};
}

CurriculumDataset dataset_from_json(const Json& j) {
  CurriculumDataset ds;
  try {
    ds.seed = j.at("seed").get<std::uint64_t>();
    ds.buckets = j.at("buckets").get<std::vector<std::vector<std::string>>>();
    for (const auto& [id, p] : j.at("provenance").items()) ds.provenance[id] = provenance_from_string(p.get<std::string>());
    for (const auto& [id, a] : j.at("accuracy").items()) {
      Accuracy acc{a.at("correct").get<std::uint64_t>(), a.at("total").get<std::uint64_t>()};
      if (acc.total == 0 || acc.correct > acc.total) throw ValidationError("invalid accuracy for \"" + id + "\"");
      ds.accuracy_index[id] = acc;
    }
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("malformed curriculum manifest: ") + e.what());
  }
  return ds;
}

}  // namespace ccl::curriculum
