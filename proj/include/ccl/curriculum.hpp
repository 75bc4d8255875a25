#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ccl/corpus.hpp"

namespace ccl::curriculum {

// Stable sort by accuracy (descending, ties keep input order) and cut into p
// contiguous buckets whose sizes differ by at most one, the first
// `records.size() % p` buckets taking the extra element.
CurriculumDataset rank_and_partition(std::span<const SampleRecord> records, std::size_t p);

// Bucket sizes produced by rank_and_partition for n records and p buckets.
std::vector<std::size_t> bucket_sizes(std::size_t n, std::size_t p);

// Problem ids for training stage `stage` (1-based). Stage 1 is bucket 1 as is;
// later stages add ceil(review_ratio * |bucket|) ids drawn without
// replacement from the earlier buckets and shuffle the result.
std::vector<std::string> mix_with_review(const CurriculumDataset& dataset, std::size_t stage,
                                         double review_ratio, std::uint64_t seed);

struct BucketStats {
  std::size_t count = 0;
  // Exact mean as "num/den" plus its double value.
  std::string mean_exact;
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  std::size_t adapted = 0;
};

struct PartitionReport {
  std::vector<BucketStats> buckets;
  std::size_t adapted = 0;
  std::size_t discarded = 0;

  Json to_json() const;
  std::string table() const;
};

PartitionReport partition_report(const CurriculumDataset& dataset, std::span<const SampleRecord> records);

// Throws ValidationError unless buckets are disjoint, cover `corpus_ids`
// together with the discarded set, and are ordered by descending accuracy.
void validate_dataset(const CurriculumDataset& dataset, std::span<const std::string> corpus_ids);

Json to_json(const CurriculumDataset& dataset);
CurriculumDataset dataset_from_json(const Json& j);

}  // namespace ccl::curriculum
