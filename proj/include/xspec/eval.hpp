// Copyright 2026 The xspec Authors
// SPDX-License-Identifier: Apache-2.0
//
// Gallery/probe protocols and ranked-retrieval metrics.

#pragma once

#include "xspec/data.hpp"
#include "xspec/model.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace xspec {

struct DomainSelector {
  int domain = 0;
  std::optional<RangeTag> range;  // any range when unset

  bool matches(const ImageRecord& r) const {
    return r.domain == domain && (!range || r.range == *range);
  }
  std::string label() const;
};

struct Protocol {
  std::string name;
  DomainSelector gallery_domain;
  DomainSelector probe_domain;
  std::uint64_t seed = 0;
  std::vector<std::size_t> gallery;  // record indices
  std::vector<int> gallery_ids;
  std::vector<std::size_t> probe;
  std::vector<int> probe_ids;
  int excluded_identities = 0;  // lacked images on one side
};

// Per identity, up to n_gallery gallery and n_probe probe records, sampled
// without replacement. Gallery and probe never share a record.
Protocol build_protocol(const Dataset& dataset, const DomainSelector& gallery,
                        const DomainSelector& probe, int n_gallery = 10, int n_probe = 100,
                        std::uint64_t seed = 0);

// One feature row per record, L2-normalized when `normalize`. Work is split
// across `threads` workers; the result does not depend on the split.
Matrix extract_features(const ModelParams& params, const ModelConfig& config,
                        const Dataset& dataset, std::span<const std::size_t> records,
                        const SieScheme& scheme, bool normalize = true, int threads = 1);

using Rankings = std::vector<std::vector<int>>;

// Gallery indices per query, ascending Euclidean distance, ties by index.
Rankings rank_queries(const Matrix& probe_features, const Matrix& gallery_features);

// Entry k-1 is the fraction of queries with a correct match in the top k.
std::vector<double> cmc(const Rankings& rankings, std::span<const int> probe_ids,
                        std::span<const int> gallery_ids, int k_max);

struct ApResult {
  double mean_ap = 0.0;
  std::vector<double> per_query;  // NaN for excluded queries
  int excluded = 0;               // queries without any relevant gallery item
};

ApResult mean_ap(const Rankings& rankings, std::span<const int> probe_ids,
                 std::span<const int> gallery_ids);

struct RankingResult {
  Rankings rankings;
  std::vector<double> cmc;  // up to gallery size
  std::vector<double> ap;
  double mean_ap = 0.0;
  int excluded_queries = 0;

  // Rank-k accuracy; saturates at the gallery size.
  double rank(int k) const;
};

RankingResult evaluate_rankings(const Matrix& probe_features, const Matrix& gallery_features,
                                std::span<const int> probe_ids, std::span<const int> gallery_ids);

struct ReportRow {
  std::string protocol;
  double rank1 = 0.0;
  double rank5 = 0.0;
  double rank10 = 0.0;
  double mean_ap = 0.0;
  int excluded_identities = 0;
  int excluded_queries = 0;
};

// "protocol,rank1,rank5,rank10,mAP" table; exclusions follow as '#' lines.
std::string format_report(std::span<const ReportRow> rows);
void write_report(std::span<const ReportRow> rows, const std::filesystem::path& path);

// "record_path,identity,domain,camera,f_0..f_{d-1}", 17 significant digits.
void export_embeddings(const Matrix& features, const Dataset& dataset,
                       std::span<const std::size_t> records, const std::filesystem::path& path);

struct EmbeddingTable {
  std::vector<std::string> paths;
  std::vector<int> identities;
  std::vector<int> domains;
  std::vector<int> cameras;
  Matrix features;
};

EmbeddingTable read_embeddings(const std::filesystem::path& path);

}  // namespace xspec
