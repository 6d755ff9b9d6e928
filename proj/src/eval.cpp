// Copyright 2026 The xspec Authors
// SPDX-License-Identifier: Apache-2.0

#include "xspec/eval.hpp"

#include "xspec/text.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

namespace xspec {

std::string DomainSelector::label() const {
  std::string s = "d" + std::to_string(domain);
  if (range) s += "-" + std::string(to_string(*range));
  return s;
}

Protocol build_protocol(const Dataset& ds, const DomainSelector& gallery,
                        const DomainSelector& probe, int n_gallery, int n_probe,
                        std::uint64_t seed) {
  if (n_gallery < 1 || n_probe < 1) throw ConfigError("eval.n_gallery/n_probe: must be positive");
  Protocol p;
  p.name = gallery.label() + "->" + probe.label();
  p.gallery_domain = gallery;
  p.probe_domain = probe;
  p.seed = seed;

  std::mt19937_64 rng(seed);
  auto draw = [&](std::vector<std::size_t> pool, int n) {
    const std::size_t take = std::min(pool.size(), static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < take; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
    pool.resize(take);
    std::sort(pool.begin(), pool.end());
    return pool;
  };

  for (int id : ds.identities()) {
    std::vector<std::size_t> g_pool, p_pool;
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
      const auto& r = ds.records[i];
      if (r.identity != id) continue;
      if (gallery.matches(r)) g_pool.push_back(i);
    }
    const std::vector<std::size_t> g = draw(g_pool, n_gallery);
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
      const auto& r = ds.records[i];
      if (r.identity == id && probe.matches(r) && !std::binary_search(g.begin(), g.end(), i)) {
        p_pool.push_back(i);
      }
    }
    if (g.empty() || p_pool.empty()) {
      ++p.excluded_identities;
      continue;
    }
    const std::vector<std::size_t> q = draw(p_pool, n_probe);
    for (std::size_t i : g) {
      p.gallery.push_back(i);
      p.gallery_ids.push_back(id);
    }
    for (std::size_t i : q) {
      p.probe.push_back(i);
      p.probe_ids.push_back(id);
    }
  }
  return p;
}

Matrix extract_features(const ModelParams& params, const ModelConfig& config, const Dataset& ds,
                        std::span<const std::size_t> records, const SieScheme& scheme,
                        bool normalize, int threads) {
  check_param_shapes(params, config);
  Matrix out(static_cast<Index>(records.size()), config.feature_dim());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const ImageRecord& r = ds.records.at(records[i]);
      const int sie = config.lambda_sie > 0.0 ? assign_sie_index(r, scheme) : 0;
      RowVector f = infer(params, ds.image(records[i]), sie, config).feature;
      if (normalize) {
        const double norm = f.norm();
        if (norm > 0.0) f /= norm;
      }
      out.row(static_cast<Index>(i)) = f;
    }
  };
  const std::size_t n = records.size();
  const std::size_t workers =
      std::clamp<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), 1, std::max<std::size_t>(n, 1));
  if (workers == 1) {
    work(0, n);
    return out;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t b = w * chunk, e = std::min(n, b + chunk);
    pool.emplace_back([&, b, e, w] {
      try {
        work(b, e);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

Rankings rank_queries(const Matrix& probe, const Matrix& gallery) {
  if (probe.rows() > 0 && gallery.rows() > 0 && probe.cols() != gallery.cols()) {
    throw ShapeError("rank_queries: probe " + shape_string(probe) + " vs gallery " +
                     shape_string(gallery));
  }
  Rankings out(static_cast<std::size_t>(probe.rows()));
  std::vector<double> dist(static_cast<std::size_t>(gallery.rows()));
  for (Index q = 0; q < probe.rows(); ++q) {
    for (Index g = 0; g < gallery.rows(); ++g) {
      dist[static_cast<std::size_t>(g)] = std::sqrt((probe.row(q) - gallery.row(g)).squaredNorm());
    }
    auto& order = out[static_cast<std::size_t>(q)];
    order.resize(dist.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return dist[static_cast<std::size_t>(a)] < dist[static_cast<std::size_t>(b)];
    });
  }
  return out;
}

std::vector<double> cmc(const Rankings& rankings, std::span<const int> probe_ids,
                        std::span<const int> gallery_ids, int k_max) {
  if (rankings.size() != probe_ids.size()) throw ShapeError("cmc: rankings vs probe ids");
  std::vector<double> hits(static_cast<std::size_t>(std::max(k_max, 0)), 0.0);
  if (rankings.empty()) return hits;
  for (std::size_t q = 0; q < rankings.size(); ++q) {
    const auto& order = rankings[q];
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
      if (gallery_ids[static_cast<std::size_t>(order[pos])] == probe_ids[q]) {
        for (std::size_t k = pos; k < hits.size(); ++k) hits[k] += 1.0;
        break;
      }
    }
  }
  for (double& h : hits) h /= static_cast<double>(rankings.size());
  return hits;
}

ApResult mean_ap(const Rankings& rankings, std::span<const int> probe_ids,
                 std::span<const int> gallery_ids) {
  if (rankings.size() != probe_ids.size()) throw ShapeError("mean_ap: rankings vs probe ids");
  ApResult r;
  double total = 0.0;
  int counted = 0;
  for (std::size_t q = 0; q < rankings.size(); ++q) {
    double precision_sum = 0.0;
    int relevant = 0;
    const auto& order = rankings[q];
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
      if (gallery_ids[static_cast<std::size_t>(order[pos])] == probe_ids[q]) {
        ++relevant;
        precision_sum += static_cast<double>(relevant) / static_cast<double>(pos + 1);
      }
    }
    if (relevant == 0) {
      ++r.excluded;
      r.per_query.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    const double ap = precision_sum / relevant;
    r.per_query.push_back(ap);
    total += ap;
    ++counted;
  }
  r.mean_ap = counted > 0 ? total / counted : 0.0;
  return r;
}

double RankingResult::rank(int k) const {
  if (cmc.empty() || k < 1) return 0.0;
  return cmc[static_cast<std::size_t>(std::min<std::size_t>(static_cast<std::size_t>(k), cmc.size()) - 1)];
}

RankingResult evaluate_rankings(const Matrix& probe_features, const Matrix& gallery_features,
                                std::span<const int> probe_ids, std::span<const int> gallery_ids) {
  RankingResult r;
  r.rankings = rank_queries(probe_features, gallery_features);
  r.cmc = cmc(r.rankings, probe_ids, gallery_ids, static_cast<int>(gallery_features.rows()));
  ApResult ap = mean_ap(r.rankings, probe_ids, gallery_ids);
  r.ap = std::move(ap.per_query);
  r.mean_ap = ap.mean_ap;
  r.excluded_queries = ap.excluded;
  return r;
}

std::string format_report(std::span<const ReportRow> rows) {
  std::ostringstream os;
  os << "protocol,rank1,rank5,rank10,mAP\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), ",%.6f,%.6f,%.6f,%.6f\n", r.rank1, r.rank5, r.rank10, r.mean_ap);
    os << r.protocol << buf;
  }
  for (const auto& r : rows) {
    if (r.excluded_identities > 0 || r.excluded_queries > 0) {
      os << "# " << r.protocol << ": excluded " << r.excluded_identities << " identities, "
         << r.excluded_queries << " queries\n";
    }
  }
  return os.str();
}

void write_report(std::span<const ReportRow> rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report: " + path.string());
  out << format_report(rows);
  if (!out) throw IoError("report write failed: " + path.string());
}

void export_embeddings(const Matrix& features, const Dataset& ds,
                       std::span<const std::size_t> records, const std::filesystem::path& path) {
  if (features.rows() != static_cast<Index>(records.size())) {
    throw ShapeError("export_embeddings: " + std::to_string(records.size()) + " records vs " +
                     shape_string(features));
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write embeddings: " + path.string());
  out << "record_path,identity,domain,camera";
  for (Index j = 0; j < features.cols(); ++j) out << ",f_" << j;
  out << "\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    const ImageRecord& r = ds.records.at(records[i]);
    out << r.path << "," << r.identity << "," << r.domain << "," << r.camera;
    for (Index j = 0; j < features.cols(); ++j) {
      out << "," << format_double(features(static_cast<Index>(i), j));
    }
    out << "\n";
  }
  if (!out) throw IoError("embedding write failed: " + path.string());
}

EmbeddingTable read_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open embeddings: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": empty file");
  const auto header = split(line, ',');
  if (header.size() < 4 || header[0] != "record_path") {
    throw ParseError(path.string() + ": bad embedding header");
  }
  const std::size_t dim = header.size() - 4;
  EmbeddingTable t;
  std::vector<std::vector<double>> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split(line, ',');
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (f.size() != header.size()) throw ParseError(where + ": wrong field count");
    long long id = 0, dom = 0, cam = 0;
    if (!parse_int(f[1], id) || !parse_int(f[2], dom) || !parse_int(f[3], cam)) {
      throw ParseError(where + ": bad label");
    }
    t.paths.push_back(f[0]);
    t.identities.push_back(static_cast<int>(id));
    t.domains.push_back(static_cast<int>(dom));
    t.cameras.push_back(static_cast<int>(cam));
    std::vector<double> v(dim);
    for (std::size_t j = 0; j < dim; ++j) {
      if (!parse_double(f[4 + j], v[j])) throw ParseError(where + ": bad feature value");
    }
    rows.push_back(std::move(v));
  }
  t.features.resize(static_cast<Index>(rows.size()), static_cast<Index>(dim));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < dim; ++j)
      t.features(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
  return t;
}

}  // namespace xspec
