// Apache License, Version 2.0, refer to LICENSE.txt
#pragma once

#include <algorithm>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "featurelab/common.hpp"

namespace featurelab {

/*
 * Observable samples.  A feature allocation is an ordered list of customers,
 * each holding a set of feature ids; a partition is the species-sampling
 * analogue (block sizes only).  Feature labels carry no information, so ids
 * are always kept in left-ordered canonical form: columns sorted by first
 * appearance, ties broken by the full membership column (earlier inclusion
 * first).  That makes equality, hashing-by-bytes, and exchangeability tests
 * deterministic.
 */

struct SuffStats {
  int n = 0;
  int k = 0;
  std::vector<int> m;  // per-feature occurrence counts, id order

  void validate() const {
    if (n < 0 || k < 0 || static_cast<int>(m.size()) != k) {
      throw DomainError("sufficient statistics: inconsistent sizes");
    }
    if (k > 0 && n < 1) {
      throw DomainError("sufficient statistics: features require customers");
    }
    for (int mi : m) {
      if (mi < 1 || mi > n) {
        throw DomainError(
            "sufficient statistics: each count must lie in [1, n]");
      }
    }
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"n", n}, {"m", m}};
  }

  static SuffStats from_json(const nlohmann::json& j) {
    try {
      SuffStats s;
      s.n = j.at("n").get<int>();
      s.m = j.at("m").get<std::vector<int>>();
      s.k = static_cast<int>(s.m.size());
      s.validate();
      return s;
    } catch (const nlohmann::json::exception& e) {
      throw DomainError(std::string("stats JSON: ") + e.what());
    }
  }
};

struct Partition {
  int n = 0;
  std::vector<int> blocks;

  void validate() const {
    int total = 0;
    for (int b : blocks) {
      if (b < 1) throw DomainError("partition: block sizes must be >= 1");
      total += b;
    }
    if (total != n) {
      throw DomainError("partition: block sizes must sum to n");
    }
  }

  int k() const { return static_cast<int>(blocks.size()); }

  nlohmann::json to_json() const {
    return nlohmann::json{{"n", n}, {"blocks", blocks}};
  }

  static Partition from_json(const nlohmann::json& j) {
    try {
      Partition p;
      p.n = j.at("n").get<int>();
      p.blocks = j.at("blocks").get<std::vector<int>>();
      p.validate();
      return p;
    } catch (const nlohmann::json::exception& e) {
      throw DomainError(std::string("partition JSON: ") + e.what());
    }
  }
};

class FeatureAllocation {
 public:
  FeatureAllocation() = default;

  // Builds an allocation from arbitrary per-customer id sets; ids are
  // relabelled into canonical form.  Ids may be any non-negative integers.
  static FeatureAllocation from_customers(
      std::vector<std::vector<int>> raw) {
    for (const std::vector<int>& cust : raw) {
      std::set<int> seen;
      for (int id : cust) {
        if (id < 0) throw DomainError("feature ids must be non-negative");
        if (!seen.insert(id).second) {
          throw DomainError("duplicate feature id within one customer");
        }
      }
    }
    FeatureAllocation out;
    out.customers_ = std::move(raw);
    out.canonicalize();
    return out;
  }

  int n() const { return static_cast<int>(customers_.size()); }
  int k() const { return k_; }
  const std::vector<std::vector<int>>& customers() const { return customers_; }

  // Appends one customer holding the given known feature ids plus new_count
  // fresh features, then restores canonical id order.
  void append_customer(const std::vector<int>& known_ids, int new_count) {
    if (new_count < 0) throw DomainError("append: new_count must be >= 0");
    std::set<int> seen;
    for (int id : known_ids) {
      if (id < 0 || id >= k_) {
        throw DomainError("append: unknown feature id");
      }
      if (!seen.insert(id).second) {
        throw DomainError("append: duplicate feature id");
      }
    }
    std::vector<int> cust = known_ids;
    for (int j = 0; j < new_count; ++j) cust.push_back(k_ + j);
    customers_.push_back(std::move(cust));
    canonicalize();
  }

  bool operator==(const FeatureAllocation& other) const {
    return customers_ == other.customers_;
  }
  bool operator!=(const FeatureAllocation& other) const {
    return !(*this == other);
  }

 private:
  friend FeatureAllocation permute_customers(const FeatureAllocation&,
                                             const std::vector<int>&);

  // Relabel features into left-ordered form.  Columns (customer index lists)
  // are compared position by position; where one is a prefix of the other the
  // longer column wins, because its next entry marks an inclusion the shorter
  // one lacks.
  void canonicalize() {
    std::vector<std::pair<std::vector<int>, int>> columns;  // (members, raw)
    {
      std::vector<int> raw_ids;
      for (int j = 0; j < n(); ++j) {
        for (int id : customers_[j]) raw_ids.push_back(id);
      }
      std::sort(raw_ids.begin(), raw_ids.end());
      raw_ids.erase(std::unique(raw_ids.begin(), raw_ids.end()),
                    raw_ids.end());
      for (int id : raw_ids) columns.emplace_back(std::vector<int>{}, id);
      for (int j = 0; j < n(); ++j) {
        for (int id : customers_[j]) {
          const auto it = std::lower_bound(
              raw_ids.begin(), raw_ids.end(), id);
          columns[it - raw_ids.begin()].first.push_back(j);
        }
      }
    }
    std::sort(columns.begin(), columns.end(),
              [](const auto& a, const auto& b) {
                const std::vector<int>& x = a.first;
                const std::vector<int>& y = b.first;
                const size_t common = std::min(x.size(), y.size());
                for (size_t i = 0; i < common; ++i) {
                  if (x[i] != y[i]) return x[i] < y[i];
                }
                if (x.size() != y.size()) return x.size() > y.size();
                return a.second < b.second;  // identical columns: stable tag
              });
    k_ = static_cast<int>(columns.size());
    std::vector<std::vector<int>> rebuilt(customers_.size());
    for (int new_id = 0; new_id < k_; ++new_id) {
      for (int j : columns[new_id].first) rebuilt[j].push_back(new_id);
    }
    customers_ = std::move(rebuilt);
  }

  std::vector<std::vector<int>> customers_;
  int k_ = 0;
};

inline SuffStats suff_stats(const FeatureAllocation& z) {
  SuffStats s;
  s.n = z.n();
  s.k = z.k();
  s.m.assign(s.k, 0);
  for (const std::vector<int>& cust : z.customers()) {
    for (int id : cust) s.m[id] += 1;
  }
  s.validate();
  return s;
}

// Reorders customers so that new customer i is old customer perm[i], then
// restores canonical feature ids.
inline FeatureAllocation permute_customers(const FeatureAllocation& z,
                                           const std::vector<int>& perm) {
  const int n = z.n();
  if (static_cast<int>(perm.size()) != n) {
    throw DomainError("permutation has the wrong length");
  }
  std::vector<bool> hit(n, false);
  for (int p : perm) {
    if (p < 0 || p >= n || hit[p]) {
      throw DomainError("not a permutation of 0..n-1");
    }
    hit[p] = true;
  }
  FeatureAllocation out = z;
  std::vector<std::vector<int>> reordered(n);
  for (int i = 0; i < n; ++i) reordered[i] = z.customers()[perm[i]];
  out.customers_ = std::move(reordered);
  out.canonicalize();
  return out;
}

/*
 * JSON-lines I/O: one sorted id array per line.  Reading normalizes ids and
 * reports a warning when the input was not already canonical; structural
 * problems carry the offending line number.
 */

inline void write_jsonl(const FeatureAllocation& z, std::ostream& os) {
  for (const std::vector<int>& cust : z.customers()) {
    os << nlohmann::json(cust).dump() << '\n';
  }
}

inline void write_jsonl(const FeatureAllocation& z, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open for writing: " + path);
  write_jsonl(z, os);
}

inline FeatureAllocation read_jsonl(std::istream& is,
                                    std::vector<std::string>* warnings =
                                        nullptr) {
  std::vector<std::vector<int>> raw;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(e.what(), lineno);
    }
    if (!j.is_array()) {
      throw ParseError("expected an array of feature ids", lineno);
    }
    std::vector<int> cust;
    std::set<int> seen;
    for (const nlohmann::json& el : j) {
      if (!el.is_number_integer() && !el.is_number_unsigned()) {
        throw ParseError("feature ids must be integers", lineno);
      }
      const long long v = el.get<long long>();
      if (v < 0 || v > std::numeric_limits<int>::max()) {
        throw ParseError("feature id out of range", lineno);
      }
      if (!seen.insert(static_cast<int>(v)).second) {
        throw ParseError("duplicate feature id", lineno);
      }
      cust.push_back(static_cast<int>(v));
    }
    raw.push_back(std::move(cust));
  }
  const std::vector<std::vector<int>> raw_copy = raw;
  FeatureAllocation out = FeatureAllocation::from_customers(std::move(raw));
  if (warnings != nullptr && out.customers() != raw_copy) {
    warnings->push_back(
        "input ids were not in canonical form; features relabelled by order "
        "of first appearance");
  }
  return out;
}

inline FeatureAllocation read_jsonl(const std::string& path,
                                    std::vector<std::string>* warnings =
                                        nullptr) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open for reading: " + path);
  return read_jsonl(is, warnings);
}

// Binary membership matrix, one row per customer, columns f0..f{k-1}.
inline void write_csv(const FeatureAllocation& z, std::ostream& os) {
  for (int i = 0; i < z.k(); ++i) {
    if (i > 0) os << ',';
    os << 'f' << i;
  }
  os << '\n';
  for (const std::vector<int>& cust : z.customers()) {
    std::vector<char> row(z.k(), '0');
    for (int id : cust) row[id] = '1';
    for (int i = 0; i < z.k(); ++i) {
      if (i > 0) os << ',';
      os << row[i];
    }
    os << '\n';
  }
}

}  // namespace featurelab
