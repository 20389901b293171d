#pragma once

#include <array>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "idiombed/common.hpp"
#include "idiombed/corpus.hpp"
#include "idiombed/embedding_bank.hpp"

namespace idiombed {

// ---------------------------------------------------------------------------
// Agglomerative clustering, complete linkage over cosine distance.

struct ClusterAssignment {
  std::map<std::string, int> cluster_of;
  int n_clusters = 0;
};

struct ClusterMerge {
  size_t rep_a = 0;  // smallest original index in each merged cluster, rep_a < rep_b
  size_t rep_b = 0;
  double distance = 0.0;
};

struct AgglomerativeResult {
  ClusterAssignment assignment;
  std::vector<ClusterMerge> merges;  // bottom-up merge history
};

// Bottom-up complete linkage; among equal-distance candidates the pair with
// the lexicographically smallest (min-member, min-member) indices merges
// first, which pins the dendrogram deterministically.
inline AgglomerativeResult agglomerative_cluster(const EmbeddingBank& bank, int n_clusters) {
  const size_t n = bank.size();
  if (n_clusters < 1) throw ValidationError("agglomerative_cluster: n_clusters must be >= 1");
  if (n < static_cast<size_t>(n_clusters))
    throw ValidationError("agglomerative_cluster: fewer idioms (" + std::to_string(n) +
                          ") than clusters (" + std::to_string(n_clusters) + ")");

  std::vector<std::string> ids;
  std::vector<const Vec*> vecs;
  ids.reserve(n);
  for (const auto& [id, entry] : bank.entries) {
    ids.push_back(id);
    vecs.push_back(&entry.vec);
  }

  std::vector<std::vector<double>> dist(n, std::vector<double>(n, 0.0));
  for (size_t i = 0; i < n; ++i)
    for (size_t j = i + 1; j < n; ++j)
      dist[i][j] = dist[j][i] = cosine_distance(*vecs[i], *vecs[j]);

  struct Cluster {
    size_t rep;  // smallest member index
    bool active = true;
  };
  std::vector<Cluster> clusters(n);
  for (size_t i = 0; i < n; ++i) clusters[i].rep = i;
  // linkage[i][j]: complete-linkage distance between cluster slots i and j.
  auto linkage = dist;

  AgglomerativeResult result;
  size_t active = n;
  while (active > static_cast<size_t>(n_clusters)) {
    size_t best_i = 0, best_j = 0;
    double best = std::numeric_limits<double>::infinity();
    bool found = false;
    for (size_t i = 0; i < n; ++i) {
      if (!clusters[i].active) continue;
      for (size_t j = i + 1; j < n; ++j) {
        if (!clusters[j].active) continue;
        const double d = linkage[i][j];
        const size_t ra = std::min(clusters[i].rep, clusters[j].rep);
        const size_t rb = std::max(clusters[i].rep, clusters[j].rep);
        if (!found || d < best ||
            (d == best && std::make_pair(ra, rb) < std::make_pair(std::min(clusters[best_i].rep, clusters[best_j].rep),
                                                                  std::max(clusters[best_i].rep, clusters[best_j].rep)))) {
          best = d;
          best_i = i;
          best_j = j;
          found = true;
        }
      }
    }
    // Merge j into i; keep the smaller representative on the surviving slot.
    const size_t keep = clusters[best_i].rep <= clusters[best_j].rep ? best_i : best_j;
    const size_t drop = keep == best_i ? best_j : best_i;
    result.merges.push_back({std::min(clusters[best_i].rep, clusters[best_j].rep),
                             std::max(clusters[best_i].rep, clusters[best_j].rep), best});
    for (size_t k = 0; k < n; ++k) {
      if (!clusters[k].active || k == keep || k == drop) continue;
      linkage[keep][k] = linkage[k][keep] = std::max(linkage[keep][k], linkage[drop][k]);
    }
    clusters[keep].rep = std::min(clusters[keep].rep, clusters[drop].rep);
    clusters[drop].active = false;
    --active;
  }

  // Cluster indices ordered by representative for a stable labeling.
  std::vector<size_t> slots;
  for (size_t i = 0; i < n; ++i)
    if (clusters[i].active) slots.push_back(i);
  std::sort(slots.begin(), slots.end(),
            [&](size_t a, size_t b) { return clusters[a].rep < clusters[b].rep; });

  // Recover membership by replaying rep unions: simplest is a second pass
  // with union-find over the merge history.
  std::vector<size_t> parent(n);
  for (size_t i = 0; i < n; ++i) parent[i] = i;
  std::function<size_t(size_t)> find = [&](size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (const auto& m : result.merges) parent[find(m.rep_b)] = find(m.rep_a);

  std::map<size_t, int> root_to_cluster;
  for (size_t s : slots) {
    const size_t root = find(clusters[s].rep);
    root_to_cluster.emplace(root, static_cast<int>(root_to_cluster.size()));
  }
  result.assignment.n_clusters = n_clusters;
  for (size_t i = 0; i < n; ++i)
    result.assignment.cluster_of[ids[i]] = root_to_cluster.at(find(i));
  return result;
}

// ---------------------------------------------------------------------------
// Intrinsic metrics

// 1 - H(class|cluster)/H(class), natural logs; 1.0 when H(class) == 0.
inline double homogeneity_score(const MeaningGroups& gold, const ClusterAssignment& assignment) {
  const double n = static_cast<double>(assignment.cluster_of.size());
  if (n == 0.0) throw ValidationError("homogeneity_score: empty assignment");
  std::map<std::string, double> class_counts;
  std::map<int, double> cluster_counts;
  std::map<std::pair<int, std::string>, double> joint;
  for (const auto& [idiom, cluster] : assignment.cluster_of) {
    const std::string* group = gold.group_of(idiom);
    if (!group) throw ValidationError("homogeneity_score: idiom " + idiom + " has no gold group");
    class_counts[*group] += 1.0;
    cluster_counts[cluster] += 1.0;
    joint[{cluster, *group}] += 1.0;
  }
  double h_class = 0.0;
  for (const auto& [_, c] : class_counts) {
    const double p = c / n;
    h_class -= p * std::log(p);
  }
  if (h_class == 0.0) return 1.0;
  double h_class_given_cluster = 0.0;
  for (const auto& [key, c] : joint) {
    const double p_joint = c / n;
    const double p_cluster = cluster_counts.at(key.first) / n;
    h_class_given_cluster -= p_joint * std::log(p_joint / p_cluster);
  }
  return 1.0 - h_class_given_cluster / h_class;
}

// Mean cosine distance over unordered idiom pairs from different groups.
inline double mean_intergroup_distance(const EmbeddingBank& bank, const MeaningGroups& groups) {
  if (groups.groups().size() < 2)
    throw ValidationError("mean_intergroup_distance: needs at least two groups");
  const std::vector<std::string> ids = groups.grouped_idioms();
  for (const auto& id : ids)
    if (!bank.contains(id))
      throw ValidationError("mean_intergroup_distance: idiom " + id + " missing from bank");
  double sum = 0.0;
  size_t pairs = 0;
  for (size_t i = 0; i < ids.size(); ++i) {
    for (size_t j = i + 1; j < ids.size(); ++j) {
      if (*groups.group_of(ids[i]) == *groups.group_of(ids[j])) continue;
      sum += cosine_distance(bank.at(ids[i]).vec, bank.at(ids[j]).vec);
      ++pairs;
    }
  }
  if (pairs == 0) throw ValidationError("mean_intergroup_distance: no cross-group pairs");
  return sum / static_cast<double>(pairs);
}

// Percent position of x between the lower and upper anchors; may leave [0,100].
inline double normalize_score(double x, double lower, double upper) {
  if (upper == lower) throw ValidationError("normalize_score: anchors coincide");
  return 100.0 * (x - lower) / (upper - lower);
}

struct PrecisionAtK {
  std::map<std::string, double> per_idiom;
  std::map<std::string, double> per_group;
  double mean = 0.0;
  int k = 0;
};

// Fraction of each grouped idiom's k nearest neighbors (cosine, within the
// grouped idioms, self excluded) sharing its group.
inline PrecisionAtK precision_at_k(const EmbeddingBank& bank, const MeaningGroups& groups, int k = 3) {
  const std::vector<std::string> ids = groups.grouped_idioms();
  if (k < 1) throw ValidationError("precision_at_k: k must be >= 1");
  if (static_cast<size_t>(k) >= ids.size())
    throw ValidationError("precision_at_k: k must be smaller than the number of grouped idioms");
  EmbeddingBank restricted;
  restricted.kind = bank.kind;
  restricted.dim = bank.dim;
  for (const auto& id : ids) {
    if (!bank.contains(id))
      throw ValidationError("precision_at_k: idiom " + id + " missing from bank");
    restricted.entries[id] = bank.at(id);
  }
  PrecisionAtK out;
  out.k = k;
  std::map<std::string, std::pair<double, size_t>> group_acc;
  for (const auto& id : ids) {
    const std::string& group = *groups.group_of(id);
    const auto neighbors = nearest_idioms(restricted, id, static_cast<size_t>(k));
    int same = 0;
    for (const auto& [nid, _] : neighbors)
      if (*groups.group_of(nid) == group) ++same;
    const double score = static_cast<double>(same) / static_cast<double>(k);
    out.per_idiom[id] = score;
    auto& acc = group_acc[group];
    acc.first += score;
    acc.second += 1;
  }
  double total = 0.0;
  for (const auto& [_, s] : out.per_idiom) total += s;
  out.mean = total / static_cast<double>(out.per_idiom.size());
  for (const auto& [g, acc] : group_acc) out.per_group[g] = acc.first / static_cast<double>(acc.second);
  return out;
}

// ---------------------------------------------------------------------------
// Extrinsic metrics (percent scale throughout)

struct DisambigMetrics {
  double accuracy = 0.0;
  double f1 = 0.0;
  long tp = 0, fp = 0, tn = 0, fn = 0;
};

// Binary accuracy and F1 with the idiomatic label (1) as the positive class.
inline DisambigMetrics disambiguation_metrics(const std::vector<int>& pred,
                                              const std::vector<int>& gold) {
  if (pred.empty() || pred.size() != gold.size())
    throw ValidationError("disambiguation_metrics: empty or mismatched inputs");
  DisambigMetrics m;
  for (size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] == 1;
    const bool g = gold[i] == 1;
    if (p && g) ++m.tp;
    else if (p && !g) ++m.fp;
    else if (!p && g) ++m.fn;
    else ++m.tn;
  }
  m.accuracy = 100.0 * static_cast<double>(m.tp + m.tn) / static_cast<double>(pred.size());
  const double denom = static_cast<double>(2 * m.tp + m.fp + m.fn);
  m.f1 = denom == 0.0 ? 100.0 : 100.0 * 2.0 * static_cast<double>(m.tp) / denom;
  return m;
}

struct SpanMetrics {
  double sequence_accuracy = 0.0;
  // Recall averaged per sequence, under both conventions for sequences with
  // no gold-positive token: counted as 1.0 ("all"), or dropped ("idiomatic").
  double token_recall_all = 0.0;
  double token_recall_idiomatic = 0.0;
  double token_accuracy = 0.0;
  size_t n_sequences = 0;
};

inline SpanMetrics span_metrics(const std::vector<std::vector<int>>& pred,
                                const std::vector<std::vector<int>>& gold,
                                const std::vector<std::string>* instance_ids = nullptr) {
  if (pred.empty() || pred.size() != gold.size())
    throw ValidationError("span_metrics: empty or mismatched inputs");
  size_t exact = 0;
  double acc_sum = 0.0;
  double recall_sum_all = 0.0;
  double recall_sum_idiomatic = 0.0;
  size_t idiomatic_sequences = 0;
  for (size_t s = 0; s < pred.size(); ++s) {
    if (pred[s].size() != gold[s].size() || pred[s].empty()) {
      std::string which = instance_ids ? (*instance_ids)[s] : std::to_string(s);
      throw ValidationError("span_metrics: length mismatch at instance " + which);
    }
    size_t correct = 0, tp = 0, gold_pos = 0;
    for (size_t t = 0; t < pred[s].size(); ++t) {
      if (pred[s][t] == gold[s][t]) ++correct;
      if (gold[s][t] == 1) {
        ++gold_pos;
        if (pred[s][t] == 1) ++tp;
      }
    }
    if (correct == pred[s].size()) ++exact;
    acc_sum += static_cast<double>(correct) / static_cast<double>(pred[s].size());
    if (gold_pos > 0) {
      const double r = static_cast<double>(tp) / static_cast<double>(gold_pos);
      recall_sum_all += r;
      recall_sum_idiomatic += r;
      ++idiomatic_sequences;
    } else {
      recall_sum_all += 1.0;
    }
  }
  SpanMetrics m;
  m.n_sequences = pred.size();
  const double n = static_cast<double>(pred.size());
  m.sequence_accuracy = 100.0 * static_cast<double>(exact) / n;
  m.token_accuracy = 100.0 * acc_sum / n;
  m.token_recall_all = 100.0 * recall_sum_all / n;
  m.token_recall_idiomatic =
      idiomatic_sequences == 0 ? 0.0 : 100.0 * recall_sum_idiomatic / static_cast<double>(idiomatic_sequences);
  return m;
}

// ---------------------------------------------------------------------------
// Span error taxonomy

enum class SpanErrorType {
  multi_ie_partial = 0,
  partial_span = 1,
  other_figurative = 2,
  literal_as_idiomatic = 3,
  missed_idiom = 4,
  spurious_tokens = 5,
};

inline const std::array<const char*, 6>& span_error_names() {
  static const std::array<const char*, 6> names = {
      "multi_ie_partial",     "partial_span", "other_figurative",
      "literal_as_idiomatic", "missed_idiom", "spurious_tokens"};
  return names;
}

struct SpanErrorMetadata {
  TokenSpan pie_span;                     // the PIE's token span in the instance
  std::vector<TokenSpan> extra_ie_spans;  // further IEs present in the sentence
  std::vector<TokenSpan> figurative_spans;  // non-gold figurative expressions
};

// Assigns an imperfect prediction to exactly one category following the
// fixed priority order. Total by construction: the final category absorbs
// whatever earlier ones do not claim.
inline SpanErrorType categorize_span_error(const std::vector<int>& pred,
                                           const std::vector<int>& gold,
                                           const SpanErrorMetadata& meta) {
  if (pred.size() != gold.size() || pred.empty())
    throw ValidationError("categorize_span_error: length mismatch");
  if (pred == gold) throw ValidationError("categorize_span_error: sequence is perfect");

  auto covered = [&](const TokenSpan& span) {
    if (!span.valid() || span.end_token > pred.size()) return false;
    for (size_t t = span.start_token; t < span.end_token; ++t)
      if (pred[t] != 1) return false;
    return true;
  };
  auto inside_any = [&](size_t t, const std::vector<TokenSpan>& spans) {
    for (const auto& s : spans)
      if (s.contains(t)) return true;
    return false;
  };

  size_t gold_pos = 0, overlap = 0, missing = 0;
  for (size_t t = 0; t < gold.size(); ++t) {
    if (gold[t] == 1) {
      ++gold_pos;
      if (pred[t] == 1) ++overlap;
      else ++missing;
    }
  }

  if (!meta.extra_ie_spans.empty()) {
    std::vector<TokenSpan> all_spans = meta.extra_ie_spans;
    if (gold_pos > 0) all_spans.push_back(meta.pie_span);
    size_t full = 0;
    for (const auto& s : all_spans)
      if (covered(s)) ++full;
    if (full >= 1 && full < all_spans.size()) return SpanErrorType::multi_ie_partial;
  }
  if (gold_pos > 0 && overlap > 0 && missing > 0) return SpanErrorType::partial_span;
  if (!meta.figurative_spans.empty() && overlap == 0) {
    bool any_pred = false, all_inside = true;
    for (size_t t = 0; t < pred.size(); ++t) {
      if (pred[t] != 1) continue;
      any_pred = true;
      if (!inside_any(t, meta.figurative_spans)) all_inside = false;
    }
    if (any_pred && all_inside) return SpanErrorType::other_figurative;
  }
  if (gold_pos == 0) {
    for (size_t t = meta.pie_span.start_token; t < meta.pie_span.end_token && t < pred.size(); ++t)
      if (pred[t] == 1) return SpanErrorType::literal_as_idiomatic;
    return SpanErrorType::spurious_tokens;
  }
  if (overlap == 0) return SpanErrorType::missed_idiom;
  return SpanErrorType::spurious_tokens;
}

struct ErrorBreakdown {
  std::array<size_t, 6> counts{};
  size_t total = 0;

  double percent(SpanErrorType t) const {
    return total == 0 ? 0.0
                      : 100.0 * static_cast<double>(counts[static_cast<size_t>(t)]) /
                            static_cast<double>(total);
  }
};

inline ErrorBreakdown categorize_span_errors(const std::vector<std::vector<int>>& pred,
                                             const std::vector<std::vector<int>>& gold,
                                             const std::vector<SpanErrorMetadata>& meta) {
  if (pred.size() != gold.size() || pred.size() != meta.size())
    throw ValidationError("categorize_span_errors: input size mismatch");
  ErrorBreakdown out;
  for (size_t i = 0; i < pred.size(); ++i) {
    const SpanErrorType t = categorize_span_error(pred[i], gold[i], meta[i]);
    ++out.counts[static_cast<size_t>(t)];
    ++out.total;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pearson product-moment correlation.

inline double per_idiom_correlation(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 3)
    throw ValidationError("per_idiom_correlation: needs >= 3 paired values");
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0)
    throw ValidationError("per_idiom_correlation: zero variance on an axis");
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace idiombed
