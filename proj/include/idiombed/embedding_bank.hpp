#pragma once

#include <map>
#include <string>
#include <vector>

#include "idiombed/common.hpp"
#include "idiombed/corpus.hpp"
#include "idiombed/model.hpp"
#include "idiombed/noising.hpp"
#include "idiombed/sentence_encoder.hpp"
#include "idiombed/tokenizer.hpp"

namespace idiombed {

enum class BankKind { ie, definition };

inline std::string to_string(BankKind k) { return k == BankKind::ie ? "ie" : "definition"; }

struct BankEntry {
  Vec vec;
  uint32_t n_sentences = 0;
};

struct BankProvenance {
  std::string model_id;      // checksum-derived identifier of the producing model
  std::string corpus_split;  // "train", "test" or "all"
  std::string encoder;       // "backbone", "external" or "" for IE banks
};

struct EmbeddingBank {
  BankKind kind = BankKind::ie;
  int dim = 0;
  std::map<std::string, BankEntry> entries;  // idiom_id -> entry, sorted
  BankProvenance provenance;

  const BankEntry& at(const std::string& idiom_id) const {
    auto it = entries.find(idiom_id);
    if (it == entries.end()) throw ValidationError("idiom not in bank: " + idiom_id);
    return it->second;
  }
  bool contains(const std::string& idiom_id) const { return entries.count(idiom_id) > 0; }
  size_t size() const { return entries.size(); }
};

// Bank vectors are stored at float32 precision (see the file format), so
// values are quantized at build time; save/load is then lossless.
inline Vec quantize_f32(const Vec& v) {
  Vec out(v.size());
  for (long i = 0; i < v.size(); ++i) out(i) = static_cast<double>(static_cast<float>(v(i)));
  return out;
}

inline void check_finite(const Vec& v, const std::string& what) {
  if (!v.allFinite()) throw IntegrityError("non-finite embedding for " + what);
}

// ---------------------------------------------------------------------------
// Builders

// One unit-normalized vector per dictionary idiom, from a frozen encoder.
inline EmbeddingBank build_definition_embeddings(const Dictionary& dictionary,
                                                 SentenceEncoder& encoder) {
  EmbeddingBank bank;
  bank.kind = BankKind::definition;
  bank.dim = encoder.dim();
  bank.provenance.encoder = encoder.name();
  bank.provenance.corpus_split = "all";
  for (const auto& e : dictionary.entries()) {
    if (e.definition.empty())
      throw ValidationError("idiom " + e.idiom_id + " has no definition to embed");
    Vec v = encoder.encode(e.idiom_id, e.definition);
    check_finite(v, e.idiom_id);
    const double n = v.norm();
    if (n == 0.0) throw IntegrityError("zero definition embedding for " + e.idiom_id);
    bank.entries[e.idiom_id] = BankEntry{quantize_f32(v / n), 1};
  }
  return bank;
}

// Mean-pooled model states over the IE span, averaged across a idiom's
// sentences. The uncorrupted sentence feeds both encoder and decoder.
inline EmbeddingBank build_ie_embeddings(const AdaptedModel& model,
                                         const std::vector<TokenizedInstance>& instances,
                                         ExtractionSide side, bool use_adapters = true,
                                         std::vector<std::string>* warnings = nullptr) {
  EmbeddingBank bank;
  bank.kind = BankKind::ie;
  bank.dim = model.hidden_dim();
  bank.provenance.model_id = hex64(model.full_checksum());

  std::map<std::string, std::pair<Vec, uint32_t>> acc;
  for (const auto& inst : instances) {
    const Mat states = model.token_states(inst.tokens, side, use_adapters);
    const Vec emb = extract_ie_embedding(states, inst.ie_span);
    auto it = acc.find(inst.idiom_id);
    if (it == acc.end())
      acc.emplace(inst.idiom_id, std::make_pair(emb, 1u));
    else {
      it->second.first += emb;
      it->second.second += 1;
    }
  }
  for (auto& [idiom_id, pair] : acc) {
    Vec mean = pair.first / static_cast<double>(pair.second);
    check_finite(mean, idiom_id);
    bank.entries[idiom_id] = BankEntry{quantize_f32(mean), pair.second};
  }
  if (warnings && bank.entries.empty())
    warnings->push_back("ie bank is empty: no instances supplied");
  return bank;
}

// ---------------------------------------------------------------------------
// Queries

// Top-k neighbors by descending cosine similarity, query excluded, ties
// broken by idiom_id order.
inline std::vector<std::pair<std::string, double>> nearest_idioms(const EmbeddingBank& bank,
                                                                  const std::string& idiom_id,
                                                                  size_t k) {
  const BankEntry& query = bank.at(idiom_id);
  if (k >= bank.size())
    throw ValidationError("nearest_idioms: k must be smaller than the bank size");
  std::vector<std::pair<std::string, double>> scored;
  scored.reserve(bank.size() - 1);
  for (const auto& [id, entry] : bank.entries) {
    if (id == idiom_id) continue;
    scored.emplace_back(id, cosine_similarity(query.vec, entry.vec));
  }
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  scored.resize(k);
  return scored;
}

// ---------------------------------------------------------------------------
// Bank file format: "IBNK" magic, version, kind, dim, count, provenance,
// then per-record (idiom_id, n_sentences, dim little-endian f32), and a
// trailing FNV-64 of everything before it.

inline void save_bank(const EmbeddingBank& bank, const fs::path& path) {
  std::string blob;
  blob += "IBNK";
  put_u32(blob, 1);
  put_u8(blob, bank.kind == BankKind::ie ? 0 : 1);
  put_u32(blob, static_cast<uint32_t>(bank.dim));
  put_u32(blob, static_cast<uint32_t>(bank.entries.size()));
  put_str(blob, bank.provenance.model_id);
  put_str(blob, bank.provenance.corpus_split);
  put_str(blob, bank.provenance.encoder);
  for (const auto& [id, entry] : bank.entries) {
    if (entry.vec.size() != bank.dim)
      throw IntegrityError("bank entry " + id + " has dim " + std::to_string(entry.vec.size()) +
                           ", bank has " + std::to_string(bank.dim));
    put_str(blob, id);
    put_u32(blob, entry.n_sentences);
    for (long i = 0; i < entry.vec.size(); ++i) put_f32(blob, static_cast<float>(entry.vec(i)));
  }
  put_u64(blob, hash_bytes(blob.data(), blob.size()));
  write_file_atomic(path, blob);
}

inline EmbeddingBank load_bank(const fs::path& path) {
  if (!fs::exists(path))
    throw UpstreamMissingError("bank missing: " + path.string() + " (produce it with build-bank)");
  const std::string blob = read_file(path);
  const std::string what = "bank " + path.string();
  if (blob.size() < 12 || blob.substr(0, 4) != "IBNK")
    throw IntegrityError(what + ": bad magic or truncated header");
  uint64_t want = 0;
  for (int i = 0; i < 8; ++i)
    want |= static_cast<uint64_t>(static_cast<unsigned char>(blob[blob.size() - 8 + i])) << (8 * i);
  if (hash_bytes(blob.data(), blob.size() - 8) != want)
    throw IntegrityError(what + ": content hash mismatch (corrupt or truncated)");

  ByteReader r(blob, what);
  r.u32();  // magic
  if (r.u32() != 1) throw IntegrityError(what + ": unknown version");
  EmbeddingBank bank;
  bank.kind = r.u8() == 0 ? BankKind::ie : BankKind::definition;
  bank.dim = static_cast<int>(r.u32());
  const uint32_t count = r.u32();
  bank.provenance.model_id = r.str();
  bank.provenance.corpus_split = r.str();
  bank.provenance.encoder = r.str();
  for (uint32_t i = 0; i < count; ++i) {
    const std::string id = r.str();
    BankEntry entry;
    entry.n_sentences = r.u32();
    entry.vec = Vec(bank.dim);
    for (int d = 0; d < bank.dim; ++d) entry.vec(d) = static_cast<double>(r.f32());
    check_finite(entry.vec, id);
    if (bank.entries.count(id)) throw IntegrityError(what + ": duplicate idiom " + id);
    bank.entries.emplace(id, std::move(entry));
  }
  if (r.pos() != blob.size() - 8)
    throw IntegrityError(what + ": record payload does not match the declared dim/count");
  if (bank.kind == BankKind::ie)
    for (const auto& [id, e] : bank.entries)
      if (e.n_sentences < 1) throw IntegrityError(what + ": entry " + id + " has no sentences");
  return bank;
}

inline bool banks_equal(const EmbeddingBank& a, const EmbeddingBank& b) {
  if (a.kind != b.kind || a.dim != b.dim || a.entries.size() != b.entries.size()) return false;
  auto ia = a.entries.begin();
  auto ib = b.entries.begin();
  for (; ia != a.entries.end(); ++ia, ++ib) {
    if (ia->first != ib->first || ia->second.n_sentences != ib->second.n_sentences) return false;
    if (ia->second.vec != ib->second.vec) return false;
  }
  return true;
}

}  // namespace idiombed
