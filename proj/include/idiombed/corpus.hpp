#pragma once

#include <array>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "idiombed/common.hpp"

namespace idiombed {

using nlohmann::json;

enum class Sense { idiomatic, literal };
enum class Split { train, test };

inline std::string to_string(Sense s) { return s == Sense::idiomatic ? "idiomatic" : "literal"; }
inline std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

inline Sense sense_from_string(const std::string& s) {
  if (s == "idiomatic") return Sense::idiomatic;
  if (s == "literal") return Sense::literal;
  throw ValidationError("unknown sense label: " + s);
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw ValidationError("unknown split label: " + s);
}

// ---------------------------------------------------------------------------
// Domain types

struct IdiomEntry {
  std::string idiom_id;
  std::string lemma;
  std::string definition;
  bool monosemous = false;
  std::optional<std::string> group_id;

  bool operator==(const IdiomEntry&) const = default;
};

struct PieInstance {
  std::string instance_id;
  std::string idiom_id;
  std::string text;
  size_t start = 0;  // half-open char offsets [start, end)
  size_t end = 0;
  Sense sense = Sense::idiomatic;
  double confidence = 0.0;
  Split split = Split::train;

  std::string pie_text() const { return text.substr(start, end - start); }
  bool operator==(const PieInstance&) const = default;
};

struct MeaningGroup {
  std::string group_id;
  std::string name;
  std::vector<std::string> idiom_ids;
};

struct TemplateSentence {
  std::string idiom_id;
  std::string lemma;
  int template_index = 0;  // 1..4
  std::string full_text;
  std::string masked_text;
};

// ---------------------------------------------------------------------------
// Dictionary

class Dictionary {
 public:
  void add(IdiomEntry entry) {
    if (entry.lemma.empty()) throw ValidationError("idiom " + entry.idiom_id + ": empty lemma");
    if (by_id_.count(entry.idiom_id))
      throw ValidationError("duplicate idiom_id in dictionary: " + entry.idiom_id);
    by_id_.emplace(entry.idiom_id, entries_.size());
    entries_.push_back(std::move(entry));
  }

  const IdiomEntry* find(const std::string& idiom_id) const {
    auto it = by_id_.find(idiom_id);
    return it == by_id_.end() ? nullptr : &entries_[it->second];
  }

  const IdiomEntry& at(const std::string& idiom_id) const {
    const IdiomEntry* e = find(idiom_id);
    if (!e) throw ValidationError("unknown idiom_id: " + idiom_id);
    return *e;
  }

  const std::vector<IdiomEntry>& entries() const { return entries_; }
  size_t size() const { return entries_.size(); }

 private:
  std::vector<IdiomEntry> entries_;  // file order, stable
  std::unordered_map<std::string, size_t> by_id_;
};

// Dictionary JSONL: {"idiom_id","lemma","definition","monosemous"} per line.
inline Dictionary load_dictionary(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open dictionary file: " + path.string());
  Dictionary dict;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ValidationError("dictionary parse error at line " + std::to_string(lineno) + ": " + e.what());
    }
    IdiomEntry e;
    try {
      e.idiom_id = j.at("idiom_id").get<std::string>();
      e.lemma = j.at("lemma").get<std::string>();
      e.definition = j.at("definition").get<std::string>();
      e.monosemous = j.at("monosemous").get<bool>();
    } catch (const json::exception& ex) {
      throw ValidationError("dictionary field error at line " + std::to_string(lineno) + ": " + ex.what());
    }
    dict.add(std::move(e));
  }
  return dict;
}

inline void save_dictionary(const Dictionary& dict, const fs::path& path) {
  std::string out;
  for (const auto& e : dict.entries()) {
    json j{{"idiom_id", e.idiom_id}, {"lemma", e.lemma}, {"definition", e.definition},
           {"monosemous", e.monosemous}};
    out += j.dump();
    out += '\n';
  }
  write_file_atomic(path, out);
}

// ---------------------------------------------------------------------------
// Corpus

class Corpus {
 public:
  void add(PieInstance inst, bool idiom_known) {
    if (ids_.count(inst.instance_id))
      throw ValidationError("duplicate instance_id: " + inst.instance_id);
    ids_.insert(inst.instance_id);
    if (!idiom_known) unknown_idiom_ids_.insert(inst.idiom_id);
    by_idiom_[inst.idiom_id].push_back(instances_.size());
    by_split_[inst.split == Split::train ? 0 : 1].push_back(instances_.size());
    instances_.push_back(std::move(inst));
  }

  const std::vector<PieInstance>& instances() const { return instances_; }
  size_t size() const { return instances_.size(); }

  const std::vector<size_t>& indices_for_split(Split s) const {
    return by_split_[s == Split::train ? 0 : 1];
  }

  std::vector<size_t> indices_for_idiom(const std::string& idiom_id) const {
    auto it = by_idiom_.find(idiom_id);
    return it == by_idiom_.end() ? std::vector<size_t>{} : it->second;
  }

  std::vector<std::string> idiom_ids() const {
    std::vector<std::string> ids;
    ids.reserve(by_idiom_.size());
    for (const auto& [id, _] : by_idiom_) ids.push_back(id);
    return ids;
  }

  size_t idiom_count() const { return by_idiom_.size(); }

  // Instances referencing idiom_ids absent from the dictionary are retained
  // but flagged here.
  const std::set<std::string>& unknown_idiom_ids() const { return unknown_idiom_ids_; }

  double idiomatic_fraction() const {
    if (instances_.empty()) return 0.0;
    size_t n = 0;
    for (const auto& i : instances_)
      if (i.sense == Sense::idiomatic) ++n;
    return static_cast<double>(n) / static_cast<double>(instances_.size());
  }

  bool operator==(const Corpus& o) const { return instances_ == o.instances_; }

 private:
  std::vector<PieInstance> instances_;
  std::map<std::string, std::vector<size_t>> by_idiom_;
  std::vector<size_t> by_split_[2];
  std::set<std::string> ids_;
  std::set<std::string> unknown_idiom_ids_;
};

inline void validate_instance(const PieInstance& inst) {
  if (inst.start >= inst.end || inst.end > inst.text.size())
    throw ValidationError("instance " + inst.instance_id + ": char span [" +
                          std::to_string(inst.start) + "," + std::to_string(inst.end) +
                          ") outside text of length " + std::to_string(inst.text.size()));
  if (inst.confidence < 0.0 || inst.confidence > 1.0)
    throw ValidationError("instance " + inst.instance_id + ": confidence outside [0,1]");
}

// Corpus JSONL: {"instance_id","idiom_id","text","start","end","sense",
// "confidence","split"} per line, UTF-8.
inline Corpus load_corpus(const fs::path& path, const Dictionary& dictionary) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open corpus file: " + path.string());
  Corpus corpus;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ValidationError("corpus parse error at line " + std::to_string(lineno) + ": " + e.what());
    }
    PieInstance inst;
    try {
      inst.instance_id = j.at("instance_id").get<std::string>();
      inst.idiom_id = j.at("idiom_id").get<std::string>();
      inst.text = j.at("text").get<std::string>();
      inst.start = j.at("start").get<size_t>();
      inst.end = j.at("end").get<size_t>();
      inst.sense = sense_from_string(j.at("sense").get<std::string>());
      inst.confidence = j.at("confidence").get<double>();
      inst.split = split_from_string(j.at("split").get<std::string>());
    } catch (const json::exception& ex) {
      throw ValidationError("corpus field error at line " + std::to_string(lineno) + ": " + ex.what());
    }
    validate_instance(inst);
    const bool known = dictionary.find(inst.idiom_id) != nullptr;
    corpus.add(std::move(inst), known);
  }
  return corpus;
}

inline void save_corpus(const Corpus& corpus, const fs::path& path) {
  std::string out;
  for (const auto& i : corpus.instances()) {
    json j{{"instance_id", i.instance_id}, {"idiom_id", i.idiom_id}, {"text", i.text},
           {"start", i.start},             {"end", i.end},           {"sense", to_string(i.sense)},
           {"confidence", i.confidence},   {"split", to_string(i.split)}};
    out += j.dump();
    out += '\n';
  }
  write_file_atomic(path, out);
}

// ---------------------------------------------------------------------------
// Training views

// Embedding training keeps monosemous idioms, perfect-confidence labels and
// the idiomatic sense only. The probe view keeps both senses.
inline Corpus filter_training_view(const Corpus& corpus, const Dictionary& dictionary,
                                   bool keep_both_senses) {
  Corpus out;
  for (const auto& inst : corpus.instances()) {
    const IdiomEntry* entry = dictionary.find(inst.idiom_id);
    if (!entry || !entry->monosemous) continue;
    if (inst.confidence != 1.0) continue;
    if (!keep_both_senses && inst.sense != Sense::idiomatic) continue;
    out.add(inst, true);
  }
  return out;
}

inline Corpus filter_embedding_training_view(const Corpus& corpus, const Dictionary& dictionary) {
  return filter_training_view(corpus, dictionary, /*keep_both_senses=*/false);
}

inline Corpus filter_probe_training_view(const Corpus& corpus, const Dictionary& dictionary) {
  return filter_training_view(corpus, dictionary, /*keep_both_senses=*/true);
}

// ---------------------------------------------------------------------------
// Definition templates

inline constexpr const char* kMaskSentinel = "[MASK]";

// The four fixed template frames; {IE} is the lemma, {DEF} the definition.
inline const std::array<std::pair<const char*, const char*>, 4>& template_frames() {
  static const std::array<std::pair<const char*, const char*>, 4> frames = {{
      {"The idiom {IE} means {DEF}.", "The idiom {IE} means [MASK]."},
      {"When people say {IE} , they mean {DEF}.", "When people say {IE} , they mean [MASK]."},
      {"{IE} is used to mean {DEF}.", "{IE} is used to mean [MASK]."},
      {"If someone says {IE} , they mean that {DEF}.", "If someone says {IE} , they mean that [MASK]."},
  }};
  return frames;
}

inline std::string replace_all(std::string text, const std::string& from, const std::string& to) {
  size_t pos = 0;
  while ((pos = text.find(from, pos)) != std::string::npos) {
    text.replace(pos, from.size(), to);
    pos += to.size();
  }
  return text;
}

inline std::array<TemplateSentence, 4> render_templates(const IdiomEntry& entry) {
  if (entry.definition.empty())
    throw ValidationError("idiom " + entry.idiom_id + " has no definition; cannot render templates");
  std::array<TemplateSentence, 4> out;
  const auto& frames = template_frames();
  for (size_t i = 0; i < frames.size(); ++i) {
    TemplateSentence t;
    t.idiom_id = entry.idiom_id;
    t.lemma = entry.lemma;
    t.template_index = static_cast<int>(i) + 1;
    t.full_text = replace_all(replace_all(frames[i].first, "{IE}", entry.lemma), "{DEF}", entry.definition);
    t.masked_text = replace_all(frames[i].second, "{IE}", entry.lemma);
    out[i] = std::move(t);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Meaning groups

class MeaningGroups {
 public:
  void add(MeaningGroup group) {
    if (group.idiom_ids.empty())
      throw ValidationError("meaning group " + group.group_id + " has no members");
    if (group_index_.count(group.group_id))
      throw ValidationError("duplicate group_id: " + group.group_id);
    for (const auto& id : group.idiom_ids) {
      if (group_of_.count(id))
        throw ValidationError("idiom " + id + " belongs to two meaning groups");
      group_of_.emplace(id, group.group_id);
    }
    group_index_.emplace(group.group_id, groups_.size());
    groups_.push_back(std::move(group));
  }

  const std::vector<MeaningGroup>& groups() const { return groups_; }

  const std::string* group_of(const std::string& idiom_id) const {
    auto it = group_of_.find(idiom_id);
    return it == group_of_.end() ? nullptr : &it->second;
  }

  std::vector<std::string> grouped_idioms() const {
    std::vector<std::string> ids;
    for (const auto& g : groups_) ids.insert(ids.end(), g.idiom_ids.begin(), g.idiom_ids.end());
    std::sort(ids.begin(), ids.end());
    return ids;
  }

  size_t idiom_count() const { return group_of_.size(); }

  double mean_group_size() const {
    if (groups_.empty()) return 0.0;
    return static_cast<double>(idiom_count()) / static_cast<double>(groups_.size());
  }

 private:
  std::vector<MeaningGroup> groups_;
  std::map<std::string, size_t> group_index_;
  std::map<std::string, std::string> group_of_;
};

// Meaning-groups JSON: {"groups":[{"group_id","name","idiom_ids":[...]}]}.
inline MeaningGroups load_meaning_groups(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ValidationError("meaning-groups parse error in " + path.string() + ": " + e.what());
  }
  MeaningGroups out;
  try {
    for (const auto& jg : j.at("groups")) {
      MeaningGroup g;
      g.group_id = jg.at("group_id").get<std::string>();
      g.name = jg.at("name").get<std::string>();
      g.idiom_ids = jg.at("idiom_ids").get<std::vector<std::string>>();
      out.add(std::move(g));
    }
  } catch (const json::exception& e) {
    throw ValidationError("meaning-groups field error in " + path.string() + ": " + e.what());
  }
  return out;
}

}  // namespace idiombed
