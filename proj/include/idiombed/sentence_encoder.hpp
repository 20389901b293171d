#pragma once

#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "idiombed/common.hpp"
#include "idiombed/model.hpp"
#include "idiombed/tokenizer.hpp"

namespace idiombed {

// Frozen sentence embedding source for definition vectors. Two bindings ship:
// the backbone itself (encoder mean pooling, adapters off) and a precomputed
// vector file for embeddings produced by an external model.
class SentenceEncoder {
 public:
  virtual ~SentenceEncoder() = default;
  virtual Vec encode(const std::string& key, const std::string& text) = 0;
  virtual int dim() const = 0;
  virtual std::string name() const = 0;
};

class BackboneSentenceEncoder final : public SentenceEncoder {
 public:
  BackboneSentenceEncoder(const AdaptedModel& model, const Tokenizer& tokenizer)
      : model_(model), tokenizer_(tokenizer) {}

  Vec encode(const std::string& key, const std::string& text) override {
    if (text.empty()) throw ValidationError("cannot encode empty text for " + key);
    const std::vector<int> tokens = tokenizer_.encode(text);
    const Mat states = model_.token_states(tokens, ExtractionSide::encoder, /*use_adapters=*/false);
    return states.colwise().mean().transpose();
  }

  int dim() const override { return model_.hidden_dim(); }
  std::string name() const override { return "backbone"; }

 private:
  const AdaptedModel& model_;
  const Tokenizer& tokenizer_;
};

// JSONL of {"key": ..., "vector": [...]}; keys are idiom_ids.
class PrecomputedSentenceEncoder final : public SentenceEncoder {
 public:
  explicit PrecomputedSentenceEncoder(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw UpstreamMissingError("precomputed vector file missing: " + path.string());
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw ValidationError("vector file parse error at line " + std::to_string(lineno) + ": " +
                              e.what());
      }
      const auto key = j.at("key").get<std::string>();
      const auto values = j.at("vector").get<std::vector<double>>();
      if (values.empty()) throw ValidationError("empty vector for key " + key);
      if (dim_ == 0) dim_ = static_cast<int>(values.size());
      if (static_cast<int>(values.size()) != dim_)
        throw IntegrityError("vector file: inconsistent dimension at line " + std::to_string(lineno));
      Vec v(dim_);
      for (int i = 0; i < dim_; ++i) v(i) = values[static_cast<size_t>(i)];
      vectors_[key] = std::move(v);
    }
    if (vectors_.empty()) throw ValidationError("vector file " + path.string() + " is empty");
  }

  Vec encode(const std::string& key, const std::string&) override {
    auto it = vectors_.find(key);
    if (it == vectors_.end())
      throw ValidationError("no precomputed vector for key " + key);
    return it->second;
  }

  int dim() const override { return dim_; }
  std::string name() const override { return "external"; }

 private:
  std::map<std::string, Vec> vectors_;
  int dim_ = 0;
};

}  // namespace idiombed
