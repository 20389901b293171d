#pragma once

#include <optional>
#include <string>
#include <vector>

#include "idiombed/common.hpp"
#include "idiombed/corpus.hpp"
#include "idiombed/tokenizer.hpp"

namespace idiombed {

enum class Transform { iti, copy, span_infill, template_infill };

inline std::string to_string(Transform t) {
  switch (t) {
    case Transform::iti: return "iti";
    case Transform::copy: return "copy";
    case Transform::span_infill: return "span_infill";
    case Transform::template_infill: return "template_infill";
  }
  return "?";
}

enum class CompanionMode { copy, span_infilling };

inline std::string to_string(CompanionMode m) {
  return m == CompanionMode::copy ? "copy" : "span_infilling";
}

inline CompanionMode companion_mode_from_string(const std::string& s) {
  if (s == "copy") return CompanionMode::copy;
  if (s == "span_infilling") return CompanionMode::span_infilling;
  throw ValidationError("unknown companion_mode: " + s);
}

struct NoisingPolicy {
  double p_iti = 0.5;
  double span_lambda = 3.0;
  std::string mask_sentinel = "[MASK]";
  CompanionMode companion_mode = CompanionMode::span_infilling;
  double template_mix = 0.2;
  uint64_t seed = 0;

  void validate() const {
    if (p_iti < 0.0 || p_iti > 1.0) throw ValidationError("noising: p_iti must be in [0,1]");
    if (span_lambda <= 0.0) throw ValidationError("noising: span_lambda must be positive");
    if (template_mix < 0.0 || template_mix > 1.0)
      throw ValidationError("noising: template_mix must be in [0,1]");
  }
};

// A sentence with its subword ids and the IE's token span, ready to corrupt.
struct TokenizedInstance {
  std::string instance_id;
  std::string idiom_id;
  std::vector<int> tokens;
  TokenSpan ie_span;
};

inline TokenizedInstance tokenize_instance(const PieInstance& inst, const Tokenizer& tokenizer) {
  TokenizedInstance out;
  out.instance_id = inst.instance_id;
  out.idiom_id = inst.idiom_id;
  out.tokens = tokenizer.encode(inst.text);
  out.ie_span = align_span(inst.text, inst.start, inst.end, tokenizer);
  return out;
}

struct CorruptionExample {
  std::vector<int> source_tokens;
  std::vector<int> target_tokens;  // always the uncorrupted sentence
  Transform transform = Transform::copy;
  TokenSpan ie_span_target;
  std::optional<TokenSpan> ie_span_source;      // absent for iti
  std::optional<TokenSpan> masked_span_target;  // the span one mask replaces
  std::string idiom_id;
  std::string instance_id;
};

// ---------------------------------------------------------------------------
// Transforms

// Splices the IE out of the source and leaves one mask in its place.
inline CorruptionExample iti_transform(const TokenizedInstance& inst, int mask_id) {
  const auto& s = inst.ie_span;
  if (!s.valid() || s.end_token > inst.tokens.size())
    throw ValidationError("iti_transform: IE span invalid for instance " + inst.instance_id);
  CorruptionExample ex;
  ex.transform = Transform::iti;
  ex.target_tokens = inst.tokens;
  ex.ie_span_target = s;
  ex.idiom_id = inst.idiom_id;
  ex.instance_id = inst.instance_id;
  ex.source_tokens.assign(inst.tokens.begin(), inst.tokens.begin() + static_cast<long>(s.start_token));
  ex.source_tokens.push_back(mask_id);
  ex.source_tokens.insert(ex.source_tokens.end(),
                          inst.tokens.begin() + static_cast<long>(s.end_token), inst.tokens.end());
  ex.masked_span_target = s;
  return ex;
}

inline CorruptionExample copy_transform(const TokenizedInstance& inst) {
  CorruptionExample ex;
  ex.transform = Transform::copy;
  ex.source_tokens = inst.tokens;
  ex.target_tokens = inst.tokens;
  ex.ie_span_target = inst.ie_span;
  ex.ie_span_source = inst.ie_span;
  ex.idiom_id = inst.idiom_id;
  ex.instance_id = inst.instance_id;
  return ex;
}

// Masks a Poisson-length contiguous run of non-IE tokens with one mask.
// A zero-length draw degenerates to the copy transform; so does a sentence
// with no non-IE tokens (flagged through fell_back).
inline CorruptionExample span_infilling_transform(const TokenizedInstance& inst,
                                                  const NoisingPolicy& policy, Rng& rng,
                                                  int mask_id, bool* fell_back = nullptr) {
  if (fell_back) *fell_back = false;
  const size_t n = inst.tokens.size();
  const auto& ie = inst.ie_span;
  const int len_drawn = poisson_sample(rng, policy.span_lambda);
  if (len_drawn == 0) return copy_transform(inst);

  const size_t left_run = ie.start_token;        // [0, ie.start)
  const size_t right_run = n - ie.end_token;     // [ie.end, n)
  const size_t longest = std::max(left_run, right_run);
  if (longest == 0) {
    if (fell_back) *fell_back = true;
    return copy_transform(inst);
  }
  const size_t len = std::min<size_t>(static_cast<size_t>(len_drawn), longest);

  // Uniform over every feasible placement of the (possibly truncated) length
  // in either contiguous non-IE run.
  const size_t left_slots = left_run >= len ? left_run - len + 1 : 0;
  const size_t right_slots = right_run >= len ? right_run - len + 1 : 0;
  const size_t slot = uniform_below(rng, left_slots + right_slots);
  const size_t mask_start = slot < left_slots ? slot : ie.end_token + (slot - left_slots);
  const TokenSpan masked{mask_start, mask_start + len};

  CorruptionExample ex;
  ex.transform = Transform::span_infill;
  ex.target_tokens = inst.tokens;
  ex.ie_span_target = ie;
  ex.masked_span_target = masked;
  ex.idiom_id = inst.idiom_id;
  ex.instance_id = inst.instance_id;
  ex.source_tokens.assign(inst.tokens.begin(), inst.tokens.begin() + static_cast<long>(masked.start_token));
  ex.source_tokens.push_back(mask_id);
  ex.source_tokens.insert(ex.source_tokens.end(),
                          inst.tokens.begin() + static_cast<long>(masked.end_token), inst.tokens.end());
  const size_t shrink = masked.width() - 1;
  ex.ie_span_source = masked.end_token <= ie.start_token
                          ? TokenSpan{ie.start_token - shrink, ie.end_token - shrink}
                          : ie;
  return ex;
}

// Source is the masked template (one mask over the definition region), target
// the full template with the definition spelled out.
inline CorruptionExample template_infilling_transform(const TemplateSentence& tmpl,
                                                      const Tokenizer& tokenizer) {
  const std::vector<Token> full = tokenizer.tokenize(tmpl.full_text);
  const std::vector<Token> masked = tokenizer.tokenize(tmpl.masked_text);

  CorruptionExample ex;
  ex.transform = Transform::template_infill;
  ex.idiom_id = tmpl.idiom_id;
  ex.instance_id = tmpl.idiom_id + "#template" + std::to_string(tmpl.template_index);
  for (const auto& t : full) ex.target_tokens.push_back(t.id);
  size_t mask_pos = masked.size();
  for (size_t i = 0; i < masked.size(); ++i) {
    ex.source_tokens.push_back(masked[i].id);
    if (masked[i].id == tokenizer.mask_id()) mask_pos = i;
  }
  if (mask_pos == masked.size())
    throw ValidationError("template for " + tmpl.idiom_id + " lost its mask sentinel");

  // The masked template and the full template share a prefix (up to the mask)
  // and a suffix; the region in between is the definition.
  const size_t suffix = masked.size() - mask_pos - 1;
  if (full.size() < mask_pos + suffix)
    throw ValidationError("template for " + tmpl.idiom_id + ": masked/full texts diverge");
  const size_t def_end = full.size() - suffix;
  if (def_end <= mask_pos)
    throw ValidationError("definition of " + tmpl.idiom_id + " tokenizes to nothing");
  ex.masked_span_target = TokenSpan{mask_pos, def_end};

  // Locate the lemma span via char offsets in both renderings.
  const size_t lemma_start = tmpl.full_text.find(tmpl.lemma);
  if (tmpl.lemma.empty() || lemma_start == std::string::npos)
    throw ValidationError("template for " + tmpl.idiom_id + " does not contain its lemma");
  ex.ie_span_target = align_span(tmpl.full_text, lemma_start, lemma_start + tmpl.lemma.size(), tokenizer);
  const size_t src_lemma_start = tmpl.masked_text.find(tmpl.lemma);
  if (src_lemma_start == std::string::npos)
    throw ValidationError("masked template for " + tmpl.idiom_id + " does not contain its lemma");
  ex.ie_span_source = align_span(tmpl.masked_text, src_lemma_start,
                                 src_lemma_start + tmpl.lemma.size(), tokenizer);
  return ex;
}

// ---------------------------------------------------------------------------
// Epoch schedule

// Each sentence is independently assigned ITI with probability p_iti, else the
// companion transform; template examples are appended to the companion pool at
// the template_mix rate. Fully determined by (policy.seed, epoch).
inline std::vector<CorruptionExample> schedule_epoch(const std::vector<TokenizedInstance>& instances,
                                                     const std::vector<TemplateSentence>& templates,
                                                     const NoisingPolicy& policy,
                                                     const Tokenizer& tokenizer, uint64_t epoch) {
  policy.validate();
  const int mask_id = tokenizer.mask_id();
  std::vector<CorruptionExample> out;
  out.reserve(instances.size());
  size_t companions = 0;
  for (size_t i = 0; i < instances.size(); ++i) {
    Rng rng(mix_seed(policy.seed, epoch, i));
    if (uniform_real(rng) < policy.p_iti) {
      out.push_back(iti_transform(instances[i], mask_id));
    } else {
      ++companions;
      if (policy.companion_mode == CompanionMode::copy) {
        out.push_back(copy_transform(instances[i]));
      } else {
        out.push_back(span_infilling_transform(instances[i], policy, rng, mask_id));
      }
    }
  }
  if (!templates.empty() && policy.template_mix > 0.0) {
    const auto n_templates =
        static_cast<size_t>(std::llround(policy.template_mix * static_cast<double>(companions)));
    Rng rng(mix_seed(mix_seed(policy.seed, epoch), std::string("templates")));
    for (size_t j = 0; j < n_templates; ++j) {
      const auto& tmpl = templates[uniform_below(rng, templates.size())];
      out.push_back(template_infilling_transform(tmpl, tokenizer));
    }
  }
  return out;
}

// Per-example invariant check, used by the fuzz suites and the trainer.
inline void check_example_invariants(const CorruptionExample& ex) {
  auto fail = [&](const std::string& why) {
    throw IntegrityError("corruption example " + ex.instance_id + ": " + why);
  };
  if (!ex.ie_span_target.valid() || ex.ie_span_target.end_token > ex.target_tokens.size())
    fail("IE span outside target");
  size_t masks = 0;
  for (int t : ex.source_tokens)
    if (t == Tokenizer::kMaskId) ++masks;
  if (masks > 1) fail("more than one mask in source");
  switch (ex.transform) {
    case Transform::iti: {
      if (masks != 1) fail("iti must contain exactly one mask");
      if (ex.ie_span_source.has_value()) fail("iti must not carry a source IE span");
      if (ex.source_tokens.size() != ex.target_tokens.size() - ex.ie_span_target.width() + 1)
        fail("iti source length mismatch");
      break;
    }
    case Transform::copy: {
      if (ex.source_tokens != ex.target_tokens) fail("copy must be the identity");
      break;
    }
    case Transform::span_infill: {
      if (masks != 1) fail("span_infill must contain exactly one mask");
      if (!ex.masked_span_target.has_value()) fail("span_infill missing masked span");
      if (ex.masked_span_target->overlaps(ex.ie_span_target)) fail("masked span intersects IE span");
      if (!ex.ie_span_source.has_value()) fail("span_infill missing source IE span");
      const auto& src_span = *ex.ie_span_source;
      for (size_t k = 0; k < src_span.width(); ++k) {
        if (ex.source_tokens.at(src_span.start_token + k) !=
            ex.target_tokens.at(ex.ie_span_target.start_token + k))
          fail("IE tokens not verbatim in span_infill source");
      }
      break;
    }
    case Transform::template_infill: {
      if (masks != 1) fail("template_infill must contain exactly one mask");
      if (!ex.ie_span_source.has_value()) fail("template_infill missing source IE span");
      break;
    }
  }
}

}  // namespace idiombed
