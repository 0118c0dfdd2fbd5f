#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pacecast/common.hpp"
#include "pacecast/quantizer.hpp"

namespace pacecast {

// ----------------------------- records -----------------------------

struct EventRecord {
  double temperature_c = 0.0;
  double feels_like_c = 0.0;
  double humidity_pct = 0.0;
  double wind_kph = 0.0;
  std::string conditions;  // rain | clear | other
  double distance_m = 0.0;
  int age_years = 0;
  std::string gender;
  int weeks_since_last = 0;  // gap to the previous race, 0 for the first
  int weeks_to_target = 0;   // gap chain to the runner's final race
  double pace_s = 0.0;       // seconds per mile

  void validate() const {
    for (double v : {temperature_c, feels_like_c, humidity_pct, wind_kph, distance_m, pace_s})
      if (!std::isfinite(v)) throw DataError("EventRecord: non-finite numeric field");
    if (weeks_since_last < 0 || weeks_to_target < 0)
      throw DataError("EventRecord: negative cadence field");
  }
};

struct RunnerHistory {
  std::string runner_id;
  std::vector<EventRecord> events;  // chronological
};

// ----------------------------- vocabulary -----------------------------

struct TokenRange {
  int begin = 0;
  int size = 0;
  bool contains(int id) const { return id >= begin && id < begin + size; }
};

struct CanonicalDistance {
  std::string name;
  double meters = 0.0;
};

struct FeatureDef {
  enum class Kind { continuous, categorical, weeks, age, distance };
  std::string name;
  Kind kind = Kind::continuous;
  BinSpec bins;                         // continuous
  std::vector<std::string> categories;  // categorical
  int cap = 0;                          // weeks: max raw value; age: max years
  std::vector<CanonicalDistance> distances;  // distance (plus implicit "other")
};

inline constexpr int kAgeBucketYears = 5;

struct DecodedToken {
  std::string feature;
  int index = -1;       // bin / category / raw-week / bucket index
  std::string label;    // category or distance name when applicable
};

// Disjoint token-ID ranges for every feature, categorical set, cadence value
// and the PAD special token (ID 0). Immutable once built.
class Vocabulary {
 public:
  static constexpr int kPadId = 0;

  Vocabulary() = default;

  explicit Vocabulary(std::vector<FeatureDef> features) : features_(std::move(features)) {
    int next = 1;  // 0 is PAD
    for (const auto& f : features_) {
      if (ranges_.count(f.name))
        throw ConfigError("Vocabulary: duplicate feature name '" + f.name + "'");
      int size = 0;
      switch (f.kind) {
        case FeatureDef::Kind::continuous:
          size = f.bins.bin_count();
          if (size < 1) throw ConfigError("Vocabulary: feature '" + f.name + "' has no bins");
          break;
        case FeatureDef::Kind::categorical:
          size = static_cast<int>(f.categories.size());
          if (size == 0)
            throw ConfigError("Vocabulary: empty categorical set for '" + f.name + "'");
          break;
        case FeatureDef::Kind::weeks:
          if (f.cap < 0) throw ConfigError("Vocabulary: negative cap for '" + f.name + "'");
          size = f.cap + 1;
          break;
        case FeatureDef::Kind::age:
          if (f.cap < 0) throw ConfigError("Vocabulary: negative cap for '" + f.name + "'");
          size = f.cap / kAgeBucketYears + 1;
          break;
        case FeatureDef::Kind::distance:
          if (f.distances.empty())
            throw ConfigError("Vocabulary: empty distance set for '" + f.name + "'");
          size = static_cast<int>(f.distances.size()) + 1;  // + "other"
          break;
      }
      ranges_[f.name] = TokenRange{next, size};
      order_.push_back(f.name);
      next += size;
    }
    vocab_size_ = next;
  }

  int vocab_size() const { return vocab_size_; }
  const std::vector<std::string>& feature_order() const { return order_; }
  const TokenRange& range(const std::string& feature) const {
    auto it = ranges_.find(feature);
    if (it == ranges_.end()) throw ConfigError("Vocabulary: unknown feature '" + feature + "'");
    return it->second;
  }
  const FeatureDef& feature(const std::string& name) const {
    for (const auto& f : features_)
      if (f.name == name) return f;
    throw ConfigError("Vocabulary: unknown feature '" + name + "'");
  }
  const std::vector<FeatureDef>& features() const { return features_; }

  int encode_continuous(const std::string& name, double value) const {
    const auto& f = feature(name);
    const auto idx = locate(f.bins, value);
    if (!idx)
      throw DataError("encode: " + name + " value " + fmt_g(value) + " outside bin support [" +
                      fmt_g(f.bins.support_min()) + ", " + fmt_g(f.bins.support_max()) + ")");
    return range(name).begin + *idx;
  }

  int encode_categorical(const std::string& name, const std::string& value) const {
    const auto& f = feature(name);
    for (std::size_t i = 0; i < f.categories.size(); ++i)
      if (f.categories[i] == value) return range(name).begin + static_cast<int>(i);
    throw DataError("encode: unknown " + name + " category '" + value + "'");
  }

  int encode_weeks(const std::string& name, int weeks) const {
    if (weeks < 0) throw DataError("encode: negative " + name);
    const auto& f = feature(name);
    return range(name).begin + std::min(weeks, f.cap);  // values above cap clamp to the cap token
  }

  int encode_age(const std::string& name, int age_years) const {
    if (age_years < 0) throw DataError("encode: negative age");
    const auto& f = feature(name);
    return range(name).begin + std::min(age_years, f.cap) / kAgeBucketYears;
  }

  int encode_distance(const std::string& name, double meters) const {
    if (!(meters > 0.0)) throw DataError("encode: non-positive distance");
    const auto& f = feature(name);
    for (std::size_t i = 0; i < f.distances.size(); ++i)
      if (std::abs(meters - f.distances[i].meters) <= 0.005 * f.distances[i].meters)
        return range(name).begin + static_cast<int>(i);
    return range(name).begin + static_cast<int>(f.distances.size());  // "other"
  }

  DecodedToken decode(int id) const {
    if (id == kPadId) return {"PAD", 0, "PAD"};
    for (const auto& f : features_) {
      const auto& r = ranges_.at(f.name);
      if (!r.contains(id)) continue;
      DecodedToken t;
      t.feature = f.name;
      t.index = id - r.begin;
      switch (f.kind) {
        case FeatureDef::Kind::categorical:
          t.label = f.categories[static_cast<std::size_t>(t.index)];
          break;
        case FeatureDef::Kind::distance:
          t.label = t.index < static_cast<int>(f.distances.size())
                        ? f.distances[static_cast<std::size_t>(t.index)].name
                        : "other";
          break;
        default:
          break;
      }
      return t;
    }
    throw DataError("decode: token id " + std::to_string(id) + " out of vocabulary");
  }

 private:
  std::vector<FeatureDef> features_;
  std::vector<std::string> order_;
  std::map<std::string, TokenRange> ranges_;
  int vocab_size_ = 1;
};

// Fixed stride-grammar block order: 8 feature/demographic tokens, then pace,
// then the two cadence tokens.
inline const std::array<const char*, 11>& block_feature_order() {
  static const std::array<const char*, 11> order = {
      "temperature", "humidity", "wind",     "feels_like",       "conditions",     "gender",
      "age",         "distance", "pace",     "weeks_since_last", "weeks_to_target"};
  return order;
}

struct VocabularyBuildConfig {
  std::vector<std::string> conditions_categories = {"rain", "clear", "other"};
  std::vector<std::string> gender_categories = {"F", "M", "X"};
  int cadence_cap = 104;
  int age_cap = 100;
  std::vector<CanonicalDistance> distances = {
      {"5k", 5000.0}, {"10k", 10000.0}, {"half", 21097.5}, {"marathon", 42195.0}};
};

// Standard 11-feature vocabulary from fitted bin specs. bin_specs must hold
// temperature, humidity, wind, feels_like and pace.
inline Vocabulary build_vocabulary(const std::map<std::string, BinSpec>& bin_specs,
                                   const VocabularyBuildConfig& cfg = {}) {
  auto spec_for = [&](const char* name) -> const BinSpec& {
    auto it = bin_specs.find(name);
    if (it == bin_specs.end())
      throw ConfigError("build_vocabulary: missing BinSpec for '" + std::string(name) + "'");
    return it->second;
  };
  std::vector<FeatureDef> defs;
  for (const char* name : {"temperature", "humidity", "wind", "feels_like"}) {
    FeatureDef f;
    f.name = name;
    f.kind = FeatureDef::Kind::continuous;
    f.bins = spec_for(name);
    defs.push_back(std::move(f));
  }
  {
    FeatureDef f;
    f.name = "conditions";
    f.kind = FeatureDef::Kind::categorical;
    f.categories = cfg.conditions_categories;
    defs.push_back(std::move(f));
  }
  {
    FeatureDef f;
    f.name = "gender";
    f.kind = FeatureDef::Kind::categorical;
    f.categories = cfg.gender_categories;
    defs.push_back(std::move(f));
  }
  {
    FeatureDef f;
    f.name = "age";
    f.kind = FeatureDef::Kind::age;
    f.cap = cfg.age_cap;
    defs.push_back(std::move(f));
  }
  {
    FeatureDef f;
    f.name = "distance";
    f.kind = FeatureDef::Kind::distance;
    f.distances = cfg.distances;
    defs.push_back(std::move(f));
  }
  {
    FeatureDef f;
    f.name = "pace";
    f.kind = FeatureDef::Kind::continuous;
    f.bins = spec_for("pace");
    defs.push_back(std::move(f));
  }
  for (const char* name : {"weeks_since_last", "weeks_to_target"}) {
    FeatureDef f;
    f.name = name;
    f.kind = FeatureDef::Kind::weeks;
    f.cap = cfg.cadence_cap;
    defs.push_back(std::move(f));
  }
  return Vocabulary(std::move(defs));
}

// ----------------------------- windows -----------------------------

enum class AblationMode { none, drop_time_tokens, shuffle_events };

inline const char* to_string(AblationMode m) {
  switch (m) {
    case AblationMode::none: return "none";
    case AblationMode::drop_time_tokens: return "drop_time_tokens";
    case AblationMode::shuffle_events: return "shuffle_events";
  }
  return "?";
}

inline AblationMode ablation_from_string(const std::string& s) {
  if (s == "none") return AblationMode::none;
  if (s == "drop_time_tokens") return AblationMode::drop_time_tokens;
  if (s == "shuffle_events") return AblationMode::shuffle_events;
  throw ConfigError("unknown ablation mode '" + s + "'");
}

inline int block_size(AblationMode mode) {
  return mode == AblationMode::drop_time_tokens ? 9 : 11;
}

inline constexpr int kTargetFeatureTokens = 8;
inline constexpr int kDefaultMaxEvents = 30;

inline int window_capacity(int max_events, AblationMode mode = AblationMode::none) {
  return (max_events - 1) * block_size(mode) + kTargetFeatureTokens;
}

// Raw continuous value behind a token position, for the soft input-embedding
// mode.
struct ContinuousSlot {
  int pos = 0;
  int feature = 0;  // index into Vocabulary::features()
  double value = 0.0;
};

struct EncodedWindow {
  std::vector<std::int32_t> ids;  // PAD-filled to the window capacity
  int n_real = 0;
  int predict_pos = 0;  // last real token; its output predicts the label
  int label_bin = -1;
  double label_value = 0.0;
  int runner_index = -1;
  int target_index = -1;
  std::vector<ContinuousSlot> continuous_slots;
};

struct WindowOptions {
  int max_events = kDefaultMaxEvents;
  AblationMode ablation = AblationMode::none;
  std::uint64_t shuffle_seed = 0;  // used by shuffle_events only
};

namespace detail {

inline void append_block(const Vocabulary& vocab, const EventRecord& ev, bool include_cadence,
                         int weeks_to_target, EncodedWindow& w) {
  auto push = [&](int id, const char* feature_name, double raw, bool continuous) {
    if (continuous) {
      int fi = 0;
      for (const auto& f : vocab.features()) {
        if (f.name == feature_name) break;
        ++fi;
      }
      w.continuous_slots.push_back({static_cast<int>(w.ids.size()), fi, raw});
    }
    w.ids.push_back(static_cast<std::int32_t>(id));
  };
  ev.validate();
  push(vocab.encode_continuous("temperature", ev.temperature_c), "temperature", ev.temperature_c, true);
  push(vocab.encode_continuous("humidity", ev.humidity_pct), "humidity", ev.humidity_pct, true);
  push(vocab.encode_continuous("wind", ev.wind_kph), "wind", ev.wind_kph, true);
  push(vocab.encode_continuous("feels_like", ev.feels_like_c), "feels_like", ev.feels_like_c, true);
  push(vocab.encode_categorical("conditions", ev.conditions), "conditions", 0, false);
  push(vocab.encode_categorical("gender", ev.gender), "gender", 0, false);
  push(vocab.encode_age("age", ev.age_years), "age", 0, false);
  push(vocab.encode_distance("distance", ev.distance_m), "distance", 0, false);
  push(vocab.encode_continuous("pace", ev.pace_s), "pace", ev.pace_s, true);
  if (include_cadence) {
    push(vocab.encode_weeks("weeks_since_last", ev.weeks_since_last), "weeks_since_last", 0, false);
    push(vocab.encode_weeks("weeks_to_target", weeks_to_target), "weeks_to_target", 0, false);
  }
}

inline void append_target_features(const Vocabulary& vocab, const EventRecord& ev,
                                   EncodedWindow& w) {
  EncodedWindow tmp;  // reuse the block encoder, then keep the first 8 tokens
  append_block(vocab, ev, false, 0, tmp);
  for (int i = 0; i < kTargetFeatureTokens; ++i) {
    for (const auto& slot : tmp.continuous_slots)
      if (slot.pos == i)
        w.continuous_slots.push_back({static_cast<int>(w.ids.size()), slot.feature, slot.value});
    w.ids.push_back(tmp.ids[static_cast<std::size_t>(i)]);
  }
}

}  // namespace detail

// Full 11-token block for one event (pace between the feature tokens and the
// cadence pair). weeks_to_target is taken from the record itself.
inline std::array<int, 11> encode_block(const EventRecord& ev, const Vocabulary& vocab) {
  EncodedWindow tmp;
  detail::append_block(vocab, ev, true, ev.weeks_to_target, tmp);
  std::array<int, 11> out{};
  for (int i = 0; i < 11; ++i) out[static_cast<std::size_t>(i)] = tmp.ids[static_cast<std::size_t>(i)];
  return out;
}

// Causal window for predicting the pace of events[target_index]: up to
// max_events-1 most recent context events as full blocks, then the target's
// 8 feature/demographic tokens. The target's pace is the label only; its
// cadence tokens are excluded. weeks_to_target for context blocks is derived
// from the gap chain relative to the chosen target.
inline EncodedWindow encode_window(const RunnerHistory& history, int target_index,
                                   const Vocabulary& vocab, const WindowOptions& opts = {},
                                   int runner_index = -1) {
  if (target_index < 1)
    throw DataError("encode_window: target_index must be >= 1 (no history to condition on)");
  if (target_index >= static_cast<int>(history.events.size()))
    throw DataError("encode_window: target_index out of range");
  if (opts.max_events < 2) throw ConfigError("encode_window: max_events must be >= 2");

  const int first_context = std::max(0, target_index - (opts.max_events - 1));
  std::vector<int> context;
  for (int i = first_context; i < target_index; ++i) context.push_back(i);

  if (opts.ablation == AblationMode::shuffle_events && context.size() > 1) {
    Rng rng(opts.shuffle_seed);
    rng.shuffle(context);
  }

  EncodedWindow w;
  w.runner_index = runner_index;
  w.target_index = target_index;

  // gap chain over the (possibly permuted) context, ending at the target
  const int n_ctx = static_cast<int>(context.size());
  std::vector<int> weeks_to_target(static_cast<std::size_t>(n_ctx), 0);
  int acc = history.events[static_cast<std::size_t>(target_index)].weeks_since_last;
  for (int j = n_ctx - 1; j >= 0; --j) {
    weeks_to_target[static_cast<std::size_t>(j)] = acc;
    acc += history.events[static_cast<std::size_t>(context[static_cast<std::size_t>(j)])].weeks_since_last;
  }

  const bool cadence = opts.ablation != AblationMode::drop_time_tokens;
  for (int j = 0; j < n_ctx; ++j)
    detail::append_block(vocab, history.events[static_cast<std::size_t>(context[static_cast<std::size_t>(j)])],
                         cadence, weeks_to_target[static_cast<std::size_t>(j)], w);

  const EventRecord& target = history.events[static_cast<std::size_t>(target_index)];
  detail::append_target_features(vocab, target, w);

  const auto pace_idx = locate(vocab.feature("pace").bins, target.pace_s);
  if (!pace_idx)
    throw DataError("encode_window: target pace " + fmt_g(target.pace_s) +
                    " outside bin support");
  w.label_bin = *pace_idx;
  w.label_value = target.pace_s;
  w.n_real = static_cast<int>(w.ids.size());
  w.predict_pos = w.n_real - 1;
  w.ids.resize(static_cast<std::size_t>(window_capacity(opts.max_events, opts.ablation)),
               Vocabulary::kPadId);
  return w;
}

// ----------------------------- entity splits -----------------------------

enum class Split : int { train = 0, val = 1, test = 2 };

struct SplitRatios {
  double train = 0.75;
  double val = 0.083;
  double test = 0.167;
};

// Deterministic hash-based split: every runner lands in exactly one split,
// independent of list order.
inline std::vector<Split> split_entities(std::span<const std::string> runner_ids,
                                         const SplitRatios& ratios, std::uint64_t seed) {
  const double sum = ratios.train + ratios.val + ratios.test;
  if (!(ratios.train > 0.0) || !(ratios.val > 0.0) || !(ratios.test > 0.0) ||
      std::abs(sum - 1.0) > 1e-9)
    throw ConfigError("split_entities: ratios must be positive and sum to 1");
  std::vector<Split> out;
  out.reserve(runner_ids.size());
  for (const auto& id : runner_ids) {
    const std::uint64_t h = splitmix64(splitmix64(seed) ^ fnv1a64(id));
    const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
    out.push_back(u < ratios.train          ? Split::train
                  : u < ratios.train + ratios.val ? Split::val
                                                  : Split::test);
  }
  return out;
}

// ----------------------------- dataset I/O -----------------------------

inline nlohmann::json event_to_json(const EventRecord& ev) {
  return nlohmann::json{{"temperature_c", ev.temperature_c},
                        {"feels_like_c", ev.feels_like_c},
                        {"humidity_pct", ev.humidity_pct},
                        {"wind_kph", ev.wind_kph},
                        {"conditions", ev.conditions},
                        {"distance_m", ev.distance_m},
                        {"age_years", ev.age_years},
                        {"weeks_since_last", ev.weeks_since_last},
                        {"weeks_to_target", ev.weeks_to_target},
                        {"pace_s", ev.pace_s}};
}

inline EventRecord event_from_json(const nlohmann::json& j, const std::string& gender) {
  EventRecord ev;
  ev.temperature_c = j.at("temperature_c").get<double>();
  ev.feels_like_c = j.at("feels_like_c").get<double>();
  ev.humidity_pct = j.at("humidity_pct").get<double>();
  ev.wind_kph = j.at("wind_kph").get<double>();
  ev.conditions = j.at("conditions").get<std::string>();
  ev.distance_m = j.at("distance_m").get<double>();
  ev.age_years = j.at("age_years").get<int>();
  ev.weeks_since_last = j.at("weeks_since_last").get<int>();
  ev.weeks_to_target = j.at("weeks_to_target").get<int>();
  ev.pace_s = j.at("pace_s").get<double>();
  ev.gender = gender;
  ev.validate();
  return ev;
}

// One runner per line: runner_id, gender, then the ordered event array.
inline void write_dataset_jsonl(const std::string& path, std::span<const RunnerHistory> runners) {
  std::ofstream out(path);
  if (!out) throw DataError("write_dataset_jsonl: cannot open '" + path + "'");
  for (const auto& r : runners) {
    nlohmann::json events = nlohmann::json::array();
    for (const auto& ev : r.events) events.push_back(event_to_json(ev));
    nlohmann::json line{{"runner_id", r.runner_id},
                        {"gender", r.events.empty() ? "X" : r.events.front().gender},
                        {"events", std::move(events)}};
    out << line.dump() << "\n";
  }
  if (!out) throw DataError("write_dataset_jsonl: write failed for '" + path + "'");
}

inline std::vector<RunnerHistory> read_dataset_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("read_dataset_jsonl: cannot open '" + path + "'");
  std::vector<RunnerHistory> runners;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      RunnerHistory r;
      r.runner_id = j.at("runner_id").get<std::string>();
      const auto gender = j.at("gender").get<std::string>();
      for (const auto& je : j.at("events")) r.events.push_back(event_from_json(je, gender));
      runners.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("read_dataset_jsonl: parse error at " + path + ":" +
                      std::to_string(lineno) + ": " + e.what());
    }
  }
  return runners;
}

// ----------------------------- manifest -----------------------------

inline constexpr int kManifestVersion = 1;

inline nlohmann::json binspec_to_json(const BinSpec& spec) {
  return nlohmann::json{{"feature_name", spec.feature_name},
                        {"edges", spec.edges},
                        {"width_cap", spec.width_cap},
                        {"counts", spec.counts}};
}

inline BinSpec binspec_from_json(const nlohmann::json& j) {
  BinSpec spec;
  spec.feature_name = j.at("feature_name").get<std::string>();
  spec.edges = j.at("edges").get<std::vector<double>>();
  spec.width_cap = j.at("width_cap").get<double>();
  spec.counts = j.at("counts").get<std::vector<std::int64_t>>();
  if (spec.edges.size() < 2) throw DataError("binspec_from_json: fewer than 2 edges");
  for (std::size_t i = 0; i + 1 < spec.edges.size(); ++i)
    if (!(spec.edges[i] < spec.edges[i + 1]))
      throw DataError("binspec_from_json: edges not strictly increasing");
  return spec;
}

inline nlohmann::json vocabulary_to_manifest_body(const Vocabulary& vocab) {
  nlohmann::json features = nlohmann::json::array();
  for (const auto& f : vocab.features()) {
    nlohmann::json jf{{"name", f.name}};
    const auto& r = vocab.range(f.name);
    jf["range"] = {{"begin", r.begin}, {"size", r.size}};
    switch (f.kind) {
      case FeatureDef::Kind::continuous:
        jf["kind"] = "continuous";
        jf["bins"] = binspec_to_json(f.bins);
        break;
      case FeatureDef::Kind::categorical:
        jf["kind"] = "categorical";
        jf["categories"] = f.categories;
        break;
      case FeatureDef::Kind::weeks:
        jf["kind"] = "weeks";
        jf["cap"] = f.cap;
        break;
      case FeatureDef::Kind::age:
        jf["kind"] = "age";
        jf["cap"] = f.cap;
        jf["bucket_years"] = kAgeBucketYears;
        break;
      case FeatureDef::Kind::distance: {
        jf["kind"] = "distance";
        nlohmann::json ds = nlohmann::json::array();
        for (const auto& d : f.distances) ds.push_back({{"name", d.name}, {"meters", d.meters}});
        jf["distances"] = std::move(ds);
        break;
      }
    }
    features.push_back(std::move(jf));
  }
  return nlohmann::json{{"format", "pacecast-vocab"},
                        {"version", kManifestVersion},
                        {"pad_id", Vocabulary::kPadId},
                        {"vocab_size", vocab.vocab_size()},
                        {"features", std::move(features)}};
}

inline std::string manifest_hash(const Vocabulary& vocab) {
  return hash_hex(fnv1a64(vocabulary_to_manifest_body(vocab).dump()));
}

inline void save_manifest(const std::string& path, const Vocabulary& vocab) {
  nlohmann::json j = vocabulary_to_manifest_body(vocab);
  j["hash"] = manifest_hash(vocab);
  std::ofstream out(path);
  if (!out) throw DataError("save_manifest: cannot open '" + path + "'");
  out << j.dump(2) << "\n";
}

inline Vocabulary load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("load_manifest: cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("load_manifest: parse error in '" + path + "': " + e.what());
  }
  if (j.value("format", "") != "pacecast-vocab")
    throw DataError("load_manifest: '" + path + "' is not a vocabulary manifest");
  if (j.value("version", -1) != kManifestVersion)
    throw DataError("load_manifest: unsupported manifest version in '" + path + "'");
  std::vector<FeatureDef> defs;
  for (const auto& jf : j.at("features")) {
    FeatureDef f;
    f.name = jf.at("name").get<std::string>();
    const auto kind = jf.at("kind").get<std::string>();
    if (kind == "continuous") {
      f.kind = FeatureDef::Kind::continuous;
      f.bins = binspec_from_json(jf.at("bins"));
    } else if (kind == "categorical") {
      f.kind = FeatureDef::Kind::categorical;
      f.categories = jf.at("categories").get<std::vector<std::string>>();
    } else if (kind == "weeks") {
      f.kind = FeatureDef::Kind::weeks;
      f.cap = jf.at("cap").get<int>();
    } else if (kind == "age") {
      f.kind = FeatureDef::Kind::age;
      f.cap = jf.at("cap").get<int>();
    } else if (kind == "distance") {
      f.kind = FeatureDef::Kind::distance;
      for (const auto& jd : jf.at("distances"))
        f.distances.push_back({jd.at("name").get<std::string>(), jd.at("meters").get<double>()});
    } else {
      throw DataError("load_manifest: unknown feature kind '" + kind + "'");
    }
    defs.push_back(std::move(f));
  }
  Vocabulary vocab(std::move(defs));
  const auto stored = j.value("hash", "");
  if (!stored.empty() && stored != manifest_hash(vocab))
    throw DataError("load_manifest: stored hash does not match manifest content in '" + path +
                    "' (file edited or corrupted)");
  return vocab;
}

}  // namespace pacecast
