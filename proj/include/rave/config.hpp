#pragma once

// Pipeline configuration.
//
// File format, one setting per line:
//
//   # comment
//   seed = 7
//   [probe]                       # prefixes the keys that follow: probe.epochs
//   epochs = 1000
//   ct.presets = [{"name": "lung", "level": -600, "width": 1500}]
//   answerer.url = http://127.0.0.1:8080/answer
//
// Values are JSON when they parse as JSON, otherwise the trimmed text is taken
// as a string. A value that opens a bracket may continue over following lines
// until it parses. A file whose first character is '{' is read as one JSON
// object and flattened to dotted keys.
//
// Every key is checked against the schema below. Precedence is file, then
// environment (RAVE_ + key upper-cased with '.' and '-' as '_', e.g.
// RAVE_PROBE_EPOCHS), then command-line flags.

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <map>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rave/answerer.hpp"
#include "rave/bytes.hpp"
#include "rave/dicom.hpp"
#include "rave/error.hpp"
#include "rave/probe.hpp"
#include "rave/probe_io.hpp"
#include "rave/report.hpp"
#include "rave/rvc.hpp"
#include "rave/series_select.hpp"
#include "rave/tokens.hpp"

namespace rave {

enum class ValueKind { Integer, NonNegative, Positive, Number, PositiveNumber, Fraction, String, StringList, Array, Enum };

struct SchemaEntry {
  std::string key;  // '*' matches one segment
  ValueKind kind;
  std::vector<std::string> choices;  // for Enum
  std::string help;
};

inline const std::vector<SchemaEntry>& config_schema() {
  static const std::vector<SchemaEntry> schema{
      {"seed", ValueKind::NonNegative, {}, "seed for every seeded choice; recorded in outputs"},
      {"jobs", ValueKind::Positive, {}, "worker threads over exams"},
      {"modality", ValueKind::Enum, {"ct-abdomen-pelvis", "ct-chest", "ct-head", "mri-breast"}, "modality of the run"},
      {"input.roots", ValueKind::StringList, {}, "directories walked by ingest"},
      {"output.root", ValueKind::String, {}, "directory receiving all outputs"},
      {"assemble.spacing_tolerance", ValueKind::PositiveNumber, {}, "max slice gap deviation, fraction of median gap"},
      {"assemble.orientation_tolerance", ValueKind::PositiveNumber, {}, "max orientation cosine difference"},
      {"hu_band.low", ValueKind::Number, {}, "lowest plausible CT value"},
      {"hu_band.high", ValueKind::Number, {}, "highest plausible CT value"},
      {"series.plane_tolerance_deg", ValueKind::PositiveNumber, {}, "max normal deviation for plane classes"},
      {"series.time_group_window_s", ValueKind::Number, {}, "0 groups on exact acquisition time"},
      {"mri.roles", ValueKind::Array, {}, "ordered [{name, pattern}] description regexes"},
      {"ct.presets", ValueKind::Array, {}, "[{name, level, width}] CT windows"},
      {"plans.*.target_spacing", ValueKind::Array, {}, "[x, y, z] mm"},
      {"plans.*.target_dims", ValueKind::Array, {}, "[x, y, z] voxels"},
      {"plans.*.patch", ValueKind::Array, {}, "[x, y, z] voxels per token"},
      {"plans.*.fill", ValueKind::Number, {}, "pad value before windowing"},
      {"plans.*.percentile_low", ValueKind::Number, {}, "MRI lower percentile"},
      {"plans.*.percentile_high", ValueKind::Number, {}, "MRI upper percentile"},
      {"report.sections", ValueKind::Array, {}, "[{name, keywords, excluded_from_caption}]"},
      {"report.questions", ValueKind::String, {}, "question set JSON file"},
      {"answerer.kind", ValueKind::Enum, {"stub", "http", "exec"}, "answerer transport"},
      {"answerer.url", ValueKind::String, {}, "endpoint for kind=http"},
      {"answerer.command", ValueKind::String, {}, "shell command for kind=exec"},
      {"answerer.attempts", ValueKind::Positive, {}, "tries per question"},
      {"answerer.base_delay_ms", ValueKind::NonNegative, {}, "first retry delay, doubled per retry"},
      {"labels.mode", ValueKind::Enum, {"negative-default", "masked"}, "NotMentioned handling"},
      {"probe.learning_rate", ValueKind::PositiveNumber, {}, ""},
      {"probe.batch_size", ValueKind::Positive, {}, ""},
      {"probe.weight_decay", ValueKind::Number, {}, ""},
      {"probe.epochs", ValueKind::NonNegative, {}, ""},
      {"probe.beta1", ValueKind::Fraction, {}, ""},
      {"probe.beta2", ValueKind::Fraction, {}, ""},
      {"probe.eps", ValueKind::PositiveNumber, {}, ""},
      {"probe.split_train", ValueKind::Fraction, {}, "train fraction when the sidecar has no split"},
      {"probe.split_val", ValueKind::Fraction, {}, "val fraction when the sidecar has no split"},
      {"pack.codec", ValueKind::Enum, {"raw", "deflate", "delta-deflate"}, "RVC slice codec"},
      {"pack.deflate_level", ValueKind::Integer, {}, "zlib level, -1 for default"},
      {"qc.n_per_modality", ValueKind::Positive, {}, "QC reports sampled per modality"},
  };
  return schema;
}

namespace detail {

inline std::string trimmed(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

inline bool key_matches(std::string_view pattern, std::string_view key) {
  while (true) {
    const auto pd = pattern.find('.'), kd = key.find('.');
    const auto ps = pattern.substr(0, pd), ks = key.substr(0, kd);
    if (ps != "*" && ps != ks) return false;
    if (ks.empty()) return false;
    if ((pd == std::string_view::npos) != (kd == std::string_view::npos)) return false;
    if (pd == std::string_view::npos) return true;
    pattern.remove_prefix(pd + 1);
    key.remove_prefix(kd + 1);
  }
}

inline nlohmann::json parse_value(const std::string& text) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    return text;
  }
}

inline void flatten(const nlohmann::json& j, const std::string& prefix, std::map<std::string, nlohmann::json>& out) {
  if (j.is_object() && !j.empty()) {
    for (const auto& [k, v] : j.items()) flatten(v, prefix.empty() ? k : prefix + "." + k, out);
  } else {
    out[prefix] = j;
  }
}

}  // namespace detail

inline std::string env_name(std::string_view key) {
  std::string out = "RAVE_";
  for (char c : key) out += (c == '.' || c == '-') ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

class Config {
 public:
  static Config parse(std::string_view text, const std::string& origin = "<config>") {
    Config c;
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string_view::npos && text[first] == '{') {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(text);
      } catch (const nlohmann::json::exception& e) {
        fail(Errc::InvalidConfig, origin + ": " + e.what());
      }
      std::map<std::string, nlohmann::json> flat;
      detail::flatten(j, "", flat);
      for (auto& [k, v] : flat) c.set(k, std::move(v), origin);
      return c;
    }
    std::istringstream is{std::string(text)};
    std::string line, section;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      auto t = detail::trimmed(line);
      if (t.empty() || t[0] == '#') continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos) {
        if (t.front() == '[' && t.back() == ']') {
          section = detail::trimmed(std::string_view(t).substr(1, t.size() - 2));
          continue;
        }
        fail(Errc::InvalidConfig, origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
      }
      auto key = detail::trimmed(std::string_view(t).substr(0, eq));
      auto value = detail::trimmed(std::string_view(t).substr(eq + 1));
      if (!section.empty()) key = section + "." + key;
      if (!value.empty() && (value[0] == '[' || value[0] == '{')) {
        const int start = lineno;
        while (!nlohmann::json::accept(value)) {
          if (!std::getline(is, line))
            fail(Errc::InvalidConfig, origin + ":" + std::to_string(start) + ": unterminated value for " + key);
          ++lineno;
          value += "\n" + line;
        }
      }
      c.set(key, detail::parse_value(value), origin + ":" + std::to_string(lineno));
    }
    return c;
  }

  static Config load(const std::filesystem::path& path) {
    std::string text;
    try {
      text = read_text_file(path);
    } catch (const Error& e) {
      fail(Errc::InvalidConfig, e.what());
    }
    return parse(text, path.string());
  }

  /// Sets one key after checking it against the schema.
  void set(const std::string& key, nlohmann::json value, const std::string& origin = "<set>") {
    const auto* entry = find_schema(key);
    if (!entry) fail(Errc::InvalidConfig, origin + ": unknown key '" + key + "'");
    value = coerce(*entry, key, std::move(value), origin);
    values_[key] = std::move(value);
  }

  /// Same, from text as it would appear on the right of '=' in a file.
  void set_text(const std::string& key, const std::string& text, const std::string& origin = "<set>") {
    set(key, detail::parse_value(detail::trimmed(text)), origin);
  }

  /// Applies RAVE_* variables for every fixed schema key. `getenv` is
  /// injectable for tests.
  template <typename GetEnv>
  void apply_env(GetEnv&& getenv) {
    for (const auto& e : config_schema()) {
      if (e.key.find('*') != std::string::npos) continue;
      const auto name = env_name(e.key);
      if (const char* v = getenv(name.c_str())) set_text(e.key, v, name);
    }
  }

  [[nodiscard]] bool has(const std::string& key) const { return values_.count(key) != 0; }
  [[nodiscard]] const nlohmann::json* find(const std::string& key) const {
    auto it = values_.find(key);
    return it == values_.end() ? nullptr : &it->second;
  }
  template <typename T>
  [[nodiscard]] T get(const std::string& key, T fallback) const {
    const auto* v = find(key);
    return v ? v->get<T>() : fallback;
  }
  [[nodiscard]] const std::map<std::string, nlohmann::json>& values() const { return values_; }

  /// Nested JSON of every explicitly set key, for recording in outputs.
  [[nodiscard]] nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : values_) j[nlohmann::json::json_pointer("/" + replace_dots(k))] = v;
    return j;
  }

 private:
  static std::string replace_dots(std::string s) {
    std::replace(s.begin(), s.end(), '.', '/');
    return s;
  }

  static const SchemaEntry* find_schema(const std::string& key) {
    for (const auto& e : config_schema())
      if (detail::key_matches(e.key, key)) return &e;
    return nullptr;
  }

  static nlohmann::json coerce(const SchemaEntry& e, const std::string& key, nlohmann::json v, const std::string& origin) {
    auto bad = [&](const std::string& want) {
      fail(Errc::InvalidConfig, origin + ": " + key + " must be " + want + ", got " + v.dump());
    };
    switch (e.kind) {
      case ValueKind::Integer:
        if (!v.is_number_integer()) bad("an integer");
        break;
      case ValueKind::NonNegative:
        if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0))
          bad("a non-negative integer");
        break;
      case ValueKind::Positive:
        if (!v.is_number_integer() || v.get<long long>() < 1) bad("a positive integer");
        break;
      case ValueKind::Number:
        if (!v.is_number()) bad("a number");
        break;
      case ValueKind::PositiveNumber:
        if (!v.is_number() || !(v.get<double>() > 0)) bad("a positive number");
        break;
      case ValueKind::Fraction:
        if (!v.is_number() || v.get<double>() < 0 || v.get<double>() >= 1) bad("a number in [0, 1)");
        break;
      case ValueKind::String:
        if (v.is_number() || v.is_boolean()) v = v.dump();
        if (!v.is_string()) bad("a string");
        break;
      case ValueKind::StringList:
        if (v.is_string()) v = nlohmann::json::array({v});
        if (!v.is_array() || !std::all_of(v.begin(), v.end(), [](const auto& x) { return x.is_string(); }))
          bad("a list of strings");
        break;
      case ValueKind::Array:
        if (!v.is_array()) bad("a JSON array");
        break;
      case ValueKind::Enum: {
        if (!v.is_string()) bad("one of its listed choices");
        const auto s = v.get<std::string>();
        if (std::find(e.choices.begin(), e.choices.end(), s) == e.choices.end()) {
          std::string all;
          for (const auto& c : e.choices) all += (all.empty() ? "" : ", ") + c;
          bad("one of " + all);
        }
        break;
      }
    }
    return v;
  }

  std::map<std::string, nlohmann::json> values_;
};

struct AnswererConfig {
  std::string kind = "stub";
  std::string url;
  std::string command;
  RetryPolicy retry;
};

/// Typed view of a validated Config.
struct PipelineConfig {
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  std::optional<Modality> modality;
  std::vector<std::string> input_roots;
  std::string output_root;
  AssembleOptions assemble;
  double plane_tolerance_deg = 15.0;
  CtSelectOptions ct_select;
  MriRules mri;
  std::vector<ModalityPlan> plans = shipped_plans();
  SectionConfig sections;
  std::string questions_path;
  AnswererConfig answerer;
  LabelMode label_mode = LabelMode::NegativeDefault;
  OptimizerConfig optimizer;
  SplitFractions split;
  Codec codec = Codec::DeltaDeflate;
  int deflate_level = -1;
  std::size_t qc_n_per_modality = 20;
  Config source;

  [[nodiscard]] const ModalityPlan& plan(Modality m) const {
    for (const auto& p : plans)
      if (p.modality == m) return p;
    fail(Errc::InvalidPlan, "no plan for modality " + std::string(modality_name(m)));
  }
};

inline Dims dims_from_json(const nlohmann::json& j, const std::string& key) {
  if (j.size() != 3 || !std::all_of(j.begin(), j.end(), [](const auto& x) { return x.is_number_unsigned(); }))
    fail(Errc::InvalidConfig, key + " must be three non-negative integers");
  return {j[0].get<std::size_t>(), j[1].get<std::size_t>(), j[2].get<std::size_t>()};
}

inline std::vector<WindowPreset> presets_from_json(const nlohmann::json& j) {
  std::vector<WindowPreset> out;
  try {
    for (const auto& p : j) out.push_back({p.at("name").get<std::string>(), p.at("level").get<double>(), p.at("width").get<double>()});
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::InvalidConfig, std::string("ct.presets: ") + e.what());
  }
  for (const auto& p : out)
    if (!(p.width > 0)) fail(Errc::InvalidConfig, "ct.presets: window '" + p.name + "' needs a positive width");
  return out;
}

inline PipelineConfig pipeline_config(const Config& c) {
  PipelineConfig pc;
  pc.source = c;
  pc.seed = c.get<std::uint64_t>("seed", 0);
  pc.jobs = c.get<std::size_t>("jobs", 1);
  if (const auto* m = c.find("modality")) pc.modality = parse_modality(m->get<std::string>());
  pc.input_roots = c.get<std::vector<std::string>>("input.roots", {});
  pc.output_root = c.get<std::string>("output.root", "");
  pc.assemble.spacing_tolerance = c.get<double>("assemble.spacing_tolerance", pc.assemble.spacing_tolerance);
  pc.assemble.orientation_tolerance = c.get<double>("assemble.orientation_tolerance", pc.assemble.orientation_tolerance);
  pc.assemble.band.low = c.get<float>("hu_band.low", pc.assemble.band.low);
  pc.assemble.band.high = c.get<float>("hu_band.high", pc.assemble.band.high);
  if (!(pc.assemble.band.low < pc.assemble.band.high)) fail(Errc::InvalidConfig, "hu_band.low must be below hu_band.high");
  pc.plane_tolerance_deg = c.get<double>("series.plane_tolerance_deg", pc.plane_tolerance_deg);
  pc.ct_select.time_group_window_s = c.get<double>("series.time_group_window_s", 0.0);
  if (pc.ct_select.time_group_window_s < 0) fail(Errc::InvalidConfig, "series.time_group_window_s must be >= 0");

  if (const auto* roles = c.find("mri.roles")) {
    pc.mri.roles.clear();
    try {
      for (const auto& r : *roles) pc.mri.roles.push_back({r.at("name").get<std::string>(), r.at("pattern").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      fail(Errc::InvalidConfig, std::string("mri.roles: ") + e.what());
    }
    for (const auto& r : pc.mri.roles) {
      try {
        std::regex re(r.pattern, std::regex::ECMAScript | std::regex::icase);
      } catch (const std::regex_error& e) {
        fail(Errc::InvalidConfig, "mri.roles: pattern for '" + r.name + "' does not compile: " + e.what());
      }
    }
  }

  std::optional<std::vector<WindowPreset>> presets;
  if (const auto* p = c.find("ct.presets")) presets = presets_from_json(*p);
  for (auto& plan : pc.plans) {
    const auto base = "plans." + plan.name + ".";
    if (presets && std::holds_alternative<std::vector<WindowPreset>>(plan.windows)) plan.windows = *presets;
    if (const auto* v = c.find(base + "target_spacing")) {
      if (v->size() != 3) fail(Errc::InvalidConfig, base + "target_spacing must have three entries");
      plan.target_spacing = {(*v)[0].get<double>(), (*v)[1].get<double>(), (*v)[2].get<double>()};
    }
    if (const auto* v = c.find(base + "target_dims")) plan.target_dims = dims_from_json(*v, base + "target_dims");
    if (const auto* v = c.find(base + "patch")) plan.patch = dims_from_json(*v, base + "patch");
    if (const auto* v = c.find(base + "fill")) plan.fill = v->get<float>();
    if (auto* pw = std::get_if<PercentileWindow>(&plan.windows)) {
      pw->low_pct = c.get<double>(base + "percentile_low", pw->low_pct);
      pw->high_pct = c.get<double>(base + "percentile_high", pw->high_pct);
    }
    try {
      validate(plan);
    } catch (const Error& e) {
      fail(Errc::InvalidConfig, e.what());
    }
  }
  for (const auto& [k, v] : c.values()) {
    if (k.rfind("plans.", 0) != 0) continue;
    const auto name = k.substr(6, k.find('.', 6) - 6);
    if (std::none_of(pc.plans.begin(), pc.plans.end(), [&](const auto& p) { return p.name == name; }))
      fail(Errc::InvalidConfig, k + ": no plan named '" + name + "'");
  }

  if (const auto* s = c.find("report.sections")) {
    pc.sections.sections.clear();
    try {
      for (const auto& e : *s)
        pc.sections.sections.push_back({e.at("name").get<std::string>(), e.at("keywords").get<std::vector<std::string>>(),
                                        e.value("excluded_from_caption", false)});
    } catch (const nlohmann::json::exception& e) {
      fail(Errc::InvalidConfig, std::string("report.sections: ") + e.what());
    }
  }
  pc.questions_path = c.get<std::string>("report.questions", "");
  pc.answerer.kind = c.get<std::string>("answerer.kind", "stub");
  pc.answerer.url = c.get<std::string>("answerer.url", "");
  pc.answerer.command = c.get<std::string>("answerer.command", "");
  if (pc.answerer.kind == "http" && pc.answerer.url.empty()) fail(Errc::InvalidConfig, "answerer.kind=http needs answerer.url");
  if (pc.answerer.kind == "exec" && pc.answerer.command.empty())
    fail(Errc::InvalidConfig, "answerer.kind=exec needs answerer.command");
  pc.answerer.retry.attempts = c.get<int>("answerer.attempts", 3);
  pc.answerer.retry.base_delay = std::chrono::milliseconds(c.get<long long>("answerer.base_delay_ms", 200));
  pc.label_mode = *parse_label_mode(c.get<std::string>("labels.mode", "negative-default"));

  auto& o = pc.optimizer;
  o.learning_rate = c.get<double>("probe.learning_rate", o.learning_rate);
  o.batch_size = c.get<std::size_t>("probe.batch_size", o.batch_size);
  o.weight_decay = c.get<double>("probe.weight_decay", o.weight_decay);
  o.epochs = c.get<std::size_t>("probe.epochs", o.epochs);
  o.beta1 = c.get<double>("probe.beta1", o.beta1);
  o.beta2 = c.get<double>("probe.beta2", o.beta2);
  o.eps = c.get<double>("probe.eps", o.eps);
  o.seed = pc.seed;
  pc.split.train = c.get<double>("probe.split_train", pc.split.train);
  pc.split.val = c.get<double>("probe.split_val", pc.split.val);
  if (pc.split.train + pc.split.val >= 1.0) fail(Errc::InvalidConfig, "probe.split_train + probe.split_val must leave a test split");

  pc.codec = *parse_codec(c.get<std::string>("pack.codec", "delta-deflate"));
  pc.deflate_level = c.get<int>("pack.deflate_level", -1);
  if (pc.deflate_level < -1 || pc.deflate_level > 9) fail(Errc::InvalidConfig, "pack.deflate_level must be in [-1, 9]");
  pc.qc_n_per_modality = c.get<std::size_t>("qc.n_per_modality", 20);
  return pc;
}

}  // namespace rave
