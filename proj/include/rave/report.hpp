#pragma once

// Report sectioning, question sets, label records, binarization, and QC
// sampling.

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "rave/bytes.hpp"
#include "rave/error.hpp"

namespace rave {

struct SectionSpec {
  std::string name;
  std::vector<std::string> keywords;  // matched case-insensitively
  bool excluded_from_caption = false;
};

struct SectionConfig {
  std::vector<SectionSpec> sections{
      {"findings", {"FINDINGS", "FINDING"}, false},
      {"comparison", {"COMPARISONS", "COMPARISON"}, true},
      {"impression", {"IMPRESSIONS", "IMPRESSION", "CONCLUSION"}, false},
      {"history", {"CLINICAL HISTORY", "HISTORY", "INDICATION"}, false},
      {"technique", {"TECHNIQUE"}, false},
  };
};

struct Section {
  std::string name;
  std::size_t header_begin = 0;  // where the header keyword starts
  std::size_t begin = 0;         // body span [begin, end) in raw_text
  std::size_t end = 0;
  bool excluded_from_caption = false;
};

struct ReportDoc {
  std::string exam_id;
  std::string raw_text;
  std::vector<Section> sections;  // in document order, non-overlapping

  [[nodiscard]] std::string_view text(const Section& s) const {
    return std::string_view(raw_text).substr(s.begin, s.end - s.begin);
  }
  [[nodiscard]] const Section* find(std::string_view name) const {
    for (const auto& s : sections)
      if (s.name == name) return &s;
    return nullptr;
  }
  /// Verbatim findings text. Throws NoFindingsSection.
  [[nodiscard]] std::string findings() const {
    const auto* s = find("findings");
    if (!s) fail(Errc::NoFindingsSection, "exam " + exam_id);
    return std::string(text(*s));
  }
};

namespace detail {

inline bool iequals_at(std::string_view text, std::size_t at, std::string_view word) {
  if (at + word.size() > text.size()) return false;
  for (std::size_t i = 0; i < word.size(); ++i)
    if (std::toupper(static_cast<unsigned char>(text[at + i])) != std::toupper(static_cast<unsigned char>(word[i])))
      return false;
  return true;
}

inline bool is_blank(char c) { return c == ' ' || c == '\t'; }
inline bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

// A header may start a line or follow a sentence terminator plus whitespace.
inline bool header_position(std::string_view text, std::size_t at, bool& line_start) {
  std::size_t j = at;
  while (j > 0 && is_blank(text[j - 1])) --j;
  if (j == 0 || text[j - 1] == '\n' || text[j - 1] == '\r') {
    line_start = true;
    return true;
  }
  line_start = false;
  const char c = text[j - 1];
  return j < at && (c == '.' || c == '!' || c == '?' || c == ';');
}

}  // namespace detail

/// Splits a report into sections by header keywords. A header is a
/// configured keyword followed by ':' (or alone on its line), placed at the
/// start of a line or after a sentence end. Bodies are verbatim, trimmed.
inline ReportDoc section_report(std::string raw, std::string exam_id = {}, const SectionConfig& cfg = {}) {
  if (raw.empty()) fail(Errc::NoFindingsSection, "empty report");
  ReportDoc doc{std::move(exam_id), std::move(raw), {}};
  const std::string_view text = doc.raw_text;

  struct Hit {
    const SectionSpec* spec;
    std::size_t header_begin, body_begin;
  };
  std::vector<Hit> hits;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (!std::isalpha(static_cast<unsigned char>(text[i]))) continue;
    if (i > 0 && std::isalpha(static_cast<unsigned char>(text[i - 1]))) continue;
    bool line_start = false;
    if (!detail::header_position(text, i, line_start)) continue;
    const SectionSpec* best = nullptr;
    std::size_t best_len = 0, body = 0;
    for (const auto& spec : cfg.sections)
      for (const auto& kw : spec.keywords) {
        if (kw.size() <= best_len || !detail::iequals_at(text, i, kw)) continue;
        std::size_t j = i + kw.size();
        while (j < text.size() && detail::is_blank(text[j])) ++j;
        if (j < text.size() && text[j] == ':') {
          best = &spec, best_len = kw.size(), body = j + 1;
        } else if (line_start && (j == text.size() || text[j] == '\n' || text[j] == '\r')) {
          best = &spec, best_len = kw.size(), body = j;
        }
      }
    if (best) {
      hits.push_back({best, i, body});
      i = body > 0 ? body - 1 : i;
    }
  }

  for (std::size_t h = 0; h < hits.size(); ++h) {
    std::size_t b = hits[h].body_begin;
    std::size_t e = h + 1 < hits.size() ? hits[h + 1].header_begin : text.size();
    while (b < e && detail::is_space(text[b])) ++b;
    while (e > b && detail::is_space(text[e - 1])) --e;
    doc.sections.push_back({hits[h].spec->name, hits[h].header_begin, b, e, hits[h].spec->excluded_from_caption});
  }
  if (!doc.find("findings")) fail(Errc::NoFindingsSection, doc.exam_id.empty() ? "report" : "exam " + doc.exam_id);
  return doc;
}

/// Caption text for pretraining: the findings body, with comparison sections
/// never included.
inline std::string caption_text(const ReportDoc& doc) { return doc.findings(); }

enum class Answer { Yes, No, NotMentioned };

constexpr std::string_view answer_name(Answer a) {
  switch (a) {
    case Answer::Yes: return "Yes";
    case Answer::No: return "No";
    case Answer::NotMentioned: return "NotMentioned";
  }
  return "NotMentioned";
}

inline std::optional<Answer> parse_answer(std::string_view s) {
  for (auto a : {Answer::Yes, Answer::No, Answer::NotMentioned})
    if (answer_name(a) == s) return a;
  return std::nullopt;
}

struct Question {
  std::string id;
  std::string text;
  std::string category;
  std::string key_phrase;  // optional hint; only the keyword stub uses it
};

struct QuestionSet {
  std::string modality;
  std::vector<Question> questions;
};

inline void validate(const QuestionSet& qs) {
  if (qs.questions.empty()) fail(Errc::InvalidQuestionSet, "question set has no questions");
  std::set<std::string> seen;
  for (const auto& q : qs.questions) {
    if (q.id.empty()) fail(Errc::InvalidQuestionSet, "question with empty id");
    if (!seen.insert(q.id).second) fail(Errc::InvalidQuestionSet, "duplicate question id '" + q.id + "'");
    auto t = std::string_view(q.text);
    while (!t.empty() && detail::is_space(t.back())) t.remove_suffix(1);
    if (t.empty() || t.back() != '?') fail(Errc::InvalidQuestionSet, "question '" + q.id + "' is not phrased as a Yes/No question");
  }
}

/// {"modality": ..., "questions": [{"id", "question", "category"?, "key_phrase"?}]}
inline QuestionSet question_set_from_json(const nlohmann::json& j) {
  QuestionSet qs;
  try {
    qs.modality = j.value("modality", "");
    for (const auto& q : j.at("questions"))
      qs.questions.push_back({q.at("id").get<std::string>(), q.at("question").get<std::string>(),
                              q.value("category", ""), q.value("key_phrase", "")});
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::InvalidQuestionSet, e.what());
  }
  validate(qs);
  return qs;
}

struct LabelRecord {
  std::string exam_id;
  std::string question_id;
  Answer answer = Answer::NotMentioned;
  std::optional<std::string> evidence;
  std::string answerer_id;
  std::optional<std::string> annotation;  // set when the answer was degraded

  bool operator==(const LabelRecord&) const = default;
};

inline nlohmann::json to_json(const LabelRecord& r) {
  nlohmann::json j{{"exam_id", r.exam_id},
                   {"question_id", r.question_id},
                   {"answer", answer_name(r.answer)},
                   {"answerer_id", r.answerer_id}};
  j["evidence"] = r.evidence ? nlohmann::json(*r.evidence) : nlohmann::json(nullptr);
  if (r.annotation) j["annotation"] = *r.annotation;
  return j;
}

inline LabelRecord label_from_json(const nlohmann::json& j) {
  LabelRecord r;
  r.exam_id = j.at("exam_id").get<std::string>();
  r.question_id = j.at("question_id").get<std::string>();
  auto a = parse_answer(j.at("answer").get<std::string>());
  if (!a) fail(Errc::InvalidDataset, "bad answer value in label record");
  r.answer = *a;
  if (j.contains("evidence") && j["evidence"].is_string()) r.evidence = j["evidence"].get<std::string>();
  r.answerer_id = j.value("answerer_id", "");
  if (j.contains("annotation")) r.annotation = j["annotation"].get<std::string>();
  return r;
}

enum class LabelMode { NegativeDefault, Masked };

inline std::optional<LabelMode> parse_label_mode(std::string_view s) {
  if (s == "negative-default") return LabelMode::NegativeDefault;
  if (s == "masked") return LabelMode::Masked;
  return std::nullopt;
}

struct LabelFragment {
  std::vector<std::string> question_ids;
  std::vector<std::uint8_t> labels;
  std::vector<std::uint8_t> mask;
};

/// Yes -> 1, No -> 0. NotMentioned -> 0 (negative-default) or masked out.
inline LabelFragment binarize(const std::vector<LabelRecord>& records, LabelMode mode) {
  LabelFragment f;
  for (const auto& r : records) {
    f.question_ids.push_back(r.question_id);
    f.labels.push_back(r.answer == Answer::Yes ? 1 : 0);
    f.mask.push_back(r.answer == Answer::NotMentioned && mode == LabelMode::Masked ? 0 : 1);
  }
  return f;
}

/// Dense exams x questions answer table.
struct LabelMatrix {
  std::vector<std::string> exam_ids;
  std::vector<std::string> question_ids;
  std::vector<Answer> cells;  // cells[exam * questions + question]

  [[nodiscard]] Answer at(std::size_t e, std::size_t q) const { return cells[e * question_ids.size() + q]; }
};

inline LabelMatrix label_matrix(const std::vector<LabelRecord>& records, std::vector<std::string> question_ids = {}) {
  LabelMatrix m;
  std::map<std::string, std::size_t> qidx, eidx;
  if (question_ids.empty()) {
    for (const auto& r : records)
      if (qidx.emplace(r.question_id, qidx.size()).second) question_ids.push_back(r.question_id);
  } else {
    for (std::size_t i = 0; i < question_ids.size(); ++i) qidx.emplace(question_ids[i], i);
  }
  m.question_ids = std::move(question_ids);
  for (const auto& r : records)
    if (eidx.emplace(r.exam_id, m.exam_ids.size()).second) m.exam_ids.push_back(r.exam_id);
  m.cells.assign(m.exam_ids.size() * m.question_ids.size(), Answer::NotMentioned);
  for (const auto& r : records) {
    auto q = qidx.find(r.question_id);
    if (q == qidx.end()) continue;
    m.cells[eidx[r.exam_id] * m.question_ids.size() + q->second] = r.answer;
  }
  return m;
}

/// CSV: header "exam_id,<question ids>", cells 1 (Yes), 0 (No), NA (NotMentioned).
inline std::string label_matrix_csv(const LabelMatrix& m) {
  std::ostringstream os;
  os << "exam_id";
  for (const auto& q : m.question_ids) os << ',' << q;
  os << '\n';
  for (std::size_t e = 0; e < m.exam_ids.size(); ++e) {
    os << m.exam_ids[e];
    for (std::size_t q = 0; q < m.question_ids.size(); ++q) {
      const auto a = m.at(e, q);
      os << ',' << (a == Answer::Yes ? "1" : a == Answer::No ? "0" : "NA");
    }
    os << '\n';
  }
  return os.str();
}

inline LabelMatrix label_matrix_from_csv(std::string_view csv) {
  LabelMatrix m;
  std::istringstream is{std::string(csv)};
  std::string line;
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ls(s);
    while (std::getline(ls, cell, ',')) {
      while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
      out.push_back(cell);
    }
    return out;
  };
  if (!std::getline(is, line)) fail(Errc::InvalidDataset, "label CSV is empty");
  auto header = split(line);
  if (header.empty() || header[0] != "exam_id") fail(Errc::InvalidDataset, "label CSV must start with 'exam_id'");
  m.question_ids.assign(header.begin() + 1, header.end());
  while (std::getline(is, line)) {
    if (line.empty() || line == "\r") continue;
    auto cells = split(line);
    if (cells.size() != header.size()) fail(Errc::InvalidDataset, "label CSV row has wrong column count");
    m.exam_ids.push_back(cells[0]);
    for (std::size_t i = 1; i < cells.size(); ++i) {
      const auto& c = cells[i];
      if (c == "1")
        m.cells.push_back(Answer::Yes);
      else if (c == "0")
        m.cells.push_back(Answer::No);
      else if (c == "NA" || c.empty())
        m.cells.push_back(Answer::NotMentioned);
      else
        fail(Errc::InvalidDataset, "label CSV cell '" + c + "' is not 1, 0 or NA");
    }
  }
  return m;
}

struct QcExam {
  std::string exam_id;
  std::string modality;
  std::string findings;
  std::vector<LabelRecord> labels;
};

struct QcRow {
  std::string modality;
  std::string exam_id;
  std::string findings;
  std::vector<LabelRecord> labels;
};

/// Seeded sample of `n_per_modality` exams per modality without replacement.
/// Selection ranks exams by a hash of (seed, exam_id), so it does not depend
/// on input order. Rows are grouped by modality name, then in sample order.
inline std::vector<QcRow> qc_sample(const std::vector<QcExam>& exams, std::size_t n_per_modality, std::uint64_t seed) {
  if (n_per_modality < 1) fail(Errc::InsufficientExams, "n_per_modality must be at least 1");
  std::map<std::string, std::vector<const QcExam*>> by_modality;
  for (const auto& e : exams) by_modality[e.modality].push_back(&e);
  std::vector<QcRow> rows;
  for (auto& [modality, pool] : by_modality) {
    if (pool.size() < n_per_modality)
      fail(Errc::InsufficientExams, modality + " has " + std::to_string(pool.size()) + " exams, need " +
                                        std::to_string(n_per_modality));
    std::sort(pool.begin(), pool.end(), [&](const QcExam* a, const QcExam* b) {
      const auto ka = seeded_key(seed, a->exam_id), kb = seeded_key(seed, b->exam_id);
      if (ka != kb) return ka < kb;
      return a->exam_id < b->exam_id;
    });
    for (std::size_t i = 0; i < n_per_modality; ++i)
      rows.push_back({modality, pool[i]->exam_id, pool[i]->findings, pool[i]->labels});
  }
  return rows;
}

}  // namespace rave
