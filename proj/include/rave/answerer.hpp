#pragma once

// The answerer boundary: maps (findings, Yes/No question) to an answer.
//
// Wire contract, UTF-8 JSON both ways:
//   request  {"exam_id", "question_id", "question_text", "findings_text"}
//   response {"answer": "Yes" | "No" | "NotMentioned", "evidence"?: string}

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <mutex>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "rave/error.hpp"
#include "rave/report.hpp"

namespace rave {

struct AnswerRequest {
  std::string exam_id;
  std::string question_id;
  std::string question_text;
  std::string findings_text;

  [[nodiscard]] nlohmann::json to_json() const {
    return {{"exam_id", exam_id},
            {"question_id", question_id},
            {"question_text", question_text},
            {"findings_text", findings_text}};
  }
  static AnswerRequest from_json(const nlohmann::json& j) {
    return {j.at("exam_id").get<std::string>(), j.at("question_id").get<std::string>(),
            j.at("question_text").get<std::string>(), j.at("findings_text").get<std::string>()};
  }
};

struct AnswerResponse {
  Answer answer = Answer::NotMentioned;
  std::optional<std::string> evidence;

  [[nodiscard]] nlohmann::json to_json() const {
    nlohmann::json j{{"answer", answer_name(answer)}};
    if (evidence) j["evidence"] = *evidence;
    return j;
  }
};

/// Raised by answerers. `unreachable` separates transport failures (the
/// service is not there) from bad or malformed responses.
class AnswererFailure : public std::runtime_error {
 public:
  AnswererFailure(bool unreachable, const std::string& what) : std::runtime_error(what), unreachable_(unreachable) {}
  [[nodiscard]] bool unreachable() const noexcept { return unreachable_; }

 private:
  bool unreachable_;
};

inline AnswerResponse parse_answer_response(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    throw AnswererFailure(false, "response is not JSON");
  }
  if (!j.is_object() || !j.contains("answer") || !j["answer"].is_string())
    throw AnswererFailure(false, "response lacks a string 'answer'");
  auto a = parse_answer(j["answer"].get<std::string>());
  if (!a) throw AnswererFailure(false, "answer '" + j["answer"].get<std::string>() + "' is not Yes/No/NotMentioned");
  AnswerResponse r{*a, std::nullopt};
  if (j.contains("evidence") && j["evidence"].is_string()) r.evidence = j["evidence"].get<std::string>();
  return r;
}

class Answerer {
 public:
  virtual ~Answerer() = default;
  [[nodiscard]] virtual std::string id() const = 0;
  /// Sends one JSON request and returns the raw response text.
  virtual std::string call(const std::string& request_json) = 0;
};

/// Deterministic answerer for tests: Yes when the question's key phrase
/// occurs in the findings, No when the sentence negates it, otherwise
/// NotMentioned. Evidence is the matching sentence.
class KeywordStubAnswerer final : public Answerer {
 public:
  [[nodiscard]] std::string id() const override { return "keyword-stub"; }

  std::string call(const std::string& request_json) override {
    AnswerRequest req;
    try {
      req = AnswerRequest::from_json(nlohmann::json::parse(request_json));
    } catch (const nlohmann::json::exception& e) {
      throw AnswererFailure(false, std::string("bad request: ") + e.what());
    }
    return answer(req).to_json().dump();
  }

  static std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
  }

  /// "Is hydrocephalus present?" -> "hydrocephalus"; "Is there a skull
  /// fracture?" -> "skull fracture".
  static std::string key_phrase(const std::string& question) {
    std::string q = lower(question);
    while (!q.empty() && (q.back() == '?' || std::isspace(static_cast<unsigned char>(q.back())))) q.pop_back();
    static const char* prefixes[] = {"is there any ", "are there any ", "is there ", "are there ", "is there evidence of ",
                                     "does the patient have ", "is the ", "are the ", "is ", "are ", "does ", "do ",
                                     "has ", "have ", "any ", "evidence of ", "a ", "an ", "the "};
    for (bool changed = true; changed;) {
      changed = false;
      for (const char* p : prefixes) {
        const std::string_view pv(p);
        if (q.size() > pv.size() && q.compare(0, pv.size(), pv) == 0) {
          q.erase(0, pv.size());
          changed = true;
        }
      }
    }
    static const char* suffixes[] = {" present", " seen", " noted", " identified", " visible", " evident"};
    for (const char* s : suffixes) {
      const std::string_view sv(s);
      if (q.size() > sv.size() && q.compare(q.size() - sv.size(), sv.size(), sv) == 0) q.erase(q.size() - sv.size());
    }
    return q;
  }

  static AnswerResponse answer(const AnswerRequest& req) {
    const auto phrase = key_phrase(req.question_text);
    const auto hay = lower(req.findings_text);
    const auto at = phrase.empty() ? std::string::npos : hay.find(phrase);
    if (at == std::string::npos) return {Answer::NotMentioned, std::nullopt};

    std::size_t b = at, e = at + phrase.size();
    while (b > 0 && hay[b - 1] != '.' && hay[b - 1] != '\n') --b;
    while (e < hay.size() && hay[e] != '.' && hay[e] != '\n') ++e;
    if (e < hay.size() && hay[e] == '.') ++e;
    while (b < at && std::isspace(static_cast<unsigned char>(hay[b]))) ++b;

    const std::string before = hay.substr(b, at - b);
    const bool negated = before.find("no ") != std::string::npos || before.find("without ") != std::string::npos ||
                         before.find("negative for ") != std::string::npos || before.find("absence of ") != std::string::npos;
    return {negated ? Answer::No : Answer::Yes, req.findings_text.substr(b, e - b)};
  }
};

struct RetryPolicy {
  int attempts = 3;
  std::chrono::milliseconds base_delay{200};  // doubles after each failed attempt
};

/// Serialized append-only sink of JSON audit records.
class AuditLog {
 public:
  AuditLog() = default;
  explicit AuditLog(std::ostream& os) : os_(&os) {}

  void append(const nlohmann::json& record) {
    std::lock_guard lock(mu_);
    if (os_) *os_ << record.dump() << '\n';
    records_.push_back(record);
  }

  [[nodiscard]] std::vector<nlohmann::json> records() const {
    std::lock_guard lock(mu_);
    return records_;
  }

 private:
  mutable std::mutex mu_;
  std::ostream* os_ = nullptr;
  std::vector<nlohmann::json> records_;
};

/// One LabelRecord per question, in question order. Bad responses are
/// retried, then recorded as NotMentioned with an annotation; a transport
/// failure that persists through every attempt aborts the exam with
/// AnswererUnreachable. Every prompt and raw response goes to `audit`.
inline std::vector<LabelRecord> extract_labels(const ReportDoc& doc, const QuestionSet& qs, Answerer& answerer,
                                               const RetryPolicy& retry = {}, AuditLog* audit = nullptr) {
  const std::string findings = doc.findings();
  std::vector<LabelRecord> out;
  out.reserve(qs.questions.size());
  for (const auto& q : qs.questions) {
    const AnswerRequest req{doc.exam_id, q.id, q.text, findings};
    const auto request_text = req.to_json().dump();
    LabelRecord rec{doc.exam_id, q.id, Answer::NotMentioned, std::nullopt, answerer.id(), std::nullopt};
    bool done = false;
    bool last_unreachable = false;
    std::string last_error;
    auto delay = retry.base_delay;
    for (int attempt = 1; attempt <= std::max(1, retry.attempts) && !done; ++attempt) {
      nlohmann::json entry{{"exam_id", doc.exam_id}, {"question_id", q.id}, {"attempt", attempt},
                           {"answerer_id", answerer.id()}, {"request", request_text}};
      try {
        const auto raw = answerer.call(request_text);
        entry["response"] = raw;
        const auto resp = parse_answer_response(raw);
        rec.answer = resp.answer;
        if (resp.evidence) {
          if (findings.find(*resp.evidence) != std::string::npos)
            rec.evidence = resp.evidence;
          else
            rec.annotation = "evidence dropped: not a verbatim quote of the findings";
        }
        done = true;
      } catch (const AnswererFailure& f) {
        last_unreachable = f.unreachable();
        last_error = f.what();
        entry["error"] = last_error;
        entry["unreachable"] = last_unreachable;
      }
      if (audit) audit->append(entry);
      if (!done && attempt < retry.attempts && delay.count() > 0) {
        std::this_thread::sleep_for(delay);
        delay *= 2;
      }
    }
    if (!done) {
      if (last_unreachable)
        fail(Errc::AnswererUnreachable, "exam " + doc.exam_id + ", question " + q.id + ": " + last_error);
      rec.answer = Answer::NotMentioned;
      rec.annotation = "answerer failed after " + std::to_string(std::max(1, retry.attempts)) + " attempts: " + last_error;
    }
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace rave
