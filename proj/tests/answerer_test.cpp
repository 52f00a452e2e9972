#include <gtest/gtest.h>

#include <thread>

#include "rave/answerer.hpp"
#include "rave/answerer_remote.hpp"
#include "support.hpp"

using namespace rave;

namespace {

QuestionSet questions(std::initializer_list<std::pair<const char*, const char*>> q) {
  QuestionSet qs{"ct-head", {}};
  for (auto [id, text] : q) qs.questions.push_back({id, text, "", ""});
  return qs;
}

// Replays a scripted list of outcomes; "!" entries raise transport failures.
class ScriptedAnswerer : public Answerer {
 public:
  explicit ScriptedAnswerer(std::vector<std::string> script) : script_(std::move(script)) {}
  std::string id() const override { return "scripted"; }
  std::string call(const std::string&) override {
    const auto s = script_.at(std::min(calls_++, script_.size() - 1));
    if (s == "!") throw AnswererFailure(true, "connection refused");
    return s;
  }
  std::size_t calls_ = 0;

 private:
  std::vector<std::string> script_;
};

const RetryPolicy kFast{3, std::chrono::milliseconds(0)};

}  // namespace

TEST(Stub, KeyPhrase) {
  EXPECT_EQ(KeywordStubAnswerer::key_phrase("Is hydrocephalus present?"), "hydrocephalus");
  EXPECT_EQ(KeywordStubAnswerer::key_phrase("Is there a skull fracture?"), "skull fracture");
  EXPECT_EQ(KeywordStubAnswerer::key_phrase("Are there any pleural effusions?"), "pleural effusions");
}

TEST(Stub, YesNoNotMentioned) {
  const auto yes = KeywordStubAnswerer::answer({"e", "q", "Is hydrocephalus present?", "Mild hydrocephalus. Otherwise normal."});
  EXPECT_EQ(yes.answer, Answer::Yes);
  EXPECT_EQ(yes.evidence, "Mild hydrocephalus.");
  EXPECT_EQ(KeywordStubAnswerer::answer({"e", "q", "Is hydrocephalus present?", "Ventricles normal."}).answer,
            Answer::NotMentioned);
  EXPECT_EQ(KeywordStubAnswerer::answer({"e", "q", "Is hydrocephalus present?", "No hydrocephalus."}).answer, Answer::No);
}

TEST(Extract, StubEndToEnd) {
  const auto doc = section_report("FINDINGS: Mild hydrocephalus. No skull fracture.\nIMPRESSION: x.", "exam-1");
  const auto qs = questions({{"hydro", "Is hydrocephalus present?"},
                             {"fx", "Is there a skull fracture?"},
                             {"mass", "Is there an intracranial mass?"}});
  KeywordStubAnswerer stub;
  AuditLog audit;
  const auto out = extract_labels(doc, qs, stub, kFast, &audit);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out[0].answer, Answer::Yes);
  EXPECT_EQ(out[1].answer, Answer::No);
  EXPECT_EQ(out[2].answer, Answer::NotMentioned);
  for (const auto& r : out) {
    EXPECT_EQ(r.exam_id, "exam-1");
    EXPECT_EQ(r.answerer_id, "keyword-stub");
    if (r.evidence) {
      EXPECT_NE(doc.findings().find(*r.evidence), std::string::npos);
    }
  }
  const auto records = audit.records();
  ASSERT_EQ(records.size(), 3u);
  const auto req = nlohmann::json::parse(records[0]["request"].get<std::string>());
  EXPECT_EQ(req["findings_text"], doc.findings());
  EXPECT_EQ(req["question_id"], "hydro");
  EXPECT_TRUE(records[0].contains("response"));
  // Bit-for-bit reproducible.
  EXPECT_EQ(extract_labels(doc, qs, stub, kFast), out);
}

TEST(Extract, TwentyNineQuestionsTwentyNineRecords) {
  QuestionSet qs{"ct-head", {}};
  for (int i = 0; i < 29; ++i) qs.questions.push_back({"q" + std::to_string(i), "Is finding " + std::to_string(i) + " present?", "", ""});
  KeywordStubAnswerer stub;
  const auto doc = section_report("FINDINGS: finding 3 is seen.", "e");
  const auto out = extract_labels(doc, qs, stub, kFast);
  EXPECT_EQ(out.size(), 29u);
  EXPECT_EQ(out[3].answer, Answer::Yes);
}

TEST(Extract, RetryThenSucceed) {
  const auto doc = section_report("FINDINGS: ok.", "e");
  ScriptedAnswerer a({"garbage", R"({"answer":"Maybe"})", R"({"answer":"Yes"})"});
  AuditLog audit;
  const auto out = extract_labels(doc, questions({{"q", "Is it ok?"}}), a, kFast, &audit);
  EXPECT_EQ(out[0].answer, Answer::Yes);
  EXPECT_FALSE(out[0].annotation);
  EXPECT_EQ(a.calls_, 3u);
  EXPECT_EQ(audit.records().size(), 3u);
  EXPECT_TRUE(audit.records()[0].contains("error"));
}

TEST(Extract, DegradesToNotMentioned) {
  const auto doc = section_report("FINDINGS: ok.", "e");
  ScriptedAnswerer a({"not json"});
  const auto out = extract_labels(doc, questions({{"q", "Is it ok?"}, {"r", "Is it bad?"}}), a, kFast);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].answer, Answer::NotMentioned);
  ASSERT_TRUE(out[0].annotation);
  EXPECT_NE(out[0].annotation->find("3 attempts"), std::string::npos);
  EXPECT_EQ(a.calls_, 6u);
}

TEST(Extract, UnreachableAbortsExam) {
  const auto doc = section_report("FINDINGS: ok.", "e");
  ScriptedAnswerer a({"!"});
  try {
    extract_labels(doc, questions({{"q", "Is it ok?"}}), a, kFast);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::AnswererUnreachable);
  }
  EXPECT_EQ(a.calls_, 3u);
}

TEST(Extract, NonVerbatimEvidenceDropped) {
  const auto doc = section_report("FINDINGS: Small effusion.", "e");
  ScriptedAnswerer a({R"({"answer":"Yes","evidence":"large effusion"})"});
  const auto out = extract_labels(doc, questions({{"q", "Is there an effusion?"}}), a, kFast);
  EXPECT_EQ(out[0].answer, Answer::Yes);
  EXPECT_FALSE(out[0].evidence);
  EXPECT_TRUE(out[0].annotation);
}

TEST(Extract, BackoffDelays) {
  const auto doc = section_report("FINDINGS: ok.", "e");
  ScriptedAnswerer a({"x"});
  const auto t0 = std::chrono::steady_clock::now();
  extract_labels(doc, questions({{"q", "Is it ok?"}}), a, {3, std::chrono::milliseconds(20)});
  // 20 ms then 40 ms between the three attempts.
  EXPECT_GE(std::chrono::steady_clock::now() - t0, std::chrono::milliseconds(60));
}

TEST(Remote, HttpAnswerer) {
  httplib::Server srv;
  srv.Post("/answer", [](const httplib::Request& req, httplib::Response& res) {
    const auto r = AnswerRequest::from_json(nlohmann::json::parse(req.body));
    res.set_content(KeywordStubAnswerer::answer(r).to_json().dump(), "application/json");
  });
  const int port = srv.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread th([&] { srv.listen_after_bind(); });
  srv.wait_until_ready();
  HttpAnswerer http("http://127.0.0.1:" + std::to_string(port) + "/answer", std::chrono::seconds(5));
  const auto doc = section_report("FINDINGS: Mild hydrocephalus.", "e");
  const auto out = extract_labels(doc, questions({{"h", "Is hydrocephalus present?"}}), http, kFast);
  EXPECT_EQ(out[0].answer, Answer::Yes);
  EXPECT_EQ(out[0].evidence, "Mild hydrocephalus.");
  srv.stop();
  th.join();

  HttpAnswerer dead("http://127.0.0.1:" + std::to_string(port) + "/answer", std::chrono::seconds(1));
  try {
    extract_labels(doc, questions({{"h", "Is hydrocephalus present?"}}), dead, kFast);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::AnswererUnreachable);
  }
}

TEST(Remote, ProcessAnswerer) {
  ProcessAnswerer p(R"(cat >/dev/null; printf '{"answer":"No"}')");
  const auto doc = section_report("FINDINGS: ok.", "e");
  EXPECT_EQ(extract_labels(doc, questions({{"q", "Is it ok?"}}), p, kFast)[0].answer, Answer::No);

  ProcessAnswerer missing("/nonexistent/answerer-binary");
  EXPECT_THROW(extract_labels(doc, questions({{"q", "Is it ok?"}}), missing, kFast), Error);

  ProcessAnswerer failing("cat >/dev/null; exit 3");
  const auto out = extract_labels(doc, questions({{"q", "Is it ok?"}}), failing, kFast);
  EXPECT_EQ(out[0].answer, Answer::NotMentioned);
  EXPECT_TRUE(out[0].annotation);
}
