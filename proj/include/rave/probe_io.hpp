#pragma once

// Probe dataset files and AUROC tables.
//
// Embeddings: raw little-endian float32, N x D row-major, plus a JSON sidecar
//   {"n": N, "d": D, "row_ids": [...], "split"?: ["train" | "val" | "test", ...]}
// Labels: the exams x questions CSV written by the report engine. Rows are
// joined on row_ids == exam_id.

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>

#include <json.hpp>

#include "rave/bytes.hpp"
#include "rave/probe.hpp"
#include "rave/report.hpp"

namespace rave {

inline const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

inline std::optional<Split> parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  return std::nullopt;
}

struct SplitFractions {
  double train = 0.7;
  double val = 0.1;
};

/// Split assignment that depends only on (seed, row id): rows are ranked by
/// seeded hash and cut at the given fractions.
inline std::vector<Split> seeded_split(const std::vector<std::string>& row_ids, std::uint64_t seed,
                                       SplitFractions f = {}) {
  const std::size_t n = row_ids.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto ka = seeded_key(seed, row_ids[a]), kb = seeded_key(seed, row_ids[b]);
    return ka != kb ? ka < kb : row_ids[a] < row_ids[b];
  });
  const auto n_train = static_cast<std::size_t>(std::llround(f.train * static_cast<double>(n)));
  const auto n_val = static_cast<std::size_t>(std::llround(f.val * static_cast<double>(n)));
  std::vector<Split> out(n, Split::Test);
  for (std::size_t r = 0; r < n; ++r) {
    if (r < n_train)
      out[order[r]] = Split::Train;
    else if (r < n_train + n_val)
      out[order[r]] = Split::Val;
  }
  return out;
}

struct Embeddings {
  std::size_t n = 0, d = 0;
  std::vector<float> values;
  std::vector<std::string> row_ids;
  std::optional<std::vector<Split>> split;
};

inline Embeddings read_embeddings(const std::filesystem::path& matrix, const std::filesystem::path& sidecar) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(sidecar));
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::InvalidDataset, sidecar.string() + ": " + e.what());
  }
  Embeddings em;
  try {
    em.n = j.at("n").get<std::size_t>();
    em.d = j.at("d").get<std::size_t>();
    em.row_ids = j.at("row_ids").get<std::vector<std::string>>();
    if (j.contains("split")) {
      std::vector<Split> s;
      for (const auto& name : j["split"].get<std::vector<std::string>>()) {
        auto v = parse_split(name);
        if (!v) fail(Errc::InvalidDataset, "unknown split '" + name + "'");
        s.push_back(*v);
      }
      em.split = std::move(s);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::InvalidDataset, sidecar.string() + ": " + e.what());
  }
  if (em.row_ids.size() != em.n || (em.split && em.split->size() != em.n))
    fail(Errc::InvalidDataset, "sidecar arrays disagree with n");
  const auto raw = read_file(matrix);
  if (raw.size() != em.n * em.d * 4)
    fail(Errc::InvalidDataset, matrix.string() + " holds " + std::to_string(raw.size()) + " bytes, expected " +
                                   std::to_string(em.n * em.d * 4));
  ByteReader r(raw, Errc::InvalidDataset);
  em.values.resize(em.n * em.d);
  for (auto& v : em.values) v = r.get<float>();
  return em;
}

inline void write_embeddings(const std::filesystem::path& matrix, const std::filesystem::path& sidecar,
                             const Embeddings& em) {
  ByteWriter w;
  for (float v : em.values) w.put(v);
  write_file_atomic(matrix, w.bytes());
  nlohmann::json j{{"n", em.n}, {"d", em.d}, {"row_ids", em.row_ids}};
  if (em.split) {
    auto& s = j["split"] = nlohmann::json::array();
    for (auto v : *em.split) s.push_back(split_name(v));
  }
  write_file_atomic(sidecar, j.dump(2) + "\n");
}

/// Joins embeddings with a label matrix. Embedding rows without a label row
/// are dropped; label rows without an embedding are ignored.
inline ProbeDataset make_probe_dataset(const Embeddings& em, const LabelMatrix& labels, LabelMode mode,
                                       std::uint64_t seed, SplitFractions f = {}) {
  std::map<std::string, std::size_t> label_row;
  for (std::size_t e = 0; e < labels.exam_ids.size(); ++e) label_row.emplace(labels.exam_ids[e], e);
  ProbeDataset ds;
  ds.d = em.d;
  ds.t = labels.question_ids.size();
  ds.question_ids = labels.question_ids;
  std::vector<Split> all_split = em.split ? *em.split : seeded_split(em.row_ids, seed, f);
  for (std::size_t i = 0; i < em.n; ++i) {
    const auto it = label_row.find(em.row_ids[i]);
    if (it == label_row.end()) continue;
    ds.row_ids.push_back(em.row_ids[i]);
    ds.split.push_back(all_split[i]);
    for (std::size_t k = 0; k < em.d; ++k) ds.embeddings.push_back(em.values[i * em.d + k]);
    for (std::size_t q = 0; q < ds.t; ++q) {
      const auto a = labels.at(it->second, q);
      ds.labels.push_back(a == Answer::Yes ? 1 : 0);
      ds.mask.push_back(a == Answer::NotMentioned && mode == LabelMode::Masked ? 0 : 1);
    }
  }
  ds.n = ds.row_ids.size();
  if (ds.n == 0) fail(Errc::InvalidDataset, "no embedding row matches a label row");
  validate(ds);
  return ds;
}

/// Shortest decimal that reads back to the same double.
inline std::string format_real(double v) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

/// One line per question: question_id,auroc,positives,negatives,status
/// (auroc empty when excluded), then a "mean" line.
inline std::string auroc_table_csv(const EvalTable& t) {
  std::ostringstream os;
  os << "question_id,auroc,positives,negatives,status\n";
  for (const auto& q : t.questions)
    os << q.question_id << ',' << (q.auroc ? format_real(*q.auroc) : "") << ',' << q.positives << ',' << q.negatives
       << ',' << q.status << '\n';
  os << "mean," << (t.mean_auroc ? format_real(*t.mean_auroc) : "") << ",,," << "included=" << t.included << '\n';
  return os.str();
}

inline nlohmann::json auroc_table_json(const EvalTable& t) {
  nlohmann::json j;
  auto& qs = j["questions"] = nlohmann::json::array();
  for (const auto& q : t.questions) {
    nlohmann::json e{{"question_id", q.question_id},
                     {"positives", q.positives},
                     {"negatives", q.negatives},
                     {"status", q.status}};
    e["auroc"] = q.auroc ? nlohmann::json(*q.auroc) : nlohmann::json(nullptr);
    qs.push_back(std::move(e));
  }
  j["mean_auroc"] = t.mean_auroc ? nlohmann::json(*t.mean_auroc) : nlohmann::json(nullptr);
  j["included"] = t.included;
  return j;
}

/// Reads the CSV form back (for comparing two runs).
inline EvalTable auroc_table_from_csv(std::string_view csv) {
  EvalTable t;
  std::istringstream is{std::string(csv)};
  std::string line;
  std::getline(is, line);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> c;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) c.push_back(cell);
    while (c.size() < 5) c.emplace_back();
    if (c[0] == "mean") {
      if (!c[1].empty()) t.mean_auroc = std::stod(c[1]);
      continue;
    }
    QuestionResult q;
    q.question_id = c[0];
    if (!c[1].empty()) {
      q.auroc = std::stod(c[1]);
      ++t.included;
    }
    q.positives = std::stoul(c[2]);
    q.negatives = std::stoul(c[3]);
    q.status = c[4];
    t.questions.push_back(std::move(q));
  }
  return t;
}

/// "96.6" for 28/29: one decimal place of the percentage.
inline std::string format_percent(double rate) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", rate * 100.0);
  return buf;
}

}  // namespace rave
