// rave: command-line driver for the ingest -> pack/tokenize -> extract -> probe
// pipeline.
//
// Exit codes: 0 ok, 1 usage or configuration error, 2 empty result,
// 3 upstream input missing, 4 processing failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rave/answerer.hpp"
#include "rave/answerer_remote.hpp"
#include "rave/config.hpp"
#include "rave/dicom.hpp"
#include "rave/nifti.hpp"
#include "rave/parallel.hpp"
#include "rave/probe.hpp"
#include "rave/probe_io.hpp"
#include "rave/report.hpp"
#include "rave/rvc.hpp"
#include "rave/series_select.hpp"
#include "rave/tokens.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kUsage = 1, kEmpty = 2, kMissing = 3, kFailed = 4 };

struct ExitError : std::runtime_error {
  int code;
  ExitError(int c, const std::string& what) : std::runtime_error(what), code(c) {}
};

std::mutex log_mu;

// One JSON object per line on stderr.
void log_event(const std::string& level, const std::string& message, json extra = json::object()) {
  extra["level"] = level;
  extra["message"] = message;
  std::lock_guard lock(log_mu);
  std::cerr << extra.dump() << '\n';
}

void require_exists(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw ExitError(kMissing, what + " not found: " + p.string());
}

std::string safe_name(std::string s) {
  for (auto& c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '_')) c = '_';
  return s.empty() ? "_" : s;
}

std::string lines_text(const std::vector<json>& records) {
  std::string out;
  for (const auto& r : records) out += r.dump() + "\n";
  return out;
}

std::vector<json> read_jsonl(const fs::path& p) {
  std::vector<json> out;
  std::istringstream is(rave::read_text_file(p));
  std::string line;
  int n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw ExitError(kFailed, p.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  std::string modality;
  std::vector<std::string> sets;
};

rave::PipelineConfig resolve_config(const Globals& g) {
  rave::Config c;
  if (!g.config_path.empty()) {
    require_exists(g.config_path, "config file");
    c = rave::Config::load(g.config_path);
  }
  c.apply_env([](const char* name) { return std::getenv(name); });
  for (const auto& s : g.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ExitError(kUsage, "--set expects key=value, got '" + s + "'");
    c.set_text(s.substr(0, eq), s.substr(eq + 1), "--set");
  }
  if (g.seed) c.set("seed", *g.seed, "--seed");
  if (g.jobs) c.set("jobs", *g.jobs, "--jobs");
  if (!g.modality.empty()) c.set("modality", g.modality, "--modality");
  return rave::pipeline_config(c);
}

// ---------------------------------------------------------------- ingest

struct ParsedFile {
  fs::path path;
  std::optional<rave::SliceRecord> slice;
  std::optional<rave::VoxelVolume> volume;
};

bool has_dicm(const rave::Bytes& b) { return b.size() >= 132 && std::memcmp(b.data() + 128, "DICM", 4) == 0; }

bool is_nifti_path(const fs::path& p) { return p.extension() == ".nii"; }

std::vector<fs::path> walk(const std::vector<std::string>& roots) {
  std::vector<fs::path> files;
  for (const auto& root : roots) {
    require_exists(root, "input root");
    if (fs::is_regular_file(root)) {
      files.emplace_back(root);
      continue;
    }
    for (const auto& e : fs::recursive_directory_iterator(root))
      if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  files.erase(std::unique(files.begin(), files.end()), files.end());
  return files;
}

// Slices of one series ordered along the slice normal.
std::vector<std::size_t> normal_order(const std::vector<const rave::SliceRecord*>& s) {
  std::vector<std::size_t> idx(s.size());
  std::iota(idx.begin(), idx.end(), 0);
  if (s.empty()) return idx;
  const auto n = s[0]->normal();
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    const double pa = rave::dot(s[a]->image_position, n), pb = rave::dot(s[b]->image_position, n);
    if (pa != pb) return pa < pb;
    return s[a]->sop_uid < s[b]->sop_uid;
  });
  return idx;
}

int cmd_ingest(const Globals& g, const std::vector<std::string>& inputs, const std::string& out_path) {
  auto cfg = resolve_config(g);
  auto roots = inputs.empty() ? cfg.input_roots : inputs;
  if (roots.empty()) throw ExitError(kUsage, "ingest needs --input or input.roots");
  if (!cfg.modality) throw ExitError(kUsage, "ingest needs --modality (or modality in the config)");
  const auto modality = *cfg.modality;
  const auto files = walk(roots);

  std::vector<ParsedFile> parsed(files.size());
  rave::parallel_for(files.size(), cfg.jobs, [&](std::size_t i) {
    parsed[i].path = files[i];
    try {
      const auto bytes = rave::read_file(files[i]);
      if (has_dicm(bytes)) {
        parsed[i].slice = rave::parse_dicom_slice(bytes);
      } else if (is_nifti_path(files[i])) {
        parsed[i].volume = rave::parse_nifti(bytes);
      } else {
        log_event("info", "skipped: not DICOM or NIfTI", {{"path", files[i].string()}});
      }
    } catch (const rave::Error& e) {
      log_event("error", e.what(), {{"path", files[i].string()}, {"error", rave::errc_name(e.code())}});
    }
  });

  // Exams: DICOM grouped by study UID, each NIfTI file its own exam.
  struct Exam {
    std::vector<const ParsedFile*> files;
    bool nifti = false;
  };
  std::map<std::string, Exam> exams;
  for (const auto& p : parsed) {
    if (p.slice) {
      const auto id = p.slice->study_uid.empty() ? p.path.parent_path().filename().string() : p.slice->study_uid;
      exams[id].files.push_back(&p);
    } else if (p.volume) {
      auto& e = exams[p.path.stem().string()];
      e.files.push_back(&p);
      e.nifti = true;
    }
  }

  std::vector<std::string> ids;
  for (const auto& [id, _] : exams) ids.push_back(id);
  std::vector<std::vector<json>> records(ids.size());
  rave::parallel_for(ids.size(), cfg.jobs, [&](std::size_t k) {
    const auto& id = ids[k];
    const auto& exam = exams.at(id);
    try {
      json head{{"kind", "exam"}, {"exam_id", id}, {"modality", rave::modality_name(modality)}, {"seed", cfg.seed}};
      std::vector<json> body;
      if (exam.nifti) {
        if (exam.files.size() != 1) rave::fail(rave::Errc::InconsistentGeometry, "two NIfTI files share exam id " + id);
        const auto& v = *exam.files[0]->volume;
        head["source"] = "nifti";
        head["selected"] = json::array({{{"role", "volume"}, {"series_uid", ""}}});
        body.push_back({{"kind", "volume"}, {"exam_id", id}, {"role", "volume"}, {"path", exam.files[0]->path.string()},
                        {"dims", {v.dims.x, v.dims.y, v.dims.z}}, {"spacing", v.spacing}});
      } else {
        std::vector<rave::SliceRecord> slices;
        for (const auto* f : exam.files) slices.push_back(*f->slice);
        const auto series = rave::summarize_series(slices, cfg.plane_tolerance_deg);
        std::vector<std::pair<std::string, rave::SeriesSummary>> chosen;
        if (rave::is_ct(modality)) {
          auto sel = rave::select_ct_series_detailed(series, cfg.seed, cfg.ct_select);
          chosen.emplace_back("ct", sel.selected);
          log_event("info", "series selected",
                    {{"exam_id", id}, {"series_uid", sel.selected.series_uid}, {"groups", sel.groups},
                     {"axial_candidates", sel.axial_candidates}, {"tied", sel.tied}, {"seed", cfg.seed}});
        } else {
          for (auto& m : rave::select_mri_series(series, cfg.mri)) chosen.emplace_back(m.role, m.series);
        }
        head["source"] = "dicom";
        auto& sel = head["selected"] = json::array();
        for (const auto& [role, s] : chosen) {
          auto j = rave::series_json(s);
          j["role"] = role;
          sel.push_back(j);
          std::vector<const ParsedFile*> members;
          std::vector<const rave::SliceRecord*> recs;
          for (const auto* f : exam.files)
            if (f->slice->series_uid == s.series_uid) {
              members.push_back(f);
              recs.push_back(&*f->slice);
            }
          // Assemble now so geometry problems drop the exam here, not downstream.
          std::vector<rave::SliceRecord> copy;
          for (const auto* r : recs) copy.push_back(*r);
          auto opts = cfg.assemble;
          opts.modality = modality;
          (void)rave::assemble_volume(std::move(copy), opts);
          for (auto i : normal_order(recs)) {
            auto r = rave::slice_summary_json(*recs[i]);
            r["kind"] = "slice";
            r["exam_id"] = id;
            r["role"] = role;
            r["path"] = members[i]->path.string();
            body.push_back(std::move(r));
          }
        }
      }
      records[k].push_back(std::move(head));
      for (auto& b : body) records[k].push_back(std::move(b));
    } catch (const rave::Error& e) {
      log_event("error", e.what(), {{"exam_id", id}, {"error", rave::errc_name(e.code())}});
    }
  });

  std::vector<json> all;
  for (auto& r : records)
    for (auto& j : r) all.push_back(std::move(j));
  if (all.empty()) {
    std::string where;
    for (const auto& r : roots) where += (where.empty() ? "" : ", ") + r;
    log_event("error", "no valid exams found under " + where);
    return kEmpty;
  }
  rave::write_file_atomic(out_path, lines_text(all));
  std::size_t n_exams = 0;
  for (const auto& r : records) n_exams += r.empty() ? 0 : 1;
  log_event("info", "manifest written", {{"path", out_path}, {"exams", n_exams}});
  return kOk;
}

// ----------------------------------------------------- manifest consumers

struct ManifestVolume {
  std::string exam_id;
  std::string role;
  rave::Modality modality;
  std::vector<std::string> paths;
  bool nifti = false;
};

std::vector<ManifestVolume> read_manifest(const fs::path& p) {
  require_exists(p, "manifest");
  std::vector<ManifestVolume> out;
  std::map<std::pair<std::string, std::string>, std::size_t> at;
  std::map<std::string, rave::Modality> modality;
  for (const auto& r : read_jsonl(p)) {
    const auto kind = r.value("kind", "");
    const auto id = r.value("exam_id", "");
    if (kind == "exam") {
      modality[id] = rave::parse_modality(r.value("modality", "other")).value_or(rave::Modality::Other);
      continue;
    }
    if (kind != "slice" && kind != "volume") continue;
    const auto role = r.value("role", "");
    auto [it, fresh] = at.try_emplace({id, role}, out.size());
    if (fresh) out.push_back({id, role, modality.count(id) ? modality[id] : rave::Modality::Other, {}, kind == "volume"});
    out[it->second].paths.push_back(r.at("path").get<std::string>());
  }
  return out;
}

rave::VoxelVolume load_volume(const ManifestVolume& mv, const rave::PipelineConfig& cfg) {
  for (const auto& p : mv.paths) require_exists(p, "input file for exam " + mv.exam_id);
  if (mv.nifti) {
    auto v = rave::parse_nifti(rave::read_file(mv.paths.at(0)));
    v.modality = mv.modality;
    v.provenance.exam_id = mv.exam_id;
    v.provenance.source = mv.paths[0];
    if (rave::is_ct(v.modality)) rave::enforce_plausibility(v, cfg.assemble.band);
    return v;
  }
  std::vector<rave::SliceRecord> slices;
  for (const auto& p : mv.paths) slices.push_back(rave::parse_dicom_slice(rave::read_file(p)));
  auto opts = cfg.assemble;
  opts.modality = mv.modality;
  auto v = rave::assemble_volume(std::move(slices), opts);
  v.provenance.exam_id = mv.exam_id;
  return v;
}

std::string output_stem(const ManifestVolume& mv) {
  const bool plain = mv.role == "ct" || mv.role == "volume" || mv.role.empty();
  return safe_name(mv.exam_id) + (plain ? "" : "." + safe_name(mv.role));
}

int cmd_pack(const Globals& g, const std::string& manifest, const std::string& out_dir) {
  auto cfg = resolve_config(g);
  const auto vols = read_manifest(manifest);
  if (vols.empty()) {
    log_event("error", "manifest lists no volumes: " + manifest);
    return kEmpty;
  }
  fs::create_directories(out_dir);
  std::vector<int> ok(vols.size(), 0);
  rave::parallel_for(vols.size(), cfg.jobs, [&](std::size_t i) {
    const auto& mv = vols[i];
    try {
      const auto v = load_volume(mv, cfg);
      rave::RvcEncodeOptions opt;
      opt.codec = cfg.codec;
      opt.deflate_level = cfg.deflate_level;
      if (opt.codec == rave::Codec::DeltaDeflate && v.dtype == rave::ScalarType::F32) {
        log_event("info", "float voxels: using deflate instead of delta-deflate", {{"exam_id", mv.exam_id}});
        opt.codec = rave::Codec::Deflate;
      }
      opt.metadata = {{"seed", cfg.seed}, {"role", mv.role}};
      if (mv.modality != rave::Modality::Other) opt.metadata["window_plan"] = cfg.plan(mv.modality).name;
      const auto path = fs::path(out_dir) / (output_stem(mv) + ".rvc");
      rave::write_file_atomic(path, rave::encode_rvc(v, opt));
      ok[i] = 1;
    } catch (const ExitError& e) {
      log_event("error", e.what(), {{"exam_id", mv.exam_id}});
    } catch (const rave::Error& e) {
      log_event("error", e.what(), {{"exam_id", mv.exam_id}, {"error", rave::errc_name(e.code())}});
    }
  });
  const auto n = std::count(ok.begin(), ok.end(), 1);
  log_event("info", "packed", {{"written", n}, {"failed", static_cast<long>(vols.size()) - n}});
  return n == 0 ? kEmpty : kOk;
}

int cmd_tokenize(const Globals& g, const std::string& manifest, const std::string& out_dir, const std::string& format) {
  auto cfg = resolve_config(g);
  if (format != "tgr" && format != "rvc") throw ExitError(kUsage, "--format must be tgr or rvc");
  const auto vols = read_manifest(manifest);
  if (vols.empty()) {
    log_event("error", "manifest lists no volumes: " + manifest);
    return kEmpty;
  }
  fs::create_directories(out_dir);
  std::vector<std::optional<json>> index(vols.size());
  rave::parallel_for(vols.size(), cfg.jobs, [&](std::size_t i) {
    const auto& mv = vols[i];
    try {
      const auto m = cfg.modality.value_or(mv.modality);
      const auto& plan = cfg.plan(m);
      auto v = load_volume(mv, cfg);
      v.modality = m;
      const auto path = fs::path(out_dir) / (output_stem(mv) + "." + format);
      if (format == "tgr") {
        const auto tmp = path.string() + ".tmp";
        {
          std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
          if (!os) rave::fail(rave::Errc::IoError, "cannot write " + tmp);
          rave::write_tgr(os, v, plan, m);
        }
        fs::rename(tmp, path);
      } else {
        const auto tg = rave::tokenize(v, plan);
        rave::write_file_atomic(path, rave::encode_token_grid_rvc(tg, m, rave::Codec::Deflate,
                                                                  {{"seed", cfg.seed}, {"window_plan", plan.name},
                                                                   {"exam_id", mv.exam_id}}));
      }
      index[i] = json{{"exam_id", mv.exam_id},
                      {"role", mv.role},
                      {"path", path.filename().string()},
                      {"plan", plan.name},
                      {"channels", plan.channels()},
                      {"grid", {plan.grid().x, plan.grid().y, plan.grid().z}},
                      {"patch", {plan.patch.x, plan.patch.y, plan.patch.z}},
                      {"token_count", plan.token_count()},
                      {"seed", cfg.seed}};
    } catch (const ExitError& e) {
      log_event("error", e.what(), {{"exam_id", mv.exam_id}});
    } catch (const rave::Error& e) {
      log_event("error", e.what(), {{"exam_id", mv.exam_id}, {"error", rave::errc_name(e.code())}});
    }
  });
  std::vector<json> rows;
  for (auto& r : index)
    if (r) rows.push_back(std::move(*r));
  if (rows.empty()) return kEmpty;
  rave::write_file_atomic(fs::path(out_dir) / "tokens.jsonl", lines_text(rows));
  log_event("info", "tokenized", {{"written", rows.size()}});
  return kOk;
}

// ---------------------------------------------------------------- reports

struct ReportInput {
  std::string exam_id;
  std::string modality;
  std::string text;
};

// A directory of <exam_id>.txt files (a parent directory named after a
// modality sets it), or JSONL records {exam_id, text, modality?}.
std::vector<ReportInput> read_reports(const fs::path& src, const std::optional<rave::Modality>& fallback) {
  require_exists(src, "reports");
  const std::string fb = fallback ? std::string(rave::modality_name(*fallback)) : "";
  std::vector<ReportInput> out;
  if (fs::is_directory(src)) {
    for (const auto& p : walk({src.string()})) {
      if (p.extension() != ".txt") continue;
      const auto parent = p.parent_path().filename().string();
      const auto m = rave::parse_modality(parent) ? parent : fb;
      out.push_back({p.stem().string(), m, rave::read_text_file(p)});
    }
  } else {
    for (const auto& r : read_jsonl(src))
      out.push_back({r.at("exam_id").get<std::string>(), r.value("modality", fb), r.at("text").get<std::string>()});
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.exam_id < b.exam_id; });
  for (std::size_t i = 1; i < out.size(); ++i)
    if (out[i].exam_id == out[i - 1].exam_id) throw ExitError(kFailed, "duplicate report for exam " + out[i].exam_id);
  return out;
}

std::unique_ptr<rave::Answerer> make_answerer(const rave::AnswererConfig& a) {
  if (a.kind == "http") return std::make_unique<rave::HttpAnswerer>(a.url);
  if (a.kind == "exec") return std::make_unique<rave::ProcessAnswerer>(a.command);
  return std::make_unique<rave::KeywordStubAnswerer>();
}

int cmd_extract(const Globals& g, const std::string& reports, std::string questions, const std::string& out_dir) {
  auto cfg = resolve_config(g);
  if (questions.empty()) questions = cfg.questions_path;
  if (questions.empty()) throw ExitError(kUsage, "extract needs --questions or report.questions");
  require_exists(questions, "question set");
  rave::QuestionSet qs;
  try {
    qs = rave::question_set_from_json(json::parse(rave::read_text_file(questions)));
  } catch (const json::exception& e) {
    throw ExitError(kUsage, questions + ": " + e.what());
  }
  const auto inputs = read_reports(reports, cfg.modality);
  if (inputs.empty()) {
    log_event("error", "no reports found in " + reports);
    return kEmpty;
  }
  auto answerer = make_answerer(cfg.answerer);

  struct Result {
    std::vector<rave::LabelRecord> labels;
    rave::AuditLog audit;
    bool ok = false;
  };
  std::vector<Result> results(inputs.size());
  rave::parallel_for(inputs.size(), cfg.jobs, [&](std::size_t i) {
    const auto& in = inputs[i];
    try {
      const auto doc = rave::section_report(in.text, in.exam_id, cfg.sections);
      results[i].labels = rave::extract_labels(doc, qs, *answerer, cfg.answerer.retry, &results[i].audit);
      results[i].ok = true;
    } catch (const rave::Error& e) {
      log_event("error", e.what(), {{"exam_id", in.exam_id}, {"error", rave::errc_name(e.code())}});
    }
  });

  std::vector<rave::LabelRecord> all;
  std::vector<json> label_lines, audit_lines;
  for (auto& r : results) {
    for (auto& a : r.audit.records()) audit_lines.push_back(std::move(a));
    if (!r.ok) continue;
    for (auto& l : r.labels) {
      label_lines.push_back(rave::to_json(l));
      all.push_back(std::move(l));
    }
  }
  fs::create_directories(out_dir);
  rave::write_file_atomic(fs::path(out_dir) / "audit.jsonl", lines_text(audit_lines));
  if (all.empty()) {
    log_event("error", "no exam produced labels");
    return kEmpty;
  }
  std::vector<std::string> qids;
  for (const auto& q : qs.questions) qids.push_back(q.id);
  rave::write_file_atomic(fs::path(out_dir) / "labels.jsonl", lines_text(label_lines));
  rave::write_file_atomic(fs::path(out_dir) / "labels.csv", rave::label_matrix_csv(rave::label_matrix(all, qids)));
  std::size_t exams = 0;
  for (const auto& r : results) exams += r.ok ? 1 : 0;
  log_event("info", "labels written", {{"exams", exams}, {"failed", inputs.size() - exams}, {"records", all.size()}});
  return kOk;
}

int cmd_qc_sample(const Globals& g, const std::string& reports, const std::string& labels, std::optional<std::size_t> n,
                  const std::string& out_path) {
  auto cfg = resolve_config(g);
  require_exists(labels, "labels");
  const auto inputs = read_reports(reports, cfg.modality);
  std::map<std::string, std::vector<rave::LabelRecord>> by_exam;
  for (const auto& j : read_jsonl(labels)) {
    auto r = rave::label_from_json(j);
    by_exam[r.exam_id].push_back(std::move(r));
  }
  std::vector<rave::QcExam> exams;
  for (const auto& in : inputs) {
    auto it = by_exam.find(in.exam_id);
    if (it == by_exam.end()) continue;
    if (in.modality.empty()) throw ExitError(kUsage, "no modality for exam " + in.exam_id + "; pass --modality");
    std::string findings;
    try {
      findings = rave::section_report(in.text, in.exam_id, cfg.sections).findings();
    } catch (const rave::Error&) {
      continue;
    }
    exams.push_back({in.exam_id, in.modality, findings, it->second});
  }
  if (exams.empty()) return kEmpty;
  const auto rows = rave::qc_sample(exams, n.value_or(cfg.qc_n_per_modality), cfg.seed);
  std::vector<json> lines;
  for (const auto& r : rows) {
    json labels_j = json::array();
    for (const auto& l : r.labels) labels_j.push_back(rave::to_json(l));
    lines.push_back({{"modality", r.modality},
                     {"exam_id", r.exam_id},
                     {"findings", r.findings},
                     {"labels", labels_j},
                     {"seed", cfg.seed},
                     {"verdict", nullptr}});
  }
  rave::write_file_atomic(out_path, lines_text(lines));
  log_event("info", "qc worksheet written", {{"rows", rows.size()}, {"path", out_path}});
  return kOk;
}

// ------------------------------------------------------------------ probe

int cmd_probe(const Globals& g, const std::string& embeddings, std::string sidecar, const std::string& labels,
              const std::string& out_dir) {
  auto cfg = resolve_config(g);
  if (sidecar.empty()) sidecar = fs::path(embeddings).replace_extension(".json").string();
  require_exists(embeddings, "embedding matrix");
  require_exists(sidecar, "embedding sidecar");
  require_exists(labels, "label matrix");
  const auto em = rave::read_embeddings(embeddings, sidecar);
  const auto lm = rave::label_matrix_from_csv(rave::read_text_file(labels));
  const auto ds = rave::make_probe_dataset(em, lm, cfg.label_mode, cfg.seed, cfg.split);
  rave::TrainLog log;
  const auto model = rave::train_probe(ds, cfg.optimizer, &log);
  const auto table = rave::evaluate(ds, model);

  fs::create_directories(out_dir);
  rave::write_file_atomic(fs::path(out_dir) / "auroc.csv", rave::auroc_table_csv(table));
  auto j = rave::auroc_table_json(table);
  j["seed"] = cfg.seed;
  j["label_mode"] = cfg.label_mode == rave::LabelMode::Masked ? "masked" : "negative-default";
  j["optimizer"] = {{"learning_rate", cfg.optimizer.learning_rate}, {"batch_size", cfg.optimizer.batch_size},
                    {"weight_decay", cfg.optimizer.weight_decay},   {"epochs", cfg.optimizer.epochs},
                    {"beta1", cfg.optimizer.beta1},                 {"beta2", cfg.optimizer.beta2},
                    {"eps", cfg.optimizer.eps}};
  j["rows"] = {{"train", ds.rows_in(rave::Split::Train).size()},
               {"val", ds.rows_in(rave::Split::Val).size()},
               {"test", ds.rows_in(rave::Split::Test).size()}};
  j["final_loss"] = log.step_loss.empty() ? json(nullptr) : json(log.step_loss.back());
  std::vector<std::string> flagged;
  for (std::size_t t = 0; t < ds.t; ++t)
    if (log.weights.flagged[t]) flagged.push_back(ds.question_ids[t]);
  j["no_train_positives"] = flagged;
  rave::write_file_atomic(fs::path(out_dir) / "auroc.json", j.dump(2) + "\n");
  rave::write_file_atomic(fs::path(out_dir) / "model.json",
                          json{{"d", model.d}, {"t", model.t}, {"question_ids", ds.question_ids},
                               {"weights", model.weights}, {"bias", model.bias}}
                                  .dump() +
                              "\n");
  log_event("info", "probe evaluated",
            {{"included", table.included}, {"mean_auroc", table.mean_auroc ? json(*table.mean_auroc) : json(nullptr)}});
  return table.included == 0 ? kEmpty : kOk;
}

int cmd_report(const Globals& g, const std::string& auroc, const std::string& against) {
  (void)resolve_config(g);  // nothing to configure, but a bad config is still an error
  require_exists(auroc, "AUROC table");
  const auto a = rave::auroc_table_from_csv(rave::read_text_file(auroc));
  std::cout << "questions: " << a.questions.size() << ", included: " << a.included << "\n";
  for (const auto& q : a.questions)
    if (!q.auroc) std::cout << "excluded " << q.question_id << " (" << q.status << ")\n";
  if (a.mean_auroc) std::cout << "mean AUROC: " << rave::format_percent(*a.mean_auroc) << "\n";
  if (!against.empty()) {
    require_exists(against, "AUROC table");
    const auto b = rave::auroc_table_from_csv(rave::read_text_file(against));
    const auto w = rave::win_rate(a, b);
    std::cout << "win-rate: " << w.wins << " wins, " << w.ties << " ties, " << w.losses << " losses over " << w.compared
              << " questions (" << rave::format_percent(w.rate) << "%)\n";
  }
  return a.included == 0 ? kEmpty : kOk;
}

int exit_code_for(rave::Errc c) {
  switch (c) {
    case rave::Errc::InvalidConfig:
    case rave::Errc::InvalidPlan:
    case rave::Errc::IndivisibleDims:
    case rave::Errc::InvalidQuestionSet: return kUsage;
    default: return kFailed;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Volumetric radiology data engine"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_path, "configuration file");
  app.add_option("--seed", g.seed, "seed for seeded choices");
  app.add_option("--jobs", g.jobs, "worker threads");
  app.add_option("--modality", g.modality, "ct-abdomen-pelvis | ct-chest | ct-head | mri-breast");
  app.add_option("--set", g.sets, "override a config key: key=value (repeatable)");

  std::vector<std::string> inputs;
  std::string out, manifest, format = "tgr", reports, questions, labels, embeddings, sidecar, auroc, against;
  std::optional<std::size_t> qc_n;

  auto* ingest = app.add_subcommand("ingest", "parse DICOM/NIfTI, select series, write the exam manifest");
  ingest->add_option("--input", inputs, "input roots (files or directories)");
  ingest->add_option("--out", out, "manifest path (JSONL)")->required();

  auto* pack = app.add_subcommand("pack", "write one RVC container per selected volume");
  pack->add_option("--manifest", manifest)->required();
  pack->add_option("--out", out, "output directory")->required();

  auto* tokenize = app.add_subcommand("tokenize", "preprocess and patchify per the modality plan");
  tokenize->add_option("--manifest", manifest)->required();
  tokenize->add_option("--out", out, "output directory")->required();
  tokenize->add_option("--format", format, "tgr | rvc");

  auto* extract = app.add_subcommand("extract", "section reports and extract question labels");
  extract->add_option("--reports", reports, "directory of .txt reports or JSONL")->required();
  extract->add_option("--questions", questions, "question set JSON");
  extract->add_option("--out", out, "output directory")->required();

  auto* probe = app.add_subcommand("probe", "train linear probes and write per-question AUROC");
  probe->add_option("--embeddings", embeddings, "float32 N x D matrix")->required();
  probe->add_option("--sidecar", sidecar, "JSON sidecar (default: matrix path with .json)");
  probe->add_option("--labels", labels, "label matrix CSV")->required();
  probe->add_option("--out", out, "output directory")->required();

  auto* qc = app.add_subcommand("qc-sample", "seeded QC worksheet per modality");
  qc->add_option("--reports", reports)->required();
  qc->add_option("--labels", labels, "labels.jsonl from extract")->required();
  qc->add_option("--n", qc_n, "reports per modality");
  qc->add_option("--out", out, "worksheet path (JSONL)")->required();

  auto* report = app.add_subcommand("report", "summarize an AUROC table, optionally against another");
  report->add_option("--auroc", auroc)->required();
  report->add_option("--against", against);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*ingest) return cmd_ingest(g, inputs, out);
    if (*pack) return cmd_pack(g, manifest, out);
    if (*tokenize) return cmd_tokenize(g, manifest, out, format);
    if (*extract) return cmd_extract(g, reports, questions, out);
    if (*probe) return cmd_probe(g, embeddings, sidecar, labels, out);
    if (*qc) return cmd_qc_sample(g, reports, labels, qc_n, out);
    if (*report) return cmd_report(g, auroc, against);
  } catch (const ExitError& e) {
    log_event("error", e.what());
    return e.code;
  } catch (const rave::Error& e) {
    log_event("error", e.what(), {{"error", rave::errc_name(e.code())}});
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    log_event("error", e.what());
    return kFailed;
  }
  return kUsage;
}
