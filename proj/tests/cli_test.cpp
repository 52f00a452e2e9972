// Runs the rave executable end to end on small generated inputs.

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "rave/nifti.hpp"
#include "rave/probe_io.hpp"
#include "rave/report.hpp"
#include "rave/rvc.hpp"
#include "rave/tokens.hpp"
#include "support.hpp"

using namespace rave;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

Run rave_cli(const test::TempDir& dir, const std::string& args) {
  const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
  const auto cmd = std::string(RAVE_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_text_file(out);
  r.err = read_text_file(err);
  return r;
}

std::vector<json> jsonl(const fs::path& p) {
  std::vector<json> out;
  std::istringstream is(read_text_file(p));
  for (std::string line; std::getline(is, line);)
    if (!line.empty()) out.push_back(json::parse(line));
  return out;
}

std::vector<SliceRecord> with_study(std::vector<SliceRecord> s, const std::string& study) {
  for (auto& r : s) r.study_uid = study;
  return s;
}

void write_series(const fs::path& dir, const std::vector<SliceRecord>& slices) {
  fs::create_directories(dir);
  // Written in reverse so the manifest has to sort them.
  for (std::size_t i = slices.size(); i-- > 0;)
    write_file_atomic(dir / (slices[i].sop_uid + ".dcm"), write_dicom_slice(slices[i]));
}

// One CT exam with two axial series, one exam with uneven slice gaps, a NIfTI
// exam, and two files that are not usable.
struct Corpus {
  test::TempDir dir{"rave-cli"};
  std::vector<SliceRecord> thin;
  VoxelVolume nifti;

  Corpus() {
    auto thick = with_study(test::make_series("1.2.3.10", 6, 5.0, 16, 16), "1.2.3.1");
    for (auto& s : thick) s.slice_thickness = 5.0;
    thin = with_study(test::make_series("1.2.3.11", 12, 1.25, 16, 16), "1.2.3.1");
    write_series(dir / "in" / "examA" / "thick", thick);
    write_series(dir / "in" / "examA" / "thin", thin);

    auto uneven = with_study(test::make_series("1.2.3.20", 5, 2.0), "1.2.3.2");
    uneven[4].image_position[2] = 20.0;
    write_series(dir / "in" / "examB", uneven);

    SplitMix rng(11);
    nifti = test::random_volume(rng, {12, 10, 8}, ScalarType::I16);
    for (auto& x : nifti.data) x = static_cast<float>(static_cast<int>(x) % 1000);
    nifti.spacing = {1.0, 1.0, 2.0};
    fs::create_directories(dir / "in" / "nifti");
    write_file_atomic(dir / "in" / "nifti" / "examC.nii", write_nifti(nifti));

    fs::create_directories(dir / "in" / "junk");
    write_file_atomic(dir / "in" / "junk" / "notes.txt", std::string("not an image\n"));
    Bytes broken(140, 0);
    std::memcpy(broken.data() + 128, "DICM", 4);
    write_file_atomic(dir / "in" / "junk" / "broken.dcm", broken);
  }

  [[nodiscard]] std::string in() const { return (dir / "in").string(); }
};

}  // namespace

TEST(Cli, UsageErrors) {
  test::TempDir dir;
  EXPECT_EQ(rave_cli(dir, "").code, 1);
  EXPECT_EQ(rave_cli(dir, "frobnicate").code, 1);
  EXPECT_EQ(rave_cli(dir, "--set seed=abc report --auroc x.csv").code, 1);
  EXPECT_EQ(rave_cli(dir, "--set nonsense=1 report --auroc x.csv").code, 1);
  write_file_atomic(dir / "bad.conf", std::string("probe.epochz = 3\n"));
  const auto r = rave_cli(dir, "--config " + (dir / "bad.conf").string() + " report --auroc x.csv");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("probe.epochz"), std::string::npos);
  EXPECT_EQ(rave_cli(dir, "--config " + (dir / "none.conf").string() + " report --auroc x.csv").code, 3);
  EXPECT_EQ(rave_cli(dir, "--set plans.ct-head.patch=[7,8,4] pack --manifest m --out o").code, 1);
  EXPECT_EQ(rave_cli(dir, "--modality ct-foot ingest --input . --out m.jsonl").code, 1);
}

TEST(Cli, MissingUpstreamInputs) {
  test::TempDir dir;
  const auto d = dir.path().string();
  EXPECT_EQ(rave_cli(dir, "pack --manifest " + d + "/none.jsonl --out " + d + "/o").code, 3);
  EXPECT_EQ(rave_cli(dir, "tokenize --manifest " + d + "/none.jsonl --out " + d + "/o").code, 3);
  EXPECT_EQ(rave_cli(dir, "--modality ct-head ingest --input " + d + "/nowhere --out " + d + "/m.jsonl").code, 3);
  EXPECT_EQ(rave_cli(dir, "report --auroc " + d + "/none.csv").code, 3);
  EXPECT_EQ(rave_cli(dir, "probe --embeddings " + d + "/e.f32 --labels " + d + "/l.csv --out " + d + "/p").code, 3);
}

TEST(Cli, EmptyInputExitsTwo) {
  test::TempDir dir;
  fs::create_directories(dir / "empty");
  const auto r = rave_cli(dir, "--modality ct-head ingest --input " + (dir / "empty").string() + " --out " +
                                   (dir / "m.jsonl").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("no valid exams"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir / "m.jsonl"));

  write_file_atomic(dir / "empty.jsonl", std::string());
  EXPECT_EQ(rave_cli(dir, "pack --manifest " + (dir / "empty.jsonl").string() + " --out " + (dir / "o").string()).code, 2);
}

TEST(Cli, IngestPackTokenize) {
  Corpus c;
  const auto& dir = c.dir;
  const auto m1 = (dir / "m1.jsonl").string(), m2 = (dir / "m2.jsonl").string();
  auto r = rave_cli(dir, "--modality ct-head --seed 4 ingest --input " + c.in() + " --out " + m1);
  ASSERT_EQ(r.code, 0) << r.err;
  // Bad inputs are logged and skipped.
  EXPECT_NE(r.err.find("NonUniformSpacing"), std::string::npos);
  EXPECT_NE(r.err.find("broken.dcm"), std::string::npos);
  ASSERT_EQ(rave_cli(dir, "--modality ct-head --seed 4 --jobs 3 ingest --input " + c.in() + " --out " + m2).code, 0);
  EXPECT_EQ(read_file(m1), read_file(m2));

  const auto rows = jsonl(m1);
  std::vector<std::string> exams;
  std::vector<double> zs;
  for (const auto& row : rows) {
    if (row["kind"] == "exam") {
      exams.push_back(row["exam_id"]);
      EXPECT_EQ(row["seed"], 4);
      if (row["exam_id"] == "1.2.3.1") {
        EXPECT_EQ(row["selected"][0]["series_uid"], "1.2.3.11");
      }
    }
    if (row["kind"] == "slice") zs.push_back(row.at("image_position")[2].get<double>());
  }
  EXPECT_EQ(exams, (std::vector<std::string>{"1.2.3.1", "examC"}));
  ASSERT_EQ(zs.size(), 12u);
  EXPECT_TRUE(std::is_sorted(zs.begin(), zs.end()));

  // pack: decoded volumes equal the directly assembled ones.
  ASSERT_EQ(rave_cli(dir, "pack --manifest " + m1 + " --out " + (dir / "rvc").string()).code, 0);
  AssembleOptions opt;
  opt.modality = Modality::CtHead;
  const auto expect = assemble_volume(c.thin, opt);
  const auto got = decode_rvc(read_file(dir / "rvc" / "1.2.3.1.rvc"));
  EXPECT_EQ(got.dims, expect.dims);
  EXPECT_EQ(got.data, expect.data);
  EXPECT_EQ(got.modality, Modality::CtHead);
  const auto gotn = decode_rvc(read_file(dir / "rvc" / "examC.rvc"));
  EXPECT_EQ(gotn.data, c.nifti.data);

  // tokenize with a reduced plan: bytes equal the in-process pipeline.
  const auto small = "--set 'plans.ct-head.target_dims=[32,32,16]' ";
  ASSERT_EQ(rave_cli(dir, std::string(small) + "tokenize --manifest " + m1 + " --out " + (dir / "tok").string()).code, 0);
  auto plan = shipped_plan("ct-head");
  plan.target_dims = {32, 32, 16};
  auto ct = expect;
  EXPECT_EQ(read_file(dir / "tok" / "1.2.3.1.tgr"), encode_tgr(tokenize(ct, plan), Modality::CtHead));
  const auto index = jsonl(dir / "tok" / "tokens.jsonl");
  ASSERT_EQ(index.size(), 2u);
  EXPECT_EQ(index[0]["token_count"], 64);
  EXPECT_EQ(index[0]["channels"], 11);

  ASSERT_EQ(rave_cli(dir, std::string(small) + "tokenize --format rvc --manifest " + m1 + " --out " +
                              (dir / "tokr").string())
                .code,
            0);
  const auto tg = decode_token_grid_rvc(read_file(dir / "tokr" / "examC.rvc"));
  auto nv = c.nifti;
  nv.modality = Modality::CtHead;
  EXPECT_EQ(tg.values, tokenize(nv, plan).values);
}

TEST(Cli, HeadPlanTokenCount) {
  Corpus c;
  const auto& dir = c.dir;
  const auto m = (dir / "m.jsonl").string();
  ASSERT_EQ(rave_cli(dir, "--modality ct-head ingest --input " + (dir / "in" / "nifti").string() + " --out " + m).code, 0);
  ASSERT_EQ(rave_cli(dir, "tokenize --manifest " + m + " --out " + (dir / "tok").string()).code, 0);
  const auto path = dir / "tok" / "examC.tgr";
  std::ifstream is(path, std::ios::binary);
  Bytes head(tgr::kHeaderSize);
  is.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(head.size()));
  const auto h = tgr::decode_header(head);
  EXPECT_EQ(h.token_count, 32768u);
  EXPECT_EQ(h.channels, 11u);
  EXPECT_EQ(h.grid, (Dims{32, 32, 32}));
  EXPECT_EQ(fs::file_size(path), 64u + 11ull * 256 * 256 * 128 * 4);
  EXPECT_EQ(jsonl(dir / "tok" / "tokens.jsonl").at(0)["token_count"], 32768);
}

TEST(Cli, ExtractAndQc) {
  test::TempDir dir;
  const auto reports = dir / "reports" / "ct-head";
  fs::create_directories(reports);
  write_file_atomic(reports / "e1.txt", std::string("FINDINGS: Hydrocephalus is seen. No intracranial hemorrhage.\n"
                                                    "IMPRESSION: Hydrocephalus.\n"));
  write_file_atomic(reports / "e2.txt", std::string("Findings: There is a subdural hematoma.\nImpression: Bleed.\n"));
  write_file_atomic(reports / "e3.txt", std::string("IMPRESSION: Normal.\n"));
  const auto q = std::string(RAVE_CONFIG_DIR) + "/questions/ct-head.json";
  const auto base = "extract --reports " + (dir / "reports").string() + " --questions " + q + " --out ";
  auto r = rave_cli(dir, base + (dir / "x1").string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("NoFindingsSection"), std::string::npos);
  ASSERT_EQ(rave_cli(dir, "--jobs 2 " + base + (dir / "x2").string()).code, 0);
  EXPECT_EQ(read_file(dir / "x1" / "labels.jsonl"), read_file(dir / "x2" / "labels.jsonl"));
  EXPECT_EQ(read_file(dir / "x1" / "labels.csv"), read_file(dir / "x2" / "labels.csv"));

  const auto m = label_matrix_from_csv(read_text_file(dir / "x1" / "labels.csv"));
  ASSERT_EQ(m.question_ids.size(), 29u);
  EXPECT_EQ(m.exam_ids, (std::vector<std::string>{"e1", "e2"}));
  auto col = [&](const std::string& id) {
    return static_cast<std::size_t>(std::find(m.question_ids.begin(), m.question_ids.end(), id) - m.question_ids.begin());
  };
  EXPECT_EQ(m.at(0, col("hydrocephalus")), Answer::Yes);
  EXPECT_EQ(m.at(0, col("intracranial_hemorrhage")), Answer::No);
  EXPECT_EQ(m.at(1, col("subdural_hematoma")), Answer::Yes);
  EXPECT_EQ(m.at(1, col("hydrocephalus")), Answer::NotMentioned);
  // Evidence is a verbatim span of the findings.
  for (const auto& row : jsonl(dir / "x1" / "labels.jsonl"))
    if (row.contains("evidence") && row["evidence"].is_string()) {
      const auto text = read_text_file(reports / (row["exam_id"].get<std::string>() + ".txt"));
      EXPECT_NE(text.find(row["evidence"].get<std::string>()), std::string::npos);
    }
  EXPECT_FALSE(jsonl(dir / "x1" / "audit.jsonl").empty());

  const auto qc = "qc-sample --reports " + (dir / "reports").string() + " --labels " + (dir / "x1" / "labels.jsonl").string() +
                  " --n 1 --out ";
  ASSERT_EQ(rave_cli(dir, "--seed 1 " + qc + (dir / "qc1.jsonl").string()).code, 0);
  ASSERT_EQ(rave_cli(dir, "--seed 1 " + qc + (dir / "qc2.jsonl").string()).code, 0);
  EXPECT_EQ(read_file(dir / "qc1.jsonl"), read_file(dir / "qc2.jsonl"));
  const auto rows = jsonl(dir / "qc1.jsonl");
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0]["modality"], "ct-head");
  EXPECT_EQ(rows[0]["labels"].size(), 29u);

  write_file_atomic(dir / "bad.json", std::string("{\"modality\": \"ct-head\", \"questions\": []}"));
  EXPECT_EQ(rave_cli(dir, "extract --reports " + (dir / "reports").string() + " --questions " + (dir / "bad.json").string() +
                              " --out " + (dir / "x3").string())
                .code,
            1);
}

TEST(Cli, ProbeMatchesGolden) {
  test::TempDir dir;
  const std::string fx = std::string(RAVE_FIXTURES) + "/probe";
  const auto expected = json::parse(read_text_file(fx + "/expected.json"));
  const auto args = "--set labels.mode=masked probe --embeddings " + fx + "/embeddings.f32 --labels " + fx +
                    "/labels.csv --out ";
  const auto r = rave_cli(dir, args + (dir / "p1").string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto table = auroc_table_from_csv(read_text_file(dir / "p1" / "auroc.csv"));
  ASSERT_EQ(table.questions.size(), 4u);
  for (const auto& q : table.questions) {
    const auto& e = expected["questions"][q.question_id];
    EXPECT_EQ(q.positives, e["positives"].get<std::size_t>()) << q.question_id;
    EXPECT_EQ(q.negatives, e["negatives"].get<std::size_t>()) << q.question_id;
    if (e["auroc"].is_null()) {
      EXPECT_FALSE(q.auroc) << q.question_id;
      EXPECT_EQ(q.status, "excluded:no-positives");
    } else {
      ASSERT_TRUE(q.auroc) << q.question_id;
      EXPECT_NEAR(*q.auroc, e["auroc"].get<double>(), 1e-12) << q.question_id;
    }
  }
  ASSERT_TRUE(table.mean_auroc);
  EXPECT_NEAR(*table.mean_auroc, expected["mean_auroc"].get<double>(), 1e-12);
  EXPECT_EQ(table.included, 3u);

  ASSERT_EQ(rave_cli(dir, args + (dir / "p2").string()).code, 0);
  EXPECT_EQ(read_file(dir / "p1" / "auroc.csv"), read_file(dir / "p2" / "auroc.csv"));
  const auto j = json::parse(read_text_file(dir / "p1" / "auroc.json"));
  EXPECT_EQ(j["rows"]["test"], 26);
  EXPECT_EQ(j["label_mode"], "masked");
}

TEST(Cli, ReportWinRate) {
  test::TempDir dir;
  std::string a = "question_id,auroc,positives,negatives,status\n", b = a;
  for (int i = 0; i < 29; ++i) {
    const auto id = "q" + std::to_string(i);
    a += id + "," + (i == 0 ? "0.6" : "0.8") + ",5,5,ok\n";
    b += id + ",0.7,5,5,ok\n";
  }
  a += "none,,0,10,excluded:no-positives\n";
  write_file_atomic(dir / "a.csv", a);
  write_file_atomic(dir / "b.csv", b);
  const auto r = rave_cli(dir, "report --auroc " + (dir / "a.csv").string() + " --against " + (dir / "b.csv").string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("28 wins, 0 ties, 1 losses over 29 questions (96.6%)"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("excluded none (excluded:no-positives)"), std::string::npos) << r.out;

  write_file_atomic(dir / "empty.csv", std::string("question_id,auroc,positives,negatives,status\nnone,,0,10,excluded:no-positives\n"));
  EXPECT_EQ(rave_cli(dir, "report --auroc " + (dir / "empty.csv").string()).code, 2);
}
