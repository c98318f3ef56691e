#include <doctest.h>

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "zicb/cli_io.hpp"
#include "zicb/data_model.hpp"
#include "zicb/errors.hpp"
#include "zicb/simulation.hpp"

using zicb::ClusteredDataset;
using zicb::CsvSchema;
using zicb::Error;
using zicb::ErrorCode;
using zicb::read_long_csv;
using zicb::write_long_csv;

namespace {

std::filesystem::path scratch_dir() {
  static const std::filesystem::path dir = [] {
    auto d = std::filesystem::temp_directory_path() /
             ("zicb_cli_tests_" + std::to_string(::getpid()));
    std::filesystem::create_directories(d);
    return d;
  }();
  return dir;
}

std::string scratch_file(const std::string& name) {
  return (scratch_dir() / name).string();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  REQUIRE(out.good());
  out << text;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

CliResult run_cli(const std::vector<std::string>& args) {
  std::vector<std::string> storage;
  storage.reserve(args.size() + 1);
  storage.emplace_back("zicb");
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& s : storage) argv.push_back(s.c_str());

  std::ostringstream captured_out, captured_err;
  std::streambuf* old_out = std::cout.rdbuf(captured_out.rdbuf());
  std::streambuf* old_err = std::cerr.rdbuf(captured_err.rdbuf());
  CliResult res;
  try {
    res.code = zicb::cli_main(static_cast<int>(argv.size()), argv.data());
  } catch (...) {
    std::cout.rdbuf(old_out);
    std::cerr.rdbuf(old_err);
    throw;
  }
  std::cout.rdbuf(old_out);
  std::cerr.rdbuf(old_err);
  res.out = captured_out.str();
  res.err = captured_err.str();
  return res;
}

nlohmann::json stderr_json(const CliResult& res) {
  REQUIRE(!res.err.empty());
  return nlohmann::json::parse(res.err);
}

template <typename Fn>
void expect_error(Fn&& fn, ErrorCode code, const std::string& fragment) {
  try {
    fn();
    FAIL_CHECK("expected an error containing '" << fragment << "'");
  } catch (const Error& e) {
    CHECK(e.code() == code);
    CHECK(std::string(e.what()).find(fragment) != std::string::npos);
  }
}

// A small fit-able dataset on disk, shared by the cli_main cases.
std::string fit_csv_path() {
  static const std::string path = [] {
    zicb::SimDesign d;
    d.n_subjects = 100;
    d.n_questions = 5;
    d.gamma.resize(6);
    d.gamma << 0.0, 1.0, -0.5, -0.4, 0.2, 0.4;
    d.sigma_b = 0.5;
    d.p = 0.7;
    d.estimators = {zicb::EstimatorKind::Ml};
    const std::string p = scratch_file("fit_data.csv");
    write_long_csv(zicb::generate_correct(d, 0), p);
    return p;
  }();
  return path;
}

const std::vector<std::string> kFitCovariates = {"--covariates",
                                                 "x,q2,q3,q4,q5"};

}  // namespace

TEST_CASE("long csv round-trips through write and read") {
  ClusteredDataset data;
  data.has_intercept = true;
  data.column_names = {"(Intercept)", "x", "q2"};
  zicb::SubjectRecord a;
  a.id = "s1";
  a.y.resize(3);
  a.y << 1.0, 0.0, 1.0;
  a.x.resize(3, 3);
  a.x << 1.0, 0.12345678901234566, 0.0,
         1.0, -1.25, 1.0,
         1.0, 3.0, 0.0;
  zicb::SubjectRecord b;
  b.id = "s2";
  b.y.resize(2);
  b.y << 0.0, 0.0;
  b.x.resize(2, 3);
  b.x << 1.0, 1e-17, 0.0,
         1.0, 2.5, 1.0;
  data.subjects = {a, b};

  const std::string path = scratch_file("roundtrip.csv");
  write_long_csv(data, path);

  CsvSchema schema;
  schema.covariates = {"x", "q2"};
  const ClusteredDataset back = read_long_csv(path, schema);
  REQUIRE(back.subjects.size() == 2);
  CHECK(back.has_intercept);
  CHECK(back.column_names == data.column_names);
  for (size_t s = 0; s < 2; ++s) {
    CHECK(back.subjects[s].id == data.subjects[s].id);
    CHECK(back.subjects[s].y == data.subjects[s].y);
    CHECK(back.subjects[s].x == data.subjects[s].x);  // %.17g is lossless
  }

  const std::string expected_head =
      "id,question,y,x,q2\ns1,1,1,0.12345678901234566,0\n";
  CHECK(read_text(path).substr(0, expected_head.size()) == expected_head);
}

TEST_CASE("csv reader keeps subject order and sorts questions") {
  const std::string path = scratch_file("order.csv");
  write_text(path,
             "x,y,question,id\r\n"
             "0.5 , 1 ,2,s2\r\n"
             "\r\n"
             "0.25,0,1,s2\n"
             "-1,1,9,s1\n"
             "2,0,3,s1\n");
  CsvSchema schema;
  schema.covariates = {"x"};
  const ClusteredDataset data = read_long_csv(path, schema);
  REQUIRE(data.subjects.size() == 2);
  CHECK(data.subjects[0].id == "s2");
  CHECK(data.subjects[1].id == "s1");
  // s2 rows arrive 2,1 and come back sorted; s1 keeps 3 before 9.
  CHECK(data.subjects[0].y[0] == 0.0);
  CHECK(data.subjects[0].y[1] == 1.0);
  CHECK(data.subjects[0].x(0, 1) == 0.25);
  CHECK(data.subjects[0].x(1, 1) == 0.5);
  CHECK(data.subjects[1].y[0] == 0.0);
  CHECK(data.subjects[1].x(0, 1) == 2.0);
  CHECK(data.subjects[1].x(1, 1) == -1.0);
  CHECK(data.subjects[0].x.col(0).isOnes());
}

TEST_CASE("csv reader reports precise errors") {
  CsvSchema plain;  // y, id, question, no covariates

  SUBCASE("unparseable outcome cites the line and column") {
    const std::string path = scratch_file("bad_y.csv");
    write_text(path, "id,question,y\na,1,1\na,2,x7\n");
    expect_error([&] { read_long_csv(path, plain); }, ErrorCode::ParseError,
                 "line 3: cannot parse 'x7' in column 'y' as a number");
  }
  SUBCASE("question indices must be positive integers") {
    const std::string path = scratch_file("bad_q.csv");
    write_text(path, "id,question,y\na,zero,1\n");
    expect_error([&] { read_long_csv(path, plain); }, ErrorCode::ParseError,
                 "line 2: question 'zero' is not a positive integer");
    write_text(path, "id,question,y\na,0,1\n");
    expect_error([&] { read_long_csv(path, plain); }, ErrorCode::ParseError,
                 "question '0' is not a positive integer");
  }
  SUBCASE("field count must match the header") {
    const std::string path = scratch_file("short_row.csv");
    write_text(path, "id,question,y\na,1\n");
    expect_error([&] { read_long_csv(path, plain); }, ErrorCode::ParseError,
                 "line 2: expected 3 fields, got 2");
  }
  SUBCASE("subject ids may not be empty") {
    const std::string path = scratch_file("empty_id.csv");
    write_text(path, "id,question,y\n,1,1\n");
    expect_error([&] { read_long_csv(path, plain); }, ErrorCode::ParseError,
                 "line 2: empty subject id");
  }
  SUBCASE("duplicate rows cite both line numbers") {
    const std::string path = scratch_file("dup.csv");
    write_text(path, "id,question,y\na,1,1\nb,1,0\na,1,0\n");
    expect_error(
        [&] { read_long_csv(path, plain); }, ErrorCode::ParseError,
        "line 4: duplicate row for subject 'a', question 1 (first seen at "
        "line 2)");
  }
  SUBCASE("missing columns name the file") {
    const std::string path = scratch_file("no_y.csv");
    write_text(path, "id,question,resp\na,1,1\n");
    expect_error([&] { read_long_csv(path, plain); }, ErrorCode::MissingColumn,
                 "column 'y' not found in '" + path + "'");
  }
  SUBCASE("empty and unreadable files are rejected") {
    const std::string path = scratch_file("empty.csv");
    write_text(path, "");
    expect_error([&] { read_long_csv(path, plain); }, ErrorCode::ParseError,
                 "'" + path + "' is empty");
    expect_error([&] { read_long_csv(scratch_file("no_such.csv"), plain); },
                 ErrorCode::ParseError, "cannot open");
  }
  SUBCASE("outcomes must be binary") {
    const std::string path = scratch_file("half.csv");
    write_text(path, "id,question,y\na,1,0.5\n");
    expect_error([&] { read_long_csv(path, plain); },
                 ErrorCode::NonBinaryOutcome, "");
  }
}

TEST_CASE("interaction columns multiply their factors") {
  const std::string path = scratch_file("inter.csv");
  write_text(path,
             "id,question,y,a,b\n"
             "s,1,1,2,3\n"
             "s,2,0,-0.5,4\n");
  CsvSchema schema;
  schema.covariates = {"a"};
  schema.interactions = {{"a", "b"}};
  const ClusteredDataset data = read_long_csv(path, schema);
  REQUIRE(data.column_names.size() == 3);
  CHECK(data.column_names[2] == "a:b");
  CHECK(data.subjects[0].x(0, 2) == 6.0);
  CHECK(data.subjects[0].x(1, 2) == -2.0);

  schema.interactions = {{"a", "c"}};
  expect_error([&] { read_long_csv(path, schema); }, ErrorCode::MissingColumn,
               "column 'c' not found");
}

TEST_CASE("schemas can rename columns and drop the intercept") {
  const std::string path = scratch_file("renamed.csv");
  write_text(path,
             "subject,item,resp,dose\n"
             "u,1,1,0.1\n"
             "u,2,0,0.2\n");
  CsvSchema schema;
  schema.id = "subject";
  schema.question = "item";
  schema.outcome = "resp";
  schema.covariates = {"dose"};
  schema.intercept = false;
  const ClusteredDataset data = read_long_csv(path, schema);
  CHECK(!data.has_intercept);
  REQUIRE(data.column_names == std::vector<std::string>{"dose"});
  CHECK(data.subjects[0].x.cols() == 1);
  CHECK(data.subjects[0].x(1, 0) == 0.2);
}

TEST_CASE("the fit subcommand writes a complete json document") {
  const std::string out = scratch_file("fit_out.json");
  std::vector<std::string> args = {"fit",          "--data",
                                   fit_csv_path(), "--estimator",
                                   "ml,glmm,gee-ci,gee-me,gee-un",
                                   "--with-lrt",   "--quad-points",
                                   "20",           "--output",
                                   out};
  args.insert(args.end(), kFitCovariates.begin(), kFitCovariates.end());
  const CliResult res = run_cli(args);
  CHECK(res.code == 0);
  CHECK(res.err.empty());

  const auto doc = nlohmann::json::parse(read_text(out));
  CHECK(doc["command"] == "fit");
  CHECK(doc["data"]["file"] == fit_csv_path());
  CHECK(doc["data"]["n_subjects"] == 100);
  CHECK(doc["data"]["n_obs"] == 500);
  const std::vector<std::string> names = {"(Intercept)", "x",  "q2",
                                          "q3",          "q4", "q5"};
  CHECK(doc["data"]["covariates"].get<std::vector<std::string>>() == names);
  long freq_total = 0;
  for (const auto& row : doc["data"]["response_count_frequencies"])
    freq_total += row["n_subjects"].get<long>();
  CHECK(freq_total == 100);
  CHECK(doc["settings"]["link"] == "probit");
  CHECK(doc["settings"]["quad_points"] == 20);
  CHECK(doc["settings"]["ci_level"] == 0.95);
  CHECK(doc["identifiability"]["identified"] == true);
  CHECK(doc["identifiability"]["continuous_covariate"] == true);

  REQUIRE(doc["fits"].size() == 5);
  const auto& ml = doc["fits"][0];
  CHECK(ml["estimator"] == "ML");
  CHECK(ml["converged"] == true);
  CHECK(ml["boundary"] == "none");
  CHECK(ml["loglik"].is_number());
  const double p_hat = ml["pr_z1"]["estimate"].get<double>();
  CHECK(p_hat > 0.0);
  CHECK(p_hat < 1.0);
  CHECK(ml["pr_z1"]["ci_lower"].get<double>() < p_hat);
  CHECK(ml["pr_z1"]["ci_upper"].get<double>() > p_hat);
  CHECK(ml["structural_zero_fraction"].get<double>() ==
        doctest::Approx(1.0 - p_hat));
  CHECK(ml["sigma_b"]["estimate"].get<double>() > 0.0);
  REQUIRE(ml["coefficients"].size() == 6);
  for (size_t c = 0; c < names.size(); ++c) {
    CHECK(ml["coefficients"][c]["name"] == names[c]);
    CHECK(ml["coefficients"][c]["se"].get<double>() > 0.0);
  }

  const auto& glmm = doc["fits"][1];
  CHECK(glmm["estimator"] == "GLMM");
  CHECK(!glmm.contains("pr_z1"));  // the one-component fit has no mixture

  const auto& ci = doc["fits"][2];
  CHECK(ci["estimator"] == "GEE-CI");
  CHECK(ci["converged"] == true);
  CHECK(ci["ef_norm"].is_number());
  CHECK(!ci.contains("loglik"));
  CHECK(!ci.contains("alpha"));
  CHECK(ci["coefficient_scale"] == "marginal");
  CHECK(ci["pr_z1"]["estimate"].get<double>() > 0.0);

  const auto& me = doc["fits"][3];
  CHECK(me["estimator"] == "GEE-ME");
  CHECK(me["alpha"].is_number());

  const auto& un = doc["fits"][4];
  CHECK(un["estimator"] == "GEE-UN");
  REQUIRE(un["alpha_matrix"].size() == 5);
  for (const auto& row : un["alpha_matrix"]) REQUIRE(row.size() == 5);
  CHECK(un["alpha_matrix"][0][0].get<double>() == doctest::Approx(1.0));
  CHECK(un["alpha_matrix"][0][1].get<double>() ==
        doctest::Approx(un["alpha_matrix"][1][0].get<double>()));

  const auto& lrt = doc["lrt"];
  CHECK(lrt["lambda"].get<double>() >= 0.0);
  CHECK(lrt["p_value"].get<double>() >= 0.0);
  CHECK(lrt["p_value"].get<double>() <= 1.0);
  CHECK(lrt["loglik_mixture"].get<double>() >=
        lrt["loglik_null"].get<double>());
  CHECK(lrt["reference"] == "0.5*chi2(0) + 0.5*chi2(1)");
}

TEST_CASE("the lrt subcommand forces both likelihood fits") {
  std::vector<std::string> args = {"fit", "--data", fit_csv_path(),
                                   "--quad-points", "20"};
  args[0] = "lrt";
  args.insert(args.end(), kFitCovariates.begin(), kFitCovariates.end());
  args.push_back("--output");
  args.push_back("-");
  const CliResult res = run_cli(args);
  CHECK(res.code == 0);
  const auto doc = nlohmann::json::parse(res.out);
  CHECK(doc["command"] == "lrt");
  REQUIRE(doc["fits"].size() == 2);
  CHECK(doc["fits"][0]["estimator"] == "ML");
  CHECK(doc["fits"][1]["estimator"] == "GLMM");
  CHECK(doc.contains("lrt"));
}

TEST_CASE("usage and data errors exit with code one") {
  SUBCASE("missing required option") {
    CHECK(run_cli({"fit"}).code == 1);
  }
  SUBCASE("unknown subcommand") {
    CHECK(run_cli({"frobnicate"}).code == 1);
  }
  SUBCASE("format must be json or text") {
    CHECK(run_cli({"fit", "--data", fit_csv_path(), "--format", "yaml"})
              .code == 1);
  }
  SUBCASE("unknown estimator") {
    std::vector<std::string> args = {"fit", "--data", fit_csv_path(),
                                     "--estimator", "bogus"};
    args.insert(args.end(), kFitCovariates.begin(), kFitCovariates.end());
    const CliResult res = run_cli(args);
    CHECK(res.code == 1);
    CHECK(stderr_json(res)["error"]["code"] == "UnknownEstimator");
  }
  SUBCASE("unreadable data file") {
    const CliResult res =
        run_cli({"fit", "--data", scratch_file("gone.csv")});
    CHECK(res.code == 1);
    CHECK(stderr_json(res)["error"]["code"] == "ParseError");
  }
  SUBCASE("unsupported link") {
    const CliResult res = run_cli(
        {"fit", "--data", fit_csv_path(), "--link", "cauchit"});
    CHECK(res.code == 1);
    CHECK(stderr_json(res)["error"]["code"] == "UnsupportedLink");
  }
  SUBCASE("marginal estimators require the probit link") {
    std::vector<std::string> args = {"fit",        "--data", fit_csv_path(),
                                     "--estimator", "gee-ci", "--link",
                                     "logit"};
    args.insert(args.end(), kFitCovariates.begin(), kFitCovariates.end());
    const CliResult res = run_cli(args);
    CHECK(res.code == 1);
    CHECK(stderr_json(res)["error"]["code"] == "UnsupportedLink");
  }
  SUBCASE("malformed interaction specification") {
    std::vector<std::string> args = {"fit", "--data", fit_csv_path(),
                                     "--interactions", "xq2"};
    args.insert(args.end(), kFitCovariates.begin(), kFitCovariates.end());
    const CliResult res = run_cli(args);
    CHECK(res.code == 1);
    const auto err = stderr_json(res);
    CHECK(err["error"]["code"] == "ParseError");
    CHECK(err["error"]["message"].get<std::string>().find(
              "must have the form colA:colB") != std::string::npos);
  }
}

TEST_CASE("estimation failures exit with code two and report the iterate") {
  std::vector<std::string> args = {"fit",          "--data",
                                   fit_csv_path(), "--estimator",
                                   "gee-ci",       "--max-iterations",
                                   "1"};
  args.insert(args.end(), kFitCovariates.begin(), kFitCovariates.end());
  const CliResult res = run_cli(args);
  CHECK(res.code == 2);
  const auto err = stderr_json(res)["error"];
  CHECK(err["code"] == "NonConvergence");
  CHECK(!err["message"].get<std::string>().empty());
  REQUIRE(err.contains("last_iterate"));
  CHECK(err["last_iterate"]["p"].is_number());
  CHECK(err["last_iterate"]["coeffs"].size() == 6);
}

TEST_CASE("text output renders human-readable reports") {
  const std::string out = scratch_file("fit_out.txt");
  std::vector<std::string> args = {"fit",          "--data",
                                   fit_csv_path(), "--estimator",
                                   "ml",           "--with-lrt",
                                   "--quad-points", "20",
                                   "--format",     "text",
                                   "--output",     out};
  args.insert(args.end(), kFitCovariates.begin(), kFitCovariates.end());
  CHECK(run_cli(args).code == 0);
  const std::string text = read_text(out);
  CHECK(text.find("zero-inflated clustered binary fit") != std::string::npos);
  CHECK(text.find("[ML]") != std::string::npos);
  CHECK(text.find("Pr(Z=1)") != std::string::npos);
  CHECK(text.find("coefficients (") != std::string::npos);
  CHECK(text.find("zero-inflation LRT: lambda =") != std::string::npos);
}

TEST_CASE("the simulate subcommand honours design files") {
  const std::string design = scratch_file("design.json");
  write_text(design, R"({
    "n_subjects": 60, "n_questions": 4,
    "gamma": [0.0, 1.0, 0.2, -0.2, 0.1],
    "sigma_b": 0.5, "p": 0.7, "seed": 3,
    "replications": 3, "quad_points": 20,
    "estimators": ["ml"]
  })");
  const std::string out = scratch_file("sim_out.json");
  const CliResult res = run_cli(
      {"simulate", "--design", design, "--output", out});
  CHECK(res.code == 0);
  const auto doc = nlohmann::json::parse(read_text(out));
  CHECK(doc["command"] == "simulate");
  CHECK(doc["design"]["replications"] == 3);
  CHECK(doc["design"]["n_subjects"] == 60);
  CHECK(doc["design"]["estimators"].size() == 1);
  REQUIRE(doc["results"].size() == 1);
  const auto& r = doc["results"][0];
  CHECK(r["estimator"] == "ML");
  CHECK(r["n_used"].get<int>() + r["n_boundary"].get<int>() +
            r["n_failed"].get<int>() ==
        3);
  REQUIRE(r["parameters"].size() == 7);  // p, sigma_b, five coefficients
  CHECK(r["parameters"][0]["name"] == "Pr(Z=1)");
  CHECK(r["parameters"][0]["true"].get<double>() == 0.7);
  if (r["n_used"].get<int>() > 0) CHECK(r["parameters"][0]["mean"].is_number());

  SUBCASE("text rendering") {
    const std::string tout = scratch_file("sim_out.txt");
    CHECK(run_cli({"simulate", "--design", design, "--format", "text",
                   "--output", tout})
              .code == 0);
    const std::string text = read_text(tout);
    CHECK(text.find("simulation: 3 replications, 60 subjects x 4 questions") !=
          std::string::npos);
    CHECK(text.find("parameter        true      mean") != std::string::npos);
  }
  SUBCASE("command line overrides") {
    const std::string oout = scratch_file("sim_override.json");
    CHECK(run_cli({"simulate", "--design", design, "--reps", "2", "--seed",
                   "9", "--estimators", "glmm", "--output", oout})
              .code == 0);
    const auto odoc = nlohmann::json::parse(read_text(oout));
    CHECK(odoc["design"]["replications"] == 2);
    CHECK(odoc["design"]["seed"] == 9);
    REQUIRE(odoc["results"].size() == 1);
    CHECK(odoc["results"][0]["estimator"] == "GLMM");
  }
}

TEST_CASE("simulate output is byte-identical across runs and threads") {
  const std::string design = scratch_file("design_det.json");
  write_text(design, R"({
    "n_subjects": 80, "n_questions": 4,
    "gamma": [0.0, 1.0, 0.2, -0.2, 0.1],
    "sigma_b": 0.5, "p": 0.7, "seed": 11,
    "replications": 3, "quad_points": 20,
    "estimators": ["ml", "gee-ci"]
  })");
  const std::string out1 = scratch_file("det1.json");
  const std::string out2 = scratch_file("det2.json");
  const std::string out3 = scratch_file("det3.json");
  CHECK(run_cli({"simulate", "--design", design, "--threads", "1",
                 "--output", out1})
            .code == 0);
  CHECK(run_cli({"simulate", "--design", design, "--threads", "1",
                 "--output", out2})
            .code == 0);
  CHECK(run_cli({"simulate", "--design", design, "--threads", "3",
                 "--output", out3})
            .code == 0);
  const std::string run1 = read_text(out1);
  CHECK(run1 == read_text(out2));
  CHECK(run1 == read_text(out3));
}

TEST_CASE("simulate rejects malformed designs and presets") {
  SUBCASE("exactly one source of the design") {
    const CliResult none = run_cli({"simulate"});
    CHECK(none.code == 1);
    CHECK(stderr_json(none)["error"]["code"] == "InvalidDesign");
    const std::string design = scratch_file("dummy_design.json");
    write_text(design, R"({"gamma": [0,1,0.1,0.1,0.1,0.1]})");
    CHECK(run_cli({"simulate", "--preset", "table1", "--design", design})
              .code == 1);
  }
  SUBCASE("unknown preset") {
    const CliResult res = run_cli({"simulate", "--preset", "table9"});
    CHECK(res.code == 1);
    const auto err = stderr_json(res);
    CHECK(err["error"]["code"] == "InvalidDesign");
    CHECK(err["error"]["message"].get<std::string>().find("table9") !=
          std::string::npos);
  }
  SUBCASE("unknown design key") {
    const std::string design = scratch_file("bad_key.json");
    write_text(design, R"({"gamma": [0,1], "n_clusters": 5})");
    const CliResult res = run_cli({"simulate", "--design", design});
    CHECK(res.code == 1);
    CHECK(stderr_json(res)["error"]["message"].get<std::string>().find(
              "unknown design key 'n_clusters'") != std::string::npos);
  }
  SUBCASE("gamma is required") {
    const std::string design = scratch_file("no_gamma.json");
    write_text(design, R"({"n_subjects": 50})");
    const CliResult res = run_cli({"simulate", "--design", design});
    CHECK(res.code == 1);
    CHECK(stderr_json(res)["error"]["message"].get<std::string>().find(
              "must set gamma") != std::string::npos);
  }
  SUBCASE("design json must parse") {
    const std::string design = scratch_file("broken.json");
    write_text(design, "{not json");
    const CliResult res = run_cli({"simulate", "--design", design});
    CHECK(res.code == 1);
    CHECK(stderr_json(res)["error"]["code"] == "ParseError");
  }
  SUBCASE("design validation failures surface") {
    const std::string design = scratch_file("short_gamma.json");
    write_text(design,
               R"({"n_subjects": 50, "n_questions": 5, "gamma": [0.0, 1.0]})");
    const CliResult res = run_cli({"simulate", "--design", design});
    CHECK(res.code == 1);
    CHECK(stderr_json(res)["error"]["code"] == "InvalidDesign");
  }
}
