#include "zicb/cli_io.hpp"

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <unordered_map>

#include <CLI11.hpp>
#include <json.hpp>

#include "zicb/gee_estimator.hpp"
#include "zicb/inference.hpp"
#include "zicb/ml_estimator.hpp"
#include "zicb/quadrature.hpp"
#include "zicb/simulation.hpp"

namespace zicb {

namespace {

using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------- CSV ----

std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::vector<std::string> split_fields(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(trim(cur));
  return out;
}

double parse_double_field(const std::string& s, long line_no,
                          const std::string& col) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0' || errno == ERANGE ||
      !std::isfinite(v))
    fail(ErrorCode::ParseError,
         "line " + std::to_string(line_no) + ": cannot parse '" + s +
             "' in column '" + col + "' as a number");
  return v;
}

long parse_question_field(const std::string& s, long line_no) {
  errno = 0;
  char* end = nullptr;
  const long v = std::strtol(s.c_str(), &end, 10);
  if (end == s.c_str() || *end != '\0' || errno == ERANGE || v < 1)
    fail(ErrorCode::ParseError,
         "line " + std::to_string(line_no) + ": question '" + s +
             "' is not a positive integer");
  return v;
}

int column_index(const std::vector<std::string>& header,
                 const std::string& name, const std::string& path) {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end())
    fail(ErrorCode::MissingColumn,
         "column '" + name + "' not found in '" + path + "'");
  return static_cast<int>(it - header.begin());
}

void format_double(std::string& out, double v) {
  char buf[40];
  if (v == static_cast<long long>(v) && std::abs(v) < 1e15)
    std::snprintf(buf, sizeof buf, "%lld", static_cast<long long>(v));
  else
    std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
}

// ------------------------------------------------------------- reports ----

std::string format_fixed(double v, int width, int prec) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%*.*f", width, prec, v);
  return buf;
}

ordered_json value_block(double estimate, std::optional<double> se,
                         double level) {
  ordered_json b;
  b["estimate"] = estimate;
  if (se) {
    const auto ci = wald_ci(estimate, *se, level);
    b["se"] = *se;
    b["ci_lower"] = ci.first;
    b["ci_upper"] = ci.second;
  } else {
    b["se"] = nullptr;
    b["ci_lower"] = nullptr;
    b["ci_upper"] = nullptr;
  }
  return b;
}

ordered_json coefficient_array(const std::vector<std::string>& names,
                               const Eigen::VectorXd& est,
                               const Eigen::MatrixXd* vcov, double level) {
  ordered_json arr = ordered_json::array();
  for (int c = 0; c < est.size(); ++c) {
    std::optional<double> se;
    if (vcov) se = std::sqrt(std::max((*vcov)(c, c), 0.0));
    ordered_json b = value_block(est[c], se, level);
    ordered_json row;
    row["name"] = names[c];
    for (auto& [key, val] : b.items()) row[key] = val;
    arr.push_back(std::move(row));
  }
  return arr;
}

ordered_json ml_fit_json(const MlFit& fit,
                         const std::vector<std::string>& coef_names,
                         double level) {
  const bool glmm = fit.meta.p_fixed;
  ordered_json f;
  f["estimator"] = glmm ? "GLMM" : "ML";
  f["converged"] = fit.converged;
  f["iterations"] = fit.iterations;
  f["boundary"] = boundary_flag_name(fit.boundary_flag);
  f["loglik"] = fit.loglik;
  const Eigen::MatrixXd* vn =
      fit.vcov_natural ? &*fit.vcov_natural : nullptr;
  if (!glmm) {
    std::optional<double> se_p;
    if (vn) se_p = std::sqrt(std::max((*vn)(0, 0), 0.0));
    f["pr_z1"] = value_block(fit.params.p, se_p, level);
    f["structural_zero_fraction"] = 1.0 - fit.params.p;
  }
  std::optional<double> se_s;
  if (vn) se_s = std::sqrt(std::max((*vn)(1, 1), 0.0));
  f["sigma_b"] = value_block(fit.params.sigma_b.value_or(0.0), se_s, level);

  if (fit.marginal_beta) {
    f["coefficient_scale"] = "marginal";
    const Eigen::MatrixXd* mv =
        fit.marginal_vcov ? &*fit.marginal_vcov : nullptr;
    f["coefficients"] =
        coefficient_array(coef_names, *fit.marginal_beta, mv, level);
  } else {
    f["coefficient_scale"] = "conditional";
    std::optional<Eigen::MatrixXd> block;
    if (vn) {
      const int k = static_cast<int>(fit.params.coeffs.size());
      block = vn->bottomRightCorner(k, k);
    }
    f["coefficients"] = coefficient_array(
        coef_names, fit.params.coeffs, block ? &*block : nullptr, level);
  }
  return f;
}

ordered_json gee_fit_json(const GeeFit& fit,
                          const std::vector<std::string>& coef_names,
                          double level) {
  ordered_json f;
  f["estimator"] = std::string("GEE-") + correlation_kind_name(fit.kind);
  f["converged"] = fit.converged;
  f["iterations"] = fit.iterations;
  f["boundary"] = boundary_flag_name(fit.boundary_flag);
  f["ef_norm"] = fit.ef_norm;
  const Eigen::MatrixXd* v = fit.vcov ? &*fit.vcov : nullptr;
  std::optional<double> se_p;
  if (v) se_p = std::sqrt(std::max((*v)(0, 0), 0.0));
  f["pr_z1"] = value_block(fit.params.p, se_p, level);
  f["structural_zero_fraction"] = 1.0 - fit.params.p;
  if (fit.params.alpha) f["alpha"] = *fit.params.alpha;
  if (fit.params.alpha_un) {
    ordered_json rows = ordered_json::array();
    for (int j = 0; j < fit.params.alpha_un->rows(); ++j) {
      ordered_json row = ordered_json::array();
      for (int c = 0; c < fit.params.alpha_un->cols(); ++c)
        row.push_back((*fit.params.alpha_un)(j, c));
      rows.push_back(std::move(row));
    }
    f["alpha_matrix"] = std::move(rows);
  }
  f["coefficient_scale"] = "marginal";
  std::optional<Eigen::MatrixXd> block;
  if (v) {
    const int k = static_cast<int>(fit.params.coeffs.size());
    block = v->bottomRightCorner(k, k);
  }
  f["coefficients"] = coefficient_array(coef_names, fit.params.coeffs,
                                        block ? &*block : nullptr, level);
  return f;
}

ordered_json lrt_json(const LrtResult& lrt) {
  ordered_json out;
  out["lambda"] = lrt.lambda;
  out["p_value"] = lrt.p_value;
  out["loglik_mixture"] = lrt.loglik_alt;
  out["loglik_null"] = lrt.loglik_null;
  out["reference"] = "0.5*chi2(0) + 0.5*chi2(1)";
  return out;
}

ordered_json dataset_json(const ClusteredDataset& data,
                          const std::string& path) {
  ordered_json d;
  d["file"] = path;
  d["n_subjects"] = data.n_subjects();
  d["n_obs"] = data.n_obs();
  d["covariates"] = data.column_names;
  std::map<long, long> freq;
  for (const auto& s : data.subjects)
    ++freq[static_cast<long>(s.y.sum())];
  ordered_json fr = ordered_json::array();
  for (const auto& [count, n] : freq) {
    ordered_json row;
    row["responses"] = count;
    row["n_subjects"] = n;
    fr.push_back(std::move(row));
  }
  d["response_count_frequencies"] = std::move(fr);
  return d;
}

ordered_json identifiability_json(const IdentifiabilityReport& rep) {
  ordered_json out;
  out["identified"] = rep.identified;
  out["continuous_covariate"] = rep.has_continuous;
  out["n_distinct_patterns"] = rep.n_distinct_patterns;
  out["messages"] = rep.messages;
  return out;
}

// --------------------------------------------------------- text output ----

void render_value_line(std::ostream& os, const std::string& label,
                       const ordered_json& block, double level) {
  os << "  " << label;
  for (size_t i = label.size(); i < 22; ++i) os << ' ';
  os << format_fixed(block["estimate"].get<double>(), 10, 4);
  if (!block["se"].is_null()) {
    os << "  (se " << format_fixed(block["se"].get<double>(), 0, 4) << ", "
       << format_fixed(100.0 * level, 0, 0) << "% CI "
       << format_fixed(block["ci_lower"].get<double>(), 0, 4) << " to "
       << format_fixed(block["ci_upper"].get<double>(), 0, 4) << ")";
  }
  os << "\n";
}

void render_fit_text(std::ostream& os, const ordered_json& doc,
                     double level) {
  const auto& data = doc["data"];
  os << "zero-inflated clustered binary fit\n";
  os << "data: " << data["file"].get<std::string>()
     << "  subjects: " << data["n_subjects"]
     << "  observations: " << data["n_obs"] << "\n";
  os << "responses per subject:";
  for (const auto& row : data["response_count_frequencies"])
    os << "  " << row["responses"] << ":" << row["n_subjects"];
  os << "\n";
  const auto& ident = doc["identifiability"];
  os << "identifiability: "
     << (ident["identified"].get<bool>() ? "ok" : "warning") << "\n";
  for (const auto& m : ident["messages"])
    os << "  " << m.get<std::string>() << "\n";

  for (const auto& f : doc["fits"]) {
    os << "\n[" << f["estimator"].get<std::string>() << "]  "
       << (f["converged"].get<bool>() ? "converged" : "NOT CONVERGED")
       << " in " << f["iterations"] << " iterations";
    if (f.contains("loglik"))
      os << ", log-likelihood " << format_fixed(f["loglik"].get<double>(), 0, 4);
    const std::string boundary = f["boundary"].get<std::string>();
    if (boundary != "none") os << ", boundary: " << boundary;
    os << "\n";
    if (f.contains("pr_z1")) {
      render_value_line(os, "Pr(Z=1)", f["pr_z1"], level);
      os << "  structural zeros      "
         << format_fixed(f["structural_zero_fraction"].get<double>(), 10, 4)
         << "\n";
    }
    if (f.contains("sigma_b")) render_value_line(os, "sigma_b", f["sigma_b"], level);
    if (f.contains("alpha"))
      os << "  alpha                 "
         << format_fixed(f["alpha"].get<double>(), 10, 4) << "\n";
    os << "  coefficients (" << f["coefficient_scale"].get<std::string>()
       << " scale):\n";
    for (const auto& c : f["coefficients"])
      render_value_line(os, "  " + c["name"].get<std::string>(), c, level);
  }
  if (doc.contains("lrt")) {
    const auto& l = doc["lrt"];
    os << "\nzero-inflation LRT: lambda = "
       << format_fixed(l["lambda"].get<double>(), 0, 4)
       << ", p = " << format_fixed(l["p_value"].get<double>(), 0, 6)
       << "  (half chi-square(1), half point mass at 0)\n";
  }
}

void render_sim_text(std::ostream& os, const ordered_json& doc) {
  const auto& d = doc["design"];
  os << "simulation: " << d["replications"] << " replications, "
     << d["n_subjects"] << " subjects x " << d["n_questions"]
     << " questions, sigma_b = " << d["sigma_b"] << ", Pr(Z=1) = " << d["p"]
     << ", seed " << d["seed"]
     << (d["misspecified"].get<bool>() ? ", misspecified correlation" : "")
     << "\n";
  for (const auto& e : doc["results"]) {
    os << "\n" << e["estimator"].get<std::string>() << "  (used "
       << e["n_used"] << ", boundary " << e["n_boundary"] << ", failed "
       << e["n_failed"] << ")\n";
    os << "  parameter        true      mean        sd   mean-se  coverage\n";
    for (const auto& p : e["parameters"]) {
      const std::string name = p["name"].get<std::string>();
      os << "  " << name;
      for (size_t i = name.size(); i < 12; ++i) os << ' ';
      os << format_fixed(p["true"].get<double>(), 9, 3);
      for (const char* key : {"mean", "sd", "mean_se", "coverage"}) {
        if (p[key].is_null())
          os << "         .";
        else
          os << format_fixed(p[key].get<double>(), 10, 3);
      }
      os << "\n";
    }
  }
}

// ------------------------------------------------------------ commands ----

struct CommonFitArgs {
  std::string data_path;
  std::string outcome = "y";
  std::string id = "id";
  std::string question = "question";
  std::vector<std::string> covariates;
  std::vector<std::string> interactions;
  bool no_intercept = false;
  int quad_points = 20;
  std::string link = "probit";
  double ci_level = 0.95;
  int max_iterations = 0;  // 0 keeps the estimator defaults
  std::string format = "json";
  std::string output = "-";
};

struct FitArgs : CommonFitArgs {
  std::string estimator = "ml";
  bool with_lrt = false;
};

struct SimArgs {
  std::string preset;
  std::string design_file;
  int reps = -1;
  long long seed = -1;
  int threads = 0;
  std::string estimators;
  std::string format = "json";
  std::string output = "-";
};

CsvSchema schema_from(const CommonFitArgs& a) {
  CsvSchema schema;
  schema.outcome = a.outcome;
  schema.id = a.id;
  schema.question = a.question;
  schema.covariates = a.covariates;
  schema.intercept = !a.no_intercept;
  for (const std::string& spec : a.interactions) {
    const auto pos = spec.find(':');
    if (pos == std::string::npos || pos == 0 || pos + 1 == spec.size() ||
        spec.find(':', pos + 1) != std::string::npos)
      fail(ErrorCode::ParseError,
           "interaction '" + spec + "' must have the form colA:colB");
    schema.interactions.emplace_back(spec.substr(0, pos),
                                     spec.substr(pos + 1));
  }
  return schema;
}

LinkKind parse_link(const std::string& name) {
  if (name == "probit") return LinkKind::Probit;
  if (name == "logit") return LinkKind::Logit;
  fail(ErrorCode::UnsupportedLink,
       "link '" + name + "' is not supported (probit, logit)");
}

std::vector<EstimatorKind> parse_estimator_list(const std::string& spec) {
  std::vector<EstimatorKind> kinds;
  for (const std::string& raw : split_fields(spec, ',')) {
    std::string token;
    for (char c : raw) token.push_back(static_cast<char>(std::tolower(c)));
    if (token.empty()) continue;
    if (token == "all") {
      return {EstimatorKind::Ml,    EstimatorKind::Glmm,
              EstimatorKind::GeeMI, EstimatorKind::GeeCI,
              EstimatorKind::GeeME, EstimatorKind::GeeCE,
              EstimatorKind::GeeUN};
    }
    kinds.push_back(parse_estimator_kind(token));
  }
  if (kinds.empty())
    fail(ErrorCode::UnknownEstimator, "empty estimator list");
  return kinds;
}

void write_output(const std::string& output, const std::string& body) {
  if (output == "-" || output.empty()) {
    std::cout << body;
    return;
  }
  std::ofstream out(output);
  if (!out)
    fail(ErrorCode::ParseError, "cannot open '" + output + "' for writing");
  out << body;
}

void emit(const ordered_json& doc, const std::string& format,
          const std::string& output, double level) {
  if (format == "json") {
    write_output(output, doc.dump(2) + "\n");
    return;
  }
  std::ostringstream os;
  if (doc["command"] == "simulate")
    render_sim_text(os, doc);
  else
    render_fit_text(os, doc, level);
  write_output(output, os.str());
}

int run_fit(const FitArgs& args, bool lrt_only) {
  const LinkKind link = parse_link(args.link);
  const ClusteredDataset data = read_long_csv(args.data_path,
                                              schema_from(args));
  const QuadratureRule rule = gauss_hermite(args.quad_points);
  std::vector<EstimatorKind> kinds =
      lrt_only ? std::vector<EstimatorKind>{EstimatorKind::Ml,
                                            EstimatorKind::Glmm}
               : parse_estimator_list(args.estimator);
  const bool want_lrt = args.with_lrt || lrt_only;
  if (want_lrt) {
    for (EstimatorKind need : {EstimatorKind::Ml, EstimatorKind::Glmm})
      if (std::find(kinds.begin(), kinds.end(), need) == kinds.end())
        kinds.push_back(need);
  }

  ordered_json doc;
  doc["command"] = lrt_only ? "lrt" : "fit";
  doc["data"] = dataset_json(data, args.data_path);
  doc["settings"] = {{"link", args.link},
                     {"quad_points", args.quad_points},
                     {"ci_level", args.ci_level}};
  doc["identifiability"] = identifiability_json(identifiability_check(data));

  MlOptions ml_options;
  GeeOptions gee_options;
  if (args.max_iterations > 0) {
    ml_options.max_iterations = args.max_iterations;
    gee_options.max_iterations = args.max_iterations;
  }

  std::optional<MlFit> ml_fit_cache, glmm_fit_cache;
  ordered_json fits = ordered_json::array();
  for (EstimatorKind kind : kinds) {
    switch (kind) {
      case EstimatorKind::Ml:
        ml_fit_cache = fit_ml(data, link, rule, {}, ml_options);
        fits.push_back(
            ml_fit_json(*ml_fit_cache, data.column_names, args.ci_level));
        break;
      case EstimatorKind::Glmm:
        glmm_fit_cache = fit_glmm(data, link, rule, {}, ml_options);
        fits.push_back(
            ml_fit_json(*glmm_fit_cache, data.column_names, args.ci_level));
        break;
      default: {
        if (link != LinkKind::Probit)
          fail(ErrorCode::UnsupportedLink,
               "marginal estimators require the probit link");
        CorrelationKind ck = CorrelationKind::MI;
        switch (kind) {
          case EstimatorKind::GeeMI: ck = CorrelationKind::MI; break;
          case EstimatorKind::GeeCI: ck = CorrelationKind::CI; break;
          case EstimatorKind::GeeME: ck = CorrelationKind::ME; break;
          case EstimatorKind::GeeCE: ck = CorrelationKind::CE; break;
          default: ck = CorrelationKind::UN; break;
        }
        const GeeFit fit = fit_gee(data, ck, {}, gee_options);
        fits.push_back(gee_fit_json(fit, data.column_names, args.ci_level));
        break;
      }
    }
  }
  doc["fits"] = std::move(fits);
  if (want_lrt)
    doc["lrt"] = lrt_json(lrt_zero_inflation(*ml_fit_cache, *glmm_fit_cache));

  emit(doc, args.format, args.output, args.ci_level);
  return 0;
}

SimDesign preset_design(const std::string& name) {
  SimDesign d;
  d.gamma.resize(6);
  d.gamma << 0.0, 1.0, -0.5, -0.4, 0.2, 0.4;
  d.estimators = {EstimatorKind::Ml,    EstimatorKind::Glmm,
                  EstimatorKind::GeeMI, EstimatorKind::GeeCI,
                  EstimatorKind::GeeME, EstimatorKind::GeeCE,
                  EstimatorKind::GeeUN};
  if (name == "table1") {
    d.sigma_b = 0.5;
  } else if (name == "table2") {
    d.sigma_b = 1.5;
  } else if (name == "table3") {
    d.sigma_b = 0.5;
    d.misspecified = true;
  } else if (name == "table4") {
    d.sigma_b = 1.5;
    d.misspecified = true;
  } else {
    fail(ErrorCode::InvalidDesign,
         "unknown preset '" + name + "' (table1, table2, table3, table4)");
  }
  return d;
}

SimDesign design_from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::ParseError, "cannot open '" + path + "'");
  ordered_json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError,
         "design file '" + path + "': " + e.what());
  }
  SimDesign d;
  d.estimators = {EstimatorKind::Ml,    EstimatorKind::Glmm,
                  EstimatorKind::GeeMI, EstimatorKind::GeeCI,
                  EstimatorKind::GeeME, EstimatorKind::GeeCE,
                  EstimatorKind::GeeUN};
  try {
    for (const auto& [key, val] : j.items()) {
      if (key == "n_subjects") d.n_subjects = val.get<int>();
      else if (key == "n_questions") d.n_questions = val.get<int>();
      else if (key == "gamma") {
        const auto v = val.get<std::vector<double>>();
        d.gamma = Eigen::Map<const Eigen::VectorXd>(v.data(), v.size());
      } else if (key == "sigma_b") d.sigma_b = val.get<double>();
      else if (key == "p") d.p = val.get<double>();
      else if (key == "misspecified") d.misspecified = val.get<bool>();
      else if (key == "seed") d.seed = val.get<std::uint64_t>();
      else if (key == "replications") d.replications = val.get<int>();
      else if (key == "quad_points") d.quad_points = val.get<int>();
      else if (key == "ci_level") d.ci_level = val.get<double>();
      else if (key == "estimators") {
        d.estimators.clear();
        for (const auto& name : val)
          d.estimators.push_back(
              parse_estimator_kind(name.get<std::string>()));
      } else {
        fail(ErrorCode::InvalidDesign,
             "unknown design key '" + key + "' in '" + path + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::InvalidDesign,
         "design file '" + path + "': " + e.what());
  }
  if (d.gamma.size() == 0)
    fail(ErrorCode::InvalidDesign,
         "design file '" + path + "' must set gamma");
  return d;
}

ordered_json sim_report_json(const SimulationReport& report, int threads) {
  (void)threads;  // results are independent of the thread count by design
  const SimDesign& d = report.design;
  ordered_json doc;
  doc["command"] = "simulate";
  ordered_json dj;
  dj["n_subjects"] = d.n_subjects;
  dj["n_questions"] = d.n_questions;
  dj["gamma"] = std::vector<double>(d.gamma.data(),
                                    d.gamma.data() + d.gamma.size());
  dj["sigma_b"] = d.sigma_b;
  dj["p"] = d.p;
  dj["misspecified"] = d.misspecified;
  dj["seed"] = d.seed;
  dj["replications"] = d.replications;
  dj["quad_points"] = d.quad_points;
  dj["ci_level"] = d.ci_level;
  std::vector<std::string> names;
  for (EstimatorKind kind : d.estimators)
    names.emplace_back(estimator_kind_name(kind));
  dj["estimators"] = names;
  doc["design"] = std::move(dj);

  ordered_json results = ordered_json::array();
  for (const EstimatorSummary& e : report.estimators) {
    ordered_json ej;
    ej["estimator"] = estimator_kind_name(e.kind);
    ej["n_used"] = e.n_used;
    ej["n_boundary"] = e.n_boundary;
    ej["n_failed"] = e.n_failed;
    ordered_json params = ordered_json::array();
    for (const ParamSummary& p : e.params) {
      ordered_json pj;
      pj["name"] = p.name;
      pj["true"] = p.truth;
      if (e.n_used > 0) {
        pj["mean"] = p.mean;
        pj["sd"] = p.has_sd ? ordered_json(p.sd) : ordered_json(nullptr);
        pj["mean_se"] = p.mean_se;
        pj["coverage"] = p.coverage;
      } else {
        pj["mean"] = nullptr;
        pj["sd"] = nullptr;
        pj["mean_se"] = nullptr;
        pj["coverage"] = nullptr;
      }
      params.push_back(std::move(pj));
    }
    ej["parameters"] = std::move(params);
    results.push_back(std::move(ej));
  }
  doc["results"] = std::move(results);
  return doc;
}

int run_simulate(const SimArgs& args) {
  if (args.preset.empty() == args.design_file.empty())
    fail(ErrorCode::InvalidDesign,
         "exactly one of --preset and --design is required");
  SimDesign design = args.preset.empty() ? design_from_file(args.design_file)
                                         : preset_design(args.preset);
  if (args.reps > 0) design.replications = args.reps;
  if (args.seed >= 0) design.seed = static_cast<std::uint64_t>(args.seed);
  if (!args.estimators.empty())
    design.estimators = parse_estimator_list(args.estimators);
  int threads = args.threads;
  if (threads <= 0) {
    if (const char* env = std::getenv("ZIB_THREADS"))
      threads = std::atoi(env);
    if (threads <= 0) threads = 1;
  }
  const SimulationReport report = run_replications(design, threads);
  emit(sim_report_json(report, threads), args.format, args.output,
       design.ci_level);
  return 0;
}

ordered_json params_json(const ParameterSet& params) {
  ordered_json out;
  out["p"] = params.p;
  out["sigma_b"] =
      params.sigma_b ? ordered_json(*params.sigma_b) : ordered_json(nullptr);
  out["coeffs"] = std::vector<double>(
      params.coeffs.data(), params.coeffs.data() + params.coeffs.size());
  if (params.alpha) out["alpha"] = *params.alpha;
  return out;
}

bool estimation_failure(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonConvergence:
    case ErrorCode::SingularHessian:
    case ErrorCode::SingularBread:
    case ErrorCode::NonPDWorkingCorrelation:
    case ErrorCode::NegativeLambda:
    case ErrorCode::BoundarySolution:
      return true;
    default:
      return false;
  }
}

int report_error(const Error& e, const ParameterSet* last_iterate) {
  ordered_json doc;
  doc["error"] = {{"code", error_code_name(e.code())},
                  {"message", e.what()}};
  if (last_iterate) doc["error"]["last_iterate"] = params_json(*last_iterate);
  std::cerr << doc.dump(2) << "\n";
  return estimation_failure(e.code()) ? 2 : 1;
}

}  // namespace

ClusteredDataset read_long_csv(const std::string& path,
                               const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::ParseError, "cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line))
    fail(ErrorCode::ParseError, "'" + path + "' is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string> header = split_fields(line, ',');

  const int outcome_idx = column_index(header, schema.outcome, path);
  const int id_idx = column_index(header, schema.id, path);
  const int question_idx = column_index(header, schema.question, path);
  std::vector<int> cov_idx;
  for (const std::string& name : schema.covariates)
    cov_idx.push_back(column_index(header, name, path));
  std::vector<std::pair<int, int>> inter_idx;
  for (const auto& [a, b] : schema.interactions)
    inter_idx.emplace_back(column_index(header, a, path),
                           column_index(header, b, path));

  struct Row {
    long question;
    double y;
    std::vector<double> x;
  };
  std::vector<std::string> order;
  std::unordered_map<std::string, size_t> by_id;
  std::vector<std::vector<Row>> rows;
  std::vector<std::map<long, long>> seen_questions;

  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> fields = split_fields(line, ',');
    if (fields.size() != header.size())
      fail(ErrorCode::ParseError,
           "line " + std::to_string(line_no) + ": expected " +
               std::to_string(header.size()) + " fields, got " +
               std::to_string(fields.size()));
    const std::string& id = fields[id_idx];
    if (id.empty())
      fail(ErrorCode::ParseError,
           "line " + std::to_string(line_no) + ": empty subject id");
    Row row;
    row.question = parse_question_field(fields[question_idx], line_no);
    row.y = parse_double_field(fields[outcome_idx], line_no, schema.outcome);
    if (schema.intercept) row.x.push_back(1.0);
    for (size_t c = 0; c < cov_idx.size(); ++c)
      row.x.push_back(parse_double_field(fields[cov_idx[c]], line_no,
                                         schema.covariates[c]));
    for (size_t c = 0; c < inter_idx.size(); ++c) {
      const double a = parse_double_field(fields[inter_idx[c].first], line_no,
                                          schema.interactions[c].first);
      const double b = parse_double_field(fields[inter_idx[c].second],
                                          line_no,
                                          schema.interactions[c].second);
      row.x.push_back(a * b);
    }

    auto [it, inserted] = by_id.try_emplace(id, order.size());
    if (inserted) {
      order.push_back(id);
      rows.emplace_back();
      seen_questions.emplace_back();
    }
    const size_t s = it->second;
    auto [qit, fresh] = seen_questions[s].try_emplace(row.question, line_no);
    if (!fresh)
      fail(ErrorCode::ParseError,
           "line " + std::to_string(line_no) + ": duplicate row for subject '" +
               id + "', question " + std::to_string(row.question) +
               " (first seen at line " + std::to_string(qit->second) + ")");
    rows[s].push_back(std::move(row));
  }

  ClusteredDataset data;
  data.has_intercept = schema.intercept;
  if (schema.intercept) data.column_names.push_back("(Intercept)");
  for (const std::string& name : schema.covariates)
    data.column_names.push_back(name);
  for (const auto& [a, b] : schema.interactions)
    data.column_names.push_back(a + ":" + b);
  const int k = static_cast<int>(data.column_names.size());

  data.subjects.reserve(order.size());
  for (size_t s = 0; s < order.size(); ++s) {
    std::sort(rows[s].begin(), rows[s].end(),
              [](const Row& a, const Row& b) { return a.question < b.question; });
    SubjectRecord rec;
    rec.id = order[s];
    const int j_n = static_cast<int>(rows[s].size());
    rec.y.resize(j_n);
    rec.x.resize(j_n, k);
    for (int j = 0; j < j_n; ++j) {
      rec.y[j] = rows[s][j].y;
      for (int c = 0; c < k; ++c) rec.x(j, c) = rows[s][j].x[c];
    }
    data.subjects.push_back(std::move(rec));
  }
  validate_dataset(data);
  return data;
}

void write_long_csv(const ClusteredDataset& data, const std::string& path) {
  validate_dataset(data);
  std::ofstream out(path);
  if (!out)
    fail(ErrorCode::ParseError, "cannot open '" + path + "' for writing");
  const int first = data.has_intercept ? 1 : 0;
  const int k = data.n_covariates();
  std::string buf = "id,question,y";
  for (int c = first; c < k; ++c) {
    buf += ',';
    buf += data.column_names[c];
  }
  buf += '\n';
  for (const auto& s : data.subjects) {
    for (Eigen::Index j = 0; j < s.y.size(); ++j) {
      buf += s.id;
      buf += ',';
      buf += std::to_string(j + 1);
      buf += ',';
      format_double(buf, s.y[j]);
      for (int c = first; c < k; ++c) {
        buf += ',';
        format_double(buf, s.x(j, c));
      }
      buf += '\n';
    }
    out << buf;
    buf.clear();
  }
}

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"zero-inflated clustered binary response models"};
  app.require_subcommand(1);

  FitArgs fit_args;
  CLI::App* fit = app.add_subcommand(
      "fit", "fit one or more estimators to a long-format CSV");
  CLI::App* lrt = app.add_subcommand(
      "lrt", "boundary-corrected likelihood-ratio test for zero inflation");
  for (CLI::App* sub : {fit, lrt}) {
    sub->add_option("--data", fit_args.data_path, "long-format CSV file")
        ->required();
    sub->add_option("--outcome", fit_args.outcome, "binary outcome column");
    sub->add_option("--id", fit_args.id, "subject id column");
    sub->add_option("--question", fit_args.question,
                    "question index column (positive integers)");
    sub->add_option("--covariates", fit_args.covariates,
                    "covariate columns (comma separated)")
        ->delimiter(',');
    sub->add_option("--interactions", fit_args.interactions,
                    "product columns, each colA:colB (comma separated)")
        ->delimiter(',');
    sub->add_flag("--no-intercept", fit_args.no_intercept,
                  "do not prepend an intercept column");
    sub->add_option("--quad-points", fit_args.quad_points,
                    "Gauss-Hermite nodes for the random intercept");
    sub->add_option("--link", fit_args.link, "probit or logit");
    sub->add_option("--ci-level", fit_args.ci_level,
                    "confidence level for reported intervals");
    sub->add_option("--max-iterations", fit_args.max_iterations,
                    "iteration cap for the estimators (0 = defaults)");
    sub->add_option("--format", fit_args.format, "json or text")
        ->check(CLI::IsMember({"json", "text"}));
    sub->add_option("--output", fit_args.output,
                    "output file ('-' for stdout)");
  }
  fit->add_option("--estimator", fit_args.estimator,
                  "ml, glmm, gee-mi, gee-ci, gee-me, gee-ce, gee-un, all, or "
                  "a comma-separated list");
  fit->add_flag("--with-lrt", fit_args.with_lrt,
                "add the zero-inflation likelihood-ratio test");

  SimArgs sim_args;
  CLI::App* sim = app.add_subcommand(
      "simulate", "Monte Carlo study of the estimators on synthetic data");
  sim->add_option("--preset", sim_args.preset,
                  "table1|table2|table3|table4 study designs");
  sim->add_option("--design", sim_args.design_file, "design JSON file");
  sim->add_option("--reps", sim_args.reps, "number of replications");
  sim->add_option("--seed", sim_args.seed, "base RNG seed");
  sim->add_option("--threads", sim_args.threads,
                  "worker threads (default: ZIB_THREADS or 1)");
  sim->add_option("--estimators", sim_args.estimators,
                  "comma-separated estimator subset");
  sim->add_option("--format", sim_args.format, "json or text")
      ->check(CLI::IsMember({"json", "text"}));
  sim->add_option("--output", sim_args.output, "output file ('-' for stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (fit->parsed()) return run_fit(fit_args, false);
    if (lrt->parsed()) return run_fit(fit_args, true);
    return run_simulate(sim_args);
  } catch (const MlNonConvergence& e) {
    return report_error(e, &e.last_iterate.params);
  } catch (const GeeNonConvergence& e) {
    return report_error(e, &e.last_iterate.params);
  } catch (const Error& e) {
    return report_error(e, nullptr);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace zicb
