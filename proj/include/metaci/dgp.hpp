#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "metaci/matrix.hpp"
#include "metaci/rng.hpp"

namespace metaci {

using json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

struct DatasetMeta {
  std::string dgp_id;
  std::uint64_t seed = 0;
  std::uint64_t stream_id = 0;
  json params;  // parameter snapshot at generation time
};

// Feature matrix, binary treatments, factual outcomes, and the hidden
// ground-truth potential-outcome means that oracle evaluation reads.
struct Dataset {
  Matrix X;                 // N x p
  std::vector<int> t;       // 0/1
  std::vector<double> y;    // factual outcome, sampled under t[i]
  std::vector<double> mu0;  // ground-truth untreated mean (may be empty)
  std::vector<double> mu1;  // ground-truth treated mean (may be empty)
  DatasetMeta meta;

  std::size_t n() const { return X.rows(); }
  std::size_t p() const { return X.cols(); }
  bool has_ground_truth() const {
    return mu0.size() == n() && mu1.size() == n() && n() > 0;
  }
};

inline void validate_dataset(const Dataset& ds) {
  const std::size_t n = ds.n();
  if (ds.t.size() != n || ds.y.size() != n) {
    throw std::invalid_argument("Dataset: vector lengths disagree with X rows");
  }
  for (int ti : ds.t) {
    if (ti != 0 && ti != 1) throw std::invalid_argument("Dataset: t entries must be 0/1");
  }
}

// Mean ground-truth ITE over rows.
inline double ground_truth_ate(const Dataset& ds) {
  if (!ds.has_ground_truth()) {
    throw std::invalid_argument("ground_truth_ate: dataset has no mu0/mu1 columns");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < ds.n(); ++i) acc += ds.mu1[i] - ds.mu0[i];
  return acc / static_cast<double>(ds.n());
}

// ---------------------------------------------------------------------------
// Basis registry for the advertisement DGP
// ---------------------------------------------------------------------------

struct BasisFunction {
  std::string name;
  std::function<double(double)> fn;
};

// Ten mean-centered scalar nonlinearities. f1..f5 drive the treatment score,
// f6..f10 drive the outcome surface; all have E[f(q)] = 0 under q ~ N(0,1)
// via the closed-form centering constants noted per entry.
struct BasisRegistry {
  std::array<BasisFunction, 10> entries;

  double operator()(std::size_t j, double x) const { return entries[j].fn(x); }

  json names() const {
    json a = json::array();
    for (const auto& e : entries) a.push_back(e.name);
    return a;
  }
};

inline BasisRegistry default_basis_registry() {
  const double e_exp = std::exp(0.5);                     // E[e^-q]
  const double e_cos = std::exp(-0.5);                    // E[cos q]
  const double e_abs = std::sqrt(2.0 / std::numbers::pi); // E|q|
  const double e_relu = 1.0 / std::sqrt(2.0 * std::numbers::pi);  // E[q^+]
  return BasisRegistry{{{
      {"-2*sin(2x)", [](double x) { return -2.0 * std::sin(2.0 * x); }},
      {"x^2-1", [](double x) { return x * x - 1.0; }},
      {"x", [](double x) { return x; }},
      // exp and shifted-quadratic entries carry a 0.5 damping: at full
      // strength their skew drags the treated fraction below 0.45.
      {"0.5*(exp(-x)-e^0.5)", [=](double x) { return 0.5 * (std::exp(-x) - e_exp); }},
      {"0.5*((x-0.5)^2-1.25)", [](double x) { return 0.5 * ((x - 0.5) * (x - 0.5) - 1.25); }},
      {"cos(x)-e^-0.5", [=](double x) { return std::cos(x) - e_cos; }},
      {"0.5*x*|x|", [](double x) { return 0.5 * x * std::abs(x); }},
      {"|x|-sqrt(2/pi)", [=](double x) { return std::abs(x) - e_abs; }},
      {"tanh(2x)", [](double x) { return std::tanh(2.0 * x); }},
      {"relu(x)-1/sqrt(2pi)", [=](double x) { return std::max(x, 0.0) - e_relu; }},
  }}};
}

// ---------------------------------------------------------------------------
// Advertisement DGP
// ---------------------------------------------------------------------------

struct AdDgpParams {
  std::size_t sample_count = 2000;
  std::size_t feature_count = 10;  // q1..q5 confound, the rest are noise
  double eta = 1.0;                // additive treatment effect
  double theta = 1.0;              // outcome noise standard deviation
  BasisRegistry basis = default_basis_registry();

  void validate() const {
    if (sample_count < 20) throw std::invalid_argument("AdDgpParams: sample_count < 20");
    if (feature_count < 5) {
      throw std::invalid_argument("AdDgpParams: feature_count < 5 (q1..q5 confound)");
    }
    if (!(theta > 0.0)) throw std::invalid_argument("AdDgpParams: theta must be > 0");
  }

  json snapshot() const {
    return json{{"kind", "ad"},
                {"sample_count", sample_count},
                {"feature_count", feature_count},
                {"eta", eta},
                {"theta", theta},
                {"basis", basis.names()}};
  }
};

namespace detail {
// Substream tags: features / treatment noise / outcome noise are drawn from
// separate child streams so that outcome parameters never perturb X or t.
inline constexpr std::uint64_t kStreamFeatures = 1;
inline constexpr std::uint64_t kStreamTreatment = 2;
inline constexpr std::uint64_t kStreamOutcome = 3;

inline double ad_treatment_score(const AdDgpParams& p, const double* row) {
  double s = 0.0;
  for (std::size_t j = 0; j < 5; ++j) s += p.basis(j, row[j]);
  return s;
}

inline double ad_outcome_base(const AdDgpParams& p, const double* row) {
  double b = 0.0;
  for (std::size_t j = 0; j < 5; ++j) b += p.basis(j + 5, row[j]);
  return b;
}
}  // namespace detail

// Outcomes regenerated on fixed (X, t); used both by full generation and by
// the concept-shift path where tasks re-draw y under their own DGP.
struct Outcomes {
  std::vector<double> y, mu0, mu1;
};

inline Outcomes ad_outcomes_for(const AdDgpParams& params, const Matrix& X,
                                const std::vector<int>& t, RngStream rng) {
  params.validate();
  if (X.cols() != params.feature_count) {
    throw std::invalid_argument("ad_outcomes_for: feature count mismatch");
  }
  const std::size_t n = X.rows();
  if (t.size() != n) throw std::invalid_argument("ad_outcomes_for: t length mismatch");
  Outcomes out;
  out.y.resize(n);
  out.mu0.resize(n);
  out.mu1.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double b = detail::ad_outcome_base(params, X.row_ptr(i));
    out.mu0[i] = b;
    out.mu1[i] = b + params.eta;
    const double mu = t[i] == 1 ? out.mu1[i] : out.mu0[i];
    out.y[i] = mu + params.theta * rng.normal();
  }
  return out;
}

// X has iid N(0,1) entries; t_i = 1 iff a draw from N(score_i, 1) > 0 with
// score_i = f1(q_i1)+..+f5(q_i5); y_i ~ N(base_i + eta*t_i, theta) with
// base_i = f6(q_i1)+..+f10(q_i5). Features q6.. contribute nothing.
inline Dataset generate_ad_dataset(const AdDgpParams& params, RngStream rng) {
  params.validate();
  const std::size_t n = params.sample_count;
  const std::size_t p = params.feature_count;

  Dataset ds;
  ds.meta = DatasetMeta{"ad", rng.seed(), rng.stream_id(), params.snapshot()};

  RngStream feat = rng.child(detail::kStreamFeatures);
  ds.X = Matrix(n, p);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < p; ++j) ds.X(i, j) = feat.normal();

  RngStream treat = rng.child(detail::kStreamTreatment);
  ds.t.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double score = detail::ad_treatment_score(params, ds.X.row_ptr(i));
    ds.t[i] = (score + treat.normal() > 0.0) ? 1 : 0;
  }

  Outcomes oc = ad_outcomes_for(params, ds.X, ds.t, rng.child(detail::kStreamOutcome));
  ds.y = std::move(oc.y);
  ds.mu0 = std::move(oc.mu0);
  ds.mu1 = std::move(oc.mu1);
  return ds;
}

// ---------------------------------------------------------------------------
// IHDP-style DGP (parameterized heteroskedastic additive stand-in)
// ---------------------------------------------------------------------------

// Stand-in feature columns, in order:
//   momage      uniform integer in [15, 45]
//   bilirubin   lognormal exp(1 + 0.5 z)
//   birthplace  uniform integer in {0..4}
//   x4..x8      standard normal
// Each feature enters the surface through a documented standardization
// (see ihdp_standardize) followed by an alternating linear / centered-square
// term weighted by surface_coefficients.
inline const std::array<const char*, 8>& ihdp_column_names() {
  static const std::array<const char*, 8> names = {
      "momage", "bilirubin", "birthplace", "x4", "x5", "x6", "x7", "x8"};
  return names;
}

struct IhdpDgpParams {
  std::optional<std::string> csv_path;  // measured features; stand-in when absent
  std::size_t sample_count = 1144;      // stand-in rows when no CSV is given
  double tau = 4.0;                     // constant treatment effect
  std::array<double, 8> surface_coefficients = {0.8, -0.6, 0.5, 0.7, -0.4, 0.3, 0.6, -0.5};
  double noise_scale = 1.0;             // 0 gives the noiseless limit
  std::array<double, 8> noise_logit_coefficients = {0.25, 0.25, 0.25, 0.25, 0.25, 0.25, 0.25, 0.25};
  std::array<double, 8> treatment_logit_coefficients = {0.6, -0.5, 0.4, 0.0, 0.0, 0.0, 0.0, 0.0};
  double treatment_logit_intercept = 0.0;

  static constexpr std::size_t kFeatureCount = 8;

  void validate() const {
    if (!csv_path && sample_count < 20) {
      throw std::invalid_argument("IhdpDgpParams: sample_count < 20");
    }
    if (noise_scale < 0.0) {
      throw std::invalid_argument("IhdpDgpParams: noise_scale must be >= 0");
    }
  }

  json snapshot() const {
    return json{{"kind", "ihdp"},
                {"source", csv_path ? *csv_path : "synthetic-stand-in"},
                {"sample_count", sample_count},
                {"tau", tau},
                {"surface_coefficients", surface_coefficients},
                {"noise_scale", noise_scale},
                {"noise_logit_coefficients", noise_logit_coefficients},
                {"treatment_logit_coefficients", treatment_logit_coefficients},
                {"treatment_logit_intercept", treatment_logit_intercept}};
  }
};

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double ihdp_standardize(std::size_t j, double x) {
  switch (j) {
    case 0: return (x - 30.0) / 9.0;          // momage
    case 1: return (std::log(x) - 1.0) / 0.5; // bilirubin
    case 2: return (x - 2.0) / 1.5;           // birthplace
    default: return x;                        // already standard normal
  }
}

inline double ihdp_surface(const IhdpDgpParams& p, const double* row) {
  double s = 0.0;
  for (std::size_t j = 0; j < IhdpDgpParams::kFeatureCount; ++j) {
    const double u = ihdp_standardize(j, row[j]);
    const double term = (j % 2 == 0) ? u : (u * u - 1.0);
    s += p.surface_coefficients[j] * term;
  }
  return s;
}

// Heteroskedastic noise sd: noise_scale * (0.5 + 0.5 * sigmoid(w . u)),
// bounded in noise_scale * (0.5, 1.0).
inline double ihdp_noise_sd(const IhdpDgpParams& p, const double* row) {
  double s = 0.0;
  for (std::size_t j = 0; j < IhdpDgpParams::kFeatureCount; ++j) {
    s += p.noise_logit_coefficients[j] * ihdp_standardize(j, row[j]);
  }
  return p.noise_scale * (0.5 + 0.5 * sigmoid(s));
}

inline double ihdp_treatment_prob(const IhdpDgpParams& p, const double* row) {
  double s = p.treatment_logit_intercept;
  for (std::size_t j = 0; j < IhdpDgpParams::kFeatureCount; ++j) {
    s += p.treatment_logit_coefficients[j] * ihdp_standardize(j, row[j]);
  }
  return sigmoid(s);
}

}  // namespace detail

inline Outcomes ihdp_outcomes_for(const IhdpDgpParams& params, const Matrix& X,
                                  const std::vector<int>& t, RngStream rng) {
  params.validate();
  if (X.cols() != IhdpDgpParams::kFeatureCount) {
    throw std::invalid_argument("ihdp_outcomes_for: expected 8 feature columns");
  }
  const std::size_t n = X.rows();
  if (t.size() != n) throw std::invalid_argument("ihdp_outcomes_for: t length mismatch");
  Outcomes out;
  out.y.resize(n);
  out.mu0.resize(n);
  out.mu1.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = X.row_ptr(i);
    out.mu0[i] = detail::ihdp_surface(params, row);
    out.mu1[i] = out.mu0[i] + params.tau;
    const double mu = t[i] == 1 ? out.mu1[i] : out.mu0[i];
    out.y[i] = mu + detail::ihdp_noise_sd(params, row) * rng.normal();
  }
  return out;
}

// Case-sensitive header lookup; throws listing every missing column.
inline Matrix load_ihdp_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_ihdp_csv: cannot open " + path);

  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("load_ihdp_csv: empty file " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();

  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }

  std::array<std::ptrdiff_t, 8> col_of{};
  std::vector<std::string> missing;
  for (std::size_t j = 0; j < 8; ++j) {
    col_of[j] = -1;
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (header[c] == ihdp_column_names()[j]) {
        col_of[j] = static_cast<std::ptrdiff_t>(c);
        break;
      }
    }
    if (col_of[j] < 0) missing.push_back(ihdp_column_names()[j]);
  }
  if (!missing.empty()) {
    std::string msg = "load_ihdp_csv: missing columns:";
    for (const auto& m : missing) msg += " " + m;
    throw std::runtime_error(msg);
  }

  std::vector<std::array<double, 8>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    std::array<double, 8> r{};
    for (std::size_t j = 0; j < 8; ++j) {
      const auto c = static_cast<std::size_t>(col_of[j]);
      if (c >= cells.size()) {
        throw std::runtime_error("load_ihdp_csv: line " + std::to_string(lineno) +
                                 " has too few cells");
      }
      try {
        r[j] = std::stod(cells[c]);
      } catch (const std::exception&) {
        throw std::runtime_error("load_ihdp_csv: line " + std::to_string(lineno) +
                                 ": cannot parse '" + cells[c] + "'");
      }
    }
    rows.push_back(r);
  }
  if (rows.size() < 20) {
    throw std::runtime_error("load_ihdp_csv: fewer than 20 rows (" +
                             std::to_string(rows.size()) + ")");
  }
  Matrix X(rows.size(), 8);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < 8; ++j) X(i, j) = rows[i][j];
  return X;
}

inline Matrix generate_ihdp_features(const IhdpDgpParams& params, RngStream& rng) {
  const std::size_t n = params.sample_count;
  Matrix X(n, 8);
  for (std::size_t i = 0; i < n; ++i) {
    X(i, 0) = 15.0 + static_cast<double>(rng.uniform_below(31));
    X(i, 1) = std::exp(1.0 + 0.5 * rng.normal());
    X(i, 2) = static_cast<double>(rng.uniform_below(5));
    for (std::size_t j = 3; j < 8; ++j) X(i, j) = rng.normal();
  }
  return X;
}

inline Dataset generate_ihdp_dataset(const IhdpDgpParams& params, RngStream rng) {
  params.validate();
  Dataset ds;
  ds.meta = DatasetMeta{"ihdp", rng.seed(), rng.stream_id(), params.snapshot()};

  if (params.csv_path) {
    ds.X = load_ihdp_csv(*params.csv_path);
  } else {
    RngStream feat = rng.child(detail::kStreamFeatures);
    ds.X = generate_ihdp_features(params, feat);
  }

  RngStream treat = rng.child(detail::kStreamTreatment);
  const std::size_t n = ds.X.rows();
  ds.t.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    ds.t[i] = treat.bernoulli(detail::ihdp_treatment_prob(params, ds.X.row_ptr(i))) ? 1 : 0;
  }

  Outcomes oc = ihdp_outcomes_for(params, ds.X, ds.t, rng.child(detail::kStreamOutcome));
  ds.y = std::move(oc.y);
  ds.mu0 = std::move(oc.mu0);
  ds.mu1 = std::move(oc.mu1);
  return ds;
}

// ---------------------------------------------------------------------------
// DGP handles and concept-shift families
// ---------------------------------------------------------------------------

struct DgpHandle {
  std::string id;
  std::variant<AdDgpParams, IhdpDgpParams> params;
};

inline Dataset generate_dataset(const DgpHandle& h, RngStream rng) {
  return std::visit(
      [&](const auto& p) {
        Dataset ds = [&] {
          if constexpr (std::is_same_v<std::decay_t<decltype(p)>, AdDgpParams>) {
            return generate_ad_dataset(p, rng);
          } else {
            return generate_ihdp_dataset(p, rng);
          }
        }();
        ds.meta.dgp_id = h.id;
        return ds;
      },
      h.params);
}

inline Outcomes outcomes_for(const DgpHandle& h, const Matrix& X,
                             const std::vector<int>& t, RngStream rng) {
  return std::visit(
      [&](const auto& p) {
        if constexpr (std::is_same_v<std::decay_t<decltype(p)>, AdDgpParams>) {
          return ad_outcomes_for(p, X, t, rng);
        } else {
          return ihdp_outcomes_for(p, X, t, rng);
        }
      },
      h.params);
}

inline json params_snapshot(const DgpHandle& h) {
  return std::visit([](const auto& p) { return p.snapshot(); }, h.params);
}

// Key -> value map; keys are restricted to outcome-generation parameters so a
// family can never differ in its feature or treatment mechanism.
using ParamOverride = std::map<std::string, double>;

namespace detail {

inline void apply_override(AdDgpParams& p, const ParamOverride& ov) {
  for (const auto& [key, value] : ov) {
    if (key == "eta") {
      p.eta = value;
    } else if (key == "theta") {
      p.theta = value;
    } else {
      throw std::invalid_argument(
          "concept-shift override '" + key +
          "' is not an outcome parameter of the ad DGP (allowed: eta, theta)");
    }
  }
}

inline void apply_override(IhdpDgpParams& p, const ParamOverride& ov) {
  for (const auto& [key, value] : ov) {
    if (key == "tau") {
      p.tau = value;
    } else if (key == "noise_scale") {
      p.noise_scale = value;
    } else if (key.rfind("surface_c", 0) == 0 && key.size() == 10 &&
               key[9] >= '1' && key[9] <= '8') {
      p.surface_coefficients[static_cast<std::size_t>(key[9] - '1')] = value;
    } else {
      throw std::invalid_argument(
          "concept-shift override '" + key +
          "' is not an outcome parameter of the IHDP DGP (allowed: tau, "
          "noise_scale, surface_c1..surface_c8)");
    }
  }
}

}  // namespace detail

// Handles sharing the base feature/treatment mechanism and differing only in
// Y | T, X. Handle d gets id "<base-kind>-dgp<d>".
template <typename Params>
inline std::vector<DgpHandle> make_concept_shift_family(
    const Params& base, const std::vector<ParamOverride>& variants) {
  if (variants.size() < 2) {
    throw std::invalid_argument(
        "make_concept_shift_family: need at least 2 variants, got " +
        std::to_string(variants.size()));
  }
  const char* kind = std::is_same_v<Params, AdDgpParams> ? "ad" : "ihdp";
  std::vector<DgpHandle> handles;
  for (std::size_t d = 0; d < variants.size(); ++d) {
    Params p = base;
    detail::apply_override(p, variants[d]);
    p.validate();
    handles.push_back(DgpHandle{std::string(kind) + "-dgp" + std::to_string(d), p});
  }
  return handles;
}

// ---------------------------------------------------------------------------
// Dataset CSV export
// ---------------------------------------------------------------------------

void write_dataset_csv(const Dataset& ds, const std::string& path,
                       bool include_ground_truth);  // defined in io.hpp

}  // namespace metaci
