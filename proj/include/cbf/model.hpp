#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <array>
#include <cmath>
#include <fstream>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cbf/errors.hpp"
#include "cbf/expr.hpp"

namespace cbf {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Two-parameter extended class-kappa family: alpha(r) = k1*r (+ k3*r^3).
/// k1 > 0 guarantees strict monotonicity and alpha(0) = 0 for both flavors;
/// k1 is also the exact derivative at zero.
struct AlphaSpec {
  enum class Family { Linear, OddCubic };

  Family family = Family::Linear;
  double k1 = 1.0;
  double k3 = 0.0;

  double operator()(double r) const {
    return family == Family::Linear ? k1 * r : k1 * r + k3 * r * r * r;
  }
  double prime_at_zero() const { return k1; }
};

/// Axis-aligned sampling box bounding the safe set.
struct DomainBox {
  std::vector<std::array<double, 2>> bounds;

  int dim() const { return static_cast<int>(bounds.size()); }

  bool contains(const Vector& x, double margin = 0.0) const {
    for (int i = 0; i < dim(); ++i)
      if (x[i] < bounds[static_cast<std::size_t>(i)][0] - margin ||
          x[i] > bounds[static_cast<std::size_t>(i)][1] + margin)
        return false;
    return true;
  }

  Vector sample(std::mt19937_64& rng) const {
    Vector x(dim());
    for (int i = 0; i < dim(); ++i) {
      std::uniform_real_distribution<double> dist(
          bounds[static_cast<std::size_t>(i)][0],
          bounds[static_cast<std::size_t>(i)][1]);
      x[i] = dist(rng);
    }
    return x;
  }

  Vector center() const {
    Vector c(dim());
    for (int i = 0; i < dim(); ++i)
      c[i] = 0.5 * (bounds[static_cast<std::size_t>(i)][0] +
                    bounds[static_cast<std::size_t>(i)][1]);
    return c;
  }

  double radius() const {
    double r2 = 0.0;
    for (const auto& b : bounds) {
      const double half = 0.5 * (b[1] - b[0]);
      r2 += half * half;
    }
    return std::sqrt(r2);
  }
};

/// Control-affine dynamics xdot = f(x) + sum_i g_i(x) u_i.
struct SystemModel {
  int n = 0;
  int m = 0;
  VectorField f;
  std::vector<VectorField> g;
};

namespace detail {

inline std::span<const double> as_span(const Vector& x) {
  return {x.data(), static_cast<std::size_t>(x.size())};
}

}  // namespace detail

/// A system plus its barrier, with all first and second derivatives
/// differentiated once at construction and cached as expression trees.
/// All evaluation methods are pure and safe to call concurrently.
class Model {
 public:
  Model(SystemModel sys, Expr h, AlphaSpec alpha, DomainBox box)
      : sys_(std::move(sys)),
        h_(std::move(h)),
        alpha_(alpha),
        box_(std::move(box)) {
    validate_shape();
    grad_h_ = gradient(h_, sys_.n);
    hess_h_ = hessian(h_, sys_.n);
    jac_f_ = jacobian(sys_.f);
    jac_g_.reserve(static_cast<std::size_t>(sys_.m));
    for (const auto& gi : sys_.g) jac_g_.push_back(jacobian(gi));
    validate_superlevel_nonempty();
    doc_ = build_document();
  }

  /// Loads a system document. Throws SchemaError / DimensionMismatch /
  /// ParseError on malformed input.
  static Model load(const nlohmann::json& doc) {
    if (!doc.is_object()) throw SchemaError("system document must be a JSON object");
    for (const char* key : {"n", "m", "f", "G", "h", "alpha", "domain_box"})
      if (!doc.contains(key))
        throw SchemaError(std::string("system document missing key '") + key + "'");

    const int n = require_int(doc, "n");
    const int m = require_int(doc, "m");
    if (n < 1) throw SchemaError("n must be >= 1");
    if (m < 1) throw SchemaError("m must be >= 1");

    SystemModel sys;
    sys.n = n;
    sys.m = m;
    sys.f = parse_field(doc.at("f"), n, "f");

    const auto& G = doc.at("G");
    if (!G.is_array())
      throw SchemaError("G must be an array of input columns");
    if (static_cast<int>(G.size()) != m)
      throw DimensionMismatch("G has " + std::to_string(G.size()) +
                              " columns but m=" + std::to_string(m));
    for (int i = 0; i < m; ++i)
      sys.g.push_back(parse_field(G.at(static_cast<std::size_t>(i)), n,
                                  "G[" + std::to_string(i) + "]"));

    if (!doc.at("h").is_string()) throw SchemaError("h must be an expression string");
    Expr h = parse_expr(doc.at("h").get<std::string>(), n);

    AlphaSpec alpha = parse_alpha(doc.at("alpha"));
    DomainBox box = parse_box(doc.at("domain_box"), n);

    return Model(std::move(sys), std::move(h), alpha, std::move(box));
  }

  static Model load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError("cannot open system document '" + path + "'");
    nlohmann::json doc;
    try {
      in >> doc;
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError("invalid JSON in '" + path + "': " + e.what());
    }
    return load(doc);
  }

  int n() const { return sys_.n; }
  int m() const { return sys_.m; }
  const AlphaSpec& alpha() const { return alpha_; }
  const DomainBox& box() const { return box_; }
  const Expr& h_expr() const { return h_; }
  const SystemModel& system() const { return sys_; }

  /// Normalized echo of the defining document (expressions reprinted from
  /// their parsed form); feeding it back through load() reproduces the model.
  const nlohmann::json& document() const { return doc_; }

  double h(const Vector& x) const { return h_.eval(detail::as_span(x)); }

  Vector grad_h(const Vector& x) const { return eval_vec(grad_h_, x); }
  Matrix hess_h(const Vector& x) const { return eval_mat(hess_h_, x); }

  Vector f(const Vector& x) const { return eval_vec(sys_.f.comps, x); }
  Matrix jac_f(const Vector& x) const { return eval_mat(jac_f_, x); }

  Vector g(int i, const Vector& x) const {
    return eval_vec(sys_.g[static_cast<std::size_t>(i)].comps, x);
  }
  Matrix jac_g(int i, const Vector& x) const {
    return eval_mat(jac_g_[static_cast<std::size_t>(i)], x);
  }

  /// grad h(x) . f(x)
  double nf(const Vector& x) const { return grad_h(x).dot(f(x)); }

  /// N(x) = grad h(x) . f(x) + alpha(h(x))
  double N(const Vector& x) const { return nf(x) + alpha_(h(x)); }

  /// m-vector with entries grad h(x) . g_i(x).
  Vector lgh(const Vector& x) const {
    const Vector gh = grad_h(x);
    Vector out(sys_.m);
    for (int i = 0; i < sys_.m; ++i) out[i] = gh.dot(g(i, x));
    return out;
  }

  /// Gradient of x -> grad h(x) . f(x), as a column vector.
  Vector grad_nf(const Vector& x) const {
    return hess_h(x) * f(x) + jac_f(x).transpose() * grad_h(x);
  }

  /// Gradient of x -> grad h(x) . g_i(x), as a column vector.
  Vector grad_lgh(int i, const Vector& x) const {
    return hess_h(x) * g(i, x) + jac_g(i, x).transpose() * grad_h(x);
  }

 private:
  void validate_shape() const {
    if (sys_.n < 1) throw SchemaError("n must be >= 1");
    if (sys_.m < 1) throw SchemaError("m must be >= 1");
    if (sys_.f.n != sys_.n ||
        static_cast<int>(sys_.f.comps.size()) != sys_.n)
      throw DimensionMismatch("drift f must have exactly n components");
    if (static_cast<int>(sys_.g.size()) != sys_.m)
      throw DimensionMismatch("G must have exactly m columns");
    for (const auto& gi : sys_.g)
      if (gi.n != sys_.n || static_cast<int>(gi.comps.size()) != sys_.n)
        throw DimensionMismatch("every column of G must have exactly n components");
    if (box_.dim() != sys_.n)
      throw DimensionMismatch("domain_box must have exactly n intervals");
    if (h_.max_var_index() > sys_.n)
      throw DimensionMismatch("h references a variable beyond dimension n");
  }

  // The safe set must meet the sampling box somewhere, otherwise every
  // downstream search is vacuous.
  void validate_superlevel_nonempty() const {
    std::mt19937_64 rng(0x5afe5afeULL);
    for (int k = 0; k < 4096; ++k) {
      if (h(box_.sample(rng)) > 0.0) return;
    }
    throw SchemaError(
        "no sampled point of domain_box has h > 0; the safe set does not meet "
        "the box");
  }

  static int require_int(const nlohmann::json& doc, const char* key) {
    const auto& v = doc.at(key);
    if (!v.is_number_integer())
      throw SchemaError(std::string("'") + key + "' must be an integer");
    return v.get<int>();
  }

  static VectorField parse_field(const nlohmann::json& arr, int n,
                                 const std::string& what) {
    if (!arr.is_array())
      throw SchemaError(what + " must be an array of expression strings");
    if (static_cast<int>(arr.size()) != n)
      throw DimensionMismatch(what + " has " + std::to_string(arr.size()) +
                              " components but n=" + std::to_string(n));
    VectorField field;
    field.n = n;
    for (const auto& item : arr) {
      if (!item.is_string())
        throw SchemaError(what + " components must be expression strings");
      field.comps.push_back(parse_expr(item.get<std::string>(), n));
    }
    return field;
  }

  static AlphaSpec parse_alpha(const nlohmann::json& a) {
    if (!a.is_object() || !a.contains("family") || !a.contains("k1"))
      throw SchemaError("alpha must be {\"family\": ..., \"k1\": ...}");
    AlphaSpec alpha;
    const std::string family = a.at("family").get<std::string>();
    if (family == "linear") {
      alpha.family = AlphaSpec::Family::Linear;
      if (a.contains("k3"))
        throw SchemaError("alpha.k3 is only valid for the odd-cubic family");
    } else if (family == "odd-cubic") {
      alpha.family = AlphaSpec::Family::OddCubic;
      alpha.k3 = a.value("k3", 0.0);
    } else {
      throw SchemaError("alpha.family must be 'linear' or 'odd-cubic'");
    }
    if (!a.at("k1").is_number()) throw SchemaError("alpha.k1 must be a number");
    alpha.k1 = a.at("k1").get<double>();
    if (!(alpha.k1 > 0.0)) throw SchemaError("alpha.k1 must be > 0");
    if (alpha.k3 < 0.0) throw SchemaError("alpha.k3 must be >= 0");
    return alpha;
  }

  static DomainBox parse_box(const nlohmann::json& b, int n) {
    if (!b.is_array() || static_cast<int>(b.size()) != n)
      throw DimensionMismatch("domain_box must be an array of n [lo, hi] pairs");
    DomainBox box;
    for (const auto& pair : b) {
      if (!pair.is_array() || pair.size() != 2)
        throw SchemaError("domain_box entries must be [lo, hi] pairs");
      const double lo = pair.at(0).get<double>();
      const double hi = pair.at(1).get<double>();
      if (!(lo < hi)) throw SchemaError("domain_box intervals need lo < hi");
      box.bounds.push_back({lo, hi});
    }
    return box;
  }

  nlohmann::json build_document() const {
    nlohmann::json doc;
    doc["n"] = sys_.n;
    doc["m"] = sys_.m;
    nlohmann::json f = nlohmann::json::array();
    for (const auto& c : sys_.f.comps) f.push_back(c.str());
    doc["f"] = std::move(f);
    nlohmann::json G = nlohmann::json::array();
    for (const auto& gi : sys_.g) {
      nlohmann::json col = nlohmann::json::array();
      for (const auto& c : gi.comps) col.push_back(c.str());
      G.push_back(std::move(col));
    }
    doc["G"] = std::move(G);
    doc["h"] = h_.str();
    nlohmann::json a;
    a["family"] = alpha_.family == AlphaSpec::Family::Linear ? "linear" : "odd-cubic";
    a["k1"] = alpha_.k1;
    if (alpha_.family == AlphaSpec::Family::OddCubic) a["k3"] = alpha_.k3;
    doc["alpha"] = std::move(a);
    nlohmann::json box = nlohmann::json::array();
    for (const auto& b : box_.bounds) box.push_back({b[0], b[1]});
    doc["domain_box"] = std::move(box);
    return doc;
  }

  Vector eval_vec(const std::vector<Expr>& comps, const Vector& x) const {
    Vector out(static_cast<int>(comps.size()));
    const auto xs = detail::as_span(x);
    for (int i = 0; i < out.size(); ++i)
      out[i] = comps[static_cast<std::size_t>(i)].eval(xs);
    return out;
  }

  Matrix eval_mat(const ExprMatrix& cells, const Vector& x) const {
    Matrix out(cells.rows(), cells.cols());
    const auto xs = detail::as_span(x);
    for (int i = 0; i < cells.rows(); ++i)
      for (int j = 0; j < cells.cols(); ++j) out(i, j) = cells.at(i, j).eval(xs);
    return out;
  }

  SystemModel sys_;
  Expr h_;
  AlphaSpec alpha_;
  DomainBox box_;
  std::vector<Expr> grad_h_;
  ExprMatrix hess_h_;
  ExprMatrix jac_f_;
  std::vector<ExprMatrix> jac_g_;
  nlohmann::json doc_;
};

}  // namespace cbf
