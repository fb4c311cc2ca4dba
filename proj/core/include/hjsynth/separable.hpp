#pragma once

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace hjsynth {

struct Interval {
    double lo = -1.0;
    double hi = 1.0;

    Interval() = default;
    Interval(double lo_, double hi_) : lo(lo_), hi(hi_) {
        if (!(lo < hi)) throw std::invalid_argument("Interval: requires lo < hi");
    }

    double width() const { return hi - lo; }
    double center() const { return 0.5 * (lo + hi); }
    double half_width() const { return 0.5 * (hi - lo); }
    bool contains(double x) const { return x >= lo && x <= hi; }
};

struct Hyperrectangle {
    std::vector<Interval> intervals;

    Hyperrectangle() = default;
    explicit Hyperrectangle(std::vector<Interval> ivs) : intervals(std::move(ivs)) {
        if (intervals.empty()) throw std::invalid_argument("Hyperrectangle: dimension must be >= 1");
    }
    // Centered box (-hw, hw)^d.
    static Hyperrectangle centered(int d, double half_width);

    int dim() const { return static_cast<int>(intervals.size()); }
    bool contains(const Eigen::VectorXd& x) const;
    double max_half_width() const;
};

// One-dimensional factor of a separable term. A term of a separable function
// is a product of exactly one factor per coordinate; constant(1) marks a
// coordinate the term does not depend on.
class Factor1D {
public:
    enum class Kind { Constant, Monomial, ScaledExponential, Custom };

    using Evaluator = std::function<double(double)>;

    static Factor1D constant(double value);
    static Factor1D monomial(int power);
    // a * x^p * exp(b*x)
    static Factor1D scaled_exponential(double a, double b, int power = 1);
    // a * x^p  (exponential part degenerate)
    static Factor1D scaled_monomial(double a, int power);
    static Factor1D custom(Evaluator fn, std::string name = "custom");

    Kind kind() const { return kind_; }
    double value() const { return a_; }  // Constant
    int power() const { return p_; }
    double scale() const { return a_; }
    double rate() const { return b_; }
    const std::string& name() const { return name_; }
    const std::shared_ptr<const Evaluator>& evaluator() const { return fn_; }

    bool is_one() const { return kind_ == Kind::Constant && a_ == 1.0; }

    double eval(double x) const;

private:
    Kind kind_ = Kind::Constant;
    double a_ = 1.0;  // constant value / scale
    double b_ = 0.0;  // exponential rate
    int p_ = 0;       // monomial power
    std::shared_ptr<const Evaluator> fn_;
    std::string name_;
};

// Sum of products of univariate factors: s(x) = sum_j prod_k factors[j][k](x_k).
// Every term carries exactly dim factors.
struct SeparableScalar {
    int dim = 0;
    std::vector<std::vector<Factor1D>> terms;

    SeparableScalar() = default;
    explicit SeparableScalar(int d) : dim(d) {
        if (d < 1) throw std::invalid_argument("SeparableScalar: dimension must be >= 1");
    }

    static SeparableScalar zero(int d) { return SeparableScalar(d); }

    void add_term(std::vector<Factor1D> factors);
    // Term depending on a single coordinate; all other factors are constant(1).
    void add_single_coordinate_term(int coord, Factor1D factor);
    void add_two_coordinate_term(int c1, Factor1D f1, int c2, Factor1D f2);

    int term_count() const { return static_cast<int>(terms.size()); }
    double eval(const Eigen::VectorXd& x) const;
};

// Matrix-valued separable map; entry (i,j) is a SeparableScalar in the same
// input variables. f is d x 1, g is d x m, h is d x p.
struct SeparableMap {
    int input_dim = 0;
    int out_rows = 0;
    int out_cols = 0;
    std::vector<SeparableScalar> entries;  // row-major, out_rows * out_cols

    SeparableMap() = default;
    SeparableMap(int d, int rows, int cols);

    static SeparableMap zero(int d, int rows, int cols) { return SeparableMap(d, rows, cols); }
    // Column vector of constants (rows x 1).
    static SeparableMap constant_column(int d, const Eigen::VectorXd& values);

    SeparableScalar& entry(int i, int j);
    const SeparableScalar& entry(int i, int j) const;

    Eigen::MatrixXd eval(const Eigen::VectorXd& x) const;
    // Max term count over entries (the separability degree n_f).
    int max_terms_per_entry() const;
    bool is_structurally_zero() const;
};

struct QuadratureRule {
    std::vector<double> nodes;
    std::vector<double> weights;
    int order = 0;
    Interval interval;
};

// Gauss-Legendre rule with `order` points mapped onto iv; exact for
// polynomials of degree <= 2*order - 1.
QuadratureRule gauss_legendre(int order, Interval iv);

double eval_factor(const Factor1D& f, double x);
double eval_separable(const SeparableScalar& s, const Eigen::VectorXd& x);

// integral over iv of the product of the given 1D factors, by quadrature.
double integrate_factor_product(const std::vector<Factor1D>& factors, Interval iv,
                                const QuadratureRule& q);

double ipow(double x, int p);

}  // namespace hjsynth
