#ifndef JBSDE_REGRESSION_HPP
#define JBSDE_REGRESSION_HPP

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

#include "jbsde/util.hpp"

namespace jbsde {

struct SingularRegression : Error {
    explicit SingularRegression(const std::string& what) : Error(what) {}
};

// Least-squares projection onto polynomials of one regressor, with ridge
// stabilization on the normal equations. Regressors are centered and scaled
// before the monomials are formed; a (near-)constant regressor degrades to the
// constant basis instead of a singular system.
class PolyRegression {
  public:
    PolyRegression(const std::vector<double>& x, int degree, double ridge = 1e-10) {
        const auto n = x.size();
        if (n == 0) throw SingularRegression("no samples");
        double mean = 0.0;
        for (double v : x) mean += v;
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (double v : x) var += (v - mean) * (v - mean);
        var /= static_cast<double>(n);
        center_ = mean;
        scale_ = std::sqrt(var);
        degree_ = scale_ < 1e-12 ? 0 : degree;
        if (scale_ < 1e-12) scale_ = 1.0;
        const int p = degree_ + 1;
        if (n < static_cast<std::size_t>(p))
            throw SingularRegression("basis of size " + std::to_string(p) + " with only " +
                                     std::to_string(n) + " paths");

        phi_.resize(static_cast<Eigen::Index>(n), p);
        for (std::size_t i = 0; i < n; ++i) {
            const double s = (x[i] - center_) / scale_;
            double pw = 1.0;
            for (int d = 0; d < p; ++d) {
                phi_(static_cast<Eigen::Index>(i), d) = pw;
                pw *= s;
            }
        }
        Eigen::MatrixXd gram = phi_.transpose() * phi_ / static_cast<double>(n);
        gram += ridge * Eigen::MatrixXd::Identity(p, p);
        const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
        const double lo = es.eigenvalues().minCoeff();
        const double hi = es.eigenvalues().maxCoeff();
        if (!(lo > 0.0)) throw SingularRegression("normal equations not positive definite");
        condition_ = hi / lo;
        solver_.compute(gram);
    }

    Eigen::VectorXd coefficients(const std::vector<double>& y) const {
        Eigen::Map<const Eigen::VectorXd> ym(y.data(), phi_.rows());
        const Eigen::VectorXd rhs = phi_.transpose() * ym / static_cast<double>(phi_.rows());
        return solver_.solve(rhs);
    }

    // Fitted values of the projection of y onto the basis.
    std::vector<double> fit(const std::vector<double>& y) const {
        const Eigen::VectorXd fitted = phi_ * coefficients(y);
        return {fitted.data(), fitted.data() + fitted.size()};
    }

    // Evaluate a coefficient vector at a fresh regressor value.
    double predict(const Eigen::VectorXd& coef, double x) const {
        const double s = (x - center_) / scale_;
        double pw = 1.0, acc = 0.0;
        for (Eigen::Index d = 0; d < coef.size(); ++d) {
            acc += coef[d] * pw;
            pw *= s;
        }
        return acc;
    }

    int degree() const { return degree_; }
    int basis_size() const { return degree_ + 1; }
    double condition_number() const { return condition_; }

  private:
    Eigen::MatrixXd phi_;
    Eigen::LDLT<Eigen::MatrixXd> solver_;
    double center_ = 0.0;
    double scale_ = 1.0;
    int degree_ = 0;
    double condition_ = 1.0;
};

// Two-fold cross-fitted projection: coefficients fitted on one half of the
// sample are evaluated on the other half. The predicted values are then
// independent of each path's own noise, which removes the in-sample
// overfitting bias when the predictions multiply martingale increments.
class CrossFitRegression {
  public:
    CrossFitRegression(const std::vector<double>& x, int degree, double ridge = 1e-10) {
        const std::size_t n = x.size();
        std::vector<double> xa, xb;
        xa.reserve(n / 2 + 1);
        xb.reserve(n / 2 + 1);
        for (std::size_t i = 0; i < n; ++i) (i % 2 == 0 ? xa : xb).push_back(x[i]);
        rega_.emplace(xa, degree, ridge);
        regb_.emplace(xb, degree, ridge);
        x_ = &x;
    }

    std::vector<double> fit(const std::vector<double>& y) const {
        const std::size_t n = x_->size();
        std::vector<double> ya, yb;
        ya.reserve(n / 2 + 1);
        yb.reserve(n / 2 + 1);
        for (std::size_t i = 0; i < n; ++i) (i % 2 == 0 ? ya : yb).push_back(y[i]);
        const Eigen::VectorXd ca = rega_->coefficients(ya);
        const Eigen::VectorXd cb = regb_->coefficients(yb);
        std::vector<double> out(n);
        for (std::size_t i = 0; i < n; ++i)
            out[i] = i % 2 == 0 ? regb_->predict(cb, (*x_)[i]) : rega_->predict(ca, (*x_)[i]);
        return out;
    }

    double condition_number() const {
        return std::max(rega_->condition_number(), regb_->condition_number());
    }

  private:
    std::optional<PolyRegression> rega_, regb_;
    const std::vector<double>* x_ = nullptr;
};

}  // namespace jbsde

#endif  // JBSDE_REGRESSION_HPP
