#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

namespace cfss {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Thrown when an input violates a documented precondition.
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline void require(bool cond, const std::string& what)
{
    if (!cond) throw InvalidArgument(what);
}

inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }

inline double linear_to_db(double lin)
{
    if (lin <= 0.0) return -std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(lin);
}

/// Which closed forms to use for terms that involve pilot-contaminated
/// channel pairs observed through several APs at once.
///
/// `exact` keeps the cross-AP coherent sums, i.e. (sum_n sqrt(eta) * mean)^2.
/// `as_printed` keeps only the per-AP diagonal sum_n eta * mean^2, which
/// underestimates the interference whenever more than one AP contributes.
enum class FormulaVariant { exact, as_printed };

inline const char* to_string(FormulaVariant v)
{
    return v == FormulaVariant::exact ? "exact" : "as_printed";
}

} // namespace cfss
