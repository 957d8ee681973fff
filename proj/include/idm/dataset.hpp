#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace idm {

/// A fixed table of iid observations z_i = (x_i, y_i).
///
/// Features are rows of `x`; `y` holds a real response or, for the
/// classification families, a class index stored as an exact integer
/// value.  Row order is part of the value: reductions and minibatch
/// shuffles are defined relative to it.
struct Dataset {
    Eigen::MatrixXd x;  // n x p_x
    Eigen::VectorXd y;  // n

    Eigen::Index n() const { return x.rows(); }
    Eigen::Index feature_dim() const { return x.cols(); }

    /// Keep the listed rows, in the given order (used by resampling/splits).
    Dataset select(const std::vector<Eigen::Index>& rows) const;

    void validate() const;  // n >= 1, finite entries, y length matches
};

/// Load a headerless CSV: feature columns followed by one response column.
Dataset load_csv(const std::string& path);

/// Write in the same headerless layout `load_csv` expects.
void write_csv(const Dataset& data, const std::string& path);

}  // namespace idm
