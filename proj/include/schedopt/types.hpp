#pragma once

#include <Eigen/Core>
#include <vector>

namespace schedopt {

using Vec = Eigen::VectorXd;
using Batch = std::vector<Vec>;

}  // namespace schedopt
