#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "sneb/errors.hpp"

namespace sneb {

// Paired observations y_i with known noise standard deviations sigma_i.
struct Dataset {
  std::vector<double> y;
  std::vector<double> sigma;

  std::size_t size() const noexcept { return y.size(); }

  void validate() const {
    if (y.size() != sigma.size())
      throw Error(ErrorKind::InvalidArgument, "dataset: y and sigma lengths differ");
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (!std::isfinite(y[i]))
        throw Error(ErrorKind::InvalidArgument, "dataset: non-finite y", std::ptrdiff_t(i));
      if (!(sigma[i] > 0.0) || !std::isfinite(sigma[i]))
        throw Error(ErrorKind::InvalidArgument, "dataset: sigma must be positive and finite",
                    std::ptrdiff_t(i));
    }
  }
};

}  // namespace sneb
