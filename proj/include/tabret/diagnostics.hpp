#pragma once

#include <map>
#include <string>

#include "tabret/model.hpp"

namespace tabret {

struct GradCheckReport {
    // max relative error per parameter, over reconstruction and target losses
    std::map<std::string, double> per_param;
    double max_rel_error = 0.0;
    std::string worst_param;
};

// Builds the reference tiny model (2 numerical + 2 categorical C=3 features,
// binary target, d=8, one encoder block, dropout off, double precision) and
// checks analytic gradients of both losses against central finite differences.
// The default seed picks a reference init with no fully-gated ReLU unit: a
// dead hidden unit has an exactly-zero gradient row, and the relative-error
// floor then amplifies finite-difference noise past any useful bound.
GradCheckReport gradcheck_tiny_model(double eps = 1e-6, uint64_t seed = 5);

}  // namespace tabret
