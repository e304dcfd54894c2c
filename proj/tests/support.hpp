#pragma once

#include <specdetect/specdetect.hpp>

#include <random>
#include <string>

namespace testsupport {

inline specdetect::Scenario fixture() {
    return specdetect::scenario_from_json(specdetect::read_json_file(SPECDETECT_FIXTURE));
}

inline specdetect::Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double lo = -1.0,
                                        double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    specdetect::Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = u(rng);
    return m;
}

inline specdetect::Vector random_vector(Eigen::Index n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    return random_matrix(n, 1, rng, lo, hi);
}

}  // namespace testsupport
