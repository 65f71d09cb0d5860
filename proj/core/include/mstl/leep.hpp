#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "mstl/tensor.hpp"

namespace mstl {

// Source-model output distributions N(x_i) over the source label set Z (one
// row per target example) and the target labels y_i.
struct LeepInput {
  Tensor dummy_dist;  // n x |Z|
  std::vector<std::size_t> target_labels;
  // |Y|; 0 means max(label) + 1.
  std::size_t num_target_classes = 0;
};

struct ConditionalTable {
  Tensor conditional;  // |Y| x |Z|, entry (y, z) = P(y | z)
  Tensor joint;        // |Y| x |Z|
  Tensor marginal;     // |Z|
};

inline constexpr double kLeepMarginalEpsilon = 1e-12;

// ContractError unless every row is nonnegative and sums to 1 within 1e-6,
// n >= 1, and labels fit the class count.
void validate(const LeepInput& input);

// P(y, z) = (1/n) sum_i N(x_i)_z [y_i = y];  P(z) = sum_y P(y, z);
// P(y | z) = P(y, z) / P(z), or uniform over Y when P(z) < 1e-12.
// Sums over examples use pairwise summation in a fixed order.
ConditionalTable empirical_conditional(const LeepInput& input);

// (1/n) sum_i log(sum_z P(y_i | z) N(x_i)_z). Always <= 0.
double leep_score(const LeepInput& input);

// CSV with header z0,...,zK,label.
LeepInput read_leep_csv(const std::filesystem::path& path);
void write_leep_csv(const std::filesystem::path& path, const LeepInput& input);

}  // namespace mstl
