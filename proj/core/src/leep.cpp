#include "mstl/leep.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include <fmt/format.h>

#include "mstl/errors.hpp"

namespace mstl {

namespace {

// Pairwise sum of term(i) for i in [lo, hi). Splitting at the exact midpoint
// means a dataset concatenated with itself sums to exactly twice the original.
double pairwise(std::size_t lo, std::size_t hi, const std::function<double(std::size_t)>& term) {
  if (hi - lo == 1) return term(lo);
  const std::size_t mid = lo + (hi - lo) / 2;
  return pairwise(lo, mid, term) + pairwise(mid, hi, term);
}

std::size_t target_classes(const LeepInput& in) {
  if (in.num_target_classes > 0) return in.num_target_classes;
  return *std::max_element(in.target_labels.begin(), in.target_labels.end()) + 1;
}

}  // namespace

void validate(const LeepInput& in) {
  if (in.dummy_dist.rank() != 2) throw ContractError("LEEP: dummy distribution must be an n x |Z| matrix");
  const std::size_t n = in.dummy_dist.dim(0), z = in.dummy_dist.dim(1);
  if (n == 0 || in.target_labels.size() != n) {
    throw ContractError("LEEP: need one target label per row (" + std::to_string(n) + " rows, " +
                        std::to_string(in.target_labels.size()) + " labels)");
  }
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < z; ++k) {
      const double v = in.dummy_dist[i * z + k];
      if (!(v >= 0.0) || !std::isfinite(v)) throw ContractError("LEEP: row " + std::to_string(i) + " has a negative or non-finite entry");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-6) throw ContractError("LEEP: row " + std::to_string(i) + " sums to " + std::to_string(s));
  }
  if (in.num_target_classes > 0) {
    for (std::size_t y : in.target_labels) {
      if (y >= in.num_target_classes) throw ContractError("LEEP: target label out of range");
    }
  }
}

ConditionalTable empirical_conditional(const LeepInput& in) {
  validate(in);
  const std::size_t n = in.dummy_dist.dim(0), nz = in.dummy_dist.dim(1), ny = target_classes(in);
  ConditionalTable t{Tensor({ny, nz}, 0.0), Tensor({ny, nz}, 0.0), Tensor({nz}, 0.0)};
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t y = 0; y < ny; ++y) {
    for (std::size_t z = 0; z < nz; ++z) {
      const double s = pairwise(0, n, [&](std::size_t i) {
        return in.target_labels[i] == y ? in.dummy_dist[i * nz + z] : 0.0;
      });
      t.joint[y * nz + z] = s * inv_n;
    }
  }
  for (std::size_t z = 0; z < nz; ++z) {
    double m = 0.0;
    for (std::size_t y = 0; y < ny; ++y) m += t.joint[y * nz + z];
    t.marginal[z] = m;
    for (std::size_t y = 0; y < ny; ++y) {
      t.conditional[y * nz + z] =
          m < kLeepMarginalEpsilon ? 1.0 / static_cast<double>(ny) : t.joint[y * nz + z] / m;
    }
  }
  return t;
}

double leep_score(const LeepInput& in) {
  const ConditionalTable t = empirical_conditional(in);
  const std::size_t n = in.dummy_dist.dim(0), nz = in.dummy_dist.dim(1);
  const double total = pairwise(0, n, [&](std::size_t i) {
    double expected = 0.0;
    for (std::size_t z = 0; z < nz; ++z) {
      expected += t.conditional[in.target_labels[i] * nz + z] * in.dummy_dist[i * nz + z];
    }
    // A convex combination of probabilities; round-off may nudge it past 1.
    return std::log(std::min(expected, 1.0));
  });
  return total / static_cast<double>(n);
}

LeepInput read_leep_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError(path.string() + ": empty file");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  if (header.size() < 2 || header.back() != "label") throw ConfigError(path.string() + ": header must be z0,...,zK,label");
  for (std::size_t k = 0; k + 1 < header.size(); ++k) {
    if (header[k] != "z" + std::to_string(k)) throw ConfigError(path.string() + ": unexpected column '" + header[k] + "'");
  }
  const std::size_t nz = header.size() - 1;
  std::vector<double> values;
  LeepInput out;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t col = 0;
    try {
      while (std::getline(ss, cell, ',')) {
        if (col < nz) values.push_back(std::stod(cell));
        else if (col == nz) out.target_labels.push_back(std::stoul(cell));
        ++col;
      }
    } catch (const std::logic_error&) {
      throw ConfigError(path.string() + ": malformed number on data row " + std::to_string(row + 1));
    }
    if (col != nz + 1) throw ConfigError(path.string() + ": row " + std::to_string(row + 1) + " has wrong column count");
    ++row;
  }
  if (row == 0) throw ConfigError(path.string() + ": no data rows");
  out.dummy_dist = Tensor({row, nz}, std::move(values));
  return out;
}

void write_leep_csv(const std::filesystem::path& path, const LeepInput& input) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  const std::size_t n = input.dummy_dist.dim(0), nz = input.dummy_dist.dim(1);
  for (std::size_t k = 0; k < nz; ++k) out << 'z' << k << ',';
  out << "label\n";
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < nz; ++k) out << fmt::format("{:.17g}", input.dummy_dist[i * nz + k]) << ',';
    out << input.target_labels[i] << '\n';
  }
}

}  // namespace mstl
