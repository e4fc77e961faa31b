#pragma once

// Datasets, synthetic generators and client partitioners.

#include "fedmr/tensor.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace fedmr {

struct Dataset {
  Matrix features;  // n x input_dim
  Labels labels;
  int num_classes = 0;

  Index size() const { return features.rows(); }
  Index input_dim() const { return features.cols(); }

  // Rows in the given order, as a new dataset with the same num_classes.
  Dataset subset(std::span<const Index> rows) const;
  std::vector<Index> class_counts() const;
};

struct ClientShard {
  int client_id = 0;
  std::vector<Index> indices;  // ascending, into the parent dataset
  std::vector<int> class_set;  // ascending distinct labels
};

struct PcddSpec {
  int clients = 0;
  int classes_per_client = 0;
};
struct DirichletSpec {
  int clients = 0;
  double beta = 1.0;
};
struct IidSpec {
  int clients = 0;
};

using Point2 = std::array<Scalar, 2>;

// Uniform samples on disks, one disk per class, labels in center order.
Dataset gen_circles(std::span<const Point2> centers, Scalar radius, Index n_per_class,
                    std::uint64_t seed);
// Four disks centred at (1,1), (1,-1), (-1,1), (-1,-1), radius 0.5.
Dataset gen_circles_default(Index n_per_class, std::uint64_t seed);
// Three disks centred at (1,0), (0,sqrt 3), (0,-sqrt 3), radius 1/2.
Dataset gen_motivation(Index n_per_class, std::uint64_t seed);

std::vector<ClientShard> partition_pcdd(const Dataset& ds, const PcddSpec& spec,
                                        std::uint64_t seed);
std::vector<ClientShard> partition_dirichlet(const Dataset& ds, const DirichletSpec& spec,
                                             std::uint64_t seed);
std::vector<ClientShard> partition_iid(const Dataset& ds, const IidSpec& spec,
                                       std::uint64_t seed);

// Header line, then rows "f1,...,fm,label".
Dataset load_csv(const std::filesystem::path& path);
// Writes values with 17 significant digits so load_csv round-trips exactly.
void save_csv(const Dataset& ds, const std::filesystem::path& path);

}  // namespace fedmr
