#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "vflab/common.hpp"
#include "vflab/dataset.hpp"
#include "vflab/federation.hpp"
#include "vflab/gbdt.hpp"

namespace vflab::fedtree {

using data::BinMatrix;

enum class Mode { Plaintext, Paillier };

struct Config {
  gbdt::Params params;
  Mode mode = Mode::Plaintext;
  unsigned key_bits = 2048;
  std::optional<std::uint64_t> key_seed;
  /// Seed of the active party's encryption randomness; nullopt draws from entropy.
  std::optional<std::uint64_t> encrypt_seed;
  int scale_bits = 40;
  int active_party = 0;
  /// Global column id of every slice column, per party. Empty means party-order
  /// concatenation. Split ties resolve by global id, so the same ids give the same model
  /// under any partition.
  std::vector<std::vector<int>> feature_ids;

  void validate(std::span<const int> slice_widths) const;
};

/// Owner of a global feature: party index and column within that party's slice.
struct FeatureRef {
  int party = 0;
  int slot = 0;
};

/// Ensemble over global feature ids.
struct FederatedModel {
  gbdt::GbdtModel model;
  std::vector<FeatureRef> feature_map;
  std::vector<int> slice_widths;

  nlohmann::json to_json() const;
};

struct TrainResult {
  FederatedModel model;
  fed::Transcript transcript;
};

/// Vertical FedTree. `slices[p]` holds party p's columns, rows aligned across parties;
/// labels are held by `cfg.active_party`.
TrainResult train_fedtree(std::span<const BinMatrix> slices, const Labels& labels, const Config& cfg,
                          const fed::RunOptions& options = {});

/// Every node comparison is answered from the owning party's slice.
Eigen::MatrixXd predict_margin_federated(const FederatedModel& m, std::span<const BinMatrix> slices);
Labels predict_federated(const FederatedModel& m, std::span<const BinMatrix> slices);

BinMatrix concat_columns(std::span<const BinMatrix> slices);

}  // namespace vflab::fedtree
