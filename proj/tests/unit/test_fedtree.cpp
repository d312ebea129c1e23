#include <gtest/gtest.h>

#include "random_data.hpp"
#include "vflab/fedtree.hpp"
#include "vflab/gbdt.hpp"

using namespace vflab;

namespace {

gbdt::Params small_params(int trees, int depth) {
  gbdt::Params p;
  p.n_trees = trees;
  p.max_depth = depth;
  return p;
}

}  // namespace

TEST(FedTree, PlaintextMatchesCentralizedExactly) {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const auto inst = fixtures::random_instance(seed, 200, 12);
    const int parties = 1 + static_cast<int>(seed % 3);
    const auto slices = fixtures::split_columns(inst.x, parties, seed + 100);
    fedtree::Config cfg;
    cfg.params = small_params(4, 4);
    cfg.active_party = static_cast<int>(seed % parties);
    const auto fed = fedtree::train_fedtree(slices, inst.y, cfg);
    const auto central = gbdt::fit(inst.x, inst.y, cfg.params);
    EXPECT_EQ(fed.model.model.to_json(), central.to_json()) << "seed " << seed;
    const auto a = fedtree::predict_margin_federated(fed.model, slices);
    const auto b = central.predict_margin(inst.x);
    EXPECT_TRUE((a.array() == b.array()).all());
  }
}

TEST(FedTree, PaillierModeKeepsStructure) {
  const auto inst = fixtures::random_instance(11, 80, 6);
  const auto slices = fixtures::split_columns(inst.x, 2, 3);
  fedtree::Config cfg;
  cfg.params = small_params(2, 3);
  cfg.active_party = 1;
  const auto plain = fedtree::train_fedtree(slices, inst.y, cfg);
  cfg.mode = fedtree::Mode::Paillier;
  cfg.key_bits = 512;
  cfg.key_seed = 5;
  cfg.encrypt_seed = 6;
  const auto he = fedtree::train_fedtree(slices, inst.y, cfg);
  const auto& tp = plain.model.model.trees;
  const auto& th = he.model.model.trees;
  ASSERT_EQ(tp.size(), th.size());
  for (std::size_t r = 0; r < tp.size(); ++r)
    for (std::size_t k = 0; k < tp[r].size(); ++k) {
      ASSERT_EQ(tp[r][k].nodes.size(), th[r][k].nodes.size());
      for (std::size_t n = 0; n < tp[r][k].nodes.size(); ++n) {
        EXPECT_EQ(tp[r][k].nodes[n].feature, th[r][k].nodes[n].feature);
        EXPECT_EQ(tp[r][k].nodes[n].threshold, th[r][k].nodes[n].threshold);
        EXPECT_NEAR(tp[r][k].nodes[n].weight, th[r][k].nodes[n].weight, 1e-6);
      }
    }
  EXPECT_EQ(he.transcript.count(fed::FrameKind::GradientsPlain), 0u);
  EXPECT_EQ(he.transcript.count(fed::FrameKind::HistogramPlain), 0u);
  EXPECT_GT(he.transcript.count(fed::FrameKind::HistogramCipher), 0u);
  EXPECT_GT(he.transcript.encrypt_seconds(), 0.0);
  EXPECT_GT(he.transcript.decrypt_seconds(), 0.0);
}

TEST(FedTree, OneRoundDepthOneFrameCounts) {
  const auto inst = fixtures::random_instance(2, 2, 2, 2);
  const auto slices = fixtures::split_columns(inst.x, 2, 1);
  fedtree::Config cfg;
  cfg.params = small_params(1, 1);
  cfg.params.num_classes = 2;
  const auto r = fedtree::train_fedtree(slices, inst.y, cfg);
  EXPECT_GE(r.transcript.count(fed::FrameKind::GradientsPlain), 1u);
  // One histogram frame per passive party per depth; both classes ride in it.
  EXPECT_EQ(r.transcript.count(fed::FrameKind::HistogramPlain), 1u);
  EXPECT_TRUE(r.transcript.totals_reconcile());
}

TEST(FedTree, SinglePartyIsPlainGbdt) {
  const auto inst = fixtures::random_instance(4, 120, 5);
  std::vector<data::BinMatrix> one{inst.x};
  fedtree::Config cfg;
  cfg.params = small_params(3, 3);
  const auto r = fedtree::train_fedtree(one, inst.y, cfg);
  EXPECT_EQ(r.model.model.to_json(), gbdt::fit(inst.x, inst.y, cfg.params).to_json());
  EXPECT_TRUE(r.transcript.messages.empty());
}

TEST(FedTree, EmptyBatchPredictsNothing) {
  const auto inst = fixtures::random_instance(4, 60, 4);
  const auto slices = fixtures::split_columns(inst.x, 2, 9);
  fedtree::Config cfg;
  cfg.params = small_params(2, 2);
  const auto r = fedtree::train_fedtree(slices, inst.y, cfg);
  std::vector<data::BinMatrix> empty{data::BinMatrix(0, slices[0].cols()), data::BinMatrix(0, slices[1].cols())};
  EXPECT_TRUE(fedtree::predict_federated(r.model, empty).empty());
}

TEST(FedTree, RowMisalignmentIsRejected) {
  const auto inst = fixtures::random_instance(4, 60, 4);
  std::vector<data::BinMatrix> slices{inst.x.leftCols(2), inst.x.rightCols(2).topRows(59)};
  fedtree::Config cfg;
  EXPECT_THROW(fedtree::train_fedtree(slices, inst.y, cfg), ConfigError);
}

TEST(FedTree, LockstepAndThreadedAgree) {
  const auto inst = fixtures::random_instance(8, 150, 9);
  const auto slices = fixtures::split_columns(inst.x, 3, 2);
  fedtree::Config cfg;
  cfg.params = small_params(2, 3);
  const auto a = fedtree::train_fedtree(slices, inst.y, cfg);
  fed::RunOptions threaded;
  threaded.mode = fed::ExecutionMode::Threaded;
  const auto b = fedtree::train_fedtree(slices, inst.y, cfg, threaded);
  EXPECT_EQ(a.model.model.to_json(), b.model.model.to_json());
  ASSERT_EQ(a.transcript.messages.size(), b.transcript.messages.size());
  for (std::size_t i = 0; i < a.transcript.messages.size(); ++i) {
    EXPECT_EQ(a.transcript.messages[i].sender, b.transcript.messages[i].sender);
    EXPECT_EQ(a.transcript.messages[i].kind, b.transcript.messages[i].kind);
    EXPECT_EQ(a.transcript.messages[i].payload, b.transcript.messages[i].payload);
  }
}

TEST(FedTree, InterleavedOwnershipMatchesOriginalColumnOrder) {
  const auto inst = fixtures::random_instance(21, 150, 9);
  // Columns dealt round-robin to three parties.
  std::vector<std::vector<int>> ids(3);
  for (int j = 0; j < 9; ++j) ids[static_cast<std::size_t>(j % 3)].push_back(j);
  std::vector<data::BinMatrix> slices;
  for (const auto& cols : ids) {
    data::BinMatrix s(inst.x.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) s.col(static_cast<Eigen::Index>(c)) = inst.x.col(cols[c]);
    slices.push_back(s);
  }
  fedtree::Config cfg;
  cfg.params = small_params(3, 4);
  cfg.feature_ids = ids;
  cfg.active_party = 2;
  const auto fed = fedtree::train_fedtree(slices, inst.y, cfg);
  EXPECT_EQ(fed.model.model.to_json(), gbdt::fit(inst.x, inst.y, cfg.params).to_json());
  const auto a = fedtree::predict_margin_federated(fed.model, slices);
  EXPECT_TRUE((a.array() == gbdt::fit(inst.x, inst.y, cfg.params).predict_margin(inst.x).array()).all());
}

TEST(FedTree, BadFeatureIdsRejected) {
  const auto inst = fixtures::random_instance(21, 40, 4);
  const auto slices = fixtures::split_columns(inst.x, 2, 1);
  fedtree::Config cfg;
  cfg.feature_ids = {{0}, {0}};
  EXPECT_THROW(fedtree::train_fedtree(slices, inst.y, cfg), ConfigError);
}
