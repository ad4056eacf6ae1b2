// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "clmoe/error.hpp"
#include "clmoe/fs_util.hpp"
#include "clmoe/task_stream.hpp"

namespace clmoe {
namespace {

namespace fs = std::filesystem;

SyntheticStreamSpec small_spec(std::uint64_t seed = 3) {
  SyntheticStreamSpec s;
  s.train_per_task = 200;
  s.test_per_task = 100;
  s.seed = seed;
  return s;
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("clmoe_stream_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

TEST(Generate, SameSeedGivesByteIdenticalFiles) {
  const auto a = scratch("a"), b = scratch("b");
  save_dataset(generate_stream(small_spec()), a);
  save_dataset(generate_stream(small_spec()), b);
  for (const auto& entry : fs::directory_iterator(a)) {
    EXPECT_EQ(read_file(entry.path()), read_file(b / entry.path().filename())) << entry.path();
  }
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Generate, DifferentSeedsDiffer) {
  EXPECT_NE(generate_stream(small_spec(1)).tasks[0].train[0].features,
            generate_stream(small_spec(2)).tasks[0].train[0].features);
}

TEST(Generate, ZeroNoiseCollapsesToSubclusterCenters) {
  auto spec = small_spec();
  spec.noise_sigma = 1e-12;
  const auto stream = generate_stream(spec);
  for (const auto& task : stream.tasks) {
    std::map<int, Vector> first;
    for (const auto& inst : task.train) {
      auto [it, fresh] = first.emplace(inst.subcluster, inst.features);
      if (!fresh) EXPECT_LT((inst.features - it->second).norm(), 1e-9);
    }
    EXPECT_EQ(first.size(), spec.subclusters_per_task);
  }
}

TEST(Generate, FeatureIsMeanPlusStoredNoise) {
  const auto stream = generate_stream(small_spec());
  // Sub-cluster means recovered from two instances must agree.
  for (const auto& task : stream.tasks) {
    std::map<int, Vector> mean;
    for (const auto& inst : task.train) {
      const Vector m = inst.features - inst.noise;
      auto [it, fresh] = mean.emplace(inst.subcluster, m);
      if (!fresh) EXPECT_LT((m - it->second).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(Generate, NearestCentroidIdentifiesTasks) {
  const auto stream = generate_stream(SyntheticStreamSpec{});
  std::vector<Vector> centroids;
  for (const auto& task : stream.tasks) {
    Vector c = Vector::Zero(static_cast<Eigen::Index>(stream.feature_dim));
    for (const auto& inst : task.train) c += inst.features;
    centroids.push_back(c / static_cast<double>(task.train.size()));
  }
  std::size_t hit = 0, total = 0;
  for (const auto& task : stream.tasks) {
    for (const auto& inst : task.test) {
      std::size_t best = 0;
      for (std::size_t t = 1; t < centroids.size(); ++t) {
        if ((inst.features - centroids[t]).squaredNorm() < (inst.features - centroids[best]).squaredNorm()) best = t;
      }
      hit += static_cast<int>(best + 1) == task.task_id;
      ++total;
    }
  }
  EXPECT_GE(static_cast<double>(hit) / static_cast<double>(total), 0.95);
}

TEST(Generate, CentersRespectSeparation) {
  auto spec = small_spec();
  spec.noise_sigma = 1e-12;
  const auto stream = generate_stream(spec);
  std::vector<Vector> means;
  for (const auto& task : stream.tasks) {
    Vector c = Vector::Zero(static_cast<Eigen::Index>(stream.feature_dim));
    for (const auto& inst : task.train) c += inst.features;
    means.push_back(c / static_cast<double>(task.train.size()));
  }
  // Task means share the center offsets; sub-cluster offsets average out
  // only approximately, so check the pairwise distance with slack.
  for (std::size_t i = 0; i < means.size(); ++i) {
    for (std::size_t j = i + 1; j < means.size(); ++j) EXPECT_GE((means[i] - means[j]).norm(), 0.8 * spec.cluster_separation);
  }
}

TEST(Generate, SplitsAreDisjointAndLabelsCovered) {
  const auto stream = generate_stream(small_spec());
  for (const auto& task : stream.tasks) {
    std::set<std::uint64_t> train_ids;
    std::set<int> train_labels, test_labels;
    for (const auto& inst : task.train) {
      train_ids.insert(inst.id);
      train_labels.insert(inst.target.tokens[0]);
    }
    for (const auto& inst : task.test) {
      EXPECT_EQ(train_ids.count(inst.id), 0u);
      test_labels.insert(inst.target.tokens[0]);
    }
    EXPECT_GE(train_labels.size(), 2u);
    EXPECT_GE(test_labels.size(), 2u);
  }
}

TEST(Generate, InvalidSpecIsRejected) {
  auto spec = small_spec();
  spec.n_tasks = 0;
  EXPECT_THROW(generate_stream(spec), ValidationError);
  spec = small_spec();
  spec.subclusters_per_task = 30;  // more sub-clusters than labels
  EXPECT_THROW(generate_stream(spec), ValidationError);
  spec = small_spec();
  spec.noise_sigma = -1.0;
  EXPECT_THROW(generate_stream(spec), ValidationError);
}

TEST(Dataset, RoundTripThroughDirectoryAndFile) {
  auto spec = small_spec();
  spec.sequence_length = 2;
  const auto stream = generate_stream(spec);
  const auto dir = scratch("rt");
  save_dataset(stream, dir);
  save_dataset_file(stream, dir / "all.txt");
  for (const auto& loaded : {load_dataset(dir), load_dataset(dir / "all.txt")}) {
    ASSERT_EQ(loaded.n_tasks(), stream.n_tasks());
    EXPECT_EQ(loaded.feature_dim, stream.feature_dim);
    EXPECT_EQ(loaded.vocab_size, stream.vocab_size);
    for (std::size_t t = 0; t < stream.n_tasks(); ++t) {
      ASSERT_EQ(loaded.tasks[t].train.size(), stream.tasks[t].train.size());
      ASSERT_EQ(loaded.tasks[t].test.size(), stream.tasks[t].test.size());
      for (std::size_t i = 0; i < stream.tasks[t].train.size(); ++i) {
        EXPECT_EQ(loaded.tasks[t].train[i].features, stream.tasks[t].train[i].features);
        EXPECT_EQ(loaded.tasks[t].train[i].target, stream.tasks[t].train[i].target);
      }
    }
  }
  fs::remove_all(dir);
}

TEST(Dataset, HandWrittenFixture) {
  const std::string text =
      "clmoe-dataset v1 2 3 4\n"
      "2\ttest\t1\t0.5,0.25,-1\n"
      "1\ttrain\t0\t1,2,3\n"
      "1\ttest\t3\t-0.125,0,1e-3\n"
      "2\ttrain\t2\t4,5,6\n";
  const auto s = parse_dataset(text, "fixture");
  ASSERT_EQ(s.n_tasks(), 2u);
  EXPECT_EQ(s.feature_dim, 3u);
  EXPECT_EQ(s.vocab_size, 4u);
  ASSERT_EQ(s.tasks[0].train.size(), 1u);
  EXPECT_EQ(s.tasks[0].train[0].target.tokens, std::vector<int>{0});
  Vector f(3);
  f << 1, 2, 3;
  EXPECT_EQ(s.tasks[0].train[0].features, f);
  f << -0.125, 0, 1e-3;
  EXPECT_EQ(s.tasks[0].test[0].features, f);
  EXPECT_EQ(s.tasks[1].test[0].target.tokens, std::vector<int>{1});
  EXPECT_EQ(s.tasks[1].train[0].true_task, 2);
}

TEST(Dataset, MalformedInputReportsLine) {
  try {
    parse_dataset("clmoe-dataset v1 1 2 3\n1\ttrain\t0\t1,2\n1\ttest\t0\t1,x\n", "bad");
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  try {
    parse_dataset("not a header\n", "bad");
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 1u);
  }
  EXPECT_THROW(parse_dataset("clmoe-dataset v1 1 2 3\n1\ttrain\t0\n", "bad"), ParseError);
}

TEST(Dataset, DimensionAndLabelErrorsAreValidationErrors) {
  EXPECT_THROW(parse_dataset("clmoe-dataset v1 1 2 3\n1\ttrain\t0\t1,2,3\n1\ttest\t0\t1,2\n", "dim"), ValidationError);
  EXPECT_THROW(parse_dataset("clmoe-dataset v1 1 2 3\n1\ttrain\t7\t1,2\n1\ttest\t0\t1,2\n", "label"), ValidationError);
}

TEST(Dataset, EmptyTaskFileIsRejected) {
  const auto dir = scratch("empty");
  ensure_directory(dir);
  write_file_atomic(dir / "task_1.tsv", "clmoe-dataset v1 1 2 3\n");
  EXPECT_THROW(load_dataset(dir), ValidationError);
  EXPECT_THROW(parse_dataset("clmoe-dataset v1 1 2 3\n1\ttrain\t0\t1,2\n", "no-test"), ValidationError);
  fs::remove_all(dir);
}

TEST(Dataset, MissingPathIsAnIoError) {
  EXPECT_THROW(load_dataset(scratch("missing")), IoError);
}

TEST(Stream, ReversedKeepsIds) {
  const auto s = generate_stream(small_spec());
  const auto r = s.reversed();
  ASSERT_EQ(r.n_tasks(), s.n_tasks());
  for (std::size_t t = 0; t < s.n_tasks(); ++t) EXPECT_EQ(r.tasks[t].task_id, s.tasks[s.n_tasks() - 1 - t].task_id);
}

}  // namespace
}  // namespace clmoe
