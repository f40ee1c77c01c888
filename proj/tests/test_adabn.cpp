#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "adabn/adabn.hpp"
#include "adabn/errors.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace adabn;

namespace {

WelfordAccumulator stream_rows(const Tensor& rows, std::size_t begin, std::size_t end) {
  WelfordAccumulator acc(rows.dim(1));
  for (std::size_t i = begin; i < end; ++i) acc.add(rows.data().subspan(i * rows.dim(1), rows.dim(1)));
  return acc;
}

// Normalized (pre-gamma/beta) activations of a BN layer under its installed statistics.
Tensor normalized_at(const Model& m, const std::string& bn_name, const Tensor& x) {
  const std::size_t idx = m.require_index(bn_name);
  const Tensor z = m.forward_eval(x, 0, idx);
  const BatchNormLayer& bn = m.bn(bn_name);
  Tensor out = z;
  const std::size_t p = z.dim(1);
  for (std::size_t i = 0; i < z.size(); ++i) {
    const std::size_t j = i % p;
    out[i] = (z[i] - bn.eval_mean()[j]) / std::sqrt(bn.eval_variance()[j] + bn.epsilon);
  }
  return out;
}

}  // namespace

TEST(Welford, SingleSample) {
  WelfordAccumulator acc(2);
  const std::vector<double> s{5.0, -1.0};
  acc.add(s);
  EXPECT_EQ(acc.mean(), (std::vector<double>{5.0, -1.0}));
  EXPECT_EQ(acc.variance(), Tensor({2}, 0.0));
}

TEST(Welford, TwoPointHandCheck) {
  WelfordAccumulator acc(1);
  for (double v : {0.0, 2.0}) acc.add(std::span<const double>(&v, 1));
  EXPECT_DOUBLE_EQ(acc.mean()[0], 1.0);
  EXPECT_DOUBLE_EQ(acc.variance()[0], 1.0);
}

TEST(Welford, BatchesOfSevenMatchTwoPass) {
  std::mt19937_64 rng(1);
  const Tensor x = oracle::random_tensor({1000, 5}, rng, -10.0, 30.0);
  WelfordAccumulator acc(5);
  for (std::size_t b = 0; b < 1000; b += 7) acc = welford_update(acc, x.slice_rows(b, std::min<std::size_t>(b + 7, 1000)));
  const auto o = oracle::two_pass(x.values(), 5);
  EXPECT_EQ(acc.count(), 1000u);
  for (std::size_t j = 0; j < 5; ++j) {
    EXPECT_NEAR(acc.mean()[j], o.mean[j], 1e-9);
    EXPECT_NEAR(acc.variance()[j], o.variance[j], 1e-9);
  }
}

TEST(Welford, AnyPartitionMergedEqualsTwoPass) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor x = oracle::random_tensor({200, 3}, rng, -5.0, 5.0);
    std::uniform_int_distribution<std::size_t> cut(1, 199);
    std::vector<std::size_t> cuts{0, 200};
    for (int k = 0; k < 5; ++k) cuts.push_back(cut(rng));
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
    WelfordAccumulator total(3);
    for (std::size_t k = 0; k + 1 < cuts.size(); ++k) total.merge(stream_rows(x, cuts[k], cuts[k + 1]));
    const auto o = oracle::two_pass(x.values(), 3);
    for (std::size_t j = 0; j < 3; ++j) {
      EXPECT_NEAR(total.mean()[j], o.mean[j], 1e-9);
      EXPECT_NEAR(total.variance()[j], o.variance[j], 1e-9);
    }
  }
}

TEST(Welford, MergeIsAssociative) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor x = oracle::random_tensor({90, 4}, rng, -3.0, 8.0);
    const auto a = stream_rows(x, 0, 17), b = stream_rows(x, 17, 60), c = stream_rows(x, 60, 90);
    WelfordAccumulator left = a, bc = b;
    left.merge(b);
    left.merge(c);
    bc.merge(c);
    WelfordAccumulator right = a;
    right.merge(bc);
    for (std::size_t j = 0; j < 4; ++j) {
      EXPECT_NEAR(left.mean()[j], right.mean()[j], 1e-9);
      EXPECT_NEAR(left.m2()[j], right.m2()[j], 1e-9);
    }
  }
}

TEST(Welford, MergeWithEmptyIsNoOp) {
  std::mt19937_64 rng(4);
  const auto a = stream_rows(oracle::random_tensor({10, 2}, rng), 0, 10);
  WelfordAccumulator b = a;
  b.merge(WelfordAccumulator(2));
  EXPECT_EQ(b.mean(), a.mean());
  WelfordAccumulator e(2);
  e.merge(a);
  EXPECT_EQ(e.mean(), a.mean());
  EXPECT_THROW(b.merge(WelfordAccumulator(3)), DimensionError);
}

TEST(Welford, FourDimensionalBatchesArePerChannel) {
  std::mt19937_64 rng(5);
  const Tensor x = oracle::random_tensor({3, 2, 4, 4}, rng);
  WelfordAccumulator acc(2);
  acc.update(x);
  const auto o = oracle::two_pass_channels(x);
  EXPECT_EQ(acc.count(), 48u);
  for (std::size_t c = 0; c < 2; ++c) {
    EXPECT_NEAR(acc.mean()[c], o.mean[c], 1e-12);
    EXPECT_NEAR(acc.variance()[c], o.variance[c], 1e-12);
  }
}

TEST(Estimate, ResubstitutionMatchesRunningStats) {
  const auto& f = fixture::small_blobs();
  const DomainEstimate est = estimate_domain_stats(f.model, f.source);
  ASSERT_EQ(est.layers.size(), 2u);
  const auto& [name, stats] = est.layers.front();
  const BatchNormLayer& bn = f.model.bn(name);
  const double n = static_cast<double>(stats.count);
  for (std::size_t j = 0; j < bn.features(); ++j) {
    EXPECT_LT(std::abs(stats.mean[j] - bn.running_mean[j]), 3.0 * std::sqrt(stats.variance[j] / n)) << name << j;
  }
}

TEST(Estimate, RepeatedSampleGivesZeroVarianceAndItsActivations) {
  const auto& f = fixture::small_blobs();
  std::vector<std::size_t> rows(10, 3);
  const DomainDataset same = f.source.subset(rows);
  const DomainEstimate est = estimate_domain_stats(f.model, same);
  BnStatsBank bank;
  store_estimate(bank, "same", est);
  const Model adapted = apply_domain(f.model, bank, "same");
  for (const auto& [name, stats] : est.layers) {
    const Tensor act = adapted.forward_eval(same.inputs.slice_rows(0, 1), 0, adapted.require_index(name));
    for (std::size_t j = 0; j < stats.variance.size(); ++j) {
      EXPECT_NEAR(stats.variance[j], 0.0, 1e-20) << name;
      EXPECT_NEAR(stats.mean[j], act[j], 1e-12) << name;
    }
  }
}

TEST(Estimate, FirstLayerMeanMovesByImageOfShift) {
  const auto& f = fixture::small_blobs();
  const std::vector<double> delta = fixture::alternating(8, 2.0);
  ShiftSpec spec;
  spec.input_shift = delta;
  const DomainDataset other = make_blobs(4, 150, 8, 4.0, 77, "fresh");
  const DomainDataset shifted = shift_domain(other, spec, "shifted");
  // Paired samples: the only difference between the two domains is delta.
  const auto src = estimate_domain_stats(f.model, other).layers.front().second;
  const auto tgt = estimate_domain_stats(f.model, shifted).layers.front().second;
  const LinearLayer& fc1 = std::get<LinearLayer>(f.model.layers()[0].layer);
  for (std::size_t o = 0; o < 16; ++o) {
    double image = 0.0;
    for (std::size_t i = 0; i < 8; ++i) image += fc1.weight.at(i, o) * delta[i];
    const double se = std::sqrt(src.variance[o] / src.count + tgt.variance[o] / tgt.count);
    EXPECT_LT(std::abs(tgt.mean[o] - src.mean[o] - image), 3.0 * se) << o;
    EXPECT_NEAR(tgt.mean[o] - src.mean[o], image, 1e-9) << o;
    EXPECT_NEAR(tgt.variance[o], src.variance[o], 1e-9) << o;
  }
}

TEST(Estimate, Preconditions) {
  const auto& f = fixture::small_blobs();
  const std::vector<std::size_t> one{0};
  EXPECT_THROW(estimate_domain_stats(f.model, f.source.subset(one)), DomainError);
  EXPECT_THROW(estimate_domain_stats(make_mlp(8, {}, 4, 1), f.source), PreconditionError);
  const std::vector<std::size_t> few{0, 1, 2, 3, 4};
  const auto est = estimate_domain_stats(f.model, f.source.subset(few));
  EXPECT_FALSE(est.warnings.empty());
  EXPECT_TRUE(estimate_domain_stats(f.model, f.source).warnings.empty());
}

TEST(Estimate, UpToLayerStopsEarly) {
  const auto& f = fixture::small_blobs();
  EstimationOptions o;
  o.up_to_layer = "bn1";
  const auto est = estimate_domain_stats(f.model, f.target, o);
  ASSERT_EQ(est.layers.size(), 1u);
  EXPECT_EQ(est.layers[0].first, "bn1");
}

TEST(Estimate, SequentialAndSimultaneousAgreeOnlyAtTheFirstLayer) {
  const auto& f = fixture::small_blobs();
  EstimationOptions seq, sim;
  sim.mode = EstimationMode::kSimultaneous;
  const auto a = estimate_domain_stats(f.model, f.target, seq);
  const auto b = estimate_domain_stats(f.model, f.target, sim);
  EXPECT_EQ(a.layers[0].second, b.layers[0].second);
  EXPECT_GT(max_abs_diff(a.layers[1].second.mean, b.layers[1].second.mean), 1e-3);
}

TEST(Estimate, BatchSizeDoesNotChangeTheEstimate) {
  const auto& f = fixture::small_blobs();
  EstimationOptions small, large;
  small.batch_size = 7;
  large.batch_size = 1000;
  const auto a = estimate_domain_stats(f.model, f.target, small);
  const auto b = estimate_domain_stats(f.model, f.target, large);
  for (std::size_t k = 0; k < a.layers.size(); ++k) {
    EXPECT_LE(max_abs_diff(a.layers[k].second.mean, b.layers[k].second.mean), 1e-9);
    EXPECT_LE(max_abs_diff(a.layers[k].second.variance, b.layers[k].second.variance), 1e-9);
  }
}

TEST(ApplyDomain, SourceRunningStatsReproduceEvalModel) {
  const auto& f = fixture::small_blobs();
  BnStatsBank bank;
  store_running_stats(bank, f.model, "source");
  const Model swapped = apply_domain(f.model, bank, "source");
  EXPECT_EQ(swapped.predict(f.target.inputs), f.model.predict(f.target.inputs));
  EXPECT_EQ(swapped.active_domain(), "source");
}

TEST(ApplyDomain, TargetStatisticsStandardizeFirstLayer) {
  const auto& f = fixture::small_blobs();
  const DomainDataset est_data =
      shift_domain(make_blobs(4, 2500, 8, 4.0, 41, "t"), fixture::affine_shift(8), "target").without_labels();
  const DomainDataset held =
      shift_domain(make_blobs(4, 2500, 8, 4.0, 42, "t"), fixture::affine_shift(8), "target").without_labels();
  const AdaptResult r = adapt(f.model, est_data, "target");
  const BnStats* stats = r.bank.find("bn1", "target");
  ASSERT_NE(stats, nullptr);

  const auto on_est = oracle::two_pass(normalized_at(r.model, "bn1", est_data.inputs).values(), 16);
  for (std::size_t j = 0; j < 16; ++j) {
    const double v = stats->variance[j];
    EXPECT_LT(std::abs(on_est.mean[j]), 1e-6);
    EXPECT_NEAR(on_est.variance[j], v / (v + 1e-5), 1e-4);
  }
  const auto on_held = oracle::two_pass(normalized_at(r.model, "bn1", held.inputs).values(), 16);
  for (std::size_t j = 0; j < 16; ++j) {
    EXPECT_LT(std::abs(on_held.mean[j]), 0.05) << j;
    EXPECT_NEAR(on_held.variance[j], 1.0, 0.1) << j;
  }
}

TEST(ApplyDomain, LastWriteWins) {
  const auto& f = fixture::small_blobs();
  BnStatsBank bank;
  store_estimate(bank, "t1", estimate_domain_stats(f.model, f.source));
  store_estimate(bank, "t2", estimate_domain_stats(f.model, f.target));
  const Model chained = apply_domain(apply_domain(f.model, bank, "t1"), bank, "t2");
  const Model direct = apply_domain(f.model, bank, "t2");
  EXPECT_EQ(chained.predict(f.target.inputs), direct.predict(f.target.inputs));
  EXPECT_EQ(chained.active_domain(), "t2");
}

TEST(ApplyDomain, MissingEntryNamesTheLayer) {
  const auto& f = fixture::small_blobs();
  BnStatsBank bank;
  EstimationOptions o;
  o.up_to_layer = "bn1";
  store_estimate(bank, "partial", estimate_domain_stats(f.model, f.target, o));
  try {
    apply_domain(f.model, bank, "partial");
    FAIL() << "expected IncompleteBankError";
  } catch (const IncompleteBankError& e) {
    EXPECT_NE(std::string(e.what()).find("bn2"), std::string::npos);
  }
  EXPECT_THROW(apply_domain(f.model, bank, "nobody"), IncompleteBankError);
}

TEST(Adapt, ThreeDomainsStayIsolated) {
  const auto& f = fixture::small_blobs();
  std::vector<DomainDataset> doms;
  for (int k = 0; k < 3; ++k) {
    doms.push_back(shift_domain(make_blobs(4, 50, 8, 4.0, 100 + k, "d"), fixture::affine_shift(8, k, 1.0 + k), "d" + std::to_string(k)));
  }
  BnStatsBank bank;
  for (const auto& d : doms) bank = adapt(f.model, d, d.domain_id, {}, bank).bank;
  ASSERT_EQ(bank.domains().size(), 3u);

  std::vector<Tensor> before;
  for (const auto& d : doms) before.push_back(apply_domain(f.model, bank, d.domain_id).predict(f.source.inputs));

  BnStatsBank perturbed;
  for (const auto& [key, stats] : bank.entries()) {
    BnStats s = stats;
    if (key.second == "d1")
      for (std::size_t j = 0; j < s.mean.size(); ++j) s.mean[j] += 1.0;
    perturbed.put(key.first, key.second, s);
  }
  EXPECT_EQ(apply_domain(f.model, perturbed, "d0").predict(f.source.inputs), before[0]);
  EXPECT_EQ(apply_domain(f.model, perturbed, "d2").predict(f.source.inputs), before[2]);
  EXPECT_NE(apply_domain(f.model, perturbed, "d1").predict(f.source.inputs), before[1]);
}

TEST(Adapt, PreservesEveryParameterAndRunningStatistic) {
  const auto& f = fixture::small_blobs();
  const AdaptResult r = adapt(f.model, f.target, "target");
  ASSERT_EQ(r.model.layers().size(), f.model.layers().size());
  for (std::size_t i = 0; i < f.model.layers().size(); ++i) {
    const auto a = parameters(f.model.layers()[i].layer);
    const auto b = parameters(r.model.layers()[i].layer);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t p = 0; p < a.size(); ++p) EXPECT_EQ(*a[p], *b[p]);
  }
  for (const auto& name : f.model.bn_names()) {
    EXPECT_EQ(r.model.bn(name).running_mean, f.model.bn(name).running_mean);
    EXPECT_EQ(r.model.bn(name).running_var, f.model.bn(name).running_var);
  }
}

TEST(Adapt, IsDeterministic) {
  const auto& f = fixture::small_blobs();
  EXPECT_EQ(adapt(f.model, f.target, "target").bank, adapt(f.model, f.target, "target").bank);
}

TEST(Adapt, OnSourceDataStaysCloseToTheEvalModel) {
  const auto& f = fixture::small_blobs();
  const Model a = adapt(f.model, f.source, "source").model;
  const Tensor la = a.predict(f.source.inputs), lb = f.model.predict(f.source.inputs);
  double scale = 0.0;
  for (double v : lb.values()) scale = std::max(scale, std::abs(v));
  EXPECT_LT(max_abs_diff(la, lb), 0.1 * scale);
  EXPECT_NEAR(evaluate(a, f.source).accuracy, evaluate(f.model, f.source).accuracy, 0.02);
}

TEST(Adapt, ImprovesShiftedTarget) {
  const auto& f = fixture::small_blobs();
  EXPECT_GT(evaluate(adapt(f.model, f.target, "target").model, f.target).accuracy,
            evaluate(f.model, f.target).accuracy);
}

TEST(Bank, RejectsNegativeVarianceAndMismatchedLengths) {
  BnStatsBank bank;
  EXPECT_THROW(bank.put("bn1", "d", {Tensor::vector({0.0}), Tensor::vector({-1.0}), 3}), DomainError);
  EXPECT_THROW(bank.put("bn1", "d", {Tensor::vector({0.0, 1.0}), Tensor::vector({1.0}), 3}), DimensionError);
  const auto& f = fixture::small_blobs();
  bank.put("bn1", "d", {Tensor::vector({0.0}), Tensor::vector({1.0}), 3});
  EXPECT_ANY_THROW(bank.validate_against(f.model));
}
