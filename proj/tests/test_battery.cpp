#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "battopt/battery.hpp"
#include "battopt/csv.hpp"

using namespace battopt;

namespace {

BatterySpec reference_spec() { return BatterySpec{}; }

TimeGrid grid_of(std::size_t steps, double dt = 1.0) { return TimeGrid{steps, dt}; }

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

BatterySpec random_spec(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> eff(0.5, 1.0);
  std::uniform_real_distribution<double> pw(1.0, 50.0);
  std::uniform_real_distribution<double> cap(5.0, 200.0);
  std::uniform_real_distribution<double> frac(0.0, 1.0);
  BatterySpec s;
  s.eta_c = eff(rng);
  s.eta_d = eff(rng);
  s.p_max = pw(rng);
  s.e_max = cap(rng);
  s.e0 = frac(rng) * s.e_max;
  return s;
}

Schedule random_schedule(std::mt19937_64& rng, const BatterySpec& spec, const TimeGrid& grid) {
  std::uniform_real_distribution<double> u(0.0, spec.p_max);
  Schedule s = Schedule::zeros(grid);
  for (Eigen::Index k = 0; k < grid.size(); ++k) {
    s.pc[k] = u(rng);
    s.pd[k] = u(rng);
  }
  return s;
}

}  // namespace

TEST(Spec, RejectsInvalidParameters) {
  BatterySpec s;
  s.eta_c = 0.0;
  EXPECT_THROW(s.validate(), InvalidSpec);
  s = BatterySpec{};
  s.eta_d = 1.1;
  EXPECT_THROW(s.validate(), InvalidSpec);
  s = BatterySpec{};
  s.e0 = 61.0;
  EXPECT_THROW(s.validate(), InvalidSpec);
  s = BatterySpec{};
  s.p_max = 0.0;
  EXPECT_THROW(s.validate(), InvalidSpec);
  EXPECT_NO_THROW(BatterySpec{}.validate());
  EXPECT_THROW((TimeGrid{0, 1.0}.validate()), InvalidSpec);
  EXPECT_THROW((TimeGrid{3, 0.0}.validate()), InvalidSpec);
}

TEST(Accumulation, SmallExamples) {
  Matrix a2(2, 2);
  a2 << 1, 0, 1, 1;
  EXPECT_EQ(accumulation_matrix(grid_of(2)), a2);
  Matrix a3(3, 3);
  a3 << 0.5, 0, 0, 0.5, 0.5, 0, 0.5, 0.5, 0.5;
  EXPECT_EQ(accumulation_matrix(grid_of(3, 0.5)), a3);
  const Matrix a24 = accumulation_matrix(grid_of(24));
  EXPECT_DOUBLE_EQ(a24.row(23).sum(), 24.0);
  const Vector ones = a24 * Vector::Ones(24);
  for (Eigen::Index l = 0; l < 24; ++l) EXPECT_DOUBLE_EQ(ones[l], static_cast<double>(l + 1));
}

TEST(Accumulation, MatrixMatchesRecurrence) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.0, 10.0);
  for (std::size_t t : {1u, 5u, 24u, 97u}) {
    for (double dt : {0.25, 1.0, 1.5}) {
      const TimeGrid g = grid_of(t, dt);
      Vector x(g.size());
      for (Eigen::Index k = 0; k < x.size(); ++k) x[k] = n(rng);
      const Vector dense = accumulation_matrix(g) * x;
      const Vector rec = detail::accumulate(x, dt);
      EXPECT_LE((dense - rec).cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, rec.cwiseAbs().maxCoeff()));
    }
  }
}

TEST(Simulators, StandardExamples) {
  const auto spec = reference_spec();
  const auto g = grid_of(1);
  EXPECT_NEAR(simulate_standard(spec, g, {vec({10}), vec({0})}).e[0], 39.5, 1e-12);
  EXPECT_NEAR(simulate_standard(spec, g, {vec({0}), vec({10})}).e[0], 30.0 - 10.0 / 0.95, 1e-12);
  EXPECT_NEAR(simulate_standard(spec, g, {vec({0}), vec({10})}).e[0], 19.4737, 1e-4);
  const auto idle = simulate_standard(spec, grid_of(24), Schedule::zeros(grid_of(24)));
  EXPECT_TRUE((idle.e.array() == 30.0).all());
  EXPECT_EQ(idle.model, ModelKind::standard);
}

TEST(Simulators, StandardRejectsBadInput) {
  const auto spec = reference_spec();
  const auto g = grid_of(2);
  EXPECT_THROW(simulate_standard(spec, g, {vec({1, 0}), vec({1, 0})}), ComplementarityViolation);
  EXPECT_THROW(simulate_standard(spec, g, {vec({16, 0}), vec({0, 0})}), BoundViolation);
  EXPECT_THROW(simulate_standard(spec, g, {vec({-1, 0}), vec({0, 0})}), BoundViolation);
  EXPECT_THROW(simulate_standard(spec, g, {vec({1}), vec({0})}), LengthMismatch);
  EXPECT_NO_THROW(simulate_standard(spec, g, {vec({1e-5, 0}), vec({1e-5, 0})}));
}

TEST(Simulators, RelaxedExamples) {
  const auto spec = reference_spec();
  EXPECT_NEAR(simulate_relaxed(spec, grid_of(1), {vec({5}), vec({5})}).e[0],
              30 + 0.95 * 5 - 5 / 0.95, 1e-12);
  EXPECT_NEAR(simulate_relaxed(spec, grid_of(1), {vec({5}), vec({5})}).e[0], 29.4868, 1e-4);

  const auto g = grid_of(6);
  Schedule half{Vector::Constant(6, 7.5), Vector::Constant(6, 7.5)};
  const Vector e = simulate_relaxed(spec, g, half).e;
  const double drop = 7.5 * (1 / 0.95 - 0.95);
  EXPECT_NEAR(e[0], 30 - drop, 1e-12);
  for (Eigen::Index k = 1; k < 6; ++k) EXPECT_NEAR(e[k - 1] - e[k], drop, 1e-12);

  Schedule comp{vec({3, 0, 1}), vec({0, 2, 0})};
  EXPECT_EQ(simulate_relaxed(spec, grid_of(3), comp).e, simulate_standard(spec, grid_of(3), comp).e);
}

TEST(Simulators, SimplifiedExamples) {
  const auto spec = reference_spec();
  EXPECT_NEAR(simulate_simplified(spec, grid_of(1), {vec({-10})}, 1.0013158).e[0], 19.9868, 1e-4);
  const auto g = grid_of(5);
  const double eta = symmetric_eta(spec).eta;
  EXPECT_TRUE((simulate_simplified(spec, g, {Vector::Zero(5)}, eta).e.array() == 30.0).all());
  EXPECT_THROW(simulate_simplified(spec, g, {Vector::Zero(5)}, 0.9), EtaOutOfRange);
  EXPECT_THROW(simulate_simplified(spec, g, {Vector::Zero(5)}, 1.06), EtaOutOfRange);
  EXPECT_THROW(simulate_simplified(spec, g, {Vector::Constant(5, 16.0)}, eta), BoundViolation);
}

TEST(Simulators, LosslessModelsCoincide) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    BatterySpec spec = random_spec(rng);
    spec.eta_c = spec.eta_d = 1.0;
    const auto g = grid_of(1 + static_cast<std::size_t>(trial % 12));
    const Schedule relaxed = random_schedule(rng, spec, g);
    const NetSchedule net = net_of(relaxed);
    const Schedule pair = split_net(spec, net);
    const Vector er = simulate_relaxed(spec, g, relaxed).e;
    const Vector e = simulate_standard(spec, g, pair).e;
    const Vector es = simulate_simplified(spec, g, net, 1.0).e;
    EXPECT_LE((er - e).cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, spec.e_max));
    EXPECT_LE((es - e).cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, spec.e_max));
  }
}

TEST(Simulators, StepChangeBounded) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const BatterySpec spec = random_spec(rng);
    const auto g = grid_of(10, 0.5);
    const Schedule pair = split_net(spec, net_of(random_schedule(rng, spec, g)));
    const Vector e = simulate_standard(spec, g, pair).e;
    double prev = spec.e0;
    for (Eigen::Index k = 0; k < e.size(); ++k) {
      EXPECT_LE(std::abs(e[k] - prev), spec.max_step_change(g.dt) * (1 + 1e-12));
      prev = e[k];
    }
  }
}

TEST(Simulators, AffineInInputs) {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> w(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const BatterySpec spec = random_spec(rng);
    const auto g = grid_of(8);
    const Schedule x = random_schedule(rng, spec, g);
    const Schedule y = random_schedule(rng, spec, g);
    const double a = w(rng);
    const Schedule mix{a * x.pc + (1 - a) * y.pc, a * x.pd + (1 - a) * y.pd};
    const Vector lhs = simulate_relaxed(spec, g, mix).e;
    const Vector rhs = a * simulate_relaxed(spec, g, x).e + (1 - a) * simulate_relaxed(spec, g, y).e;
    EXPECT_LE((lhs - rhs).cwiseAbs().maxCoeff(), 1e-10 * spec.e_max);

    const double eta = symmetric_eta(spec).eta;
    const NetSchedule nx = net_of(x);
    const NetSchedule ny = net_of(y);
    const Vector ls = simulate_simplified(spec, g, {a * nx.pb + (1 - a) * ny.pb}, eta).e;
    const Vector rs = a * simulate_simplified(spec, g, nx, eta).e +
                      (1 - a) * simulate_simplified(spec, g, ny, eta).e;
    EXPECT_LE((ls - rs).cwiseAbs().maxCoeff(), 1e-10 * spec.e_max);
  }
}

TEST(SymmetricEta, Examples) {
  const auto p = symmetric_eta(reference_spec());
  EXPECT_NEAR(p.eta, 1.0013, 5e-5);
  EXPECT_NEAR(p.alpha, 0.0513, 5e-5);
  EXPECT_NEAR(p.eta - 0.95, 1 / 0.95 - p.eta, 1e-15);

  BatterySpec lossless;
  lossless.eta_c = lossless.eta_d = 1.0;
  EXPECT_EQ(symmetric_eta(lossless).eta, 1.0);
  EXPECT_EQ(symmetric_eta(lossless).alpha, 0.0);

  BatterySpec uneven;
  uneven.eta_c = 0.9;
  uneven.eta_d = 0.8;
  EXPECT_NEAR(symmetric_eta(uneven).eta, 1.075, 1e-12);
  EXPECT_NEAR(symmetric_eta(uneven).alpha, 0.175, 1e-12);
}

TEST(Split, Examples) {
  const Schedule s = split_net({vec({3, -2, 0})});
  EXPECT_EQ(s.pc, vec({3, 0, 0}));
  EXPECT_EQ(s.pd, vec({0, 2, 0}));
  const Schedule z = split_net({Vector::Zero(4)});
  EXPECT_TRUE(z.pc.isZero(0.0) && z.pd.isZero(0.0));
  EXPECT_THROW(split_net(reference_spec(), {vec({16})}), BoundViolation);

  EXPECT_EQ(net_of({vec({3, 0}), vec({0, 2})}).pb, vec({3, -2}));
  EXPECT_EQ(net_of({vec({5}), vec({5})}).pb, vec({0}));
}

TEST(Split, DominatedByRelaxedInputs) {
  // Exhaustive over a coarse grid of (pc, pd) pairs at T = 2.
  const double levels[] = {0.0, 3.75, 7.5, 11.25, 15.0};
  for (double a : levels)
    for (double b : levels)
      for (double c : levels)
        for (double d : levels) {
          const Schedule s{vec({a, c}), vec({b, d})};
          const Schedule pair = split_net(net_of(s));
          EXPECT_TRUE((pair.pc.array() <= s.pc.array()).all());
          EXPECT_TRUE((pair.pd.array() <= s.pd.array()).all());
          EXPECT_TRUE((pair.pc.array() * pair.pd.array() == 0.0).all());
          EXPECT_EQ(net_of(pair).pb, net_of(s).pb);
        }
}

TEST(Mismatch, ClosedFormsMatchSimulators) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 1000; ++trial) {
    const BatterySpec spec = random_spec(rng);
    const auto g = grid_of(1 + static_cast<std::size_t>(trial % 24), trial % 2 ? 1.0 : 0.25);
    const Schedule relaxed = random_schedule(rng, spec, g);
    const NetSchedule net = net_of(relaxed);
    const Schedule pair = split_net(net);
    const double eta = symmetric_eta(spec).eta;
    const Vector e = simulate_standard(spec, g, pair).e;

    const Vector dr = relaxed_mismatch(spec, g, relaxed);
    EXPECT_LE((dr - (e - simulate_relaxed(spec, g, relaxed).e)).cwiseAbs().maxCoeff(), 1e-9);
    const Vector ds = simplified_mismatch(spec, g, net, eta);
    EXPECT_LE((ds - (simulate_simplified(spec, g, net, eta).e - e)).cwiseAbs().maxCoeff(), 1e-9);

    const NetEfficiency sym = symmetric_eta(spec);
    const Vector abs_form = sym.alpha * (accumulation_matrix(g) * net.pb.cwiseAbs());
    EXPECT_LE((ds - abs_form).cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, abs_form.maxCoeff()));

    std::uniform_real_distribution<double> u(spec.eta_c, 1.0 / spec.eta_d);
    const double other = u(rng);
    const Vector dg = simplified_mismatch(spec, g, net, other);
    EXPECT_LE((dg - (simulate_simplified(spec, g, net, other).e - e)).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Mismatch, NonNegativeAndNondecreasing) {
  std::mt19937_64 rng(19);
  for (int trial = 0; trial < 500; ++trial) {
    const BatterySpec spec = random_spec(rng);
    const auto g = grid_of(12);
    const Schedule relaxed = random_schedule(rng, spec, g);
    const NetSchedule net = net_of(relaxed);
    for (const Vector& d : {relaxed_mismatch(spec, g, relaxed),
                            simplified_mismatch(spec, g, net, symmetric_eta(spec).eta)}) {
      EXPECT_GE(d[0], 0.0);
      for (Eigen::Index k = 1; k < d.size(); ++k) EXPECT_GE(d[k], d[k - 1]);
    }
  }
}

TEST(Mismatch, ZeroCases) {
  const auto spec = reference_spec();
  const auto g = grid_of(3);
  EXPECT_TRUE(relaxed_mismatch(spec, g, {vec({3, 0, 1}), vec({0, 2, 0})}).isZero(0.0));
  EXPECT_TRUE(simplified_mismatch(spec, g, {Vector::Zero(3)}, symmetric_eta(spec).eta).isZero(0.0));
}

TEST(Mismatch, WorstCaseBounds) {
  const auto spec = reference_spec();
  const auto g = grid_of(24);
  const Schedule half{Vector::Constant(24, 7.5), Vector::Constant(24, 7.5)};
  const Vector dr = relaxed_mismatch(spec, g, half);
  const Vector bound = relaxed_mismatch_bound(spec, g);
  for (Eigen::Index l = 0; l < 24; ++l) {
    EXPECT_NEAR(dr[l], (1 / 0.95 - 0.95) * (l + 1) * 7.5, 1e-9);
    EXPECT_NEAR(bound[l], dr[l], 1e-9);
  }
  const double alpha = symmetric_eta(spec).alpha;
  for (double sign : {1.0, -1.0}) {
    const Vector ds = simplified_mismatch(spec, g, {Vector::Constant(24, sign * 15.0)},
                                          symmetric_eta(spec).eta);
    for (Eigen::Index l = 0; l < 24; ++l) EXPECT_NEAR(ds[l], alpha * (l + 1) * 15.0, 1e-9);
  }
  EXPECT_NEAR(simplified_mismatch_bound(spec, g)[23], relaxed_mismatch_bound(spec, g)[23], 1e-9);
  EXPECT_NEAR(relaxed_mismatch_bound(spec, g, false)[23], 2 * bound[23], 1e-9);
}

TEST(Mismatch, CuttingPlaneBoundIsTightByGridSearch) {
  std::mt19937_64 rng(23);
  for (std::size_t t = 1; t <= 3; ++t) {
    const BatterySpec spec = random_spec(rng);
    const auto g = grid_of(t, 0.5);
    const int levels = t == 3 ? 12 : 24;
    const double h = spec.p_max / levels;
    // Enumerate every per-step pair with pc + pd <= p_max.
    std::vector<std::pair<double, double>> pairs;
    for (int a = 0; a <= levels; ++a)
      for (int b = 0; a + b <= levels; ++b) pairs.emplace_back(a * h, b * h);
    double best = 0.0;
    std::vector<std::size_t> idx(t, 0);
    while (true) {
      Schedule s = Schedule::zeros(g);
      for (std::size_t k = 0; k < t; ++k) {
        s.pc[static_cast<Eigen::Index>(k)] = pairs[idx[k]].first;
        s.pd[static_cast<Eigen::Index>(k)] = pairs[idx[k]].second;
      }
      best = std::max(best, relaxed_mismatch(spec, g, s)[static_cast<Eigen::Index>(t - 1)]);
      std::size_t k = 0;
      while (k < t && ++idx[k] == pairs.size()) idx[k++] = 0;
      if (k == t) break;
    }
    const double bound = relaxed_mismatch_bound(spec, g)[static_cast<Eigen::Index>(t - 1)];
    EXPECT_NEAR(best, bound, 1e-9 * std::max(1.0, bound));
  }
}

TEST(Sandwich, RandomSchedules) {
  std::mt19937_64 rng(29);
  for (int trial = 0; trial < 10000; ++trial) {
    const BatterySpec spec = random_spec(rng);
    const auto g = grid_of(1 + static_cast<std::size_t>(trial % 24));
    const Schedule relaxed = random_schedule(rng, spec, g);
    const NetSchedule net = net_of(relaxed);
    const Vector er = simulate_relaxed(spec, g, relaxed).e;
    const Vector e = simulate_standard(spec, g, split_net(net)).e;
    const Vector es = simulate_simplified(spec, g, net, symmetric_eta(spec).eta).e;
    ASSERT_GE((e - er).minCoeff(), -1e-9);
    ASSERT_GE((es - e).minCoeff(), -1e-9);
  }
}

TEST(Limits, Examples) {
  const auto spec = reference_spec();
  SocTrajectory flat{Vector::Constant(24, 30.0), ModelKind::standard};
  EXPECT_TRUE(check_soc_limits(flat, spec, 1e-6).pass);

  SocTrajectory over{vec({61}), ModelKind::standard};
  const auto r = check_soc_limits(over, spec, 1e-6);
  EXPECT_FALSE(r.pass);
  ASSERT_TRUE(r.first_violation.has_value());
  EXPECT_EQ(*r.first_violation, 0u);
  EXPECT_DOUBLE_EQ(r.worst_excursion, 1.0);
  EXPECT_DOUBLE_EQ(r.worst_upper, 1.0);

  SocTrajectory under{vec({1, -0.5, -2}), ModelKind::relaxed};
  const auto u = check_soc_limits(under, spec, 1e-6);
  EXPECT_EQ(*u.first_violation, 1u);
  EXPECT_DOUBLE_EQ(u.worst_lower, 2.0);
}

TEST(Trajectory, CsvColumns) {
  const auto spec = reference_spec();
  const auto g = grid_of(3, 0.5);
  const auto traj = simulate_relaxed(spec, g, {vec({1, 2, 3}), vec({0.5, 0, 0})});
  std::stringstream ss;
  write_trajectory_csv(ss, traj, g);
  const CsvTable t = read_csv(ss);
  ASSERT_EQ(t.header, (std::vector<std::string>{"step_index", "time_h", "e_kwh", "model_tag"}));
  ASSERT_EQ(t.cells.size(), 3u);
  EXPECT_EQ(t.cells[2][3], "relaxed");
  EXPECT_DOUBLE_EQ(t.numbers("time_h")[2], 1.5);
  const auto e = t.numbers("e_kwh");
  for (Eigen::Index k = 0; k < 3; ++k) EXPECT_NEAR(e[static_cast<std::size_t>(k)], traj.e[k], 1e-9);
}

TEST(ModelKind, RoundTrip) {
  for (auto k : {ModelKind::standard, ModelKind::relaxed, ModelKind::simplified}) {
    EXPECT_EQ(parse_model_kind(to_string(k)), k);
  }
  EXPECT_FALSE(parse_model_kind("exact").has_value());
}
