#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "avmfg/discretization.hpp"
#include "avmfg/errors.hpp"

using namespace avmfg;

namespace {

double bump(double x) {
  return 0.05 + 0.9 * std::exp(-std::pow((x - 0.5) / 0.1, 2));
}

// Random iterate with densities, speeds and values well inside their ranges.
Eigen::VectorXd random_iterate(const ProblemSpec& spec, std::mt19937_64& rng) {
  const UnknownLayout L(spec.grid);
  std::uniform_real_distribution<double> R(0.1, 0.9), U(0.0, 1.0), V(-0.3, 0.3);
  Eigen::VectorXd w(L.size());
  for (int n = 0; n <= L.nt(); ++n) {
    for (int j = 0; j < L.nx(); ++j) {
      w[L.density(n, j)] = R(rng);
      w[L.value(n, j)] = V(rng);
      if (n < L.nt()) w[L.speed(n, j)] = U(rng);
    }
  }
  return w;
}

// True when no Legendre evaluation at w sits within finite-difference reach
// of a clamp kink, so the one-sided convention cannot show up.
bool away_from_kinks(const Eigen::VectorXd& w, const ProblemSpec& spec,
                     double h) {
  const UnknownLayout L(spec.grid);
  const double dx = spec.grid.dx();
  for (int n = 0; n < L.nt(); ++n) {
    for (int j = 0; j < L.nx(); ++j) {
      const double p = (w[L.value(n + 1, j + 1)] - w[L.value(n + 1, j)]) / dx;
      const double rho = w[L.density(n, j)];
      const LegendrePoint mid = spec.cost.legendre(p, rho);
      for (double dp : {-2 * h / dx, 2 * h / dx}) {
        for (double dr : {-h, h}) {
          const LegendrePoint q = spec.cost.legendre(p + dp, rho + dr);
          if (q.clamped != mid.clamped) return false;
          if (mid.clamped && q.speed != mid.speed) return false;
        }
      }
    }
  }
  return true;
}

}  // namespace

TEST_SUITE("discretization") {

TEST_CASE("CFL ratio") {
  const auto g = SpaceTimeGrid::make(1, 3, 120, 480);
  CHECK(check_cfl(g, 1).ratio == doctest::Approx(0.75));
  CHECK(check_cfl(g, 1).pass);
  const auto coarse_t = SpaceTimeGrid::make(1, 3, 120, 100);
  CHECK(check_cfl(coarse_t, 1).ratio == doctest::Approx(3.6));
  CHECK_FALSE(check_cfl(coarse_t, 1).pass);
  CHECK(check_cfl(coarse_t, 0).ratio == 0.0);
  CHECK(check_cfl(coarse_t, 0).pass);
}

TEST_CASE("cell averages are exact for polynomials") {
  const auto g = SpaceTimeGrid::make(2, 1, 8, 4);
  const auto avg = cell_averages(g, [](double x) { return 3 * x * x - x + 1; });
  for (int j = 0; j < 8; ++j) {
    const double a = j * 0.25, b = a + 0.25;
    const double exact = ((b * b * b - a * a * a) - 0.5 * (b * b - a * a) + (b - a)) / 0.25;
    CHECK(avg[j] == doctest::Approx(exact).epsilon(1e-14));
  }
}

TEST_CASE("unknown layout and pack/unpack") {
  const auto g = SpaceTimeGrid::make(1, 1, 6, 5);
  const UnknownLayout L(g);
  CHECK(L.size() == 3 * 6 * 5 + 2 * 6);
  CHECK(L.density(0, -1) == 5);
  CHECK(L.speed(0, 0) == 36);
  CHECK(L.value(5, 5) == L.size() - 1);
  CHECK(L.row_block(L.hjb_row(2, 3)).first == UnknownLayout::Block::kHjb);
  CHECK(L.row_block(L.terminal_row(4)).second == 4);

  const auto spec = ProblemSpec::make(g, CostModel::separable(1, 1), bump);
  std::mt19937_64 rng(1);
  const Eigen::VectorXd w = random_iterate(spec, rng);
  const SolutionTriple s = unpack(w, spec);
  CHECK(s.speed.last_level_derived());
  CHECK(s.value.staggering() == Staggering::kLeftNode);
  CHECK((pack(s) - w).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(unpack(Eigen::VectorXd::Zero(5), spec), DimensionError);
}

TEST_CASE("Lax-Friedrichs step") {
  const auto g = SpaceTimeGrid::make(1, 1, 10, 20);
  std::vector<double> c(10, 0.4), v(10, 0.8);
  for (double r : lf_step(c, v, g)) CHECK(r == doctest::Approx(0.4).epsilon(1e-15));

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> R(0, 1);
  std::vector<double> rho(10), zero(10, 0.0);
  for (auto& r : rho) r = R(rng);
  const auto avg = lf_step(rho, zero, g);
  for (int j = 0; j < 10; ++j) {
    CHECK(avg[j] == 0.5 * (rho[g.wrap(j - 1)] + rho[g.wrap(j + 1)]));
  }

  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> u(10);
    for (auto& r : rho) r = R(rng);
    for (auto& x : u) x = R(rng);
    const auto next = lf_step(rho, u, g);
    const double before = std::accumulate(rho.begin(), rho.end(), 0.0);
    const double after = std::accumulate(next.begin(), next.end(), 0.0);
    CHECK(std::abs(after - before) <= 1e-13 * before);
  }

  std::vector<double> fast(10, 2.5);
  CHECK_THROWS_AS(lf_step(rho, fast, g), ConfigError);
  CHECK_THROWS_AS(lf_step(std::vector<double>(9), v, g), DimensionError);
}

TEST_CASE("HJB backward step closed forms") {
  const auto g = SpaceTimeGrid::make(1, 1, 8, 16);
  std::vector<double> rho(8), zero(8, 0.0), flat(8, 2.7);
  for (int j = 0; j < 8; ++j) rho[j] = 0.1 * j;

  const auto sep = hjb_backstep(zero, rho, CostModel::separable(1, 1), g);
  for (int j = 0; j < 8; ++j) {
    CHECK(sep.value[j] == doctest::Approx(g.dt() * (rho[j] - 0.5)).epsilon(1e-14));
    CHECK(sep.speed[j] == 1.0);
  }
  const auto lwr_model = CostModel::lwr_tracking(1, 1);
  const auto lwr = hjb_backstep(zero, rho, lwr_model, g);
  for (int j = 0; j < 8; ++j) {
    CHECK(lwr.value[j] == 0.0);
    CHECK(lwr.speed[j] == doctest::Approx(1 - rho[j]));
  }
  const auto non_model = CostModel::nonseparable(1, 1);
  for (auto stencil : {HjbStencil::kUpwind, HjbStencil::kPrinted}) {
    const auto non = hjb_backstep(flat, rho, non_model, g, stencil);
    for (int j = 0; j < 8; ++j) {
      CHECK(non.speed[j] == doctest::Approx(non_model.equilibrium_speed(rho[j])));
    }
  }
}

TEST_CASE("upwind and printed stencils read opposite neighbors") {
  const auto g = SpaceTimeGrid::make(1, 1, 4, 8);
  const std::vector<double> v{0.0, 0.1, 0.3, 0.0}, rho(4, 0.5);
  const auto model = CostModel::separable(1, 1);
  const auto up = hjb_backstep(v, rho, model, g, HjbStencil::kUpwind);
  const auto pr = hjb_backstep(v, rho, model, g, HjbStencil::kPrinted);
  for (int j = 0; j < 4; ++j) {
    CHECK(up.speed[j] == model.optimal_speed((v[(j + 1) % 4] - v[j]) / g.dx(), 0.5));
    CHECK(pr.speed[j] == model.optimal_speed((v[j] - v[(j + 3) % 4]) / g.dx(), 0.5));
  }
}

TEST_CASE("uniform separable state is an exact discrete solution") {
  const double c = 0.37, T = 2;
  const auto g = SpaceTimeGrid::make(1, T, 12, 30);
  const auto spec = ProblemSpec::make(g, CostModel::separable(1, 1),
                                      [c](double) { return c; });
  const UnknownLayout L(g);
  Eigen::VectorXd w(L.size());
  for (int n = 0; n <= g.num_steps; ++n) {
    for (int j = 0; j < g.num_cells; ++j) {
      w[L.density(n, j)] = c;
      w[L.value(n, j)] = (T - g.time(n)) * (c - 0.5);
      if (n < g.num_steps) w[L.speed(n, j)] = 1.0;
    }
  }
  CHECK(assemble_residual(w, spec).cwiseAbs().maxCoeff() <= 1e-12);

  // The same triple built by stepping the schemes.
  std::vector<double> rho(12, c), v(12, 0.0);
  for (int n = 0; n < g.num_steps; ++n) rho = lf_step(rho, std::vector<double>(12, 1.0), g);
  for (double r : rho) CHECK(r == doctest::Approx(c).epsilon(1e-14));
  for (int n = g.num_steps - 1; n >= 0; --n) {
    v = hjb_backstep(v, std::vector<double>(12, c), spec.cost, g).value;
  }
  for (int j = 0; j < 12; ++j) CHECK(v[j] == doctest::Approx(w[L.value(0, j)]).epsilon(1e-13));
}

TEST_CASE("residual rows vanish exactly for stepped levels") {
  const auto g = SpaceTimeGrid::make(1, 1, 10, 20);
  for (const auto& model : {CostModel::lwr_tracking(1, 1), CostModel::separable(1, 1),
                            CostModel::nonseparable(1, 1)}) {
    const auto spec = ProblemSpec::make(g, model, bump,
                                        [](double x) { return 0.2 * std::sin(6.283185307179586 * x); });
    const UnknownLayout L(g);
    std::mt19937_64 rng(7);
    Eigen::VectorXd w = random_iterate(spec, rng);
    // Build a consistent triple: V by backward stepping on the random rho,
    // then rho by forward stepping with the resulting speeds.
    for (int j = 0; j < 10; ++j) w[L.value(g.num_steps, j)] = spec.terminal_nodes[j];
    for (int j = 0; j < 10; ++j) w[L.density(0, j)] = spec.initial_cells[j];
    for (int n = 0; n < g.num_steps; ++n) {
      std::vector<double> r(10), u(10);
      for (int j = 0; j < 10; ++j) {
        r[j] = w[L.density(n, j)];
        u[j] = w[L.speed(n, j)];
      }
      const auto next = lf_step(r, u, g);
      for (int j = 0; j < 10; ++j) w[L.density(n + 1, j)] = next[j];
    }
    Eigen::VectorXd F = assemble_residual(w, spec);
    for (int n = 0; n < g.num_steps; ++n) {
      for (int j = 0; j < 10; ++j) CHECK(std::abs(F[L.continuity_row(n, j)]) <= 1e-15);
    }
    for (int n = g.num_steps - 1; n >= 0; --n) {
      std::vector<double> vn(10), r(10);
      for (int j = 0; j < 10; ++j) {
        vn[j] = w[L.value(n + 1, j)];
        r[j] = w[L.density(n, j)];
      }
      const auto lvl = hjb_backstep(vn, r, model, g);
      for (int j = 0; j < 10; ++j) {
        w[L.value(n, j)] = lvl.value[j];
        w[L.speed(n, j)] = lvl.speed[j];
      }
    }
    F = assemble_residual(w, spec);
    for (int n = 0; n < g.num_steps; ++n) {
      for (int j = 0; j < 10; ++j) {
        CHECK(std::abs(F[L.hjb_row(n, j)]) <= 1e-15);
        CHECK(F[L.speed_row(n, j)] == 0.0);
      }
    }
    for (int j = 0; j < 10; ++j) {
      CHECK(F[L.initial_row(j)] == 0.0);
      CHECK(F[L.terminal_row(j)] == 0.0);
    }
  }
}

TEST_CASE("Jacobian matches central differences away from clamp kinks") {
  const double h = 1e-6;
  for (const auto& model : {CostModel::lwr_tracking(1, 1), CostModel::separable(1, 1),
                            CostModel::nonseparable(1, 1)}) {
    for (int nx : {6, 10}) {
      const auto g = SpaceTimeGrid::make(1, 1, nx, 2 * nx);
      const auto spec = ProblemSpec::make(g, model, bump);
      std::mt19937_64 rng(11 + nx);
      int tested = 0;
      for (int attempt = 0; attempt < 20000 && tested < 200; ++attempt) {
        Eigen::VectorXd w = random_iterate(spec, rng);
        const UnknownLayout L(g);
        for (int k = L.value_offset(); k < L.size(); ++k) w[k] *= 0.05;
        if (!away_from_kinks(w, spec, h)) continue;
        const SparseMatrix J = assemble_jacobian(w, spec);
        Eigen::VectorXd d = Eigen::VectorXd::Zero(L.size());
        std::uniform_real_distribution<double> D(-1, 1);
        for (int k = 0; k < L.size(); ++k) d[k] = D(rng);
        const Eigen::VectorXd fd =
            (assemble_residual(w + h * d, spec) - assemble_residual(w - h * d, spec)) / (2 * h);
        const Eigen::VectorXd jd = J * d;
        CHECK((fd - jd).cwiseAbs().maxCoeff() <= 1e-5);
        ++tested;
      }
      CHECK(tested == 200);
    }
  }
}

TEST_CASE("Jacobian columns match single-entry differences") {
  const double h = 1e-6;
  const auto g = SpaceTimeGrid::make(1, 1, 6, 12);
  const auto spec = ProblemSpec::make(g, CostModel::nonseparable(1, 1), bump);
  const UnknownLayout L(g);
  std::mt19937_64 rng(21);
  Eigen::VectorXd w;
  do {
    w = random_iterate(spec, rng);
    for (int k = L.value_offset(); k < L.size(); ++k) w[k] *= 0.01;
  } while (!away_from_kinks(w, spec, h));
  const Eigen::MatrixXd J = Eigen::MatrixXd(assemble_jacobian(w, spec));
  for (int c = 0; c < L.size(); ++c) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(L.size());
    e[c] = h;
    const Eigen::VectorXd fd =
        (assemble_residual(w + e, spec) - assemble_residual(w - e, spec)) / (2 * h);
    CHECK((fd - J.col(c)).cwiseAbs().maxCoeff() <= 1e-5);
  }
}

TEST_CASE("clamped speed rows ignore the costate") {
  const auto g = SpaceTimeGrid::make(1, 1, 6, 12);
  const auto spec = ProblemSpec::make(g, CostModel::separable(1, 1), bump);
  const UnknownLayout L(g);
  // V = 0 gives p = 0 and the separable minimizer sits at u_max.
  Eigen::VectorXd w = Eigen::VectorXd::Constant(L.size(), 0.3);
  for (int k = L.value_offset(); k < L.size(); ++k) w[k] = 0.0;
  const SparseMatrix J = assemble_jacobian(w, spec);
  for (int n = 0; n < g.num_steps; ++n) {
    for (int j = 0; j < g.num_cells; ++j) {
      const int r = L.speed_row(n, j);
      for (SparseMatrix::InnerIterator it(J, r); it; ++it) {
        if (it.col() >= L.value_offset()) CHECK(it.value() == 0.0);
      }
    }
  }
}

TEST_CASE("Jacobian sparsity structure") {
  const auto g = SpaceTimeGrid::make(1, 1, 8, 8);
  const auto spec = ProblemSpec::make(g, CostModel::nonseparable(1, 1), bump);
  const UnknownLayout L(g);
  std::mt19937_64 rng(5);
  const Eigen::VectorXd w = random_iterate(spec, rng);
  const SparseMatrix J = assemble_jacobian(w, spec);
  for (int j = 0; j < 8; ++j) {
    int count = 0;
    for (SparseMatrix::InnerIterator it(J, L.initial_row(j)); it; ++it) {
      ++count;
      CHECK(it.col() == L.density(0, j));
      CHECK(it.value() == 1.0);
    }
    CHECK(count == 1);
  }

  // Column pattern of row (n, j) shifted by one cell equals the pattern of
  // row (n, j + 1), for every block.
  auto shift = [&](int col) {
    if (col < L.speed_offset()) return L.density(col / 8, col % 8 + 1);
    if (col < L.value_offset()) {
      const int k = col - L.speed_offset();
      return L.speed(k / 8, k % 8 + 1);
    }
    const int k = col - L.value_offset();
    return L.value(k / 8, k % 8 + 1);
  };
  auto pattern = [&](int row) {
    std::set<int> cols;
    for (SparseMatrix::InnerIterator it(J, row); it; ++it) cols.insert(it.col());
    return cols;
  };
  for (int n = 0; n < 8; ++n) {
    for (int j = 0; j < 8; ++j) {
      for (auto row_of : {&UnknownLayout::continuity_row, &UnknownLayout::hjb_row,
                          &UnknownLayout::speed_row}) {
        std::set<int> shifted;
        for (int c : pattern((L.*row_of)(n, j))) shifted.insert(shift(c));
        CHECK(shifted == pattern((L.*row_of)(n, j + 1)));
      }
    }
  }
}

TEST_CASE("mass is conserved along continuity-consistent iterates") {
  const auto g = SpaceTimeGrid::make(1, 3, 20, 60);
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> R(0, 1);
  std::vector<double> rho(20);
  for (auto& r : rho) r = R(rng);
  const double m0 = std::accumulate(rho.begin(), rho.end(), 0.0) * g.dx();
  for (int n = 0; n < g.num_steps; ++n) {
    std::vector<double> u(20);
    for (auto& x : u) x = R(rng);
    rho = lf_step(rho, u, g);
    const double m = std::accumulate(rho.begin(), rho.end(), 0.0) * g.dx();
    CHECK(std::abs(m - m0) <= 1e-12 * m0);
  }
}

TEST_CASE("residual CSV dump") {
  const auto g = SpaceTimeGrid::make(1, 1, 2, 1);
  const UnknownLayout L(g);
  Eigen::VectorXd r = Eigen::VectorXd::LinSpaced(L.size(), 0, L.size() - 1);
  std::ostringstream out;
  write_residual_csv(out, r, L);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "block,index,value");
  std::getline(in, line);
  CHECK(line == "continuity,0,0");
  std::string last;
  while (std::getline(in, line)) last = line;
  CHECK(last == "terminal,1,9");
}

TEST_CASE("problem construction errors") {
  const auto g = SpaceTimeGrid::make(1, 1, 4, 4);
  CHECK_THROWS_AS(ProblemSpec::make(g, CostModel::separable(1, 1), nullptr), ConfigError);
  CHECK_THROWS_AS(ProblemSpec::make(g, CostModel::separable(1, 1),
                                    [](double) { return std::nan(""); }),
                  ConfigError);
  const auto spec = ProblemSpec::make(g, CostModel::separable(1, 1), bump);
  CHECK(spec.terminal_cost_is_zero());
  CHECK(spec.on_grid(g.refined()).initial_cells.size() == 8);
}

}
