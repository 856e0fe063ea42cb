#include "doctest.h"

#include <sstream>

#include "sketchy/diagnostics.hpp"
#include "sketchy/errors.hpp"
#include "test_util.hpp"

using namespace sketchy;
using namespace testutil;

TEST_CASE("rank-one update eigenvalue matches a dense solve") {
  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    const std::size_t k = 1 + rng.uniform_index(15);
    Vector delta(k), c(k);
    for (std::size_t i = 0; i < k; ++i) {
      delta[i] = rng.uniform() * 3.0;
      c[i] = t % 3 == 0 && i % 2 ? 0.0 : rng.normal();
    }
    Eigen::MatrixXd m = to_eigen(delta).asDiagonal();
    m += to_eigen(c) * to_eigen(c).transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    CHECK(rank_one_update_max_eigenvalue(delta, c) ==
          doctest::Approx(es.eigenvalues().maxCoeff()).epsilon(1e-12));
  }
}

TEST_CASE("effective dimension") {
  const Vector lam{3.0, 1.0, 0.0};
  CHECK(effective_dimension(lam, 1.0) == doctest::Approx(0.75 + 0.5));
  CHECK(effective_dimension(lam, 1e-12) == doctest::Approx(2.0));
}

TEST_CASE("dense Hessian and caps") {
  Rng rng(2);
  const ProblemOracle o(make_data(rng, 50, 8, Task::logistic), Task::logistic, 0.1);
  const Vector w = gaussian_vector(rng, 8);
  CHECK((to_eigen(dense_hessian(o, w, true)) - reference_hessian(o, w, all_rows(50), true))
            .norm() < 1e-12);
  DiagnosticCaps small;
  small.max_dim = 4;
  CHECK_THROWS_AS(dense_hessian(o, w, true, small), CapExceededError);
  small = {};
  small.max_samples = 10;
  CHECK_THROWS_AS(rho_dissimilarity(o, w, 1e-2, small), CapExceededError);
}

TEST_CASE("rho-dissimilarity against a dense generalized eigenproblem") {
  Rng rng(3);
  const ProblemOracle o(make_data(rng, 40, 6, Task::logistic), Task::logistic, 0.01);
  const Vector w = gaussian_vector(rng, 6);
  const double rho = 0.05;
  const RhoDissimilarity r = rho_dissimilarity(o, w, rho);
  const Eigen::MatrixXd h = reference_hessian(o, w, all_rows(40), true);
  const Eigen::MatrixXd hr = h + rho * Eigen::MatrixXd::Identity(6, 6);
  double tau = 0.0;
  for (std::size_t i = 0; i < 40; ++i) {
    const Eigen::MatrixXd hi = reference_hessian(o, w, {i}, true) + rho * Eigen::MatrixXd::Identity(6, 6);
    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> ges(hi, hr);
    tau = std::max(tau, ges.eigenvalues().maxCoeff());
  }
  CHECK(r.tau == doctest::Approx(tau).epsilon(1e-10));
  CHECK(r.tau <= r.bound * (1 + 1e-12));
  CHECK(r.tau >= 1.0 - 1e-10);
}

TEST_CASE("full-batch sandwich certificates hold") {
  Rng rng(4);
  const ProblemOracle o(make_data(rng, 200, 25, Task::ridge), Task::ridge, 1e-3);
  const Vector w(25, 0.0);
  const double rho = 1e-2;
  const NystromApprox nys = sketch_hessian(o, w, full_batch(200), 5, rng);
  const SpectrumReport rep = sandwich_check(o, w, nys, rho);
  CHECK(rep.certified);
  CHECK(rep.sandwich_min >= 1.0 - 1e-8);
  CHECK(rep.sandwich_max <= rep.upper_certificate + 1e-8);
}

TEST_CASE("conditioning report and its outputs") {
  Rng rng(5);
  const ProblemOracle o(make_data(rng, 300, 30, Task::logistic), Task::logistic, 1e-3);
  OptimizerConfig c = resolve_config({}, o);
  ConditioningOptions opts;
  opts.top_m = 10;
  opts.betas = {1e-2};
  opts.label = "init";
  const SpectrumReport rep = conditioning_report(o, Vector(30, 0.0), c, opts);
  CHECK(rep.raw_eigenvalues.size() == 30);
  CHECK(rep.raw_kappa >= 1.0);
  CHECK(rep.precond_kappa >= 1.0);
  CHECK(rep.tau.has_value());
  std::ostringstream csv;
  write_spectrum_csv(csv, rep);
  const std::string text = csv.str();
  CHECK(text.rfind("index,eig_raw,eig_precond\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 11);
  CHECK(text.find("\n1,1,1\n") != std::string::npos);
  const auto js = spectrum_summary(rep);
  CHECK(js["label"] == "init");
  CHECK(js["raw"]["kappa"].get<double>() == doctest::Approx(rep.raw_kappa));
}
