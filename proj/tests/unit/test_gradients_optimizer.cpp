#include <doctest.h>

#include <cmath>

#include "mmcoord/error.hpp"
#include "mmcoord/gradients.hpp"
#include "mmcoord/optimizer.hpp"

using namespace mmcoord;

namespace {

Model tiny_model() {
  const std::vector<ModalitySpec> mods{{"a", 3, ""}, {"b", 2, ""}};
  return init_model(mods, {4, 4}, 1);
}

void fill(Model& m, double value) {
  for (auto& t : named_tensors(m)) std::fill(t.data.begin(), t.data.end(), value);
}

}  // namespace

TEST_CASE("central difference on a quadratic") {
  const double numeric = central_difference([](double w) { return w * w; }, 3.0, 1e-5);
  CHECK(std::abs(numeric - 6.0) < 1e-9);
  CHECK(relative_error(6.0, numeric) < 1e-9);
}

TEST_CASE("small-instance gradients match finite differences") {
  RandomInstanceSpec spec;  // M=3, D=8, B=4
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    spec.seed = seed;
    const auto inst = random_instance(spec);
    LossConfig pcmc;
    CHECK(finite_diff_check(inst.model, inst.batch, pcmc).max_relative_error < 1e-4);
    LossConfig pcmr;
    pcmr.family = LossFamily::pcmr;
    pcmr.rho = 1.0;
    CHECK(finite_diff_check(inst.model, inst.batch, pcmr).max_relative_error < 1e-4);
  }
}

TEST_CASE("gradient check across loss families, masks and rho") {
  for (LossFamily family : {LossFamily::pcmc, LossFamily::pcmr}) {
    for (double missing : {0.0, 0.3}) {
      for (double rho : {0.0, 1.0}) {
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
          RandomInstanceSpec spec;
          spec.seed = 1000 + seed;
          spec.modalities = 2 + seed % 3;
          spec.dim = 6 + 2 * (seed % 3);
          spec.hidden = spec.dim;
          spec.batch = 3 + seed % 4;
          spec.missing_rate = missing;
          spec.shared_view = seed % 2 == 1;
          const auto inst = random_instance(spec);
          LossConfig config;
          config.family = family;
          config.rho = rho;
          const auto result = finite_diff_check(inst.model, inst.batch, config);
          INFO(to_string(family) << " missing=" << missing << " rho=" << rho << " seed=" << seed
                                 << " worst=" << result.worst_tensor);
          CHECK(result.max_relative_error < 1e-3);
        }
      }
    }
  }
}

TEST_CASE("fixed temperature and sum reduction are differentiated correctly") {
  RandomInstanceSpec spec;
  spec.seed = 77;
  spec.missing_rate = 0.3;
  const auto inst = random_instance(spec);
  LossConfig config;
  config.tau_mode = TauMode::fixed;
  config.reduction = CeReduction::sum;
  CHECK(finite_diff_check(inst.model, inst.batch, config).max_relative_error < 1e-4);
  CHECK(grad_total_loss(inst.model, inst.batch, config).grads.log_tau == 0.0);
}

TEST_CASE("PCMR gradients vanish (up to rounding in S) when S equals T everywhere") {
  RandomInstanceSpec spec;
  spec.seed = 9;
  auto inst = random_instance(spec);
  for (std::size_t m = 0; m < inst.batch.modality_count(); ++m) {
    for (Eigen::Index r = 1; r < inst.batch.inputs[m].rows(); ++r) inst.batch.inputs[m].row(r) = inst.batch.inputs[m].row(0);
    auto& enc = inst.model.encoders[m];
    for (auto& t : tensors(enc)) std::fill(t.data.begin(), t.data.end(), 0.0);
    enc.beta.setConstant(-0.5);
  }
  LossConfig config;
  config.family = LossFamily::pcmr;
  const auto out = grad_total_loss(inst.model, inst.batch, config);
  for (const auto& t : named_tensors(out.grads)) {
    for (double g : t.data) CHECK(std::abs(g) < 1e-30);
  }
}

TEST_CASE("non-finite inputs raise a numerical error") {
  RandomInstanceSpec spec;
  auto inst = random_instance(spec);
  inst.batch.inputs[1](0, 0) = std::numeric_limits<double>::infinity();
  try {
    grad_total_loss(inst.model, inst.batch, LossConfig{});
    FAIL("expected a numerical error");
  } catch (const Error& ex) {
    CHECK(ex.kind() == ErrorKind::numerical);
  }
}

TEST_CASE("adam step hand values") {
  SUBCASE("first step with unit gradient moves by -lr") {
    Model params = tiny_model();
    fill(params, 0.0);
    Model grads = params.zeros_like();
    fill(grads, 1.0);
    OptimState state = init_optim_state(params, {0.9, 0.999, 1e-8, 0.0, DecayMode::decoupled}, 1e-3);
    adam_step(state, params, grads, 1e-3);
    for (const auto& t : named_tensors(params)) {
      for (double w : t.data) CHECK(w == doctest::Approx(-0.001).epsilon(1e-6));
    }
    CHECK(state.step == 1);
  }
  SUBCASE("zero gradient without decay is a fixed point") {
    Model params = tiny_model();
    const Model before = params;
    OptimState state = init_optim_state(params, {0.9, 0.999, 1e-8, 0.0, DecayMode::decoupled}, 1e-3);
    adam_step(state, params, params.zeros_like(), 1e-3);
    const auto a = named_tensors(params);
    const auto b = named_tensors(before);
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(std::equal(a[k].data.begin(), a[k].data.end(), b[k].data.begin()));
  }
  SUBCASE("decoupled decay shrinks weights only") {
    Model params = tiny_model();
    fill(params, 1.0);
    OptimState state = init_optim_state(params, {}, 0.1);
    adam_step(state, params, params.zeros_like(), 0.1);
    for (const auto& t : named_tensors(params)) {
      for (double w : t.data) CHECK(w == doctest::Approx(t.decays ? 0.98 : 1.0).epsilon(1e-15));
    }
  }
  SUBCASE("l2 decay enters through the gradient") {
    Model params = tiny_model();
    fill(params, 1.0);
    OptimState state = init_optim_state(params, {0.9, 0.999, 1e-8, 0.2, DecayMode::l2}, 0.1);
    adam_step(state, params, params.zeros_like(), 0.1);
    for (const auto& t : named_tensors(params)) {
      // Adam normalizes the decay gradient to a unit step of size lr.
      for (double w : t.data) CHECK(w == doctest::Approx(t.decays ? 0.9 : 1.0).epsilon(1e-6));
    }
  }
  SUBCASE("lr must be positive") {
    Model params = tiny_model();
    OptimState state = init_optim_state(params, {}, 0.1);
    CHECK_THROWS(adam_step(state, params, params.zeros_like(), 0.0));
  }
}

TEST_CASE("one small adam step decreases the loss") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    RandomInstanceSpec spec;
    spec.seed = 500 + seed;
    spec.missing_rate = seed % 2 ? 0.3 : 0.0;
    auto inst = random_instance(spec);
    LossConfig config;
    config.family = seed < 5 ? LossFamily::pcmc : LossFamily::pcmr;
    const auto before = grad_total_loss(inst.model, inst.batch, config);
    OptimState state = init_optim_state(inst.model, {0.9, 0.999, 1e-8, 0.0, DecayMode::decoupled}, 1e-6);
    adam_step(state, inst.model, before.grads, 1e-6);
    const double after = total_loss(inst.batch, inst.model, config).value;
    CHECK(after <= before.loss.value + 1e-12);
    CHECK(after < before.loss.value);
  }
}

TEST_CASE("cosine learning-rate schedule") {
  CHECK(cosine_lr(0.0, 1e-4) == doctest::Approx(1e-4).epsilon(1e-15));
  CHECK(std::abs(cosine_lr(1.0, 1e-4)) < 1e-20);
  CHECK(cosine_lr(0.5, 1e-4) == doctest::Approx(0.5e-4).epsilon(1e-12));
  double previous = cosine_lr(0.0, 1.0);
  for (int i = 1; i <= 100; ++i) {
    const double lr = cosine_lr(i / 100.0, 1.0);
    CHECK(lr <= previous);
    previous = lr;
  }
  CHECK_THROWS(cosine_lr(1.5, 1e-4));
  CHECK_THROWS(cosine_lr(-0.1, 1e-4));
}
