#include "stagehand/randomizer.hpp"

#include <gtest/gtest.h>
#include <yaml-cpp/yaml.h>

#include <cmath>

#include "paths.hpp"

namespace stagehand {
namespace {

RandomizationRule rule(std::string field, std::vector<std::string> targets, Tensor lo, Tensor hi, RandOp op) {
  return {std::move(field), std::move(targets), std::move(lo), std::move(hi), op};
}

RandomizeSpec tune_spec() {
  const YAML::Node doc =
      YAML::LoadFile((testing::bundle_dir("tune") / "randomize" / "generated_randomize_stage1.yaml").string());
  return parse_randomize(doc["randomization"]);
}

TEST(Randomizer, TuneFileParses) {
  const RandomizeSpec spec = tune_spec();
  EXPECT_EQ(spec.rules.size(), 7u);
  EXPECT_EQ(spec.rules[0].field, "geom_friction");
  EXPECT_EQ(spec.rules[0].op, RandOp::set);
}

TEST(Randomizer, SetDrawsStayInBounds) {
  const auto& nominal = desk_nominal_scene();
  const RandomizeSpec spec{{rule("geom_friction", {}, Tensor::vector({0.6, 0.0, 0.0}), Tensor::vector({1.1, 0.0, 0.0}),
                                 RandOp::set)}};
  double sum = 0.0;
  std::size_t count = 0;
  for (std::uint64_t env = 0; env < 10000; ++env) {
    const auto p = resample_per_env(spec, nominal, 42, env);
    const Tensor& f = p.at("geom_friction");
    ASSERT_EQ(f.shape(), (Tensor::Shape{4, 3}));
    for (std::size_t g = 0; g < 4; ++g) {
      ASSERT_GE(f[g * 3], 0.6);
      ASSERT_LE(f[g * 3], 1.1);
      ASSERT_EQ(f[g * 3 + 1], 0.0);
      ASSERT_EQ(f[g * 3 + 2], 0.0);
      sum += f[g * 3];
      ++count;
    }
  }
  // Mean of uniform(0.6, 1.1) within 3 standard errors.
  const double se = (0.5 / std::sqrt(12.0)) / std::sqrt(static_cast<double>(count));
  EXPECT_NEAR(sum / static_cast<double>(count), 0.85, 3 * se);
}

TEST(Randomizer, AddAndScaleDrawsStayInBounds) {
  const auto& nominal = desk_nominal_scene();
  const RandomizeSpec spec{{
      rule("body_mass", {}, Tensor::scalar(0.9), Tensor::scalar(1.1), RandOp::scale),
      rule("geom_pos", {"foot_contact_l", "foot_contact_r"}, Tensor::vector({-0.004, -0.004, -0.004}),
           Tensor::vector({0.005, 0.004, 0.004}), RandOp::add),
  }};
  const Tensor& mass0 = nominal.at("body_mass");
  double ratio_sum = 0.0;
  for (std::uint64_t env = 0; env < 10000; ++env) {
    const auto p = resample_per_env(spec, nominal, 9, env);
    const Tensor& mass = p.at("body_mass");
    for (std::size_t i = 0; i < mass.size(); ++i) {
      const double r = mass[i] / mass0[i];
      ASSERT_GE(r, 0.9 - 1e-12);
      ASSERT_LE(r, 1.1 + 1e-12);
      ratio_sum += r;
    }
    for (const char* key : {"geom_pos/foot_contact_l", "geom_pos/foot_contact_r"}) {
      const Tensor& pos = p.at(key);
      const Tensor& base = nominal.at(key);
      ASSERT_GE(pos[0] - base[0], -0.004 - 1e-15);
      ASSERT_LE(pos[0] - base[0], 0.005 + 1e-15);
      for (std::size_t k = 1; k < 3; ++k) {
        ASSERT_GE(pos[k] - base[k], -0.004 - 1e-15);
        ASSERT_LE(pos[k] - base[k], 0.004 + 1e-15);
      }
    }
  }
  const double n = 10000.0 * static_cast<double>(mass0.size());
  EXPECT_NEAR(ratio_sum / n, 1.0, 3 * (0.2 / std::sqrt(12.0)) / std::sqrt(n));
}

TEST(Randomizer, DegenerateIntervalsAreExact) {
  const auto& nominal = desk_nominal_scene();
  const RandomizeSpec scale_one{{rule("body_mass", {}, Tensor::scalar(1.0), Tensor::scalar(1.0), RandOp::scale)}};
  EXPECT_EQ(resample_per_env(scale_one, nominal, 1, 3).at("body_mass"), nominal.at("body_mass"));

  const RandomizeSpec shift{{rule("body_ipos", {"random_mass"}, Tensor::vector({0.03, 0.03, 0.03}),
                                  Tensor::vector({0.03, 0.03, 0.03}), RandOp::add)}};
  const Tensor& before = nominal.at("body_ipos/random_mass");
  const Tensor after = resample_per_env(shift, nominal, 1, 3).at("body_ipos/random_mass");
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(after[i], before[i] + 0.03);
}

TEST(Randomizer, DeterministicPerSeedAndEnv) {
  const RandomizeSpec spec = tune_spec();
  const auto& nominal = desk_nominal_scene();
  EXPECT_EQ(resample_per_env(spec, nominal, 5, 2), resample_per_env(spec, nominal, 5, 2));
  EXPECT_EQ(sample(spec, nominal, 5), resample_per_env(spec, nominal, 5, 0));
  EXPECT_NE(resample_per_env(spec, nominal, 5, 0).at("geom_friction"),
            resample_per_env(spec, nominal, 5, 1).at("geom_friction"));
  EXPECT_NE(resample_per_env(spec, nominal, 5, 0).at("geom_friction"),
            resample_per_env(spec, nominal, 6, 0).at("geom_friction"));
}

TEST(Randomizer, EditingOneRuleKeepsOtherDraws) {
  RandomizeSpec spec = tune_spec();
  const auto& nominal = desk_nominal_scene();
  const auto before = resample_per_env(spec, nominal, 3, 4);
  spec.rules[0].maxval = Tensor::vector({2.0, 0.0, 0.0});
  const auto after = resample_per_env(spec, nominal, 3, 4);
  EXPECT_NE(before.at("geom_friction"), after.at("geom_friction"));
  EXPECT_EQ(before.at("body_mass"), after.at("body_mass"));
  EXPECT_EQ(before.at("actuator_gainprm"), after.at("actuator_gainprm"));
}

TEST(Randomizer, UnknownTargetThrows) {
  const RandomizeSpec spec{{rule("geom_pos", {"nose"}, Tensor::scalar(0), Tensor::scalar(1), RandOp::add)}};
  try {
    resample_per_env(spec, desk_nominal_scene(), 0, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownField);
  }
}

}  // namespace
}  // namespace stagehand
