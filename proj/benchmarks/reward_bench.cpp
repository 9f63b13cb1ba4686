#include <benchmark/benchmark.h>

#include <fstream>
#include <sstream>

#include "stagehand/environment.hpp"
#include "stagehand/reward.hpp"

namespace {

std::string read_file(const char* relative) {
  std::ifstream in(std::string(STAGEHAND_SOURCE_DIR) + "/" + relative);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

stagehand::Bindings walker_bindings() {
  stagehand::EnvironmentConfig config;
  const stagehand::WalkerEnv env(config, 1000);
  stagehand::EnvState s = env.reset(3);
  std::array<double, stagehand::kJoints> action{};
  for (int i = 0; i < 40; ++i) {
    stagehand::command_following_action(s, action);
    env.step(s, action);
  }
  stagehand::Bindings b;
  env.export_bindings(s, b);
  return b;
}

void BM_ParseExpression(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(stagehand::parse_expression("command[0:2] - local_vel[0:2]"));
}
BENCHMARK(BM_ParseExpression);

void BM_CompileTuneReward(benchmark::State& state) {
  const std::string text = read_file("data/bundles/tune/rewards/generated_reward_stage1.yaml");
  for (auto _ : state) benchmark::DoNotOptimize(stagehand::compile_reward_text(text));
}
BENCHMARK(BM_CompileTuneReward);

void BM_EvalTuneReward(benchmark::State& state) {
  const auto program = stagehand::compile_reward_text(read_file("data/bundles/tune/rewards/generated_reward_stage1.yaml"));
  const stagehand::Bindings b = walker_bindings();
  for (auto _ : state) benchmark::DoNotOptimize(stagehand::eval_total(program, b));
}
BENCHMARK(BM_EvalTuneReward);

}  // namespace
