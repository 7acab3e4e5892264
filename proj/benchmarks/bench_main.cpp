#include "aodip/credentials.hpp"
#include "aodip/domain_forge.hpp"
#include "aodip/inference.hpp"
#include "aodip/training.hpp"

#include <benchmark/benchmark.h>

namespace {

using namespace aodip;

struct Setup {
    Backbone backbone = Backbone::instantiate({.master_seed = 42});
    std::vector<DomainDataset> domains = generate_synthetic_domains(4, 10, 20, 42);
    std::vector<Token> table = make_class_table(backbone.spec(), 10, 42);
    ProjectorParams params = ProjectorParams::initialize(backbone.spec(), 42);
};

const Setup& setup() {
    static const Setup s;
    return s;
}

LossBatch make_batch(int b) {
    const auto& s = setup();
    std::vector<Eigen::Index> rows(static_cast<std::size_t>(b));
    for (int i = 0; i < b; ++i) rows[std::size_t(i)] = i;
    LossBatch lb;
    lb.a = encode_batch(s.backbone, s.domains[0], rows);
    lb.e = encode_batch(s.backbone, generate_extended(s.domains[0], 7, 2), rows);
    lb.u = encode_batch(s.backbone, s.domains[3], rows);
    lb.credential_mean = lb.a.f_v.rowwise().mean();
    return lb;
}

void BM_LossAndGradient(benchmark::State& state) {
    const auto& s = setup();
    TrainConfig cfg;
    cfg.train_matched_extended = state.range(1) != 0;
    const LossModel model(s.backbone, s.table, cfg);
    const LossBatch lb = make_batch(int(state.range(0)));
    ProjectorParams grad;
    for (auto _ : state) {
        benchmark::DoNotOptimize(model.evaluate(s.params, lb, &grad));
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_LossAndGradient)->Args({16, 0})->Args({64, 0})->Args({64, 1})->Unit(benchmark::kMillisecond);

void BM_Infer(benchmark::State& state) {
    const auto& s = setup();
    TrainConfig cfg;
    cfg.epochs = 0;
    const ProtectedModel model(train(cfg, s.domains[0], s.domains[3]).checkpoint);
    const Token cred = credential_for(s.domains[0], model.checkpoint());
    const Vec x = s.domains[1].sample(0);
    for (auto _ : state) {
        benchmark::DoNotOptimize(infer(InferenceRequest{x, cred, std::nullopt}, model));
    }
}
BENCHMARK(BM_Infer)->Unit(benchmark::kMicrosecond);

void BM_EvaluateDomain(benchmark::State& state) {
    const auto& s = setup();
    TrainConfig cfg;
    cfg.epochs = 0;
    const ProtectedModel model(train(cfg, s.domains[0], s.domains[3]).checkpoint);
    const Token cred = credential_for(s.domains[0], model.checkpoint());
    for (auto _ : state) {
        benchmark::DoNotOptimize(evaluate_domain(s.domains[1], cred, model, 1));
    }
    state.SetItemsProcessed(state.iterations() * s.domains[1].size());
}
BENCHMARK(BM_EvaluateDomain)->Unit(benchmark::kMillisecond);

void BM_GenerateExtended(benchmark::State& state) {
    const auto& s = setup();
    std::uint64_t seed = 0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(generate_extended(s.domains[0], ++seed, int(state.range(0))));
    }
    state.SetItemsProcessed(state.iterations() * s.domains[0].size());
}
BENCHMARK(BM_GenerateExtended)->Arg(1)->Arg(2)->Arg(4);

void BM_GradientCheck(benchmark::State& state) {
    for (auto _ : state) {
        benchmark::DoNotOptimize(gradient_check(TrainConfig{}));
    }
}
BENCHMARK(BM_GradientCheck)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
