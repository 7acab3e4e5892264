#include "support.hpp"

#include "aodip/errors.hpp"
#include "aodip/inference.hpp"

#include <doctest.h>

#include <fstream>
#include <sstream>
#include <thread>

using namespace aodip;
using namespace aodip::test;

namespace {

// Brute-force reading of the legality rule: the first index holding the maximum; legal unless that is the last index.
int oracle_argmax(const std::vector<double>& p) {
    double best = p[0];
    for (double v : p) best = std::max(best, v);
    for (std::size_t i = 0; i < p.size(); ++i)
        if (p[i] == best) return int(i);
    return -1;
}

struct Fixture {
    std::vector<DomainDataset> train_parts, held;
    Checkpoint ck;
};

const Fixture& fixture() {
    static const Fixture f = [] {
        Fixture fx;
        for (const auto& d : generate_synthetic_domains(4, 4, 30, 13)) {
            auto [a, b] = split_holdout(d, 0.3, 13);
            fx.train_parts.push_back(a);
            fx.held.push_back(b);
        }
        TrainConfig cfg;
        cfg.epochs = 20;
        cfg.batch_size = 32;
        cfg.master_seed = 13;
        cfg.lambda1 = 1.0;
        fx.ck = train(cfg, fx.train_parts[0], fx.train_parts[3]).checkpoint;
        return fx;
    }();
    return f;
}

DomainDataset rows_of(const DomainDataset& ds, const std::vector<Eigen::Index>& rows) {
    DomainDataset out;
    out.domain_id = ds.domain_id;
    out.num_classes = ds.num_classes;
    out.samples.resize(Eigen::Index(rows.size()), ds.samples.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out.samples.row(Eigen::Index(i)) = ds.samples.row(rows[i]);
        out.labels.push_back(ds.labels[std::size_t(rows[i])]);
    }
    return out;
}

}  // namespace

TEST_CASE("legality examples and tie rule") {
    CHECK(legality((Vec(3) << 0.7, 0.2, 0.1).finished()) == 1);
    CHECK(legality((Vec(3) << 0.1, 0.2, 0.7).finished()) == 0);
    CHECK(legality((Vec(3) << 0.5, 0.1, 0.5).finished()) == 1);
    CHECK(argmax_lowest((Vec(4) << 1, 3, 3, 2).finished()) == 1);
    CHECK_THROWS_AS(legality(Vec::Zero(1)), InvalidInput);
    CHECK_THROWS_AS(argmax_lowest(Vec()), InvalidInput);
}

TEST_CASE("property: legality(p) == 0 iff the tie-ruled argmax is the unauthorized class") {
    CounterRng rng(1);
    int rejected = 0;
    for (int i = 0; i < 5000; ++i) {
        const int n = 1 + int(rng.below(12));
        Vec p(n + 1);
        for (int k = 0; k <= n; ++k) p[k] = double(rng.below(6));  // coarse values force ties
        const auto ref = oracle_argmax(to_std(p));
        REQUIRE(argmax_lowest(p) == ref);
        REQUIRE((legality(p) == 0) == (ref == n));
        rejected += legality(p) == 0;
        const double c = rng.uniform(-100.0, 100.0);
        const Vec shifted = (p.array() + c).matrix();
        REQUIRE(argmax_lowest(shifted) == argmax_lowest(p));
        REQUIRE(legality(shifted) == legality(p));
    }
    CHECK(rejected > 0);
}

TEST_CASE("inference without a credential halts on every attempt") {
    const ProtectedModel model(fixture().ck);
    const auto& held = fixture().held[0];
    for (Eigen::Index i = 0; i < held.size(); ++i) {
        InferenceRequest req{held.sample(i), std::nullopt, std::string("domain0")};
        CHECK_THROWS_AS(infer(req, model), CredentialMissing);
    }
}

TEST_CASE("malformed credentials are rejected") {
    const ProtectedModel model(fixture().ck);
    const Vec x = fixture().held[0].sample(0);
    CHECK_THROWS_AS(infer({x, Token{TokenRole::credential, Vec::Zero(3)}, {}}, model), InvalidToken);
    CHECK_THROWS_AS(infer({x, Token{TokenRole::image, fixture().ck.training_credential.values}, {}}, model), InvalidToken);
    Vec nan = fixture().ck.training_credential.values;
    nan[0] = std::nan("");
    CHECK_THROWS_AS(infer({x, Token{TokenRole::credential, nan}, {}}, model), InvalidToken);
}

TEST_CASE("dual output shape and consistency") {
    const ProtectedModel model(fixture().ck);
    const Token cred = credential_for(fixture().train_parts[0], fixture().ck);
    for (const auto& ds : fixture().held) {
        for (Eigen::Index i = 0; i < ds.size(); ++i) {
            const auto out = infer({ds.sample(i), cred, {}}, model);
            REQUIRE(out.p.size() == model.num_classes() + 1);
            REQUIRE(out.predicted_class == oracle_argmax(to_std(out.p)));
            REQUIRE((out.r == 0) == (out.predicted_class == model.num_classes()));
        }
    }
}

TEST_CASE("evaluate_domain agrees with a per-sample infer loop") {
    const ProtectedModel model(fixture().ck);
    const Token cred = credential_for(fixture().train_parts[0], fixture().ck);
    for (int expectation : {0, 1}) {
        for (const auto& ds : fixture().held) {
            const auto ev = evaluate_domain(ds, cred, model, expectation);
            int correct = 0, match = 0;
            for (Eigen::Index i = 0; i < ds.size(); ++i) {
                const auto out = infer({ds.sample(i), cred, {}}, model);
                correct += out.predicted_class == ds.labels[std::size_t(i)];
                match += out.r == expectation;
                REQUIRE(ev.predictions[std::size_t(i)] == out.predicted_class);
                REQUIRE(ev.legal[std::size_t(i)] == out.r);
            }
            CHECK(ev.task_accuracy == doctest::Approx(100.0 * correct / double(ds.size())).epsilon(1e-12));
            CHECK(ev.legality_rate == doctest::Approx(100.0 * match / double(ds.size())).epsilon(1e-12));
        }
    }
    CHECK_THROWS_AS(evaluate_domain(rows_of(fixture().held[0], {}), cred, model, 1), InvalidInput);
    CHECK_THROWS_AS(evaluate_domain(fixture().held[0], cred, model, 2), InvalidInput);
}

TEST_CASE("evaluate_domain edge cases: all-unauthorized and single correct sample") {
    const ProtectedModel model(fixture().ck);
    const Token cred = credential_for(fixture().train_parts[0], fixture().ck);
    const auto& u = fixture().held[3];
    const auto& a = fixture().held[0];
    const auto ev_u = evaluate_domain(u, cred, model, 0);
    const auto ev_a = evaluate_domain(a, cred, model, 1);
    std::vector<Eigen::Index> to_n, correct;
    for (Eigen::Index i = 0; i < u.size(); ++i)
        if (ev_u.predictions[std::size_t(i)] == model.num_classes()) to_n.push_back(i);
    for (Eigen::Index i = 0; i < a.size(); ++i)
        if (ev_a.predictions[std::size_t(i)] == a.labels[std::size_t(i)]) correct.push_back(i);
    REQUIRE(!to_n.empty());
    REQUIRE(!correct.empty());
    const auto all_n = evaluate_domain(rows_of(u, to_n), cred, model, 0);
    CHECK(all_n.task_accuracy == 0.0);
    CHECK(all_n.legality_rate == 100.0);
    const auto one = evaluate_domain(rows_of(a, {correct.front()}), cred, model, 1);
    CHECK(one.task_accuracy == 100.0);
    CHECK(one.legality_rate == 100.0);
}

TEST_CASE("sessions switch credentials without touching the model") {
    TempDir dir;
    const auto& fx = fixture();
    CredentialStore store(dir / "creds.json");
    issue_credential(fx.train_parts[0], fx.ck, store);
    issue_credential(fx.train_parts[1], fx.ck, store);
    const ProtectedModel model(fx.ck);
    const std::string before = checkpoint_to_string(model.checkpoint());

    InferenceSession session(model, store);
    const Vec x = fx.held[0].sample(0);
    CHECK_THROWS_AS(session.infer(x), CredentialMissing);
    session.switch_domain("domain0");
    const auto first = session.infer(x);
    session.switch_domain("domain1");
    const auto other = session.infer(x);
    session.switch_domain("domain0");
    const auto again = session.infer(x);
    CHECK(first.p == again.p);
    CHECK(other.p != first.p);
    CHECK_THROWS_AS(session.switch_domain("domain9"), CredentialNotFound);
    CHECK(session.active()->domain_id == "domain0");
    session.clear();
    CHECK_THROWS_AS(session.infer(x), CredentialMissing);

    const Token c0 = store.latest("domain0").token, c1 = store.latest("domain1").token;
    const auto enc = model.backbone().encode_image(x);
    const Token g = project_image_token(enc.ms, fx.ck.projectors), d = project_domain_token(enc.ms, fx.ck.projectors);
    const auto p0 = assemble_prompts(c0, g, d, fx.ck.class_table);
    const auto p1 = assemble_prompts(c1, g, d, fx.ck.class_table);
    for (std::size_t k = 0; k < p0.size(); ++k) {
        CHECK(!(p0[k].tokens[0] == p1[k].tokens[0]));
        for (std::size_t s = 1; s < 4; ++s) CHECK(p0[k].tokens[s] == p1[k].tokens[s]);
    }

    evaluate_domain(fx.held[2], c1, model, 1);
    CHECK(checkpoint_to_string(model.checkpoint()) == before);
    CHECK(checkpoint_digest(model.checkpoint()) == fx.ck.digest);
}

TEST_CASE("declared domain is never read by the model") {
    const ProtectedModel model(fixture().ck);
    const Token cred = fixture().ck.training_credential;
    const Vec x = fixture().held[1].sample(2);
    const auto a = infer({x, cred, std::string("domain0")}, model);
    const auto b = infer({x, cred, std::string("anything")}, model);
    const auto c = infer({x, cred, std::nullopt}, model);
    CHECK(a.p == b.p);
    CHECK(a.p == c.p);
}

TEST_CASE("concurrent inference over one model is consistent") {
    const ProtectedModel model(fixture().ck);
    const Token cred = fixture().ck.training_credential;
    const auto& ds = fixture().held[0];
    std::vector<Vec> serial;
    for (Eigen::Index i = 0; i < ds.size(); ++i) serial.push_back(infer({ds.sample(i), cred, {}}, model).p);
    std::vector<int> mismatches(4, 0);
    std::vector<std::thread> workers;
    for (int w = 0; w < 4; ++w) {
        workers.emplace_back([&, w] {
            for (Eigen::Index i = 0; i < ds.size(); ++i) {
                mismatches[std::size_t(w)] += infer({ds.sample(i), cred, {}}, model).p != serial[std::size_t(i)];
            }
        });
    }
    for (auto& t : workers) t.join();
    for (int m : mismatches) CHECK(m == 0);
}

TEST_CASE("a checkpoint whose backbone digest does not re-derive is refused") {
    Checkpoint ck = fixture().ck;
    ck.backbone.frozen_param_digest[0] ^= 0xff;
    CHECK_THROWS_AS(ProtectedModel{ck}, InvalidInput);
}

TEST_CASE("result log round trip") {
    TempDir dir;
    const ProtectedModel model(fixture().ck);
    const auto& ds = fixture().held[2];
    const auto ev = evaluate_domain(ds, fixture().ck.training_credential, model, 0);
    const auto entries = result_entries("domain0#u", ds, "domain0", ev);
    REQUIRE(entries.size() == std::size_t(ds.size()));
    {
        std::ofstream out(dir / "r.jsonl");
        append_result_log(out, entries);
    }
    CHECK(read_result_log(dir / "r.jsonl") == entries);
    std::ofstream(dir / "bad.jsonl") << "{\"task\": 1}\n";
    CHECK_THROWS_AS(read_result_log(dir / "bad.jsonl"), ParseError);
}
