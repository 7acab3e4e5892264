#include "aodip/training.hpp"

#include "aodip/errors.hpp"
#include "aodip/json_util.hpp"
#include "aodip/rng.hpp"
#include "prompt_kernel.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace aodip {

void TrainConfig::validate() const {
    auto require = [](bool ok, const char* what) {
        if (!ok) throw InvalidInput(std::string("TrainConfig: ") + what);
    };
    require(lambda1 > 0.0 && std::isfinite(lambda1), "lambda1 must be positive");
    require(learning_rate > 0.0 && std::isfinite(learning_rate), "learning_rate must be positive");
    require(epochs >= 0, "epochs must be non-negative");
    require(batch_size >= 1, "batch_size must be positive");
    require(temperature > 0.0 && std::isfinite(temperature), "temperature must be positive");
    require(kl_cap > 0.0 && std::isfinite(kl_cap), "kl_cap must be positive");
    require(ema_momentum >= 0.0 && ema_momentum < 1.0, "ema_momentum must lie in [0, 1)");
    require(ext_ops_per_sample >= 1, "ext_ops_per_sample must be positive");
}

void to_json(nlohmann::json& j, const TrainConfig& cfg) {
    j = nlohmann::json{
        {"lambda1", cfg.lambda1},
        {"learning_rate", cfg.learning_rate},
        {"epochs", cfg.epochs},
        {"batch_size", cfg.batch_size},
        {"temperature", cfg.temperature},
        {"kl_cap", cfg.kl_cap},
        {"ema_momentum", cfg.ema_momentum},
        {"master_seed", cfg.master_seed},
        {"train_matched_extended", cfg.train_matched_extended},
        {"ext_ops_per_sample", cfg.ext_ops_per_sample},
        {"objective", cfg.objective == Objective::protection ? "protection" : "source_only"},
    };
}

void from_json(const nlohmann::json& j, TrainConfig& cfg) {
    TrainConfig d;
    cfg.lambda1 = j.value("lambda1", d.lambda1);
    cfg.learning_rate = j.value("learning_rate", d.learning_rate);
    cfg.epochs = j.value("epochs", d.epochs);
    cfg.batch_size = j.value("batch_size", d.batch_size);
    cfg.temperature = j.value("temperature", d.temperature);
    cfg.kl_cap = j.value("kl_cap", d.kl_cap);
    cfg.ema_momentum = j.value("ema_momentum", d.ema_momentum);
    cfg.master_seed = j.value("master_seed", d.master_seed);
    cfg.train_matched_extended = j.value("train_matched_extended", d.train_matched_extended);
    cfg.ext_ops_per_sample = j.value("ext_ops_per_sample", d.ext_ops_per_sample);
    const auto objective = j.value("objective", std::string("protection"));
    if (objective == "protection") cfg.objective = Objective::protection;
    else if (objective == "source_only") cfg.objective = Objective::source_only;
    else throw InvalidInput("unknown objective '" + objective + "'");
}

// ---------------------------------------------------------------------------
// Checkpoint

Digest checkpoint_digest(const Checkpoint& ck) {
    Hasher h;
    h.str("aodip.checkpoint.v1");
    h.u64(ck.backbone.master_seed)
        .i64(ck.backbone.input_dim)
        .i64(ck.backbone.hidden_dim)
        .i64(ck.backbone.feature_dim)
        .i64(ck.backbone.token_dim)
        .i64(ck.backbone.prompt_token_count)
        .bytes(ck.backbone.frozen_param_digest.data(), ck.backbone.frozen_param_digest.size());
    for (const Affine* a : {&ck.projectors.img, &ck.projectors.dom, &ck.projectors.enc}) {
        h.mat(a->weight).vec(a->bias);
    }
    h.u64(ck.class_table.size());
    for (const auto& t : ck.class_table) {
        h.vec(t.values);
    }
    return h.finish();
}

std::string checkpoint_to_string(const Checkpoint& ck) {
    nlohmann::json j;
    j["format"] = "aodip.checkpoint.v1";
    j["backbone"] = ck.backbone;
    j["projectors"] = ck.projectors;
    j["class_table"] = ck.class_table;
    j["training_credential"] = ck.training_credential;
    j["config"] = ck.config;
    j["digest"] = to_hex(ck.digest);
    return j.dump(1) + "\n";
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw StorageError("cannot write checkpoint " + path.string());
    }
    out << checkpoint_to_string(ck);
    if (!out) {
        throw StorageError("write failed for " + path.string());
    }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw InvalidInput("cannot open checkpoint " + path.string());
    }
    Checkpoint ck;
    try {
        const auto j = nlohmann::json::parse(in);
        if (j.at("format").get<std::string>() != "aodip.checkpoint.v1") {
            throw InvalidInput("unsupported checkpoint format in " + path.string());
        }
        ck.backbone = j.at("backbone").get<BackboneSpec>();
        ck.projectors = j.at("projectors").get<ProjectorParams>();
        ck.class_table = j.at("class_table").get<std::vector<Token>>();
        ck.training_credential = j.at("training_credential").get<Token>();
        ck.config = j.at("config").get<TrainConfig>();
        ck.digest = digest_from_hex(j.at("digest").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput("malformed checkpoint " + path.string() + ": " + e.what());
    }
    if (checkpoint_digest(ck) != ck.digest) {
        throw InvalidInput("checkpoint digest mismatch in " + path.string());
    }
    return ck;
}

// ---------------------------------------------------------------------------
// Loss primitives

Vec compute_logits(const FeatureVector& f_v, const std::vector<Prompt>& prompts, const Backbone& backbone,
                   double temperature) {
    if (!(temperature > 0.0)) {
        throw InvalidInput("temperature must be positive");
    }
    const double nv = f_v.norm();
    if (nv == 0.0) {
        throw DegenerateFeature("zero-norm visual feature");
    }
    Vec p(static_cast<Eigen::Index>(prompts.size()));
    for (std::size_t k = 0; k < prompts.size(); ++k) {
        if (prompts[k].class_index != static_cast<int>(k)) {
            throw InvalidPrompt("prompts must be ordered by class index");
        }
        const Vec f_t = backbone.encode_text(prompts[k]);
        const double nt = f_t.norm();
        if (nt == 0.0) {
            throw DegenerateFeature("zero-norm text feature for class " + std::to_string(k));
        }
        p[static_cast<Eigen::Index>(k)] = f_v.dot(f_t) / (nv * nt) / temperature;
    }
    return p;
}

namespace {

Vec log_softmax(const Vec& x) {
    const double m = x.maxCoeff();
    const double lse = m + std::log((x.array() - m).exp().sum());
    return (x.array() - lse).matrix();
}

void check_target(const Vec& logits, int y) {
    if (y < 0 || y >= logits.size()) {
        throw InvalidInput("target class " + std::to_string(y) + " outside [0, " + std::to_string(logits.size()) + ")");
    }
}

}  // namespace

double cross_entropy(const Vec& logits, int y) {
    check_target(logits, y);
    const double lp = log_softmax(logits)[y];
    return std::exp(lp) < kProbabilityFloor ? -std::log(kProbabilityFloor) : -lp;
}

Vec cross_entropy_grad(const Vec& logits, int y) {
    check_target(logits, y);
    Vec s = log_softmax(logits).array().exp().matrix();
    if (s[y] < kProbabilityFloor) {
        return Vec::Zero(logits.size());
    }
    s[y] -= 1.0;
    return s;
}

namespace {

struct KlTerm {
    double value = 0.0;
    Vec d_a, d_e;  // zero when the cap is engaged
};

KlTerm kl_term(const Vec& a, const Vec& e, double cap, bool want_grad) {
    const Vec lp = log_softmax(a);
    const Vec lq = log_softmax(e);
    const Vec p = lp.array().exp().matrix();
    const double kl = std::max(0.0, p.dot(lp - lq));
    KlTerm out;
    if (kl >= cap) {
        out.value = cap;
        if (want_grad) {
            out.d_a = Vec::Zero(a.size());
            out.d_e = Vec::Zero(e.size());
        }
        return out;
    }
    out.value = kl;
    if (want_grad) {
        out.d_a = (p.array() * ((lp - lq).array() - kl)).matrix();
        out.d_e = lq.array().exp().matrix() - p;
    }
    return out;
}

}  // namespace

double kl_separation(const Vec& f_a_t, const Vec& f_e_t, double cap) {
    if (f_a_t.size() != f_e_t.size()) {
        throw InvalidInput("kl_separation: length mismatch");
    }
    return kl_term(f_a_t, f_e_t, cap, false).value;
}

// ---------------------------------------------------------------------------
// Batched objective

EncodedBatch encode_batch(const Backbone& backbone, const DomainDataset& ds) {
    std::vector<Eigen::Index> rows(static_cast<std::size_t>(ds.size()));
    std::iota(rows.begin(), rows.end(), Eigen::Index{0});
    return encode_batch(backbone, ds, rows);
}

EncodedBatch encode_batch(const Backbone& backbone, const DomainDataset& ds, const std::vector<Eigen::Index>& rows) {
    const auto& spec = backbone.spec();
    if (ds.samples.cols() != spec.input_dim) {
        throw InvalidInput(ds.domain_id + ": sample dimension " + std::to_string(ds.samples.cols()) +
                           " does not match backbone input " + std::to_string(spec.input_dim));
    }
    const auto b = static_cast<Eigen::Index>(rows.size());
    EncodedBatch out;
    Mat x(spec.input_dim, b);
    for (Eigen::Index i = 0; i < b; ++i) {
        x.col(i) = ds.samples.row(rows[static_cast<std::size_t>(i)]).transpose();
        out.labels.push_back(ds.labels[static_cast<std::size_t>(rows[static_cast<std::size_t>(i)])]);
    }
    // Same arithmetic as Backbone::encode_image, column-wise.
    Mat h = ((backbone.vis_w1() * x).colwise() + backbone.vis_b1()).array().tanh().matrix();
    out.f_v = (backbone.vis_w2() * h).colwise() + backbone.vis_b2();
    out.ms.resize(spec.multiscale_dim(), b);
    out.ms.topRows(spec.hidden_dim) = h;
    out.ms.bottomRows(spec.feature_dim) = out.f_v;
    return out;
}

EncodedBatch select_columns(const EncodedBatch& all, const std::vector<Eigen::Index>& rows) {
    EncodedBatch out;
    const auto b = static_cast<Eigen::Index>(rows.size());
    out.f_v.resize(all.f_v.rows(), b);
    out.ms.resize(all.ms.rows(), b);
    for (Eigen::Index i = 0; i < b; ++i) {
        const auto r = rows[static_cast<std::size_t>(i)];
        out.f_v.col(i) = all.f_v.col(r);
        out.ms.col(i) = all.ms.col(r);
        out.labels.push_back(all.labels[static_cast<std::size_t>(r)]);
    }
    return out;
}

struct LossModel::Impl {
    Backbone backbone;
    std::vector<Token> class_table;
    detail::FrozenText text;
};

LossModel::LossModel(const Backbone& backbone, std::vector<Token> class_table, TrainConfig cfg)
    : impl_(std::make_unique<Impl>(Impl{backbone, std::move(class_table), {}})), cfg_(cfg) {
    cfg_.validate();
    if (impl_->class_table.size() < 2) {
        throw InvalidInput("class table needs at least one task class plus the unauthorized class");
    }
    impl_->text = detail::make_frozen_text(impl_->backbone, impl_->class_table);
}

LossModel::~LossModel() = default;
LossModel::LossModel(LossModel&&) noexcept = default;

int LossModel::num_classes() const { return static_cast<int>(impl_->class_table.size()) - 1; }

namespace {

struct CeResult {
    double mean = 0.0;
    Mat d_logits;  // (N+1) x B, already divided by B
};

// Mean CE over columns; targets < 0 mean "use the sample label".
CeResult mean_ce(const Mat& logits, const std::vector<int>& labels, int fixed_target, bool want_grad) {
    const Eigen::Index b = logits.cols();
    CeResult r;
    if (want_grad) r.d_logits.resize(logits.rows(), b);
    for (Eigen::Index i = 0; i < b; ++i) {
        const int y = fixed_target >= 0 ? fixed_target : labels[static_cast<std::size_t>(i)];
        const Vec col = logits.col(i);
        r.mean += cross_entropy(col, y);
        if (want_grad) r.d_logits.col(i) = cross_entropy_grad(col, y) / double(b);
    }
    r.mean /= double(b);
    return r;
}

detail::EncodedColumns columns(const EncodedBatch& b) { return {b.f_v, b.ms}; }

}  // namespace

LossBreakdown LossModel::evaluate(const ProjectorParams& params, const LossBatch& batch, ProjectorParams* grad) const {
    const auto& text = impl_->text;
    const int n = num_classes();
    const double inv_t = 1.0 / cfg_.temperature;
    const bool want_grad = grad != nullptr;
    if (batch.a.size() == 0) {
        throw InvalidInput("total_loss: empty authorized batch");
    }
    if (batch.credential_mean.size() != params.enc.in_dim()) {
        throw InvalidInput("total_loss: credential mean has wrong length");
    }
    if (want_grad) {
        *grad = ProjectorParams::zeros_like(params);
    }

    const Vec cred_a = params.enc(batch.credential_mean);
    const auto in_a = columns(batch.a);
    const auto fa = detail::forward_stream(text, params, in_a, cred_a);
    const Mat logits_a = fa.cos * inv_t;

    LossBreakdown out;
    if (cfg_.objective == Objective::source_only) {
        const auto ce = mean_ce(logits_a, batch.a.labels, -1, want_grad);
        out.ce_a = ce.mean;
        out.total = ce.mean;
        if (want_grad) {
            const auto sg = detail::backward_stream(text, in_a, fa, ce.d_logits * inv_t, {});
            detail::accumulate_projector_grad(in_a, sg, *grad);
            detail::accumulate_credential_grad(batch.credential_mean, sg.d_cred, *grad);
        }
        return out;
    }

    if (batch.u.size() == 0 || batch.e.size() == 0) {
        throw InvalidInput("total_loss: empty extended or unauthorized batch");
    }
    if (batch.e.size() != batch.a.size()) {
        throw InvalidInput("total_loss: extended batch must pair one-to-one with the authorized batch");
    }
    const double lambda = cfg_.lambda1;
    const auto in_u = columns(batch.u);
    const auto in_e = columns(batch.e);
    const auto fu = detail::forward_stream(text, params, in_u, cred_a);
    const auto fe = detail::forward_stream(text, params, in_e, cred_a);

    const auto ce_a = mean_ce(logits_a, batch.a.labels, -1, want_grad);
    const auto ce_a_to_u = mean_ce(logits_a, batch.a.labels, n, want_grad);
    const auto ce_u = mean_ce(fu.cos * inv_t, batch.u.labels, n, want_grad);
    const auto ce_e = mean_ce(fe.cos * inv_t, batch.e.labels, n, want_grad);

    // KL over aligned (authorized i, extended i) text features, paired per class index.
    const Eigen::Index b = batch.a.size();
    const double pair_weight = 1.0 / double(b * (n + 1));
    std::vector<Mat> d_ft_a, d_ft_e;
    if (want_grad) {
        d_ft_a.assign(static_cast<std::size_t>(n + 1), Mat::Zero(fa.f_t[0].rows(), b));
        d_ft_e = d_ft_a;
    }
    double kl_sum = 0.0;
    for (int k = 0; k <= n; ++k) {
        for (Eigen::Index i = 0; i < b; ++i) {
            const auto term = kl_term(fa.f_t[k].col(i), fe.f_t[k].col(i), cfg_.kl_cap, want_grad);
            kl_sum += term.value;
            if (want_grad) {
                d_ft_a[k].col(i) = -pair_weight * term.d_a;
                d_ft_e[k].col(i) = -pair_weight * term.d_e;
            }
        }
    }

    out.ce_a = lambda * ce_a.mean;
    out.ce_a_to_u = ce_a_to_u.mean;
    out.ce_u = ce_u.mean;
    out.ce_e = ce_e.mean;
    out.kl = kl_sum * pair_weight;

    // Matched extended credential: positive for its own samples, negative for unauthorized ones.
    Vec e_mean;
    std::optional<detail::StreamForward> fm, fmu;
    CeResult ce_m, ce_mu;
    if (cfg_.train_matched_extended) {
        e_mean = batch.e.f_v.rowwise().mean();
        const Vec cred_e = params.enc(e_mean);
        fm = detail::forward_stream(text, params, in_e, cred_e);
        fmu = detail::forward_stream(text, params, in_u, cred_e);
        ce_m = mean_ce(fm->cos * inv_t, batch.e.labels, -1, want_grad);
        ce_mu = mean_ce(fmu->cos * inv_t, batch.u.labels, n, want_grad);
        out.ce_matched = ce_m.mean + ce_mu.mean;
    }
    out.total = out.ce_a - lambda * out.ce_a_to_u + out.ce_u + out.ce_e - out.kl + out.ce_matched;

    if (want_grad) {
        const Mat d_cos_a = lambda * (ce_a.d_logits - ce_a_to_u.d_logits) * inv_t;
        const auto sa = detail::backward_stream(text, in_a, fa, d_cos_a, d_ft_a);
        const auto su = detail::backward_stream(text, in_u, fu, ce_u.d_logits * inv_t, {});
        const auto se = detail::backward_stream(text, in_e, fe, ce_e.d_logits * inv_t, d_ft_e);
        detail::accumulate_projector_grad(in_a, sa, *grad);
        detail::accumulate_projector_grad(in_u, su, *grad);
        detail::accumulate_projector_grad(in_e, se, *grad);
        detail::accumulate_credential_grad(batch.credential_mean, sa.d_cred + su.d_cred + se.d_cred, *grad);
        if (fm) {
            const auto sm = detail::backward_stream(text, in_e, *fm, ce_m.d_logits * inv_t, {});
            const auto smu = detail::backward_stream(text, in_u, *fmu, ce_mu.d_logits * inv_t, {});
            detail::accumulate_projector_grad(in_e, sm, *grad);
            detail::accumulate_projector_grad(in_u, smu, *grad);
            detail::accumulate_credential_grad(e_mean, sm.d_cred + smu.d_cred, *grad);
        }
    }
    return out;
}

LossBreakdown total_loss(const LossBatch& batch, const Backbone& backbone, const std::vector<Token>& class_table,
                         const ProjectorParams& params, const TrainConfig& cfg) {
    return LossModel(backbone, class_table, cfg).evaluate(params, batch);
}

// ---------------------------------------------------------------------------
// Training loop

nlohmann::json epoch_log_to_json(const EpochLog& log) {
    return nlohmann::json{{"epoch", log.epoch},       {"ce_a", log.loss.ce_a}, {"ce_a_to_u", log.loss.ce_a_to_u},
                          {"ce_u", log.loss.ce_u},    {"ce_e", log.loss.ce_e}, {"kl", log.loss.kl},
                          {"ce_matched", log.loss.ce_matched}, {"total", log.loss.total}};
}

void write_epoch_log(const std::filesystem::path& path, const std::vector<EpochLog>& logs) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw StorageError("cannot write epoch log " + path.string());
    }
    for (const auto& l : logs) {
        out << epoch_log_to_json(l).dump() << '\n';
    }
}

namespace {

std::vector<Eigen::Index> permutation(Eigen::Index n, std::uint64_t key) {
    std::vector<Eigen::Index> p(static_cast<std::size_t>(n));
    std::iota(p.begin(), p.end(), Eigen::Index{0});
    CounterRng rng(key);
    for (Eigen::Index i = n - 1; i > 0; --i) {
        std::swap(p[static_cast<std::size_t>(i)], p[rng.below(std::uint64_t(i) + 1)]);
    }
    return p;
}

// One style shared by every sample of the batch, so the batch mean is a domain-level credential source.
DomainDataset coherent_extended(const DomainDataset& d_a, const std::vector<Eigen::Index>& rows, std::uint64_t key,
                                int ops) {
    DomainDataset picked;
    picked.domain_id = d_a.domain_id;
    picked.num_classes = d_a.num_classes;
    picked.samples.resize(static_cast<Eigen::Index>(rows.size()), d_a.samples.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        picked.samples.row(static_cast<Eigen::Index>(i)) = d_a.samples.row(rows[i]);
        picked.labels.push_back(d_a.labels[static_cast<std::size_t>(rows[i])]);
    }
    CounterRng rng(key);
    ExtendedDomainConfig cfg;
    cfg.ops_per_sample = ops;
    return apply_style(picked, draw_style(rng, cfg));
}

struct Adam {
    Vec m, v;
    long t = 0;
    static constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    explicit Adam(Eigen::Index n) : m(Vec::Zero(n)), v(Vec::Zero(n)) {}

    void step(Vec& theta, const Vec& g, double lr) {
        ++t;
        m = beta1 * m + (1.0 - beta1) * g;
        v = beta2 * v + (1.0 - beta2) * g.cwiseAbs2();
        const double c1 = 1.0 - std::pow(beta1, double(t));
        const double c2 = 1.0 - std::pow(beta2, double(t));
        theta.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
    }
};

void add_into(LossBreakdown& acc, const LossBreakdown& x) {
    acc.ce_a += x.ce_a;
    acc.ce_a_to_u += x.ce_a_to_u;
    acc.ce_u += x.ce_u;
    acc.ce_e += x.ce_e;
    acc.kl += x.kl;
    acc.ce_matched += x.ce_matched;
    acc.total += x.total;
}

LossBreakdown scaled(LossBreakdown x, double s) {
    x.ce_a *= s;
    x.ce_a_to_u *= s;
    x.ce_u *= s;
    x.ce_e *= s;
    x.kl *= s;
    x.ce_matched *= s;
    x.total *= s;
    return x;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const DomainDataset& d_a, const DomainDataset& d_u,
                  const EpochObserver& observer) {
    cfg.validate();
    d_a.validate();
    if (d_a.empty()) {
        throw InvalidInput("train: authorized dataset is empty");
    }
    const bool protection = cfg.objective == Objective::protection;
    if (protection) {
        d_u.validate();
        if (d_u.empty()) {
            throw InvalidInput("train: unauthorized dataset is empty");
        }
        if (d_u.num_classes != d_a.num_classes) {
            throw InvalidInput("train: authorized and unauthorized data must share the label space");
        }
        if (d_u.samples.cols() != d_a.samples.cols()) {
            throw InvalidInput("train: authorized and unauthorized samples differ in dimension");
        }
    }

    BackboneSpec spec;
    spec.master_seed = cfg.master_seed;
    spec.input_dim = static_cast<int>(d_a.samples.cols());
    const Backbone backbone = Backbone::instantiate(spec);

    Checkpoint ck;
    ck.backbone = backbone.spec();
    ck.config = cfg;
    ck.class_table = make_class_table(ck.backbone, d_a.num_classes, cfg.master_seed);
    ck.projectors = ProjectorParams::initialize(ck.backbone, cfg.master_seed);

    const LossModel model(backbone, ck.class_table, cfg);
    const EncodedBatch enc_a = encode_batch(backbone, d_a);
    const EncodedBatch enc_u = protection ? encode_batch(backbone, d_u) : EncodedBatch{};

    const auto key = CounterRng::derive(cfg.master_seed, "train");
    const auto n_a = d_a.size();
    const auto batch = static_cast<Eigen::Index>(cfg.batch_size);
    const Eigen::Index steps = (n_a + batch - 1) / batch;

    Vec theta = ck.projectors.pack();
    Adam adam(theta.size());
    std::optional<Vec> ema;
    ProjectorParams grad;

    TrainResult result;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto ekey = CounterRng::derive(key, std::uint64_t(epoch));
        const auto perm_a = permutation(n_a, CounterRng::derive(ekey, "perm_a"));
        const auto perm_u = protection ? permutation(d_u.size(), CounterRng::derive(ekey, "perm_u"))
                                       : std::vector<Eigen::Index>{};
        EncodedBatch enc_e;
        if (protection && !cfg.train_matched_extended) {
            enc_e = encode_batch(backbone, generate_extended(d_a, CounterRng::derive(ekey, "extended"),
                                                             cfg.ext_ops_per_sample));
        }

        // The EMA advances once per epoch with the mean over that epoch's authorized batches. Every
        // epoch visits each authorized sample once and the encoder is frozen, so that mean is the
        // domain mean and the training credential agrees with an issued one.
        const Vec epoch_mean = enc_a.f_v.rowwise().mean();
        ema = ema ? Vec(cfg.ema_momentum * *ema + (1.0 - cfg.ema_momentum) * epoch_mean) : epoch_mean;

        LossBreakdown sum;
        for (Eigen::Index s = 0; s < steps; ++s) {
            const Eigen::Index lo = s * batch;
            const Eigen::Index hi = std::min(n_a, lo + batch);
            std::vector<Eigen::Index> rows_a(perm_a.begin() + lo, perm_a.begin() + hi);

            LossBatch lb;
            lb.a = select_columns(enc_a, rows_a);
            if (protection) {
                std::vector<Eigen::Index> rows_u;
                for (Eigen::Index j = lo; j < hi; ++j) {
                    rows_u.push_back(perm_u[static_cast<std::size_t>(j % d_u.size())]);
                }
                lb.u = select_columns(enc_u, rows_u);
                if (cfg.train_matched_extended) {
                    lb.e = encode_batch(backbone, coherent_extended(d_a, rows_a, CounterRng::derive(ekey, std::uint64_t(s)),
                                                                    cfg.ext_ops_per_sample));
                } else {
                    lb.e = select_columns(enc_e, rows_a);
                }
            }

            lb.credential_mean = *ema;

            ck.projectors.unpack(theta);
            const auto loss = model.evaluate(ck.projectors, lb, &grad);
            if (!std::isfinite(loss.total)) {
                throw TrainingDiverged(epoch);
            }
            add_into(sum, loss);
            adam.step(theta, grad.pack(), cfg.learning_rate);
        }
        ck.projectors.unpack(theta);
        if (!ck.projectors.all_finite()) {
            throw TrainingDiverged(epoch);
        }
        EpochLog log{epoch, scaled(sum, 1.0 / double(steps))};
        result.epochs.push_back(log);
        if (observer) {
            observer(log);
        }
    }

    const Vec mean = ema ? *ema : Vec(enc_a.f_v.rowwise().mean());
    ck.training_credential = derive_credential(mean, ck.projectors);
    ck.digest = checkpoint_digest(ck);
    result.checkpoint = std::move(ck);
    return result;
}

// ---------------------------------------------------------------------------
// Gradient check

GradientCheckReport gradient_check(const TrainConfig& cfg_in, const GradientCheckConfig& check) {
    TrainConfig cfg = cfg_in;
    cfg.validate();
    if (check.num_classes < 2 || check.batch < 1 || !(check.step > 0.0)) {
        throw InvalidInput("gradient_check: need num_classes >= 2, batch >= 1, step > 0");
    }
    const Backbone backbone = Backbone::instantiate(check.spec);
    const auto& spec = backbone.spec();
    const auto key = CounterRng::derive(spec.master_seed, "gradient_check");

    SyntheticDomainConfig dcfg;
    dcfg.input_dim = spec.input_dim;
    const auto domains = generate_synthetic_domains(3, check.num_classes, check.batch, CounterRng::derive(key, "data"), dcfg);
    std::vector<Eigen::Index> rows;
    const auto perm = permutation(domains[0].size(), CounterRng::derive(key, "rows"));
    rows.assign(perm.begin(), perm.begin() + check.batch);

    LossBatch lb;
    lb.a = encode_batch(backbone, domains[0], rows);
    lb.e = encode_batch(backbone, generate_extended(domains[0], CounterRng::derive(key, "ext"), cfg.ext_ops_per_sample), rows);
    lb.u = encode_batch(backbone, domains[2], rows);
    lb.credential_mean = lb.a.f_v.rowwise().mean();

    const auto class_table = make_class_table(spec, check.num_classes, spec.master_seed);
    ProjectorParams params = ProjectorParams::initialize(spec, spec.master_seed);
    // Move off the zero-bias initial point so bias gradients are exercised in general position.
    Vec theta = params.pack();
    theta += seeded_gaussian(CounterRng::derive(key, "jitter"), static_cast<int>(theta.size()), 0.05);
    params.unpack(theta);

    const LossModel model(backbone, class_table, cfg);
    ProjectorParams analytic;
    model.evaluate(params, lb, &analytic);
    const Vec g = analytic.pack();

    struct Slice {
        const char* name;
        Eigen::Index size;
    };
    const std::vector<Slice> slices = {
        {"img.weight", params.img.weight.size()}, {"img.bias", params.img.bias.size()},
        {"dom.weight", params.dom.weight.size()}, {"dom.bias", params.dom.bias.size()},
        {"enc.weight", params.enc.weight.size()}, {"enc.bias", params.enc.bias.size()},
    };

    GradientCheckReport report;
    ProjectorParams probe = params;
    Eigen::Index offset = 0;
    for (const auto& slice : slices) {
        std::vector<Eigen::Index> idx;
        if (check.max_entries_per_tensor <= 0 || check.max_entries_per_tensor >= slice.size) {
            for (Eigen::Index i = 0; i < slice.size; ++i) idx.push_back(offset + i);
        } else {
            const auto p = permutation(slice.size, CounterRng::derive(key, slice.name));
            for (int i = 0; i < check.max_entries_per_tensor; ++i) idx.push_back(offset + p[static_cast<std::size_t>(i)]);
        }
        double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
        for (const auto i : idx) {
            Vec t = theta;
            t[i] = theta[i] + check.step;
            probe.unpack(t);
            const double up = model.evaluate(probe, lb).total;
            t[i] = theta[i] - check.step;
            probe.unpack(t);
            const double down = model.evaluate(probe, lb).total;
            const double numeric = (up - down) / (2.0 * check.step);
            diff2 += (g[i] - numeric) * (g[i] - numeric);
            a2 += g[i] * g[i];
            n2 += numeric * numeric;
        }
        const double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
        TensorCheck tc{slice.name, static_cast<Eigen::Index>(idx.size()), std::sqrt(diff2) / denom};
        report.max_rel_error = std::max(report.max_rel_error, tc.rel_error);
        report.tensors.push_back(std::move(tc));
        offset += slice.size;
    }
    return report;
}

}  // namespace aodip
