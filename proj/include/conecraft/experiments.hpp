#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "conecraft/checkpoint.hpp"
#include "conecraft/common.hpp"
#include "conecraft/datakit.hpp"
#include "conecraft/netkit.hpp"
#include "conecraft/polyhedra.hpp"
#include "conecraft/projector.hpp"
#include "conecraft/rng.hpp"
#include "conecraft/tensor.hpp"

namespace conecraft::experiments {

using json = nlohmann::ordered_json;
using netkit::AdamState;
using netkit::ConstraintLayer;
using netkit::LinearLayer;
using netkit::PlateauScheduler;
using tensorkit::Tape;
using tensorkit::Tensor;
using tensorkit::Var;
using tensorkit::make_leaf;

// --- metrics ---------------------------------------------------------------

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double lr = 0.0;
    double max_violation = 0.0;
    double seconds = 0.0;
};

struct MetricsLog {
    std::vector<EpochRecord> records;
    json summary;

    std::string to_jsonl() const {
        std::string out;
        for (const auto& r : records) {
            json j;
            j["epoch"] = r.epoch;
            j["train_loss"] = r.train_loss;
            j["val_loss"] = r.val_loss;
            j["lr"] = r.lr;
            j["max_violation"] = r.max_violation;
            j["seconds"] = r.seconds;
            out += j.dump();
            out += '\n';
        }
        return out;
    }

    void write(const std::filesystem::path& dir) const {
        std::filesystem::create_directories(dir);
        std::ofstream m(dir / "metrics.jsonl");
        if (!m) throw Error("cannot write metrics in " + dir.string());
        m << to_jsonl();
        std::ofstream s(dir / "summary.json");
        if (!s) throw Error("cannot write summary in " + dir.string());
        s << summary.dump(2) << '\n';
    }
};

// --- configs ---------------------------------------------------------------

struct DataConfig {
    bool synthetic = true;
    std::string dir;  // IDX directory when synthetic = false
    datakit::Domain domain = datakit::Domain::pm1;
    std::size_t side = 16;
    std::size_t n_train = 5000;
    std::size_t n_val = 500;
    std::size_t n_test = 500;
    std::uint64_t seed = 7;
};

struct ProjectionExperimentConfig {
    std::size_t side = 16;
    std::size_t tiles_per_side = 2;
    std::string variant = "constrained";  // constrained | projection_baseline
    double lr = 1e-4;
    std::size_t batch = 64;
    std::size_t epochs = 60;
    std::size_t box_activation_epoch = 30;  // box active for epochs > this; 0 = always on
    std::uint64_t seed = 0;
    DataConfig data;
    std::size_t patience = 5;
    double anneal_factor = 0.1;
    double proj_tol = 1e-8;
    std::size_t proj_max_iter = 10000;
    std::size_t threads = 1;
};

struct VAEConfig {
    std::size_t latent_dim = 2;
    std::size_t hidden_dim = 128;
    std::size_t side = 16;
    std::size_t tiles_per_side = 2;
    double lr = 1e-4;
    std::size_t batch = 64;
    std::size_t epochs = 60;
    std::size_t box_activation_epoch = 30;
    std::uint64_t seed = 0;
    DataConfig data;
    std::size_t patience = 5;
    double anneal_factor = 0.1;
};

// --- shared helpers --------------------------------------------------------

namespace detail {

inline double now_seconds() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

inline datakit::Dataset load_data(const DataConfig& c) {
    if (c.synthetic) {
        return datakit::synthetic_splits(c.side, c.n_train, c.n_val, c.n_test, c.seed, c.domain);
    }
    namespace fs = std::filesystem;
    const fs::path dir = c.dir;
    datakit::Dataset ds = datakit::load_idx(dir / "train-images-idx3-ubyte", std::nullopt, c.domain, c.n_val);
    const fs::path test = dir / "t10k-images-idx3-ubyte";
    if (fs::exists(test)) {
        datakit::Dataset t = datakit::load_idx(test, std::nullopt, c.domain, 0);
        if (t.d() != ds.d()) throw DimensionMismatch("train/test image sizes differ");
        Tensor merged = Tensor::zeros({ds.n() + t.n(), ds.d()});
        std::copy(ds.images.data.begin(), ds.images.data.end(), merged.data.begin());
        std::copy(t.images.data.begin(), t.images.data.end(),
                  merged.data.begin() + static_cast<std::ptrdiff_t>(ds.images.numel()));
        ds.images = std::move(merged);
        ds.n_test = t.n();
    }
    return ds;
}

inline double mse(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = a.data[i] - b.data[i];
        s += d * d;
    }
    return s / static_cast<double>(a.numel());
}

inline double linf(const Tensor& a) {
    double m = 0.0;
    for (double v : a.data) m = std::max(m, std::abs(v));
    return m;
}

inline Tensor normal_tensor(std::vector<std::size_t> shape, Rng& rng) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data) v = rng.normal();
    return t;
}

inline Var mse_loss(Tape& t, Var pred, Var target) {
    Var diff = sub(pred, target);
    return mean_all(mul(diff, diff));
}

inline void save_constraint_files(const std::filesystem::path& dir, const polyhedra::HRep& h,
                                  const polyhedra::VRep& v) {
    polyhedra::write_hrep(dir / "constraints.hrep", h);
    polyhedra::write_vrep(dir / "constraints.vrep", v);
}

}  // namespace detail

// --- projection experiment ---------------------------------------------------

struct ProjectionModel {
    std::string variant;
    std::optional<ConstraintLayer> constrained;
    std::optional<LinearLayer> baseline;
    polyhedra::HRep hrep;
    polyhedra::VRep vrep;

    std::vector<Tensor*> params() {
        if (constrained) return constrained->params();
        return {&baseline->weight, &baseline->bias};
    }
};

inline ProjectionModel make_projection_model(const ProjectionExperimentConfig& cfg) {
    ProjectionModel m;
    m.variant = cfg.variant;
    m.hrep = polyhedra::checkerboard_hrep(cfg.side, cfg.tiles_per_side);
    m.vrep = polyhedra::dd_convert(m.hrep).vrep;
    Rng rng(cfg.seed);
    if (cfg.variant == "constrained") {
        m.constrained = ConstraintLayer::create(m.hrep, m.vrep, m.hrep.d(), rng);
    } else if (cfg.variant == "projection_baseline") {
        const auto d = static_cast<std::size_t>(m.hrep.d());
        m.baseline = LinearLayer::init(d, d, rng);
    } else {
        throw ConfigError("unknown projection model variant: " + cfg.variant);
    }
    return m;
}

inline void save_projection_checkpoint(const std::filesystem::path& dir, ProjectionModel& m,
                                       const AdamState& opt, double lr, const json& config_echo) {
    netkit::CheckpointWriter w(dir);
    w.manifest()["task"] = "projection";
    w.manifest()["variant"] = m.variant;
    if (m.constrained) {
        ConstraintLayer& l = *m.constrained;
        w.manifest()["topology"] = {{"in_dim", l.in_dim()}, {"out_dim", l.out_dim()}, {"n_r", l.n_r()}};
        w.manifest()["box_active"] = l.box_active;
        w.add_tensor("affine.weight", l.affine.weight);
        w.add_tensor("affine.bias", l.affine.bias);
        w.add_tensor("bn.gamma", l.bn.gamma);
        w.add_tensor("bn.beta", l.bn.beta);
        w.add_tensor("bn.running_mean", l.bn.running_mean);
        w.add_tensor("bn.running_var", l.bn.running_var);
    } else {
        w.manifest()["topology"] = {{"in_dim", m.baseline->in_dim()}, {"out_dim", m.baseline->out_dim()}};
        w.manifest()["box_active"] = false;
        w.add_tensor("fc.weight", m.baseline->weight);
        w.add_tensor("fc.bias", m.baseline->bias);
    }
    w.manifest()["hrep_file"] = "constraints.hrep";
    w.manifest()["vrep_file"] = "constraints.vrep";
    w.manifest()["optimizer"] = {{"type", "adam"}, {"step", opt.step}, {"beta1", opt.beta1},
                                 {"beta2", opt.beta2}, {"eps", opt.eps}, {"lr", lr}};
    w.manifest()["config"] = config_echo;
    detail::save_constraint_files(w.dir(), m.hrep, m.vrep);
    w.finish();
}

inline ProjectionModel load_projection_checkpoint(const std::filesystem::path& dir) {
    netkit::CheckpointReader r(dir);
    const json& man = r.manifest();
    if (man.value("task", "") != "projection") throw CheckpointCorrupt("not a projection checkpoint");
    ProjectionModel m;
    m.variant = man.at("variant");
    m.hrep = polyhedra::read_hrep(dir / man.at("hrep_file").get<std::string>());
    m.vrep = polyhedra::read_vrep(dir / man.at("vrep_file").get<std::string>());
    Rng rng(0);
    if (m.variant == "constrained") {
        const auto in_dim = man.at("topology").at("in_dim").get<std::size_t>();
        m.constrained = ConstraintLayer::create(m.hrep, m.vrep, in_dim, rng);
        m.constrained->box_active = man.at("box_active").get<bool>();
        m.constrained->affine.weight = r.tensor("affine.weight");
        m.constrained->affine.bias = r.tensor("affine.bias");
        m.constrained->bn.gamma = r.tensor("bn.gamma");
        m.constrained->bn.beta = r.tensor("bn.beta");
        m.constrained->bn.running_mean = r.tensor("bn.running_mean");
        m.constrained->bn.running_var = r.tensor("bn.running_var");
    } else {
        m.baseline = LinearLayer{r.tensor("fc.weight"), r.tensor("fc.bias")};
    }
    return m;
}

/// Mean per-pixel optimum of Eq-style targets: average MSE between validation
/// rows and their cone projections, computed once with the solver as oracle.
inline double projection_oracle_mse(const polyhedra::HRep& h, const Tensor& val, double tol,
                                    std::size_t max_iter, std::size_t threads) {
    auto rep = projector::project_batch(h, false, val, tol, max_iter, threads);
    return detail::mse(rep.z, val);
}

inline MetricsLog run_projection_experiment(const ProjectionExperimentConfig& cfg,
                                            const std::filesystem::path& out_dir = {},
                                            const json& config_echo = json::object()) {
    if (cfg.box_activation_epoch > cfg.epochs) throw ConfigError("box_activation_epoch > epochs");
    const datakit::Dataset ds = detail::load_data(cfg.data);
    ProjectionModel model = make_projection_model(cfg);
    const bool constrained = model.variant == "constrained";
    if (ds.d() != static_cast<std::size_t>(model.hrep.d())) {
        throw DimensionMismatch("dataset dimension != constraint dimension");
    }

    const Tensor train_x = ds.train();
    const Tensor val_x = ds.val();
    const double oracle_mse =
        projection_oracle_mse(model.hrep, val_x, cfg.proj_tol, cfg.proj_max_iter, cfg.threads);

    std::vector<Tensor*> params = model.params();
    AdamState opt = AdamState::create(params);
    PlateauScheduler sched{.factor = cfg.anneal_factor, .patience = cfg.patience};
    double lr = cfg.lr;

    MetricsLog log;
    double best_val = std::numeric_limits<double>::infinity();

    auto eval_epoch = [&](std::size_t epoch) -> std::pair<double, double> {
        Tape t;
        Var in = make_leaf(t, val_x);
        Tensor out;
        if (constrained) {
            auto bound = model.constrained->bind(t, false);
            out = model.constrained->forward(t, in, bound, false).value();
        } else {
            Var w = make_leaf(t, model.baseline->weight);
            Var b = make_leaf(t, model.baseline->bias);
            Tensor raw = netkit::linear_forward(t, in, w, b).value();
            auto rep = projector::project_batch(model.hrep, false, raw, cfg.proj_tol,
                                                cfg.proj_max_iter, cfg.threads);
            out = std::move(rep.z);
        }
        double viol = -std::numeric_limits<double>::infinity();
        if (constrained) {
            viol = model.constrained->max_violation(out);
        } else if (model.hrep.m() > 0) {
            for (std::size_t i = 0; i < out.rows(); ++i) {
                Eigen::VectorXd z(out.cols());
                for (std::size_t j = 0; j < out.cols(); ++j) z[static_cast<Eigen::Index>(j)] = out(i, j);
                viol = std::max(viol, (model.hrep.a * z).maxCoeff());
            }
        }
        (void)epoch;
        return {detail::mse(out, val_x), viol};
    };

    auto run_epoch_record = [&](std::size_t epoch, double train_loss, double t0) {
        auto [val_loss, viol] = eval_epoch(epoch);
        best_val = std::min(best_val, val_loss);
        log.records.push_back({epoch, train_loss, val_loss, lr, viol, detail::now_seconds() - t0});
        return val_loss;
    };

    // epoch 0: the freshly initialized model, before any update
    {
        const double t0 = detail::now_seconds();
        if (constrained) model.constrained->box_active = cfg.box_activation_epoch == 0;
        double train_loss;
        {
            Tape t;
            Var in = make_leaf(t, train_x);
            Tensor out;
            if (constrained) {
                auto bound = model.constrained->bind(t, false);
                out = model.constrained->forward(t, in, bound, false).value();
            } else {
                Var w = make_leaf(t, model.baseline->weight);
                Var b = make_leaf(t, model.baseline->bias);
                out = netkit::linear_forward(t, in, w, b).value();
            }
            train_loss = detail::mse(out, train_x);
        }
        run_epoch_record(0, train_loss, t0);
    }

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const double t0 = detail::now_seconds();
        if (constrained) model.constrained->box_active = epoch > cfg.box_activation_epoch;
        double loss_sum = 0.0;
        const auto groups = datakit::batches(ds.n_train, cfg.batch, cfg.seed, epoch);
        for (const auto& idx : groups) {
            const Tensor x = datakit::gather_rows(ds.images, idx, 0);
            Tape t;
            Var in = make_leaf(t, x);
            Var out{};
            ConstraintLayer::Bound cbound;
            Var w{}, b{};
            if (constrained) {
                cbound = model.constrained->bind(t, true);
                out = model.constrained->forward(t, in, cbound, true);
            } else {
                w = make_leaf(t, model.baseline->weight, true);
                b = make_leaf(t, model.baseline->bias, true);
                out = netkit::linear_forward(t, in, w, b);
            }
            Var loss = detail::mse_loss(t, out, in);
            t.backward(loss.id);
            std::vector<const Tensor*> grads;
            if (constrained) {
                grads = {&t.grad(cbound.weight.id), &t.grad(cbound.bias.id),
                         &t.grad(cbound.gamma.id), &t.grad(cbound.beta.id)};
            } else {
                grads = {&t.grad(w.id), &t.grad(b.id)};
            }
            netkit::adam_step(opt, params, grads, lr);
            loss_sum += loss.value().data[0] * static_cast<double>(idx.size());
        }
        const double train_loss = loss_sum / static_cast<double>(ds.n_train);
        const double val_loss = run_epoch_record(epoch, train_loss, t0);
        lr = sched.step(val_loss, lr);
    }

    log.summary["task"] = "projection";
    log.summary["variant"] = model.variant;
    log.summary["best_val_mse"] = best_val;
    log.summary["oracle_mse"] = oracle_mse;
    log.summary["optimality_gap"] = best_val / oracle_mse;
    log.summary["epochs"] = cfg.epochs;
    log.summary["seed"] = cfg.seed;
    log.summary["config"] = config_echo;

    if (!out_dir.empty()) {
        log.write(out_dir);
        save_projection_checkpoint(out_dir / "checkpoint", model, opt, lr, config_echo);
    }
    return log;
}

// --- constrained VAE ---------------------------------------------------------

struct VaeModel {
    LinearLayer enc1, enc_mu, enc_logvar, dec1, dec2;
    ConstraintLayer out;
    polyhedra::HRep hrep;
    polyhedra::VRep vrep;
    std::size_t latent_dim = 0;

    std::vector<Tensor*> params() {
        std::vector<Tensor*> p = {&enc1.weight, &enc1.bias, &enc_mu.weight, &enc_mu.bias,
                                  &enc_logvar.weight, &enc_logvar.bias, &dec1.weight, &dec1.bias,
                                  &dec2.weight, &dec2.bias};
        for (Tensor* q : out.params()) p.push_back(q);
        return p;
    }
};

inline VaeModel make_vae_model(const VAEConfig& cfg) {
    VaeModel m;
    m.hrep = polyhedra::checkerboard_hrep(cfg.side, cfg.tiles_per_side);
    auto dd = polyhedra::dd_convert(m.hrep);
    m.vrep = dd.vrep;
    const auto d = static_cast<std::size_t>(m.hrep.d());
    Rng rng(cfg.seed);
    m.enc1 = LinearLayer::init(d, cfg.hidden_dim, rng);
    m.enc_mu = LinearLayer::init(cfg.hidden_dim, cfg.latent_dim, rng);
    m.enc_logvar = LinearLayer::init(cfg.hidden_dim, cfg.latent_dim, rng);
    m.dec1 = LinearLayer::init(cfg.latent_dim, cfg.hidden_dim, rng);
    m.dec2 = LinearLayer::init(cfg.hidden_dim, d, rng);
    m.out = ConstraintLayer::create(m.hrep, m.vrep, d, rng);
    m.latent_dim = cfg.latent_dim;
    return m;
}

struct VaeBound {
    Var e1w, e1b, emw, emb, evw, evb, d1w, d1b, d2w, d2b;
    ConstraintLayer::Bound out;
};

inline VaeBound bind_vae(VaeModel& m, Tape& t, bool rg) {
    VaeBound b;
    b.e1w = make_leaf(t, m.enc1.weight, rg);
    b.e1b = make_leaf(t, m.enc1.bias, rg);
    b.emw = make_leaf(t, m.enc_mu.weight, rg);
    b.emb = make_leaf(t, m.enc_mu.bias, rg);
    b.evw = make_leaf(t, m.enc_logvar.weight, rg);
    b.evb = make_leaf(t, m.enc_logvar.bias, rg);
    b.d1w = make_leaf(t, m.dec1.weight, rg);
    b.d1b = make_leaf(t, m.dec1.bias, rg);
    b.d2w = make_leaf(t, m.dec2.weight, rg);
    b.d2b = make_leaf(t, m.dec2.bias, rg);
    b.out = m.out.bind(t, rg);
    return b;
}

inline Var vae_decode(VaeModel& m, Tape& t, Var z, const VaeBound& b, bool training) {
    Var h = tensorkit::relu(netkit::linear_forward(t, z, b.d1w, b.d1b));
    Var pre = tensorkit::sigmoid(netkit::linear_forward(t, h, b.d2w, b.d2b));
    return m.out.forward(t, pre, b.out, training);
}

/// Closed-form KL( N(mu, diag(e^logvar)) || N(0, I) ), summed over all
/// entries: 0.5 * sum(mu^2 + sigma^2 - 1 - log sigma^2).
inline Var gaussian_kl_sum(Tape& t, Var mu, Var logvar) {
    Var ones = make_leaf(t, Tensor::full(logvar.value().shape, 1.0));
    Var terms = sub(add(mul(mu, mu), tensorkit::exp(logvar)), add(ones, logvar));
    return scale(sum_all(terms), 0.5);
}

struct VaeLoss {
    Var neg_elbo;   // scalar: recon + kl, averaged over the batch
    Var recon;      // 0.5 sum ||x - xhat||^2 / n
    Var kl;         // closed-form diagonal Gaussian KL / n
};

inline VaeLoss vae_loss(VaeModel& m, Tape& t, Var x, const VaeBound& b, const Tensor& eps,
                        bool training) {
    const auto n = static_cast<double>(x.value().rows());
    Var h = tensorkit::relu(netkit::linear_forward(t, x, b.e1w, b.e1b));
    Var mu = netkit::linear_forward(t, h, b.emw, b.emb);
    Var logvar = netkit::linear_forward(t, h, b.evw, b.evb);
    Var z = add(mu, mul(tensorkit::exp(scale(logvar, 0.5)), make_leaf(t, eps)));
    Var xhat = vae_decode(m, t, z, b, training);

    Var diff = sub(xhat, x);
    Var recon = scale(sum_all(mul(diff, diff)), 0.5 / n);
    Var kl = scale(gaussian_kl_sum(t, mu, logvar), 1.0 / n);
    return {add(recon, kl), recon, kl};
}

inline void save_vae_checkpoint(const std::filesystem::path& dir, VaeModel& m, const AdamState& opt,
                                double lr, const json& config_echo) {
    netkit::CheckpointWriter w(dir);
    w.manifest()["task"] = "vae";
    w.manifest()["topology"] = {{"d", m.out.out_dim()}, {"hidden", m.enc1.out_dim()},
                                {"latent", m.latent_dim}, {"n_r", m.out.n_r()}};
    w.manifest()["box_active"] = m.out.box_active;
    w.manifest()["hrep_file"] = "constraints.hrep";
    w.manifest()["vrep_file"] = "constraints.vrep";
    w.manifest()["optimizer"] = {{"type", "adam"}, {"step", opt.step}, {"beta1", opt.beta1},
                                 {"beta2", opt.beta2}, {"eps", opt.eps}, {"lr", lr}};
    w.manifest()["config"] = config_echo;
    w.add_tensor("enc1.weight", m.enc1.weight);
    w.add_tensor("enc1.bias", m.enc1.bias);
    w.add_tensor("enc_mu.weight", m.enc_mu.weight);
    w.add_tensor("enc_mu.bias", m.enc_mu.bias);
    w.add_tensor("enc_logvar.weight", m.enc_logvar.weight);
    w.add_tensor("enc_logvar.bias", m.enc_logvar.bias);
    w.add_tensor("dec1.weight", m.dec1.weight);
    w.add_tensor("dec1.bias", m.dec1.bias);
    w.add_tensor("dec2.weight", m.dec2.weight);
    w.add_tensor("dec2.bias", m.dec2.bias);
    w.add_tensor("out.affine.weight", m.out.affine.weight);
    w.add_tensor("out.affine.bias", m.out.affine.bias);
    w.add_tensor("out.bn.gamma", m.out.bn.gamma);
    w.add_tensor("out.bn.beta", m.out.bn.beta);
    w.add_tensor("out.bn.running_mean", m.out.bn.running_mean);
    w.add_tensor("out.bn.running_var", m.out.bn.running_var);
    detail::save_constraint_files(w.dir(), m.hrep, m.vrep);
    w.finish();
}

inline VaeModel load_vae_checkpoint(const std::filesystem::path& dir) {
    netkit::CheckpointReader r(dir);
    const json man = r.manifest();
    if (man.value("task", "") != "vae") throw CheckpointCorrupt("not a vae checkpoint");
    VaeModel m;
    m.hrep = polyhedra::read_hrep(dir / man.at("hrep_file").get<std::string>());
    m.vrep = polyhedra::read_vrep(dir / man.at("vrep_file").get<std::string>());
    m.latent_dim = man.at("topology").at("latent").get<std::size_t>();
    const auto d = static_cast<std::size_t>(m.hrep.d());
    Rng rng(0);
    m.out = ConstraintLayer::create(m.hrep, m.vrep, d, rng);
    m.out.box_active = man.at("box_active").get<bool>();
    m.enc1 = LinearLayer{r.tensor("enc1.weight"), r.tensor("enc1.bias")};
    m.enc_mu = LinearLayer{r.tensor("enc_mu.weight"), r.tensor("enc_mu.bias")};
    m.enc_logvar = LinearLayer{r.tensor("enc_logvar.weight"), r.tensor("enc_logvar.bias")};
    m.dec1 = LinearLayer{r.tensor("dec1.weight"), r.tensor("dec1.bias")};
    m.dec2 = LinearLayer{r.tensor("dec2.weight"), r.tensor("dec2.bias")};
    m.out.affine.weight = r.tensor("out.affine.weight");
    m.out.affine.bias = r.tensor("out.affine.bias");
    m.out.bn.gamma = r.tensor("out.bn.gamma");
    m.out.bn.beta = r.tensor("out.bn.beta");
    m.out.bn.running_mean = r.tensor("out.bn.running_mean");
    m.out.bn.running_var = r.tensor("out.bn.running_var");
    return m;
}

inline MetricsLog run_vae_experiment(const VAEConfig& cfg,
                                     const std::filesystem::path& out_dir = {},
                                     const json& config_echo = json::object()) {
    if (cfg.box_activation_epoch > cfg.epochs) throw ConfigError("box_activation_epoch > epochs");
    if (cfg.latent_dim < 1) throw ConfigError("latent_dim must be >= 1");
    DataConfig dc = cfg.data;
    dc.side = cfg.side;
    const datakit::Dataset ds = detail::load_data(dc);
    VaeModel model = make_vae_model(cfg);
    if (ds.d() != model.out.out_dim()) throw DimensionMismatch("dataset dimension != constraint dimension");

    const Tensor train_x = ds.train();
    const Tensor val_x = ds.val();
    std::vector<Tensor*> params = model.params();
    AdamState opt = AdamState::create(params);
    PlateauScheduler sched{.factor = cfg.anneal_factor, .patience = cfg.patience};
    double lr = cfg.lr;
    Rng noise_rng(Rng::mix(cfg.seed, 0xE15B));

    MetricsLog log;

    auto eval_pass = [&](std::size_t epoch) -> std::pair<double, double> {
        Tape t;
        VaeBound b = bind_vae(model, t, false);
        Var x = make_leaf(t, val_x);
        Rng eval_rng(Rng::mix(cfg.seed, 0xEA17 + epoch));
        const Tensor eps = detail::normal_tensor({val_x.rows(), cfg.latent_dim}, eval_rng);
        VaeLoss l = vae_loss(model, t, x, b, eps, false);
        // reconstruct for the violation metric
        double viol;
        {
            Tape t2;
            VaeBound b2 = bind_vae(model, t2, false);
            Var x2 = make_leaf(t2, val_x);
            Var h = tensorkit::relu(netkit::linear_forward(t2, x2, b2.e1w, b2.e1b));
            Var mu = netkit::linear_forward(t2, h, b2.emw, b2.emb);
            Tensor recon = vae_decode(model, t2, mu, b2, false).value();
            viol = model.out.max_violation(recon);
        }
        return {l.neg_elbo.value().data[0], viol};
    };

    auto epoch_record = [&](std::size_t epoch, double train_loss, double t0) {
        auto [val_loss, viol] = eval_pass(epoch);
        log.records.push_back({epoch, train_loss, val_loss, lr, viol, detail::now_seconds() - t0});
        return val_loss;
    };

    {
        const double t0 = detail::now_seconds();
        model.out.box_active = cfg.box_activation_epoch == 0;
        Tape t;
        VaeBound b = bind_vae(model, t, false);
        Var x = make_leaf(t, train_x);
        Rng warm_rng(Rng::mix(cfg.seed, 0xF00D));
        const Tensor eps = detail::normal_tensor({train_x.rows(), cfg.latent_dim}, warm_rng);
        VaeLoss l = vae_loss(model, t, x, b, eps, false);
        epoch_record(0, l.neg_elbo.value().data[0], t0);
    }

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const double t0 = detail::now_seconds();
        model.out.box_active = epoch > cfg.box_activation_epoch;
        double loss_sum = 0.0;
        const auto groups = datakit::batches(ds.n_train, cfg.batch, cfg.seed, epoch);
        for (const auto& idx : groups) {
            const Tensor x = datakit::gather_rows(ds.images, idx, 0);
            Tape t;
            VaeBound b = bind_vae(model, t, true);
            Var xin = make_leaf(t, x);
            const Tensor eps = detail::normal_tensor({x.rows(), cfg.latent_dim}, noise_rng);
            VaeLoss l = vae_loss(model, t, xin, b, eps, true);
            t.backward(l.neg_elbo.id);
            std::vector<const Tensor*> grads = {
                &t.grad(b.e1w.id), &t.grad(b.e1b.id), &t.grad(b.emw.id), &t.grad(b.emb.id),
                &t.grad(b.evw.id), &t.grad(b.evb.id), &t.grad(b.d1w.id), &t.grad(b.d1b.id),
                &t.grad(b.d2w.id), &t.grad(b.d2b.id), &t.grad(b.out.weight.id),
                &t.grad(b.out.bias.id), &t.grad(b.out.gamma.id), &t.grad(b.out.beta.id)};
            netkit::adam_step(opt, params, grads, lr);
            loss_sum += l.neg_elbo.value().data[0] * static_cast<double>(idx.size());
        }
        const double train_loss = loss_sum / static_cast<double>(ds.n_train);
        const double val_loss = epoch_record(epoch, train_loss, t0);
        lr = sched.step(val_loss, lr);
    }

    double first_elbo = 0.0, best_elbo = -std::numeric_limits<double>::infinity();
    for (const auto& r : log.records) {
        if (r.epoch == 1) first_elbo = -r.train_loss;
        if (r.epoch >= 1) best_elbo = std::max(best_elbo, -r.train_loss);
    }
    log.summary["task"] = "vae";
    log.summary["first_epoch_elbo"] = first_elbo;
    log.summary["best_elbo"] = best_elbo;
    log.summary["elbo_improvement"] = (best_elbo - first_elbo) / std::abs(first_elbo);
    log.summary["epochs"] = cfg.epochs;
    log.summary["seed"] = cfg.seed;
    log.summary["config"] = config_echo;

    if (!out_dir.empty()) {
        log.write(out_dir);
        save_vae_checkpoint(out_dir / "checkpoint", model, opt, lr, config_echo);
    }
    return log;
}

struct SampleReport {
    Tensor images;          // n x d
    double max_violation = -std::numeric_limits<double>::infinity();
    double max_linf = 0.0;
    bool pass = true;       // feasibility within eps_layer (+ box when active)
};

/// Decode n latent prior draws through a VAE checkpoint, deterministically in
/// the seed, and report worst-case feasibility numbers.
inline SampleReport sample_vae(const std::filesystem::path& ckpt_dir, std::size_t n,
                               std::uint64_t seed) {
    VaeModel m = load_vae_checkpoint(ckpt_dir);
    SampleReport rep;
    rep.images = Tensor::zeros({n, m.out.out_dim()});
    if (n == 0) {
        rep.max_violation = 0.0;
        return rep;
    }
    Rng rng(seed);
    const Tensor z = detail::normal_tensor({n, m.latent_dim}, rng);
    Tape t;
    VaeBound b = bind_vae(m, t, false);
    Var zv = make_leaf(t, z);
    rep.images = vae_decode(m, t, zv, b, false).value();
    rep.max_violation = m.out.max_violation(rep.images);
    rep.max_linf = detail::linf(rep.images);
    rep.pass = rep.max_violation <= m.out.eps_layer &&
               (!m.out.box_active || rep.max_linf <= 1.0 + 1e-12);
    return rep;
}

// --- inference benchmark -----------------------------------------------------

struct BenchConfig {
    std::filesystem::path constrained_ckpt;
    std::filesystem::path unconstrained_ckpt;
    std::size_t n_runs = 100;
    std::size_t batch = 64;
    std::size_t warmup = 3;
    bool box = true;
    std::uint64_t input_seed = 123;
    double proj_tol = 1e-8;
    std::size_t proj_max_iter = 10000;
};

struct BenchReport {
    double constrained_mean_s = 0.0, constrained_std_s = 0.0;
    double unconstrained_mean_s = 0.0, unconstrained_std_s = 0.0;
    double speedup_ratio = 0.0;
    std::size_t n_runs = 0, batch = 0;
    double mean_projection_cycles = 0.0;

    json to_json() const {
        json j;
        j["constrained_mean_s"] = constrained_mean_s;
        j["constrained_std_s"] = constrained_std_s;
        j["unconstrained_mean_s"] = unconstrained_mean_s;
        j["unconstrained_std_s"] = unconstrained_std_s;
        j["speedup_ratio"] = speedup_ratio;
        j["n_runs"] = n_runs;
        j["batch"] = batch;
        j["mean_projection_cycles"] = mean_projection_cycles;
        return j;
    }
};

namespace detail {

struct Welford {
    double mean = 0.0, m2 = 0.0;
    std::size_t n = 0;
    void push(double x) {
        ++n;
        const double d = x - mean;
        mean += d / static_cast<double>(n);
        m2 += d * (x - mean);
    }
    double stddev() const { return n > 1 ? std::sqrt(m2 / static_cast<double>(n - 1)) : 0.0; }
};

}  // namespace detail

/// Wall-clock comparison of (a) the constrained forward pass against (b) the
/// unconstrained forward plus a Dykstra projection, single-threaded, at equal
/// batch size. Reports mean +- std over n_runs after warm-up and the ratio.
inline BenchReport bench_inference(const std::filesystem::path& constrained_ckpt,
                                   const std::filesystem::path& unconstrained_ckpt,
                                   const polyhedra::HRep& h, const BenchConfig& cfg) {
    ProjectionModel mc = load_projection_checkpoint(constrained_ckpt);
    ProjectionModel mu = load_projection_checkpoint(unconstrained_ckpt);
    if (!mc.constrained || mu.variant != "projection_baseline") {
        throw ConfigError("bench_inference: expected a constrained and an unconstrained checkpoint");
    }
    if (mc.hrep.d() != h.d() || mu.hrep.d() != h.d()) {
        throw DimensionMismatch("bench_inference: checkpoints disagree on dimension");
    }

    const std::size_t d = static_cast<std::size_t>(h.d());
    const std::size_t side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(d))));
    const datakit::Dataset inputs = datakit::synthetic_dataset(side, cfg.batch, cfg.input_seed);
    const Tensor x = inputs.rows(0, cfg.batch);

    auto run_constrained = [&]() {
        Tape t;
        auto bound = mc.constrained->bind(t, false);
        Var in = make_leaf(t, x);
        return mc.constrained->forward(t, in, bound, false).value();
    };
    std::size_t total_cycles = 0;
    auto run_unconstrained = [&](bool count) {
        Tape t;
        Var w = make_leaf(t, mu.baseline->weight);
        Var b = make_leaf(t, mu.baseline->bias);
        Var in = make_leaf(t, x);
        Tensor raw = netkit::linear_forward(t, in, w, b).value();
        auto rep = projector::project_batch(h, cfg.box, raw, cfg.proj_tol, cfg.proj_max_iter, 1);
        if (count) total_cycles += rep.total_cycles;
        return rep.z;
    };

    for (std::size_t i = 0; i < cfg.warmup; ++i) {
        (void)run_constrained();
        (void)run_unconstrained(false);
    }

    detail::Welford wc, wu;
    for (std::size_t i = 0; i < cfg.n_runs; ++i) {
        const double t0 = detail::now_seconds();
        (void)run_constrained();
        wc.push(detail::now_seconds() - t0);
    }
    for (std::size_t i = 0; i < cfg.n_runs; ++i) {
        const double t0 = detail::now_seconds();
        (void)run_unconstrained(true);
        wu.push(detail::now_seconds() - t0);
    }

    BenchReport rep;
    rep.constrained_mean_s = wc.mean;
    rep.constrained_std_s = wc.stddev();
    rep.unconstrained_mean_s = wu.mean;
    rep.unconstrained_std_s = wu.stddev();
    rep.speedup_ratio = wu.mean / wc.mean;
    rep.n_runs = cfg.n_runs;
    rep.batch = cfg.batch;
    rep.mean_projection_cycles =
        static_cast<double>(total_cycles) / static_cast<double>(cfg.n_runs * cfg.batch);
    return rep;
}

}  // namespace conecraft::experiments
