#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "conecraft/checkpoint.hpp"
#include "conecraft/netkit.hpp"
#include "conecraft/nnls.hpp"
#include "conecraft/polyhedra.hpp"

using namespace conecraft;
using namespace conecraft::netkit;
namespace poly = conecraft::polyhedra;
namespace tk = conecraft::tensorkit;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

ConstraintLayer desk_layer(Rng& rng, bool box) {
    poly::HRep h = poly::checkerboard_hrep(16, 2);
    auto res = poly::dd_convert(h);
    ConstraintLayer layer = ConstraintLayer::create(h, res.vrep, 256, rng);
    layer.box_active = box;
    return layer;
}

}  // namespace

TEST(ConstraintLayer, ZeroCoefficientsGiveZeroOutput) {
    Rng rng(1);
    poly::HRep h(Eigen::MatrixXd(-Eigen::MatrixXd::Identity(3, 3)));
    auto res = poly::dd_convert(h);
    ConstraintLayer layer = ConstraintLayer::create(h, res.vrep, 4, rng);
    // zero weights and zero bias force |affine| = 0
    std::fill(layer.affine.weight.data.begin(), layer.affine.weight.data.end(), 0.0);
    Tape t;
    auto p = layer.bind(t, false);
    Var x = make_leaf(t, random_tensor({5, 4}, rng));
    Var z = layer.forward(t, x, p, false);
    for (double v : z.value().data) EXPECT_DOUBLE_EQ(v, 0.0);
    EXPECT_LE(layer.max_violation(z.value()), 0.0);
}

TEST(ConstraintLayer, OrthantConeOutputsAreNonnegative) {
    Rng rng(2);
    poly::HRep h(Eigen::MatrixXd(-Eigen::MatrixXd::Identity(4, 4)));
    auto res = poly::dd_convert(h);
    ConstraintLayer layer = ConstraintLayer::create(h, res.vrep, 6, rng);
    Tape t;
    auto p = layer.bind(t, false);
    Var x = make_leaf(t, random_tensor({32, 6}, rng));
    Var z = layer.forward(t, x, p, true);
    for (double v : z.value().data) EXPECT_GE(v, 0.0);
}

TEST(ConstraintLayer, DeskCheckerboardHardConstraint) {
    Rng rng(3);
    ConstraintLayer layer = desk_layer(rng, false);
    // randomized parameters, not trained ones
    for (int round = 0; round < 3; ++round) {
        for (double& v : layer.affine.weight.data) v = rng.normal();
        for (double& v : layer.affine.bias.data) v = rng.normal();
        for (double& v : layer.bn.gamma.data) v = rng.uniform(-3, 3);
        for (double& v : layer.bn.beta.data) v = rng.uniform(-3, 3);
        Tape t;
        auto p = layer.bind(t, false);
        Var x = make_leaf(t, random_tensor({200, 256}, rng, -1, 1));
        Var z = layer.forward(t, x, p, round % 2 == 0);
        EXPECT_LE(layer.max_violation(z.value()), layer.eps_layer);
    }
}

TEST(ConstraintLayer, BoxKeepsOutputInConeAndBox) {
    Rng rng(4);
    ConstraintLayer layer = desk_layer(rng, true);
    for (double& v : layer.affine.bias.data) v = rng.normal() * 3.0;  // push outputs outside the box
    Tape t;
    auto p = layer.bind(t, false);
    Var x = make_leaf(t, random_tensor({100, 256}, rng, -1, 1));
    Var z = layer.forward(t, x, p, false);
    EXPECT_LE(layer.max_violation(z.value()), layer.eps_layer);
    double linf = 0;
    for (double v : z.value().data) linf = std::max(linf, std::abs(v));
    EXPECT_LE(linf, 1.0 + 1e-12);
}

TEST(ConstraintLayer, ScaleInvarianceOfFeasibility) {
    Rng rng(5);
    ConstraintLayer layer = desk_layer(rng, false);
    Tape t;
    auto p = layer.bind(t, false);
    Var x = make_leaf(t, random_tensor({8, 256}, rng, -1, 1));
    Var normed = tk::batch_norm(x, p.gamma, p.beta, layer.bn, false);
    Var pre = linear_forward(t, normed, p.weight, p.bias);
    Var coeff = tk::abs(pre);
    for (double alpha : {0.0, 0.5, 3.0, 17.0}) {
        Var scaled = tk::scale(coeff, alpha);
        Var rays = make_leaf(t, layer.rays, false);
        Var z = matmul(scaled, rays, false, true);
        EXPECT_LE(layer.max_violation(z.value()), std::max(alpha, 1.0) * layer.eps_layer) << alpha;
    }
}

TEST(ConstraintLayer, RejectsInfeasibleGenerators) {
    Rng rng(6);
    poly::HRep h(Eigen::MatrixXd(-Eigen::MatrixXd::Identity(3, 3)));
    poly::VRep bad;
    bad.dim = 3;
    bad.rays = -Eigen::MatrixXd::Identity(3, 3);  // violates z >= 0
    bad.lineality.resize(3, 0);
    EXPECT_THROW(ConstraintLayer::create(h, bad, 2, rng), Error);
}

TEST(ConstraintLayer, GradientLivenessAbsVersusRelu) {
    Rng rng(7);
    Tensor pre0 = random_tensor({6, 10}, rng);
    for (double& v : pre0.data) {
        while (std::abs(v) < 5e-2) v = rng.uniform(-2, 2);
    }
    Tensor c = random_tensor({6, 10}, rng);

    Tape ta;
    Var pa = make_leaf(ta, pre0, true);
    Var ya = sum_all(mul(make_leaf(ta, c), tk::abs(pa)));
    ta.backward(ya.id);
    for (std::size_t i = 0; i < pre0.numel(); ++i) {
        // |d/dpre| == |d/d(abs)| elementwise: abs preserves gradient magnitude
        EXPECT_NEAR(std::abs(pa.grad().data[i]), std::abs(c.data[i]), 1e-14);
    }

    Tape tr;
    Var pr = make_leaf(tr, pre0, true);
    Var yr = sum_all(mul(make_leaf(tr, c), tk::relu(pr)));
    tr.backward(yr.id);
    for (std::size_t i = 0; i < pre0.numel(); ++i) {
        if (pre0.data[i] < 0) {
            EXPECT_DOUBLE_EQ(pr.grad().data[i], 0.0);  // dead coordinate under relu
        } else {
            EXPECT_NEAR(std::abs(pr.grad().data[i]), std::abs(c.data[i]), 1e-14);
        }
    }
}

TEST(BoxScale, InsideBoxUnchanged) {
    Tape t;
    Var x = make_leaf(t, Tensor({1, 2}, {0.5, -0.5}));
    Var y = box_scale(x);
    EXPECT_DOUBLE_EQ(y.value().data[0], 0.5);
    EXPECT_DOUBLE_EQ(y.value().data[1], -0.5);
}

TEST(BoxScale, OutsideBoxScaledToBoundary) {
    Tape t;
    Var x = make_leaf(t, Tensor({1, 2}, {2.0, 0.0}));
    Var y = box_scale(x);
    EXPECT_DOUBLE_EQ(y.value().data[0], 1.0);
    EXPECT_DOUBLE_EQ(y.value().data[1], 0.0);
}

TEST(BoxScale, ConePointsStayInCone) {
    Rng rng(8);
    poly::HRep h = poly::checkerboard_hrep(4, 2);
    auto res = poly::dd_convert(h);
    const Eigen::MatrixXd g = poly::expand_generators(res.vrep);
    for (int trial = 0; trial < 30; ++trial) {
        Eigen::VectorXd c(g.cols());
        for (Eigen::Index i = 0; i < c.size(); ++i) c[i] = std::abs(rng.normal()) * 3.0;
        Eigen::VectorXd z = g * c;
        Tape t;
        Tensor zt = Tensor::zeros({1, static_cast<std::size_t>(z.size())});
        for (Eigen::Index i = 0; i < z.size(); ++i) zt.data[static_cast<std::size_t>(i)] = z[i];
        Var y = box_scale(make_leaf(t, zt));
        Eigen::VectorXd zs(z.size());
        for (Eigen::Index i = 0; i < z.size(); ++i) zs[i] = y.value().data[static_cast<std::size_t>(i)];
        EXPECT_TRUE(poly::membership(h, zs, 1e-12));
        EXPECT_LE(zs.cwiseAbs().maxCoeff(), 1.0 + 1e-12);
    }
}

TEST(BoxScale, GradCheckBothBranches) {
    Rng rng(9);
    // rows strictly inside and strictly outside the box, away from the tie
    Tensor x0({2, 3}, {0.3, -0.5, 0.2, 1.8, -0.4, 0.9});
    const Tensor w0 = random_tensor({2, 3}, rng);
    auto f = [&](Tape& t, Var x) {
        Var w = make_leaf(t, w0);
        return sum_all(mul(w, box_scale(x)));
    };
    EXPECT_LT(tk::grad_check(f, x0), 1e-6);
}

TEST(GeneralPolyhedron, SingleVertexIsConstant) {
    Tape t;
    Tensor vertices({2, 1}, {0.7, -0.4});
    Tensor rays({2, 0}, {});
    Var logits = make_leaf(t, Tensor({3, 1}, {5.0, -2.0, 0.0}));
    Var mu = make_leaf(t, Tensor({3, 0}, {}));
    Var out = general_polyhedron_combine(t, vertices, rays, logits, mu);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_NEAR(out.value()(i, 0), 0.7, 1e-12);
        EXPECT_NEAR(out.value()(i, 1), -0.4, 1e-12);
    }
}

TEST(GeneralPolyhedron, SegmentMidpoint) {
    Tape t;
    Tensor vertices({2, 2}, {0.0, 1.0, 0.0, 0.0});  // columns (0,0) and (1,0)
    Tensor rays({2, 0}, {});
    Var logits = make_leaf(t, Tensor({1, 2}, {0.0, 0.0}));
    Var mu = make_leaf(t, Tensor({1, 0}, {}));
    Var out = general_polyhedron_combine(t, vertices, rays, logits, mu);
    EXPECT_NEAR(out.value()(0, 0), 0.5, 1e-15);
    EXPECT_NEAR(out.value()(0, 1), 0.0, 1e-15);
}

TEST(GeneralPolyhedron, TriangleWithRayMembership) {
    Rng rng(10);
    Tensor vertices({2, 3}, {0.0, 1.0, 0.0,
                             0.0, 0.0, 1.0});
    Tensor rays({2, 1}, {1.0, 1.0});
    Eigen::MatrixXd vm(3, 3);  // homogenized vertices [v; 1]
    vm << 0, 1, 0,
          0, 0, 1,
          1, 1, 1;
    Eigen::MatrixXd rm(3, 1);
    rm << 1, 1, 0;
    Eigen::MatrixXd gens(3, 4);
    gens << vm, rm;
    for (int trial = 0; trial < 20; ++trial) {
        Tape t;
        Var logits = make_leaf(t, random_tensor({1, 3}, rng, -3, 3));
        Var mu = make_leaf(t, random_tensor({1, 1}, rng, -2, 2));
        Var out = general_polyhedron_combine(t, vertices, rays, logits, mu);
        // feasibility LP: exists lambda >= 0 summing to 1 and mu >= 0 with
        // V lambda + R mu = x  <=>  [x;1] in cone([V;1] | [R;0])
        Eigen::VectorXd target(3);
        target << out.value()(0, 0), out.value()(0, 1), 1.0;
        EXPECT_TRUE(in_conical_hull(gens, target, 1e-8)) << "trial " << trial;

        // lambda rows sum to one
        Var lam = tk::softmax(logits);
        double s = 0;
        for (int j = 0; j < 3; ++j) s += lam.value().data[static_cast<std::size_t>(j)];
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
    Tensor w({3}, {1.0, -2.0, 0.5});
    Tensor g = Tensor::zeros({3});
    std::vector<Tensor*> params{&w};
    AdamState st = AdamState::create(params);
    adam_step(st, params, {&g}, 0.1);
    EXPECT_EQ(w.data, (std::vector<double>{1.0, -2.0, 0.5}));
}

TEST(Adam, QuadraticConvergesLikeReferenceImplementation) {
    // reference scalar Adam, written independently of the library loop
    double w_ref = 1.0, m_ref = 0.0, v_ref = 0.0;
    const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;

    Tensor w({1}, {1.0});
    std::vector<Tensor*> params{&w};
    AdamState st = AdamState::create(params);

    for (int k = 1; k <= 200; ++k) {
        const double g_ref = 2.0 * w_ref;
        m_ref = b1 * m_ref + (1 - b1) * g_ref;
        v_ref = b2 * v_ref + (1 - b2) * g_ref * g_ref;
        w_ref -= lr * (m_ref / (1 - std::pow(b1, k))) / (std::sqrt(v_ref / (1 - std::pow(b2, k))) + eps);

        Tensor g({1}, {2.0 * w.data[0]});
        adam_step(st, params, {&g}, lr);
        ASSERT_NEAR(w.data[0], w_ref, 1e-12) << "step " << k;
    }
    EXPECT_LT(std::abs(w.data[0]), 1e-2);
}

TEST(Adam, FirstStepMagnitudeIsLearningRate) {
    for (double g0 : {1.0, -3.0, 10.0}) {
        Tensor w({1}, {0.0});
        std::vector<Tensor*> params{&w};
        AdamState st = AdamState::create(params);
        Tensor g({1}, {g0});
        adam_step(st, params, {&g}, 1e-4);
        EXPECT_NEAR(std::abs(w.data[0]), 1e-4, 1.1e-12) << g0;
        EXPECT_EQ(w.data[0] > 0, g0 < 0);
    }
}

TEST(Scheduler, StrictlyDecreasingKeepsRate) {
    PlateauScheduler s{.factor = 0.5, .patience = 5};
    double lr = 1e-3;
    for (int e = 0; e < 20; ++e) lr = s.step(1.0 / (e + 1.0), lr);
    EXPECT_DOUBLE_EQ(lr, 1e-3);
}

TEST(Scheduler, ConstantLossHalvesAfterEpochSix) {
    PlateauScheduler s{.factor = 0.5, .patience = 5};
    double lr = 1e-3;
    for (int e = 1; e <= 6; ++e) {
        lr = s.step(1.0, lr);
        EXPECT_DOUBLE_EQ(lr, 1e-3) << "epoch " << e;
    }
    lr = s.step(1.0, lr);  // more than 5 stagnant epochs now
    EXPECT_DOUBLE_EQ(lr, 5e-4);
    // counter reset: next five calls keep the new rate
    for (int e = 0; e < 5; ++e) {
        lr = s.step(1.0, lr);
        EXPECT_DOUBLE_EQ(lr, 5e-4);
    }
    lr = s.step(1.0, lr);
    EXPECT_DOUBLE_EQ(lr, 2.5e-4);
}

TEST(Scheduler, ImprovementResetsCounter) {
    PlateauScheduler s{.factor = 0.5, .patience = 5};
    double lr = 1e-3;
    lr = s.step(1.0, lr);
    for (int e = 0; e < 4; ++e) lr = s.step(1.0, lr);  // 4 stagnant epochs
    lr = s.step(0.5, lr);                              // improvement at the 5th
    EXPECT_DOUBLE_EQ(lr, 1e-3);
    for (int e = 0; e < 5; ++e) {
        lr = s.step(0.5, lr);
        EXPECT_DOUBLE_EQ(lr, 1e-3);
    }
    lr = s.step(0.5, lr);
    EXPECT_DOUBLE_EQ(lr, 5e-4);
}

TEST(Checkpoint, BitExactRoundTrip) {
    Rng rng(11);
    const auto dir = std::filesystem::temp_directory_path() / "conecraft_ckpt_test";
    std::filesystem::remove_all(dir);

    Tensor a = random_tensor({4, 3}, rng);
    Tensor b = random_tensor({7}, rng);
    {
        CheckpointWriter w(dir);
        w.manifest()["task"] = "test";
        w.manifest()["box_active"] = true;
        w.add_tensor("layer.weight", a);
        w.add_tensor("layer.bias", b);
        w.finish();
    }
    CheckpointReader r(dir);
    EXPECT_EQ(r.manifest().at("task"), "test");
    Tensor a2 = r.tensor("layer.weight");
    Tensor b2 = r.tensor("layer.bias");
    ASSERT_EQ(a2.shape, a.shape);
    EXPECT_EQ(a2.data, a.data);  // bitwise
    EXPECT_EQ(b2.data, b.data);

    // re-save and compare file bytes
    const auto dir2 = std::filesystem::temp_directory_path() / "conecraft_ckpt_test2";
    std::filesystem::remove_all(dir2);
    {
        CheckpointWriter w(dir2);
        w.manifest()["task"] = "test";
        w.manifest()["box_active"] = true;
        w.add_tensor("layer.weight", a2);
        w.add_tensor("layer.bias", b2);
        w.finish();
    }
    for (const char* f : {"layer.weight.bin", "layer.bias.bin", "manifest.json"}) {
        std::ifstream f1(dir / f, std::ios::binary);
        std::ifstream f2(dir2 / f, std::ios::binary);
        std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
        std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
        EXPECT_EQ(s1, s2) << f;
    }
    std::filesystem::remove_all(dir);
    std::filesystem::remove_all(dir2);
}

TEST(Checkpoint, CorruptionIsDetected) {
    Rng rng(12);
    const auto dir = std::filesystem::temp_directory_path() / "conecraft_ckpt_bad";
    std::filesystem::remove_all(dir);
    {
        CheckpointWriter w(dir);
        w.add_tensor("t", random_tensor({4}, rng));
        w.finish();
    }
    // truncate the tensor file
    std::filesystem::resize_file(dir / "t.bin", 8);
    CheckpointReader r(dir);
    EXPECT_THROW(r.tensor("t"), CheckpointCorrupt);
    EXPECT_THROW(r.tensor("missing"), CheckpointCorrupt);
    std::filesystem::remove_all(dir);
    EXPECT_THROW(CheckpointReader{dir}, CheckpointCorrupt);
}
