#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ma2mi/checkpoint.hpp"
#include "ma2mi/config.hpp"
#include "ma2mi/nn.hpp"
#include "ma2mi/rng.hpp"
#include "ma2mi/tensor.hpp"
#include "test_util.hpp"

#include <cmath>
#include <filesystem>
#include <set>

using namespace ma2mi;

TEST_CASE("rng is deterministic and children are independent streams") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.u64() == b.u64());

    Rng root(7);
    Rng c1 = root.child(1), c2 = root.child(2);
    CHECK(c1.u64() != c2.u64());

    // child derivation does not consume parent state
    Rng r1(9), r2(9);
    (void)r1.child(3);
    CHECK(r1.u64() == r2.u64());
}

TEST_CASE("rng uniform_int covers the closed range") {
    Rng rng(1);
    std::set<int> seen;
    for (int i = 0; i < 2000; ++i) {
        int v = rng.uniform_int(3, 8);
        CHECK(v >= 3);
        CHECK(v <= 8);
        seen.insert(v);
    }
    CHECK(seen.size() == 6);
}

TEST_CASE("rng raw state round-trip resumes the stream exactly") {
    Rng a(123);
    for (int i = 0; i < 17; ++i) (void)a.normal();
    uint64_t s = a.raw_state();
    std::vector<uint64_t> tail;
    for (int i = 0; i < 10; ++i) tail.push_back(a.u64());
    Rng b(0);
    b.set_raw_state(s);
    for (int i = 0; i < 10; ++i) CHECK(b.u64() == tail[i]);
}

TEST_CASE("scalar reductions and arithmetic") {
    auto t = Tensor::from_values({2, 2}, {1.0, 2.0, 3.0, 4.0});
    CHECK(sum_all(t).item() == doctest::Approx(10.0));
    CHECK(mean_all(t).item() == doctest::Approx(2.5));
    CHECK(sum_all(scale(t, 2.0)).item() == doctest::Approx(20.0));
    CHECK(sum_all(add_scalar(t, 1.0)).item() == doctest::Approx(14.0));
    CHECK(sum_all(abs_elem(neg(t))).item() == doctest::Approx(10.0));
}

TEST_CASE("elementwise op gradients match finite differences") {
    Rng rng(5);
    auto x = testutil::random_tensor({2, 3}, rng);
    auto y = testutil::random_tensor({2, 3}, rng);

    CHECK(testutil::fd_check([&] { return sum_all(mul(x, y)); }, {x, y}) < 1e-6);
    CHECK(testutil::fd_check([&] { return sum_all(square(sub(x, y))); }, {x, y}) < 1e-6);
    CHECK(testutil::fd_check([&] { return sum_all(sigmoid(x)); }, {x}) < 1e-6);
    CHECK(testutil::fd_check([&] { return sum_all(sqrt_stable(square(x), 1e-4)); }, {x}) < 1e-5);
    // relu kink avoided: inputs shifted away from zero
    auto xp = Tensor::from_values({4}, {1.0, -2.0, 0.5, -0.3}, true);
    CHECK(testutil::fd_check([&] { return sum_all(relu(xp)); }, {xp}) < 1e-6);
}

TEST_CASE("matmul family gradients") {
    Rng rng(6);
    auto a = testutil::random_tensor({3, 4}, rng);
    auto b = testutil::random_tensor({4, 2}, rng);
    auto c = testutil::random_tensor({2, 4}, rng);
    CHECK(testutil::fd_check([&] { return sum_all(square(matmul(a, b))); }, {a, b}) < 1e-5);
    CHECK(testutil::fd_check([&] { return sum_all(square(matmul_nt(a, c))); }, {a, c}) < 1e-5);

    auto ba = testutil::random_tensor({2, 3, 4}, rng);
    auto bb = testutil::random_tensor({2, 4, 2}, rng);
    CHECK(testutil::fd_check([&] { return sum_all(square(bmm(ba, bb))); }, {ba, bb}) < 1e-5);

    auto row = testutil::random_tensor({3, 4}, rng);
    auto bias = testutil::random_tensor({4}, rng);
    CHECK(testutil::fd_check([&] { return sum_all(square(add_rowwise(row, bias))); },
                             {row, bias}) < 1e-5);
}

TEST_CASE("conv2d matches a brute-force direct convolution") {
    Rng rng(7);
    auto x = testutil::random_tensor({1, 2, 5, 5}, rng);
    auto w = testutil::random_tensor({3, 2, 3, 3}, rng);
    auto b = testutil::random_tensor({3}, rng);
    int stride = 2, pad = 1;
    Tensor y = conv2d(x, w, b, stride, pad);
    REQUIRE(y.shape() == Shape{1, 3, 3, 3});

    auto at = [&](const Tensor& t, int n, int c, int i, int j, int C, int H, int W) {
        return t.data()[(((size_t)n * C + c) * H + i) * W + j];
    };
    for (int co = 0; co < 3; ++co)
        for (int oy = 0; oy < 3; ++oy)
            for (int ox = 0; ox < 3; ++ox) {
                double acc = b.data()[co];
                for (int ci = 0; ci < 2; ++ci)
                    for (int ky = 0; ky < 3; ++ky)
                        for (int kx = 0; kx < 3; ++kx) {
                            int iy = oy * stride + ky - pad, ix = ox * stride + kx - pad;
                            if (iy < 0 || iy >= 5 || ix < 0 || ix >= 5) continue;
                            acc += at(x, 0, ci, iy, ix, 2, 5, 5) *
                                   w.data()[(((size_t)co * 2 + ci) * 3 + ky) * 3 + kx];
                        }
                CHECK(at(y, 0, co, oy, ox, 3, 3, 3) == doctest::Approx(acc).epsilon(1e-10));
            }

    CHECK(testutil::fd_check([&] { return sum_all(square(conv2d(x, w, b, stride, pad))); },
                             {x, w, b}) < 1e-4);
}

TEST_CASE("pooling, upsampling and slicing gradients") {
    Rng rng(8);
    auto x = testutil::random_tensor({2, 3, 4, 4}, rng);
    CHECK(testutil::fd_check([&] { return sum_all(square(global_avg_pool(x))); }, {x}) < 1e-6);
    CHECK(testutil::fd_check([&] { return sum_all(square(upsample_nearest(x, 2))); }, {x}) < 1e-6);
    CHECK(testutil::fd_check([&] { return sum_all(square(slice_batch(x, 1))); }, {x}) < 1e-6);

    auto t = testutil::random_tensor({2, 6}, rng);
    CHECK(testutil::fd_check([&] { return sum_all(square(slice_lastdim(t, 2, 3))); }, {t}) < 1e-6);

    // nearest upsample repeats each cell factor^2 times
    Tensor u = upsample_nearest(x, 2);
    CHECK(u.shape() == Shape{2, 3, 8, 8});
    CHECK(u.data()[0] == x.data()[0]);
    CHECK(u.data()[1] == x.data()[0]);
}

TEST_CASE("patchify round-trips and is differentiable") {
    Rng rng(9);
    auto x = testutil::random_tensor({2, 3, 4, 4}, rng);
    Tensor p = patchify(x, 2);
    CHECK(p.shape() == Shape{2, 4, 12});
    Tensor back = unpatchify(p, 3, 4, 4, 2);
    for (long long i = 0; i < x.size(); ++i)
        CHECK(back.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-12));
    CHECK(testutil::fd_check([&] { return sum_all(square(patchify(x, 2))); }, {x}) < 1e-6);
}

TEST_CASE("concat_channels stacks along channel dim with gradient flow") {
    Rng rng(10);
    auto a = testutil::random_tensor({1, 2, 3, 3}, rng);
    auto b = testutil::random_tensor({1, 1, 3, 3}, rng);
    Tensor c = concat_channels(a, b);
    CHECK(c.shape() == Shape{1, 3, 3, 3});
    CHECK(c.data()[0] == a.data()[0]);
    CHECK(c.data()[2 * 9] == b.data()[0]);
    CHECK(testutil::fd_check([&] { return sum_all(square(concat_channels(a, b))); }, {a, b}) <
          1e-6);
}

TEST_CASE("normalization layers: values and gradients") {
    Rng rng(11);
    auto x = testutil::random_tensor({2, 3, 2, 2}, rng);
    auto gamma = Tensor::from_values({3}, {1.0, 1.2, 0.8}, true);
    auto beta = Tensor::from_values({3}, {0.1, -0.2, 0.0}, true);

    BatchNormState st;
    Tensor y = batch_norm2d(x, gamma, beta, st, true);
    // per-channel batch statistics of the normalized output
    for (int c = 0; c < 3; ++c) {
        double mean = 0, var = 0;
        for (int n = 0; n < 2; ++n)
            for (int i = 0; i < 4; ++i) {
                double v = (y.data()[((size_t)n * 3 + c) * 4 + i] - beta.data()[c]) /
                           gamma.data()[c];
                mean += v;
            }
        mean /= 8;
        for (int n = 0; n < 2; ++n)
            for (int i = 0; i < 4; ++i) {
                double v = (y.data()[((size_t)n * 3 + c) * 4 + i] - beta.data()[c]) /
                           gamma.data()[c];
                var += (v - mean) * (v - mean);
            }
        CHECK(mean == doctest::Approx(0.0).epsilon(1e-9));
        CHECK(var / 8 == doctest::Approx(1.0).epsilon(1e-3));
    }

    BatchNormState st2;
    CHECK(testutil::fd_check(
              [&] { return sum_all(square(batch_norm2d(x, gamma, beta, st2, true))); },
              {x, gamma, beta}, 1e-4) < 1e-3);

    auto tok = testutil::random_tensor({2, 3, 4}, rng);
    CHECK(testutil::fd_check([&] { return sum_all(square(layer_norm_lastdim(tok))); }, {tok},
                             1e-4) < 1e-3);
}

TEST_CASE("token modulation and softmax gradients") {
    Rng rng(12);
    auto x = testutil::random_tensor({2, 3, 4}, rng);
    auto s = testutil::random_tensor({2, 4}, rng, true, 0.1);
    auto t = testutil::random_tensor({2, 4}, rng, true, 0.1);
    auto pos = testutil::random_tensor({3, 4}, rng);
    CHECK(testutil::fd_check([&] { return sum_all(square(scale_shift_tokens(x, s, t))); },
                             {x, s, t}) < 1e-5);
    CHECK(testutil::fd_check([&] { return sum_all(square(add_token_bias(x, pos))); }, {x, pos}) <
          1e-5);
    CHECK(testutil::fd_check([&] { return sum_all(square(softmax_lastdim(x))); }, {x}) < 1e-5);

    // softmax rows sum to one
    Tensor sm = softmax_lastdim(x);
    for (int r = 0; r < 6; ++r) {
        double acc = 0;
        for (int c = 0; c < 4; ++c) acc += sm.data()[(size_t)r * 4 + c];
        CHECK(acc == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("grid_resample applies the tap table with validity mask") {
    // 2x2 grid, output = horizontal flip with one invalid cell
    GridMap map;
    map.h = 2;
    map.w = 2;
    map.taps = {{{1, 1.0}}, {{0, 1.0}}, {{3, 1.0}}, {}};
    map.valid = {1.0, 1.0, 1.0, 0.0};
    Rng rng(13);
    auto x = testutil::random_tensor({1, 1, 2, 2}, rng);
    Tensor y = grid_resample(x, map);
    CHECK(y.data()[0] == doctest::Approx(x.data()[1]));
    CHECK(y.data()[1] == doctest::Approx(x.data()[0]));
    CHECK(y.data()[2] == doctest::Approx(x.data()[3]));
    CHECK(y.data()[3] == doctest::Approx(0.0));
    CHECK(testutil::fd_check([&] { return sum_all(square(grid_resample(x, map))); }, {x}) < 1e-6);
}

TEST_CASE("detach blocks gradient flow") {
    auto x = Tensor::from_values({2}, {1.0, 2.0}, true);
    Tensor loss = sum_all(mul(x.detach(), x));
    x.zero_grad();
    loss.backward();
    // only the non-detached factor contributes: d/dx (c*x) = c = value of x
    CHECK(x.grad()[0] == doctest::Approx(1.0));
    CHECK(x.grad()[1] == doctest::Approx(2.0));
}

TEST_CASE("adamw decoupled weight decay shrinks an unused parameter") {
    nn::ParamMap pm;
    auto w = Tensor::from_values({1}, {4.0}, true);
    pm.add("w", w);
    nn::AdamW opt(pm, 0.1, 0.5);
    // no gradient was ever produced: step must leave the parameter untouched
    opt.step();
    CHECK(w.data()[0] == doctest::Approx(4.0));

    // with a zero gradient present, only decay acts
    w.zero_grad();
    opt.step();
    CHECK(w.data()[0] == doctest::Approx(4.0 * (1 - 0.1 * 0.5)));
}

TEST_CASE("adamw minimizes a quadratic") {
    nn::ParamMap pm;
    auto w = Tensor::from_values({1}, {3.0}, true);
    pm.add("w", w);
    nn::AdamW opt(pm, 0.05, 0.0);
    for (int i = 0; i < 500; ++i) {
        opt.zero_grad();
        Tensor loss = square(add_scalar(w, -1.0));
        loss.backward();
        opt.step();
    }
    CHECK(w.data()[0] == doctest::Approx(1.0).epsilon(1e-2));
}

TEST_CASE("config: overrides are typed and unknown keys list the schema") {
    cfg::json c = cfg::default_config("pretrain");
    cfg::apply_override(c, "optim.lr=0.001");
    CHECK(c["optim"]["lr"].get<double>() == doctest::Approx(0.001));
    cfg::apply_override(c, "schedule.epochs=12");
    CHECK(c["schedule"]["epochs"].get<int>() == 12);
    cfg::apply_override(c, "losses.stop_position_grad=false");
    CHECK(c["losses"]["stop_position_grad"].get<bool>() == false);
    cfg::apply_override(c, "data.delta=[2,5]");
    CHECK(c["data"]["delta"][1].get<int>() == 5);

    CHECK_THROWS_WITH_AS(cfg::apply_override(c, "optim.bogus=1"),
                         doctest::Contains("unknown config key"), std::invalid_argument);
    try {
        cfg::apply_override(c, "nope=1");
        FAIL("expected throw");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("optim.lr") != std::string::npos);
        CHECK(std::string(e.what()).find("schedule.epochs") != std::string::npos);
    }
    CHECK_THROWS_AS(cfg::apply_override(c, "schedule.epochs=abc"), std::invalid_argument);
}

TEST_CASE("config: merge rejects unknown keys and type mismatches") {
    cfg::json c = cfg::default_config("finetune");
    cfg::json user = {{"optim", {{"lr", 0.01}}}};
    cfg::merge_config(c, user);
    CHECK(c["optim"]["lr"].get<double>() == doctest::Approx(0.01));

    cfg::json bad = {{"optim", {{"lrr", 0.01}}}};
    CHECK_THROWS_AS(cfg::merge_config(c, bad), std::invalid_argument);
    cfg::json badtype = {{"out", 3}};
    CHECK_THROWS_AS(cfg::merge_config(c, badtype), std::invalid_argument);
}

TEST_CASE("config hash is stable and sensitive") {
    cfg::json a = cfg::default_config("eval");
    cfg::json b = cfg::default_config("eval");
    CHECK(cfg::config_hash(a) == cfg::config_hash(b));
    CHECK(cfg::config_hash(a).size() == 16);
    b["seed"] = 1;
    CHECK(cfg::config_hash(a) != cfg::config_hash(b));
}

TEST_CASE("checkpoint archive round-trips meta, shapes and values") {
    std::string dir = testutil::scratch_dir("ckpt");
    ckpt::Archive a;
    a.meta = {{"stage", "pretrain"}, {"epoch", 3}, {"seed", 9}, {"config_hash", "deadbeef"}};
    a.put("w", {2, 3}, {1, 2, 3, 4, 5, 6});
    a.put("b", {3}, {0.5, -0.5, 2.25});
    save_archive(dir + "/a.ckpt", a);

    ckpt::Archive r = ckpt::load_archive(dir + "/a.ckpt");
    CHECK(r.meta["stage"] == "pretrain");
    CHECK(r.meta["epoch"] == 3);
    REQUIRE(r.has("w"));
    CHECK(r.get("w").first == Shape{2, 3});
    CHECK(r.get("w").second == std::vector<double>{1, 2, 3, 4, 5, 6});
    CHECK(r.get("b").second[2] == 2.25);
    CHECK_THROWS(r.get("missing"));
    CHECK_THROWS(a.put("w", {1}, {0.0}));
}

TEST_CASE("checkpoint param maps restore tensors and buffers in place") {
    std::string dir = testutil::scratch_dir("ckpt_params");
    Rng rng(3);
    nn::BatchNorm2d bn(4);
    bn.state.running_mean = {1, 2, 3, 4};
    nn::Linear lin(rng, 3, 2);

    ckpt::Archive a;
    a.meta = {{"stage", "test"}};
    nn::ParamMap pm;
    pm.merge("bn", bn.parameters());
    pm.merge("lin", lin.parameters());
    ckpt::put_params(a, "m", pm);
    save_archive(dir + "/p.ckpt", a);

    nn::BatchNorm2d bn2(4);
    nn::Linear lin2(rng, 3, 2);
    nn::ParamMap pm2;
    pm2.merge("bn", bn2.parameters());
    pm2.merge("lin", lin2.parameters());
    ckpt::Archive r = ckpt::load_archive(dir + "/p.ckpt");
    ckpt::load_params(r, "m", pm2);
    CHECK(bn2.state.running_mean == std::vector<double>{1, 2, 3, 4});
    CHECK(lin2.w.data() == lin.w.data());

    // shape mismatch is an error
    nn::Linear lin3(rng, 4, 2);
    nn::ParamMap pm3;
    pm3.merge("bn", bn2.parameters());
    pm3.merge("lin", lin3.parameters());
    CHECK_THROWS(ckpt::load_params(r, "m", pm3));
}

TEST_CASE("adamw slots survive a checkpoint round-trip") {
    std::string dir = testutil::scratch_dir("ckpt_opt");
    nn::ParamMap pm;
    auto w = Tensor::from_values({2}, {1.0, -1.0}, true);
    pm.add("w", w);
    nn::AdamW opt(pm, 0.01, 0.0);
    for (int i = 0; i < 3; ++i) {
        opt.zero_grad();
        sum_all(square(w)).backward();
        opt.step();
    }
    ckpt::Archive a;
    a.meta = {{"stage", "test"}};
    ckpt::put_adamw(a, "opt", opt);
    save_archive(dir + "/o.ckpt", a);

    nn::AdamW opt2(pm, 0.01, 0.0);
    ckpt::load_adamw(ckpt::load_archive(dir + "/o.ckpt"), "opt", opt2);
    CHECK(opt2.t == opt.t);
    CHECK(opt2.slots[0].m == opt.slots[0].m);
    CHECK(opt2.slots[0].v == opt.slots[0].v);
}
