#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "tubetrack/net/adam.hpp"
#include "tubetrack/net/beta.hpp"
#include "tubetrack/net/checkpoint.hpp"
#include "tubetrack/net/network.hpp"
#include "tubetrack/net/special.hpp"

using namespace tubetrack;

namespace {

// Frozen reference values (mpmath, 50 digits, rounded to double).
struct SpecialRef {
  double x, digamma, trigamma, lgamma;
};
constexpr SpecialRef kSpecial[] = {
    {0.3, -3.502524222200133, 12.245364546107732, 1.0957979948180756},
    {1.0, -0.5772156649015329, 1.6449340668482264, 0.0},
    {2.5, 0.7031566406452432, 0.49035775610023485, 0.2846828704729192},
    {7.25, 1.910453526883736, 0.14787923315893217, 7.0521854507385395},
    {12.0, 2.442661679975812, 0.08690187287176838, 17.502307845873887},
    {40.0, 3.676327374034843, 0.02531510384129103, 106.63176026064346},
};

NetworkSpec tiny_spec(int in_ch, int outputs, double gain) {
  NetworkSpec s;
  s.input_channels = in_ch;
  s.patch_side = 5;
  s.conv_stages = {{4, 2}, {4, 1}};
  s.fc_widths = {8};
  s.groups = 2;
  s.outputs = outputs;
  s.head_init_gain = gain;
  return s;
}

std::vector<double> random_input(std::size_t n, Rng& rng) {
  std::vector<double> x(n);
  for (double& v : x) v = rng.uniform(-1.0, 1.0);
  return x;
}

// Scalar loss = sum_o w_o * out_o for fixed random weights.
double weighted_output(const Network& net, const std::vector<double>& x,
                       const std::vector<double>& w) {
  Tape tape;
  const auto out = net.forward(std::span<const double>(x), tape);
  double s = 0.0;
  for (std::size_t o = 0; o < out.size(); ++o) s += w[o] * out[o];
  return s;
}

}  // namespace

TEST_CASE("special functions against frozen high-precision values") {
  for (const auto& r : kSpecial) {
    CHECK(digamma(r.x) == doctest::Approx(r.digamma).epsilon(1e-12));
    CHECK(trigamma(r.x) == doctest::Approx(r.trigamma).epsilon(1e-12));
    CHECK(log_gamma(r.x) == doctest::Approx(r.lgamma).epsilon(1e-12).scale(1.0));
  }
  CHECK(std::abs(digamma(1.0) + 0.5772156649015329) < 1e-10);
}

TEST_CASE("beta head, mode and displacement mapping") {
  const std::vector<double> zeros(6, 0.0);
  const BetaTriple bt = BetaTriple::from_raw(zeros);
  for (int a = 0; a < 3; ++a) {
    CHECK(bt.alpha[a] == doctest::Approx(std::log(2.0) + 1.0));
    CHECK(bt.beta[a] == doctest::Approx(std::log(2.0) + 1.0));
  }
  BetaTriple m;
  m.alpha = {2.0, 3.0, 1.0 + 1e-9};
  m.beta = {2.0, 2.0, 50.0};
  const Unit3 mode = mode_unit(m);
  CHECK(mode[0] == 0.5);
  CHECK(mode[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(mode[2] < 1e-9);

  CHECK(unit_to_displacement({0.5, 0.5, 0.5}, 10.0, 1.5) == VoxelPoint{0, 0, 0});
  CHECK(unit_to_displacement({1.0, 0.0, 1.0}, 10.0, 1.5) == VoxelPoint{7, -7, 7});
  CHECK(unit_to_displacement({0.575, 0.5, 0.425}, 10.0, 1.5) == VoxelPoint{1, 0, -1});
  // 0.75 voxel rounds to 1; exact half ties round away from zero.
  CHECK(unit_to_displacement({0.5375, 0.5, 0.5}, 10.0, 1.0) == VoxelPoint{1, 0, 0});
  CHECK(unit_to_displacement({0.475, 0.5, 0.5}, 10.0, 1.0) == VoxelPoint{-1, 0, 0});
}

TEST_CASE("log_prob and entropy reference values") {
  BetaTriple b22;
  CHECK(log_prob(b22, {0.5, 0.5, 0.5}) == doctest::Approx(3.0 * std::log(1.5)).epsilon(1e-12));
  CHECK(entropy(b22) == doctest::Approx(3.0 * -0.12509280256138888).epsilon(1e-10));
  BetaTriple mixed;
  mixed.alpha = {2.0, 5.0, 1.2};
  mixed.beta = {2.0, 3.0, 7.0};
  // scipy.stats.beta entropies, summed.
  CHECK(entropy(mixed) == doctest::Approx(-0.12509280256138888 - 0.43015082634799917 -
                                          0.9560396095897321)
                              .epsilon(1e-10));
  BetaTriple b32;
  b32.alpha = {3, 3, 3};
  b32.beta = {2, 2, 2};
  CHECK(log_prob(b32, {0.3, 0.7, 0.9}) == doctest::Approx(0.259470580260297).epsilon(1e-12));
  // Entropy decreases as a symmetric beta concentrates.
  double prev = 1.0;
  for (double t = 1.5; t < 40.0; t *= 1.5) {
    BetaTriple s;
    s.alpha = s.beta = {t, t, t};
    CHECK(entropy(s) < prev);
    prev = entropy(s);
  }
  // Boundary values are clamped rather than producing infinities.
  CHECK(std::isfinite(log_prob(b22, {0.0, 1.0, 0.5})));
}

TEST_CASE("log_prob peaks at the mode (grid scan)") {
  BetaTriple b;
  b.alpha = {3.0, 1.7, 6.0};
  b.beta = {2.0, 4.5, 1.3};
  const Unit3 mode = mode_unit(b);
  for (int ax = 0; ax < 3; ++ax) {
    double best = -1e300, arg = 0.0;
    for (int i = 1; i < 10000; ++i) {
      Unit3 u = mode;
      u[ax] = i / 10000.0;
      const double lp = log_prob(b, u);
      if (lp > best) best = lp, arg = u[ax];
    }
    CHECK(std::abs(arg - mode[ax]) <= 1e-4);
  }
}

TEST_CASE("sampling is reproducible and strictly inside the unit interval") {
  BetaTriple b;
  b.alpha = {1.01, 30.0, 2.0};
  b.beta = {30.0, 1.01, 2.0};
  Rng r1(5), r2(5);
  for (int i = 0; i < 2000; ++i) {
    const Unit3 a = sample_unit(b, r1);
    CHECK(a == sample_unit(b, r2));
    for (double x : a) {
      CHECK(x > 0.0);
      CHECK(x < 1.0);
    }
  }
}

TEST_CASE("beta gradients match finite differences through softplus") {
  Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    std::vector<double> raw(6);
    for (double& r : raw) r = rng.uniform(-2.0, 3.0);
    const Unit3 u{rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95)};
    const BetaTriple bt = BetaTriple::from_raw(raw);
    std::vector<double> d_lp(6), d_h(6);
    beta_grad_to_raw(raw, log_prob_grad(bt, u), d_lp);
    beta_grad_to_raw(raw, entropy_grad(bt), d_h);
    const double h = 1e-5;
    for (int i = 0; i < 6; ++i) {
      auto rp = raw, rm = raw;
      rp[i] += h;
      rm[i] -= h;
      const double fd_lp = (log_prob(BetaTriple::from_raw(rp), u) -
                            log_prob(BetaTriple::from_raw(rm), u)) / (2 * h);
      const double fd_h =
          (entropy(BetaTriple::from_raw(rp)) - entropy(BetaTriple::from_raw(rm))) / (2 * h);
      CHECK(d_lp[i] == doctest::Approx(fd_lp).epsilon(1e-6).scale(1e-3));
      CHECK(d_h[i] == doctest::Approx(fd_h).epsilon(1e-6).scale(1e-3));
    }
  }
}

TEST_CASE("network layout, zero-parameter outputs and shape errors") {
  Network actor(NetworkSpec::actor(39));
  CHECK(actor.layers().front().kind == LayerKind::Conv3d);
  CHECK(actor.layers().back().kind == LayerKind::Linear);
  CHECK(actor.input_size() == 3u * 39 * 39 * 39);
  std::size_t total = 0;
  for (const auto& p : actor.parameter_info()) {
    CHECK(p.offset == total);
    total += p.size;
  }
  CHECK(total == actor.parameter_count());

  Network a(tiny_spec(3, 6, 0.01));
  Tape tape;
  std::vector<float> obs(a.input_size(), 0.3f);
  const auto raw = a.forward(obs, tape);
  const BetaTriple bt = BetaTriple::from_raw(raw);
  for (int i = 0; i < 3; ++i) CHECK(bt.alpha[i] == doctest::Approx(1.0 + std::log(2.0)));
  Network c(tiny_spec(4, 1, 1.0));
  std::vector<float> cobs(c.input_size(), 0.0f);
  CHECK(c.forward(cobs, tape)[0] == 0.0);
  std::vector<float> wrong(a.input_size() + 1);
  CHECK_THROWS_AS(a.forward(wrong, tape), ConfigError);
}

TEST_CASE("random parameters: alpha, beta > 1 and repeatable forward") {
  Network a(tiny_spec(3, 6, 1.0));
  Rng rng(4);
  for (int t = 0; t < 20; ++t) {
    for (double& p : a.parameters()) p = rng.normal() * 2.0;
    const auto x = random_input(a.input_size(), rng);
    Tape t1, t2;
    const auto o1 = a.forward(std::span<const double>(x), t1);
    const std::vector<double> first(o1.begin(), o1.end());
    const auto o2 = a.forward(std::span<const double>(x), t2);
    CHECK(std::equal(first.begin(), first.end(), o2.begin()));
    const BetaTriple bt = BetaTriple::from_raw(first);
    for (int i = 0; i < 3; ++i) {
      CHECK(bt.alpha[i] > 1.0);
      CHECK(bt.beta[i] > 1.0);
    }
  }
}

TEST_CASE("critic reacts to the GT-path channel") {
  Network c(tiny_spec(4, 1, 1.0));
  Rng rng(9);
  c.initialize(rng);
  std::vector<double> x = random_input(c.input_size(), rng);
  const std::size_t ch = c.input_size() / 4;
  std::fill(x.begin() + 3 * ch, x.end(), 0.0);
  Tape tape;
  const double v0 = c.forward(std::span<const double>(x), tape)[0];
  x[3 * ch + ch / 2] = 1.0;
  const double v1 = c.forward(std::span<const double>(x), tape)[0];
  CHECK(v0 != v1);
}

TEST_CASE("network backward matches central finite differences for every parameter") {
  for (int variant = 0; variant < 2; ++variant) {
    Network net(variant == 0 ? tiny_spec(3, 6, 1.0) : tiny_spec(4, 1, 1.0));
    Rng rng(100 + variant);
    net.initialize(rng);
    // Non-trivial GN gains and biases so every branch carries gradient.
    for (const auto& p : net.parameter_info()) {
      if (p.name.find("bias") != std::string::npos || p.name.find("gn") != std::string::npos) {
        for (std::size_t i = 0; i < p.size; ++i) net.parameters()[p.offset + i] += 0.3 * rng.normal();
      }
    }
    const auto x = random_input(net.input_size(), rng);
    std::vector<double> w(net.spec().outputs);
    for (double& v : w) v = rng.normal();
    Tape tape;
    net.forward(std::span<const double>(x), tape);
    std::vector<double> grad(net.parameter_count(), 0.0);
    net.backward(tape, w, grad);

    const double h = 1e-4;
    double worst = 0.0;
    for (std::size_t i = 0; i < net.parameter_count(); ++i) {
      const double saved = net.parameters()[i];
      net.parameters()[i] = saved + h;
      const double fp = weighted_output(net, x, w);
      net.parameters()[i] = saved - h;
      const double fm = weighted_output(net, x, w);
      net.parameters()[i] = saved;
      const double fd = (fp - fm) / (2 * h);
      const double rel = std::abs(fd - grad[i]) / std::max(1e-6, std::abs(fd) + std::abs(grad[i]));
      worst = std::max(worst, std::abs(fd - grad[i]) > 1e-8 ? rel : 0.0);
    }
    CHECK(worst < 1e-4);

    std::vector<double> zero_grad(net.parameter_count(), 0.0);
    std::vector<double> zeros(net.spec().outputs, 0.0);
    net.backward(tape, zeros, zero_grad);
    CHECK(std::all_of(zero_grad.begin(), zero_grad.end(), [](double g) { return g == 0.0; }));
  }
}

TEST_CASE("adam: first step magnitude, zero gradients, two-step trace, non-finite guard") {
  AdamConfig cfg;
  cfg.lr = 0.1;
  std::vector<double> p{1.0, -2.0, 3.0};
  AdamState st(3);
  const std::vector<double> g{0.5, -4.0, 1e-3};
  adam_step(p, g, st, cfg);
  CHECK(p[0] == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(p[1] == doctest::Approx(-1.9).epsilon(1e-6));
  CHECK(p[2] == doctest::Approx(2.9).epsilon(1e-4));
  CHECK(st.step == 1);

  std::vector<double> q{1.0};
  AdamState s2(1);
  adam_step(q, std::vector<double>{0.0}, s2, cfg);
  CHECK(q[0] == 1.0);

  // Hand-computed two steps with g = 2 then g = 1, lr 0.1.
  std::vector<double> r{0.0};
  AdamState s3(1);
  adam_step(r, std::vector<double>{2.0}, s3, cfg);
  adam_step(r, std::vector<double>{1.0}, s3, cfg);
  const double m2 = 0.9 * 0.2 + 0.1 * 1.0;               // 0.28
  const double v2 = 0.999 * 0.004 + 0.001 * 1.0;         // 0.004996
  const double step2 = 0.1 * (m2 / (1 - 0.81)) / (std::sqrt(v2 / (1 - 0.998001)) + 1e-8);
  CHECK(r[0] == doctest::Approx(-0.1 - step2).epsilon(1e-9));
  CHECK(s3.m[0] == doctest::Approx(m2));
  CHECK(s3.v[0] == doctest::Approx(v2));

  std::vector<double> bad{1.0};
  AdamState s4(1);
  CHECK_THROWS_AS(adam_step(bad, std::vector<double>{NAN}, s4, cfg), NumericError);
  CHECK(s4.step == 0);
  CHECK(bad[0] == 1.0);
}

TEST_CASE("checkpoint round trip and corruption") {
  Checkpoint ck;
  ck.update = 7;
  ck.actor_spec = tiny_spec(3, 6, 0.01);
  ck.critic_spec = tiny_spec(4, 1, 1.0);
  Network a(ck.actor_spec), c(ck.critic_spec);
  Rng rng(1);
  a.initialize(rng);
  c.initialize(rng);
  ck.actor_params.assign(a.parameters().begin(), a.parameters().end());
  ck.critic_params.assign(c.parameters().begin(), c.parameters().end());
  ck.actor_opt = AdamState(a.parameter_count());
  ck.critic_opt = AdamState(c.parameter_count());
  ck.actor_opt.m[3] = 0.25;
  ck.critic_opt.v[1] = 0.5;
  ck.actor_opt.step = ck.critic_opt.step = 12;
  const auto dir = std::filesystem::temp_directory_path() / "tubetrack_unit";
  std::filesystem::create_directories(dir);
  const auto path = checkpoint_path(dir, 7);
  save_checkpoint(ck, path);
  const Checkpoint back = load_checkpoint(path);
  CHECK(back.update == 7);
  CHECK(back.actor_spec == ck.actor_spec);
  CHECK(back.actor_params == ck.actor_params);
  CHECK(back.critic_params == ck.critic_params);
  CHECK(back.actor_opt.m == ck.actor_opt.m);
  CHECK(back.critic_opt.v == ck.critic_opt.v);
  CHECK(back.actor_opt.step == 12);
  std::filesystem::resize_file(dir / "checkpoint_7.bin", 16);
  CHECK_THROWS_AS(load_checkpoint(path), DataError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.json"), DataError);
}
