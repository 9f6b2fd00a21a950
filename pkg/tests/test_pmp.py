import numpy as np
import pytest

from hdlearn import pmp
from hdlearn.nn.autodiff import GradTape


def small_net(d=2, L=2, M=1, seed=0, activation="tanh", scale=1.0):
    return pmp.make_resnet(d, L, M, seed=seed, scale=scale, activation=activation)


def run_from(net, l, z):
    """Push states z through layers l..L-1 and read out f (independent of pmp)."""
    sigma = {"tanh": np.tanh, "identity": lambda u: u}[net.activation]
    for k in range(l, net.L):
        z = z + sigma(z @ net.w(k).T) @ net.a(k) / (net.L * net.M)
    return z @ net.alpha


class TestHamiltonian:
    def test_zero_costate(self, rng):
        a, w = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
        assert pmp.hamiltonian(rng.normal(size=4), np.zeros(4), a, w) == 0.0

    def test_single_identity_particle(self):
        z, p = np.array([1.0, -2.0, 0.5]), np.array([0.3, 0.1, -1.0])
        a, w = np.array([[2.0, 1.0, 0.0]]), np.array([[0.5, 0.25, 4.0]])
        expected = (p @ a[0]) * (w[0] @ z)
        assert pmp.hamiltonian(z, p, a, w, "identity") == pytest.approx(expected, rel=1e-15)

    def test_linear_in_costate(self, rng):
        z, p = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
        a, w = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        np.testing.assert_allclose(pmp.hamiltonian(z, -2.5 * p, a, w),
                                   -2.5 * pmp.hamiltonian(z, p, a, w), rtol=1e-13)

    def test_grad_z_matches_finite_differences(self, rng):
        z, p = rng.normal(size=3), rng.normal(size=3)
        a, w = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        g = pmp.grad_z_hamiltonian(z[None], p[None], a, w)[0]
        eps = 1e-6
        fd = [(pmp.hamiltonian(z + eps * e, p, a, w) - pmp.hamiltonian(z - eps * e, p, a, w)) / (2 * eps)
              for e in np.eye(3)]
        np.testing.assert_allclose(g, fd, rtol=1e-7, atol=1e-9)


class TestForwardBackward:
    def test_forward_matches_network(self, rng):
        net = small_net(d=3, L=4, M=5)
        x = rng.uniform(-1, 1, size=(7, 3))
        cache = pmp.forward_backward(net, x, np.zeros(7))
        np.testing.assert_array_equal(cache.f, net(x))

    def test_terminal_costate(self, rng):
        net = small_net(d=3, L=3, M=2)
        x, y = rng.normal(size=(4, 3)), rng.normal(size=4)
        c = pmp.forward_backward(net, x, y)
        np.testing.assert_array_equal(c.p[-1], -2.0 * (c.f - y)[:, None] * net.alpha[None, :])

    def test_exact_fit_zero_costates(self, rng):
        net = small_net(d=3, L=3, M=2)
        x = rng.normal(size=(4, 3))
        c = pmp.forward_backward(net, x, net(x))
        assert np.all(c.p == 0.0)

    def test_zero_particles_frozen(self, rng):
        net = small_net(d=2, L=3, M=2)
        mask = pmp.particle_slices(net)
        net.store.data[mask] = 0.0
        x, y = rng.normal(size=(5, 2)), rng.normal(size=5)
        c = pmp.forward_backward(net, x, y)
        for l in range(net.L + 1):
            np.testing.assert_array_equal(c.z[l], c.z[0])
            np.testing.assert_array_equal(c.p[l], c.p[-1])

    def test_costates_against_chain_rule(self, rng):
        # p_l = -dR/dz_l, R = (f - y)^2, checked by central differences through the remaining layers
        for seed in range(5):
            net = small_net(d=2, L=2, M=1, seed=seed)
            x, y = rng.uniform(-1, 1, size=(1, 2)), rng.normal(size=1)
            c = pmp.forward_backward(net, x, y)
            for l in range(net.L + 1):
                z = c.z[l][0]
                eps = 1e-6
                fd = []
                for e in np.eye(len(z)):
                    up = (run_from(net, l, z + eps * e) - y[0]) ** 2
                    dn = (run_from(net, l, z - eps * e) - y[0]) ** 2
                    fd.append(-(up - dn) / (2 * eps))
                np.testing.assert_allclose(c.p[l][0], fd, rtol=1e-6, atol=1e-9)

    def test_non_finite_state_raises(self):
        net = small_net(d=2, L=2, M=1)
        with pytest.raises(FloatingPointError), np.errstate(invalid="ignore"):
            pmp.forward_backward(net, np.array([[np.inf, 0.0]]), np.zeros(1))


class TestPmpGradient:
    @staticmethod
    def autodiff_grad(net, x, y):
        tape = GradTape(net.store)
        return tape.backward(pmp.resnet_loss_on_tape(tape, net, x, y))

    def test_matches_backprop(self):
        worst = 0.0
        for seed in range(100):
            gen = np.random.default_rng(seed)
            d, L, M = gen.integers(1, 4), gen.integers(1, 5), gen.integers(1, 4)
            net = small_net(int(d), int(L), int(M), seed=seed)
            x, y = gen.uniform(-1, 1, size=(6, d)), gen.normal(size=6)
            ours = pmp.flat_particle_gradient(net, pmp.pmp_gradient(net, x, y))
            ref = self.autodiff_grad(net, x, y)
            mask = pmp.particle_slices(net)
            worst = max(worst, np.max(np.abs(ours[mask] - ref[mask])))
        assert worst < 1e-10

    def test_zero_costate_zero_gradient(self, rng):
        net = small_net(d=3, L=2, M=3)
        x = rng.normal(size=(5, 3))
        grads = pmp.pmp_gradient(net, x, net(x))
        assert all(np.all(g == 0.0) for g in grads.values())

    def test_single_particle_by_hand(self):
        # L = M = 1, one sample: f = alpha . (z0 + a tanh(w . z0))
        net = small_net(d=1, L=1, M=1, seed=3)
        x, y = np.array([[0.4]]), np.array([0.1])
        z0 = net.lift(x)[0][0]
        a, w, alpha = net.a(0)[0], net.w(0)[0], net.alpha
        s = np.tanh(w @ z0)
        r = alpha @ (z0 + a * s) - y[0]
        g = pmp.pmp_gradient(net, x, y)
        np.testing.assert_allclose(g[("a", 0)][0], 2 * r * s * alpha, rtol=1e-14)
        np.testing.assert_allclose(g[("w", 0)][0], 2 * r * (alpha @ a) * (1 - s * s) * z0, rtol=1e-14)


def toy(n=32, d=3, seed=0):
    gen = np.random.default_rng(seed)
    x = gen.uniform(-1, 1, size=(n, d))
    return x, np.sin(x[:, 0]) + 0.3 * x[:, 1]


class TestMsa:
    def test_zero_inner_budget_unchanged(self):
        net = small_net(d=3, L=3, M=4)
        before = net.store.data.copy()
        _, rec = pmp.basic_msa(net, *toy(), pmp.MsaConfig(iters=5, inner_steps=0))
        np.testing.assert_array_equal(net.store.data, before)
        assert len(set(rec.column("loss"))) == 1

    def test_linear_toy_monotone(self):
        # L = 1 and identity activation: one small ascent step on H is one small descent step on R
        net = small_net(d=2, L=1, M=3, activation="identity", scale=0.5)
        x, y = toy(d=2)
        _, rec = pmp.basic_msa(net, x, y, pmp.MsaConfig(iters=40, inner_steps=1, inner_lr=0.05))
        losses = rec.column("loss")
        assert np.all(np.diff(losses) <= 0) and losses[-1] < losses[0]

    def test_seed_determinism(self):
        cfg = pmp.MsaConfig(iters=5, inner="lbfgs", lam=1.0, starts=2, seed=7)
        runs = [pmp.extended_msa(small_net(d=3, L=2, M=3), *toy(), cfg)[0].store.data for _ in range(2)]
        np.testing.assert_array_equal(*runs)

    def test_basic_rejects_penalty(self):
        with pytest.raises(ValueError):
            pmp.basic_msa(small_net(), *toy(d=2), pmp.MsaConfig(lam=1.0))

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            pmp.MsaConfig(lam=-1.0)
        with pytest.raises(ValueError):
            pmp.MsaConfig(inner="newton")

    def test_budget_caps_sweeps(self):
        _, rec = pmp.basic_msa(small_net(d=3), *toy(), pmp.MsaConfig(iters=50, inner_steps=2, budget=6))
        assert rec.last["sweeps"] == 6

    def test_guard_records_divergence(self):
        net = small_net(d=3, L=2, M=3)
        _, rec = pmp.basic_msa(net, *toy(), pmp.MsaConfig(iters=30, inner_steps=5, inner_lr=1e4, guard=10.0))
        assert rec.aborted is not None


class TestExtendedMsa:
    def test_zero_penalty_bit_identical(self):
        for inner in ("ascent", "lbfgs"):
            cfg = pmp.MsaConfig(iters=6, inner_steps=4, inner=inner, seed=3)
            a, ra = pmp.basic_msa(small_net(d=3, L=3, M=2), *toy(), cfg)
            b, rb = pmp.extended_msa(small_net(d=3, L=3, M=2), *toy(), cfg)
            np.testing.assert_array_equal(a.store.data, b.store.data)
            np.testing.assert_array_equal(ra.column("loss"), rb.column("loss"))

    def test_feasible_slots_give_plain_h(self, rng):
        z, p = rng.normal(size=(6, 3)), rng.normal(size=(6, 3))
        a, w = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        v = pmp.vector_field(z, a, w)
        q = -pmp.grad_z_hamiltonian(z, p, a, w)
        np.testing.assert_array_equal(pmp.extended_hamiltonian(z, p, a, w, v, q, 7.0),
                                      pmp.hamiltonian(z, p, a, w))

    def test_cached_slots_are_feasible(self):
        net = small_net(d=3, L=3, M=2)
        x, y = toy()
        c = pmp.forward_backward(net, x, y)
        for l in range(net.L):
            z, p = c.z[l], c.p[l + 1]
            v = (c.z[l + 1] - z) * net.L
            q = (c.p[l + 1] - c.p[l]) * net.L
            ext = pmp.extended_hamiltonian(z, p, net.a(l), net.w(l), v, q, 5.0)
            np.testing.assert_allclose(ext, pmp.hamiltonian(z, p, net.a(l), net.w(l)), rtol=1e-9, atol=1e-12)

    def test_penalty_lowers_value_off_trajectory(self, rng):
        z, p = rng.normal(size=(6, 3)), rng.normal(size=(6, 3))
        a, w = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        v, q = rng.normal(size=(6, 3)), rng.normal(size=(6, 3))
        assert np.all(pmp.extended_hamiltonian(z, p, a, w, v, q, 1.0) < pmp.hamiltonian(z, p, a, w))

    def test_beats_sgd_at_matched_sweeps(self):
        _, _, s = pmp.compare_msa_sgd(budget=200, sgd_lrs=(10.0, 20.0))
        assert s["msa_sweeps"] <= 200
        assert s["msa_iters_to_match"] is not None
