import numpy as np
import pytest
from scipy.integrate import quad

from artkit.art import (
    RayQuadSpec,
    art_k,
    art_k_time,
    art_table,
    art_tensor,
    back_projection_lrt,
    lrt,
    optical_depth,
    photo_preset,
    wave_preset,
)
from artkit.fields import (
    TimeProfile,
    ZERO_ABSORPTION,
    ball_bump_phantom,
    constant_absorption,
    eval_field,
    gaussian_phantom,
    spatial_absorption,
    tensor_phantom,
)
from artkit.geometry import direction, make_sphere_grid, point, ray_exit_length
from artkit.tensor import SymTensor, contract_direction, multi_indices

X0 = point(0.2, 0.1, -0.1)
XI0 = direction(0.3, -0.4, 0.85)
ALPHA = 0.5 + 0.3j
GAUSS = gaussian_phantom(center=(0.1, -0.05, 0.05), width=0.1)


def complex_quad(fn, lo, hi, **kw):
    re = quad(lambda s: fn(s).real, lo, hi, limit=400, epsabs=1e-13, **kw)[0]
    im = quad(lambda s: fn(s).imag, lo, hi, limit=400, epsabs=1e-13, **kw)[0]
    return re + 1j * im


def eps_profile(x):
    x = np.asarray(x, dtype=float)
    return 0.4 * np.exp(-np.einsum("...i,...i->...", x, x) / 0.5)


class TestOpticalDepth:
    def test_constant_exact(self):
        a = constant_absorption(ALPHA)
        assert optical_depth(a, X0, XI0, 2.0) == ALPHA * 2.0

    def test_zero_length(self):
        a = constant_absorption(ALPHA)
        assert optical_depth(a, X0, XI0, 0.0) == 0.0

    def test_negative_raises(self):
        with pytest.raises(ValueError):
            optical_depth(constant_absorption(ALPHA), X0, XI0, -0.1)

    @pytest.mark.parametrize("rule", ["simpson", "gauss4"])
    def test_spatial_against_adaptive_oracle(self, rule):
        a = spatial_absorption(eps_profile=eps_profile, rho=0.2)
        oracle = complex_quad(lambda s: eps_profile(X0 - s * XI0) + 0.2j, 0.0, 1.0)
        val = optical_depth(a, X0, XI0, 1.0, RayQuadSpec(1e-3, rule))
        assert abs(val - oracle) < 1e-9


class TestArtK:
    def test_zero_source(self):
        z = gaussian_phantom(width=0.1, amplitude=0.0)
        for k in range(4):
            assert art_k(k, z, constant_absorption(ALPHA), X0, XI0) == 0.0

    def test_negative_order_raises(self):
        with pytest.raises(ValueError):
            art_k(-1, GAUSS, ZERO_ABSORPTION, X0, XI0)

    def test_rotational_symmetry_at_center(self):
        f = ball_bump_phantom(width=0.6)
        vals = [art_k(0, f, ZERO_ABSORPTION, point(0, 0, 0), xi)
                for xi in make_sphere_grid(3, 6).nodes]
        assert max(abs(v - vals[0]) for v in vals) < 1e-12

    @pytest.mark.parametrize("rule", ["simpson", "gauss4"])
    def test_gaussian_complex_alpha_against_oracle(self, rule):
        a = constant_absorption(ALPHA)
        s_star = ray_exit_length(X0, XI0)
        oracle = complex_quad(
            lambda s: s * np.exp(-ALPHA * s) * eval_field(GAUSS, None, X0 - s * XI0, XI0),
            0.0, s_star)
        val = art_k(1, GAUSS, a, X0, XI0, RayQuadSpec(2e-3, rule))
        assert abs(val - oracle) < 1e-8

    def test_spatial_alpha_against_nested_oracle(self):
        a = spatial_absorption(eps_profile=eps_profile, rho=0.2)
        s_star = ray_exit_length(X0, XI0)

        def depth(s):
            return complex_quad(lambda u: eps_profile(X0 - u * XI0) + 0.2j, 0.0, s)

        oracle = complex_quad(
            lambda s: s * np.exp(-depth(s)) * eval_field(GAUSS, None, X0 - s * XI0, XI0),
            0.0, s_star)
        val = art_k(1, GAUSS, a, X0, XI0, RayQuadSpec(2e-3))
        assert abs(val - oracle) < 1e-8

    def test_amplitude_scaling_exact(self):
        f3 = gaussian_phantom(center=(0.1, -0.05, 0.05), width=0.1, amplitude=3.7)
        a = constant_absorption(ALPHA)
        assert abs(art_k(1, f3, a, X0, XI0) - 3.7 * art_k(1, GAUSS, a, X0, XI0)) < 1e-12

    def test_superposition_via_tensor_components(self):
        # af + bg with identical envelopes shares the quadrature nodes exactly
        env = ball_bump_phantom(width=0.7)
        t1 = SymTensor(1, np.array([1.0, 0.5, -0.2], dtype=complex))
        t2 = SymTensor(1, np.array([-0.3, 0.8, 0.1], dtype=complex))
        combo = SymTensor(1, 2.0 * t1.comps + 3.0 * t2.comps)
        a = constant_absorption(ALPHA)
        lhs = art_k(1, tensor_phantom(combo, envelope=env), a, X0, XI0)
        rhs = (2.0 * art_k(1, tensor_phantom(t1, envelope=env), a, X0, XI0)
               + 3.0 * art_k(1, tensor_phantom(t2, envelope=env), a, X0, XI0))
        assert abs(lhs - rhs) < 1e-12

    def test_damping_bound(self):
        plain = art_k(1, GAUSS, ZERO_ABSORPTION, X0, XI0)
        damped = art_k(1, GAUSS, constant_absorption(0.8 + 1.7j), X0, XI0)
        assert abs(damped) <= abs(plain) + 1e-12

    def test_positivity(self):
        val = art_k(2, GAUSS, constant_absorption(0.6), X0, XI0)
        assert val.real >= -1e-14 and abs(val.imag) < 1e-14

    def test_simpson_convergence_order(self):
        a = constant_absorption(ALPHA)
        s_star = ray_exit_length(X0, XI0)
        oracle = complex_quad(
            lambda s: s * np.exp(-ALPHA * s) * eval_field(GAUSS, None, X0 - s * XI0, XI0),
            0.0, s_star)
        e1 = abs(art_k(1, GAUSS, a, X0, XI0, RayQuadSpec(4e-2)) - oracle)
        e2 = abs(art_k(1, GAUSS, a, X0, XI0, RayQuadSpec(2e-2)) - oracle)
        assert e1 / e2 >= 8.0

    def test_table_matches_scalar_path(self):
        sg = make_sphere_grid(3, 6)
        pts = np.array([X0, [0.0, 0.0, 0.0], [-0.3, 0.2, 0.4]])
        a = constant_absorption(ALPHA)
        tab = art_table(GAUSS, a, pts, sg, [0, 2], RayQuadSpec(4e-3))
        worst = 0.0
        for i, k in enumerate([0, 2]):
            for j in range(len(pts)):
                for d, xi in enumerate(sg.nodes):
                    worst = max(worst, abs(
                        tab[i, j, d] - art_k(k, GAUSS, a, pts[j], xi, RayQuadSpec(4e-3))))
        assert worst < 1e-8


class TestArtTime:
    PULSED = gaussian_phantom(center=(0.1, -0.05, 0.05), width=0.1,
                              time=TimeProfile("gaussian_pulse", 2.0, 0.25))

    def test_negative_time_is_zero(self):
        assert art_k_time(1, self.PULSED, constant_absorption(ALPHA), -1.0, X0, XI0) == 0.0

    def test_stationary_limit(self):
        framp = gaussian_phantom(center=(0.1, -0.05, 0.05), width=0.1,
                                 time=TimeProfile("causal_ramp", width=1.0))
        a = constant_absorption(ALPHA)
        late = art_k_time(1, framp, a, 50.0, X0, XI0)
        stat = art_k(1, framp, a, X0, XI0)
        assert abs(late - stat) < 1e-8

    def test_pulsed_against_oracle(self):
        a = spatial_absorption(eps_profile=eps_profile, rho=0.2)
        t0 = 2.3
        s_star = min(ray_exit_length(X0, XI0), t0)

        def depth(s):
            return complex_quad(lambda u: eps_profile(X0 - u * XI0) + 0.2j, 0.0, s)

        oracle = complex_quad(
            lambda s: s * np.exp(-depth(s))
            * eval_field(self.PULSED, t0 - s, X0 - s * XI0, XI0),
            0.0, s_star)
        val = art_k_time(1, self.PULSED, a, t0, X0, XI0, RayQuadSpec(2e-3))
        assert abs(val - oracle) < 1e-8


class TestTensorTransforms:
    ENV = ball_bump_phantom(width=0.7)
    W2 = SymTensor(2, np.array([1.0, 0.2, -0.1, 0.7, 0.05, 0.4], dtype=complex))

    def test_zero_field(self):
        w = tensor_phantom(SymTensor.zeros(2), envelope=self.ENV)
        out = art_tensor(1, w, constant_absorption(ALPHA), X0, XI0)
        assert np.all(out.comps == 0)

    def test_contraction_matches_scalar(self):
        w = tensor_phantom(self.W2, envelope=self.ENV)
        a = constant_absorption(ALPHA)
        T = art_tensor(1, w, a, X0, XI0)
        scalar = art_k(1, w, a, X0, XI0)
        assert abs(contract_direction(T, XI0) - scalar) < 1e-10

    def test_rank1_components_against_oracle(self):
        w1 = SymTensor(1, np.array([0.4, -0.7, 0.2], dtype=complex))
        w = tensor_phantom(w1, envelope=self.ENV)
        a = constant_absorption(ALPHA)
        T = art_tensor(1, w, a, X0, XI0)
        s_star = ray_exit_length(X0, XI0)
        for n, (i,) in enumerate(multi_indices(1)):
            oracle = complex_quad(
                lambda s: s * np.exp(-ALPHA * s) * w1.comps[i]
                * eval_field(self.ENV, None, X0 - s * XI0, XI0), 0.0, s_star)
            assert abs(T.comps[n] - oracle) < 1e-8

    def test_lrt_zero_and_scalar_reduction(self):
        wz = tensor_phantom(SymTensor.zeros(2), envelope=self.ENV)
        assert lrt(wz, X0, XI0) == 0.0
        w0 = tensor_phantom(SymTensor(0, np.array([1.0 + 0j])), envelope=self.ENV)
        assert abs(lrt(w0, X0, XI0)
                   - art_k(0, self.ENV, ZERO_ABSORPTION, X0, XI0)) < 1e-12

    def test_lrt_kronecker_reduces_to_scalar_integral(self):
        wd = tensor_phantom(SymTensor.identity2(), envelope=self.ENV)
        got = lrt(wd, X0, XI0)
        want = art_k(0, self.ENV, ZERO_ABSORPTION, X0, XI0)
        assert abs(got - want) < 1e-10


class TestBackProjection:
    def test_zero(self):
        sg = make_sphere_grid(4, 8)
        out = back_projection_lrt(lambda x, xi: 0.0, 2, point(0, 0, 0), sg)
        assert np.all(out.comps == 0)

    def test_constant_rank0(self):
        sg = make_sphere_grid(8, 16)
        out = back_projection_lrt(lambda x, xi: 1.0, 0, point(0, 0, 0), sg)
        assert out.comps[0] == pytest.approx(1.0 / np.pi, abs=1e-12)

    def test_constant_rank2(self):
        sg = make_sphere_grid(8, 16)
        out = back_projection_lrt(lambda x, xi: 1.0, 2, point(0, 0, 0), sg)
        for idx in multi_indices(2):
            want = 1.0 / (3.0 * np.pi) if idx[0] == idx[1] else 0.0
            assert abs(out[idx] - want) < 1e-12


class TestPresets:
    def test_wave_preset_phase_factor(self):
        k, a = wave_preset(2.5)
        assert k == 1
        d = optical_depth(a, X0, XI0, 1.3)
        assert np.exp(-d) == pytest.approx(np.exp(1j * 2.5 * 1.3))

    def test_photo_preset(self):
        k, a = photo_preset(0.5)
        assert k == 0
        assert a.eps == 0.5 and a.rho == 0.0
