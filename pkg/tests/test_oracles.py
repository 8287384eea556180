import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from labcbg import oracles
from labcbg.geometry import Layer, LayerStack, MaterialSpec


def test_bulk_power_linear_in_index():
    assert oracles.bulk_dipole_power(3.52, 930) / oracles.bulk_dipole_power(1, 930) == \
        pytest.approx(3.52, rel=1e-12)


def test_bulk_power_lambda_scaling():
    assert oracles.bulk_dipole_power(1, 500) / oracles.bulk_dipole_power(1, 1000) == \
        pytest.approx(16, rel=1e-12)


def test_bulk_power_textbook_constant():
    # Larmor: P = mu0 p^2 omega^4 / (12 pi c)
    from scipy.constants import c, mu_0
    w = 2 * math.pi * c / 930e-9
    assert oracles.bulk_dipole_power(1, 930) == pytest.approx(mu_0 * w**4 / (12 * math.pi * c),
                                                              rel=1e-9)


def test_mirror_quarter_wave():
    assert oracles.mirror_dipole_factor(930 / 4, 930) == pytest.approx(1 + 3 / (2 * math.pi**2),
                                                                       rel=1e-12)
    assert round(float(oracles.mirror_dipole_factor(250, 1000)), 3) == 1.152


def test_mirror_touching_cancels():
    assert oracles.mirror_dipole_factor(1e-3, 930) == pytest.approx(0, abs=1e-8)


@pytest.mark.parametrize("o", ["horizontal", "vertical"])
def test_mirror_far_limit(o):
    assert oracles.mirror_dipole_factor(1e5 * 930, 930, o) == pytest.approx(1, abs=1e-5)


@given(st.floats(0.01, 5.0), st.sampled_from(["horizontal", "vertical"]))
@settings(max_examples=50, deadline=None)
def test_mirror_closed_form_matches_image_field(d_over_lambda, o):
    lam = 930.0
    a = oracles.mirror_dipole_factor(d_over_lambda * lam, lam, o)
    b = oracles.image_dipole_factor(d_over_lambda * lam, lam, o)
    assert a == pytest.approx(b, rel=1e-6, abs=1e-9)


def test_mirror_bad_orientation():
    with pytest.raises(ValueError):
        oracles.mirror_dipole_factor(100, 930, "diagonal")


def test_fresnel_gaas():
    assert oracles.thin_film_reflectance([(3.52, 0)], 930) == pytest.approx(
        ((3.52 - 1) / (3.52 + 1)) ** 2, rel=1e-12)
    assert round(oracles.thin_film_reflectance([(3.52, 0)], 930), 4) == 0.3108


def test_zero_thickness_layer_is_invisible():
    base = [(3.52, 0), (1.62, 200)]
    with_zero = [(3.52, 0), (2.5, 0.0), (1.62, 200)]
    assert oracles.thin_film_reflectance(with_zero, 930) == pytest.approx(
        oracles.thin_film_reflectance(base, 930), abs=1e-14)


def test_quarter_wave_antireflection():
    n = math.sqrt(3.52)
    assert oracles.thin_film_reflectance([(3.52, 0), (n, 930 / (4 * n))], 930) < 1e-6


def test_pec_reflects_everything():
    assert oracles.thin_film_reflectance([(None, 0), (1.62, 123.0)], 930) == pytest.approx(1)


def test_layerstack_input_matches_tuples():
    st_ = LayerStack((Layer(MaterialSpec("g", 3.52), 1.0), Layer(MaterialSpec("s", 1.62), 200.0)))
    assert oracles.thin_film_reflectance(st_, 930) == pytest.approx(
        oracles.thin_film_reflectance([(3.52, 0), (1.62, 200)], 930), abs=1e-14)


def test_single_layer_closed_form():
    # Airy formula for one film on a substrate
    n0, n1, n2, t, lam = 1.0, 2.0, 1.5, 137.0, 800.0
    r01 = (n0 - n1) / (n0 + n1)
    r12 = (n1 - n2) / (n1 + n2)
    ph = np.exp(2j * 2 * np.pi * n1 * t / lam)
    r = (r01 + r12 * ph) / (1 + r01 * r12 * ph)
    assert oracles.thin_film_reflectance([(n2, 0), (n1, t)], lam) == pytest.approx(abs(r) ** 2)


@given(st.lists(st.tuples(st.floats(1.0, 4.0), st.floats(0.0, 500.0)), min_size=1, max_size=5),
       st.floats(400, 2000))
@settings(max_examples=60, deadline=None)
def test_reflectance_bounded(layers, lam):
    r = oracles.thin_film_reflectance(layers, lam)
    assert -1e-12 <= r <= 1 + 1e-12


def test_drude_gold_mirror_is_lossy():
    gold = MaterialSpec("gold", 0.2, metal=True, plasma_frequency=1.37e16, collision_rate=4.05e13)
    st_ = LayerStack((Layer(gold, 100.0), Layer(MaterialSpec("s", 1.62), 200.0)))
    r = oracles.thin_film_reflectance(st_, 930, metal_model="drude")
    assert 0.9 < r < 1.0


def test_cone_fractions():
    assert oracles.hemisphere_cone_fraction("uniform", 0.7) == pytest.approx(0.2859, abs=1e-4)
    assert oracles.hemisphere_cone_fraction("dipole-sin2", 0.7) == pytest.approx(0.1109, abs=1e-4)
    for p in ("uniform", "dipole-sin2"):
        assert oracles.hemisphere_cone_fraction(p, 1.0) == pytest.approx(1.0)


@pytest.mark.parametrize("na", [0.1, 0.4, 0.7, 0.95, 1.0])
def test_cone_fraction_quadrature(na):
    top = math.asin(na)
    u = quad(math.sin, 0, top)[0] / quad(math.sin, 0, math.pi / 2)[0]
    s = quad(lambda t: math.sin(t) ** 3, 0, top)[0] / quad(lambda t: math.sin(t) ** 3, 0,
                                                           math.pi / 2)[0]
    assert oracles.hemisphere_cone_fraction("uniform", na) == pytest.approx(u, rel=1e-6)
    assert oracles.hemisphere_cone_fraction("dipole-sin2", na) == pytest.approx(s, rel=1e-6)


def test_cone_fraction_bad_na():
    with pytest.raises(ValueError):
        oracles.hemisphere_cone_fraction("uniform", 0.0)


@pytest.mark.parametrize("axis", ["x", "y", "z"])
def test_far_field_power_matches_bulk(axis):
    th = np.linspace(0, np.pi, 361)
    ph = np.linspace(0, 2 * np.pi, 241)
    T, P = np.meshgrid(th, ph, indexing="ij")
    et, ep = oracles.dipole_far_field(T, P, 930, axis)
    from scipy.constants import c, mu_0
    eta = mu_0 * c
    from scipy.integrate import trapezoid
    dens = (np.abs(et) ** 2 + np.abs(ep) ** 2) / (2 * eta) * np.sin(T)
    power = trapezoid(trapezoid(dens, ph, axis=1), th)
    assert power == pytest.approx(oracles.bulk_dipole_power(1, 930), rel=1e-4)


def test_near_field_matches_far_field():
    lam = 930.0
    r = 1e5 * lam
    for th, ph in ((0.3, 0.2), (1.2, 2.0)):
        x, y, z = (r * math.sin(th) * math.cos(ph), r * math.sin(th) * math.sin(ph),
                   r * math.cos(th))
        E, H = oracles.dipole_near_field(x, y, z, lam, (1.0, 0.0, 0.0))
        et_hat = (math.cos(th) * math.cos(ph), math.cos(th) * math.sin(ph), -math.sin(th))
        et = sum(e * u for e, u in zip(E, et_hat))
        ff_t, _ = oracles.dipole_far_field(th, ph, lam, "x", r=r * 1e-9)
        assert abs(et) == pytest.approx(abs(ff_t), rel=1e-4)
        # E and H are transverse with |E| = eta |H| in the far zone
        from scipy.constants import c, mu_0
        emag = math.sqrt(sum(abs(e) ** 2 for e in E))
        hmag = math.sqrt(sum(abs(h) ** 2 for h in H))
        assert emag / hmag == pytest.approx(mu_0 * c, rel=1e-4)
