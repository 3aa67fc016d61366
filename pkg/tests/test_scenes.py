import numpy as np
import pytest

from rkpmsim.config import bundled_scene, load_scene
from rkpmsim.pipeline import compute_modes, prepare, run_scene


@pytest.fixture(scope="module")
def layered():
    cfg = load_scene(bundled_scene("layered_sphere_drop"))
    return cfg, prepare(cfg)


def _homogeneous(cfg, young):
    mat = cfg.material.model_copy(update={"regions": [], "young_modulus": young})
    return cfg.model_copy(update={"material": mat})


def test_layers_are_sampled(layered):
    _, prep = layered
    mu = prep.integ.lame_mu
    assert len(np.unique(mu)) == 2
    stiff = prep.integ.weights[mu > mu.min()].sum() / prep.integ.volume
    # core plus one shell: (1 + 27 - 8) / 64 of the ball
    assert stiff == pytest.approx(20 / 64, abs=0.05)


def test_layered_eigenvalue_differs_from_homogeneous(layered):
    cfg, prep = layered
    lam1 = compute_modes(prep, 4).eigenvalues[1]
    soft = compute_modes(prepare(_homogeneous(cfg, cfg.material.young_modulus)), 4).eigenvalues[1]
    assert abs(lam1 - soft) > 0.1 * soft
    # also against the volume-averaged modulus, so plain stiffening is not what is measured
    integ = prep.integ
    lam, mu = integ.lame_lambda, integ.lame_mu
    young = mu * (3 * lam + 2 * mu) / (lam + mu)
    avg = compute_modes(prepare(_homogeneous(cfg, float(integ.weights @ young / integ.volume))), 4).eigenvalues[1]
    assert abs(lam1 - avg) > 0.1 * avg


@pytest.mark.slow
def test_layered_drop_lands_on_ground():
    cfg = load_scene(bundled_scene("layered_sphere_drop"))
    res = run_scene(cfg)
    frames = res.trajectory.frames
    assert np.all(np.isfinite(frames))
    assert res.report["solver"]["stalled_steps"] == 0
    rest_bottom = frames[0, :, 1].min()
    assert rest_bottom > 0.09
    # it falls, and the plane holds it up to a small penetration
    assert frames[-1].mean(axis=0)[1] < frames[0].mean(axis=0)[1] - 0.05
    assert frames[:, :, 1].min() > -0.01
