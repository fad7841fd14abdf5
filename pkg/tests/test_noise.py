import math

import numpy as np
import pytest

from safeid.noise import (CertificationError, NoiseSpec, certify, sample, sample_many, support_halfwidth,
                          truncated_gaussian_variance)
from safeid.rng import RngStream


def test_zero_family_is_zero():
    assert np.all(sample_many(NoiseSpec.zero(3), RngStream(0), 10) == 0)
    assert certify(NoiseSpec.zero()) == (0.0, 0.0, math.inf)


def test_support_of_draws():
    s = sample_many(NoiseSpec.scaled_sign(0.5), RngStream(1), 1000)
    assert set(np.unique(s)) == {-0.5, 0.5}
    u = sample_many(NoiseSpec.uniform_box(1.0), RngStream(1), 1000)
    assert np.all(np.abs(u) <= 1.0)
    sph = sample_many(NoiseSpec.uniform_sphere(2.0, 3), RngStream(1), 1000)
    np.testing.assert_allclose(np.linalg.norm(sph, axis=1), 2.0, rtol=1e-12)
    tg = sample_many(NoiseSpec.truncated_gaussian(1.0, 1.5, 2), RngStream(1), 5000)
    assert np.all(np.linalg.norm(tg, axis=1) <= 1.5)


@pytest.mark.parametrize("spec, expected", [
    (NoiseSpec.uniform_box(1.0), (1 / math.sqrt(3), 1.0, math.sqrt(3))),
    (NoiseSpec.scaled_sign(0.5), (0.5, 0.5, 1.0)),
    (NoiseSpec.uniform_sphere(1.0, 2), (1 / math.sqrt(2), 1.0, math.sqrt(2))),
])
def test_certify_closed_forms(spec, expected):
    assert certify(spec) == pytest.approx(expected, rel=1e-12)


def test_certified_sigma_lower_bounds_sample_variance():
    for spec in (NoiseSpec.uniform_box(2.0, 2), NoiseSpec.uniform_sphere(1.0, 3), NoiseSpec.scaled_sign(0.3, 2)):
        sigma, max_norm, _ = certify(spec)
        d = sample_many(spec, RngStream(5), 200_000)
        assert np.linalg.eigvalsh(np.cov(d.T).reshape(spec.dim, spec.dim)).min() == pytest.approx(sigma**2, rel=0.02)
        assert np.linalg.norm(d, axis=1).max() <= max_norm + 1e-12


def test_truncated_gaussian_certificate_against_exact_variance():
    spec = NoiseSpec.truncated_gaussian(1.0, 1.5, 2)
    sigma, _, _ = certify(spec)
    exact = math.sqrt(truncated_gaussian_variance(2, 1.0, 1.5))
    assert sigma <= exact
    assert sigma == pytest.approx(0.98 * exact, rel=0.01)


def test_prefix_consistency_and_child_independence():
    spec = NoiseSpec.uniform_box(1.0, 2)
    long = sample_many(spec, RngStream(7, (1,)), 100)
    short = sample_many(spec, RngStream(7, (1,)), 10)
    np.testing.assert_array_equal(long[:10], short)
    other = sample_many(spec, RngStream(7, (2,)), 10)
    assert not np.array_equal(other, short)
    assert sample(spec, RngStream(7, (1,))) == pytest.approx(short[0])


def test_serialisation_round_trip():
    for spec in (NoiseSpec.uniform_box(1.0), NoiseSpec.scaled_sign(0.5, 2), NoiseSpec.uniform_sphere(3.0, 3),
                 NoiseSpec.truncated_gaussian(1.0, 2.0), NoiseSpec.zero(2)):
        assert NoiseSpec.from_dict(spec.to_dict()) == spec


@pytest.mark.parametrize("kw", [dict(family="nope"), dict(family="uniform_box", scale=-1.0),
                                dict(family="uniform_box", scale=1.0, dim=0),
                                dict(family="truncated_gaussian", scale=1.0)])
def test_invalid_specs(kw):
    with pytest.raises(ValueError):
        NoiseSpec(**kw)


def test_scaled_and_support():
    spec = NoiseSpec.uniform_box(1.0).scaled(2.0)
    assert spec.scale == 2.0
    np.testing.assert_array_equal(support_halfwidth(spec), [2.0])
    assert certify(NoiseSpec.uniform_box(1.0).scaled(3.0))[2] == pytest.approx(math.sqrt(3))


def test_certification_error_on_too_few_samples():
    from safeid.noise import _certify_truncated_gaussian
    with pytest.raises(CertificationError):
        _certify_truncated_gaussian(1, 1.0, 3.0, n=10)
