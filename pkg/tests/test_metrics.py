import numpy as np
import pytest
from scipy.stats import ortho_group

from errors import NumericError, PreconditionError, SampleSizeError
from metrics import FeatureBatch, MetricReport, embed, evaluate, frechet, knn_radii, precision_recall


def brute_force_precision_recall(real, fake, k):
    def radii(points):
        out = []
        for i, p in enumerate(points):
            d = sorted(np.sqrt(((p - q) ** 2).sum()) for j, q in enumerate(points) if j != i)
            out.append(d[k - 1])
        return out

    def coverage(points, reference, reference_radii):
        hits = 0
        for p in points:
            if any(np.sqrt(((p - q) ** 2).sum()) <= r for q, r in zip(reference, reference_radii)):
                hits += 1
        return hits / len(points)

    return coverage(fake, real, radii(real)), coverage(real, fake, radii(fake))


def test_frechet_of_identical_sets_is_zero(rng):
    a = FeatureBatch(rng.normal(size=(300, 4)))
    assert frechet(a, a) == pytest.approx(0.0, abs=1e-6)


def test_frechet_matches_one_dimensional_closed_form(rng):
    a = FeatureBatch(rng.normal(0.0, 1.0, size=10_000))
    b = FeatureBatch(rng.normal(1.0, 2.0, size=10_000))
    # (mu_a - mu_b)^2 + (sigma_a - sigma_b)^2
    assert frechet(a, b) == pytest.approx(2.0, rel=0.1)


def test_frechet_is_symmetric(rng):
    a = FeatureBatch(rng.normal(size=(200, 3)))
    b = FeatureBatch(rng.normal(0.5, 1.5, size=(200, 3)))
    assert frechet(a, b) == pytest.approx(frechet(b, a), rel=1e-9)


def test_frechet_is_rotation_invariant(rng):
    a = rng.normal(size=(300, 4))
    b = rng.normal(0.5, 1.5, size=(300, 4))
    q = ortho_group.rvs(4, random_state=7)
    assert frechet(FeatureBatch(a @ q), FeatureBatch(b @ q)) == pytest.approx(
        frechet(FeatureBatch(a), FeatureBatch(b)), abs=1e-4)


def test_frechet_needs_enough_samples(rng):
    small = FeatureBatch(rng.normal(size=(3, 4)))
    with pytest.raises(SampleSizeError):
        frechet(small, small)


def test_non_finite_features_rejected():
    with pytest.raises(NumericError):
        FeatureBatch(np.array([[0.0, np.inf]]))


@pytest.mark.parametrize("seed", range(3))
def test_precision_recall_matches_brute_force(seed):
    r = np.random.default_rng(seed)
    real = r.normal(size=(200, 2))
    fake = r.normal(0.5, 1.2, size=(200, 2))
    expected = brute_force_precision_recall(real, fake, 3)
    assert precision_recall(FeatureBatch(real), FeatureBatch(fake, "generated"), 3) == expected


def test_precision_recall_survive_rigid_motion(rng):
    real = rng.normal(size=(150, 3))
    fake = rng.normal(0.4, 1.3, size=(150, 3))
    q = ortho_group.rvs(3, random_state=3)
    shift = np.array([5.0, -2.0, 0.5])
    moved = precision_recall(FeatureBatch(real @ q + shift), FeatureBatch(fake @ q + shift, "generated"), 3)
    assert moved == precision_recall(FeatureBatch(real), FeatureBatch(fake, "generated"), 3)


def test_knn_radii_exclude_self():
    points = np.array([[0.0], [1.0], [3.0]])
    np.testing.assert_allclose(knn_radii(points, 1), [1.0, 1.0, 2.0])


def test_identical_sets_have_full_precision_and_recall(rng):
    a = FeatureBatch(rng.normal(size=(50, 2)))
    assert precision_recall(a, a, 3) == (1.0, 1.0)


def test_disjoint_sets_have_zero_precision(rng):
    a = FeatureBatch(rng.normal(size=(50, 2)))
    b = FeatureBatch(rng.normal(size=(50, 2)) + 100.0)
    assert precision_recall(a, b, 3) == (0.0, 0.0)


@pytest.mark.parametrize("k", [0, 10])
def test_k_out_of_range(rng, k):
    a = FeatureBatch(rng.normal(size=(10, 2)))
    with pytest.raises(PreconditionError):
        precision_recall(a, a, k)


def test_evaluate_report_fields(rng):
    report = evaluate(FeatureBatch(rng.normal(size=(40, 2))), FeatureBatch(rng.normal(size=(30, 2))), 3)
    assert isinstance(report, MetricReport)
    assert set(report.to_dict()) == {"fid", "precision", "recall", "n_real", "n_gen", "k"}
    assert (report.n_real, report.n_gen, report.k) == (40, 30, 3)


def test_embed_modes(shapes_codec, shapes_data):
    assert embed(shapes_codec, shapes_data.data[:5]).dim == 4
    assert embed(shapes_codec, shapes_data.data[:5], mode="pixel").dim == 256
    assert embed(None, shapes_data.data[:5]).dim == 256
