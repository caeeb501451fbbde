import numpy as np
import pytest

from data_sources.fixtures import flat_grid, spherical_cap, synthetic_face
from geometry.errors import MaxItersExceeded
from geometry.ricci import (
    CirclePackingMetric,
    FlowMode,
    RadiusRule,
    curvature_jacobian,
    edge_lengths,
    init_circle_packing,
    metric_curvature,
    ricci_energy,
    ricci_flow,
)
from ingestion.mesh import TriMesh


def _equilateral():
    return TriMesh([[0, 0, 0], [1, 0, 0], [0.5, np.sqrt(3) / 2, 0]], [[0, 1, 2]])


def test_equilateral_triangle_packing():
    metric = init_circle_packing(_equilateral())
    assert metric.radii == pytest.approx([0.5, 0.5, 0.5])
    assert metric.edge_cosines == pytest.approx([1.0, 1.0, 1.0])
    assert metric.edge_weights == pytest.approx([0.0, 0.0, 0.0], abs=1e-6)
    assert edge_lengths(metric) == pytest.approx([1.0, 1.0, 1.0])


@pytest.mark.parametrize(
    "radii, phi, expected",
    [((1.0, 1.0), 0.0, 2.0), ((1.0, 1.0), np.pi / 2, np.sqrt(2.0)), ((3.0, 4.0), 0.0, 7.0)],
)
def test_cosine_law(radii, phi, expected):
    metric = CirclePackingMetric.from_weights(radii, [[0, 1]], [phi])
    assert edge_lengths(metric)[0] == pytest.approx(expected)


@pytest.mark.parametrize("mesh", [flat_grid(5), spherical_cap(rings=6), synthetic_face(spacing=10.0)])
def test_unclamped_packing_reproduces_lengths(mesh):
    metric = init_circle_packing(mesh)
    assert np.allclose(edge_lengths(metric), mesh.edge_lengths(), rtol=0.0, atol=1e-9)
    assert metric.n_clamped == 0


def test_clamped_packing_flags_edges():
    mesh = flat_grid(5)
    metric = init_circle_packing(mesh, clamp=True)
    assert metric.n_clamped > 0
    assert metric.edge_cosines.min() >= 0.0 and metric.edge_cosines.max() <= 1.0
    assert init_circle_packing(mesh).n_disjoint > 0


def test_max_radius_rule_keeps_circles_intersecting():
    mesh = spherical_cap(rings=4)
    low = init_circle_packing(mesh, radius_rule=RadiusRule.MIN)
    high = init_circle_packing(mesh, radius_rule=RadiusRule.MAX)
    assert np.all(high.radii >= low.radii)
    assert np.allclose(edge_lengths(high), mesh.edge_lengths(), atol=1e-9)


def test_flat_grid_is_already_converged():
    mesh = flat_grid(5)
    _, report = ricci_flow(mesh, init_circle_packing(mesh), epsilon=1e-6)
    assert report.converged
    assert report.iterations <= 1
    assert report.final_residual < 1e-6


def test_newton_flow_on_cap():
    mesh = spherical_cap()
    metric = init_circle_packing(mesh)
    flat, report = ricci_flow(mesh, metric, epsilon=1e-6, mode=FlowMode.NEWTON)
    assert report.converged
    assert report.iterations <= 100

    k = metric_curvature(mesh, flat)
    assert np.abs(k[mesh.interior]).max() < 1e-6
    assert k[mesh.boundary_flags].sum() == pytest.approx(2 * np.pi, abs=1e-5)
    assert np.array_equal(flat.log_radii[mesh.boundary_flags], metric.log_radii[mesh.boundary_flags])
    assert np.all(np.diff(report.energy_history) <= 0.0)
    assert report.to_dict()["converged"] is True


def test_gradient_flow_converges_exponentially():
    mesh = spherical_cap(rings=6)
    _, report = ricci_flow(mesh, init_circle_packing(mesh), epsilon=1e-6, mode=FlowMode.GRADIENT)
    assert report.converged
    assert np.all(np.diff(report.energy_history) <= 0.0)

    log_res = np.log(np.asarray(report.max_residual_history))
    start = len(log_res) // 5
    t = np.arange(start, len(log_res))
    slope, intercept = np.polyfit(t, log_res[start:], 1)
    fitted = slope * t + intercept
    ss_res = np.sum((log_res[start:] - fitted) ** 2)
    ss_tot = np.sum((log_res[start:] - log_res[start:].mean()) ** 2)
    assert slope < 0
    assert 1.0 - ss_res / ss_tot > 0.9


def test_energy_derivative_matches_curvature():
    mesh = spherical_cap(rings=6)
    metric = init_circle_packing(mesh)
    k = metric_curvature(mesh, metric)
    h = 1e-5
    for i in (0, int(mesh.interior[len(mesh.interior) // 2])):
        plus = metric.log_radii.copy()
        minus = metric.log_radii.copy()
        plus[i] += h
        minus[i] -= h
        e_plus = ricci_energy(mesh, metric.with_log_radii(plus), base=metric)
        e_minus = ricci_energy(mesh, metric.with_log_radii(minus), base=metric)
        assert (e_plus - e_minus) / (2 * h) == pytest.approx(k[i], rel=1e-4)


def test_energy_of_the_base_metric_is_zero():
    mesh = spherical_cap(rings=3)
    metric = init_circle_packing(mesh)
    assert ricci_energy(mesh, metric, base=metric) == 0.0


def test_jacobian_matches_finite_differences():
    mesh = spherical_cap(rings=5)
    metric = init_circle_packing(mesh)
    jac = curvature_jacobian(mesh, metric).toarray()
    assert np.allclose(jac, jac.T)
    h = 1e-6
    for j in (0, 7):
        plus = metric.log_radii.copy()
        minus = metric.log_radii.copy()
        plus[j] += h
        minus[j] -= h
        column = (
            metric_curvature(mesh, metric.with_log_radii(plus)) - metric_curvature(mesh, metric.with_log_radii(minus))
        ) / (2 * h)
        assert np.allclose(jac[:, j], column, atol=1e-6)


def test_iteration_budget_carries_partial_report():
    mesh = spherical_cap(rings=6)
    with pytest.raises(MaxItersExceeded) as exc:
        ricci_flow(mesh, init_circle_packing(mesh), epsilon=1e-12, max_iters=1)
    assert exc.value.report.converged is False
    assert exc.value.report.iterations == 1
    assert exc.value.metric is not None


def test_metric_validation():
    with pytest.raises(ValueError):
        CirclePackingMetric([0.0, np.inf], [[0, 1]], [1.0])
    with pytest.raises(ValueError):
        CirclePackingMetric([0.0, 0.0], [[0, 2]], [1.0])


def test_curvature_ignores_a_common_radius_scale():
    mesh = spherical_cap(rings=6)
    metric = init_circle_packing(mesh)
    scaled = metric.with_log_radii(metric.log_radii + 0.8)
    assert np.allclose(edge_lengths(scaled), edge_lengths(metric) * np.exp(0.8), rtol=1e-12)
    assert np.allclose(metric_curvature(mesh, scaled), metric_curvature(mesh, metric), rtol=0.0, atol=1e-12)


def test_flow_keeps_weights_and_is_repeatable():
    mesh = spherical_cap(rings=5)
    metric = init_circle_packing(mesh)
    cosines = metric.edge_cosines.copy()
    first, report = ricci_flow(mesh, metric, epsilon=1e-6)
    second, again = ricci_flow(mesh, metric, epsilon=1e-6)
    assert np.array_equal(first.edge_cosines, cosines)
    assert np.array_equal(metric.edge_cosines, cosines)
    assert np.array_equal(first.log_radii, second.log_radii)
    assert report.to_dict() == again.to_dict()


@pytest.mark.slow
def test_gradient_flow_converges_exponentially_on_the_full_cap():
    mesh = spherical_cap()
    _, report = ricci_flow(mesh, init_circle_packing(mesh), epsilon=1e-6, mode=FlowMode.GRADIENT)
    assert report.converged
    log_res = np.log(np.asarray(report.max_residual_history))
    start = len(log_res) // 5
    t = np.arange(start, len(log_res))
    slope, intercept = np.polyfit(t, log_res[start:], 1)
    ss_res = np.sum((log_res[start:] - (slope * t + intercept)) ** 2)
    ss_tot = np.sum((log_res[start:] - log_res[start:].mean()) ** 2)
    assert slope < 0
    assert 1.0 - ss_res / ss_tot > 0.9
