import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gradbound.constants import BoundReport
from gradbound.harness import (
    CSV_HEADER,
    InsufficientData,
    SweepConfig,
    _exact_conclusion,
    _exact_premise,
    check_bound_shape,
    check_lemma_2_14,
    check_lemma_square,
    emit_csv,
    lemma_2_14_stability,
    load_config,
    parse_config,
    read_csv,
    run_sweep,
    scaled_config,
    source_function,
    source_norm,
    trial_words,
)
from gradbound.rearrange import lq_norm
from gradbound.solver import make_problem, solve
from gradbound.structural import StructuralParams
from oracles import exact_lemma_square

SMALL = SweepConfig(p_list=(1.5, 2.0, 3.0), grid_levels=(16, 24), source="gaussian")


def reports_with(ratios_by_grid):
    out = []
    for n, ratios in ratios_by_grid.items():
        for p, r in zip((1.5, 2.0, 3.0, 5.0), ratios):
            out.append(BoundReport(p, r, 1.0, 1.0, r, n, True, {"lemma_2_14": r}))
    return out


# --- configuration ---------------------------------------------------------

def test_parse_config():
    cfg = parse_config("""
        # comment line
        p_list = 1.5, 2, 3   # trailing comment
        dim = 2
        shape = lshape
        regime = boundary
        theta = 3
        grid_levels = 32, 64
    """)
    assert cfg.p_list == (1.5, 2.0, 3.0) and cfg.grid_levels == (32, 64)
    assert cfg.shape == "lshape" and cfg.regime == "boundary" and cfg.theta == 3.0


@pytest.mark.parametrize("text", [
    "p_list = 3, 2",
    "p_list = 1.005, 2",
    "colour = blue",
    "p_list 1.5",
    "space = lorentz_N1\ndim = 2",
    "q = 2",
    "grid_levels = 64, 32",
    "regime = sideways",
])
def test_parse_config_rejects(text):
    with pytest.raises(ValueError):
        parse_config(text)


@pytest.mark.parametrize("name", ["square_lq.cfg", "cube_lorentz.cfg", "lshape_boundary.cfg"])
def test_shipped_configs_load(name):
    from pathlib import Path

    cfg = load_config(Path(__file__).resolve().parents[1] / "configs" / name)
    assert len(cfg.p_list) >= 3 and len(cfg.grid_levels) == 2


# --- source norms ----------------------------------------------------------

def test_source_function_uses_domain_cells():
    pr = make_problem(2, "disk", 16, 2.0, 1e-8, "dirichlet", "one")
    v = source_function(pr)
    assert v.total_measure == pytest.approx(np.sum(pr.cell_volume))
    assert source_norm(pr, "lebesgue_q", 2.0) == pytest.approx(math.sqrt(v.total_measure))


def test_source_norm_lorentz_of_constant():
    pr = make_problem(3, "cube", 8, 2.0, 1e-8, "dirichlet", "one")
    # constant 1 on measure 1: l m^{1/l} with l = 3
    assert source_norm(pr, "lorentz_N1") == pytest.approx(3.0, rel=1e-12)
    with pytest.raises(ValueError):
        source_norm(pr, "weak")


# --- sweeps ----------------------------------------------------------------

def test_zero_source_sweep():
    cfg = SweepConfig(p_list=(1.5, 2.0, 3.0), grid_levels=(16,), source="zero")
    reports = run_sweep(cfg)
    assert len(reports) == 3
    assert all(r.grad_sup_pow == 0.0 and r.ratio == 0.0 and r.converged for r in reports)


def test_single_p_sine_ratio():
    cfg = SweepConfig(p_list=(2.0,), grid_levels=(64,), source="sine", eps=0.0)
    (rep,) = run_sweep(cfg)
    pr = make_problem(2, "square", 64, 2.0, 0.0, "dirichlet", "sine")
    fq = lq_norm(source_function(pr), 4.0)
    assert rep.source_norm == pytest.approx(fq, rel=1e-14)
    assert rep.ratio == pytest.approx(math.pi / (2**2.5 * fq), rel=3e-3)


def test_sweep_reports_sorted_and_consistent():
    reports = run_sweep(SMALL)
    keys = [(r.p, r.grid_n) for r in reports]
    assert keys == sorted(keys) and len(reports) == 6
    for r in reports:
        assert r.converged and math.isfinite(r.ratio) and r.ratio > 0
        assert r.ratio == pytest.approx(r.grad_sup_pow / (r.factor * r.source_norm), rel=1e-12)
        assert r.extras["lemma_2_14"] > 0


def test_sweep_failure_is_marked():
    cfg = SweepConfig(p_list=(1.5, 6.0, 8.0), grid_levels=(16,), max_iter=2)
    reports = run_sweep(cfg)
    assert len(reports) == 3
    assert not all(r.converged for r in reports)
    assert all("error" in r.extras for r in reports if not r.converged)


def test_deterministic_csv(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    emit_csv(run_sweep(SMALL), a)
    emit_csv(run_sweep(SMALL), b)
    assert a.read_bytes() == b.read_bytes()


@pytest.mark.parametrize("lam", [0.5, 2.0])
def test_scaling_covariance(lam):
    cfg = SweepConfig(p_list=(1.5, 3.0), grid_levels=(32,), eps=1e-10, tol=1e-10)
    base = run_sweep(cfg)
    scaled = run_sweep(scaled_config(cfg, lam))
    for r0, r1 in zip(base, scaled):
        assert r1.source_norm == pytest.approx(lam * r0.source_norm, rel=1e-12)
        assert r1.grad_sup_pow == pytest.approx(lam * r0.grad_sup_pow, rel=0.01)
        assert r1.ratio == pytest.approx(r0.ratio, rel=0.01)


def test_boundary_regime_sweep_on_lshape():
    cfg = SweepConfig(p_list=(1.5, 2.0, 3.0), shape="lshape", regime="boundary", theta=3.0,
                      grid_levels=(24,))
    reports = run_sweep(cfg)
    convex = run_sweep(SweepConfig(p_list=(1.5, 2.0, 3.0), shape="lshape", grid_levels=(24,)))
    for b, c in zip(reports, convex):
        assert b.grad_sup_pow == c.grad_sup_pow
        if b.p >= 2:
            assert b.factor >= c.factor


# --- shape checks ----------------------------------------------------------

def test_shape_all_equal_passes():
    v = check_bound_shape(reports_with({32: [0.1, 0.1, 0.1], 64: [0.1, 0.1, 0.1]}))
    assert v.passed and v.stability == 0.0 and v.max_ratio == 0.1


def test_shape_doubling_fails():
    v = check_bound_shape(reports_with({32: [0.1, 0.2, 0.3], 64: [0.2, 0.4, 0.6]}))
    assert not v.passed and v.stability == pytest.approx(1.0)


def test_shape_uses_two_finest_grids():
    v = check_bound_shape(reports_with({16: [9, 9, 9], 32: [1.0, 1.0, 1.0],
                                        64: [1.01, 1.0, 1.0]}))
    assert v.passed and v.grids == (32, 64)


def test_shape_explicit_pair():
    reps = reports_with({16: [9, 9, 9], 32: [1.0, 1.0, 1.0], 64: [1.0, 1.0, 1.0]})
    assert not check_bound_shape(reps, refinement_pair=(16, 32)).passed


def test_shape_needs_data():
    with pytest.raises(InsufficientData):
        check_bound_shape(reports_with({32: [0.1, 0.1], 64: [0.1, 0.1]}))
    with pytest.raises(InsufficientData):
        check_bound_shape(reports_with({32: [0.1, 0.1, 0.1]}))


def test_lemma_stability_verdict():
    v = lemma_2_14_stability(reports_with({32: [1.0, 2.0, 3.0], 64: [1.0, 2.02, 3.0]}))
    assert v.passed and v.max_ratio == 3.0


# --- energy lemma ----------------------------------------------------------

def test_lemma_2_14_zero_source():
    pr = make_problem(2, "square", 8, 2.0, 1e-8, "dirichlet", "zero")
    assert check_lemma_2_14(solve(pr), 0.0, pr.params) == 0.0


def test_lemma_2_14_sine_stable():
    vals = []
    for n in (32, 64):
        pr = make_problem(2, "square", n, 2.0, 0.0, "dirichlet", "sine")
        res = solve(pr, tol=1e-10)
        vals.append(check_lemma_2_14(res, source_norm(pr, "lebesgue_q", 4.0), pr.params))
    # p = 2: integral of |grad u|^2 / 2 is pi^2 / 4 for the sine solution
    assert vals[1] == pytest.approx(vals[0], rel=0.05)
    pr = make_problem(2, "square", 64, 2.0, 0.0, "dirichlet", "sine")
    fq = source_norm(pr, "lebesgue_q", 4.0)
    assert vals[1] == pytest.approx((math.pi**2 / 4) / (2 * fq * fq), rel=0.01)


def test_lemma_2_14_scales_with_C():
    pr = make_problem(2, "square", 16, 3.0, 1e-8, "dirichlet", "gaussian")
    res = solve(pr)
    a = check_lemma_2_14(res, 5.0, pr.params, 1.0)
    assert check_lemma_2_14(res, 5.0, pr.params, 4.0) == pytest.approx(a / 4)


# --- quadratic lemma -------------------------------------------------------

def test_square_lemma_examples():
    assert _exact_premise(2.0, 1.0, 1.0, 1.0) and _exact_conclusion(2.0, 1.0, 1.0, 1.0)
    assert exact_lemma_square(2.0, 1.0, 1.0, 1.0) == (True, True)
    assert _exact_premise(0.0, 0.0, 0.0, 0.7) and _exact_conclusion(0.0, 0.0, 0.0, 0.7)
    assert not _exact_premise(1e-300, 0.0, 0.0, 0.7)


@given(x=st.floats(0.0, 100.0), Y=st.floats(0.0, 100.0), s=st.floats(0.01, 10.0))
def test_square_lemma_at_root(x, Y, s):
    c = s * s
    root = 0.5 * (c * Y + math.sqrt(c * c * Y * Y + 4 * c * (x * x + Y * Y)))
    # nudge down to the largest double satisfying the premise exactly
    X = root
    while not exact_lemma_square(X, x, Y, s)[0]:
        X = np.nextafter(X, 0.0)
    assert _exact_premise(X, x, Y, s)
    assert _exact_conclusion(X, x, Y, s)
    assert exact_lemma_square(X, x, Y, s)[1]


def test_square_check_passes():
    res = check_lemma_square(2000, seed=11)
    assert res.passed and res.trials == 2000 and res.violations == 0
    assert res.boundary_trials > 0


def test_square_check_agrees_with_oracle():
    from gradbound.harness import _square_draws

    X, x, Y, s, _ = _square_draws(trial_words(4, 0, 300))
    for i in range(300):
        premise, conclusion = exact_lemma_square(X[i], x[i], Y[i], s[i])
        assert premise == _exact_premise(X[i], x[i], Y[i], s[i])
        if premise:
            assert conclusion


def test_trial_words_reproducible_in_isolation():
    block = trial_words(9, 0, 50)
    assert np.array_equal(trial_words(9, 37, 1)[0], block[37])
    assert np.array_equal(trial_words(9, 10, 5), block[10:15])
    assert not np.array_equal(trial_words(10, 0, 1), block[:1])


def test_square_check_rejects_bad_count():
    with pytest.raises(ValueError):
        check_lemma_square(0)


# --- CSV -------------------------------------------------------------------

def test_csv_empty(tmp_path):
    path = tmp_path / "r.csv"
    emit_csv([], path)
    assert path.read_text() == ",".join(CSV_HEADER) + "\n"


def test_csv_single_report(tmp_path):
    path = tmp_path / "r.csv"
    emit_csv([BoundReport.build(2.0, 1.0, 2.0, 3.0, 16)], path)
    assert len(path.read_text().splitlines()) == 2


@given(vals=st.lists(st.tuples(st.floats(1.01, 50.0), st.floats(0.0, 1e6),
                               st.floats(1e-6, 1e6), st.floats(1e-3, 1e9),
                               st.integers(4, 256), st.booleans()),
                     min_size=1, max_size=6))
def test_csv_round_trip(tmp_path_factory, vals):
    path = tmp_path_factory.mktemp("csv") / "r.csv"
    reports = [BoundReport.build(*v[:4], grid_n=v[4], converged=v[5]) for v in vals]
    emit_csv(reports, path)
    back = read_csv(path)
    for a, b in zip(reports, back):
        for f in ("p", "grad_sup_pow", "source_norm", "factor", "ratio"):
            x, y = getattr(a, f), getattr(b, f)
            assert abs(x - y) <= 1e-15 * abs(x)
        assert (a.grid_n, a.converged) == (b.grid_n, b.converged)


def test_csv_rejects_foreign_header(tmp_path):
    path = tmp_path / "r.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_csv(path)


def test_lemma_params_used():
    # the ratio uses C_p(p) and psi with the given params
    pr = make_problem(2, "square", 16, 2.0, 0.0, "dirichlet", "sine")
    res = solve(pr)
    a = check_lemma_2_14(res, 3.0, StructuralParams(2.0, 0.0))
    num = a * 2.0 * 9.0
    assert num == pytest.approx(float(np.sum(0.5 * res.grad_mag**2 * res.cell_volume)))
