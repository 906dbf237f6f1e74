import numpy as np
import pytest

from tinierhar.data import synth_dataset
from tinierhar.errors import ConfigurationError
from tinierhar.experiments import (
    BASELINE,
    DEFAULT_MS,
    DEFAULT_NS,
    Cell,
    CellStore,
    ConfigEntry,
    StudyResult,
    aggregate_config,
    make_folds,
    run_ablation,
    run_scaling_sweep,
    scaling_configs,
)
from tinierhar.models import ModelSpec, default_spec
from tinierhar.training import TrainConfig

TINY = TrainConfig(epochs=1, batch_size=8, seeds=[1])


@pytest.fixture(scope="module")
def tiny_ds():
    return synth_dataset("separable", seed=0, per_class=8, frequency=16)


def _entry(cid="c"):
    return ConfigEntry(cid, default_spec("tinierhar", 3, 40, 4), 10, 20)


def _cell(fold, seed, f1, status="ok", cid="c"):
    return Cell(cid, fold, seed, status, f1)


def test_aggregate_examples():
    one = aggregate_config(_entry(), [_cell("S0", 1, 0.73)])
    assert one.f1_mean == 0.73 and one.f1_std == 0.0 and one.n_ok == 1
    two = aggregate_config(_entry(), [_cell("S0", 1, 0.5), _cell("S0", 2, 0.7)])
    assert two.f1_mean == pytest.approx(0.6) and two.f1_std == pytest.approx(0.1)


def test_aggregate_is_permutation_invariant_and_skips_failures():
    rng = np.random.default_rng(0)
    cells = [_cell(f"S{f}", s, float(rng.random())) for f in range(3) for s in range(4)]
    cells.append(_cell("S0", 9, None, status="failed"))
    a = aggregate_config(_entry(), cells)
    for _ in range(10):
        b = aggregate_config(_entry(), [cells[i] for i in rng.permutation(len(cells))])
        assert (a.f1_mean, a.f1_std) == (b.f1_mean, b.f1_std)
    assert a.n_ok == 12 and a.n_failed == 1
    empty = aggregate_config(_entry(), [_cell("S0", 1, None, status="failed")])
    assert empty.missing and empty.f1_mean is None


def test_make_folds(tiny_ds):
    assert make_folds(tiny_ds) == ["S0", "S1", "S2", "S3"]
    assert make_folds(tiny_ds, max_folds=2) == ["S0", "S1"]
    with pytest.raises(ConfigurationError):
        make_folds(tiny_ds, "kfold")


@pytest.mark.parametrize("arch,rows", [("tinierhar", 5), ("deepconvlstm", 3)])
def test_ablation_row_counts(tiny_ds, arch, rows):
    spec = default_spec(arch, 1, 1, 2, blocks=1)
    study = run_ablation(spec, tiny_ds, TINY, folds=["S0"])
    agg = study.aggregate()
    assert len(agg) == rows and agg[0].config_id == BASELINE
    assert all(r.params < agg[0].params for r in agg[1:])
    assert study.complete()


def test_scaling_grid_rows(tiny_ds):
    study = run_scaling_sweep(tiny_ds, [2, 4], [8, 16], TINY, folds=["S0"])
    agg = study.aggregate()
    assert [r.config_id for r in agg] == ["M2_N8", "M2_N16", "M4_N8", "M4_N16"]
    assert "scaling.csv" in study.plot_data()


def test_default_grid_contains_shipped_cell():
    assert 4 in DEFAULT_MS and 16 in DEFAULT_NS
    configs = {c.config_id: c for c in scaling_configs(ModelSpec("tinierhar", 6, 100, 4), DEFAULT_MS, DEFAULT_NS)}
    assert configs["M4_N16"].spec == default_spec("tinierhar", 6, 100, 4, filters=4)
    for m in DEFAULT_MS:
        row = [configs[f"M{m}_N{n}"] for n in DEFAULT_NS]
        assert all(a.params < b.params and a.macs < b.macs for a, b in zip(row, row[1:]))
    for n in DEFAULT_NS:
        col = [configs[f"M{m}_N{n}"] for m in DEFAULT_MS]
        assert all(a.params < b.params and a.macs < b.macs for a, b in zip(col, col[1:]))


def test_study_json_round_trip(tiny_ds):
    study = run_ablation(default_spec("deepconvlstm", 1, 1, 2), tiny_ds, TINY, folds=["S0"])
    back = StudyResult.from_json(study.to_json())
    assert back.to_json() == study.to_json()
    assert back.summary_csv() == study.summary_csv()


def test_resume_reuses_finished_cells(tiny_ds, tmp_path):
    store = CellStore(tmp_path)
    spec = default_spec("deepconvlstm", 1, 1, 2)
    first = run_ablation(spec, tiny_ds, TINY, folds=["S0"], store=store)
    calls = []
    again = run_ablation(spec, tiny_ds, TINY, folds=["S0"], store=CellStore(tmp_path),
                         on_cell=lambda *a: calls.append(a))
    assert calls == [] and again.to_json() == first.to_json()
    # dropping one cell file reruns exactly that cell
    next(iter(sorted(tmp_path.glob("lstm__*.json")))).unlink()
    run_ablation(spec, tiny_ds, TINY, folds=["S0"], store=CellStore(tmp_path), on_cell=lambda *a: calls.append(a))
    assert [c[0].config_id for c in calls] == ["lstm"]


def test_failed_cell_is_recorded_and_study_continues(tiny_ds):
    # a held-out group that does not exist makes every cell fail without aborting
    study = run_ablation(default_spec("deepconvlstm", 1, 1, 2), tiny_ds, TINY, folds=["S0", "S9"])
    failed = [c for c in study.cells if c.status == "failed"]
    assert len(failed) == 3 and all("S9" in c.error for c in failed)
    assert all(r.n_ok == 1 and r.n_failed == 1 for r in study.aggregate())
