import pytest

from mxfontpp.ablation import COLUMNS, TABLE, AblationTable, ordering_holds, run_ablation
from mxfontpp.config import TrainConfig


def filled(values):
    table = AblationTable()
    for variant, seed, l1, ssim in values:
        table.add(variant, seed, {c: (l1 if c.endswith("l1") else ssim if c.endswith("ssim") else 0.0) for c in COLUMNS})
    return table


def test_means_and_text():
    table = filled([("full", 0, 0.1, 0.5), ("full", 1, 0.3, 0.7), ("no_hae", 0, 0.4, 0.2)])
    assert table.means()["full"]["ufuc_l1"] == pytest.approx(0.2)
    lines = table.to_text().splitlines()
    assert lines[0].split("\t") == ["variant", "seed", *COLUMNS]
    assert lines[-2].startswith("full\tmean\t0.200000")
    assert len(lines) == 1 + 3 + 2


def test_ordering_uses_seed_means():
    # seed 1 alone breaks the order; the seed average does not
    table = filled([("full", 0, 0.1, 0.6), ("full", 1, 0.3, 0.4), ("no_csh", 0, 0.25, 0.45), ("no_csh", 1, 0.25, 0.45)])
    assert ordering_holds(table) == {"no_csh": True}
    worse = filled([("full", 0, 0.3, 0.6), ("no_hae", 0, 0.2, 0.5)])
    assert ordering_holds(worse) == {"no_hae": False}


def test_small_ablation_runs_and_reuses(tmp_path, default_data):
    base = TrainConfig(steps=2, batch_size=2, data_dir=str(default_data.root))
    table = run_ablation(base, tmp_path, seeds=[0], data=default_data)
    assert [(v, s) for v, s, _ in table.rows] == [("full", "0"), ("no_hae", "0"), ("no_csh", "0")]
    assert (tmp_path / TABLE).exists()
    assert (tmp_path / "no_hae_s0" / "eval" / "ufuc_pairs.tsv").exists()
    with pytest.raises(FileExistsError):
        run_ablation(base, tmp_path, seeds=[0], data=default_data)
    stamp = (tmp_path / "full_s0" / "ckpt_000002.mxpp").stat().st_mtime_ns
    (tmp_path / TABLE).unlink()
    again = run_ablation(base, tmp_path, seeds=[0], variants=["full"], data=default_data)
    assert (tmp_path / "full_s0" / "ckpt_000002.mxpp").stat().st_mtime_ns == stamp
    assert again.rows[0][2] == table.rows[0][2]
