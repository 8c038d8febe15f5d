"""End-to-end command-line smoke tests (exit codes and key output lines)."""

import pytest

from asap_pool.cli import main

from test_datasets import BASE_FILES, write_fixture


def run(argv, capsys):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def write_config(tmp_path, **overrides):
    fields = dict(hidden=16, epochs=1, batch_size=16, folds=3)
    fields.update(overrides)
    path = tmp_path / "train.cfg"
    path.write_text("".join(f"{k} = {v}\n" for k, v in fields.items()))
    return str(path)


# ---------------------------------------------------------------------------
# ingest


def test_ingest_reports_statistics(tmp_path, capsys):
    write_fixture(tmp_path, "TOY", BASE_FILES)
    code, out, _ = run(["ingest", "--dir", str(tmp_path), "--name", "TOY"], capsys)
    assert code == 0
    assert "dataset TOY: 2 graphs, 2 classes" in out
    assert "mean nodes 2.50" in out


def test_ingest_check_stats_unknown_name(tmp_path, capsys):
    write_fixture(tmp_path, "TOY", BASE_FILES)
    code, out, _ = run(
        ["ingest", "--dir", str(tmp_path), "--name", "TOY", "--check-stats"], capsys
    )
    assert code == 1
    assert "no published statistics" in out


def test_ingest_check_stats_mismatch_fails(tmp_path, capsys):
    write_fixture(tmp_path, "PROTEINS", BASE_FILES)
    code, out, _ = run(
        ["ingest", "--dir", str(tmp_path), "--name", "PROTEINS", "--check-stats"],
        capsys,
    )
    assert code == 1
    assert "MISMATCH" in out
    assert "stats check: FAIL" in out


# ---------------------------------------------------------------------------
# train / sweep


def test_train_synthetic_writes_outputs(tmp_path, capsys):
    out_dir = tmp_path / "run"
    code, out, _ = run(
        [
            "train",
            "--dataset", "synthetic",
            "--synthetic-graphs", "12",
            "--config", write_config(tmp_path),
            "--out", str(out_dir),
        ],
        capsys,
    )
    assert code == 0
    assert "test_acc" in out
    assert (out_dir / "metrics.csv").is_file()
    assert (out_dir / "summary.txt").is_file()


def test_train_folds_override(tmp_path, capsys):
    code, out, _ = run(
        [
            "train",
            "--dataset", "synthetic",
            "--synthetic-graphs", "12",
            "--config", write_config(tmp_path, folds=10),
            "--folds", "3",
        ],
        capsys,
    )
    assert code == 0
    assert out.count("fold") >= 3


def test_sweep_ranks_configurations(tmp_path, capsys):
    grid = tmp_path / "grid.txt"
    grid.write_text("k = 0.5, 0.75\n")
    out_dir = tmp_path / "sweep"
    code, out, _ = run(
        [
            "sweep",
            "--dataset", "synthetic",
            "--synthetic-graphs", "12",
            "--config", write_config(tmp_path),
            "--grid", str(grid),
            "--out", str(out_dir),
        ],
        capsys,
    )
    assert code == 0
    assert "rank  config" in out
    assert "k=0.5" in out and "k=0.75" in out
    assert (out_dir / "sweep.csv").is_file()


# ---------------------------------------------------------------------------
# theory


def test_theory_optimum_path_matches_closed_form(capsys):
    code, out, _ = run(
        ["theory", "optimum", "--family", "path", "--n", "9", "--h", "2"], capsys
    )
    assert code == 0
    assert "optimum=5" in out
    assert "closed form: 5 (match)" in out


def test_theory_optimum_starlike(capsys):
    code, out, _ = run(
        ["theory", "optimum", "--family", "star", "--n", "7", "--h", "2"], capsys
    )
    assert code == 0
    assert "optimum=6" in out


def test_theory_optimum_starlike_rejects_odd_h(capsys):
    code, _, err = run(
        ["theory", "optimum", "--family", "star", "--n", "7", "--h", "3"], capsys
    )
    assert code == 2
    assert "even" in err


def test_theory_optimum_from_edge_file(tmp_path, capsys):
    edge_file = tmp_path / "edges.txt"
    edge_file.write_text("# a 4-cycle\n0 1\n1 2\n2 3\n3 0\n")
    code, out, _ = run(
        ["theory", "optimum", "--family", "file", "--h", "2", "--file", str(edge_file)],
        capsys,
    )
    assert code == 0
    assert "nodes=4 h=2 optimum=2" in out


def test_theory_optimum_file_requires_path(capsys):
    code, _, err = run(["theory", "optimum", "--family", "file", "--h", "2"], capsys)
    assert code == 2
    assert "--file" in err


def test_theory_kstar_table_passes(capsys):
    code, out, _ = run(["theory", "kstar", "--nmin", "4", "--nmax", "6"], capsys)
    assert code == 0
    assert "PASS" in out
    assert out.count("yes") == 3


def test_theory_equivariance_passes_and_shows_counterexample(capsys):
    code, out, _ = run(["theory", "equivariance", "--trials", "5"], capsys)
    assert code == 0
    assert "5/5" in out
    assert "as expected" in out


# ---------------------------------------------------------------------------
# argument errors


def test_missing_subcommand_exits_with_usage():
    with pytest.raises(SystemExit) as excinfo:
        main([])
    assert excinfo.value.code == 2


def test_unknown_subcommand_exits_with_usage():
    with pytest.raises(SystemExit) as excinfo:
        main(["frobnicate"])
    assert excinfo.value.code == 2


def test_train_requires_dataset():
    with pytest.raises(SystemExit) as excinfo:
        main(["train"])
    assert excinfo.value.code == 2
