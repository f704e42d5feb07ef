"""End-to-end check of the Python bindings on a small synthetic dataset."""

import math
import tempfile
from pathlib import Path

import tsad_py


def main():
    syn = tsad_py.generate_synthetic(t_train=600, t_test=300, seed=3)
    ds = syn.dataset
    assert ds.n_sensors == 8 and ds.train_len == 600 and ds.test_len == 300
    assert len(syn.planted_edges) > 0

    hp = tsad_py.hyperparams(width=8, hidden=8, top_k=3, ablation__no_tdr=True)
    assert hp["width"] == 8 and hp["ablation"]["no_tdr"] is True
    try:
        tsad_py.hyperparams(widht=8)
    except ValueError:
        pass
    else:
        raise AssertionError("unknown key accepted")

    ck = tsad_py.train(ds, width=8, hidden=8, top_k=3, max_epochs=2, batch_size=16)
    assert len(ck.history) == 2

    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "model.ckpt"
        ck.save(path)
        ck = tsad_py.Checkpoint.load(path)

        report = tsad_py.detect(ck, ds, beta=0.0)
        assert len(report) == 300 - 8
        assert all(math.isfinite(s) for s in report.scores)
        report.write_jsonl(Path(tmp) / "report.jsonl")
        again = tsad_py.Report.read_jsonl(Path(tmp) / "report.jsonl")
        assert again.verdicts == report.verdicts

        syn.write_dir(Path(tmp) / "data")
        assert tsad_py.Dataset.load(Path(tmp) / "data").test_len == 300

    ev = tsad_py.evaluate(report, ds)
    assert 0.0 <= ev["f1"] <= 1.0
    flagged = [i for i, v in enumerate(report.verdicts) if v == 1]
    assert flagged, "nothing flagged"
    assert len(report.root_causes(flagged[0], 3)) == 3
    unflagged = report.verdicts.index(0)
    assert report.root_causes(unflagged, 3) == []

    assert tsad_py.point_adjust([0, 0, 1, 0, 0], [0, 1, 1, 1, 0]) == [0, 1, 1, 1, 0]
    fit = tsad_py.pot_threshold([float(i % 97) for i in range(1000)])
    assert fit["threshold"] >= fit["init_level"]
    print("python smoke test passed:", {k: ev[k] for k in ("precision", "recall", "f1")})


if __name__ == "__main__":
    main()
