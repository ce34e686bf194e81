import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from qnnbench.analysis import UNDEFINED
from qnnbench.datasets import write_pgm
from qnnbench.experiments import (
    ConfigError,
    DataError,
    DependencyError,
    EmptyReportError,
    ExperimentConfig,
    ResultStore,
    analyze,
    conv_grid,
    generate_data,
    load_config,
    report,
    run,
    sample_architecture,
)


def suite_config(out, **kw):
    base = dict(kind="random_suite", sizes=[50], dims=[2], n_models=3, n_seeds=2, max_epochs=3, out=str(out))
    base.update(kw)
    return ExperimentConfig(**base)


def tree_bytes(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


class TestConfig:
    def test_defaults(self):
        c = ExperimentConfig()
        assert (c.n_models, c.n_seeds, c.max_epochs) == (50, 10, 100)

    def test_hash_ignores_key_order_and_execution(self, tmp_path):
        a = load_config(None, sizes=[200, 500], family="qnn", workers=1, out="x")
        (tmp_path / "c.json").write_text(json.dumps({"family": "qnn", "sizes": [200, 500]}))
        b = load_config(tmp_path / "c.json", workers=8, out="y", resume=True)
        assert a.config_hash() == b.config_hash()
        assert a.config_hash() != load_config(None, sizes=[200, 500], family="qnn", master_seed=1).config_hash()

    def test_hash_is_stable_across_processes(self):
        code = "from qnnbench.experiments import ExperimentConfig; print(ExperimentConfig().config_hash())"
        out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True).stdout
        assert out.strip() == ExperimentConfig().config_hash()

    @pytest.mark.parametrize("bad", [{"bogus": 1}, {"sizes": [51]}, {"dims": [3]}, {"n_models": 0}])
    def test_invalid(self, bad):
        with pytest.raises(ConfigError):
            load_config(None, **bad)

    def test_unreadable_file(self, tmp_path):
        (tmp_path / "c.json").write_text("{not json")
        with pytest.raises(ConfigError):
            load_config(tmp_path / "c.json")


class TestRandomSuite:
    def test_records_and_idempotent_rerun(self, tmp_path):
        config = suite_config(tmp_path / "s")
        result = run(config)
        assert result.counts == {"total": 6, "executed": 6, "skipped": 0}
        store = ResultStore(config.out)
        assert len(store.records()) == 6
        before = tree_bytes(tmp_path / "s")
        again = run(config)
        assert again.counts["executed"] == 0
        assert tree_bytes(tmp_path / "s") == before

    def test_protocol_record_count(self):
        c = ExperimentConfig(sizes=[200], dims=[2])
        assert c.n_models * c.n_seeds * len(c.sizes) == 500

    def test_qnn_d8_qubit_counts(self):
        assert {sample_architecture("qnn", 8, 0, m).n_qubits for m in range(50)} <= {2, 4, 8}

    def test_resume_requires_existing_store(self, tmp_path):
        with pytest.raises(DependencyError):
            run(suite_config(tmp_path / "none", resume=True))

    def test_different_config_rejected(self, tmp_path):
        run(suite_config(tmp_path / "s"))
        with pytest.raises(ConfigError):
            run(suite_config(tmp_path / "s", master_seed=5))

    def test_corrupt_record_recomputed(self, tmp_path):
        config = suite_config(tmp_path / "s")
        run(config)
        store = ResultStore(config.out)
        key = sorted(store.manifest["cells"])[0]
        original = store.record_path(key).read_bytes()
        store.record_path(key).write_bytes(original[:-20])
        result = run(config.model_copy(update={"resume": True}))
        assert result.counts["executed"] == 1
        assert store.record_path(key).read_bytes() == original

    def test_orphan_record_recomputed(self, tmp_path):
        """A record written before its manifest entry (killed mid-cell) is redone, not trusted."""
        config = suite_config(tmp_path / "s")
        run(config)
        store = ResultStore(config.out)
        key = sorted(store.manifest["cells"])[-1]
        del store.manifest["cells"][key]
        store._save_manifest()
        assert run(config).counts["executed"] == 1
        assert key in ResultStore(config.out).manifest["cells"]

    def test_workers_do_not_change_results(self, tmp_path):
        run(suite_config(tmp_path / "w1", workers=1))
        run(suite_config(tmp_path / "w2", workers=2))
        assert tree_bytes(tmp_path / "w1") == tree_bytes(tmp_path / "w2")

    def test_timing_kept_out_of_store(self, tmp_path):
        log = tmp_path / "timing.jsonl"
        run(suite_config(tmp_path / "s", timing_log=str(log)))
        lines = [json.loads(line) for line in log.read_text().splitlines()]
        assert len(lines) == 6 and all(line["duration_s"] >= 0 for line in lines)
        assert not any(b"duration" in data for data in tree_bytes(tmp_path / "s").values())

    def test_failed_runs_reported(self, tmp_path):
        result = run(suite_config(tmp_path / "s", learning_rate=1e300, max_epochs=5))
        failed = [r for r in ResultStore(tmp_path / "s").records() if r.status != "ok"]
        assert result.n_failed == len(failed)

    def test_untrainable_flagged_and_excluded_from_trends(self, tmp_path):
        # model 9 sampled from master seed 1 at d=2 has an all-Z circuit
        config = suite_config(tmp_path / "q", family="qnn", n_models=10, master_seed=1, max_epochs=2)
        result = run(config)
        name = next(iter(result))
        assert result[name].excluded == ["qnn-d2-m009"]
        out = analyze(config.out)["versions"][name]
        assert out["excluded"] == ["qnn-d2-m009"]
        assert out["trends"]["n_params"]["n_points"] <= 9
        rows = (tmp_path / "q" / "tables" / f"correlation_{name}.csv").read_text().splitlines()
        flagged = [r for r in rows if r.startswith("qnn-d2-m009,")]
        assert flagged[0].endswith(",1")


class TestDataErrors:
    def test_missing_data_root(self, tmp_path, monkeypatch):
        monkeypatch.delenv("QNNBENCH_DATA_ROOT", raising=False)
        with pytest.raises(DataError):
            run(suite_config(tmp_path / "s", source="mnist"))

    def test_insufficient_images(self, mnist_root, tmp_path):
        with pytest.raises(DataError):
            run(suite_config(tmp_path / "s", source="mnist", sizes=[5000], data_root=str(mnist_root)))

    def test_gen_data(self, mnist_root, tmp_path):
        names = generate_data(suite_config(tmp_path / "g", source="mnist", sizes=[50, 100], dims=[2, 4],
                                           data_root=str(mnist_root)))
        assert names == ["mnist-pca-d2-N50", "mnist-pca-d2-N100", "mnist-pca-d4-N50", "mnist-pca-d4-N100"]
        assert (tmp_path / "g" / "data" / names[0] / "features.npy").exists()


def pgm_corpus(root: Path, rng, per_class=20, shape=(6, 6)):
    for label in (0, 1):
        (root / f"class{label}").mkdir(parents=True)
        for i in range(per_class):
            img = rng.random(shape) * 0.4 + 0.6 * label
            write_pgm(root / f"class{label}" / f"{i:03d}.pgm", img)


class TestConvSuite:
    def test_grid_enumeration(self):
        grid = conv_grid(ExperimentConfig(kind="conv_suite", filter_sizes=[3]))
        families = [f for _, f, _ in grid]
        assert families.count("qccnn") == 9 and families.count("cnn") == 6 and families.count("baseline") == 1
        assert len(conv_grid(ExperimentConfig(kind="conv_suite"))) == 2 * 15 + 1

    def test_small_run(self, tmp_path, rng):
        pgm_corpus(tmp_path / "data" / "image_corpus", rng)
        config = ExperimentConfig(kind="conv_suite", source="image_corpus", sizes=[20], n_seeds=2, max_epochs=2,
                                  filter_sizes=[2], qccnn_layers=[1], entanglements=["circular"], n_dconv=[0],
                                  biases=[True], data_root=str(tmp_path / "data"), out=str(tmp_path / "c"))
        result = run(config)
        summary = result["image_corpus-none-6x6-N20"]
        assert [m.model_id for m in summary.models] == ["baseline", "cnn-k2-d0-b1", "qccnn-k2-circular-l1"]
        table = (tmp_path / "c" / "tables" / "accuracy_vs_n.csv").read_text().splitlines()
        assert table[0] == "model_id,N,mean,variance" and len(table) == 4

    def test_hypercube_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            run(ExperimentConfig(kind="conv_suite", out=str(tmp_path / "c")))


class TestCrossDataset:
    def test_cells(self, tmp_path):
        suite = suite_config(tmp_path / "suite", sizes=[100, 200], n_models=5, n_seeds=2, max_epochs=5)
        run(suite)
        matrix = run(ExperimentConfig(kind="cross_dataset", suites=[suite.out], n_seeds=2, max_epochs=5,
                                      out=str(tmp_path / "x")))
        assert len(matrix["cells"]) == 12
        assert set(matrix["averages"]) == {f"{a}->{b}" for a in ("hypercube-none-d2-N100", "hypercube-none-d2-N200")
                                           for b in ("hypercube-none-d2-N100", "hypercube-none-d2-N200")}
        csv = (tmp_path / "x" / "tables" / "transfer.csv").read_text().splitlines()
        assert csv[0] == "source,model,target,retrained_accuracy,score" and len(csv) == 13

    @pytest.mark.slow
    def test_self_transfer(self, tmp_path):
        """Top models retrained on their own version with fresh seeds land at or above the suite average.

        Individual cells can dip below zero when one fresh seed collapses to a constant
        classifier, so the check is on the mean over the self-transfer cells.
        """
        suite = suite_config(tmp_path / "suite", sizes=[200, 500], n_models=10, n_seeds=10, max_epochs=100,
                             master_seed=1)
        summaries = run(suite)
        matrix = run(ExperimentConfig(kind="cross_dataset", suites=[suite.out], n_seeds=10, max_epochs=100,
                                      master_seed=1, out=str(tmp_path / "x")))
        own = [c for c in matrix["cells"] if c["source"] == c["target"]]
        assert len(own) == 6
        for c in own:
            target = summaries[c["target"]]
            source_mean = next(m.mean for m in target.models if f"s0-{m.model_id}" == c["model"])
            assert source_mean >= target.average
        assert np.mean([c["score"] for c in own]) >= 0

    def test_degenerate_target(self, tmp_path):
        suite = suite_config(tmp_path / "suite", n_models=1)
        run(suite)
        matrix = run(ExperimentConfig(kind="cross_dataset", suites=[suite.out], n_seeds=1, max_epochs=2,
                                      out=str(tmp_path / "x")))
        assert [c["score"] for c in matrix["cells"]] == [UNDEFINED]

    def test_missing_suite(self, tmp_path):
        with pytest.raises(DependencyError):
            run(ExperimentConfig(kind="cross_dataset", suites=[str(tmp_path / "nope")], out=str(tmp_path / "x")))

    def test_mixed_dimensions(self, tmp_path):
        run(suite_config(tmp_path / "a", dims=[2, 4], n_models=1, n_seeds=1))
        with pytest.raises(ConfigError):
            run(ExperimentConfig(kind="cross_dataset", suites=[str(tmp_path / "a")], out=str(tmp_path / "x")))


class TestReport:
    def test_single_model_summary_row(self, tmp_path):
        run(suite_config(tmp_path / "s", n_models=1, n_seeds=10))
        files = report(tmp_path / "s", "summary", tmp_path / "r")
        header, row = (tmp_path / "r" / "summary_hypercube-none-d2-N50.csv").read_text().splitlines()
        assert header == "model_id,n_seeds,mean,variance,min,max,excluded"
        assert row.startswith("dense-d2-m000,10,")
        assert len(files) == 2

    @pytest.mark.parametrize("kind", ["summary", "runs", "correlation"])
    def test_byte_identical(self, tmp_path, kind):
        run(suite_config(tmp_path / "s"))
        first = {p.name: p.read_bytes() for p in report(tmp_path / "s", kind, tmp_path / "r1")}
        second = {p.name: p.read_bytes() for p in report(tmp_path / "s", kind, tmp_path / "r2")}
        assert first == second and first

    def test_empty_selection(self, tmp_path):
        run(suite_config(tmp_path / "s", n_models=1, n_seeds=1))
        with pytest.raises(EmptyReportError):
            report(tmp_path / "s", "transfer")

    def test_not_a_store(self, tmp_path):
        with pytest.raises(DependencyError):
            report(tmp_path, "summary")

    def test_unknown_kind(self, tmp_path):
        with pytest.raises(ConfigError):
            report(tmp_path, "plots")
