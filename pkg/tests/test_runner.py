import json
import shutil

import pytest

from sumofchecks.backend import MockBackend, OracleBackend, ResponseCache, Ruleset
from sumofchecks.prompting import MAIN_METHODS, Method
from sumofchecks.runner import (
    CellNotFoundError,
    ExperimentConfig,
    ManifestInvalidError,
    RunManifest,
    Runner,
    audit_trace,
    digest_dir,
    load_run,
)


def config(fixture_dir, **overrides):
    doc = json.loads((fixture_dir / "config_oracle.json").read_text())
    doc.update(overrides)
    return ExperimentConfig.from_dict(doc, fixture_dir)


def test_config_paths_resolve(fixture_dir):
    cfg = config(fixture_dir)
    assert cfg.manifest == fixture_dir / "manifest.csv"
    assert cfg.registry is None and cfg.runs == 3
    assert cfg.methods == list(MAIN_METHODS)
    assert cfg.models[0].ruleset == str(fixture_dir / "ruleset.json")


def test_plan_630_cells(fixture_dir, tmp_path):
    runner = Runner(config(fixture_dir, fraction=0.83), tmp_path / "run")
    manifest = runner.plan()
    assert len(manifest.frame_ids) == 10
    cells = list(manifest.cells())
    assert len(cells) == manifest.n_cells() == 630
    assert len(set(cells)) == 630


def test_full_scale_count(fixture_dir, tmp_path):
    manifest = Runner(config(fixture_dir), tmp_path / "run").plan()
    manifest.models = [dict(manifest.models[0], name=n) for n in ("a", "b", "c")]
    manifest.frame_ids = [f"x{i:04d}" for i in range(791)]
    assert manifest.n_cells() == 3 * 7 * 3 * 791 * 3 == 149499


def test_manifest_roundtrip(fixture_dir, tmp_path):
    manifest = Runner(config(fixture_dir), tmp_path / "run").plan()
    assert RunManifest.from_dict(json.loads(json.dumps(manifest.to_dict()))) == manifest


def test_mock_630_no_errors(fixture_dir, tmp_path):
    cfg = config(fixture_dir, fraction=0.83)
    backend = MockBackend(["verdict: yes, confidence: 0.7"])
    runner = Runner(cfg, tmp_path / "run", backends={"oracle": backend})
    results = runner.execute(runner.plan())
    assert len(results) == 630 and not any(r.error for r in results)
    # the scalar mock text has no check lines, so Sum-of-Checks sees only unparseable verdicts
    soc = [r for r in results if r.method == "sum_of_checks+fs"]
    assert all(r.score == 0.0 and len(r.parse_failures) == 5 for r in soc)
    assert (tmp_path / "run" / "parse_failures.log").read_text().count("\n") == 5 * len(soc)


def test_results_match_ruleset(fixture_dir, tmp_path):
    runner = Runner(config(fixture_dir, methods=["sum_of_checks+fs", "direct"]), tmp_path / "run")
    results = runner.execute(runner.plan())
    rules = Ruleset.load(fixture_dir / "ruleset.json")
    for r in results:
        if r.method == "direct":
            assert r.confidence == rules.confidence_for(r.frame_id, r.criterion_id, r.run_index)
        else:
            expected = [rules.verdict(r.frame_id, v.check_id, r.run_index) for v in r.verdicts]
            assert [v.verdict for v in r.verdicts] == expected
            assert r.score == round(0.2 * sum(v == "yes" for v in expected), 10)
            assert r.prediction == int(r.score > 0.5)


def test_resume_soundness(fixture_dir, tmp_path):
    cfg = config(fixture_dir, methods=["direct", "subq", "sum_of_checks+fs+llm_agg"])
    run = tmp_path / "run"
    runner = Runner(cfg, run)
    manifest = runner.plan()
    first = runner.execute(manifest)
    total_calls = runner.backends["oracle"].calls
    assert total_calls == len(first) * 2 - sum(r.method == "direct" for r in first)

    again = Runner(cfg, run)
    again.execute(manifest, resume=True)
    assert again.backends["oracle"].calls == 0

    # drop three results and their cache entries: exactly their calls are repeated
    victims = first[:1] + [r for r in first if r.method == "subq"][:1] + [r for r in first if "llm_agg" in r.method][:1]
    for r in victims:
        (run / "results" / f"{r.cell.stem}.json").unlink()
        for k in r.cache_keys:
            runner.cache.delete(k)
    third = Runner(cfg, run)
    redone = third.execute(manifest, resume=True)
    assert third.backends["oracle"].calls == sum(len(r.cache_keys) for r in victims) == 5
    assert [x.to_dict() for x in redone] == [x.to_dict() for x in first]


def test_resume_rejects_different_manifest(fixture_dir, tmp_path):
    run = tmp_path / "run"
    runner = Runner(config(fixture_dir, methods=["direct"], runs=2), run)
    runner.execute(runner.plan())
    other = Runner(config(fixture_dir, methods=["direct"], runs=3), run)
    with pytest.raises(ManifestInvalidError):
        other.execute(other.plan(), resume=True)


def test_unreadable_image_isolated(fixture_dir, tmp_path):
    (fixture_dir / "images" / "f03.png").unlink()
    runner = Runner(config(fixture_dir, methods=["direct", "sum_of_checks+fs"]), tmp_path / "run")
    results = runner.execute(runner.plan())
    bad = [r for r in results if r.error]
    assert bad and all(r.frame_id == "f03" for r in bad)
    assert len(bad) == 2 * 3 * 3
    assert all("FileNotFoundError" in r.error and r.score is None for r in bad)
    costs = json.loads((tmp_path / "run" / "costs.json").read_text())
    assert costs["oracle"]["direct"]["errored"] == 9

    # errored cells are retried on resume once the image is back
    shutil.copy(fixture_dir / "images" / "f04.png", fixture_dir / "images" / "f03.png")
    again = Runner(config(fixture_dir, methods=["direct", "sum_of_checks+fs"]), tmp_path / "run")
    assert not any(r.error for r in again.execute(again.plan(), resume=True))


def test_errored_transport_cell(fixture_dir, tmp_path):
    def flaky(payload, cfg):
        if payload.meta.get("frame_id") == "f05":
            raise RuntimeError("upstream exploded")
        return "verdict: no"

    runner = Runner(config(fixture_dir, methods=["direct"]), tmp_path / "run", backends={"oracle": MockBackend(flaky)})
    results = runner.execute(runner.plan())
    assert {r.frame_id for r in results if r.error} == {"f05"}


def test_concurrency_independent(fixture_dir, tmp_path):
    digests = []
    for workers in (1, 16):
        run = tmp_path / f"run{workers}" / "out"
        runner = Runner(config(fixture_dir, concurrency=workers, methods=["subq+fs", "sum_of_checks+fs"]), run)
        runner.execute(runner.plan())
        digests.append(digest_dir(run))
    assert digests[0] == digests[1]


def test_invalid_inputs(fixture_dir, tmp_path):
    with pytest.raises(ManifestInvalidError, match="criterion 4"):
        Runner(config(fixture_dir, criteria=[1, 4]), tmp_path / "r")
    with pytest.raises(ManifestInvalidError, match="no frames"):
        Runner(config(fixture_dir, split="val"), tmp_path / "r")
    with pytest.raises(ManifestInvalidError, match="exemplar"):
        Runner(config(fixture_dir, exemplars=None), tmp_path / "r")


def test_trace_and_lookup(fixture_dir, tmp_path):
    run = tmp_path / "run"
    runner = Runner(config(fixture_dir, methods=["sum_of_checks+fs", "direct", "sum_of_checks+fs+llm_agg"]), run)
    runner.execute(runner.plan())
    text = audit_trace(run, "f02", 1, "sum_of_checks+fs", 1)
    assert "weighted score = 0.2·" in text
    assert text.rstrip().endswith(("⇒ satisfied", "⇒ not satisfied"))
    assert "c1_4" in text and "occlusion-control" in text
    direct = audit_trace(run, "f02", 1, Method.parse("direct"), 2, model="oracle")
    assert "confidence:" in direct and "weighted" not in direct
    agg = audit_trace(run, "f02", 2, "sum_of_checks+fs+llm_agg", 1)
    assert "LLM-aggregated score" in agg
    with pytest.raises(CellNotFoundError):
        audit_trace(run, "f99", 1, "direct", 1)
    manifest, results = load_run(run)
    assert len(results) == manifest.n_cells()


def test_cache_sits_outside_run_dir(fixture_dir, tmp_path):
    run = tmp_path / "run"
    runner = Runner(config(fixture_dir, methods=["direct"]), run)
    runner.execute(runner.plan())
    assert isinstance(runner.backends["oracle"], OracleBackend)
    assert isinstance(runner.cache, ResponseCache)
    assert runner.cache.root == tmp_path / ".run-cache"
    assert not (run / "cache").exists()
