import csv
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from supercam.core import run_supercam
from supercam.harness import (CSV_COLUMNS, ConfigError, SweepConfig, discover_corpus, line_chart_svg, parse_budget,
                              render_outputs, run_sweep, synth_corpus)
from supercam.io import load_image, load_labels
from supercam.snic import run_snic_restricted

SMALL = dict(width=48, height=64)


@pytest.mark.parametrize("text, value", [("68k", 68_000), ("68K", 68_000), ("615kB", 615_000), ("700", 700),
                                         ("1.5M", 1_500_000), (2048, 2048)])
def test_parse_budget(text, value):
    assert parse_budget(text) == value


@pytest.mark.parametrize("text", ["", "abc", "0", "-5k", "1.0005k"])
def test_parse_budget_rejects(text):
    with pytest.raises(ValueError):
        parse_budget(text)


def test_synth_corpus_is_deterministic_and_written(tmp_path):
    a = synth_corpus(3, 7, tmp_path, **SMALL)
    b = synth_corpus(3, 7, None, **SMALL)
    for (na, ia, la), (nb, ib, lb) in zip(a, b):
        assert na == nb and np.array_equal(ia, ib) and np.array_equal(la, lb)
    for name, image, labels in a:
        assert 5 <= labels.max() + 1 <= 30
        assert np.array_equal(load_labels(tmp_path / "labels" / f"{name}.pgm"), labels)
        assert np.max(np.abs(load_image(tmp_path / "images" / f"{name}.png") - image)) <= 0.5 / 255 + 1e-12
    assert [e[0] for e in discover_corpus(tmp_path)] == [n for n, _, _ in a]


def test_synth_regions_have_distinct_colors():
    (_, image, labels), = synth_corpus(1, 0, texture_noise=0.0, **SMALL)
    colors = {tuple(image[labels == k][0]) for k in range(labels.max() + 1)}
    assert len(colors) == labels.max() + 1


@pytest.mark.parametrize("kwargs", [
    dict(budgets=["205k", "68k"]), dict(budgets=[]), dict(pipelines=()), dict(pipelines=("nope",)),
    dict(seeds=()), dict(mode="film"), dict(workers=0), dict(frames=1, mean_photons_per_pixel=2.0),
])
def test_sweep_config_validation(kwargs):
    base = dict(budgets=["1k", "2k"], corpus=".")
    base.update(kwargs)
    with pytest.raises(ConfigError):
        SweepConfig(**base).validate()


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    synth_corpus(3, 1, root, **SMALL)
    return root


def _config(corpus, out, **kw):
    base = dict(budgets=["1k", "3k"], corpus=str(corpus), seeds=(0, 1), out_dir=str(out), frames=64)
    base.update(kw)
    return SweepConfig(**base)


def test_sweep_outputs(corpus, tmp_path):
    res = run_sweep(_config(corpus, tmp_path))
    assert not res.failures
    rows = list(csv.reader(res.csv_path.open()))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert len(rows) - 1 == 3 * 3 * 2 * 2
    for r in res.rows:
        assert r.footprint_bytes <= r.budget_bytes
        if r.pipeline == "supercam":
            assert r.pixel_reads == r.realized_units
    assert all(row[CSV_COLUMNS.index("wall_ms")] == "" for row in rows[1:])
    assert {p.name for p in res.svg_paths} == {"ue.svg", "precision.svg", "recall.svg", "miou_error.svg"}
    for p in res.svg_paths:
        root = ET.parse(p).getroot()
        assert len(root.findall("{http://www.w3.org/2000/svg}polyline")) == 3
    summary = list(csv.reader(res.summary_path.open()))
    assert summary[0][:3] == ["metric", "pipeline", "budget_bytes"]
    assert len(summary) - 1 == 4 * 3 * 2


def test_sweep_bytes_independent_of_workers(corpus, tmp_path):
    a = run_sweep(_config(corpus, tmp_path / "a", pipelines=("supercam", "snic")))
    b = run_sweep(_config(corpus, tmp_path / "b", pipelines=("supercam", "snic"), workers=2))
    assert a.csv_path.read_bytes() == b.csv_path.read_bytes()
    assert a.summary_path.read_bytes() == b.summary_path.read_bytes()


def test_sweep_timing_column(corpus, tmp_path):
    res = run_sweep(_config(corpus, tmp_path, pipelines=("snic",), seeds=(0,), record_timing=True))
    assert all(r.wall_ms is not None and r.wall_ms >= 0 for r in res.rows)


def test_sweep_survives_bad_entries(corpus, tmp_path):
    bad = tmp_path / "corpus"
    (bad / "images").mkdir(parents=True)
    (bad / "labels").mkdir()
    for sub in ("images", "labels"):
        for p in (corpus / sub).iterdir():
            (bad / sub / p.name).write_bytes(p.read_bytes())
    (bad / "images" / "zz_broken.png").write_bytes(b"garbage")
    (bad / "images" / "zz_unlabeled.png").write_bytes((corpus / "images" / "synth_0000.png").read_bytes())
    res = run_sweep(_config(bad, tmp_path / "out", pipelines=("supercam",), seeds=(0,)))
    failed = {r.image for r in res.failures}
    assert failed == {"zz_broken", "zz_unlabeled"}
    assert sum(r.status == "ok" for r in res.rows) == 3 * 2
    text = res.csv_path.read_text()
    assert "error:" in text


def test_empty_corpus(tmp_path):
    with pytest.raises(ConfigError):
        run_sweep(SweepConfig(budgets=["1k"], corpus=str(tmp_path)))


def test_line_chart_is_valid_svg():
    svg = line_chart_svg("t <&>", {"a": [(1, 0.1), (2, 0.05)], "b": [(1, 0.2)]})
    root = ET.fromstring(svg)
    assert root.tag.endswith("svg")


def test_render_outputs(tmp_path):
    img = np.random.default_rng(0).uniform(0, 1, (40, 30, 3))
    paths = render_outputs(run_supercam(img, 2000), tmp_path, prefix="sc")
    assert sorted(p.name for p in paths) == ["sc_blurred.png", "sc_overlay.png", "sc_raw.png"]
    paths = render_outputs(run_snic_restricted(img, 2000), tmp_path)
    assert sorted(p.name for p in paths) == ["snic_2000_overlay.png", "snic_2000_raw.png"]
    assert load_image(paths[0]).shape == img.shape
