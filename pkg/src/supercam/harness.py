"""Corpus generation, budget sweeps and report output."""

import csv
import io as _io
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from . import io
from .core import SuperpixelSet, gaussian_blur, nearest_fill, run_supercam
from .metrics import boundary_map, evaluate
from .snic import run_snic_restricted
from .spad import SensorConfig

log = logging.getLogger(__name__)

PIPELINES = ("supercam", "snic", "snic_blur")
CSV_COLUMNS = ("image", "pipeline", "budget_bytes", "realized_units", "seed", "ue", "precision", "recall",
               "miou_error", "abs_rel", "delta1", "footprint_bytes", "wall_ms", "status")
PLOTTED_METRICS = ("ue", "precision", "recall", "miou_error")
IMAGE_SUFFIXES = (".png", ".ppm", ".pgm")
LABEL_SUFFIXES = (".pgm", ".png", ".csv")
SPS_HEADER_BYTES = 16


def parse_budget(text):
    """``"68k"`` -> 68000, ``"1.5M"`` -> 1500000, ``"700"`` -> 700. Decimal units."""
    if isinstance(text, (int, np.integer)):
        return int(text)
    s = str(text).strip().lower().removesuffix("b")
    mult = 1
    if s.endswith("k"):
        mult, s = 1000, s[:-1]
    elif s.endswith("m"):
        mult, s = 1_000_000, s[:-1]
    try:
        value = float(s) * mult
    except ValueError:
        raise ValueError(f"cannot parse budget {text!r}") from None
    if value != int(value) or value <= 0:
        raise ValueError(f"budget must be a positive whole number of bytes, got {text!r}")
    return int(value)


# -- synthetic corpus ----------------------------------------------------------

def _distinct_colors(rng, n, channels, min_gap=0.08):
    colors = []
    while len(colors) < n:
        c = rng.uniform(0.05, 0.95, size=channels)
        if all(np.max(np.abs(c - o)) >= min_gap for o in colors):
            colors.append(c)
    return np.asarray(colors)


def synth_scene(rng, width=321, height=481, n_regions=None, min_regions=5, max_regions=30,
                texture_noise=0.02, channels=3):
    """One piecewise-constant Voronoi scene and its exact label map."""
    if n_regions is None:
        n_regions = int(rng.integers(min_regions, max_regions + 1))
    flat = rng.choice(width * height, size=n_regions, replace=False)
    ys, xs = np.divmod(flat, width)
    colors = _distinct_colors(rng, n_regions, channels)
    labels, image = nearest_fill(SuperpixelSet(width, height, xs, ys, colors))
    if texture_noise > 0:
        image = np.clip(image + rng.normal(0.0, texture_noise, size=image.shape), 0.0, 1.0)
    return image, labels


def synth_corpus(n, seed, out_dir=None, width=321, height=481, min_regions=5, max_regions=30,
                 texture_noise=0.02):
    """Generate ``n`` (image, ground truth) pairs.

    With ``out_dir`` the pairs are written as ``images/<id>.png`` and
    ``labels/<id>.pgm``. Returns a list of ``(id, image, labels)``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 1 <= min_regions <= max_regions:
        raise ValueError("need 1 <= min_regions <= max_regions")
    out = []
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        image, labels = synth_scene(rng, width, height, None, min_regions, max_regions, texture_noise)
        out.append((f"synth_{i:04d}", image, labels))
    if out_dir is not None:
        root = Path(out_dir)
        (root / "images").mkdir(parents=True, exist_ok=True)
        (root / "labels").mkdir(parents=True, exist_ok=True)
        for name, image, labels in out:
            io.save_image(root / "images" / f"{name}.png", image)
            io.save_labels(root / "labels" / f"{name}.pgm", labels)
    return out


# -- sweep ---------------------------------------------------------------------

class ConfigError(ValueError):
    pass


@dataclass
class SweepConfig:
    budgets: list
    corpus: str
    pipelines: tuple = ("supercam", "snic", "snic_blur")
    seeds: tuple = (0, 1, 2)
    out_dir: str = None
    mode: str = "spad"
    frames: int = 256
    mean_photons_per_pixel: float = 2.0
    compactness: float = 10.0
    workers: int = 1
    record_timing: bool = False
    zero_is_void: bool = False

    def validate(self):
        budgets = [parse_budget(b) for b in self.budgets]
        if not budgets:
            raise ConfigError("at least one budget is required")
        if any(b2 <= b1 for b1, b2 in zip(budgets, budgets[1:])):
            raise ConfigError(f"budgets must be strictly increasing, got {budgets}")
        pipelines = tuple(self.pipelines)
        if not pipelines:
            raise ConfigError("at least one pipeline is required")
        unknown = set(pipelines) - set(PIPELINES)
        if unknown:
            raise ConfigError(f"unknown pipelines {sorted(unknown)}; choose from {PIPELINES}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.mode not in ("spad", "direct"):
            raise ConfigError(f"mode must be 'spad' or 'direct', got {self.mode!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.mode == "spad":
            try:
                SensorConfig(frames=self.frames, mean_photons_per_pixel=self.mean_photons_per_pixel)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        ordered = tuple(p for p in PIPELINES if p in pipelines)
        return replace(self, budgets=budgets, pipelines=ordered, seeds=tuple(int(s) for s in self.seeds))


@dataclass
class SweepRow:
    image: str
    pipeline: str
    budget_bytes: int
    seed: int
    realized_units: int = None
    ue: float = None
    precision: float = None
    recall: float = None
    miou_error: float = None
    abs_rel: float = None
    delta1: float = None
    footprint_bytes: int = None
    wall_ms: float = None
    status: str = "ok"
    pixel_reads: int = field(default=None, repr=False)

    def sort_key(self):
        return (self.image, PIPELINES.index(self.pipeline), self.budget_bytes, self.seed)

    def csv_record(self):
        def fmt(v):
            if v is None:
                return ""
            if isinstance(v, float):
                return f"{v:.12g}"
            return str(v)
        return [fmt(getattr(self, c)) for c in CSV_COLUMNS]


@dataclass
class SweepResult:
    rows: list
    csv_path: Path = None
    summary_path: Path = None
    svg_paths: list = field(default_factory=list)

    @property
    def failures(self):
        return [r for r in self.rows if r.status != "ok"]


def discover_corpus(corpus):
    """Pair ``images/<id>.*`` with ``labels/<id>.*`` under ``corpus``."""
    root = Path(corpus)
    img_dir = root / "images" if (root / "images").is_dir() else root
    images = sorted(p for p in img_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES) if img_dir.is_dir() else []
    entries = []
    for p in images:
        gt = None
        for suf in LABEL_SUFFIXES:
            cand = root / "labels" / f"{p.stem}{suf}"
            if cand.exists():
                gt = cand
                break
        entries.append((p.stem, p, gt))
    return entries


def _metric_fields(labels, gt):
    rep = evaluate(labels, gt)
    return dict(ue=rep.ue, precision=rep.precision, recall=rep.recall, miou_error=rep.miou_error)


def _run_image(config, name, image_path, gt_path):
    rows = []
    combos = [(p, b, s) for p in config.pipelines for b in config.budgets for s in config.seeds]
    try:
        image = io.load_image(image_path)
        if gt_path is None:
            raise FileNotFoundError(f"no ground-truth label map for {name}")
        gt = io.load_labels(gt_path, shape=image.shape[:2], zero_is_void=config.zero_is_void)
    except Exception as exc:  # noqa: BLE001 - a bad corpus entry must not stop the sweep
        log.warning("skipping %s: %s", name, exc)
        return [SweepRow(name, p, b, s, status=f"error: {exc}") for p, b, s in combos]

    sensor = None
    if config.mode == "spad":
        sensor = SensorConfig(frames=config.frames, mean_photons_per_pixel=config.mean_photons_per_pixel)
    snic_cache = {}
    for pipeline, budget, seed in combos:
        row = SweepRow(name, pipeline, budget, seed)
        try:
            t0 = time.perf_counter()
            if pipeline == "supercam":
                res = run_supercam(image, budget, sensor=sensor, seed=seed, blur=True)
                elapsed = time.perf_counter() - t0
                labels = res.labels
                row.realized_units = res.report.realized_units
                row.footprint_bytes = len(res.superpixels.to_bytes()) - SPS_HEADER_BYTES
                row.pixel_reads = res.report.pixel_reads
            else:
                key = (pipeline, budget)
                if key not in snic_cache:
                    res = run_snic_restricted(image, budget, with_blur=pipeline == "snic_blur",
                                              compactness=config.compactness)
                    snic_cache[key] = (res, time.perf_counter() - t0)
                res, elapsed = snic_cache[key]
                labels = res.labels
                row.realized_units = res.report.realized_units
                row.footprint_bytes = res.report.footprint_bytes
            for k, v in _metric_fields(labels, gt).items():
                setattr(row, k, v)
            if config.record_timing:
                row.wall_ms = round(elapsed * 1000.0, 3)
        except Exception as exc:  # noqa: BLE001
            log.warning("%s/%s/%d/%d failed: %s", name, pipeline, budget, seed, exc)
            row = SweepRow(name, pipeline, budget, seed, status=f"error: {exc}")
        rows.append(row)
    return rows


def rows_to_csv(rows):
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in sorted(rows, key=SweepRow.sort_key):
        w.writerow(r.csv_record())
    return buf.getvalue()


def summarize(rows):
    """Mean, min and max of each metric per (pipeline, budget) over images and seeds."""
    out = {}
    ok = [r for r in rows if r.status == "ok"]
    for metric in PLOTTED_METRICS:
        groups = {}
        for r in ok:
            groups.setdefault((r.pipeline, r.budget_bytes), []).append(getattr(r, metric))
        for key, vals in groups.items():
            a = np.asarray(vals, dtype=np.float64)
            out[(metric,) + key] = (float(a.mean()), float(a.min()), float(a.max()), len(a))
    return out


def summary_csv(summary):
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("metric", "pipeline", "budget_bytes", "mean", "min", "max", "n"))
    for (metric, pipeline, budget), (mean, lo, hi, n) in sorted(
            summary.items(), key=lambda kv: (kv[0][0], PIPELINES.index(kv[0][1]), kv[0][2])):
        w.writerow((metric, pipeline, budget, f"{mean:.12g}", f"{lo:.12g}", f"{hi:.12g}", n))
    return buf.getvalue()


_SERIES_COLORS = {"supercam": "#1f77b4", "snic": "#d62728", "snic_blur": "#ff7f0e"}


def line_chart_svg(title, series, width=480, height=320):
    """Minimal SVG line chart; ``series`` maps name -> [(x, y), ...]."""
    pad_l, pad_r, pad_t, pad_b = 60, 110, 30, 40
    xs = [x for pts in series.values() for x, _ in pts]
    ys = [y for pts in series.values() for _, y in pts]
    x0, x1 = (min(xs), max(xs)) if xs else (0.0, 1.0)
    y0, y1 = (min(ys), max(ys)) if ys else (0.0, 1.0)
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pw, ph = width - pad_l - pad_r, height - pad_t - pad_b

    def px(x):
        return pad_l + (x - x0) / (x1 - x0) * pw

    def py(y):
        return pad_t + (1.0 - (y - y0) / (y1 - y0)) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-family="sans-serif" '
        f'font-size="14">{escape(title)}</text>',
        f'<line x1="{pad_l}" y1="{pad_t + ph}" x2="{pad_l + pw}" y2="{pad_t + ph}" stroke="black"/>',
        f'<line x1="{pad_l}" y1="{pad_t}" x2="{pad_l}" y2="{pad_t + ph}" stroke="black"/>',
        f'<text x="{pad_l + pw / 2:.1f}" y="{height - 6}" text-anchor="middle" font-family="sans-serif" '
        f'font-size="11">budget (KB)</text>',
        f'<text x="{pad_l - 6}" y="{py(y0):.1f}" text-anchor="end" font-family="sans-serif" '
        f'font-size="10">{y0:.3g}</text>',
        f'<text x="{pad_l - 6}" y="{py(y1):.1f}" text-anchor="end" font-family="sans-serif" '
        f'font-size="10">{y1:.3g}</text>',
    ]
    for x in sorted(set(xs)):
        parts.append(f'<text x="{px(x):.1f}" y="{pad_t + ph + 14}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="10">{x:g}</text>')
    for i, (name, pts) in enumerate(series.items()):
        color = _SERIES_COLORS.get(name, "#333333")
        coords = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in pts)
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{coords}">'
                     f'<title>{escape(name)}</title></polyline>')
        ly = pad_t + 12 + 16 * i
        parts.append(f'<text x="{pad_l + pw + 10}" y="{ly}" font-family="sans-serif" font-size="11" '
                     f'fill="{color}">{escape(name)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def summary_svgs(summary, pipelines):
    charts = {}
    for metric in PLOTTED_METRICS:
        series = {}
        for p in pipelines:
            pts = sorted((b / 1000.0, v[0]) for (m, pp, b), v in summary.items() if m == metric and pp == p)
            if pts:
                series[p] = pts
        charts[metric] = line_chart_svg(f"{metric} vs memory budget", series)
    return charts


def run_sweep(config):
    """Evaluate every (image, pipeline, budget, seed) combination.

    Writes ``sweep.csv``, ``summary.csv`` and one SVG per metric when
    ``config.out_dir`` is set. Output bytes do not depend on ``workers``.
    """
    config = config.validate()
    entries = discover_corpus(config.corpus)
    if not entries:
        raise ConfigError(f"corpus {config.corpus} holds no images")
    if config.workers > 1 and len(entries) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            chunks = list(pool.map(_run_image, [config] * len(entries), *zip(*entries)))
    else:
        chunks = [_run_image(config, *e) for e in entries]
    rows = sorted((r for chunk in chunks for r in chunk), key=SweepRow.sort_key)
    result = SweepResult(rows)
    if config.out_dir is not None:
        out = Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        result.csv_path = out / "sweep.csv"
        result.csv_path.write_text(rows_to_csv(rows))
        summary = summarize(rows)
        result.summary_path = out / "summary.csv"
        result.summary_path.write_text(summary_csv(summary))
        for metric, svg in summary_svgs(summary, config.pipelines).items():
            path = out / f"{metric}.svg"
            path.write_text(svg)
            result.svg_paths.append(path)
    return result


# -- rendering -----------------------------------------------------------------

def boundary_overlay(image, labels, color=(1.0, 0.0, 0.0)):
    """RGB copy of ``image`` with segment boundaries painted in ``color``."""
    img = np.asarray(image, dtype=np.float64)
    rgb = np.repeat(img[:, :, None], 3, axis=2) if img.ndim == 2 else img[:, :, :3].copy()
    rgb[boundary_map(labels)] = color
    return rgb


def render_outputs(result, out_dir, prefix=None):
    """Write the qualitative panels of one pipeline run as 8-bit PNGs.

    SuperCam runs give ``*_raw.png`` (filled) and ``*_blurred.png``; SNIC
    runs give ``*_raw.png`` and, when blurred, ``*_blurred.png``. Both add a
    boundary overlay on the raw rendering. Returns the written paths.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = result.report
    prefix = prefix or f"{report.pipeline}_{report.budget_bytes}"
    written = []

    def save(suffix, img):
        path = out / f"{prefix}_{suffix}.png"
        io.save_image(path, img)
        written.append(path)

    raw = result.raw
    if report.pipeline == "supercam":
        blurred = result.rendered if result.rendered is not raw else gaussian_blur(raw, result.kernel)
    else:
        blurred = result.rendered if report.pipeline == "snic_blur" else None
    save("raw", raw)
    if blurred is not None:
        save("blurred", blurred)
    save("overlay", boundary_overlay(raw, result.labels))
    return written


__all__ = [
    "CSV_COLUMNS", "PIPELINES", "ConfigError", "SweepConfig", "SweepResult", "SweepRow",
    "boundary_overlay", "discover_corpus", "line_chart_svg", "parse_budget", "render_outputs",
    "run_sweep", "rows_to_csv", "summarize", "synth_corpus", "synth_scene",
]
