"""Command-line harness: synthetic experiments, fitting user matrices, and
spectral diagnostics.  Results are written as CSV/JSON plus rendered figures.

Exit codes: 0 success (possibly with warnings), 2 usage or I/O error,
3 internal numeric failure.  ``EBPCA_THREADS`` caps the seed-level worker
count for ``simulate``.
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import click
import numpy as np

from . import __version__, amp, plots, rmt
from .exceptions import EBPCAError, ValidationError
from .io import MatrixIOError, read_matrix, standardize_rows
from .model import PriorSpec, SpikedConfig, alignment, generate_instance, subspace_distance

METHODS = ("pca", "ebpca", "ebpca_marginal", "oracle", "vb")

CONFIG_SCHEMA = {
    # key: (converter, default)
    "n": (int, 2000),
    "d": (int, 4000),
    "k": (int, 1),
    "s": (str, "2.0"),
    "prior_u": (str, "two_point"),
    "prior_v": (str, "two_point"),
    "methods": (str, "pca,ebpca"),
    "iters": (int, 10),
    "seeds": (int, 10),
    "base_seed": (int, 0),
    "out": (str, "."),
    "support_cap": (int, 2000),
    "npmle_tol": (float, 1e-7),
    "npmle_max_iter": (int, 500),
}


def parse_config(path) -> dict:
    """Parse a flat key=value config file; unknown keys are rejected."""
    cfg = {key: default for key, (_, default) in CONFIG_SCHEMA.items()}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected key=value")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in CONFIG_SCHEMA:
            raise ValidationError(f"{path}:{lineno}: unknown key {key!r}")
        conv = CONFIG_SCHEMA[key][0]
        try:
            cfg[key] = conv(value)
        except ValueError as exc:
            raise ValidationError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    return cfg


def parse_prior(text: str, k: int) -> PriorSpec:
    """Parse a prior string like ``two_point`` or ``point_normal:0.1,10``."""
    name, _, args = text.partition(":")
    name = name.strip()
    kwargs = {}
    if name == "point_normal" and args:
        parts = [float(x) for x in args.split(",")]
        if len(parts) != 2:
            raise ValidationError("point_normal takes epsilon,spike_var")
        kwargs = {"epsilon": parts[0], "spike_var": parts[1]}
    elif args:
        raise ValidationError(f"prior {name!r} takes no parameters")
    return PriorSpec(kind=name, dim=k, **kwargs)


def _run_methods_for_seed(args) -> list:
    """Run every requested method on the shared instance for one seed."""
    cfg, seed = args
    k = cfg["k"]
    signals = [float(x) for x in cfg["s"].split(",")]
    prior_u = parse_prior(cfg["prior_u"], k)
    prior_v = parse_prior(cfg["prior_v"], k)
    mcfg = SpikedConfig(n=cfg["n"], d=cfg["d"], k=k, signals=tuple(signals), seed=seed)
    inst = generate_instance(mcfg, prior_u, prior_v)
    truth = (inst.U, inst.V)
    y_hash = hashlib.sha256(np.ascontiguousarray(inst.Y).tobytes()).hexdigest()

    rows = []
    warnings = []
    for method in cfg["methods"].split(","):
        method = method.strip()
        t0 = time.perf_counter()
        if method == "pca":
            Y, _ = rmt.normalize(inst.Y, k)
            spec = rmt.top_k_svd(Y, k)
            entry = {"t": 0}
            amp._record_accuracy(entry, spec.F, spec.G, truth)
            history = [entry]
            res_warn = []
        elif method in ("ebpca", "ebpca_marginal"):
            res = amp.run_ebpca(
                inst.Y, k, T=cfg["iters"], truth=truth,
                marginal=(method == "ebpca_marginal"),
                support_cap=cfg["support_cap"], npmle_tol=cfg["npmle_tol"],
                npmle_max_iter=cfg["npmle_max_iter"],
            )
            history, res_warn = res.history, res.warnings
        elif method == "oracle":
            res = amp.run_oracle_bayes_amp(
                inst.Y, k, cfg["iters"], prior_u, prior_v, signals, truth=truth
            )
            history, res_warn = res.history, res.warnings
        elif method == "vb":
            if k != 1:
                raise ValidationError("method 'vb' supports k=1 only")
            res = amp.run_mean_field_vb(
                inst.Y, T=cfg["iters"], truth=truth,
                support_cap=cfg["support_cap"], npmle_tol=cfg["npmle_tol"],
                npmle_max_iter=cfg["npmle_max_iter"],
            )
            history, res_warn = res.history, res.warnings
        else:
            raise ValidationError(f"unknown method {method!r}; choose from {METHODS}")
        wall = time.perf_counter() - t0
        warnings.extend(f"seed {seed} {method}: {w}" for w in res_warn)
        for entry in history:
            if "align_v" not in entry:
                continue
            rows.append(
                {
                    "method": method,
                    "seed": seed,
                    "iteration": entry["t"],
                    "align_u": entry["align_u"],
                    "align_v": entry["align_v"],
                    "dist_u": entry["dist_u"],
                    "dist_v": entry["dist_v"],
                    "wall_time": wall,
                }
            )
    return [rows, y_hash, warnings]


def _fmt(x: float) -> str:
    return f"{x:.10g}"


def _write_results_csv(path, rows, k):
    cols = ["method", "seed", "iteration"]
    cols += [f"align_u{i + 1}" for i in range(k)] + [f"align_v{i + 1}" for i in range(k)]
    cols += ["dist_u", "dist_v", "wall_time_s"]
    lines = [",".join(cols)]
    for r in rows:
        vals = [r["method"], str(r["seed"]), str(r["iteration"])]
        vals += [_fmt(a) for a in r["align_u"]] + [_fmt(a) for a in r["align_v"]]
        vals += [_fmt(r["dist_u"]), _fmt(r["dist_v"]), f"{r['wall_time']:.3f}"]
        lines.append(",".join(vals))
    Path(path).write_text("\n".join(lines) + "\n")


def _mean_sd(values) -> str:
    arr = np.asarray(values, dtype=float)
    sd = arr.std(ddof=1) if arr.size > 1 else 0.0
    return f"{arr.mean():.3f}({sd:.3f})"


def _write_summary_csv(path, rows, k):
    """Final-iteration mean(sd) per method, paper-table style."""
    by_method = {}
    for r in rows:
        by_method.setdefault(r["method"], []).append(r)
    lines = [
        "method,"
        + ",".join(f"align_u{i + 1}" for i in range(k))
        + ","
        + ",".join(f"align_v{i + 1}" for i in range(k))
        + ",dist_u,dist_v"
    ]
    for method in sorted(by_method):
        rs = by_method[method]
        t_final = max(r["iteration"] for r in rs)
        fin = [r for r in rs if r["iteration"] == t_final]
        vals = [method]
        for i in range(k):
            vals.append(_mean_sd([abs(r["align_u"][i]) for r in fin]))
        for i in range(k):
            vals.append(_mean_sd([abs(r["align_v"][i]) for r in fin]))
        vals.append(_mean_sd([r["dist_u"] for r in fin]))
        vals.append(_mean_sd([r["dist_v"] for r in fin]))
        lines.append(",".join(vals))
    Path(path).write_text("\n".join(lines) + "\n")


def _n_workers(n_seeds: int) -> int:
    env = os.environ.get("EBPCA_THREADS")
    cap = int(env) if env else 1
    return max(1, min(cap, n_seeds, os.cpu_count() or 1))


def cmd_simulate(config_path) -> int:
    cfg = parse_config(config_path)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "figures").mkdir(exist_ok=True)
    seeds = [cfg["base_seed"] + i for i in range(cfg["seeds"])]
    for m in cfg["methods"].split(","):
        if m.strip() not in METHODS:
            raise ValidationError(f"unknown method {m.strip()!r}; choose from {METHODS}")
    jobs = [(cfg, seed) for seed in seeds]
    workers = _n_workers(len(seeds))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(_run_methods_for_seed, jobs))
    else:
        outputs = [_run_methods_for_seed(job) for job in jobs]

    rows = [r for rows_i, _, _ in outputs for r in rows_i]
    hashes = {str(seed): h for seed, (_, h, _) in zip(seeds, outputs)}
    warnings = [w for _, _, ws in outputs for w in ws]
    k = cfg["k"]
    _write_results_csv(out / "results.csv", rows, k)
    _write_summary_csv(out / "summary.csv", rows, k)
    manifest = {
        "version": __version__,
        "config": cfg,
        "seeds": seeds,
        "instance_sha256": hashes,
        "warnings": warnings,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    curves = {}
    for method in sorted({r["method"] for r in rows}):
        by_t = {}
        for r in rows:
            if r["method"] != method:
                continue
            metric = abs(r["align_v"][0]) if k == 1 else 1.0 - r["dist_v"]
            by_t.setdefault(r["iteration"], []).append(metric)
        ts = sorted(by_t)
        mean = [float(np.mean(by_t[t])) for t in ts]
        sd = [float(np.std(by_t[t], ddof=1)) if len(by_t[t]) > 1 else 0.0 for t in ts]
        curves[method] = (ts, mean, sd)
    ylabel = "alignment |<v, truth>|" if k == 1 else "1 - subspace distance (V)"
    plots.plot_accuracy(curves, out / "figures" / "accuracy.png", ylabel=ylabel)
    for w in warnings:
        click.echo(f"warning: {w}", err=True)
    click.echo(f"wrote {out / 'results.csv'}, {out / 'summary.csv'}, {out / 'manifest.json'}")
    return 0


def cmd_fit(input_path, k, iters, fmt, standardize, out_dir) -> int:
    A = read_matrix(input_path, fmt=fmt)
    if standardize:
        A = standardize_rows(A)
    res = amp.run_ebpca(A, k, T=iters)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "figures").mkdir(exist_ok=True)
    np.savetxt(out / "U_final.csv", res.U_final, delimiter=",", fmt="%.10g")
    np.savetxt(out / "V_final.csv", res.V_final, delimiter=",", fmt="%.10g")
    hist_lines = ["t," + ",".join(
        [f"M_{i + 1}{i + 1}" for i in range(res.k)]
        + [f"Sigma_{i + 1}{i + 1}" for i in range(res.k)]
        + [f"Mbar_{i + 1}{i + 1}" for i in range(res.k)]
        + [f"Sigmabar_{i + 1}{i + 1}" for i in range(res.k)]
    )]
    for e in res.history:
        vals = [str(e["t"])]
        for key in ("M_t", "Sigma_t", "Mbar_t", "Sigmabar_t"):
            vals += [_fmt(x) for x in np.diag(e[key])]
        hist_lines.append(",".join(vals))
    (out / "history.csv").write_text("\n".join(hist_lines) + "\n")
    report = {
        "version": __version__,
        "input": str(input_path),
        "tau_hat": res.tau_hat,
        "s_hat": [float(s) for s in res.S_hat],
        "k_requested": k,
        "k_effective": res.k,
        "iterations": iters,
        "standardized_rows": bool(standardize),
        "warnings": res.warnings,
    }
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    plots.plot_pc_scatter(res.V_final, out / "figures" / "pc_scatter.png")
    for w in res.warnings[:5]:
        click.echo(f"warning: {w}", err=True)
    if len(res.warnings) > 5:
        click.echo(
            f"warning: ... {len(res.warnings) - 5} more (see report.json)", err=True
        )
    click.echo(f"wrote estimates and report to {out}")
    return 0


def cmd_diagnose(input_path, k, fmt, standardize, out_dir) -> int:
    A = read_matrix(input_path, fmt=fmt)
    if standardize:
        A = standardize_rows(A)
    Y, tau_hat = rmt.normalize(A, k)
    n, d = Y.shape
    gamma = d / n
    sv = np.linalg.svd(Y, compute_uv=False)
    lo, hi = rmt.bulk_edges(gamma)
    # Tracy-Widom-scale slack above the bulk edge for outlier detection
    threshold = hi * (1.0 + 5.0 * min(n, d) ** (-2.0 / 3.0))
    n_out = int(np.sum(sv > threshold))
    s_hat = []
    for val in sv[:n_out]:
        try:
            s_hat.append(rmt.estimate_signal(val / np.sqrt(gamma), gamma))
        except EBPCAError:
            s_hat.append(None)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "figures").mkdir(exist_ok=True)
    np.savetxt(out / "singular_values.csv", sv[:, None], delimiter=",", fmt="%.10g")
    bulk = sv[n_out:]
    counts, edges = np.histogram(bulk, bins=60)
    widths = np.diff(edges)
    dens = counts / counts.sum() / widths
    hist_lines = ["bin_left,bin_right,count,density"]
    for i in range(len(counts)):
        hist_lines.append(
            f"{_fmt(edges[i])},{_fmt(edges[i + 1])},{counts[i]},{_fmt(dens[i])}"
        )
    (out / "histogram.csv").write_text("\n".join(hist_lines) + "\n")
    xs = np.linspace(max(lo, 1e-9), hi, 400)
    mp = rmt.mp_singular_density(xs, gamma)
    (out / "mp_overlay.csv").write_text(
        "x,density\n" + "\n".join(f"{_fmt(a)},{_fmt(b)}" for a, b in zip(xs, mp)) + "\n"
    )
    report = {
        "version": __version__,
        "input": str(input_path),
        "tau_hat": tau_hat,
        "gamma": gamma,
        "bulk_edges": [lo, hi],
        "outlier_threshold": threshold,
        "n_outliers": n_out,
        "s_hat": s_hat,
        "standardized_rows": bool(standardize),
    }
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    plots.plot_spectrum(sv, gamma, n_out, out / "figures" / "spectrum.png")
    click.echo(f"{n_out} outlier(s); wrote diagnostics to {out}")
    return 0


# ----------------------------------------------------------------------
@click.group()
@click.version_option(__version__)
def main():
    """Empirical Bayes PCA toolkit."""


def _guard(fn, *args, **kwargs):
    try:
        rc = fn(*args, **kwargs)
    except (MatrixIOError, ValidationError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    except EBPCAError as exc:
        click.echo(f"numeric failure: {exc}", err=True)
        sys.exit(3)
    except (ValueError, np.linalg.LinAlgError) as exc:
        click.echo(f"numeric failure: {exc}", err=True)
        sys.exit(3)
    sys.exit(rc)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
def simulate(config_path):
    """Run synthetic spiked-model experiments from a key=value config file."""
    _guard(cmd_simulate, config_path)


@main.command()
@click.option("--input", "input_path", required=True, type=click.Path())
@click.option("--k", required=True, type=int)
@click.option("--iters", default=10, show_default=True, type=int)
@click.option("--format", "fmt", type=click.Choice(["csv", "bin"]), default=None,
              help="Input format (auto-detected by default).")
@click.option("--standardize-rows/--no-standardize-rows", default=True, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
def fit(input_path, k, iters, fmt, standardize_rows, out_dir):
    """Denoise the top-k PCs of a data matrix (rows = samples)."""
    if k < 1:
        click.echo("error: --k must be >= 1", err=True)
        sys.exit(2)
    _guard(cmd_fit, input_path, k, iters, fmt, standardize_rows, out_dir)


@main.command()
@click.option("--input", "input_path", required=True, type=click.Path())
@click.option("--k", required=True, type=int)
@click.option("--format", "fmt", type=click.Choice(["csv", "bin"]), default=None)
@click.option("--standardize-rows/--no-standardize-rows", default=True, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
def diagnose(input_path, k, fmt, standardize_rows, out_dir):
    """Spectral diagnostics: singular values, bulk histogram, MP overlay."""
    if k < 1:
        click.echo("error: --k must be >= 1", err=True)
        sys.exit(2)
    _guard(cmd_diagnose, input_path, k, fmt, standardize_rows, out_dir)


if __name__ == "__main__":
    main()
