"""Experiment orchestration CLI.

Subcommands: preprocess, encode, train-eval, kernel-report, diagnostics,
and sweep (the composition).  Every run is driven by a JSON config in
which all random choices are explicitly seeded; identical configs produce
identical output files regardless of worker count.

Exit codes: 0 success, 2 input/configuration error, 3 numerical failure.

Config schema (JSON object):

  dataset            {"kind": "synthetic", "n_per_class": int,
                      "separation": float, "seed": int}
                     or {"kind": "idx", "images": path, "labels": path}
  classes            class labels, e.g. [3, 6, 8]
  n_train / n_test   split sizes
  n_sites            chain length N
  n_pulses           pulses per input
  encoding           "bottleneck" (M = n_pulses) or
                     "extended"   (M = n_sites * n_pulses)
  gammas             dephasing rates to sweep
  lambda_grid        [values] or {"min": , "max": , "points": } (log grid)
  decoding           {"kind": "tomography"} or {"kind": "time_multiplex",
                      "dt_m": float, "n_rep": int}
  measurement_noise  Gaussian sigma added to measured features (0 = ideal)
  disorder_seeds     explicit list of disorder realizations
  master_seed        seeds the split / projection / noise streams
  margin             eta for margin risks (default 1.0)
  bound              {"margin":, "confidence":, "norm_cap":} (defaults
                      1.0 / 0.05 / 1.0)
  diagnostics        {"n_inputs": int, "sample_interval": float}
  batch_size         inputs per propagation batch (default 64)
  step_scale         integrator step multiplier (default 1.0)
  out_dir            artifact directory

Measurement noise is applied at analysis time from per-input streams
derived from (master_seed, global input index); cached feature files are
always the clean ones.  The purity-identity residual is likewise a
property of the clean features and the encoded states.
"""

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__, decode, encode, kernel, pipeline, storage, train
from .dynamics import DriveSchedule, StepControl, _propagate, sample_disorder
from .errors import IntegrationError, NumericalCorruptionError, SpinKernelError
from .qcore import DensityMatrix, mean_site_negativity, von_neumann_entropy

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3


@dataclass
class ExperimentConfig:
    dataset: dict
    classes: list
    n_train: int
    n_test: int
    n_sites: int
    n_pulses: int
    gammas: list
    disorder_seeds: list
    master_seed: int
    out_dir: str
    encoding: str = "bottleneck"
    lambda_grid: object = None
    decoding: dict = field(default_factory=lambda: {"kind": "tomography"})
    measurement_noise: float = 0.0
    margin: float = 1.0
    bound: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    batch_size: int = 64
    step_scale: float = 1.0

    def __post_init__(self):
        if self.encoding not in ("bottleneck", "extended"):
            raise ValueError(f"unknown encoding {self.encoding!r}")
        if any(g < 0 for g in self.gammas):
            raise ValueError("gammas must be >= 0")
        if self.measurement_noise < 0:
            raise ValueError("measurement_noise must be >= 0")
        if not self.disorder_seeds:
            raise ValueError("disorder_seeds must be a non-empty list")
        self.decoding.setdefault("kind", "tomography")
        if self.decoding["kind"] == "time_multiplex":
            self.decoding.setdefault("dt_m", decode.DEFAULT_DT_M)
            self.decoding.setdefault("n_rep", 1)
        self.bound = {
            "margin": 1.0, "confidence": 0.05, "norm_cap": 1.0, **self.bound
        }

    @property
    def m_features(self):
        if self.encoding == "extended":
            return self.n_sites * self.n_pulses
        return self.n_pulses

    @property
    def lambdas(self):
        grid = self.lambda_grid
        if grid is None:
            grid = {"min": 1e-10, "max": 1e2, "points": 25}
        if isinstance(grid, dict):
            values = np.logspace(
                np.log10(grid["min"]), np.log10(grid["max"]), grid["points"]
            )
        else:
            values = np.asarray(grid, dtype=float)
        if np.any(values < 0):
            raise ValueError("lambda grid values must be >= 0")
        return values

    @classmethod
    def from_file(cls, path):
        with open(path) as f:
            raw = json.load(f)
        known = {k: v for k, v in raw.items() if k in cls.__dataclass_fields__}
        unknown = set(raw) - set(known)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**known)

    def preprocess_signature(self):
        return storage.content_hash(
            {
                "dataset": self.dataset,
                "classes": self.classes,
                "n_train": self.n_train,
                "n_test": self.n_test,
                "m_features": self.m_features,
                "master_seed": self.master_seed,
            }
        )

    def encode_signature(self, seed, gamma, split):
        return storage.content_hash(
            {
                "preprocess": self.preprocess_signature(),
                "n_sites": self.n_sites,
                "n_pulses": self.n_pulses,
                "encoding": self.encoding,
                "decoding": self.decoding,
                "seed": seed,
                "gamma": gamma,
                "split": split,
                "step_scale": self.step_scale,
            }
        )


def _gamma_tag(gamma):
    return f"{gamma:g}"


class Manifest:
    """Hash-stamped record of one command's outputs."""

    def __init__(self, config, command):
        self.command = command
        self.config_hash = storage.content_hash(
            {k: getattr(config, k) for k in config.__dataclass_fields__}
        )
        self.artifacts = {}
        self.started = time.time()

    def record(self, path):
        with open(path, "rb") as f:
            self.artifacts[os.path.relpath(path)] = storage.content_hash(f.read())

    def save(self, out_dir):
        payload = {
            "command": self.command,
            "config_hash": self.config_hash,
            "artifacts": self.artifacts,
            "wall_clock_s": time.time() - self.started,
            "versions": {"spinkernel": __version__, "numpy": np.__version__},
        }
        path = os.path.join(out_dir, f"manifest_{self.command}.json")
        storage.write_json(path, payload)
        return path


def _dataset_paths(config):
    return os.path.join(config.out_dir, "dataset", "projected")


def cmd_preprocess(config, workers=1):
    """Build (or reuse) the projected dataset and its split."""
    base = _dataset_paths(config)
    signature = config.preprocess_signature()
    meta = storage.sidecar_meta(base)
    if meta and meta.get("signature") == signature:
        print(f"preprocess: cache hit ({base})")
        return base
    manifest = Manifest(config, "preprocess")
    ds_cfg = config.dataset
    kind = ds_cfg.get("kind")
    if kind == "idx":
        raw = encode.load_idx(ds_cfg["images"], ds_cfg["labels"])
        train_idx, test_idx = encode.filter_and_split(
            raw, config.classes, config.n_train, config.n_test, seed=config.master_seed
        )
        projected = encode.project_and_normalize(
            raw, config.m_features, seed=config.master_seed + 1,
            train_indices=train_idx,
        )
    elif kind == "synthetic":
        projected = encode.synthetic_blobs(
            n_classes=len(config.classes),
            n_per_class=ds_cfg["n_per_class"],
            dim=config.m_features,
            separation=ds_cfg["separation"],
            seed=ds_cfg.get("seed", config.master_seed),
            labels=config.classes,
        )
        train_idx, test_idx = encode.filter_and_split(
            projected, config.classes, config.n_train, config.n_test,
            seed=config.master_seed,
        )
    else:
        raise ValueError(f"unknown dataset kind {kind!r}")
    storage.save_array(
        base,
        projected.inputs,
        meta={
            "signature": signature,
            "norm_constant": projected.norm_constant,
            "n_train": config.n_train,
            "n_test": config.n_test,
            "master_seed": config.master_seed,
            "dataset": config.dataset,
        },
    )
    storage.save_array(base + "_labels", projected.labels)
    storage.save_array(base + "_train_idx", train_idx)
    storage.save_array(base + "_test_idx", test_idx)
    for suffix in ("", "_labels", "_train_idx", "_test_idx"):
        manifest.record(base + suffix + ".bin")
    manifest.save(config.out_dir)
    print(f"preprocess: wrote {base} (n={len(projected.inputs)})")
    return base


def _load_split(config):
    base = _dataset_paths(config)
    inputs, _ = storage.load_array(base)
    labels, _ = storage.load_array(base + "_labels")
    train_idx, _ = storage.load_array(base + "_train_idx")
    test_idx, _ = storage.load_array(base + "_test_idx")
    train_idx = train_idx.astype(int)
    test_idx = test_idx.astype(int)
    return (
        inputs[train_idx],
        labels[train_idx].astype(int),
        inputs[test_idx],
        labels[test_idx].astype(int),
    )


def _features_base(config, seed, gamma, split):
    return os.path.join(
        config.out_dir, "features", f"s{seed}_g{_gamma_tag(gamma)}_{split}"
    )


def cmd_encode(config, workers=1):
    """Encode every (disorder seed, gamma) cell; failures skip the cell."""
    x_train, _, x_test, _ = _load_split(config)
    manifest = Manifest(config, "encode")
    failures = []
    for seed in config.disorder_seeds:
        for gamma in config.gammas:
            params = sample_disorder(config.n_sites, seed=seed, dephasing_rate=gamma)
            for split, xs in (("train", x_train), ("test", x_test)):
                base = _features_base(config, seed, gamma, split)
                signature = config.encode_signature(seed, gamma, split)
                meta = storage.sidecar_meta(base)
                if meta and meta.get("signature") == signature:
                    manifest.record(base + ".bin")
                    print(f"encode: cache hit s={seed} g={gamma:g} {split}")
                    continue
                t0 = time.time()
                try:
                    cell = pipeline.encode_features(
                        xs,
                        params,
                        mode=config.encoding,
                        decoding=config.decoding,
                        batch_size=config.batch_size,
                        workers=workers,
                        step_scale=config.step_scale,
                    )
                except IntegrationError as exc:
                    failures.append((seed, gamma, split, str(exc)))
                    print(f"encode: FAILED s={seed} g={gamma:g} {split}: {exc}")
                    break
                storage.save_array(
                    base,
                    cell.features,
                    meta={
                        "signature": signature,
                        "layout": cell.layout,
                        "n_sites": config.n_sites,
                        "mean_purity": float(cell.purities.mean()),
                        "mean_state_purity": cell.mean_state_purity,
                        "decoding": config.decoding,
                        "disorder_seed": seed,
                        "gamma": gamma,
                        "master_seed": config.master_seed,
                        "measurement_noise_sigma": config.measurement_noise,
                    },
                )
                storage.save_array(base + "_purities", cell.purities)
                manifest.record(base + ".bin")
                print(
                    f"encode: s={seed} g={gamma:g} {split} "
                    f"({xs.shape[0]} inputs, {time.time() - t0:.1f}s)"
                )
    manifest.save(config.out_dir)
    if failures:
        raise IntegrationError(f"{len(failures)} cell(s) failed: {failures}")


def _noise_for(config):
    return decode.MeasurementNoise(
        sigma=config.measurement_noise, seed=config.master_seed + 2
    )


def _load_cell_features(config, seed, gamma):
    """Clean cached features plus noisy copies per the config sigma."""
    out = {}
    for split, start in (("train", 0), ("test", config.n_train)):
        feats, sidecar = storage.load_array(_features_base(config, seed, gamma, split))
        noisy = decode.apply_measurement_noise_batch(
            feats, _noise_for(config), start_index=start
        )
        out[split] = {"clean": feats, "noisy": noisy, "meta": sidecar.get("meta", {})}
    return out


def _cell_kernel_report(config, seed, gamma, cell, y_train):
    feats = cell["train"]["noisy"]
    meta = cell["train"]["meta"]
    k_c = kernel.center_kernel(kernel.gram(feats))
    spec = kernel.spectrum(k_c)
    reff = kernel.effective_rank(spec)
    trace_over_n = float(np.trace(k_c.data)) / k_c.n
    layout = meta.get("layout", config.decoding["kind"])
    residual = None
    if layout == decode.TOMOGRAPHY:
        clean_kc = kernel.center_kernel(kernel.gram(cell["train"]["clean"]))
        clean_trace = float(np.trace(clean_kc.data)) / clean_kc.n / 2**config.n_sites
        residual = abs(
            clean_trace - (meta["mean_purity"] - meta["mean_state_purity"])
        )
        bound_trace = clean_trace
    else:
        bound_trace = trace_over_n
    alignments = {}
    for c in config.classes:
        y = np.where(y_train == c, 1.0, -1.0)
        alignments[str(c)] = kernel.alignment(k_c, y)
    alignments["mean"] = float(np.mean(list(alignments.values())))
    bound_inputs = kernel.BoundInputs(
        margin=config.bound["margin"],
        confidence=config.bound["confidence"],
        norm_cap=config.bound["norm_cap"],
        n_train=k_c.n,
        kernel_trace_over_n=bound_trace,
    )
    return kernel.KernelReport(
        n_train=k_c.n,
        n_sites=config.n_sites,
        layout=layout,
        eigenvalues=spec.eigenvalues,
        effective_rank=reff,
        alignments=alignments,
        kernel_trace_over_n=trace_over_n,
        purity_identity_residual=residual,
        bound_inputs=bound_inputs,
        bound_value=kernel.generalization_bound(bound_inputs),
        extra={"seed": seed, "gamma": gamma},
    )


def _ovr_margin_risk(model, feats, labels, margin):
    risks = [
        train.metrics(
            train.predict(m, feats), np.where(labels == c, 1.0, -1.0), margin
        ).margin_risk
        for c, m in zip(model.classes, model.models)
    ]
    return float(np.mean(risks))


METRICS_COLUMNS = [
    "seed", "gamma", "lambda", "train_risk", "test_risk", "margin_risk",
    "reff", "bound",
]


def cmd_train_eval(config, workers=1, bootstrap_seed=None):
    """Sweep the lambda grid per (seed, gamma); write metrics + summary CSV."""
    _, y_train, _, y_test = _load_split(config)
    lambdas = config.lambdas
    manifest = Manifest(config, "train_eval")
    rows, summary_rows = [], []
    for seed in config.disorder_seeds:
        for gamma in config.gammas:
            cell = _load_cell_features(config, seed, gamma)
            report = _cell_kernel_report(config, seed, gamma, cell, y_train)
            f_train, f_test = cell["train"]["noisy"], cell["test"]["noisy"]
            cell_rows = []
            for lam in lambdas:
                model = train.ovr_fit(f_train, y_train, reg=lam)
                train_risk = 1.0 - float(
                    np.mean(train.ovr_predict(model, f_train) == y_train)
                )
                test_risk = 1.0 - float(
                    np.mean(train.ovr_predict(model, f_test) == y_test)
                )
                margin_risk = _ovr_margin_risk(model, f_train, y_train, config.margin)
                cell_rows.append(
                    {
                        "seed": seed,
                        "gamma": gamma,
                        "lambda": lam,
                        "train_risk": train_risk,
                        "test_risk": test_risk,
                        "margin_risk": margin_risk,
                        "reff": report.effective_rank,
                        "bound": report.bound_value,
                    }
                )
            rows.extend(cell_rows)
            best = min(cell_rows, key=lambda r: r["test_risk"])
            summary_rows.append({**best, "lambda": best["lambda"]})
            best_model = train.ovr_fit(f_train, y_train, reg=best["lambda"])
            model_path = os.path.join(
                config.out_dir, "models",
                f"model_s{seed}_g{_gamma_tag(gamma)}.json",
            )
            storage.write_json(
                model_path,
                {
                    "classes": best_model.classes.tolist(),
                    "lambda": best["lambda"],
                    "layout": config.decoding["kind"],
                    "master_seed": config.master_seed,
                    "disorder_seed": seed,
                    "gamma": gamma,
                    "models": {
                        str(c): json.loads(m.to_json())
                        for c, m in zip(best_model.classes, best_model.models)
                    },
                },
            )
            manifest.record(model_path)
            print(
                f"train-eval: s={seed} g={gamma:g} best test risk "
                f"{best['test_risk']:.4f} at lambda={best['lambda']:.3g}"
            )
    metrics_path = os.path.join(config.out_dir, "metrics.csv")
    summary_path = os.path.join(config.out_dir, "summary.csv")
    _write_csv(metrics_path, METRICS_COLUMNS, rows)
    _write_csv(summary_path, METRICS_COLUMNS, summary_rows)
    manifest.record(metrics_path)
    manifest.record(summary_path)
    if bootstrap_seed is not None:
        boot_path = _bootstrap_summary(config, summary_rows, bootstrap_seed)
        manifest.record(boot_path)
    manifest.save(config.out_dir)
    return summary_rows


def _bootstrap_summary(config, summary_rows, bootstrap_seed, n_sets=10):
    """Bootstrap std of the disorder-averaged minimal test risk."""
    rng = np.random.default_rng(bootstrap_seed)
    out = []
    for gamma in config.gammas:
        risks = np.array(
            [r["test_risk"] for r in summary_rows if r["gamma"] == gamma]
        )
        means = [
            rng.choice(risks, size=risks.size, replace=True).mean()
            for _ in range(n_sets)
        ]
        out.append(
            {
                "gamma": gamma,
                "mean_min_test_risk": float(risks.mean()),
                "bootstrap_std": float(np.std(means)),
                "n_seeds": risks.size,
                "n_sets": n_sets,
            }
        )
    path = os.path.join(config.out_dir, "bootstrap.csv")
    _write_csv(path, list(out[0].keys()), out)
    return path


def cmd_kernel_report(config, workers=1):
    """Kernel diagnostics JSON + spectrum CSV per (seed, gamma)."""
    _, y_train, _, _ = _load_split(config)
    manifest = Manifest(config, "kernel_report")
    report_dir = os.path.join(config.out_dir, "kernel")
    for seed in config.disorder_seeds:
        for gamma in config.gammas:
            cell = _load_cell_features(config, seed, gamma)
            report = _cell_kernel_report(config, seed, gamma, cell, y_train)
            tag = f"s{seed}_g{_gamma_tag(gamma)}"
            json_path = os.path.join(report_dir, f"report_{tag}.json")
            storage.write_text(json_path, report.to_json())
            spec_path = os.path.join(report_dir, f"spectrum_{tag}.csv")
            _write_csv(
                spec_path,
                ["rank", "eigenvalue"],
                [
                    {"rank": i + 1, "eigenvalue": v}
                    for i, v in enumerate(report.eigenvalues)
                ],
            )
            manifest.record(json_path)
            manifest.record(spec_path)
            print(
                f"kernel-report: s={seed} g={gamma:g} reff={report.effective_rank:.2f}"
                + (
                    f" purity-residual={report.purity_identity_residual:.2e}"
                    if report.purity_identity_residual is not None
                    else ""
                )
            )
    manifest.save(config.out_dir)


def cmd_diagnostics(config, workers=1):
    """Entanglement/entropy time series during and after the encoding."""
    if config.n_sites > 5:
        raise ValueError("diagnostics guarded to n_sites <= 5 (cost)")
    x_train, _, _, _ = _load_split(config)
    n_inputs = int(config.diagnostics.get("n_inputs", 4))
    interval = float(config.diagnostics.get("sample_interval", 0.05))
    xs = x_train[:n_inputs]
    manifest = Manifest(config, "diagnostics")
    sc = StepControl(scale=config.step_scale)
    rows = []
    for gamma in config.gammas:
        samples = None
        for seed in config.disorder_seeds:
            params = sample_disorder(config.n_sites, seed=seed, dephasing_rate=gamma)
            if config.encoding == "extended":
                site_matrix = xs.reshape(len(xs), -1, config.n_sites)
                schedule = DriveSchedule(per_site_amplitudes=site_matrix[0])
            else:
                site_matrix = xs
                schedule = DriveSchedule(amplitudes=xs[0])
            t_grid = np.arange(0.0, 2 * schedule.end_time + 1e-12, interval)
            states = np.broadcast_to(
                DensityMatrix.all_down(config.n_sites).data,
                (len(xs), params.dim, params.dim),
            ).copy()
            if samples is None:
                samples = {t: {"neg": [], "ent": []} for t in t_grid}
            for idx, t in enumerate(t_grid):
                if idx:
                    states = _propagate(
                        states, params, schedule, t_grid[idx - 1], t, sc, site_matrix
                    )
                for b in range(len(xs)):
                    samples[t]["neg"].append(mean_site_negativity(states[b]))
                    samples[t]["ent"].append(von_neumann_entropy(states[b]))
        for t in sorted(samples):
            rows.append(
                {
                    "t": t,
                    "gamma": gamma,
                    "mean_negativity": float(np.mean(samples[t]["neg"])),
                    "mean_entropy": float(np.mean(samples[t]["ent"])),
                    "std_negativity": float(np.std(samples[t]["neg"])),
                    "std_entropy": float(np.std(samples[t]["ent"])),
                }
            )
        print(f"diagnostics: gamma={gamma:g} done")
    path = os.path.join(config.out_dir, "diagnostics.csv")
    _write_csv(path, list(rows[0].keys()), rows)
    manifest.record(path)
    manifest.save(config.out_dir)
    return rows


def cmd_sweep(config, workers=1, bootstrap_seed=None):
    cmd_preprocess(config, workers)
    cmd_encode(config, workers)
    cmd_train_eval(config, workers, bootstrap_seed=bootstrap_seed)
    cmd_kernel_report(config, workers)
    if config.diagnostics.get("enabled"):
        cmd_diagnostics(config, workers)


def _write_csv(path, columns, rows):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in columns})
    os.replace(tmp, path)


COMMANDS = {
    "preprocess": cmd_preprocess,
    "encode": cmd_encode,
    "train-eval": cmd_train_eval,
    "kernel-report": cmd_kernel_report,
    "diagnostics": cmd_diagnostics,
    "sweep": cmd_sweep,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="spinkernel",
        description="Noisy quantum kernel machine experiments on spin chains.",
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="JSON experiment config")
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--out", default=None, help="override config out_dir")
    parser.add_argument("--seed", type=int, default=None, help="override master seed")
    parser.add_argument(
        "--bootstrap-seed", type=int, default=None,
        help="emit bootstrap error bars for the summary (train-eval/sweep)",
    )
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = ExperimentConfig.from_file(args.config)
        if args.out is not None:
            config.out_dir = args.out
        if args.seed is not None:
            config.master_seed = args.seed
        os.makedirs(config.out_dir, exist_ok=True)
        fn = COMMANDS[args.command]
        if args.command in ("train-eval", "sweep"):
            fn(config, workers=args.workers, bootstrap_seed=args.bootstrap_seed)
        else:
            fn(config, workers=args.workers)
    except (IntegrationError, NumericalCorruptionError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, ValueError, KeyError, json.JSONDecodeError, SpinKernelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
