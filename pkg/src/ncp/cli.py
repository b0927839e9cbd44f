"""Command-line interface.

Every subcommand is driven by a JSON config file; flags can override only
the seed, the worker count, and the primary output path.  Runs are
deterministic given (config, seed), including across worker counts, and
every output file starts with a provenance line carrying the tool version,
a digest of the effective config, and the seed.

Exit codes: 0 success, 2 config error, 3 numeric failure, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


def _load_config(path: str) -> dict:
    from .errors import ConfigError

    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON: {e}") from e


def _require(config: dict, key: str, kind=None):
    from .errors import ConfigError

    if key not in config:
        raise ConfigError(f"config is missing required key {key!r}")
    value = config[key]
    if kind is not None and not isinstance(value, kind):
        raise ConfigError(f"config key {key!r} has the wrong type")
    return value


def _seed_of(config: dict) -> int:
    from .errors import ConfigError

    seed = _require(config, "seed")
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("seed must be a nonnegative integer (wall-clock seeding is refused)")
    return seed


def _apply_overrides(config: dict, args) -> dict:
    config = dict(config)
    if args.seed is not None:
        config["seed"] = args.seed
    if args.threads is not None:
        config["threads"] = args.threads
    if getattr(args, "out", None):
        config["out"] = args.out
    return config


def _gen_config(raw: dict):
    from .genmodel import GenConfig

    return GenConfig.from_dict(raw)


def _provenance(config: dict) -> str:
    from .io import provenance_line

    return provenance_line(config, _seed_of(config))


# ---------------------------------------------------------------------------
# Subcommands


def cmd_generate(config: dict) -> int:
    from .genmodel import sample_dataset
    from .io import write_dataset
    from .rng import stream

    gen = _gen_config(_require(config, "gen", dict))
    count = int(_require(config, "count"))
    out_dir = Path(_require(config, "out_dir", str))
    seed = _seed_of(config)
    out_dir.mkdir(parents=True, exist_ok=True)
    prov = _provenance(config)
    for i in range(count):
        data = sample_dataset(gen, stream(seed, "dataset", i))
        write_dataset(out_dir / f"dataset-{i:05d}.txt", data, gen, provenance=prov)
    print(f"wrote {count} dataset(s) to {out_dir}")
    return EXIT_OK


def _build_train_setup(config: dict):
    """Merge an optional named profile with explicit config sections."""
    from .errors import ConfigError
    from .nets import LrSchedule
    from .profiles import profile_config
    from .training import TrainConfig

    merged: dict = {}
    if "profile" in config:
        merged = profile_config(config["profile"])
    for key in ("gen", "model", "train"):
        if key in config:
            merged.setdefault(key, {})
            merged[key].update(config[key])
    for key in ("gen", "model", "train"):
        if key not in merged:
            raise ConfigError(f"training config needs {key!r} (directly or via a profile)")
    gen = _gen_config(merged["gen"])
    tr = merged["train"]
    cfg = TrainConfig(
        gen=gen,
        iterations=int(tr["iterations"]),
        datasets_per_batch=int(tr.get("datasets_per_batch", 48)),
        perms_per_batch=int(tr.get("perms_per_batch", 8)),
        lr=LrSchedule.from_list(tr.get("lr_schedule", [[1000, 1e-4], [None, 1e-5]])),
        diag_every=int(tr.get("diag_every", 25)),
        checkpoint_every=int(tr.get("checkpoint_every", 0)),
        window=int(tr.get("window", 100)),
        rao_blackwell=bool(tr.get("rao_blackwell", False)),
        rb_tail=int(tr.get("rb_tail", 3)),
        rb_budget=int(tr.get("rb_budget", 2000)),
        grad_clip=tr.get("grad_clip"),
        seed=_seed_of(config),
    )
    return merged["model"], cfg


def cmd_train(config: dict) -> int:
    from .io import write_checkpoint, write_table, read_checkpoint
    from .model import build_model
    from .rng import stream
    from .training import train

    model_raw, cfg = _build_train_setup(config)
    out_ckpt = Path(_require(config, "out_checkpoint", str))
    diag_path = config.get("diagnostics_out")
    prov = _provenance(config)

    if config.get("resume_from"):
        model, state = read_checkpoint(config["resume_from"])
        if state is None:
            from .errors import ConfigError

            raise ConfigError("resume checkpoint carries no optimizer state")
    else:
        model = build_model(
            point_dim=cfg.gen.dim_x,
            enc_dim=int(model_raw["enc_dim"]),
            pool_dim=int(model_raw["pool_dim"]),
            encoder_hidden=tuple(model_raw["encoder_hidden"]),
            cluster_hidden=tuple(model_raw["cluster_hidden"]),
            scorer_hidden=tuple(model_raw["scorer_hidden"]),
            rng=stream(cfg.seed, "init"),
        )
        state = None

    records = []

    def on_checkpoint(m, st):
        write_checkpoint(out_ckpt, m, st, provenance=prov)

    result = train(model, cfg, state=state, on_record=records.append, on_checkpoint=on_checkpoint)
    write_checkpoint(out_ckpt, result.model, result.state, provenance=prov)
    if diag_path:
        write_table(
            diag_path,
            ["iteration", "nll", "accuracy", "perm_variance", "seconds"],
            [[r.iteration, r.nll, r.accuracy, r.perm_variance, f"{r.seconds:.3f}"] for r in records],
            provenance=prov,
        )
    print(f"trained to iteration {result.state.iteration}; checkpoint at {out_ckpt}")
    return EXIT_OK


def cmd_sample(config: dict) -> int:
    from .errors import ConfigError
    from .io import read_checkpoint, read_dataset, write_table
    from .model import sample_many
    from .rng import stream

    model, _ = read_checkpoint(_require(config, "checkpoint", str))
    data, _ = read_dataset(_require(config, "dataset", str))
    if data.dim != model.point_dim:
        raise ConfigError(
            f"dataset dimension {data.dim} does not match checkpoint dimension {model.point_dim}"
        )
    n_samples = int(_require(config, "n_samples"))
    seed = _seed_of(config)
    workers = int(config.get("threads", 1))
    shuffle = bool(config.get("shuffle_input", False))
    traces = sample_many(
        model, data, n_samples, seed, workers=workers, shuffle_input=shuffle
    )
    rows = []
    for i, t in enumerate(traces):
        per_seed = f"{seed}:{i}"
        rows.append(
            [i, " ".join(str(v) for v in t.assignment.labels), -t.log_q, per_seed]
        )
    out = Path(_require(config, "out", str))
    write_table(out, ["sample", "assignment", "nll", "stream"], rows, provenance=_provenance(config))
    print(f"wrote {n_samples} sample(s) to {out}")
    return EXIT_OK


def cmd_exact(config: dict) -> int:
    from .errors import ConfigError
    from .genmodel import (
        Assignment,
        crp_log_prob,
        exact_conditional,
        exact_posterior,
        marginal_log_lik,
    )
    from .io import read_dataset, write_table

    data, gen = read_dataset(_require(config, "dataset", str))
    mode = _require(config, "mode", str)
    out = Path(_require(config, "out", str))
    prov = _provenance(config)
    if mode == "posterior":
        dist = exact_posterior(data, gen)
        rows = [
            [" ".join(str(v) for v in a.labels), a.k_count, p] for a, p in dist.entries
        ]
        write_table(out, ["assignment", "k", "probability"], rows, provenance=prov)
    elif mode == "conditional":
        prefix = Assignment.from_labels([int(v) for v in _require(config, "prefix", list)])
        position = int(_require(config, "position"))
        probs = exact_conditional(data, prefix, position, gen)
        rows = [[k + 1, p] for k, p in enumerate(probs)]
        write_table(out, ["candidate", "probability"], rows, provenance=prov)
    elif mode in ("crp", "marginal", "joint"):
        if "assignment" in config:
            a = Assignment.from_labels([int(v) for v in config["assignment"]])
        elif data.true_assignment is not None:
            a = data.true_assignment
        else:
            raise ConfigError(f"mode {mode!r} needs an assignment (config or dataset labels)")
        if mode == "crp":
            value = crp_log_prob(a, gen.alpha)
        elif mode == "marginal":
            value = marginal_log_lik(data, a, gen)
        else:
            value = crp_log_prob(a, gen.alpha) + marginal_log_lik(data, a, gen)
        write_table(out, ["quantity", "log_value"], [[mode, value]], provenance=prov)
    else:
        raise ConfigError(f"unknown exact mode {mode!r}")
    print(f"wrote {mode} output to {out}")
    return EXIT_OK


def cmd_gibbs(config: dict) -> int:
    import sys as _sys

    from .baselines import GibbsConfig, run_gibbs
    from .io import read_dataset, write_table

    data, gen = read_dataset(_require(config, "dataset", str))
    gcfg = GibbsConfig(
        n_sweeps=int(_require(config, "sweeps")),
        burn_in=int(config.get("burn_in", 0)),
        thinning=int(config.get("thinning", 1)),
        seed=_seed_of(config),
    )
    if gcfg.burn_in >= gcfg.n_sweeps and gcfg.n_sweeps < gcfg.thinning:
        print("warning: burn-in consumes the whole run; emitting an empty stream", file=_sys.stderr)
    run = run_gibbs(data, gen, gcfg)
    prov = _provenance(config)
    rows = [
        [i, " ".join(str(v) for v in a.labels), a.k_count]
        for i, a in enumerate(run.assignments)
    ]
    out = Path(_require(config, "out", str))
    write_table(out, ["sample", "assignment", "k"], rows, provenance=prov)
    if config.get("stats_out"):
        stats_rows = [[i, int(k)] for i, k in enumerate(run.k_trace)]
        write_table(Path(config["stats_out"]), ["sample", "k"], stats_rows, provenance=prov)
    print(f"wrote {len(rows)} Gibbs sample(s) to {out}")
    return EXIT_OK


def _figure_path(config: dict, out: Path) -> Path | None:
    if "figure" in config:
        return Path(config["figure"]) if config["figure"] else None
    return out.with_suffix(".png")


def cmd_compare(config: dict) -> int:
    from .errors import ConfigError

    mode = _require(config, "mode", str)
    if mode == "sweep":
        return _compare_sweep(config)
    if mode == "diagnostics":
        return _compare_diagnostics(config)
    if mode == "mean-k":
        return _compare_mean_k(config)
    raise ConfigError(f"unknown compare mode {mode!r}")


def _compare_sweep(config: dict) -> int:
    import numpy as np

    from .errors import ConfigError
    from .genmodel import Dataset, exact_conditional
    from .io import read_checkpoint, read_dataset, write_table
    from .model import conditional_probs, recompute_state, start_step
    from . import figures

    model, _ = read_checkpoint(_require(config, "checkpoint", str))
    data, gen = read_dataset(_require(config, "dataset", str))
    if data.true_assignment is None:
        raise ConfigError("sweep mode needs a dataset with labels")
    probe = _require(config, "probe", dict)
    start = np.asarray(probe["start"], dtype=np.float64)
    stop = np.asarray(probe["stop"], dtype=np.float64)
    count = int(probe.get("count", 101))
    if start.shape != (data.dim,) or stop.shape != (data.dim,):
        raise ConfigError("probe endpoints must have the dataset dimension")
    ts = np.linspace(0.0, 1.0, count)
    prefix = data.true_assignment
    k = prefix.k_count
    state = recompute_state(model, data, prefix.as_array())

    exact_rows = np.empty((count, k + 1))
    approx_rows = np.empty((count, k + 1))
    for i, t in enumerate(ts):
        probe_point = (1.0 - t) * start + t * stop
        extended = Dataset(np.vstack([data.points, probe_point[None, :]]))
        exact_rows[i] = exact_conditional(extended, prefix, data.n + 1, gen)
        ext_state = recompute_state(model, extended, prefix.as_array())
        start_step(ext_state, data.n + 1)
        approx_rows[i] = conditional_probs(model, ext_state, data.n + 1)
    del state

    out = Path(_require(config, "out", str))
    columns = (
        ["t"]
        + [f"x{j}" for j in range(data.dim)]
        + [f"exact_{j + 1}" for j in range(k + 1)]
        + [f"model_{j + 1}" for j in range(k + 1)]
        + ["abs_dev"]
    )
    rows = []
    for i, t in enumerate(ts):
        probe_point = (1.0 - t) * start + t * stop
        dev = float(np.abs(exact_rows[i] - approx_rows[i]).sum()) / 2.0
        rows.append(
            [t, *probe_point.tolist(), *exact_rows[i].tolist(), *approx_rows[i].tolist(), dev]
        )
    write_table(out, columns, rows, provenance=_provenance(config))
    fig_path = _figure_path(config, out)
    if fig_path is not None:
        figures.render_sweep(fig_path, ts, exact_rows, approx_rows)
        print(f"wrote sweep table to {out} and figure to {fig_path}")
    else:
        print(f"wrote sweep table to {out}")
    return EXIT_OK


def _compare_diagnostics(config: dict) -> int:
    import numpy as np

    from .io import read_table, write_table
    from .training import smoothed
    from . import figures

    columns, raw = read_table(_require(config, "diagnostics_file", str))
    window = int(config.get("window", 100))
    idx = {name: i for i, name in enumerate(columns)}
    iterations = np.array([int(r[idx["iteration"]]) for r in raw])
    nll = smoothed(np.array([float(r[idx["nll"]]) for r in raw]), window)
    acc = smoothed(np.array([float(r[idx["accuracy"]]) for r in raw]), window)
    pv = smoothed(np.array([float(r[idx["perm_variance"]]) for r in raw]), window)
    out = Path(_require(config, "out", str))
    rows = [
        [int(it), n, a, p] for it, n, a, p in zip(iterations, nll, acc, pv)
    ]
    write_table(
        out,
        ["iteration", "nll_smoothed", "accuracy_smoothed", "perm_variance_smoothed"],
        rows,
        provenance=_provenance(config),
    )
    fig_path = _figure_path(config, out)
    if fig_path is not None:
        figures.render_diagnostics(fig_path, iterations, nll, acc, pv)
        print(f"wrote smoothed diagnostics to {out} and figure to {fig_path}")
    else:
        print(f"wrote smoothed diagnostics to {out}")
    return EXIT_OK


def _compare_mean_k(config: dict) -> int:
    from .baselines import mean_k_experiment
    from .io import read_checkpoint, read_dataset, write_table
    from . import figures

    model, _ = read_checkpoint(_require(config, "checkpoint", str))
    data, gen = read_dataset(_require(config, "dataset", str))
    budgets = [int(b) for b in _require(config, "budgets", list)]
    rows, summary = mean_k_experiment(
        model,
        data,
        gen,
        budgets,
        repetitions=int(config.get("repetitions", 8)),
        gibbs_burn_in=int(config.get("gibbs_burn_in", 1000)),
        seed=_seed_of(config),
        workers=int(config.get("threads", 1)),
    )
    prov = _provenance(config)
    out = Path(_require(config, "out", str))
    write_table(
        out,
        ["method", "budget", "repetition", "estimate", "seconds"],
        [
            [r["method"], r["budget"], r["repetition"], r["estimate"], f"{r['seconds']:.3f}"]
            for r in rows
        ],
        provenance=prov,
    )
    if config.get("summary_out"):
        write_table(
            Path(config["summary_out"]),
            ["method", "budget", "median", "q25", "q75", "median_seconds"],
            [
                [
                    s["method"],
                    s["budget"],
                    s["median"],
                    s["q25"],
                    s["q75"],
                    f"{s['median_seconds']:.3f}",
                ]
                for s in summary
            ],
            provenance=prov,
        )
    fig_path = _figure_path(config, out)
    if fig_path is not None:
        figures.render_mean_k(fig_path, summary)
        print(f"wrote mean-k table to {out} and figure to {fig_path}")
    else:
        print(f"wrote mean-k table to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "sample": cmd_sample,
    "exact": cmd_exact,
    "gibbs": cmd_gibbs,
    "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ncp",
        description="Amortized posterior sampling for DP Gaussian mixture clustering.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("config", help="path to the JSON config for this run")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--threads", type=int, default=None, help="override the worker count")
        p.add_argument("--out", default=None, help="override the primary output path")
    return parser


def main(argv=None) -> int:
    from .errors import ConfigError, NumericError

    args = build_parser().parse_args(argv)
    try:
        config = _load_config(args.config)
        config = _apply_overrides(config, args)
        return COMMANDS[args.command](config)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as e:
        print(f"i/o failure: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
