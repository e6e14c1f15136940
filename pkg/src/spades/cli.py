"""Command-line interface: ``spades {fit,tune,study,gram-report,check-conditions}``.

Exit codes: 0 success, 2 data parse error, 3 solver did not converge,
4 invalid configuration.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .dictionary import DictionaryError, dictionary_from_config
from .experiments import StudyConfig, mixture_truth, run_study
from .io import (
    DataFormatError,
    bundled_config,
    bundled_config_names,
    load_config,
    now_iso,
    read_sample,
    write_csv,
    write_json,
)
from .objective import make_weights, mixture_L
from .optimizer import SolverError, SolverSettings, solve
from .theory import check_conditions_mixture, coherence_report, corollary2_bound, min_eigenvalue, sparsity_index
from .tuning import DEFAULT_FOLDS, TargetNotFound, cv_select

log = logging.getLogger("spades")

EXIT_PARSE, EXIT_NOCONV, EXIT_CONFIG = 2, 3, 4


class ConfigError(ValueError):
    pass


def _parse_weights(text: str | None):
    if text is None:
        return None, None
    if text.startswith("scalar:"):
        try:
            return "scalar", float(text.split(":", 1)[1])
        except ValueError:
            raise ConfigError(f"bad scalar weight {text!r}") from None
    variant = text.replace("-", "_")
    if variant not in ("simple", "bernstein", "data_driven", "mixture"):
        raise ConfigError(f"unknown weights {text!r}")
    return variant, None


def _settings(cfg: dict) -> SolverSettings:
    try:
        return SolverSettings(**cfg.get("solver", {}))
    except (TypeError, SolverError) as exc:
        raise ConfigError(f"solver settings: {exc}") from None


class Run:
    """Collects outputs and writes the manifest last."""

    def __init__(self, args, command: str):
        self.args = args
        self.command = command
        self.out = Path(args.out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.outputs: list[str] = []
        self.started = now_iso()
        self.t0 = time.perf_counter()
        self.extra: dict = {}

    def path(self, name: str) -> Path:
        self.outputs.append(name)
        return self.out / name

    def finish(self, seed=None):
        write_json(self.out / "manifest.json", {
            "command": self.command,
            "config": getattr(self.args, "config", None),
            "data": getattr(self.args, "data", None),
            "seed": seed,
            "started": self.started,
            "finished": now_iso(),
            "elapsed_seconds": time.perf_counter() - self.t0,
            "outputs": self.outputs,
            "version": __version__,
            **self.extra,
        })


def _load(args) -> tuple[dict, object]:
    cfg = load_config(args.config) if args.config else {}
    sample = read_sample(args.data) if getattr(args, "data", None) else None
    return cfg, sample


def _dictionary(cfg: dict, n: int | None):
    if "dictionary" not in cfg:
        raise ConfigError("config has no 'dictionary' section")
    try:
        return dictionary_from_config(cfg["dictionary"], n)
    except (DictionaryError, KeyError, TypeError) as exc:
        raise ConfigError(f"dictionary: {exc}") from None


def cmd_fit(args) -> int:
    cfg, sample = _load(args)
    if sample is None:
        raise ConfigError("fit needs --data")
    D = _dictionary(cfg, sample.n)
    if sample.d != D.d:
        raise ConfigError(f"data has dimension {sample.d}, dictionary expects {D.d}")
    delta = args.delta if args.delta is not None else float(cfg.get("delta", 0.1))
    variant, scalar = _parse_weights(args.weights or cfg.get("weights", "simple"))
    moments = D.empirical_moments(sample)
    try:
        weights = make_weights(D, moments, sample.n, delta, variant, scalar)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    fit = solve(moments, D.gram, weights, _settings(cfg))
    run = Run(args, "fit")
    write_json(run.path("fit.json"), fit.to_dict())
    report = coherence_report(D.gram, fit.lambda_hat, weights, delta, sample.n)
    write_json(run.path("coherence.json"), report.to_dict())
    run.finish()
    if not fit.converged:
        log.error("solver did not converge in %d sweeps", fit.sweeps)
        return EXIT_NOCONV
    return 0


def cmd_tune(args) -> int:
    cfg, sample = _load(args)
    if sample is None:
        raise ConfigError("tune needs --data")
    D = _dictionary(cfg, sample.n)
    folds = int(cfg.get("folds", DEFAULT_FOLDS))
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    sel = cv_select(sample, D, _settings(cfg), p=folds, seed=seed, with_full_path=True)
    run = Run(args, "tune")
    rows = [{"k": k, "w_k": w, "L_k": L, "penalized": P} for k, w, L, P in sel.table()]
    write_csv(run.path("tuning.csv"), rows, ["k", "w_k", "L_k", "penalized"])
    write_csv(run.path("path.csv"), [{"k": k, "w_k": w} for k, w in sel.full_path.rows()], ["k", "w_k"])
    write_json(run.path("selection.json"), {
        "k_hat": sel.k_hat, "w_final": sel.w_final, "folds": sel.folds, "seed": sel.seed,
        "bbm_fallback": sel.bbm_fallback, "fit": sel.fit.to_dict(),
    })
    run.finish(seed)
    return 0 if sel.fit.converged else EXIT_NOCONV


def _study_config(args) -> tuple[StudyConfig, str]:
    name = args.config
    if name is None:
        raise ConfigError(f"study needs --config (file or one of {bundled_config_names()})")
    raw = load_config(name) if Path(name).is_file() else bundled_config(name)
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.threads is not None:
        raw["threads"] = args.threads
    try:
        return StudyConfig.from_dict(raw), name
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"study config: {exc}") from None


CELL_COLUMNS = ["M", "n", "median", "q25", "q75", "hit_rate", "mean_k_hat", "replicates", "failed",
                "k_star", "spacing", "negative_active_rate", "negativity_flag",
                "condition_A", "condition_B", "separation"]


def cmd_study(args) -> int:
    cfg, _ = _study_config(args)
    result = run_study(cfg)
    run = Run(args, "study")
    run.extra["study"] = cfg.to_dict()
    run.extra["runtimes"] = result.runtimes
    if cfg.kind in ("identification", "separation"):
        cols = CELL_COLUMNS if cfg.kind == "identification" else ["D_min"] + CELL_COLUMNS
        write_csv(run.path("cells.csv"), result.cells, cols)
        write_csv(run.path("replicates.csv"), result.replicates)
    elif cfg.kind == "circle":
        write_csv(run.path("curve.csv"), result.curve, ["k", "w_k", "excess_loss"])
        write_csv(run.path("summary.csv"), [result.summary])
    else:
        write_csv(run.path("cells.csv"), result.cells)
        write_csv(run.path("replicates.csv"), result.replicates)
    run.finish(cfg.seed)
    return 0


def cmd_gram_report(args) -> int:
    cfg, sample = _load(args)
    D = _dictionary(cfg, sample.n if sample is not None else cfg.get("n"))
    run = Run(args, "gram-report")
    off = np.abs(D.gram - np.diag(np.diag(D.gram)))
    write_json(run.path("gram_report.json"), {
        "kind": D.kind, "M": D.M, "d": D.d,
        "kappa_M": min_eigenvalue(D.gram), "sparsity_index": sparsity_index(D.gram),
        "max_coherence": float(off.max()) if D.M > 1 else 0.0,
        "sup_norms": D.sup_norms, "l2_norms": D.l2_norms,
    })
    if args.write_gram:
        np.savetxt(run.path("gram.csv"), D.gram, delimiter=",", fmt="%.17g")
    run.finish()
    return 0


def cmd_check_conditions(args) -> int:
    cfg, _ = _load(args)
    if "truth" not in cfg or "n" not in cfg:
        raise ConfigError("check-conditions needs 'truth' and 'n' in the config")
    D = _dictionary(cfg, int(cfg["n"]))
    n = int(cfg["n"])
    delta = args.delta if args.delta is not None else float(cfg.get("delta", 0.1))
    truth = cfg["truth"]
    try:
        mt = mixture_truth(D, truth["indices"], truth.get("weights"))
    except (ValueError, KeyError, DictionaryError) as exc:
        raise ConfigError(f"truth: {exc}") from None
    lam = mt.normalized_weights
    conds = check_conditions_mixture(D, lam, n, delta)
    weights = make_weights(D, None, n, delta, "mixture")
    run = Run(args, "check-conditions")
    write_json(run.path("conditions.json"), {
        "mixture": conds.to_dict(),
        "coherence_at_truth": coherence_report(D.gram, lam, weights, delta, n).to_dict(),
        "corollary2_bound": corollary2_bound(mt.k_star, mixture_L(D.sup_norms), D.M, n, delta),
        "lambda_star": lam,
    })
    run.finish()
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spades", description="Sparse density estimation with l1-penalized L2 loss.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True):
        sp.add_argument("--config", help="YAML/JSON config file (study: file or bundled name)")
        if data:
            sp.add_argument("--data", help="delimiter-separated sample, one observation per row")
        sp.add_argument("--out-dir", default=".", help="output directory")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int)
        sp.add_argument("--weights", help="simple | bernstein | data-driven | mixture | scalar:<w>")
        sp.add_argument("--delta", type=float)

    common(sub.add_parser("fit", help="fit SPADES at fixed weights"))
    common(sub.add_parser("tune", help="GBM path + dimension-stabilized CV"))
    common(sub.add_parser("study", help="run a simulation study"), data=False)
    gr = sub.add_parser("gram-report", help="Gram diagnostics for a dictionary")
    common(gr)
    gr.add_argument("--write-gram", action="store_true")
    common(sub.add_parser("check-conditions", help="identifiability conditions for a mixture truth"), data=False)
    return p


COMMANDS = {
    "fit": cmd_fit,
    "tune": cmd_tune,
    "study": cmd_study,
    "gram-report": cmd_gram_report,
    "check-conditions": cmd_check_conditions,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except DataFormatError as exc:
        print(f"spades: data error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (ConfigError, yaml.YAMLError, FileNotFoundError, TargetNotFound) as exc:
        print(f"spades: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
