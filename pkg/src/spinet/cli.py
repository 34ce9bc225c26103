"""Command-line entry point: ``spinet <command> [options]``.

Commands: enumerate, identify, initialize, steady-states, validate.
A JSON config supplies defaults; command-line flags override it.
Exit codes: 0 success, 1 failed validation checks, 2 bad configuration,
3 numerical instability.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .adaptive import InitializationConfig, run_initialization
from .artifacts import MAX_CSV_ROWS, write_csv, write_json, write_manifest
from .estimator import IdentificationConfig, run_identification
from .graphs import (
    CHAIN5_IDENT,
    CHAIN5_INIT,
    PENTAGON_SYMMETRIC,
    N_MAX_LIMIT,
    RootedGraph,
    chain,
    enumerate_graphs,
)
from .sme import InstabilityError
from .steady import analyse_graph

log = logging.getLogger("spinet")

EXIT_OK, EXIT_CHECKS, EXIT_CONFIG, EXIT_UNSTABLE = 0, 1, 2, 3
MODES = ("enumerate", "identify", "initialize", "steady-states", "validate")
DT_GAMMA_MAX = 1e-2

PRESETS = {
    "chain5-init": CHAIN5_INIT,
    "chain5-ident": CHAIN5_IDENT,
    "pentagon": PENTAGON_SYMMETRIC,
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    mode: str = "validate"
    n_max: int = 3
    true_graph: dict | None = None  # {"edges": [[j, k], ...], "couplings": [...]} or {"preset": name}
    nominal_lambda: float = 1.0
    gamma: float = 1.0
    dt: float = 1e-3
    horizon: float | None = None  # per-mode default when unset
    n_paths: int | None = None
    seed: int = 0
    output_dir: str | None = None
    record_every: int = 10
    full_resolution: bool = False
    workers: int | None = None

    @classmethod
    def from_json(cls, path: str | Path) -> ExperimentConfig:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        return cls(**doc)

    def resolved(self) -> ExperimentConfig:
        """Copy with per-mode defaults filled in, validated."""
        cfg = ExperimentConfig(**asdict(self))
        if cfg.mode not in MODES:
            raise ConfigError(f"unknown mode {cfg.mode!r}; expected one of {MODES}")
        if cfg.horizon is None:
            cfg.horizon = 5.0 if cfg.mode == "identify" else 10.0
        if cfg.n_paths is None:
            cfg.n_paths = 50 if cfg.mode == "identify" else 40
        if cfg.output_dir is None:
            cfg.output_dir = str(Path("runs") / cfg.mode)
        if cfg.full_resolution:
            cfg.record_every = 1
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if not self.gamma > 0:
            raise ConfigError("gamma must be positive")
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if self.dt * self.gamma > DT_GAMMA_MAX:
            raise ConfigError(f"dt*gamma = {self.dt * self.gamma:g} exceeds the bound {DT_GAMMA_MAX:g}")
        if self.n_paths is not None and self.n_paths < 1:
            raise ConfigError("n_paths must be >= 1")
        if self.horizon is not None and not self.horizon > 0:
            raise ConfigError("horizon must be positive")
        if not 1 <= self.n_max <= N_MAX_LIMIT:
            raise ConfigError(f"n_max must be in 1..{N_MAX_LIMIT}")
        if self.record_every < 1:
            raise ConfigError("record_every must be >= 1")
        if not self.nominal_lambda > 0:
            raise ConfigError("nominal_lambda must be positive")
        if self.true_graph is not None:
            self.graph()

    def graph(self, default: RootedGraph | None = None) -> RootedGraph:
        spec = self.true_graph
        if spec is None:
            if default is None:
                raise ConfigError("a true_graph is required for this mode")
            return default
        if "preset" in spec:
            try:
                return PRESETS[spec["preset"]]
            except KeyError:
                raise ConfigError(f"unknown preset {spec['preset']!r}; choose from {sorted(PRESETS)}") from None
        try:
            return RootedGraph.from_edges(spec.get("edges", []), spec.get("couplings"), n_nodes=spec.get("n_nodes"))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid true_graph: {exc}") from exc


def _parse_graph_arg(text: str) -> dict:
    if text in PRESETS:
        return {"preset": text}
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"--graph must be a preset name or JSON: {exc}") from exc
    if isinstance(doc, list):
        doc = {"edges": doc}
    if not isinstance(doc, dict):
        raise ConfigError("--graph JSON must be an object or an edge list")
    return doc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spinet", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="mode", required=True)
    for mode in MODES:
        s = sub.add_parser(mode)
        s.add_argument("--config", help="JSON config file (flags override)")
        s.add_argument("--seed", type=int)
        s.add_argument("--paths", type=int, dest="n_paths")
        s.add_argument("--dt", type=float)
        s.add_argument("--horizon", type=float)
        s.add_argument("--out", dest="output_dir")
        s.add_argument("--n-max", type=int, dest="n_max")
        s.add_argument("--gamma", type=float)
        s.add_argument("--lambda", type=float, dest="nominal_lambda", help="nominal coupling of the model bank")
        s.add_argument(
            "--graph",
            help=f"true graph: preset ({', '.join(sorted(PRESETS))}) or JSON "
            '(\'{"edges": [[1,2],[2,3]], "couplings": [1.0, 0.8]}\' or a bare edge list)',
        )
        s.add_argument("--full-resolution", action="store_true", default=None, help="do not downsample CSVs")
        s.add_argument("--workers", type=int, help="process pool size (env SPINET_THREADS also caps it)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    cfg.mode = args.mode
    for name in ("seed", "n_paths", "dt", "horizon", "output_dir", "n_max", "gamma", "nominal_lambda", "full_resolution", "workers"):
        val = getattr(args, name, None)
        if val is not None:
            setattr(cfg, name, val)
    if args.graph is not None:
        cfg.true_graph = _parse_graph_arg(args.graph)
    return cfg.resolved()


# ---- commands --------------------------------------------------------------


def _echo(cfg: ExperimentConfig) -> dict:
    # where the files went is recorded in the manifest, not in the artifacts
    d = asdict(cfg)
    d.pop("output_dir")
    return d


def cmd_enumerate(cfg: ExperimentConfig, out: Path) -> list[Path]:
    cat = enumerate_graphs(cfg.n_max)
    print(f"n_max={cfg.n_max}: m={cat.m} graph classes")
    return [write_json(out / "catalog.json", cat.to_json_obj())]


def cmd_identify(cfg: ExperimentConfig, out: Path) -> list[Path]:
    cat = enumerate_graphs(cfg.n_max)
    g = cfg.graph(default=chain([cfg.nominal_lambda] * (cfg.n_max - 1)) if cfg.n_max > 1 else RootedGraph(1))
    icfg = IdentificationConfig(
        n_max=cfg.n_max,
        nominal_lambda=cfg.nominal_lambda,
        gamma=cfg.gamma,
        dt=cfg.dt,
        horizon=cfg.horizon,
        n_paths=cfg.n_paths,
        seed=cfg.seed,
        record_every=cfg.record_every,
        workers=cfg.workers,
    )
    res = run_identification(g, cat, icfg)
    max_rows = None if cfg.full_resolution else MAX_CSV_ROWS
    header = ["t"] + [f"p_{i}" for i in range(1, cat.m + 1)]
    files = [
        write_csv(out / "probabilities.csv", header, [res.times] + list(res.mean_probs.T), max_rows),
    ]
    summary = res.summary()
    summary["config_echo"] = _echo(cfg)
    summary["true_graph"] = g.to_dict()
    summary["n_ok_paths"] = len(res.final_probs)
    files.append(write_json(out / "summary.json", summary))
    print(f"true class {res.true_class}; decision {res.decision}; top-2 {res.top2} gap {res.top2_gap:.4f}")
    if res.excluded_paths:
        print(f"warning: {len(res.excluded_paths)} path(s) excluded after numerical failure", file=sys.stderr)
    return files


def cmd_initialize(cfg: ExperimentConfig, out: Path) -> list[Path]:
    g = cfg.graph(default=CHAIN5_INIT)
    icfg = InitializationConfig(
        gamma=cfg.gamma,
        dt=cfg.dt,
        horizon=cfg.horizon,
        n_paths=cfg.n_paths,
        seed=cfg.seed,
        record_every=cfg.record_every,
        workers=cfg.workers,
    )
    recs = run_initialization(g, icfg)
    max_rows = None if cfg.full_resolution else MAX_CSV_ROWS
    files = []
    for r in recs:
        name = f"path_{r.path:04d}.csv"
        files.append(write_csv(out / "fidelity" / name, ["t", "fidelity", "cost", "theta", "delta"],
                               [r.times, r.fidelity, r.cost, r.theta, r.delta], max_rows))
        # measurement record: Y increments summed over each recording interval
        n_rec = len(r.times) - 1
        dy = r.dY[: n_rec * cfg.record_every].reshape(n_rec, cfg.record_every).sum(axis=1)
        files.append(write_csv(out / "record" / name, ["t", "dY", "fidelity", "cost"],
                               [r.times[1:], dy, r.fidelity[1:], r.cost[1:]], max_rows))
    ok = [r for r in recs if r.error is None]
    finals = np.array([r.final_fidelity for r in ok])
    summary = {
        "config_echo": _echo(cfg),
        "graph": g.to_dict(),
        "n_paths": len(recs),
        "failed_paths": [{"path": r.path, "error": r.error} for r in recs if r.error],
        "final_fidelity_quantiles": {
            str(q): float(np.quantile(finals, q)) for q in (0.0, 0.05, 0.25, 0.5, 0.75, 0.95, 1.0)
        } if len(finals) else {},
        "fraction_final_above_0.95": float(np.mean(finals >= 0.95)) if len(finals) else 0.0,
    }
    files.append(write_json(out / "summary.json", summary))
    print(f"{len(ok)}/{len(recs)} paths ok; median final fidelity {np.median(finals):.4f}" if len(finals) else "all paths failed")
    if not ok:
        raise InstabilityError("every initialization path failed")
    return files


def cmd_steady(cfg: ExperimentConfig, out: Path) -> list[Path]:
    g = cfg.graph(default=PENTAGON_SYMMETRIC)
    rep = analyse_graph(g)
    print(f"{len(rep.states)} pure steady state(s); unique target: {rep.unique_target}; witness: {rep.symmetry_witness}")
    return [write_json(out / "steady_states.json", rep.to_json_obj())]


def run_checks() -> list[tuple[str, bool, str]]:
    """Fast invariant suite: (name, passed, detail) per check."""
    from .graphs import build_hamiltonian
    from .quantum import PAULI, maximally_mixed, partial_trace_keep_first, pauli_operator, total_z
    from .steady import single_excitation_analysis

    results = []

    def check(name, fn):
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashing check is a failed check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append((name, bool(ok), detail))

    def pauli_algebra():
        worst = 0.0
        for n in (1, 2, 3):
            for site in range(1, n + 1):
                for ax in "xyz":
                    a = pauli_operator(ax, site, n)
                    worst = max(worst, np.abs(a - a.conj().T).max(), np.abs(a @ a - np.eye(2**n)).max(), abs(np.trace(a)))
        return worst <= 1e-12, f"max deviation {worst:.1e}"

    def partial_trace():
        red = partial_trace_keep_first(maximally_mixed(4))
        return np.allclose(red, np.eye(2) / 2, atol=1e-14), "Tr_{2..4}(I/16) = I/2"

    def counts():
        got = [enumerate_graphs(n).m for n in (1, 2, 3, 4)]
        return got == [1, 2, 5, 16], f"m = {got} (expected [1, 2, 5, 16])"

    def commutes():
        worst = 0.0
        for g in enumerate_graphs(4).classes:
            h = build_hamiltonian(g, 4)
            jz = total_z(4)
            worst = max(worst, np.abs(h @ jz - jz @ h).max(), np.abs(h - h.conj().T).max())
        return worst <= 1e-12, f"max |[H, J_z]| over n<=4 catalog {worst:.1e}"

    def single_excitation_block():
        an = single_excitation_analysis(PENTAGON_SYMMETRIC, (1, 5, 4, 3, 2))
        ref = np.array([[0, 2.4, 0, 0], [2.4, 0, 1.8, 0], [0, 1.8, 0, 2.4], [0, 0, 2.4, 0]])
        dev = np.abs(an.H1[::-1, ::-1] - ref).max()
        a = np.sort(an.eigenvalues / 2.4)
        roots = np.array([(-3 - np.sqrt(73)) / 8, (-3 + np.sqrt(73)) / 8])
        return dev <= 1e-12 and np.abs(a - roots).max() <= 1e-12, f"H1 deviation {dev:.1e}; a = {a.round(6).tolist()}"

    def ground_state():
        from .sme import MeasurementSetup, step_true_system

        n = 3
        rho = np.zeros((8, 8), dtype=complex)
        rho[0, 0] = 1
        h = build_hamiltonian(chain([1.0, 0.5]), n)
        nxt, _ = step_true_system(rho, h, MeasurementSetup.sigma_z_first(n), 1e-3, 0.7)
        return np.array_equal(nxt, rho), "|000> is stationary"

    def adaptive_operator():
        from .adaptive import local_operator

        c = local_operator(np.pi / 2, np.pi / 2)
        return np.allclose(c, PAULI["y"]), "(pi/2, pi/2) -> sigma^y"

    check("pauli algebra", pauli_algebra)
    check("partial trace", partial_trace)
    check("catalog counts n<=4", counts)
    check("XY Hamiltonians conserve J_z", commutes)
    check("pentagon single-excitation block", single_excitation_block)
    check("target stationary under SME", ground_state)
    check("adaptive operator", adaptive_operator)
    return results


def cmd_validate(cfg: ExperimentConfig, out: Path) -> tuple[list[Path], bool]:
    results = run_checks()
    for name, ok, detail in results:
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    all_ok = all(ok for _, ok, _ in results)
    doc = [{"check": n, "passed": ok, "detail": d} for n, ok, d in results]
    return [write_json(out / "validation.json", doc)], all_ok


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
    except (ConfigError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"config error: cannot create output directory {out}: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    status = EXIT_OK
    try:
        if cfg.mode == "enumerate":
            files = cmd_enumerate(cfg, out)
        elif cfg.mode == "identify":
            files = cmd_identify(cfg, out)
        elif cfg.mode == "initialize":
            files = cmd_initialize(cfg, out)
        elif cfg.mode == "steady-states":
            files = cmd_steady(cfg, out)
        else:
            files, ok = cmd_validate(cfg, out)
            status = EXIT_OK if ok else EXIT_CHECKS
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InstabilityError, ArithmeticError) as exc:
        print(f"numerical instability: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE

    write_manifest(out, asdict(cfg), ["spinet"] + argv, files)
    return status


if __name__ == "__main__":
    sys.exit(main())
