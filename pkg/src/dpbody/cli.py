"""Command-line front end.

Every command reads a JSON config, runs the like-named library operation,
and writes a RunRecord (``record.json``), flat metrics (``metrics.csv``)
and a timing sidecar (``timing.json``) into ``--out``.  Wall-clock time
lives only in the sidecar so that record and CSV bytes are reproducible
given config + seed in single-threaded mode.

Exit codes: 0 success, 2 threshold or typicality-gate failure, 1 error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .admissible import AdmissibleParams, DistributionSpec, sample_dist
from .errors import ConfigError, DPBodyError, TypicalityGateError
from .extension import builtin_instances, extension_audit
from .geometry import steiner_point, project
from .harness import audit_experiment, gaussian_reference_params
from .mechanism import SampleSizeConstants
from .pipeline import (LangevinConfig, noisy_oracle_params, private_project,
                       private_quantiles, private_sample_floating_body,
                       private_steiner, PrivacyLedger)
from .quantiles import (DirectionNet, Sample, fnv1a64, floating_body,
                        query_quantiles, sphere_net, axis_net)
from .rng import make_rng
from .typical import TypicalSetConfig, check_typical, recommend_W

_COMMANDS = ("gen", "quantiles", "steiner", "project", "sample", "typical",
             "audit")


# ---- config plumbing ---------------------------------------------------------


def _load_config(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") \
            from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top-level config must be a JSON object")
    return cfg


def _require(cfg: dict, key: str, command: str):
    if key not in cfg:
        raise ConfigError(f"missing required key '{key}' for '{command}'")
    return cfg[key]


def _distribution(cfg: dict) -> DistributionSpec:
    spec = _require(cfg, "distribution", "this command")
    if not isinstance(spec, dict) or "kind" not in spec or "d" not in spec:
        raise ConfigError("'distribution' needs 'kind' and 'd'")
    return DistributionSpec(spec["kind"], int(spec["d"]),
                            int(spec.get("seed", 0)))


def _net(cfg: dict, d: int) -> DirectionNet:
    spec = cfg.get("net", {"kind": "sphere", "m": 64, "seed": 0})
    kind = spec.get("kind", "sphere")
    if kind == "sphere":
        return sphere_net(d, m=int(spec.get("m", 64)),
                          seed=int(spec.get("seed", 0)))
    if kind == "axis":
        return axis_net(d)
    if kind == "deterministic":
        if "gamma" not in spec:
            raise ConfigError("'deterministic' nets need a 'gamma' entry")
        return sphere_net(d, gamma=float(spec["gamma"]))
    if kind == "circle":
        if d != 2:
            raise ConfigError("'circle' nets require d = 2")
        m = int(spec.get("m", 8))
        ang = 2.0 * np.pi * np.arange(m) / m
        return DirectionNet(np.column_stack([np.cos(ang), np.sin(ang)]),
                            provenance=f"circle({m})")
    raise ConfigError(f"unknown net kind '{kind}'")


def _params(cfg: dict, d: int, n: int, q: float) -> AdmissibleParams:
    spec = cfg.get("params")
    if spec is None:
        if abs(q - 0.75) > 1e-12:
            raise ConfigError("default admissible constants are certified "
                              "for q=0.75; pass an explicit 'params' object")
        return gaussian_reference_params(d, n, q)
    try:
        import math
        return AdmissibleParams(
            q=q, R_max=float(spec["R_max"]), R_min=float(spec["R_min"]),
            r=float(spec["r"]), L=float(spec["L"]),
            B=float(spec.get("B", 10.0 * math.sqrt(d) * float(n) ** 3)),
            center=np.asarray(spec.get("center", np.zeros(d)), dtype=float))
    except KeyError as exc:
        raise ConfigError(f"'params' is missing {exc}") from exc


def _sample_input(cfg: dict, seed: int) -> Sample:
    if "data" in cfg:
        return Sample.from_csv(cfg["data"])
    spec = _distribution(cfg)
    n = int(_require(cfg, "n", "data generation"))
    return sample_dist(spec, n, make_rng(seed))


# ---- record writing ----------------------------------------------------------


def _flatten(obj, prefix="") -> list[tuple[str, object]]:
    rows = []
    if isinstance(obj, dict):
        for key in sorted(obj):
            rows.extend(_flatten(obj[key], f"{prefix}{key}."))
    elif isinstance(obj, (list, tuple)):
        if len(obj) <= 64 and all(isinstance(v, (int, float, bool, str))
                                  for v in obj):
            for i, v in enumerate(obj):
                rows.append((f"{prefix[:-1]}[{i}]", v))
    else:
        rows.append((prefix[:-1], obj))
    return rows


def _write_outputs(out: Path, record: dict, wall: float, fmt: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    blob = json.dumps(record, sort_keys=True, indent=2) + "\n"
    if fmt in ("json", "both"):
        (out / "record.json").write_text(blob)
    if fmt in ("csv", "both"):
        lines = ["metric,value"]
        lines += [f"{k},{v!r}" if isinstance(v, float) else f"{k},{v}"
                  for k, v in _flatten(record.get("results", {}))]
        (out / "metrics.csv").write_text("\n".join(lines) + "\n")
    (out / "timing.json").write_text(
        json.dumps({"wall_clock_s": wall}) + "\n")


def _record(command: str, config: dict, seed: int, results: dict,
            passed: bool | None, notes: list[str]) -> dict:
    canon = json.dumps(config, sort_keys=True).encode()
    return {"command": command, "config": config, "seed": seed,
            "config_digest": f"{fnv1a64(canon):016x}",
            "package": f"dpbody {__version__}", "results": results,
            "passed": passed, "notes": notes}


# ---- commands -----------------------------------------------------------------


def cmd_gen(cfg: dict, seed: int, out: Path, threads: int) -> tuple[dict, bool]:
    spec = _distribution(cfg)
    n = int(_require(cfg, "n", "gen"))
    X = sample_dist(spec, n, make_rng(seed))
    out.mkdir(parents=True, exist_ok=True)
    X.to_csv(out / "data.csv")
    return {"n": X.n, "d": X.d, "kind": spec.kind,
            "source_hash": f"{X.source_hash:016x}",
            "path": "data.csv"}, True


def cmd_quantiles(cfg: dict, seed: int, out: Path,
                  threads: int) -> tuple[dict, bool]:
    X = _sample_input(cfg, seed)
    q = float(_require(cfg, "q", "quantiles"))
    net = _net(cfg, X.d)
    results = {"q": q, "net_size": net.size,
               "center": query_quantiles(X, q, net).tolist()}
    if "epsilon" in cfg:
        epsilon = float(cfg["epsilon"])
        params = _params(cfg, X.d, X.n, q)
        ledger = PrivacyLedger()
        draw = private_quantiles(X, q, net, epsilon, params,
                                 make_rng(seed ^ 0x9E3779B9),
                                 W=cfg.get("W"), ledger=ledger)
        results.update(private=draw.tolist(), epsilon=epsilon,
                       ledger=json.loads(ledger.to_json()))
    return results, True


def cmd_steiner(cfg: dict, seed: int, out: Path,
                threads: int) -> tuple[dict, bool]:
    X = _sample_input(cfg, seed)
    q = float(_require(cfg, "q", "steiner"))
    net = _net(cfg, X.d)
    m = int(cfg.get("m_directions", 512))
    fb = floating_body(X, q, net)
    results = {"q": q, "net_size": net.size, "m_directions": m,
               "empty": fb.is_empty}
    if fb.is_empty:
        return results, False
    results["steiner"] = steiner_point(
        fb.body, m, make_rng(seed ^ 0x5DEECE66)).tolist()
    if "epsilon" in cfg:
        epsilon = float(cfg["epsilon"])
        params = _params(cfg, X.d, X.n, q)
        ledger = PrivacyLedger()
        draw = private_steiner(X, q, epsilon, params, net, m_directions=m,
                               rng=make_rng(seed ^ 0x9E3779B9),
                               W=cfg.get("W"), ledger=ledger)
        results.update(private=draw.tolist(), epsilon=epsilon,
                       ledger=json.loads(ledger.to_json()))
    return results, True


def cmd_project(cfg: dict, seed: int, out: Path,
                threads: int) -> tuple[dict, bool]:
    X = _sample_input(cfg, seed)
    q = float(_require(cfg, "q", "project"))
    x = np.asarray(_require(cfg, "x", "project"), dtype=float)
    net = _net(cfg, X.d)
    fb = floating_body(X, q, net)
    results = {"q": q, "x": x.tolist(), "empty": fb.is_empty}
    if fb.is_empty:
        return results, False
    results["projection"] = project(fb.body, x).point.tolist()
    if "epsilon" in cfg:
        epsilon = float(cfg["epsilon"])
        params = _params(cfg, X.d, X.n, q)
        ledger = PrivacyLedger()
        draw = private_project(X, q, x, epsilon, params, net,
                               rng=make_rng(seed ^ 0x9E3779B9),
                               W=cfg.get("W"), ledger=ledger)
        results.update(private=draw.tolist(), epsilon=epsilon,
                       ledger=json.loads(ledger.to_json()))
    return results, True


def cmd_sample(cfg: dict, seed: int, out: Path,
               threads: int) -> tuple[dict, bool]:
    X = _sample_input(cfg, seed)
    q = float(_require(cfg, "q", "sample"))
    epsilon = float(_require(cfg, "epsilon", "sample"))
    alpha = float(cfg.get("alpha", 0.1))
    net = _net(cfg, X.d)
    params = _params(cfg, X.d, X.n, q)
    lg = cfg.get("langevin", {})
    lcfg = LangevinConfig(eta=float(lg.get("eta", 0.1)),
                          k=int(lg.get("k", 0)), alpha=alpha)
    budget = None
    if cfg.get("budget", True):
        budget = noisy_oracle_params(alpha, max(lcfg.k, X.d), params)
    result = private_sample_floating_body(
        X, q, epsilon, alpha, params, net, lcfg,
        make_rng(seed ^ 0x9E3779B9), n_chains=int(cfg.get("n_chains", 1)),
        W=cfg.get("W"), budget=budget)
    results = json.loads(result.to_json())
    if result.degenerate_steiner_only:
        results["note"] = "Steiner-only degenerate"
    return results, True


def cmd_typical(cfg: dict, seed: int, out: Path,
                threads: int) -> tuple[dict, bool]:
    X = _sample_input(cfg, seed)
    q = float(_require(cfg, "q", "typical"))
    net = _net(cfg, X.d)
    params = _params(cfg, X.d, X.n, q)
    W = cfg.get("W") or recommend_W(net.size, X.d, float(cfg.get("beta", 0.1)))
    tcfg = TypicalSetConfig(W=float(W), params=params, n=X.n)
    report = check_typical(X, q, net, tcfg)
    results = json.loads(report.to_json())
    results["W"] = float(W)
    return results, bool(report.overall)


def cmd_audit(cfg: dict, seed: int, out: Path,
              threads: int) -> tuple[dict, bool]:
    available = {inst.name: inst for inst in builtin_instances()}
    wanted = cfg.get("instances", sorted(available))
    unknown = [w for w in wanted if w not in available]
    if unknown:
        raise ConfigError(f"unknown audit instances: {unknown}; "
                          f"available: {sorted(available)}")
    n_quad = int(cfg.get("n_quad", 200))

    def _one(name: str) -> dict:
        rep = extension_audit(available[name], n_quad=n_quad)
        return json.loads(rep.to_json())

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as ex:
            reports = list(ex.map(_one, wanted))
    else:
        reports = [_one(name) for name in wanted]
    results = {"extension": {name: rep for name, rep
                             in zip(wanted, reports)}}
    passed = all(rep["pass"] for rep in reports)
    pairs = int(cfg.get("mechanism_pairs", 0))
    if pairs > 0:
        mech = audit_experiment(n_pairs=pairs,
                                n=int(cfg.get("n", 1000)),
                                n_mc=int(cfg.get("n_mc", 100_000)),
                                seed=seed, threads=threads)
        results["mechanism"] = mech
        passed = passed and mech["max_slack"] <= 1e-3
    return results, passed


_HANDLERS = {"gen": cmd_gen, "quantiles": cmd_quantiles,
             "steiner": cmd_steiner, "project": cmd_project,
             "sample": cmd_sample, "typical": cmd_typical,
             "audit": cmd_audit}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="dpbody",
        description="Differentially private floating-body estimators")
    parser.add_argument("command", choices=_COMMANDS)
    parser.add_argument("--config", required=True,
                        help="path to a JSON experiment config")
    parser.add_argument("--seed", type=int, default=None,
                        help="overrides the config's seed")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--format", choices=("json", "csv", "both"),
                        default="both")
    args = parser.parse_args(argv)
    started = time.perf_counter()
    try:
        cfg = _load_config(args.config)
        seed = args.seed if args.seed is not None else cfg.get("seed")
        if seed is None:
            raise ConfigError("a seed is mandatory: set 'seed' in the "
                              "config or pass --seed")
        seed = int(seed)
        out = Path(args.out)
        notes = []
        if args.threads > 1:
            notes.append("parallel: metrics reproducible, byte order not")
        try:
            results, passed = _HANDLERS[args.command](cfg, seed, out,
                                                      args.threads)
        except TypicalityGateError as exc:
            results = {"gate": "failed", "message": str(exc)}
            if exc.report is not None:
                results["report"] = json.loads(exc.report.to_json())
            if exc.batch is not None:
                results["batch"] = exc.batch
            passed = False
            notes.append("aborted by the typicality gate")
        record = _record(args.command, cfg, seed, results, passed, notes)
        _write_outputs(out, record, time.perf_counter() - started,
                       args.format)
        status = "pass" if passed else "FAIL"
        print(f"dpbody {args.command}: {status} "
              f"(records in {out})")
        return 0 if passed else 2
    except (ConfigError, DPBodyError, ValueError, TypeError) as exc:
        # Library-level validation rejections surface as clean errors: the
        # config named a value outside some operation's admissible range.
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
