"""Command-line entry point.

Subcommands cover the full pipeline: circuit construction and
inspection, exact and sampled distributions with certification,
layerwise and baseline training, the verification suites, and report
rendering.  Every command that writes files also writes one
manifest.json capturing the command, the merged configuration, seeds,
version, input hashes, output paths, and wall clock, so a run can be
reproduced from its manifest alone.  Exit codes: 0 success, 1 a
verification reported failure, 2 usage or input errors.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import analysis as an
from . import baseline as bl
from . import circuit as ct
from . import dist as ds
from . import net as nt
from . import report as rp
from . import train as tr
from ._io import canonical_json, read_json, sha256_file, write_json

USAGE_ERROR = 2
VERIFY_ERROR = 1


class CliError(Exception):
    """Usage or input problem; message printed, exit status 2."""


def _parse_relevant(text: str) -> tuple[int, ...]:
    try:
        vals = tuple(sorted({int(tok) for tok in text.split(",") if tok.strip()}))
    except ValueError as exc:
        raise CliError(f"bad index list {text!r}") from exc
    if not vals:
        raise CliError("empty index list")
    return vals


def _parse_x(text: str, n: int) -> np.ndarray:
    """Accept '+-+-' or comma-separated +-1."""
    text = text.strip()
    if set(text) <= {"+", "-"} and text:
        vals = [1 if ch == "+" else -1 for ch in text]
    else:
        try:
            vals = [int(tok) for tok in text.split(",")]
        except ValueError as exc:
            raise CliError(f"bad input vector {text!r}") from exc
        if any(v not in (-1, 1) for v in vals):
            raise CliError("input entries must be +1 or -1")
    if len(vals) != n:
        raise CliError(f"input has {len(vals)} entries, circuit wants {n}")
    return np.array(vals, dtype=np.int8)


def _load_circuit(path: str) -> ct.Circuit:
    try:
        return ct.circuit_from_dict(read_json(path))
    except FileNotFoundError as exc:
        raise CliError(f"no such circuit file: {path}") from exc


def _load_spec(path: str) -> tuple[ds.DistSpec, list[Path]]:
    """Parse a spec file; also return the files it pulled in, for hashing."""
    p = Path(path)
    try:
        doc = read_json(p)
    except FileNotFoundError as exc:
        raise CliError(f"no such distribution spec: {path}") from exc
    inputs = [p]
    if isinstance(doc.get("circuit"), str):
        cp = Path(doc["circuit"])
        if not cp.is_absolute():
            cp = p.parent / cp
        inputs.append(cp)
    return ds.load_dist_spec(doc, base_dir=p.parent), inputs


class Manifest:
    """Collects one run's provenance and writes manifest.json."""

    def __init__(self, command: str, args: argparse.Namespace) -> None:
        self.command = command
        self.argv = list(sys.argv[1:])
        self.config = _merged_config(args)
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []
        self.seeds: dict = {}
        self.t0 = time.perf_counter()

    def add_input(self, path: str | Path) -> None:
        p = Path(path)
        if p.is_file():
            self.inputs[str(p)] = sha256_file(p)

    def add_output(self, path: str | Path) -> None:
        self.outputs.append(str(path))

    def write(self, out_dir: Path) -> Path:
        doc = {
            "command": self.command,
            "argv": self.argv,
            "config": self.config,
            "seeds": self.seeds,
            "version": __version__,
            "inputs": self.inputs,
            "outputs": sorted(self.outputs),
            "wall_clock_s": time.perf_counter() - self.t0,
        }
        path = out_dir / "manifest.json"
        write_json(path, doc)
        return path


def _merged_config(args: argparse.Namespace) -> dict:
    """File config under explicit flags; flags win key by key."""
    merged: dict = {}
    cfg_path = getattr(args, "config", None)
    if cfg_path:
        try:
            merged.update(read_json(cfg_path))
        except FileNotFoundError as exc:
            raise CliError(f"no such config file: {cfg_path}") from exc
    for key, val in vars(args).items():
        if key in ("func", "config") or val is None:
            continue
        merged[key] = val
    return merged


def _config_val(args: argparse.Namespace, key: str, default=None):
    """Flag if given, else config-file value, else default."""
    val = getattr(args, key, None)
    if val is not None:
        return val
    cfg_path = getattr(args, "config", None)
    if cfg_path:
        doc = read_json(cfg_path)
        if key in doc:
            return doc[key]
    return default


def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(_config_val(args, "out", "runs/latest"))
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# circuit commands


def cmd_circuit_gen(args: argparse.Namespace) -> int:
    man = Manifest("circuit gen", args)
    kind = _config_val(args, "kind", "random")
    seed = int(_config_val(args, "seed", 0))
    depth = _config_val(args, "depth")
    man.seeds = {"seed": seed}
    if kind == "parity":
        if depth is None or not args.relevant:
            raise CliError("parity needs --depth and --relevant")
        c = ct.build_parity_circuit(int(depth), _parse_relevant(args.relevant))
    elif kind == "fm":
        if args.m is None:
            raise CliError("fm needs --m")
        c = ct.build_fm_circuit(int(args.m))
    elif kind == "random":
        if depth is None:
            raise CliError("random needs --depth")
        c = ct.random_circuit(int(depth), seed=seed)
    elif kind == "generative":
        if depth is None:
            raise CliError("generative needs --depth")
        c = ds.random_generative(int(depth), seed=seed).circuit
    else:
        raise CliError(f"unknown circuit kind {kind!r}")
    out = _out_dir(args)
    path = out / "circuit.json"
    write_json(path, ct.circuit_to_dict(c))
    man.add_output(path)
    man.write(out)
    print(path)
    return 0


def cmd_circuit_eval(args: argparse.Namespace) -> int:
    c = _load_circuit(args.circuit)
    x = _parse_x(args.x, c.n)
    print(int(ct.eval_circuit(c, x)))
    return 0


def cmd_circuit_influence(args: argparse.Namespace) -> int:
    c = _load_circuit(args.circuit)
    mode = _config_val(args, "mode", "exact")
    scope = _config_val(args, "scope", "full")
    seed = int(_config_val(args, "seed", 0))
    res = ct.influence(
        c,
        int(args.level),
        int(args.pos),
        mode=mode,
        samples=int(_config_val(args, "samples", 100_000)),
        seed=seed,
        scope=scope,
    )
    if isinstance(res, ct.InfluenceEstimate):
        print(canonical_json(
            {"value": res.value, "stderr": res.stderr, "samples": res.samples}
        ))
    else:
        print(canonical_json({"value": res}))
    return 0


# ---------------------------------------------------------------------------
# dist commands


def cmd_dist_sample(args: argparse.Namespace) -> int:
    man = Manifest("dist sample", args)
    spec, inputs = _load_spec(args.spec)
    for f in inputs:
        man.add_input(f)
    seed = int(_config_val(args, "seed", 0))
    size = int(_config_val(args, "size", 1000))
    man.seeds = {"seed": seed}
    X, y = spec.labeled().sample(size, seed)
    out = _out_dir(args)
    path = ds.write_dataset_csv(out / "dataset.csv", X, y)
    man.add_output(path)
    man.write(out)
    print(path)
    return 0


def cmd_dist_enumerate(args: argparse.Namespace) -> int:
    man = Manifest("dist enumerate", args)
    spec, inputs = _load_spec(args.spec)
    for f in inputs:
        man.add_input(f)
    dd = spec.labeled().enumerate()
    out = _out_dir(args)
    path = out / "support.json"
    write_json(path, dd.to_dict())
    man.add_output(path)
    man.write(out)
    print(path)
    return 0


def cmd_dist_certify(args: argparse.Namespace) -> int:
    man = Manifest("dist certify", args)
    spec, inputs = _load_spec(args.spec)
    for f in inputs:
        man.add_input(f)
    c = spec.label_circuit()
    dd = spec.labeled().enumerate()
    chain = ds.level_chain(dd, c)
    delta = _config_val(args, "delta")
    if delta is not None:
        rep = ds.certify_lca(chain, c, float(delta))
    else:
        rep = ds.certify_properties(chain, c)
    out = _out_dir(args)
    path = out / "report.json"
    write_json(path, rep.to_dict())
    man.add_output(path)
    man.write(out)
    print(path)
    if delta is not None:
        return 0 if rep.lca_verdict else VERIFY_ERROR
    ok = (
        rep.delta_certified is not None
        and rep.property1
        and rep.property2
        and rep.property3
    )
    return 0 if ok else VERIFY_ERROR


# ---------------------------------------------------------------------------
# training commands


def cmd_train_layerwise(args: argparse.Namespace) -> int:
    man = Manifest("train layerwise", args)
    spec, inputs = _load_spec(args.spec)
    for f in inputs:
        man.add_input(f)
    c = spec.label_circuit()
    mode = _config_val(args, "mode", "population")
    seed = int(_config_val(args, "seed", 0))
    man.seeds = {"seed": seed}
    dd = spec.labeled().enumerate()
    chain = ds.level_chain(dd, c)
    delta = _config_val(args, "delta")
    epsilon = _config_val(args, "epsilon")
    if delta is None or epsilon is None:
        dlt_c, eps_c = ds.certified_delta_epsilon(chain, c)
        delta = float(dlt_c) if delta is None else float(delta)
        epsilon = float(eps_c) if epsilon is None else float(epsilon)
    else:
        delta, epsilon = float(delta), float(epsilon)
    cfg = tr.derive_hyperparams(
        c.n,
        c.depth,
        delta=delta,
        epsilon=epsilon,
        conf=float(_config_val(args, "conf", 0.1)),
        variant=_config_val(args, "variant", "support"),
        seed=seed,
        gradient_source="population" if mode == "population" else "sample",
    )
    overrides = {"lam": None}  # trainer sets lambda from the data it sees
    for key in ("k", "eta", "steps", "init_scale", "step_cap"):
        val = _config_val(args, key)
        if val is not None:
            overrides[key] = type(getattr(cfg, key))(val) if getattr(cfg, key) is not None else val
    if _config_val(args, "relax_eta", False):
        overrides["relax_eta_per_layer"] = True
    cfg = tr.TrainConfig(**{**cfg.to_dict(), **overrides})
    if mode == "population":
        data = dd
    elif mode == "sample":
        size = int(_config_val(args, "samples", 50_000))
        X, y = spec.labeled().sample(size, seed)
        data = (X, y)
    else:
        raise CliError(f"unknown mode {mode!r}")
    net, trace = tr.train_layerwise(data, cfg)
    out = _out_dir(args)
    ck = out / "checkpoint.json"
    write_json(ck, nt.net_to_dict(net))
    man.add_output(ck)
    tj = out / "trace.json"
    write_json(tj, {**trace.to_dict(), "config": cfg.to_dict(),
                    "delta": delta, "epsilon": epsilon})
    man.add_output(tj)
    lc = out / "losses.csv"
    with open(lc, "w") as fh:
        fh.write("layer,step,loss\n")
        for lt in trace.layers:
            for t, v in enumerate(lt.loss_curve):
                fh.write(f"{lt.layer},{t},{v!r}\n")
    man.add_output(lc)
    man.write(out)
    print(ck)
    return 0


def cmd_train_baseline(args: argparse.Namespace) -> int:
    man = Manifest("train baseline", args)
    seed = int(_config_val(args, "seed", 0))
    man.seeds = {"seed": seed}
    res = bl.run_baseline(
        p=float(_config_val(args, "p", 0.5)),
        seed=seed,
        n=int(_config_val(args, "n", 128)),
        k=int(_config_val(args, "k_parity", 5)),
        h=int(_config_val(args, "hidden", 128)),
        iterations=int(_config_val(args, "iterations", 10_000)),
        batch=int(_config_val(args, "batch", 50)),
        loss=_config_val(args, "loss", "hinge"),
        alpha=float(_config_val(args, "alpha", 1e-3)),
    )
    out = _out_dir(args)
    path = out / "baseline_curve.csv"
    with open(path, "w") as fh:
        fh.write("iteration,accuracy\n")
        for it, acc in res.records:
            fh.write(f"{it},{acc!r}\n")
    man.add_output(path)
    rj = out / "baseline_result.json"
    write_json(rj, res.to_dict())
    man.add_output(rj)
    man.write(out)
    print(path)
    return 0


# ---------------------------------------------------------------------------
# verify commands


def cmd_verify_lemmas(args: argparse.Namespace) -> int:
    man = Manifest("verify lemmas", args)
    seed = int(_config_val(args, "seed", 0))
    man.seeds = {"seed": seed}
    verdicts = an.run_lemma_suite(
        scope=_config_val(args, "scope", "all"),
        seed=seed,
        parity_count=int(_config_val(args, "parity_count", 50)),
        product_count=int(_config_val(args, "product_count", 20)),
        generative_count=int(_config_val(args, "generative_count", 20)),
        max_depth=int(_config_val(args, "depth", 4)),
    )
    out = _out_dir(args)
    path = out / "verdicts.json"
    write_json(path, [v.to_dict() for v in verdicts])
    man.add_output(path)
    man.write(out)
    print(path)
    return 0 if all(v.ok for v in verdicts) else VERIFY_ERROR


def cmd_verify_recovery(args: argparse.Namespace) -> int:
    man = Manifest("verify recovery", args)
    spec, inputs = _load_spec(args.spec)
    for f in inputs:
        man.add_input(f)
    man.add_input(args.checkpoint)
    c = spec.label_circuit()
    dd = spec.labeled().enumerate()
    try:
        net = nt.net_from_dict(read_json(args.checkpoint))
    except FileNotFoundError as exc:
        raise CliError(f"no such checkpoint: {args.checkpoint}") from exc
    rep = tr.verify_recovery(net, c, dd)
    out = _out_dir(args)
    path = out / "recovery.json"
    write_json(path, rep.to_dict())
    man.add_output(path)
    man.write(out)
    print(path)
    return 0 if rep.recovered else VERIFY_ERROR


def cmd_verify_rankbound(args: argparse.Namespace) -> int:
    man = Manifest("verify rankbound", args)
    seed = int(_config_val(args, "seed", 0))
    man.seeds = {"seed": seed}
    count = int(_config_val(args, "nets", 200))
    n_prime = int(_config_val(args, "n_prime", 5))
    k = int(_config_val(args, "k", 16))
    B = int(_config_val(args, "bound", 3))
    rng = np.random.Generator(np.random.PCG64(seed))
    reports = []
    for _ in range(count):
        npr = int(rng.integers(1, n_prime + 1))
        kk = int(rng.integers(1, k + 1))
        bb = int(rng.integers(1, B + 1))
        net = an.random_qnet(npr, kk, bb, seed=int(rng.integers(0, 2**31)))
        reports.append(an.rank_bound_check(net).to_dict())
    out = _out_dir(args)
    path = out / "rankbound.json"
    write_json(path, reports)
    man.add_output(path)
    man.write(out)
    print(path)
    return 0 if all(r["pass"] for r in reports) else VERIFY_ERROR


# ---------------------------------------------------------------------------
# report


def cmd_report_render(args: argparse.Namespace) -> int:
    man = Manifest("report render", args)
    run_dir = Path(args.run)
    if not run_dir.is_dir():
        raise CliError(f"{run_dir} is not a run directory")
    mpath = run_dir / "manifest.json"
    if mpath.is_file():
        man.add_input(mpath)
    res = rp.render_run_dir(
        run_dir,
        out_dir=_config_val(args, "out"),
        figures=not bool(_config_val(args, "no_figures", False)),
    )
    for f in res["written"]:
        man.add_output(f)
    target = Path(_config_val(args, "out")) if _config_val(args, "out") else run_dir
    man.write(target)
    for f in res["written"]:
        print(f)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(
        prog="treegate",
        description="Layerwise circuit learning, exact certification, verification.",
    )
    top.add_argument("--version", action="version", version=__version__)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--config", type=str, default=None)
        p.add_argument("--out", type=str, default=None)
        p.add_argument("--threads", type=int, default=None,
                       help="recorded in the manifest; execution is single-threaded")

    sub = top.add_subparsers(dest="group")

    pc = sub.add_parser("circuit", help="build and inspect circuits")
    pcs = pc.add_subparsers(dest="action")
    g = pcs.add_parser("gen")
    g.add_argument("--kind", choices=["parity", "fm", "random", "generative"])
    g.add_argument("--depth", type=int)
    g.add_argument("--relevant", type=str, help="comma-separated leaf indices")
    g.add_argument("--m", type=int)
    add_common(g)
    g.set_defaults(func=cmd_circuit_gen)
    e = pcs.add_parser("eval")
    e.add_argument("--circuit", required=True)
    e.add_argument("--x", required=True, help="'+-+-' or comma-separated +-1")
    add_common(e)
    e.set_defaults(func=cmd_circuit_eval)
    i = pcs.add_parser("influence")
    i.add_argument("--circuit", required=True)
    i.add_argument("--level", type=int, required=True)
    i.add_argument("--pos", type=int, required=True)
    i.add_argument("--mode", choices=["exact", "monte_carlo"])
    i.add_argument("--samples", type=int)
    i.add_argument("--scope", choices=["full", "single_level"])
    add_common(i)
    i.set_defaults(func=cmd_circuit_influence)

    pd = sub.add_parser("dist", help="distributions: sample, enumerate, certify")
    pds = pd.add_subparsers(dest="action")
    s = pds.add_parser("sample")
    s.add_argument("--spec", required=True)
    s.add_argument("--size", type=int)
    add_common(s)
    s.set_defaults(func=cmd_dist_sample)
    en = pds.add_parser("enumerate")
    en.add_argument("--spec", required=True)
    add_common(en)
    en.set_defaults(func=cmd_dist_enumerate)
    ce = pds.add_parser("certify")
    ce.add_argument("--spec", required=True)
    ce.add_argument("--delta", type=float)
    add_common(ce)
    ce.set_defaults(func=cmd_dist_certify)

    pt = sub.add_parser("train", help="layerwise and baseline training")
    pts = pt.add_subparsers(dest="action")
    tl = pts.add_parser("layerwise")
    tl.add_argument("--spec", required=True)
    tl.add_argument("--mode", choices=["population", "sample"])
    tl.add_argument("--samples", type=int)
    tl.add_argument("--delta", type=float)
    tl.add_argument("--epsilon", type=float)
    tl.add_argument("--variant", choices=["margin", "support"])
    tl.add_argument("--conf", type=float)
    tl.add_argument("--k", type=int)
    tl.add_argument("--eta", type=float)
    tl.add_argument("--steps", type=int)
    tl.add_argument("--step-cap", dest="step_cap", type=int)
    tl.add_argument("--init-scale", dest="init_scale", type=float)
    tl.add_argument("--relax-eta", dest="relax_eta", action="store_const", const=True)
    add_common(tl)
    tl.set_defaults(func=cmd_train_layerwise)
    tb = pts.add_parser("baseline")
    tb.add_argument("--p", type=float)
    tb.add_argument("--n", type=int)
    tb.add_argument("--k-parity", dest="k_parity", type=int)
    tb.add_argument("--hidden", type=int)
    tb.add_argument("--iterations", type=int)
    tb.add_argument("--batch", type=int)
    tb.add_argument("--loss", choices=["hinge", "logistic"])
    tb.add_argument("--alpha", type=float)
    add_common(tb)
    tb.set_defaults(func=cmd_train_baseline)

    pv = sub.add_parser("verify", help="lemma suite, recovery, rank bound")
    pvs = pv.add_subparsers(dest="action")
    vl = pvs.add_parser("lemmas")
    vl.add_argument("--scope", type=str)
    vl.add_argument("--depth", type=int)
    vl.add_argument("--parity-count", dest="parity_count", type=int)
    vl.add_argument("--product-count", dest="product_count", type=int)
    vl.add_argument("--generative-count", dest="generative_count", type=int)
    add_common(vl)
    vl.set_defaults(func=cmd_verify_lemmas)
    vr = pvs.add_parser("recovery")
    vr.add_argument("--spec", required=True)
    vr.add_argument("--checkpoint", required=True)
    add_common(vr)
    vr.set_defaults(func=cmd_verify_recovery)
    vb = pvs.add_parser("rankbound")
    vb.add_argument("--nets", type=int)
    vb.add_argument("--n-prime", dest="n_prime", type=int)
    vb.add_argument("--k", type=int)
    vb.add_argument("--bound", type=int)
    add_common(vb)
    vb.set_defaults(func=cmd_verify_rankbound)

    pr = sub.add_parser("report", help="render run artifacts")
    prs = pr.add_subparsers(dest="action")
    rr = prs.add_parser("render")
    rr.add_argument("--run", required=True, help="run directory with a manifest")
    rr.add_argument("--no-figures", dest="no_figures", action="store_const", const=True)
    add_common(rr)
    rr.set_defaults(func=cmd_report_render)

    return top


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_help()
        return USAGE_ERROR
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except ValueError as exc:
        # domain errors (dimension mismatches, bad ranges) are usage errors
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
