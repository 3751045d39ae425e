"""Command-line harness: ``dggf <command> --config run.json [--seed N] [--out DIR]``.

Commands
--------
train-t        Stage 1, writes ``t_model.dggf`` and ``t_report.csv``.
train-g        Stage 2 against a Stage-1 model, writes ``g_model.dggf`` and ``g_report.csv``.
solve          Quadrature convolution of a trained kernel with a catalog case.
benchmark      DGGF / GaussNet / PINN / NGF comparison table.
stability      Per-point variance of kernel error across initialization seeds.
inspect-model  Print the header of a model file.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import GaussNetConfig, ngf_solve, train_gaussnet, train_pinn
from .geometry import Domain
from .mlp import ModelFileError, param_digest, read_model, write_model
from .operators import PdeOperator, ProblemInstance
from .oracles import get_case, manufactured_catalog, relative_l2, square_green_series
from .quadrature import GreenOperator, build_quadrature, evaluation_grid
from .training import TrainConfig, TrainingDiverged, train_stage1, train_stage2


class ConfigError(ValueError):
    pass


class DigestMismatch(ValueError):
    pass


# -- configuration ---------------------------------------------------------------
@dataclass
class GaussNetSection:
    epsilons: list = field(default_factory=lambda: [0.05, 0.1])
    symmetry_loss_weight: float = 0.0
    # the delta-driven kernel is O(1), far larger than G^t, so it may need its own scale
    output_scale: float | None = None


@dataclass
class BenchmarkSection:
    methods: list = field(default_factory=lambda: ["dggf", "gaussnet", "pinn", "ngf"])
    operators: list = field(default_factory=lambda: [{"kind": "poisson"}])
    domains: list = field(default_factory=lambda: [{"shape": "square"}])
    seeds: list = field(default_factory=lambda: [0])
    ngf_grid_n: int = 64


@dataclass
class StabilitySection:
    n_seeds: int = 5
    scenario: str = "stage2"  # "stage2": shared Stage-1 model; "both": retrain Stage 1 per seed
    grid_n: int = 21
    source: list = field(default_factory=lambda: [0.5, 0.5])
    min_distance: float = 0.1


METHODS = ("dggf", "gaussnet", "pinn", "ngf")
_SECTIONS = {"gaussnet": GaussNetSection, "benchmark": BenchmarkSection, "stability": StabilitySection}


@dataclass
class RunConfig:
    domain: dict = field(default_factory=lambda: {"shape": "square"})
    operator: dict = field(default_factory=lambda: {"kind": "poisson"})
    train: TrainConfig = field(default_factory=TrainConfig)
    quadrature_resolution: int = 100
    eval_grid_n: int = 21
    case: str | None = None
    out: str = "runs"
    gaussnet: GaussNetSection = field(default_factory=GaussNetSection)
    benchmark: BenchmarkSection = field(default_factory=BenchmarkSection)
    stability: StabilitySection = field(default_factory=StabilitySection)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("run config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(d)
        try:
            if "train" in kw:
                kw["train"] = TrainConfig.from_dict(kw["train"])
            for name, section in _SECTIONS.items():
                if name in kw:
                    sub = kw[name]
                    extra = set(sub) - {f.name for f in dataclasses.fields(section)}
                    if extra:
                        raise ConfigError(f"unknown keys in {name!r}: {sorted(extra)}")
                    kw[name] = section(**sub)
            cfg = cls(**kw)
            cfg.validate()
        except ConfigError:
            raise
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from None
        return cfg

    def validate(self) -> None:
        dom = self.make_domain()
        op = self.make_operator()
        if op.dim != dom.dim:
            raise ConfigError("operator and domain dimensions differ")
        if self.quadrature_resolution < 4:
            raise ConfigError("quadrature_resolution must be >= 4")
        if self.eval_grid_n < 2:
            raise ConfigError("eval_grid_n must be >= 2")
        if self.case is not None:
            get_case(self.case)
        for m in self.benchmark.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}; choose from {METHODS}")
        for e in self.gaussnet.epsilons:
            if e <= 0:
                raise ConfigError("GaussNet epsilons must be positive")
        if self.gaussnet.output_scale is not None and self.gaussnet.output_scale <= 0:
            raise ConfigError("gaussnet.output_scale must be positive")
        if self.stability.scenario not in ("stage2", "both"):
            raise ConfigError("stability.scenario must be 'stage2' or 'both'")
        for d in self.benchmark.domains:
            Domain.from_dict(d)

    def make_domain(self) -> Domain:
        return Domain.from_dict(self.domain)

    def make_operator(self, spec: dict | None = None, dim: int | None = None) -> PdeOperator:
        spec = dict(spec or self.operator)
        unknown = set(spec) - {"kind", "k"}
        if unknown:
            raise ConfigError(f"unknown operator keys: {sorted(unknown)}")
        if "kind" not in spec:
            raise ConfigError("operator needs a 'kind'")
        return PdeOperator(spec["kind"], dim or self.make_domain().dim, float(spec.get("k", 0.0)))


def gaussnet_config(cfg: RunConfig, train: TrainConfig, epsilon: float) -> GaussNetConfig:
    """GaussNet settings sharing the DGGF budget (epochs, batch, width)."""
    g = cfg.gaussnet
    if g.output_scale is not None:
        train = dataclasses.replace(train, output_scale=g.output_scale)
    return GaussNetConfig.from_train(train, epsilon=epsilon, symmetry_loss_weight=g.symmetry_loss_weight)


def load_config(path, seed: int | None = None) -> RunConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    cfg = RunConfig.from_dict(raw)
    if seed is not None:
        cfg.train = dataclasses.replace(cfg.train, seed=seed)
    return cfg


# -- helpers -------------------------------------------------------------------
def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def _t_metadata(domain: Domain, cfg: TrainConfig) -> dict:
    return {
        "stage": "t",
        "dim": domain.dim,
        "domain": domain.to_dict(),
        "domain_digest": domain.digest,
        "train_config": cfg.to_dict(),
        "train_config_digest": cfg.digest,
    }


def _g_metadata(domain: Domain, op: PdeOperator, cfg: TrainConfig, t_digest: str) -> dict:
    return {
        "stage": "g",
        "dim": domain.dim,
        "domain": domain.to_dict(),
        "domain_digest": domain.digest,
        "operator": op.to_dict(),
        "operator_id": op.identifier,
        "train_config": cfg.to_dict(),
        "train_config_digest": cfg.digest,
        "t_model_digest": t_digest,
    }


def check_t_model(meta: dict, domain: Domain) -> None:
    if meta.get("stage") != "t":
        raise DigestMismatch("model is not a Stage-1 (t) model")
    if meta.get("domain_digest") != domain.digest or meta.get("dim") != domain.dim:
        raise DigestMismatch(
            f"t-model was trained on {meta.get('domain', {}).get('shape')!r}, "
            f"config asks for {domain.shape!r} (domain digest mismatch)"
        )


def _case_for(op: PdeOperator, domain: Domain, name: str | None = None):
    if name is not None:
        case = get_case(name)
        if case.domain.digest != domain.digest or case.operator.identifier != op.identifier:
            raise DigestMismatch(f"case {name!r} is defined for {case.operator.identifier} on {case.domain.shape}")
        return case
    for case in manufactured_catalog():
        if case.domain.digest == domain.digest and case.operator.identifier == op.identifier and not case.note:
            return case
    return None


# -- commands ------------------------------------------------------------------
def cmd_train_t(cfg: RunConfig, out: Path) -> Path:
    domain = cfg.make_domain()
    net, report = train_stage1(domain, cfg.train)
    path = out / "t_model.dggf"
    write_model(path, net, _t_metadata(domain, cfg.train))
    report.write_csv(out / "t_report.csv")
    final = report.boundary_loss[-1] if report.epochs else float("nan")
    print(f"train-t: {domain.identifier} epochs={report.epochs} final_boundary_loss={final:.3e} "
          f"wall_time={report.wall_time:.1f}s digest={report.param_digest[:16]}")
    return path


def cmd_train_g(cfg: RunConfig, out: Path, t_model: Path) -> Path:
    domain, op = cfg.make_domain(), cfg.make_operator()
    net_tr, meta = read_model(t_model)
    check_t_model(meta, domain)
    net, report = train_stage2(domain, op, net_tr, cfg.train)
    path = out / "g_model.dggf"
    write_model(path, net, _g_metadata(domain, op, cfg.train, param_digest(net_tr)))
    report.write_csv(out / "g_report.csv")
    final = report.total_loss[-1] if report.epochs else float("nan")
    print(f"train-g: {op.identifier} on {domain.identifier} epochs={report.epochs} final_total_loss={final:.3e} "
          f"wall_time={report.wall_time:.1f}s digest={report.param_digest[:16]}")
    return path


def cmd_solve(cfg: RunConfig, out: Path, g_model: Path, case_name: str | None = None, grid_n: int | None = None) -> dict:
    net_g, meta = read_model(g_model)
    if meta.get("stage") != "g":
        raise DigestMismatch("model is not a Stage-2 (G^t) model")
    domain = Domain.from_dict(meta["domain"])
    op = cfg.make_operator(meta["operator"], dim=meta["dim"])
    case = _case_for(op, domain, case_name or cfg.case)
    if case is None:
        raise ConfigError(f"no catalog case for {op.identifier} on {domain.shape}; pass --case")
    pts = evaluation_grid(domain, grid_n or cfg.eval_grid_n)
    rule = build_quadrature(domain, cfg.quadrature_resolution)
    kernel = GreenOperator(net_g, rule, pts)
    start = time.perf_counter()
    u_hat = kernel.apply(case.laplacian_f)
    conv_time = time.perf_counter() - start
    u_ref = case.u(pts)
    if not np.any(case.laplacian_f(rule.nodes)):
        warnings.warn(
            f"case {case.name!r} has a vanishing Laplacian of f; the volume term is zero and the "
            "solution would have to come from the boundary correction",
            stacklevel=2,
        )
    err = relative_l2(u_hat, u_ref)
    cols = ["x", "y", "z"][: domain.dim]
    rows = [[*map(_fmt, p), _fmt(a), _fmt(b), _fmt(abs(a - b))] for p, a, b in zip(pts, u_hat, u_ref)]
    _write_rows(out / "solution.csv", cols + ["u_hat", "u_ref", "abs_err"], rows)
    print(f"solve: case={case.name} points={len(pts)} relative_l2={err:.4e} convolution_time={conv_time:.4f}s")
    return {"case": case.name, "relative_l2": err, "convolution_time": conv_time}


BENCHMARK_HEADER = ["method", "operator", "domain", "case", "seed", "relative_l2", "wall_time", "status"]


def _benchmark_rows(cfg: RunConfig):
    bench = cfg.benchmark
    for dom_spec in bench.domains:
        domain = Domain.from_dict(dom_spec)
        for seed in bench.seeds:
            train = dataclasses.replace(cfg.train, seed=seed)
            net_tr = None
            for op_spec in bench.operators:
                op = cfg.make_operator(op_spec, dim=domain.dim)
                case = _case_for(op, domain)
                base = [op.identifier, domain.shape, case.name if case else "", seed]
                if case is None:
                    for m in bench.methods:
                        yield [m, *base, "", "", "unsupported: no manufactured case"]
                    continue
                pts = evaluation_grid(domain, cfg.eval_grid_n)
                u_ref = case.u(pts)
                rule = None
                for method in bench.methods:
                    labels = [f"gaussnet(eps={e:g})" for e in cfg.gaussnet.epsilons] if method == "gaussnet" else [method]
                    for i, label in enumerate(labels):
                        start = time.perf_counter()
                        try:
                            if method == "ngf":
                                if domain.shape != "square" or op.kind != "poisson":
                                    yield [label, *base, "", "", "unsupported: NGF is square/Poisson only"]
                                    continue
                                g = ngf_solve(op, bench.ngf_grid_n, domain)
                                u_hat = g.solve(case.f)
                                err = relative_l2(u_hat, case.u(g.points))
                            elif method == "pinn":
                                net, _ = train_pinn(ProblemInstance(op, domain, case.f), train)
                                err = relative_l2(net(pts), u_ref)
                            else:
                                rule = rule or build_quadrature(domain, cfg.quadrature_resolution)
                                if method == "dggf":
                                    if net_tr is None:
                                        net_tr, _ = train_stage1(domain, train)
                                    net, _ = train_stage2(domain, op, net_tr, train)
                                else:
                                    gcfg = gaussnet_config(cfg, train, cfg.gaussnet.epsilons[i])
                                    net, _ = train_gaussnet(domain, op, gcfg)
                                # GaussNet approximates G itself, so it convolves f rather than Delta f
                                density = case.laplacian_f if method == "dggf" else case.f
                                err = relative_l2(GreenOperator(net, rule, pts).apply(density), u_ref)
                            yield [label, *base, _fmt(err), _fmt(time.perf_counter() - start), "ok"]
                        except Exception as exc:  # one failed row must not stop the suite
                            yield [label, *base, "", _fmt(time.perf_counter() - start), f"error: {exc}"]


def cmd_benchmark(cfg: RunConfig, out: Path) -> Path:
    path = out / "benchmark.csv"
    rows = []
    for row in _benchmark_rows(cfg):
        rows.append(row)
        print(",".join(str(c) for c in row), flush=True)
    _write_rows(path, BENCHMARK_HEADER, rows)
    return path


def stability_study(cfg: RunConfig, n_seeds: int | None = None, net_tr=None, keep: list | None = None):
    """Per-point mean and variance (over seeds) of the absolute kernel error.

    The reference is the eigen-expansion ``G^t`` of the unit square with the
    source fixed at ``stability.source``; grid points closer than
    ``stability.min_distance`` to the source are skipped.
    Returns ``(points, errors)`` with ``errors`` of shape ``(n_seeds, n_points)``.
    Trained kernels are appended to ``keep`` when it is given.
    """
    st = cfg.stability
    n_seeds = st.n_seeds if n_seeds is None else n_seeds
    if n_seeds < 2:
        raise ConfigError("stability needs at least 2 seeds")
    domain, op = cfg.make_domain(), cfg.make_operator()
    if domain.shape != "square" or op.kind != "poisson" or domain.params != Domain("square").params:
        raise ConfigError("stability study is defined for Poisson on the unit square")
    pts = evaluation_grid(domain, st.grid_n)
    src = np.asarray(st.source, dtype=np.float64)
    pts = pts[np.linalg.norm(pts - src, axis=1) >= st.min_distance]
    ref = square_green_series(pts, src, power=2)
    x = np.concatenate([pts, np.broadcast_to(src, pts.shape)], axis=1)
    if st.scenario == "stage2" and net_tr is None:
        net_tr, _ = train_stage1(domain, cfg.train)
    errors = []
    for s in range(n_seeds):
        train = dataclasses.replace(cfg.train, seed=cfg.train.seed + s)
        tr = net_tr if st.scenario == "stage2" else train_stage1(domain, train)[0]
        net, _ = train_stage2(domain, op, tr, train)
        if keep is not None:
            keep.append(net)
        errors.append(np.abs(net(x) - ref))
    return pts, np.array(errors)


def cmd_stability(cfg: RunConfig, out: Path, n_seeds: int | None = None) -> Path:
    pts, errors = stability_study(cfg, n_seeds)
    mean, var = errors.mean(axis=0), errors.var(axis=0)
    rows = [[*map(_fmt, p), _fmt(m), _fmt(v)] for p, m, v in zip(pts, mean, var)]
    path = out / "stability.csv"
    _write_rows(path, ["x", "y", "mean_abs_error", "variance"], rows)
    print(f"stability: seeds={len(errors)} points={len(pts)} max_variance={var.max():.3e} "
          f"mean_abs_error={mean.mean():.3e}")
    return path


def cmd_inspect(path: Path) -> dict:
    net, meta = read_model(path)
    info = {
        "layer_sizes": list(net.layer_sizes),
        "activation": net.activation,
        "n_params": net.n_params,
        "param_digest": param_digest(net),
        "metadata": meta,
    }
    print(json.dumps(info, indent=2, sort_keys=True))
    return info


# -- entry point ----------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dggf", description="Deep generalized Green's function toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="JSON run configuration")
            p.add_argument("--seed", type=int, help="override train.seed")
        p.add_argument("--out", help="output directory (default: config 'out')")
        return p

    common(sub.add_parser("train-t", help="train the Stage-1 correction network"))
    p = common(sub.add_parser("train-g", help="train the Stage-2 kernel"))
    p.add_argument("--t-model", required=True)
    p = common(sub.add_parser("solve", help="construct a solution from a trained kernel"))
    p.add_argument("--g-model", required=True)
    p.add_argument("--case", help="manufactured case name")
    p.add_argument("--grid", type=int, help="evaluation grid size per axis")
    common(sub.add_parser("benchmark", help="compare DGGF with the baselines"))
    p = common(sub.add_parser("stability", help="seed-variance study of the kernel"))
    p.add_argument("--n-seeds", type=int)
    p = sub.add_parser("inspect-model", help="print a model file header")
    p.add_argument("model")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "inspect-model":
            cmd_inspect(Path(args.model))
            return 0
        cfg = load_config(args.config, args.seed)
        out = Path(args.out or cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "train-t":
            cmd_train_t(cfg, out)
        elif args.command == "train-g":
            cmd_train_g(cfg, out, Path(args.t_model))
        elif args.command == "solve":
            cmd_solve(cfg, out, Path(args.g_model), args.case, args.grid)
        elif args.command == "benchmark":
            cmd_benchmark(cfg, out)
        elif args.command == "stability":
            cmd_stability(cfg, out, args.n_seeds)
    except (ConfigError, DigestMismatch, ModelFileError, TrainingDiverged, KeyError, OSError) as exc:
        print(f"dggf {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
