"""Command-line entry point: ``minaction <subcommand> ...``."""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .actionloss import gradient_check
from .config import PRESETS, ConfigKeyError, RunConfig, load_run_config, parse_seeds
from .forcebasis import BasisModel
from .io import read_json, write_csv, write_json
from .metrics import select_by_conservation, validate
from .orbitgen import Dataset, GeneratorConfig, generate_dataset, renoise
from .report import build_report
from .sindy import sindy_fit
from .stencil import noise_table
from .trainer import run_seed, sweep, train


class UsageError(Exception):
    pass


def _document(cfg: RunConfig, result, **extra) -> dict:
    doc = {"version": __version__, "run_config": cfg.to_json(), "seed": cfg.seed}
    doc.update(extra)
    doc["result"] = result
    return doc


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _load_config(args, overrides: dict | None = None) -> RunConfig:
    document = read_json(args.config) if getattr(args, "config", None) else None
    return load_run_config(getattr(args, "preset", None), document, seed=getattr(args, "seed", None),
                           overrides=overrides)


def _config_seeds(args, default: str) -> list[int]:
    if getattr(args, "seeds", None):
        return parse_seeds(args.seeds)
    if getattr(args, "config", None):
        doc = read_json(args.config)
        if "seeds" in doc:
            return [int(s) for s in doc["seeds"]]
    return parse_seeds(default)


def _load_dataset(path) -> Dataset:
    return Dataset.from_json(read_json(path))


def _say(text: str):
    print(text, flush=True)


def cmd_generate(args) -> int:
    gen = {}
    if args.system:
        gen["system"] = args.system
    if args.n_orbits is not None:
        gen["n_orbits"] = args.n_orbits
    if args.noise is not None:
        gen["noise_fraction"] = args.noise
    preset = args.preset or (f"{args.system}-default" if args.system else None)
    args.preset = preset
    cfg = _load_config(args, {"generator": gen} if gen else None)
    ds = generate_dataset(cfg.generator, cfg.seed, args.noise_seed)
    doc = ds.to_json()
    doc["run_config"] = cfg.to_json()
    doc["version"] = __version__
    write_json(args.out, doc)
    _say(f"wrote {len(ds.orbits)} {cfg.generator.system} orbits (sigma {ds.noise_sigma:.4g}) "
         f"to {args.out}")
    return 0


def cmd_noise_table(args) -> int:
    over = {}
    if args.sigma is not None:
        over["sigma_pos"] = args.sigma
    if args.dt is not None:
        over["dt"] = args.dt
    if args.strides:
        over["strides"] = [int(s) for s in args.strides.split(",")]
    if args.samples is not None:
        over["n_samples"] = args.samples
    cfg = _load_config(args, {"noise_table": over} if over else None)
    nt = cfg.noise_table
    start = time.perf_counter()
    reports = noise_table(nt.sigma_pos, nt.dt, nt.strides, nt.signal, nt.n_samples, cfg.seed)
    header = ["stride", "sigma_pos", "dt", "sigma_a_analytic", "sigma_a_empirical", "snr"]
    rows = [[r.stride, r.sigma_pos, r.dt, r.sigma_a_analytic, r.sigma_a_empirical, r.snr]
            for r in reports]
    for row in rows:
        _say("s={:<3d} analytic {:.4g}  monte carlo {:.4g}  snr {:.3g}".format(
            row[0], row[3], row[4], row[5]))
    _say(f"{time.perf_counter() - start:.2f} s")
    if args.out:
        write_csv(args.out, header, rows)
    if args.json:
        write_json(args.json, _document(cfg, [dict(zip(header, r)) for r in rows]))
    return 0


def cmd_gradcheck(args) -> int:
    cfg = _load_config(args)
    seeds = _config_seeds(args, "0..2")
    results = []
    for s in seeds:
        if args.data:
            trajs = _load_dataset(args.data).orbits[:2]
        else:
            mini = GeneratorConfig(**{**cfg.generator.to_json(), "n_orbits": 2})
            trajs = generate_dataset(mini, s).orbits
        for r in gradient_check(trajs, seeds=(s,), points=args.points,
                                library=cfg.train_config().basis()):
            results.append(r)
            _say(f"seed {r.seed} point {r.point}: relative error {r.rel_error:.3g}")
    worst = max(r.rel_error for r in results)
    ok = worst < args.tol
    if args.out:
        write_json(args.out, _document(cfg, {"points": [vars(r) for r in results],
                                             "max_rel_error": worst, "tolerance": args.tol,
                                             "passed": ok}, seeds=seeds))
    _say(f"max relative error {worst:.3g} ({'ok' if ok else 'FAILED'}, tolerance {args.tol:g})")
    return 0 if ok else 1


def _write_run(out: Path, cfg: RunConfig, model, log, data_path, extra: dict | None = None):
    out.mkdir(parents=True, exist_ok=True)
    prov = {"data": str(data_path), "data_sha256": _sha256(data_path)}
    write_json(out / "model.json", _document(cfg, model, **prov))
    if log is not None and log.records:
        write_csv(out / "trainlog.csv", log.csv_header(), log.csv_rows())
        write_json(out / "milestones.json", _document(cfg, {**log.milestone_json(), **(extra or {})},
                                                      **prov))


def cmd_train(args) -> int:
    cfg = _load_config(args)
    ds = _load_dataset(args.data)

    def progress(rec):
        if args.verbose and (rec.epoch % 10 == 0 or rec.epoch == 1):
            _say(f"epoch {rec.epoch:4d} loss {rec.loss.total:.5g} R {rec.selectivity:.3g} "
                 f"C_gate {rec.concentration:.3f}")

    model, log = train(ds, cfg.train_config(), progress)
    _write_run(Path(args.out), cfg, model, log, args.data)
    fin = log.final
    _say(f"dominant {model.library.labels[int(np.argmax(fin.gates))]} "
         f"R {fin.selectivity:.3g} C_gate {fin.concentration:.3f} "
         f"milestones {log.onset}/{log.sparse}/{log.frozen}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    seeds = _config_seeds(args, "0..9")
    ds = _load_dataset(args.data)
    out = Path(args.out)
    jobs = args.jobs or os.cpu_count() or 1

    def progress(o):
        _say(f"seed {o.seed}: {o.label or '-'} sigma_H {o.sigma_H} "
             f"{'error: ' + o.error if o.error else ''}".rstrip())

    result = sweep(ds, cfg.train_config(), seeds, cfg.validation, jobs, progress)
    for o in result.outcomes:
        seed_cfg = load_run_config(document=cfg.to_json(), seed=o.seed, environ={})
        if o.model is not None:
            _write_run(out / f"seed_{o.seed}", seed_cfg, o.model, o.log, args.data)
    write_json(out / "sweep.json", _document(cfg, result, seeds=seeds, data=str(args.data),
                                             data_sha256=_sha256(args.data)))
    if result.verdict is not None:
        v = result.verdict
        _say(f"verdict {v.label} margin {v.margin}")
    return 0


def cmd_validate(args) -> int:
    doc = read_json(args.model)
    model = BasisModel.from_json(doc["result"] if "result" in doc else doc)
    if args.config is None and "run_config" in doc:
        cfg = load_run_config(document=doc, seed=args.seed)
    else:
        cfg = _load_config(args)
    ds = _load_dataset(args.data)
    res = validate(model, ds, cfg.validation)
    out = args.out or str(Path(args.model).with_name("validate.json"))
    write_json(out, _document(cfg, res, model=str(args.model), data=str(args.data),
                              data_sha256=_sha256(args.data)))
    p = "-" if res.kepler is None else f"{res.kepler.p:.4f}"
    _say(f"{res.calibration.label}: theta_opt {res.calibration.theta_opt:.4f} p {p} "
         f"sigma_H {res.sigma_H:.4g}")
    return 0


def cmd_select(args) -> int:
    doc = read_json(args.sweep)
    sweep_doc = doc["result"]
    entries = [(o["selected_basis_index"], o["sigma_H"]) for o in sweep_doc["seeds"]
               if o.get("selected_basis_index") is not None and o.get("sigma_H") is not None]
    verdict = select_by_conservation(entries, sweep_doc.get("labels"))
    cfg = load_run_config(document=doc, environ={})
    if args.out:
        write_json(args.out, _document(cfg, verdict, sweep=str(args.sweep)))
    margin = "undefined" if verdict.margin is None else f"{verdict.margin:.3f}"
    _say(f"verdict {verdict.label} (index {verdict.basis_index}) margin {margin}"
         + (" [tie]" if verdict.tie else ""))
    return 0


def cmd_sindy(args) -> int:
    over = {}
    if args.stride is not None:
        over["stride"] = args.stride
    if args.ensemble is not None:
        over["n_boot"] = args.ensemble
    if args.threshold is not None:
        over["threshold"] = args.threshold
    cfg = _load_config(args, {"sindy": over} if over else None)
    sc = cfg.sindy
    seeds = _config_seeds(args, "0..9")
    base = _load_dataset(args.data)
    fits = []
    for s in seeds:
        r = sindy_fit(renoise(base, s), sc.stride, sc.threshold, sc.n_boot, seed=s)
        fits.append({"noise_seed": s, **r.to_json()})
        _say(f"noise seed {s}: {r.labels[r.identified_basis]} coefficient {r.gm_estimate:.3f} "
             f"({r.wall_time * 1e3:.1f} ms)")
    hits = [f for f in fits if f["identified_basis"] == 0]
    coeffs = [f["gm_estimate"] for f in hits] or [float("nan")]
    run = {"mode": "ensemble" if sc.n_boot else ("naive" if sc.stride == 1 else "wide"),
           "stride": sc.stride, "n_boot": sc.n_boot, "threshold": sc.threshold,
           "identified": len(hits), "n_seeds": len(fits),
           "coefficient_range": [min(coeffs), max(coeffs)],
           "max_wall_time": max(f["wall_time"] for f in fits), "fits": fits}
    write_json(args.out, _document(cfg, {"runs": [run]}, seeds=seeds, data=str(args.data)))
    _say(f"{run['mode']}: target basis identified {len(hits)}/{len(fits)}")
    return 0


def cmd_report(args) -> int:
    path = build_report(args.sweep_dir, args.out)
    _say(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="minaction", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--config", help="RunConfig JSON, or any output embedding one")
        sp.add_argument("--preset", choices=sorted(PRESETS))
        if seed:
            sp.add_argument("--seed", type=int)

    sp = sub.add_parser("generate", help="simulate a noisy orbit dataset")
    common(sp)
    sp.add_argument("--system", choices=["kepler", "hooke"])
    sp.add_argument("--n-orbits", type=int)
    sp.add_argument("--noise", type=float, help="noise as a fraction of the median semi-major axis")
    sp.add_argument("--noise-seed", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("noise-table", help="stencil noise: closed form vs Monte Carlo")
    common(sp)
    sp.add_argument("--sigma", type=float)
    sp.add_argument("--dt", type=float)
    sp.add_argument("--strides")
    sp.add_argument("--samples", type=int)
    sp.add_argument("--out", help="CSV path")
    sp.add_argument("--json", help="JSON path")
    sp.set_defaults(func=cmd_noise_table)

    sp = sub.add_parser("gradcheck", help="forward-mode gradient vs finite differences")
    common(sp, seed=False)
    sp.add_argument("--data")
    sp.add_argument("--seeds")
    sp.add_argument("--points", type=int, default=3)
    sp.add_argument("--tol", type=float, default=1e-4)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("train", help="train one seed")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--verbose", action="store_true")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("sweep", help="train, calibrate and validate several seeds")
    common(sp, seed=False)
    sp.add_argument("--data", required=True)
    sp.add_argument("--seeds")
    sp.add_argument("--jobs", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("validate", help="calibrate, fit periods and score conservation")
    common(sp)
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("select", help="conservation verdict over a sweep")
    sp.add_argument("--sweep", required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_select)

    sp = sub.add_parser("sindy", help="sparse regression baseline over noise seeds")
    common(sp, seed=False)
    sp.add_argument("--data", required=True)
    sp.add_argument("--stride", type=int)
    sp.add_argument("--ensemble", type=int)
    sp.add_argument("--threshold", type=float)
    sp.add_argument("--seeds")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_sindy)

    sp = sub.add_parser("report", help="Markdown summary and CSV series for a sweep directory")
    sp.add_argument("--sweep-dir", required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigKeyError, UsageError) as exc:
        print(f"minaction: {exc}", file=sys.stderr)
        return 2
    except (ValueError, ArithmeticError, OSError, KeyError, json.JSONDecodeError,
            np.linalg.LinAlgError) as exc:
        print(f"minaction: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
