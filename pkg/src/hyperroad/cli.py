"""Command-line entry point: generate, build-hypergraph, pretrain, eval, query, export.

Exit codes: 0 success, 2 missing/invalid input, 3 invalid configuration,
4 numerical failure.  Failures print one ``error code=<n> kind=<k> msg=<json>``
line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import os
import sys
import tempfile
import time
from contextlib import contextmanager

import numpy as np

from . import __version__
from .config import TrainConfig, read_config_file
from .errors import ConfigError, HyperRoadError, InputError, NumericalError
from .evaluate import logistic_probe, query_similar
from .hypergraph import build_hypergraph, extract_faces, load_hypergraph, save_hypergraph
from .model import embed, load_checkpoint, prepare_inputs, save_checkpoint
from .roadnet import RoadNetwork, load_network, load_schema
from .synthgen import generate, load_spec, read_labels, write_city

log = logging.getLogger("hyperroad")

# flags exposed for every TrainConfig field except bookkeeping ones
_CONFIG_FLAGS = [f for f in dataclasses.fields(TrainConfig) if f.name != "ablations"]


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_atomic(path, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class Timer:
    def __init__(self):
        self.phases: dict[str, float] = {}

    @contextmanager
    def phase(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.phases[name] = round(time.perf_counter() - t0, 6)


def write_manifest(out_dir, config: TrainConfig | None, inputs: dict[str, str], timer: Timer,
                   command: str) -> str:
    doc = {
        "tool": "hyperroad",
        "version": __version__,
        "command": command,
        "config": config.to_dict() if config is not None else None,
        "inputs": {k: {"path": v, "sha256": sha256_file(v)} for k, v in sorted(inputs.items()) if v},
        "timings_s": timer.phases,
    }
    path = os.path.join(out_dir, "manifest.json")
    write_atomic(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def write_embeddings(path, ids, h: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for rid, row in zip(ids, h):
            fh.write(rid + "\t" + "\t".join(repr(float(v)) for v in row) + "\n")


def read_embeddings(path) -> tuple[list[str], np.ndarray]:
    ids, rows = [], []
    try:
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                try:
                    rows.append([float(v) for v in parts[1:]])
                except ValueError as exc:
                    raise InputError(f"{path}:{line_no}: bad float ({exc})") from exc
                ids.append(parts[0])
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from exc
    widths = {len(r) for r in rows}
    if len(widths) > 1:
        raise InputError(f"{path}: rows have differing widths {sorted(widths)}")
    return ids, np.array(rows, dtype=np.float64).reshape(len(rows), -1)


def _require(path, what: str) -> str:
    if path is None:
        raise InputError(f"--{what} is required")
    if not os.path.exists(path):
        raise InputError(f"{path}: no such file ({what})")
    return path


def _load_net(args) -> RoadNetwork:
    schema = load_schema(_require(args.schema, "schema")) if getattr(args, "schema", None) else None
    return load_network(_require(args.nodes, "nodes"), _require(args.edges, "edges"), schema)


def resolve_config(args, hg_k: int | None = None) -> TrainConfig:
    """Defaults, then the config file, then command-line flags."""
    values: dict = {}
    if getattr(args, "config", None):
        values.update(read_config_file(_require(args.config, "config")))
    file_ablations = list(values.pop("ablations", ()))
    for f in _CONFIG_FLAGS:
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    if values.get("K") is None and hg_k is not None:
        values["K"] = hg_k
    cfg = TrainConfig(**values)
    names = file_ablations + list(getattr(args, "ablation", None) or [])
    if names:
        cfg = cfg.with_ablations(names)
    cfg.validate()
    if hg_k is not None and cfg.K != hg_k:
        raise ConfigError(f"K={cfg.K} differs from the hypergraph's k={hg_k}")
    return cfg


def cmd_generate(args) -> int:
    spec = load_spec(_require(args.spec, "spec"))
    if args.seed is not None:
        spec.seed = args.seed
    os.makedirs(args.out, exist_ok=True)
    paths = write_city(generate(spec), args.out)
    for k, v in sorted(paths.items()):
        print(f"{k}\t{v}")
    return 0


def cmd_build_hypergraph(args) -> int:
    net = _load_net(args)
    faces = extract_faces(net)
    if not faces:
        raise InputError("network has no bounded faces; nothing to build")
    hg = build_hypergraph(net, faces, args.k, args.seed, args.cluster_features)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "hypergraph.json")
    save_hypergraph(hg, net, path)
    counts = np.bincount(hg.cluster_labels, minlength=hg.k)
    print(f"roads={net.n_roads} hyperedges={hg.n_hyperedges} k={hg.k} cluster_sizes={counts.tolist()}")
    print(f"hypergraph\t{path}")
    return 0


def cmd_pretrain(args) -> int:
    from .plotting import plot_loss_history
    from .train import pretrain, write_loss_history

    timer = Timer()
    with timer.phase("load"):
        net = _load_net(args)
        hg = load_hypergraph(_require(args.hypergraph, "hypergraph"), net)
    cfg = resolve_config(args, hg.k)
    os.makedirs(args.out, exist_ok=True)

    def progress(step, lb):
        if step == 1 or step % args.log_every == 0:
            print(f"step {step} total={lb.total:.6g} l_gr={lb.l_gr:.6g} l_hr={lb.l_hr:.6g} "
                  f"l_hc={lb.l_hc:.6g} l_ar={lb.l_ar:.6g}", flush=True)

    with timer.phase("pretrain"):
        inputs = prepare_inputs(net, hg, cfg)
        result = pretrain(net, hg, cfg, inputs, progress=progress)
    with timer.phase("write"):
        save_checkpoint(os.path.join(args.out, "checkpoint.bin"), result.params, cfg)
        write_loss_history(result.history, os.path.join(args.out, "loss.csv"))
        h, _ = embed(result.params, inputs, cfg)
        write_embeddings(os.path.join(args.out, "embeddings.tsv"), net.ids(), h)
        if result.history and not args.no_figures:
            plot_loss_history(result.history, os.path.join(args.out, "loss.png"))
    write_manifest(args.out, cfg, {"nodes": args.nodes, "edges": args.edges, "schema": args.schema,
                                   "hypergraph": args.hypergraph, "config": args.config}, timer, "pretrain")
    print(f"steps={len(result.history)} out={args.out}")
    return 0


def _embeddings_from_checkpoint(args) -> tuple[list[str], np.ndarray]:
    params, cfg = load_checkpoint(_require(args.checkpoint, "checkpoint"))
    net = _load_net(args)
    hg = load_hypergraph(_require(args.hypergraph, "hypergraph"), net)
    if params["id_table"].shape[0] != net.n_roads:
        raise InputError(f"checkpoint has {params['id_table'].shape[0]} roads, network has {net.n_roads}")
    h, _ = embed(params, prepare_inputs(net, hg, cfg), cfg)
    return net.ids(), h


def cmd_eval(args) -> int:
    from .plotting import plot_eval_report

    timer = Timer()
    with timer.phase("load"):
        if args.embeddings:
            ids, h = read_embeddings(_require(args.embeddings, "embeddings"))
        else:
            ids, h = _embeddings_from_checkpoint(args)
        label_ids, columns = read_labels(_require(args.labels, "labels"))
    if len(label_ids) != len(ids):
        raise InputError(f"label file has {len(label_ids)} rows but there are {len(ids)} embedding rows")
    if label_ids != ids:
        index = {rid: k for k, rid in enumerate(label_ids)}
        missing = [rid for rid in ids if rid not in index]
        if missing:
            raise InputError(f"label file lacks road id {missing[0]!r}")
        columns = {k: [v[index[rid]] for rid in ids] for k, v in columns.items()}
    tasks = args.task or list(columns)
    os.makedirs(args.out, exist_ok=True)
    for task in tasks:
        if task not in columns:
            raise InputError(f"label file has no column {task!r}; available: {sorted(columns)}")
        with timer.phase(f"probe_{task}"):
            report = logistic_probe(h, columns[task], args.folds, args.seed, task)
        path = os.path.join(args.out, f"report_{task}.json")
        write_atomic(path, report.dumps())
        if not args.no_figures:
            plot_eval_report(report, os.path.join(args.out, f"f1_{task}.png"))
        print(f"{task}\tmicro_f1={report.micro_f1:.4f}\tmacro_f1={report.macro_f1:.4f}"
              f"\tweighted_f1={report.weighted_f1:.4f}")
    return 0


def cmd_query(args) -> int:
    ids, h = read_embeddings(_require(args.embeddings, "embeddings"))
    if args.road not in ids:
        raise InputError(f"unknown road id {args.road!r}")
    try:
        ranked = query_similar(h, ids.index(args.road), args.top)
    except ValueError as exc:
        raise NumericalError(str(exc)) from exc
    w = csv.writer(sys.stdout, delimiter="\t", lineterminator="\n")
    w.writerow(["rank", "id", "cosine"])
    for rank, (k, score) in enumerate(ranked, start=1):
        w.writerow([rank, ids[k], f"{score:.6f}"])
    return 0


def cmd_export(args) -> int:
    ids, h = _embeddings_from_checkpoint(args)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "embeddings.tsv")
    write_embeddings(path, ids, h)
    print(f"embeddings\t{path}")
    return 0


def _add_network_args(p, hypergraph: bool = False) -> None:
    p.add_argument("--nodes", help="nodes CSV (id,lon,lat[,attr...])")
    p.add_argument("--edges", help="edges CSV (src,dst)")
    p.add_argument("--schema", help="attribute schema JSON")
    if hypergraph:
        p.add_argument("--hypergraph", help="hypergraph JSON from build-hypergraph")


def _add_config_args(p) -> None:
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--ablation", action="append", metavar="NAME",
                   help="variant switch, e.g. no_hec or 'w/o HEC', DAM-ATT, DBS (repeatable)")
    for f in _CONFIG_FLAGS:
        kind = str(f.type)
        flag = "--" + f.name.replace("_", "-")
        if kind == "bool" and f.name.startswith("no_"):
            # --no-pe switches a component off, --with-pe back on over a config file
            p.add_argument(flag, dest=f.name, action="store_const", const=True, default=None)
            p.add_argument("--with-" + f.name[3:], dest=f.name, action="store_const", const=False,
                           help=argparse.SUPPRESS)
        elif kind == "bool":
            p.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction, default=None)
        elif kind.startswith("int"):
            p.add_argument(flag, dest=f.name, type=int, default=None)
        elif kind == "float":
            p.add_argument(flag, dest=f.name, type=float, default=None)
        else:
            p.add_argument(flag, dest=f.name, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None, help=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hyperroad", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"hyperroad {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic grid city")
    p.add_argument("spec", help="grid city spec JSON")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("build-hypergraph", help="extract block faces and cluster them")
    _add_network_args(p)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--cluster-features", choices=("geometric", "size_only"), default="geometric")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_hypergraph)

    p = sub.add_parser("pretrain", help="self-supervised pretraining")
    _add_network_args(p, hypergraph=True)
    _add_config_args(p)
    p.add_argument("--log-every", type=int, default=50)
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("eval", help="5-fold logistic probe on embeddings")
    _add_network_args(p, hypergraph=True)
    p.add_argument("--checkpoint")
    p.add_argument("--embeddings", help="embeddings TSV (instead of --checkpoint)")
    p.add_argument("--labels", required=True)
    p.add_argument("--task", action="append", help="label column (repeatable; default all)")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("query", help="most similar roads by cosine similarity")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--road", required=True)
    p.add_argument("--top", type=int, default=5)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("export", help="write embeddings TSV from a checkpoint")
    _add_network_args(p, hypergraph=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)
    return parser


def _fail(code: int, kind: str, msg: str) -> int:
    print(f"error code={code} kind={kind} msg={json.dumps(msg)}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail(3, "config", str(exc))
    except NumericalError as exc:
        return _fail(4, "numerical", str(exc))
    except InputError as exc:
        return _fail(2, "input", str(exc))
    except HyperRoadError as exc:
        return _fail(exc.exit_code, "error", str(exc))
    except FileNotFoundError as exc:
        return _fail(2, "input", f"{exc.filename}: {exc.strerror}")
    except FloatingPointError as exc:
        return _fail(4, "numerical", str(exc))


if __name__ == "__main__":
    sys.exit(main())
