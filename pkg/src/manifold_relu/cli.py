"""Command-line entry point (``manifold-relu``)."""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys

import numpy as np

from .analysis import ArchSpec, covering_log_bound, theorem_arch
from .assembler import assemble, write_manifest
from .atlas import build_atlas
from .exceptions import ManifoldReluError, PreconditionError, ResourceError
from .harness import emit_csv, regression_experiment, scaling_study, summarize_regression, sup_error
from .manifolds import load_manifold_spec
from .network import load_network, save_network
from .targets import make_target

EXIT_OK, EXIT_PRECONDITION, EXIT_RESOURCE, EXIT_IO = 0, 2, 3, 4


def _floats(text):
    return [float(t) for t in text.split(",") if t.strip()]


def _ints(text):
    return [int(t) for t in text.split(",") if t.strip()]


def _setup(args):
    m, opts = load_manifold_spec(args.manifold)
    atlas = build_atlas(m, r=opts.get("r"), seed=opts.get("seed", args.seed),
                        margin=opts.get("margin", 0.3))
    f = make_target(args.target, m, s=args.s, alpha=args.alpha, holder_scale=args.holder_scale)
    return m, atlas, f


def _target_flags(p):
    p.add_argument("--target", required=True, help="built-in id, expr:<text>, or expression file")
    p.add_argument("--s", type=int, default=1)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--holder-scale", type=float, default=None)


def _read_points(path):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if rows:
        try:
            [float(v) for v in rows[0]]
        except ValueError:
            rows = rows[1:]
    return np.array([[float(v) for v in r] for r in rows], dtype=np.float64)


def _write(text, out):
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_build(args):
    m, atlas, f = _setup(args)
    asm = assemble(f, atlas, args.eps, clip=args.clip, seed=args.seed)
    save_network(asm.network, args.out)
    write_manifest(asm, args.target, args.manifest or args.out + ".manifest.json")
    meta = asm.meta
    print(json.dumps({"charts": atlas.C_M, "L": meta.depth_L, "p": meta.width_p, "K": meta.nonzeros_K,
                      "kappa": meta.weight_bound_kappa, "out": args.out}))
    return EXIT_OK


def cmd_eval(args):
    net = load_network(args.net)
    X = _read_points(args.points)
    if X.size == 0:
        X = np.zeros((0, net.input_dim))
    Y = net(X) if X.shape[0] else np.zeros((0, net.output_dim))
    cols = ["output"] if net.output_dim == 1 else [f"output_{j}" for j in range(net.output_dim)]
    lines = [",".join(cols)] + [",".join(repr(float(v)) for v in row) for row in Y]
    _write("\r\n".join(lines) + "\r\n", args.out)
    return EXIT_OK


def cmd_verify(args):
    m, opts = load_manifold_spec(args.manifold)
    f = make_target(args.target, m, s=args.s, alpha=args.alpha)
    net = load_network(args.net)
    rep = sup_error(net, f, m, args.n, args.seed, eps_requested=args.eps if args.eps else math.nan)
    if args.out:
        emit_csv([rep], args.out)
    else:
        cols = list(rep.__dataclass_fields__)
        print(",".join(cols))
        print(",".join(repr(getattr(rep, c)) if isinstance(getattr(rep, c), float) else str(getattr(rep, c))
                       for c in cols))
    return EXIT_OK


def cmd_scaling(args):
    m, atlas, f = _setup(args)
    rows, fit = scaling_study(f, m, _floats(args.eps), seed=args.seed, atlas=atlas, n_eval=args.n)
    emit_csv(rows, args.out, plot=("eps", "K"))
    print(json.dumps(fit, sort_keys=True))
    return EXIT_OK


def cmd_covering(args):
    arch = ArchSpec(args.L, args.p, args.K, 1.0, args.kappa)
    print(repr(covering_log_bound(args.delta, arch, args.B)))
    return EXIT_OK


def cmd_arch(args):
    spec = theorem_arch(args.n, args.s, args.alpha, args.d, R=args.R)
    print(json.dumps(spec.as_dict(), sort_keys=True))
    return EXIT_OK


def cmd_regress(args):
    m, atlas, f = _setup(args)
    rows = regression_experiment(f, m, _ints(args.ns), args.sigma, seed=args.seed, n_seeds=args.seeds,
                                 atlas=atlas)
    emit_csv(rows, args.out, plot=("n", "mse_refit"))
    print(json.dumps(summarize_regression(rows), sort_keys=True))
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="manifold-relu", description="Sparse ReLU approximation on embedded manifolds")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="assemble a network and save it")
    p.add_argument("--manifold", required=True)
    _target_flags(p)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--clip", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--manifest", default=None)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("eval", help="evaluate a saved network on CSV points")
    p.add_argument("--net", required=True)
    p.add_argument("--points", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="measure sup and RMS error on fresh samples")
    p.add_argument("--net", required=True)
    p.add_argument("--manifold", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--s", type=int, default=1)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("scaling", help="eps sweep with size fits")
    p.add_argument("--manifold", required=True)
    _target_flags(p)
    p.add_argument("--eps", default="0.4,0.2,0.1,0.05")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_scaling)

    p = sub.add_parser("covering", help="log covering-number bound")
    p.add_argument("--L", type=int, required=True)
    p.add_argument("--p", type=int, required=True)
    p.add_argument("--K", type=int, required=True)
    p.add_argument("--kappa", type=float, required=True)
    p.add_argument("--B", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.set_defaults(func=cmd_covering)

    p = sub.add_parser("arch", help="architecture sizes for a sample size")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--s", type=int, required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--R", type=float, default=1.0)
    p.set_defaults(func=cmd_arch)

    p = sub.add_parser("regress", help="noisy regression experiment")
    p.add_argument("--manifold", required=True)
    _target_flags(p)
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--ns", default="200,800,3200")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_regress)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ResourceError as exc:
        print(f"resource cap: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except (PreconditionError, ValueError) as exc:
        print(f"precondition: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except OSError as exc:
        print(f"io: {exc}", file=sys.stderr)
        return EXIT_IO
    except ManifoldReluError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
