"""Command line interface.

Exit codes: 0 success, 1 validation error, 2 acceptance threshold not met,
3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import analysis, experiments, signals
from .io import (
    FormatError,
    parse_config,
    read_csv_matrix,
    save_state,
    load_state,
    write_csv_matrix,
)
from .network import init_state

EXIT_OK, EXIT_INVALID, EXIT_THRESHOLD, EXIT_IO = 0, 1, 2, 3


class ThresholdFailure(Exception):
    pass


def _add_network_flags(p):
    g = p.add_argument_group("network")
    g.add_argument("--config", help="JSON config file; flags override it")
    g.add_argument("--gamma-sq", type=float)
    g.add_argument("--eta", type=float)
    g.add_argument("--beta", type=float)
    g.add_argument("--step", type=float, help="Euler step of the dynamics")
    g.add_argument("--tol", type=float)
    g.add_argument("--max-iters", type=int)
    g.add_argument("--u-init", choices=["zero", "warm"])
    g.add_argument("--activation", choices=["clip", "sparse"])
    g.add_argument("--sparse-T", type=float, dest="sparse_T")
    g.add_argument("--sparse-lambda", type=float)
    g.add_argument("--init-seed", type=int)


def _run_config(args, output_dir, **extra):
    keys = ["gamma_sq", "eta", "beta", "step", "tol", "max_iters", "u_init",
            "activation", "sparse_T", "sparse_lambda", "init_seed"]
    overrides = {k: getattr(args, k, None) for k in keys}
    overrides.update(extra)
    overrides["output_dir"] = str(output_dir)
    return parse_config(args.config, overrides)


def _parent(path):
    return Path(path).resolve().parent


def cmd_gen(args):
    if args.samples < 1 or args.dim < 1:
        raise ValueError("dim and samples must be positive")
    spec = signals.SourceSpec.random_uniform(args.dim, args.seed, (args.b_min, args.b_max))
    batch = signals.generate_uniform_sources(spec, args.samples)
    write_csv_matrix(batch.raw, args.out, header=args.header)
    if args.standardized_out:
        write_csv_matrix(batch.standardized, args.standardized_out, header=args.header)
    if args.scaled_out:
        write_csv_matrix(batch.scaled, args.scaled_out, header=args.header)


def cmd_mix(args):
    S = read_csv_matrix(args.input, header=args.header)
    d = S.shape[0]
    if args.matrix:
        model = signals.MixingModel(read_csv_matrix(args.matrix))
    else:
        model = signals.random_mixing(args.rows or d, d, args.seed)
    m = signals.mix(model, S)
    write_csv_matrix(m, args.out, header=args.header)
    if args.matrix_out:
        write_csv_matrix(model.A, args.matrix_out)


def cmd_whiten(args):
    m = read_csv_matrix(args.input, header=args.header)
    x, tr = signals.whiten_batch(m, args.dim or m.shape[0])
    write_csv_matrix(x, args.out, header=args.header)
    if args.transform_out:
        d = Path(args.transform_out)
        d.mkdir(parents=True, exist_ok=True)
        write_csv_matrix(tr.W_pre, d / "W_pre.csv")
        write_csv_matrix(tr.mu_m[None, :], d / "mu_m.csv")


def cmd_separate(args):
    run = _run_config(args, _parent(args.out), checkpoint_interval=args.checkpoint,
                      eval_window=args.window, epochs=args.epochs)
    X = read_csv_matrix(args.input, header=args.header)
    ref = read_csv_matrix(args.reference, header=args.header) if args.reference else None
    if ref is not None and ref.shape[1] != X.shape[1]:
        raise ValueError("reference and input need the same number of samples")
    state = load_state(args.state_in) if args.state_in else init_state(X.shape[0], run.network)
    if state.W.shape[1] != X.shape[0]:
        raise ValueError("state does not match the input dimension")
    if args.log:
        Path(args.log).unlink(missing_ok=True)
    for _ in range(run.epochs):
        res = experiments.run_online(
            X, run.network, state=state, reference=ref,
            checkpoint_interval=run.checkpoint_interval, eval_window=run.eval_window,
            log_path=args.log,
        )
        state = res.state
    write_csv_matrix(res.Y, args.out, header=args.header)
    if args.state_out:
        save_state(state, args.state_out)
    print(json.dumps({"samples": int(state.t), "D": state.D.tolist(),
                      "unconverged_samples": res.unconverged}))


def cmd_eval(args):
    Y = read_csv_matrix(args.outputs, header=args.header)
    S = read_csv_matrix(args.reference, header=args.header)
    if Y.shape != S.shape:
        raise ValueError(f"outputs {Y.shape} and reference {S.shape} differ in shape")
    if args.window:
        Y, S = Y[:, -args.window:], S[:, -args.window:]
    report = {
        "sir": analysis.sir(Y, S).to_dict(),
        "alignment": analysis.align_outputs(Y, S).to_dict(),
    }
    text = json.dumps(report, indent=2)
    if args.json_out:
        Path(args.json_out).write_text(text + "\n")
    print(text)


def cmd_demo_uniform(args):
    run = _run_config(args, args.out_dir, dim=args.dim, samples=args.samples,
                      checkpoint_interval=args.checkpoint, eval_window=args.window)
    s = experiments.demo_uniform(
        run.dim, run.samples, args.seed, run.output_dir, run.network,
        checkpoint_interval=run.checkpoint_interval, eval_window=run.eval_window,
    )
    print(f"final mean SIR {s['final_mean_sir_db']:.2f} dB "
          f"(>= {experiments.UNIFORM_SIR_THRESHOLD_DB} dB: {'pass' if s['checks']['sir'] else 'FAIL'})")
    print(f"gains D = {np.round(s['D'], 4).tolist()}, target {s['D_target'][0]:.4f} "
          f"+- {experiments.UNIFORM_D_TOLERANCE}: {'pass' if s['checks']['gains'] else 'FAIL'}")
    if not s["passed"]:
        raise ThresholdFailure("uniform-source demo missed its acceptance thresholds")


def cmd_demo_images(args):
    if len(args.images) != 3:
        raise ValueError("demo-images takes exactly three PGM images")
    run = _run_config(args, args.out_dir, inputs=args.images, epochs=args.epochs,
                      checkpoint_interval=args.checkpoint, eval_window=args.window)
    experiments.load_images(run.inputs)
    s = experiments.demo_images(
        run.inputs, run.output_dir, args.seed, run.epochs, run.network,
        checkpoint_interval=run.checkpoint_interval, eval_window=run.eval_window,
    )
    print(f"per-image SIR {np.round(s['sir_db'], 2).tolist()} dB, mean {s['mean_sir_db']:.2f} dB "
          f"(threshold {experiments.IMAGE_SIR_THRESHOLD_DB} dB, reference value 30 dB)")
    if not s["passed"]:
        raise ThresholdFailure("image demo missed its SIR threshold")


def cmd_check_theorem(args):
    if args.trials < 1 or args.max_dim < 2:
        raise ValueError("need trials >= 1 and max-dim >= 2")
    seeds = np.random.SeedSequence(args.seed).generate_state(args.workers)
    share = [args.trials // args.workers + (i < args.trials % args.workers) for i in range(args.workers)]
    with ThreadPoolExecutor(args.workers) as pool:
        parts = pool.map(lambda a: analysis.theorem_sweep(a[0], int(a[1]), args.max_dim), zip(share, seeds))
    results = [r for part in parts for r in part]
    violations = sum(not c.holds for _, c in results)
    mismatched = sum(c.tight != c.is_signed_permutation for _, c in results)
    tight = sum(c.tight for _, c in results)
    print(json.dumps({"trials": len(results), "bound_violations": violations,
                      "tight_cases": tight, "certificate_mismatches": mismatched}))
    if violations or mismatched:
        raise ThresholdFailure("theorem bound check failed")


def build_parser():
    p = argparse.ArgumentParser(prog="bsm", description="Bounded similarity matching source separation")
    sub = p.add_subparsers(dest="command", required=True)

    def csv_opts(sp):
        sp.add_argument("--header", action="store_true", help="CSV files carry a header line")

    sp = sub.add_parser("gen", help="generate uniform bounded sources")
    sp.add_argument("--dim", type=int, required=True)
    sp.add_argument("--samples", type=int, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--b-min", type=float, default=2.0)
    sp.add_argument("--b-max", type=float, default=7.0)
    sp.add_argument("--out", required=True)
    sp.add_argument("--standardized-out")
    sp.add_argument("--scaled-out")
    csv_opts(sp)
    sp.set_defaults(func=cmd_gen)

    sp = sub.add_parser("mix", help="mix sources linearly")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=1)
    sp.add_argument("--rows", type=int, help="number of mixtures (default: number of sources)")
    sp.add_argument("--matrix", help="CSV mixing matrix to use instead of a random one")
    sp.add_argument("--matrix-out")
    csv_opts(sp)
    sp.set_defaults(func=cmd_mix)

    sp = sub.add_parser("whiten", help="mean-remove and whiten mixtures")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--dim", type=int)
    sp.add_argument("--transform-out", help="directory for W_pre.csv and mu_m.csv")
    csv_opts(sp)
    sp.set_defaults(func=cmd_whiten)

    sp = sub.add_parser("separate", help="run the online network over whitened inputs")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--reference", help="standardized true sources, for SIR in the log")
    sp.add_argument("--log", help="JSON-lines run log")
    sp.add_argument("--checkpoint", type=int, default=1000)
    sp.add_argument("--window", type=int, default=2000)
    sp.add_argument("--epochs", type=int, default=1)
    sp.add_argument("--state-in")
    sp.add_argument("--state-out")
    csv_opts(sp)
    _add_network_flags(sp)
    sp.set_defaults(func=cmd_separate)

    sp = sub.add_parser("eval", help="SIR and alignment of outputs against reference sources")
    sp.add_argument("--outputs", required=True)
    sp.add_argument("--reference", required=True)
    sp.add_argument("--window", type=int, help="evaluate only the last WINDOW samples")
    sp.add_argument("--json-out")
    csv_opts(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("demo-uniform", help="uniform-source separation experiment")
    sp.add_argument("--dim", type=int, default=10)
    sp.add_argument("--samples", type=int, default=200_000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out-dir", default="runs/demo-uniform")
    sp.add_argument("--checkpoint", type=int, default=1000)
    sp.add_argument("--window", type=int, default=2000)
    _add_network_flags(sp)
    sp.set_defaults(func=cmd_demo_uniform)

    sp = sub.add_parser("demo-images", help="separate three mixed PGM images")
    sp.add_argument("images", nargs="+")
    sp.add_argument("--out-dir", default="runs/demo-images")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--epochs", type=int, default=3)
    sp.add_argument("--checkpoint", type=int, default=1000)
    sp.add_argument("--window", type=int, default=2000)
    _add_network_flags(sp)
    sp.set_defaults(func=cmd_demo_images)

    sp = sub.add_parser("check-theorem", help="randomized check of the BSM optimality bound")
    sp.add_argument("--trials", type=int, default=100)
    sp.add_argument("--max-dim", type=int, default=5)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(func=cmd_check_theorem)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except ThresholdFailure as e:
        print(f"threshold not met: {e}", file=sys.stderr)
        return EXIT_THRESHOLD
    except FormatError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
