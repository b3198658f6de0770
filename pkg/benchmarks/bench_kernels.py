"""Times the compiled kernels against their plain-numpy fallbacks.

Both implementations of each kernel do the same arithmetic in the same
order, so this also cross-checks their outputs. JIT compilation happens in
a warm-up call outside the timed region. Run from the repo root:

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --samples 500000 --repeats 5
"""
import argparse
import time

import numpy as np

from crossrec import kernels


def parse_args():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--users", type=int, default=2000)
    parser.add_argument("--items", type=int, default=1000)
    parser.add_argument("--dim", type=int, default=32)
    parser.add_argument("--samples", type=int, default=100_000,
                        help="training triples per bpr_epoch call")
    parser.add_argument("--queries", type=int, default=2000,
                        help="leave-one-out rows per loo_ranks call")
    parser.add_argument("--candidates", type=int, default=1000,
                        help="candidate list length per row")
    parser.add_argument("--repeats", type=int, default=3,
                        help="timed repeats; the minimum is reported")
    parser.add_argument("--seed", type=int, default=0)
    return parser.parse_args()


def bench_bpr(impl, arrays, repeats):
    user_emb, item_emb, users, pos, neg = arrays
    times = []
    out = None
    for _ in range(repeats):
        ue, ie = user_emb.copy(), item_emb.copy()
        started = time.perf_counter()
        loss = impl(ue, ie, users, pos, neg, 0.05, 0.01)
        times.append(time.perf_counter() - started)
        out = (loss, ue, ie)
    return min(times), out


def bench_loo(impl, arrays, repeats):
    item_emb, candidates, queries = arrays
    times = []
    out = None
    for _ in range(repeats):
        started = time.perf_counter()
        out = impl(item_emb, candidates, queries)
        times.append(time.perf_counter() - started)
    return min(times), out


def main():
    args = parse_args()
    if args.candidates > args.items:
        raise SystemExit("--candidates cannot exceed --items")
    rng = np.random.default_rng(args.seed)

    bpr_arrays = (
        rng.normal(0.0, 0.1, size=(args.users, args.dim)),
        rng.normal(0.0, 0.1, size=(args.items, args.dim)),
        rng.integers(0, args.users, size=args.samples, dtype=np.int64),
        rng.integers(0, args.items, size=args.samples, dtype=np.int64),
        rng.integers(0, args.items, size=args.samples, dtype=np.int64),
    )
    loo_arrays = (
        rng.normal(size=(args.items, args.dim)),
        np.stack([rng.permutation(args.items)[:args.candidates]
                  for _ in range(args.queries)]).astype(np.int64),
        rng.normal(size=(args.queries, args.dim)),
    )

    np_bpr, np_loo = kernels.numpy_impls()
    try:
        nb_bpr, nb_loo = kernels.numba_impls()
    except ImportError:
        nb_bpr = nb_loo = None
        print("numba not installed; timing the numpy fallback only")
    print(f"backend resolved at import: {kernels.BACKEND}")
    print(f"bpr_epoch: {args.samples} triples, {args.users} users, "
          f"{args.items} items, dim {args.dim}")
    print(f"loo_ranks: {args.queries} rows x {args.candidates} candidates, "
          f"dim {args.dim}\n")

    if nb_bpr is not None:
        # warm-up compiles outside the timed region
        wu, wi = bpr_arrays[0][:8].copy(), bpr_arrays[1][:8].copy()
        idx = np.zeros(4, dtype=np.int64)
        nb_bpr(wu, wi, idx, idx, idx, 0.05, 0.01)
        nb_loo(loo_arrays[0], loo_arrays[1][:2], loo_arrays[2][:2])

    t_np, out_np = bench_bpr(np_bpr, bpr_arrays, args.repeats)
    line = f"bpr_epoch   numpy {t_np:8.3f}s"
    if nb_bpr is not None:
        t_nb, out_nb = bench_bpr(nb_bpr, bpr_arrays, args.repeats)
        diff = max(abs(out_np[0] - out_nb[0]),
                   float(np.abs(out_np[1] - out_nb[1]).max()),
                   float(np.abs(out_np[2] - out_nb[2]).max()))
        line += f"   numba {t_nb:8.3f}s   speedup {t_np / t_nb:6.1f}x" \
                f"   max |diff| {diff:.2e}"
    print(line)

    t_np, out_np = bench_loo(np_loo, loo_arrays, args.repeats)
    line = f"loo_ranks   numpy {t_np:8.3f}s"
    if nb_loo is not None:
        t_nb, out_nb = bench_loo(nb_loo, loo_arrays, args.repeats)
        line += f"   numba {t_nb:8.3f}s   speedup {t_np / t_nb:6.1f}x" \
                f"   ranks equal: {bool(np.array_equal(out_np, out_nb))}"
    print(line)


if __name__ == "__main__":
    main()
