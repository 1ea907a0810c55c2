"""Benchmark the numba Gibbs kernels against the numpy fallback.

Runs identical sweeps through both backends on a synthetic corpus, checks
the trajectories are bit-identical, and reports per-sweep timings. The
package itself picks a backend at import time (TOPICSUM_NO_NUMBA=1 forces
the fallback); this script times both in one process.

Usage: python benchmarks/bench_gibbs.py [--docs 200] [--doc-len 80]
       [--k 20] [--vocab 2000] [--sweeps 50]
"""

import argparse
import time

import numpy as np

from topicsum import gibbs


def build_state(rng, n_docs, doc_len, k, vocab_size):
    n_tokens = n_docs * doc_len
    doc_ids = np.repeat(np.arange(n_docs, dtype=np.int64), doc_len)
    word_ids = rng.integers(5, vocab_size, size=n_tokens, dtype=np.int64)
    z = rng.integers(0, k, size=n_tokens, dtype=np.int64)
    n_dk = np.zeros((n_docs, k), dtype=np.int64)
    n_kw = np.zeros((k, vocab_size), dtype=np.int64)
    n_k = np.zeros(k, dtype=np.int64)
    np.add.at(n_dk, (doc_ids, z), 1)
    np.add.at(n_kw, (z, word_ids), 1)
    np.add.at(n_k, z, 1)
    return doc_ids, word_ids, z, n_dk, n_kw, n_k


def run(sweep_fn, rng_seed, n_docs, doc_len, k, vocab_size, sweeps):
    rng = np.random.default_rng(rng_seed)
    doc_ids, word_ids, z, n_dk, n_kw, n_k = build_state(
        rng, n_docs, doc_len, k, vocab_size)
    # one warm-up sweep outside the timer (numba compiles here)
    sweep_fn(z, doc_ids, word_ids, n_dk, n_kw, n_k, 0.5, 0.1, vocab_size,
             rng.random(z.shape[0]))
    t0 = time.perf_counter()
    for _ in range(sweeps):
        sweep_fn(z, doc_ids, word_ids, n_dk, n_kw, n_k, 0.5, 0.1, vocab_size,
                 rng.random(z.shape[0]))
    elapsed = time.perf_counter() - t0
    return elapsed / sweeps, z, n_kw


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--docs", type=int, default=200)
    parser.add_argument("--doc-len", type=int, default=80)
    parser.add_argument("--k", type=int, default=20)
    parser.add_argument("--vocab", type=int, default=2000)
    parser.add_argument("--sweeps", type=int, default=50)
    args = parser.parse_args()

    n_tokens = args.docs * args.doc_len
    print(f"corpus: {args.docs} docs x {args.doc_len} tokens "
          f"({n_tokens} total), k={args.k}, |V|={args.vocab}")
    print(f"package backend at import: {gibbs.backend()}")

    per_np, z_np, kw_np = run(gibbs.train_sweep_numpy, 7, args.docs,
                              args.doc_len, args.k, args.vocab, args.sweeps)
    print(f"numpy fallback : {per_np * 1e3:9.2f} ms/sweep "
          f"({per_np * 1e9 / n_tokens:7.1f} ns/token)")

    if gibbs.train_sweep_numba is None:
        print("numba          : unavailable")
        return
    per_nb, z_nb, kw_nb = run(gibbs.train_sweep_numba, 7, args.docs,
                              args.doc_len, args.k, args.vocab, args.sweeps)
    print(f"numba @njit    : {per_nb * 1e3:9.2f} ms/sweep "
          f"({per_nb * 1e9 / n_tokens:7.1f} ns/token)")
    print(f"speedup        : {per_np / per_nb:9.1f}x")

    identical = np.array_equal(z_np, z_nb) and np.array_equal(kw_np, kw_nb)
    print(f"trajectories bit-identical: {identical}")
    if not identical:
        raise SystemExit("backend mismatch: trajectories diverged")


if __name__ == "__main__":
    main()
