"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N] [--full]

Each compiled kernel runs at the shapes a default-size model sees in
training (batch of 16 segments, ~60 input rows each, width 512/768).
``--full`` also times a complete optimizer step of the default model
under each backend; the matmuls there go to BLAS either way.
"""

import argparse
import timeit

import numpy as np

from mental_perceiver import kernels


def kernel_cases(dtype=np.float32):
    rng = np.random.default_rng(0)
    r = lambda *s: rng.standard_normal(s).astype(dtype)
    x, g, b = r(960, 768), r(1, 768), r(1, 768)
    _, xhat, rstd = kernels._kernels_py.layer_norm_fwd(x, g, b, 1e-5)
    scores = r(32, 960)
    probs = kernels._kernels_py.softmax_rows(scores)
    w, gr = r(4_000_000), r(4_000_000)
    m, vv = np.zeros_like(w), np.zeros_like(w)
    return {
        "layer_norm fwd 960x768": lambda be: be.layer_norm_fwd(x, g, b, 1e-5),
        "layer_norm bwd 960x768": lambda be: be.layer_norm_bwd(x, xhat, rstd, g),
        "softmax bwd 32x960": lambda be: be.softmax_rows_bwd(probs, scores),
        "adamw 4M params": lambda be: be.adamw_update(w, gr, m, vv, 1e-3, 0.9, 0.999, 1e-8,
                                                      0.01, 0.1, 0.001),
    }


def train_step_case():
    from mental_perceiver.corpus import SynthSpec, generate_synthetic, segment_all, split_records
    from mental_perceiver.losses import batch_loss
    from mental_perceiver.model import MentalPerceiver, ModelConfig
    from mental_perceiver.numerics import value_and_grad
    from mental_perceiver.trainer import AdamState, TrainConfig, adamw_step, priors_from_records

    recs = generate_synthetic(SynthSpec(20, 20, seed=7))
    batch = segment_all(split_records(recs, "train"))[:16]
    labels = [s.label for s in batch]
    model = MentalPerceiver(ModelConfig(), priors_from_records(recs))
    cfg, state = TrainConfig(), AdamState()

    def step(_be):
        _, tape = value_and_grad(lambda P: batch_loss(
            model.forward_samples(P, [(s.text, s.audio) for s in batch]), labels)[2],
            model.params)
        adamw_step(model.params, tape.grads, state, cfg)

    return step


def best_of(fn, repeat, number=3):
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--full", action="store_true", help="also time a default-size train step")
    args = ap.parse_args()
    names = kernels.available_backends()
    if "cython" not in names:
        print("compiled extension not built; only the numpy fallback is available")
    cases = kernel_cases()
    if args.full:
        cases["train step (default model, batch 16)"] = train_step_case()
    print(f"{'case':<40}" + "".join(f"{n:>12}" for n in names) + f"{'speedup':>10}")
    for label, fn in cases.items():
        times = {}
        for name in names:
            kernels.use_backend(name)
            be = kernels.get_backend(name)
            number = 1 if label.startswith("train") else 3
            times[name] = best_of(lambda: fn(be), args.repeat, number)
        row = f"{label:<40}" + "".join(f"{times[n] * 1e3:>10.2f}ms" for n in names)
        if len(names) == 2:
            row += f"{times['python'] / times['cython']:>9.2f}x"
        print(row)


if __name__ == "__main__":
    main()
