"""What it means for the engine to differentiate its own gradients.

The adversarial part of training penalizes the critic when the norm of its
input gradient drifts from one. That penalty is itself a loss, so the
optimizer needs gradients OF a gradient. This script shows the two halves:
first the finite-difference audit that every op and the composed networks
pass, then a tiny worked example where the second-order gradient has a
closed form we can print next to the engine's answer.

Run:  python3 demos/gradient_audit.py  (~10 s)
"""

import numpy as np

from hsunmix import autodiff as ad
from hsunmix.autodiff import Tensor, backward, grad_of
from hsunmix.verification import run_gradcheck_suite


def main():
    print("1. Finite-difference audit (10 trials per check for speed;")
    print("   the test suite runs 100).")
    results, elapsed = run_gradcheck_suite(trials=10, seed=0)
    worst = max(results, key=lambda r: r.max_rel)
    print(f"   {sum(r.passed for r in results)}/{len(results)} checks pass "
          f"in {elapsed:.1f}s; worst relative error {worst.max_rel:.2e} "
          f"({worst.name})")

    print("2. A gradient penalty with a known derivative.")
    print("   score(x) = w . x   =>   ||grad_x score|| = ||w||, and")
    print("   d/dw (||w|| - 1)^2 = 2 (||w|| - 1) w / ||w||")
    rng = np.random.default_rng(3)
    w = Tensor(rng.standard_normal(5), requires_grad=True)
    x = Tensor(rng.standard_normal(5), requires_grad=True)

    score = ad.dot(w, x)
    (gx,) = grad_of(score, [x], create_graph=True)
    penalty = ad.pow_const(ad.sub(ad.l2norm(gx), 1.0), 2.0)
    backward(penalty)

    nrm = np.linalg.norm(w.data)
    closed = 2.0 * (nrm - 1.0) * w.data / nrm
    print(f"   engine : {np.array2string(w.grad.data, precision=6)}")
    print(f"   closed : {np.array2string(closed, precision=6)}")
    print(f"   max abs difference {np.abs(w.grad.data - closed).max():.2e}")

    print("3. Ops without a second-order rule refuse, loudly.")
    ad.register_op("example_halfstep", twice_differentiable=False)
    y = ad._node("example_halfstep", np.maximum(x.data, 0), (x,),
                 lambda g: (g,))
    try:
        ad.check_second_order(y)
    except ad.NotTwiceDifferentiableError as e:
        print(f"   NotTwiceDifferentiableError: {e}")


if __name__ == "__main__":
    main()
