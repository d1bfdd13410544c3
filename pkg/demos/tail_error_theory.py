"""Why adversarial training hurts the tail class more, in closed form.

Two Gaussian classes N(+eta, I) (head) and N(-eta, I) (tail) in n dimensions,
with r times more head samples than tail.  The best linear classifier puts
equal weight on every coordinate and shifts its threshold toward the tail by
a bias that grows with log r.  Training against an L-inf adversary of budget
epsilon shrinks the effective margin from eta to eta - epsilon, so the
optimal bias grows, and the tail pays for it.

Run:  python3 demos/tail_error_theory.py
"""
from ltrobust.theory import TheoryParams, check_corollary1, monte_carlo_tail_error, optimal_bias, tail_errors

print("r    eps   b_nat   b_rob   tail robust error: natural clf / robust clf")
for r in (1, 2, 5, 10, 50):
    for eps in (0.0, 0.25, 0.5):
        p = TheoryParams(r=r, n=2, eta=1.0, epsilon=eps)
        e = tail_errors(p)
        print(f"{r:<4} {eps:<5} {optimal_bias(p, 'natural'):.4f}  {optimal_bias(p, 'robust'):.4f}  "
              f"{e.rob_of_nat:.4f} / {e.rob_of_rob:.4f}")

# The formulas are checked against brute-force sampling.
p = TheoryParams(r=5, n=2, eta=1.0, epsilon=0.5)
est, se = monte_carlo_tail_error(optimal_bias(p, "robust"), p, "robust", 200_000, seed=0)
print(f"\nr=5, eps=0.5: closed form {tail_errors(p).rob_of_rob:.4f}, Monte-Carlo {est:.4f} +- {se:.4f}")

# Adversarial training raises the tail's robust error whenever r > 1 and eps > 0.
rows = check_corollary1(TheoryParams(r, 2, 1.0, 0.5) for r in (1, 2, 5, 10))
for row in rows:
    print(f"r={row['r']:<3} extra tail robust error from adversarial training: {row['margin']:+.4f}")
