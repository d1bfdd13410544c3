"""The same effect with a trained model instead of formulas.

A two-class linear softmax is fit by full-batch gradient descent on the
binary Gaussian data, once on clean inputs and once on PGD examples.  As the
imbalance ratio grows, the tail's clean accuracy drops for both, and the
adversarially trained model ends up with the weaker tail under attack.

Run:  python3 demos/logistic_tail_gap.py        (about half a minute)
"""
from ltrobust.theory import run_logistic_experiment

rows = run_logistic_experiment(irs=(1, 2, 5), eta=1.0, eps=0.5, train_size=10_000, test_size=10_000, seed=0)
print("IR   training   head clean  tail clean  head robust  tail robust")
for row in rows:
    for kind in ("nt", "at"):
        print(f"{row['ir']:<4g} {kind.upper():<10} {row[f'{kind}_clean_head']:>10.1f}  {row[f'{kind}_clean_tail']:>10.1f}"
              f"  {row[f'{kind}_rob_head']:>11.1f}  {row[f'{kind}_rob_tail']:>11.1f}")
