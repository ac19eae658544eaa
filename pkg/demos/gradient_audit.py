"""Finite-difference audit of every block's gradients.

Run: python demos/gradient_audit.py [tiny|small]
"""
import sys

from evolift.gradcheck import block_gradient_errors

profile = sys.argv[1] if len(sys.argv) > 1 else "tiny"
results = block_gradient_errors(profile)
for name, r in results.items():
    print(f"{name:20s} rel err {r['max_rel_error']:.1e}  values {r['n_values']:6d}  {r['seconds']:.1f}s")
print("worst:", max(r["max_rel_error"] for r in results.values()))
