#!/usr/bin/env python3
"""Regenerate the seeded linear bases shipped as package data.

The file is committed; rerunning this script reproduces it bit-for-bit.
"""

from pathlib import Path

import numpy as np

SEED = 7243
K = 21
EXPRESSION_DIM = 8
CONTROL_DIM = 30

OUT = Path(__file__).resolve().parent.parent / "src" / "faceshadow" / "data" / "expression_basis.npz"


def main() -> None:
    rng = np.random.default_rng(SEED)
    # keypoints stay inside the unit cube with margin for deformation/translation
    canonical = rng.uniform(-0.7, 0.7, size=(K, 3))
    deform = rng.normal(0.0, 0.05, size=(3 * K, EXPRESSION_DIM))
    assert np.linalg.matrix_rank(deform) == EXPRESSION_DIM, "deformation basis not full rank"
    control_matrix = rng.normal(0.0, 0.5, size=(CONTROL_DIM, EXPRESSION_DIM))
    control_bias = rng.normal(0.0, 0.1, size=CONTROL_DIM)
    OUT.parent.mkdir(parents=True, exist_ok=True)
    np.savez(
        OUT,
        canonical_keypoints=canonical,
        deformation_basis=deform,
        control_matrix=control_matrix,
        control_bias=control_bias,
        seed=np.asarray(SEED),
    )
    print(f"wrote {OUT} ({OUT.stat().st_size} bytes)")


if __name__ == "__main__":
    main()
