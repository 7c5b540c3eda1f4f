"""Smoke test for the assouad_lab extension module.

Build and install first, e.g. `maturin develop -m crates/py/Cargo.toml`.
"""

import json
import math

import assouad_lab as al


def main():
    pts = al.four_corner(8)
    assert len(pts) == 256

    grid = [(x, y) for x in range(-16, 16) for y in range(-16, 16)]
    assert al.assouad_exponent(grid, 5, [1, 2], [2, 3]) == 2.0
    assert abs(al.assouad_exponent(pts, 8, [1, 2], [2, 4]) - 1.0) < 1e-12

    ex = al.projection_exponents(pts, 8, [0.0, math.pi / 3])
    assert len(ex) == 2 and all(0.0 <= e <= 1.0 for e in ex)

    r = al.norm_ratio([0, 5, 9], [1.0, 1.0, 1.0], 10)
    assert abs(r - 2.0) < 1e-12

    profile = json.loads(al.branching_profile(list(range(256)), 8, 4))
    assert profile["R"] == [16, 16]

    try:
        al.assouad_exponent(grid, 5, [9], [1])
    except ValueError:
        pass
    else:
        raise AssertionError("expected ValueError for scales finer than the grid")

    print("smoke test passed")


if __name__ == "__main__":
    main()
