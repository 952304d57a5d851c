"""Generate closed-form evaluators for the benchmark fields.

Run from the repository root::

    python3 scripts/generate_exact.py > src/magequil/benchmarks/_exact.py

The L-brick potential uses polar coordinates (r, phi) of the x-y plane;
derivatives are taken with the chain rule dr/dx = cos(phi),
dphi/dx = -sin(phi)/r, dr/dy = sin(phi), dphi/dy = cos(phi)/r, so the
emitted code evaluates phi through a branch-aware atan2 supplied at
runtime.
"""
import sympy as sp
from sympy.printing.numpy import NumPyPrinter

x, y, z, r, phi = sp.symbols("x y z r phi", real=True)


def dx(f):
    return sp.diff(f, x) + sp.cos(phi) * sp.diff(f, r) - sp.sin(phi) / r * sp.diff(f, phi)


def dy(f):
    return sp.diff(f, y) + sp.sin(phi) * sp.diff(f, r) + sp.cos(phi) / r * sp.diff(f, phi)


def dz(f):
    return sp.diff(f, z)


def curl(F):
    return [dy(F[2]) - dz(F[1]), dz(F[0]) - dx(F[2]), dx(F[1]) - dy(F[0])]


def div(F):
    return sp.simplify(dx(F[0]) + dy(F[1]) + dz(F[2]))


def problems():
    pi = sp.pi
    cube_poly = [y * (1 - y) * z * (1 - z), x * (1 - x) * z * (1 - z), x * (1 - x) * y * (1 - y)]
    cube_sine = [sp.sin(pi * y) * sp.sin(pi * z), sp.sin(pi * x) * sp.sin(pi * z), sp.sin(pi * x) * sp.sin(pi * y)]
    psi = (1 - x**2) ** 2 * (1 - y**2) ** 2 * ((1 - z) * z) ** 2 * r ** sp.Rational(2, 3) * sp.cos(
        sp.Rational(2, 3) * phi
    )
    lbrick = curl([0, 0, psi])
    return {"cube_poly": (cube_poly, False), "cube_sine": (cube_sine, False), "lbrick_singular": (lbrick, True)}


def emit(name, exprs, polar):
    printer = NumPyPrinter({"fully_qualified_modules": False})
    subs, red = sp.cse(list(exprs), optimizations="basic")
    lines = [f"def {name}(p):"]
    lines.append("    x, y, z = p[..., 0], p[..., 1], p[..., 2]")
    if polar:
        lines.append("    r, phi = _polar(x, y)")
    for s, e in subs:
        lines.append(f"    {s} = {printer.doprint(e)}")
    comps = [printer.doprint(e) for e in red]
    comps = [c if any(v in c for v in ("x", "y", "z", "r", "phi")) else f"{c} + 0.0 * x" for c in comps]
    lines.append("    return _stack(" + ", ".join(comps) + ")")
    return "\n".join(lines)


def main():
    out = [
        '"""Closed-form benchmark fields generated by scripts/generate_exact.py; do not edit."""',
        "# flake8: noqa",
        "import numpy as np",
        "from numpy import sin, cos, pi, sqrt",
        "",
        "",
        "def _stack(*c):",
        "    c = np.broadcast_arrays(*c)",
        "    return np.stack(c, axis=-1)",
        "",
        "",
        "def _polar(x, y):",
        "    # phi in (-pi/4, 7pi/4]; the cut runs through the removed quadrant x > 0, y < 0",
        "    phi = np.arctan2(y, x)",
        "    phi = np.where(phi <= -np.pi / 4, phi + 2 * np.pi, phi)",
        "    return np.sqrt(x * x + y * y), phi",
        "",
    ]
    for name, (u, polar) in problems().items():
        H = curl(u)
        j = curl(H)
        assert div(j) == 0, name
        for tag, F in (("u", u), ("H", H), ("j", j)):
            out += ["", emit(f"{name}_{tag}", [sp.sympify(c) for c in F], polar), ""]
    print("\n".join(out))


if __name__ == "__main__":
    main()
