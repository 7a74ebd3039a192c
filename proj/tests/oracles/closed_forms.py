#!/usr/bin/env python3
"""High-precision evaluation of the closed-form expected values frozen into the
unit tests. Run by hand; the printed digits are pasted into the test sources."""
from mpmath import mp, mpf, exp, log, sqrt

mp.dps = 40
vals = {
    "egu [0.5,1.5]x[0.2,-0.3] eta=0.1 [0]": mpf("0.5") * exp(mpf("-0.02")),
    "egu [0.5,1.5]x[0.2,-0.3] eta=0.1 [1]": mpf("1.5") * exp(mpf("0.03")),
    "incorrect egu theta=2 g=1 eta=0.5": 2 * exp(-1),
    "correct egu theta=2 g=1 eta=0.5": 2 * exp(mpf("-0.5")),
    "relent u=2 v=1": 2 * log(2) - 1,
    "adagrad one step g=1 eps=1e-8": 1 / (1 + mpf("1e-8")),
    "gain normalized +": exp(mpf("0.01")),
    "gain normalized -": exp(mpf("-0.01")),
    "gain unnormalized p=2 g=.5 m=.4 gp=1e-4": 2 * exp(mpf("2e-5")),
    "scale normalized cos=1 gs=1e-3": exp(mpf("0.001")),
    "quadratic diag(4,1) loss at (1,1)": mpf("2.5"),
    "rosenbrock dim2 at 0 loss": mpf(1),
}
for k, v in vals.items():
    print(f"{k:45s} {mp.nstr(v, 20)}")
