"""Frozen reference values.

Each constant was produced by an independent symbolic computation (see
test_reference_values.py, which re-derives them with sympy) and is copied here
so the numerical tests do not depend on the oracle at run time.
"""
import math

# f = -1 on (0,1), psi = -0.01: free arcs x^2/2 - a x meet the contact set at a = sqrt(0.02)
VI_CONTACT = 0.14142135623730950
VI_U_AT_01 = -0.0091421356237309505
VI_REACTION = 0.71715728752538099

# Green function of -Laplace on the unit ball in R^3, c3 = 1/(4 pi)
GREEN_025 = 0.23873241463784300
GREEN_05 = 0.079577471545947668
GREEN_075 = 0.026525823848649223
HALF_GREEN_05 = 0.039788735772973834

# continuity-matched sandwich radii for n = 5
SANDWICH_A5 = 0.0078949213665543197
SANDWICH_B5 = 0.015666159634676977

# 4 pi * int_{log 2}^inf s^(-3/2) ds
ORSINA_MASS = 30.187498684044698

# |x(1-x)/2|_{H^1_0} on (0,1)
PARABOLA_H10 = 0.28867513459481288

POLE_VOLUME_M100 = 4.0 / 3.0 * math.pi * 0.005**3
