"""Closed-form benchmark fields generated by scripts/generate_exact.py; do not edit."""
# flake8: noqa
import numpy as np
from numpy import sin, cos, pi, sqrt


def _stack(*c):
    c = np.broadcast_arrays(*c)
    return np.stack(c, axis=-1)


def _polar(x, y):
    # phi in (-pi/4, 7pi/4]; the cut runs through the removed quadrant x > 0, y < 0
    phi = np.arctan2(y, x)
    phi = np.where(phi <= -np.pi / 4, phi + 2 * np.pi, phi)
    return np.sqrt(x * x + y * y), phi


def cube_poly_u(p):
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    x0 = z*(z - 1)
    x1 = y*(y - 1)
    x2 = x*(x - 1)
    return _stack(x0*x1, x0*x2, x1*x2)


def cube_poly_H(p):
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    x0 = 2*y
    x1 = -2*z
    x2 = 2*x
    return _stack(x*(x - 1)*(x0 + x1), y*(-x1 - x2)*(y - 1), z*(-x0 + x2)*(z - 1))


def cube_poly_j(p):
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    x0 = y*(y - 1)
    x1 = z*(z - 1)
    x2 = x*(x - 1)
    return _stack(-2*x0 - 2*x1, -2*x1 - 2*x2, -2*x0 - 2*x2)


def cube_sine_u(p):
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    x0 = sin(pi*y)
    x1 = sin(pi*z)
    x2 = sin(pi*x)
    return _stack(x0*x1, x1*x2, x0*x2)


def cube_sine_H(p):
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    x0 = pi*x
    x1 = pi*y
    x2 = cos(x1)
    x3 = pi*z
    x4 = -cos(x3)
    x5 = cos(x0)
    return _stack(pi*(x2 + x4)*sin(x0), pi*(-x4 - x5)*sin(x1), pi*(-x2 + x5)*sin(x3))


def cube_sine_j(p):
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    x0 = sin(pi*y)
    x1 = pi**2
    x2 = 2*x1*sin(pi*z)
    x3 = sin(pi*x)
    return _stack(x0*x2, x2*x3, 2*x0*x1*x3)


def lbrick_singular_u(p):
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    r, phi = _polar(x, y)
    x0 = y**2 - 1
    x1 = x**2 - 1
    x2 = (2/3)*phi
    x3 = cos(x2)
    x4 = 2*r**(2/3)*x3
    x5 = cos(phi)
    x6 = sin(x2)
    x7 = r**(-1/3)
    x8 = (1/3)*x0*x7
    x9 = sin(phi)
    x10 = 2*z**2*(z - 1)**2
    x11 = (1/3)*x1*x7
    return _stack(x0*x1**2*x10*(x3*x8*x9 + x4*y - x5*x6*x8), -x0**2*x1*x10*(x*x4 + x11*x3*x5 + x11*x6*x9), 0 + 0.0 * x)


def lbrick_singular_H(p):
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    r, phi = _polar(x, y)
    x0 = y**2
    x1 = x0 - 1
    x2 = x1**2
    x3 = r**(2/3)
    x4 = x*x3
    x5 = (2/3)*phi
    x6 = cos(x5)
    x7 = 2*x6
    x8 = x4*x7
    x9 = z - 1
    x10 = sin(x5)
    x11 = sin(phi)
    x12 = x10*x11
    x13 = x**2
    x14 = x13 - 1
    x15 = x14*z
    x16 = r**(-1/3)
    x17 = (1/3)*x16
    x18 = x15*x17
    x19 = cos(phi)
    x20 = x19*x6
    x21 = x17*x9
    x22 = x12*x14
    x23 = x14*x20
    x24 = 4*x9
    x25 = x3*y
    x26 = x25*x7
    x27 = x10*x19
    x28 = x1*x16
    x29 = (1/3)*x28
    x30 = x27*x29
    x31 = x11*x6
    x32 = x29*x31
    x33 = x14**2
    x34 = x1*x33
    x35 = x9**2
    x36 = x3*x35
    x37 = x2*x36
    x38 = 4*x6
    x39 = (4/3)*x35
    x40 = x*x16*x2*x39
    x41 = 12*x6
    x42 = r**(-1.0)
    x43 = x14*x42
    x44 = 12*x10
    x45 = -x1
    x46 = x9**2
    x47 = -x14
    x48 = x42*x45
    x49 = x16*x47
    return _stack(x15*x2*x24*(x12*x18 + x18*x20 + x21*x22 + x21*x23 + x8*x9 + x8*z), x24*x34*z*(x26*x9 + x26*z - x30*x9 - x30*z + x32*x9 + x32*z), 2*z**2*(-x0*x33*x36*x38 + (4/3)*x1*x10*x16*x19*x33*x35*y + (1/9)*x11*x16*x45*x46*x47**2*(-x27*x48 + x31*x48 + x41*y) + (1/9)*x11*x42*x45**2*x46*x47*(x27*x49 - x31*x49 + x4*x44) - x13*x37*x38 + (1/9)*x14*x16*x19*x2*x35*(-x*x41 + x12*x43 + x20*x43) - x14*x37*x7 - 1/9*x19*x34*x35*x42*(x12*x28 + x20*x28 - x25*x44) - x22*x40 - x23*x40 - x28*x31*x33*x39*y - x34*x36*x7))


def lbrick_singular_j(p):
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    r, phi = _polar(x, y)
    x0 = y**2
    x1 = x0 - 1
    x2 = z**2
    x3 = x**2
    x4 = x3 - 1
    x5 = x4**2
    x6 = x2*x5
    x7 = r**(2/3)
    x8 = x7*y
    x9 = (2/3)*phi
    x10 = cos(x9)
    x11 = 4*x10
    x12 = x11*x8
    x13 = 12*x10
    x14 = x13*y
    x15 = z - 1
    x16 = x15**2
    x17 = x16*x5
    x18 = x17*x2
    x19 = x1*x10
    x20 = x19*x8
    x21 = 16*x20
    x22 = x16*x2
    x23 = x15*z
    x24 = x23*x5
    x25 = x1*x17
    x26 = cos(phi)
    x27 = r**(-1/3)
    x28 = sin(x9)
    x29 = x1**2
    x30 = sin(phi)
    x31 = x10*x30
    x32 = x27*x31
    x33 = (2/3)*x29
    x34 = x32*x33
    x35 = x2*x4
    x36 = x16*x35
    x37 = 8*x36
    x38 = (8/3)*x32
    x39 = x24*x29
    x40 = x1*x27
    x41 = x31*x40
    x42 = x28*x30
    x43 = x27*x4
    x44 = x42*x43
    x45 = (16/3)*x1*x22*y
    x46 = x*x45
    x47 = x10*x26
    x48 = x43*x47
    x49 = 12*x28
    x50 = x*x7
    x51 = x49*x50
    x52 = x31*x43
    x53 = x26*x28
    x54 = x43*x53
    x55 = r**(-1.0)
    x56 = x1*x55
    x57 = x30*x56
    x58 = (4/9)*x2
    x59 = x58*y
    x60 = -x4
    x61 = x15**2
    x62 = x*x13
    x63 = x55*x60
    x64 = x47*x63
    x65 = x42*x63
    x66 = x64 + x65
    x67 = x62 + x66
    x68 = -x1
    x69 = x27*x68
    x70 = 6*x10
    x71 = 3*x10
    x72 = x53*x56
    x73 = x31*x56
    x74 = (4/9)*x27
    x75 = x60**2
    x76 = x28*x7
    x77 = 6*x76
    x78 = 3*x68
    x79 = x42*x69
    x80 = x79*y
    x81 = x47*x69
    x82 = x10*x27
    x83 = x68**2
    x84 = 72*x3
    x85 = x83*x84
    x86 = 72*x0
    x87 = x75*x86
    x88 = 36*x10
    x89 = x27*x60
    x90 = x83*x89
    x91 = x69*x75
    x92 = x60*x83
    x93 = r**(-4/3)
    x94 = 12*x93
    x95 = x*x42*x94
    x96 = x26*x93
    x97 = x92*x96
    x98 = x68*x75
    x99 = x53*x94*y
    x100 = x30*x93
    x101 = x100*x98
    x102 = 24*x*x28 - x26*x28*x55*x60 + x31*x63
    x103 = -x102
    x104 = x100*x92
    x105 = 4*x97*(x*x71 + x66)
    x106 = x55*x68
    x107 = x106*x42 + x106*x47 - 24*x28*y
    x108 = -x107
    x109 = x96*x98
    x110 = x71*y
    x111 = x106*x31
    x112 = x106*x53
    x113 = x111 - x112
    x114 = r**(-2.0)
    x115 = x49*x8
    x116 = x115 + x79 + x81
    x117 = x26*x75
    x118 = x53*x89
    x119 = -x10*x27*x30*x60 + x118 + x51
    x120 = -x119
    x121 = 3*x30
    x122 = x114*x121*x92
    x123 = (1/27)*x2
    x124 = x123*x30
    x125 = 36*x76
    x126 = x30*x90
    x127 = x26*x91
    x128 = x30*x91
    x129 = x113 + x14
    x130 = 3*x127
    x131 = 24*x10
    x132 = x131*x50
    x133 = x63*x83
    x134 = x131*x8
    x135 = 3*x26
    x136 = x133*x135
    x137 = x123*x26
    x138 = x11*x50
    x139 = x16*x29
    x140 = x139*x2
    x141 = 16*x10*x50
    x142 = x23*x29
    x143 = x139*x4
    x144 = x27*x33
    x145 = x144*x6
    x146 = (8/3)*x27
    x147 = x140*x146*x3
    x148 = x146*x39
    x149 = x144*x17
    x150 = (4/3)*x140
    x151 = x*x54
    x152 = x*x52
    x153 = x72 - x73
    x154 = x*x58
    x155 = x40*x42
    x156 = x40*x47
    x157 = -x115 + x155 + x156
    x158 = x16*x26
    x159 = x4*x55
    x160 = x159*x42
    x161 = x159*x47
    x162 = x4*x76
    x163 = x16*x82
    x164 = x29*x84
    x165 = x5*x86
    x166 = x16*x88
    x167 = x29*x43
    x168 = x40*x5
    x169 = x100*x25
    x170 = x107*x61
    x171 = x119*x61
    x172 = x16*x76
    x173 = 12*x151
    x174 = x139*x173
    x175 = x16*x167*x30*x62
    x176 = 12*x155*y
    x177 = x17*x176
    x178 = x14*x158*x168
    x179 = x14*x23
    return _stack((16/3)*x0*x16*x2*x26*x27*x28*x5 - 2*x0*x18*x38 - 2*x1*x12*x6 + (8/3)*x1*x16*x2*x26*x27*x28*x5 - 2*x12*x25 - 2*x124*x61*(x101*x14 + 4*x101*(x110 + x113) + x103*x104 + x105 + x108*x109 - x114*x116*x117*x78 - x120*x122 + x62*x97 + x82*x85 + x82*x87 - x88*x90 - x88*x91 + x92*x95 - x98*x99) - 2*x137*x55*x61*(-12*x*x118*x83 - x103*x26*x90 - x106*x116*x121*x75 + x106*x117*(x134 - x31*x69 + x53*x69) + x108*x128 + x120*x136 + x125*x92 + x125*x98 + x126*x62 + 3*x126*x67 - x127*x14 - x129*x130 + x133*x30*(-x132 + x42*x89 + x47*x89) - 12*x75*x80 - x76*x85 - x76*x87) - 2*x14*x18*x7 + (16/3)*x15*x26*x27*x28*x29*x5*z + (4/3)*x16*x26*x27*x28*x29*x5 - 2*x16*x4*x57*x59*(x51 + x52 - x54) - 2*x17*x34 - 2*x18*x30*x74*(x0*x70 + x1*x71 + x72*y - x73*y) - 8/3*x18*x41 + (4/3)*x2*x26*x27*x28*x29*x5 + (8/9)*x2*x26*x55*x61*x75*(x0*x77 - x76*x78 + x80 + x81*y) - 2*x20*x37 - 2*x21*x22*x3 - 2*x21*x24 - 2*x26*x59*x60*x61*x67*x69 - 2*x34*x6 - 2*x38*x39 - 2*x44*x46 - 2*x46*x48, 2*x0*x141*x36 + 2*x1*x154*x16*x30*x43*(x14 + x153) - 2*x124*x55*(x1*x16*x26*x5*x55*(x1*x26*x27*x28 - x134 - x41) + x102*x26*x27*x60*x61*x83 - x121*x157*x17*x56 - x125*x25 - x128*x170 - x129*x130*x61 - x136*x171 - 36*x139*x162 + 3*x16*x27*x29*x30*x4*(x160 + x161 - x62) + x16*x29*x30*x4*x55*(x132 + x44 + x48) - x164*x172 - x165*x172 + x174 - x175 + x177 + x178) + 2*x137*(-x102*x104*x61 + x105*x61 - x109*x170 - x114*x135*x157*x25 + x122*x171 - x14*x169 - x143*x62*x96 - x143*x95 + x163*x164 + x163*x165 + x166*x167 + x166*x168 + 4*x169*(-x110 - x153) + x25*x99) + 2*x138*x143 + 2*x138*x29*x35 + 2*x139*x30*x55*x58*(-x151 + x152 + 3*x162 + x3*x77) + 2*x140*x26*x74*(-x*x160 - x*x161 + x3*x70 + x4*x71) + 2*x140*x62*x7 + 2*x141*x142*x4 + 2*x145*x42 + 2*x145*x47 + 2*x147*x42 + 2*x147*x47 + 2*x148*x42 + 2*x148*x47 + 2*x149*x42 + 2*x149*x47 + 2*x150*x44 + 2*x150*x48 - 2*x151*x45 + 2*x152*x45 + 2*x154*x157*x158*x4*x56 + 2*x19*x37*x50, (4/9)*z*(12*x*x10*x15*x27*x29*x30*x4*z - x127*(x111*x23 + x111*x61 - x112*x23 - x112*x61 + x14*x61 + x179) - x142*x173 - x15*x159*x26*x29*(x15*x26*x27*x28*x4 - x15*x51 - x15*x52 + x26*x27*x28*x4*z - x51*z - x52*z) - x15*x5*x57*(-x115*x15 - x115*z + x15*x155 + x15*x156 + x155*z + x156*z) - x168*x179*x26 - x174 + x175 - x176*x24 - x177 - x178 + x27*x30*x60*x83*(x23*x62 + x23*x64 + x23*x65 + x61*x62 + x61*x64 + x61*x65)))

