"""Physical constants (CODATA 2018) and fixed clock parameters.

Every numerical constant used elsewhere in the package lives here so that a
report can cite a single table version.
"""

CONSTANTS_VERSION = "codata2018-r1"

# CODATA 2018, exact or recommended values
C = 299_792_458.0  # m/s, exact
HBAR = 1.054_571_817e-34  # J s, exact (h / 2pi)
H = 6.626_070_15e-34  # J s, exact
E_CHARGE = 1.602_176_634e-19  # C, exact
EPS0 = 8.854_187_812_8e-12  # F/m
AMU = 1.660_539_066_60e-27  # kg
K_B = 1.380_649e-23  # J/K, exact

# isotope masses in u (AME 2016)
MASS_MG25_U = 24.985_836_96
MASS_AL27_U = 26.981_538_53
MASS_BE9_U = 9.012_183_07

# 27Al+ 1S0 <-> 3P0 clock transition
NU_AL_CLOCK = 1.121e15  # Hz

# 25Mg+ 3s 2S1/2 -> 3p 2P3/2 cycling transition
MG_LAMBDA = 279.5e-9  # m
MG_LINEWIDTH = 41.4e6  # Hz, Gamma / 2pi
MG_SATURATION_INTENSITY = 2470.0  # W/m^2

# motional Stark correction scale in the time-dilation formula
STARK_SCALE_FREQ = 400e6  # Hz

NU_RF = 59e6  # Hz

ZERO_CELSIUS = 273.15  # K


def as_dict():
    """Return the constant table as a plain mapping (for run manifests)."""
    return {k: v for k, v in globals().items() if k.isupper()}
