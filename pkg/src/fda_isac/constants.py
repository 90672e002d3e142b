"""Physical constants and the default simulation parameters."""

# Rounded so that c / (2 * 2 MHz) is exactly 75 m.
SPEED_OF_LIGHT = 3.0e8

DEFAULT_CARRIER_HZ = 10e9
DEFAULT_DELTA_F_HZ = 2e6
DEFAULT_PRI_S = 60e-6
DEFAULT_PULSE_WIDTH_S = 20e-6
DEFAULT_PULSES = 200

FODC_OFFSETS = ("0", "1", "2", "3.17", "4.2", "5.2")
LINEAR_OFFSETS = ("0", "1", "2", "3", "4", "5")
