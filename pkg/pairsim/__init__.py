__version__ = "0.4.0"

REPETITION_RATE_HZ = 4.09e9
PERIOD_PS = 1e12 / REPETITION_RATE_HZ  # ~244.5 ps
SPEED_OF_LIGHT = 299792458.0

# time-bin layout inside one clock period, in ps
BIN_CENTERS_PS = (40.0, 120.0, 200.0)
GUARD_CENTERS_PS = (80.0, 160.0)
GUARD_WIDTH_PS = 10.0
TIME_BIN_DELAY_PS = 80.0

# source defaults
PUMP_WAVELENGTH_NM = 769.78
PUMP_FWHM_HZ = 243e9
CRYSTAL_LENGTH_M = 0.01
POLING_PERIOD_M = 18.3e-6
FILTER_FWHM_HZ = 82e9
FILTER_ORDER = 3
ITU_SPACING_HZ = 100e9

# key-rate constants
BASIS_RECONCILIATION_Q = 0.81
ERROR_CORRECTION_F = 1.1

# detector saturation (3 dB count rates of the two SNSPDs)
RATE_3DB_ALICE_HZ = 15.1e6
RATE_3DB_BOB_HZ = 16.0e6
