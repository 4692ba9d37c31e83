"""Physical and device constants shared across the library."""

SPEED_OF_LIGHT = 299_792_458.0  # m/s

# Device time unit: 1 / (128 * 499.2 MHz) seconds, ~15.65 ps.
TICK_SECONDS = 1.0 / (128 * 499.2e6)

# 40-bit wrap-around timestamp counter.
TIMESTAMP_BITS = 40
TIMESTAMP_MASK = (1 << TIMESTAMP_BITS) - 1

# CIR accumulator, 64 MHz PRF configuration.
CIR_LEN = 1016
CIR_SAMPLE_PERIOD_S = 1.0 / (2 * 499.2e6)  # 1.0016 ns, exactly 64 ticks
CIR_SAMPLE_PERIOD_NS = CIR_SAMPLE_PERIOD_S * 1e9
TICKS_PER_CIR_SAMPLE = 64  # CIR_SAMPLE_PERIOD_S / TICK_SECONDS, exact

# TX scheduling discards the 9 least-significant timestamp bits.
TX_QUANTUM_BITS = 9
TX_QUANTUM_TICKS = 1 << TX_QUANTUM_BITS

# The radio re-arranges the accumulator so the detected first path of the
# response it locked on sits near this index.
FP_PLACEMENT_INDEX = 750

INT16_MAX = 32767
CIR_TARGET_PEAK = 10_000.0
