"""Behavioral model of a single-transistor-per-cell ROM CiM subarray.

A subarray stores one bit per cell. Multi-bit weights are bit-sliced across
adjacent columns (two's complement, negatively weighted sign column).
Activations enter bit-serially as unary pulse trains: each low-order chunk
of the activation fires that many wordline pulses. Rows are activated in
groups no larger than rows_per_step so the bitline discharge count stays
inside the ADC range; per-pulse counts are digitized and recombined
digitally with shift-and-add. With zero noise and no ADC clipping the whole
pipeline is exactly an integer matrix-vector product.

The same model serves SRAM-resident arrays; only cell area, density and
standby power differ.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import GeometryError, ValidationError
from .quant import qrange

MBIT = 1 << 20  # memory-style megabit


@dataclass(frozen=True)
class MacroConfig:
    """Geometry, schedule and datasheet figures of one CiM macro.

    The compute model uses the array geometry (rows/cols/ADC/schedule
    fields); the datasheet fields (capacity, area, timing, efficiency)
    feed macro_stats and the system cost model.
    """

    rows: int = 128
    cols: int = 256
    adc_count: int = 16
    adc_bits: int = 5
    rows_per_step: int = 31
    act_chunk_bits: int = 2
    weight_bits: int = 8
    cell_kind: str = "ROM"
    cell_area_um2: float = 0.014
    capacity_mbit: float = 1.2
    macro_area_mm2: float = 0.24
    inference_time_ns: float = 8.9
    ops_per_inference: int = 256
    mac_energy_eff_tops_w: float = 11.5
    standby_power_w: float = 0.0
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.cell_kind not in ("ROM", "SRAM"):
            raise ValidationError(f"cell_kind must be ROM or SRAM, got {self.cell_kind!r}")
        if self.adc_count > self.cols or self.cols % self.adc_count != 0:
            raise ValidationError("cols must be a whole multiple of adc_count")
        if self.rows_per_step < 1:
            raise ValidationError("rows_per_step must be >= 1")
        if self.act_chunk_bits not in (1, 2):
            raise ValidationError("act_chunk_bits must be 1 or 2")
        if self.cols % self.weight_bits != 0:
            raise ValidationError("weight_bits must divide the column count")
        if self.cell_kind == "ROM" and self.standby_power_w != 0.0:
            raise ValidationError("ROM arrays are non-volatile; standby power is 0")

    @property
    def logical_cols(self) -> int:
        return self.cols // self.weight_bits

    @property
    def adc_full_scale(self) -> int:
        return (1 << self.adc_bits) - 1

    @property
    def act_chunks(self) -> int:
        # activations are 8-bit unsigned; chunk width divides 8 by construction
        return 8 // self.act_chunk_bits

    @property
    def capacity_bits(self) -> int:
        return int(round(self.capacity_mbit * MBIT))

    @property
    def conversion_slot_ns(self) -> float:
        """One ADC conversion slot: the macro cycle time of the schedule."""
        return self.inference_time_ns / (self.cols / self.adc_count)


def sram_macro_config(rom: MacroConfig = None, density_ratio: float = 25.6,
                      standby_w_per_mbit: float = 5e-5) -> MacroConfig:
    """SRAM twin of a ROM macro: same compute model, lower density, leaky."""
    rom = rom or MacroConfig()
    return replace(
        rom,
        cell_kind="SRAM",
        cell_area_um2=rom.cell_area_um2 * density_ratio,
        macro_area_mm2=rom.macro_area_mm2 * density_ratio,
        standby_power_w=standby_w_per_mbit * rom.capacity_mbit,
    )


@dataclass(frozen=True)
class AdcCode:
    code: int
    clipped: bool


@dataclass
class MacroImage:
    """A programmed subarray: binary cells plus the weight column map.

    column_map rows are (logical_col, phys_start, bits): logical weight j
    occupies physical columns [phys_start, phys_start+bits), least
    significant slice first, sign slice last. ROM images are frozen after
    programming.
    """

    config: MacroConfig
    bitcells: np.ndarray
    column_map: list
    rows_used: int

    @property
    def phys_cols_used(self) -> int:
        if not self.column_map:
            return 0
        return max(start + bits for _, start, bits in self.column_map)

    def slice_signs(self) -> np.ndarray:
        """Per-physical-column signed weight of each bit slice (0 if unused)."""
        signs = np.zeros(self.config.cols, dtype=np.int64)
        for _, start, bits in self.column_map:
            for j in range(bits):
                signs[start + j] = -(1 << j) if j == bits - 1 else (1 << j)
        return signs


def program(weights: np.ndarray, config: MacroConfig = None,
            row_offset: int = 0, col_offset: int = 0,
            image: MacroImage = None, bits: int = None) -> MacroImage:
    """Bit-slice a signed weight matrix into a subarray image.

    weights is (R, C_logical) with C_logical weights per row. Passing an
    existing image co-locates another tile into spare columns of the same
    array; offsets place the tile; bits overrides the slice width for
    narrower-precision tiles. decode(program(W)) == W.
    """
    if image is not None:
        if config is not None and config != image.config:
            raise ValidationError("config does not match the existing image")
        config = image.config
    config = config or MacroConfig()
    w = np.asarray(weights, dtype=np.int64)
    if w.ndim != 2:
        raise ValidationError(f"weight matrix must be 2-D, got shape {w.shape}")
    r, c_logical = w.shape
    bits = config.weight_bits if bits is None else bits
    lo, hi = qrange(bits, signed=True)
    if w.size and (w.min() < lo or w.max() > hi):
        raise ValidationError(f"weights outside signed {bits}-bit range")
    if row_offset + r > config.rows:
        raise GeometryError(f"{r} rows at offset {row_offset} exceed {config.rows}")
    if col_offset + c_logical * bits > config.cols:
        raise GeometryError(
            f"{c_logical} logical columns at offset {col_offset} exceed "
            f"{config.cols} physical columns")

    if image is None:
        cells = np.zeros((config.rows, config.cols), dtype=np.uint8)
        column_map = []
    else:
        cells = image.bitcells.copy()
        cells.flags.writeable = True
        column_map = list(image.column_map)
        new_lo, new_hi = col_offset, col_offset + c_logical * bits
        for _, start, width in column_map:
            if start < new_hi and new_lo < start + width:
                raise GeometryError("column range overlaps an existing tile")

    twos = (w & ((1 << bits) - 1)).astype(np.uint64)  # two's complement codes
    for j in range(bits):
        cells[row_offset:row_offset + r, col_offset + j::bits][:, :c_logical] = (
            (twos >> np.uint64(j)) & np.uint64(1)).astype(np.uint8)
    for c in range(c_logical):
        column_map.append((len(column_map), col_offset + c * bits, bits))

    rows_used = max(row_offset + r, image.rows_used if image else 0)
    img = MacroImage(config=config, bitcells=cells, column_map=column_map,
                     rows_used=rows_used)
    if config.cell_kind == "ROM":
        img.bitcells.flags.writeable = False
    return img


def decode(image: MacroImage) -> np.ndarray:
    """Reconstruct the signed weight matrix from a programmed image."""
    cfg = image.config
    out = np.zeros((cfg.rows, len(image.column_map)), dtype=np.int64)
    for logical, start, bits in image.column_map:
        acc = np.zeros(cfg.rows, dtype=np.int64)
        for j in range(bits):
            weight = -(1 << j) if j == bits - 1 else (1 << j)
            acc += weight * image.bitcells[:, start + j].astype(np.int64)
        out[:, logical] = acc
    return out


def bitline_count(image: MacroImage, active_rows, wl_high, col: int,
                  rng: np.random.Generator = None) -> int:
    """Discharge count on one column for a set of pulsed rows.

    count = sum over active rows of (pulse AND stored bit). Optional
    Gaussian count noise is rounded and clamped to [0, len(active_rows)].
    """
    cfg = image.config
    active_rows = list(active_rows)
    if len(active_rows) > cfg.rows_per_step:
        raise ValidationError(
            f"{len(active_rows)} rows exceed rows_per_step={cfg.rows_per_step}")
    wl = np.asarray(wl_high, dtype=bool)
    if wl.shape != (len(active_rows),):
        raise ValidationError("wl_high must align with active_rows")
    bits = image.bitcells[active_rows, col].astype(np.int64)
    count = int((wl & (bits > 0)).sum())
    if cfg.noise_sigma > 0:
        if rng is None:
            raise ValidationError("noise_sigma > 0 requires an explicit rng")
        count += int(round(rng.normal(0.0, cfg.noise_sigma)))
        count = min(max(count, 0), len(active_rows))
    return count


def adc_quantize(count: int, config: MacroConfig) -> AdcCode:
    """Digitize a bitline count; saturates at the ADC full-scale code."""
    if count < 0:
        raise ValidationError(f"bitline count cannot be negative, got {count}")
    full = config.adc_full_scale
    return AdcCode(code=min(count, full), clipped=count > full)


@dataclass
class MacroTrace:
    """Optional per-step event capture: one row per (pulse, column)."""

    records: list = field(default_factory=list)
    clip_events: int = 0

    def log(self, step, rows, pulse, col, count, code, clipped):
        self.records.append((step, rows, pulse, col, count, code, clipped))
        if clipped:
            self.clip_events += 1

    def to_csv(self, path):
        import csv

        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["step", "rows", "pulse", "column", "count", "code", "clipped"])
            for rec in self.records:
                wr.writerow(rec)


def _chunk_values(acts: np.ndarray, config: MacroConfig) -> np.ndarray:
    """Split unsigned 8-bit activations into LSB-first chunks (chunks, R)."""
    mask = (1 << config.act_chunk_bits) - 1
    return np.stack([(acts >> (c * config.act_chunk_bits)) & mask
                     for c in range(config.act_chunks)])


def mac_mvm_batch(image: MacroImage, activations: np.ndarray,
                  rng: np.random.Generator = None,
                  trace: MacroTrace = None,
                  rows: range = None) -> np.ndarray:
    """Matrix-vector products for a batch of activation vectors.

    activations is (P, R) unsigned 8-bit over the image's used rows (or the
    explicit row range); the result is (P, C_logical) signed integers. With
    noise_sigma == 0 and no ADC clipping this equals the exact integer
    product of the decoded weights with each activation vector.
    """
    cfg = image.config
    acts = np.asarray(activations, dtype=np.int64)
    if acts.ndim == 1:
        acts = acts[None, :]
    rows = rows if rows is not None else range(image.rows_used)
    row_list = list(rows)
    if acts.shape[1] != len(row_list):
        raise ValidationError(
            f"activation length {acts.shape[1]} does not match {len(row_list)} rows")
    if acts.size and (acts.min() < 0 or acts.max() > 255):
        raise ValidationError("activations must be unsigned 8-bit")

    n_batch = acts.shape[0]
    cells = image.bitcells[row_list, :].astype(np.int64)  # (R, cols)
    chunks = _chunk_values(acts, cfg)  # (chunks, P, R)
    full = cfg.adc_full_scale
    per_chunk = np.zeros((cfg.act_chunks, n_batch, cfg.cols), dtype=np.int64)

    step = 0
    for g0 in range(0, len(row_list), cfg.rows_per_step):
        g1 = min(g0 + cfg.rows_per_step, len(row_list))
        grp_cells = cells[g0:g1]
        for c in range(cfg.act_chunks):
            vals = chunks[c, :, g0:g1]  # (P, rows in group)
            max_pulses = int(vals.max(initial=0))
            for p in range(max_pulses):
                wl = (vals > p).astype(np.int64)  # (P, rows)
                counts = wl @ grp_cells  # (P, cols)
                codes = np.minimum(counts, full)
                if cfg.noise_sigma > 0:
                    if rng is None:
                        raise ValidationError("noise_sigma > 0 requires an explicit rng")
                    jitter = np.round(rng.normal(0.0, cfg.noise_sigma, counts.shape))
                    noisy = np.clip(counts + jitter.astype(np.int64), 0, g1 - g0)
                    codes = np.minimum(noisy, full)
                if trace is not None:
                    clipped_mask = counts > full
                    for b in range(n_batch):
                        for col in range(cfg.cols):
                            trace.log(step, (g0, g1), p, col,
                                      int(counts[b, col]), int(codes[b, col]),
                                      bool(clipped_mask[b, col]))
                per_chunk[c] += codes
                step += 1

    signs = image.slice_signs()
    weighted = per_chunk * signs[None, None, :]  # (chunks, P, cols)
    shift = np.array([1 << (c * cfg.act_chunk_bits) for c in range(cfg.act_chunks)],
                     dtype=np.int64)
    combined = np.tensordot(shift, weighted, axes=(0, 0))  # (P, cols)

    out = np.zeros((n_batch, len(image.column_map)), dtype=np.int64)
    for logical, start, bits in image.column_map:
        out[:, logical] = combined[:, start:start + bits].sum(axis=1)
    return out


def mac_mvm(image: MacroImage, activations: np.ndarray,
            rng: np.random.Generator = None,
            trace: MacroTrace = None) -> np.ndarray:
    """Single matrix-vector product; see mac_mvm_batch."""
    return mac_mvm_batch(image, activations, rng=rng, trace=trace)[0]


def macro_stats(config: MacroConfig) -> dict:
    """Datasheet arithmetic: density, throughput, area efficiency, energy."""
    if config.macro_area_mm2 <= 0:
        raise ValidationError("macro area must be positive")
    if config.inference_time_ns <= 0:
        raise ValidationError("inference time must be positive")
    gops = config.ops_per_inference / config.inference_time_ns
    return {
        "density_mbit_per_mm2": config.capacity_mbit / config.macro_area_mm2,
        "gops": gops,
        "area_eff_gops_per_mm2": gops / config.macro_area_mm2,
        "energy_per_op_j": 1.0 / (config.mac_energy_eff_tops_w * 1e12),
        "standby_power_w": 0.0 if config.cell_kind == "ROM" else config.standby_power_w,
    }


def latency_cycles(image: MacroImage, activations: np.ndarray,
                   cols_used: int = None) -> int:
    """Conversion-slot count for one matrix-vector job.

    Schedule: row groups of rows_per_step, LSB-first activation chunks;
    each (group, chunk) fires max(1, highest chunk value in the group)
    pulses, and every pulse occupies ceil(cols_used / adc_count) ADC
    conversion slots. A zero chunk still costs one pulse slot.
    """
    cfg = image.config
    acts = np.asarray(activations, dtype=np.int64)
    if acts.ndim != 1:
        raise ValidationError("latency_cycles takes a single activation vector")
    row_budget = image.rows_used or cfg.rows
    if acts.shape[0] > row_budget:
        raise ValidationError("job does not fit the programmed image")
    if cols_used is None:
        cols_used = image.phys_cols_used
    slots = -(-cols_used // cfg.adc_count)  # ceil
    chunks = _chunk_values(acts, cfg)  # (chunks, R)
    cycles = 0
    for g0 in range(0, acts.shape[0], cfg.rows_per_step):
        g1 = min(g0 + cfg.rows_per_step, acts.shape[0])
        for c in range(cfg.act_chunks):
            pulses = max(1, int(chunks[c, g0:g1].max(initial=0)))
            cycles += pulses * slots
    return cycles
