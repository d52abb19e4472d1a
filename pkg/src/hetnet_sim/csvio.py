"""CSV formats: channel dumps, group-LASSO instances, S-WMMSE traces.

Floats are written with ``repr``, the shortest decimal string that parses
back to the same double.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .grouplasso import QcGroupLassoInstance
from .network import ChannelSet

CHANNEL_HEADER = ["k", "i", "l", "q", "row", "col", "re", "im"]
INSTANCE_HEADER = ["section", "i", "j", "k", "re", "im"]
TRACE_HEADER = ["iter", "objective_p1_nats", "sum_rate_nats", "penalty", "active_blocks_total", "wall_ms"]


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_channels_csv(channels: ChannelSet, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CHANNEL_HEADER)
        for idx in np.ndindex(channels.h.shape):
            z = channels.h[idx]
            writer.writerow([*idx, fmt(z.real), fmt(z.imag)])


def read_channels_csv(path) -> ChannelSet:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if next(reader) != CHANNEL_HEADER:
            raise ValueError(f"{path}: not a channel dump")
        rows = [r for r in reader if r]
    idx = np.array([[int(x) for x in r[:6]] for r in rows])
    shape = tuple(idx.max(axis=0) + 1)
    h = np.zeros(shape, dtype=complex)
    for r, ix in zip(rows, idx):
        h[tuple(ix)] = complex(float(r[6]), float(r[7]))
    return ChannelSet(h)


def write_instance_csv(instance: QcGroupLassoInstance, path) -> None:
    Q, I, M = instance.dims
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(INSTANCE_HEADER)
        writer.writerow(["dims", Q, I, M, "", ""])
        writer.writerow(["lam", "", "", "", fmt(instance.lam), ""])
        for q, p in enumerate(instance.P):
            writer.writerow(["P", q, "", "", fmt(p), ""])
        for (r, c), z in np.ndenumerate(instance.J):
            writer.writerow(["J", r, c, "", fmt(z.real), fmt(z.imag)])
        for (i, q, m), z in np.ndenumerate(instance.d):
            writer.writerow(["d", i, q, m, fmt(z.real), fmt(z.imag)])


def read_instance_csv(path) -> QcGroupLassoInstance:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if next(reader) != INSTANCE_HEADER:
            raise ValueError(f"{path}: not a group-LASSO instance")
        rows = [r for r in reader if r]
    dims = next(r for r in rows if r[0] == "dims")
    Q, I, M = (int(x) for x in dims[1:4])
    J = np.zeros((Q * M, Q * M), dtype=complex)
    d = np.zeros((I, Q, M), dtype=complex)
    P = np.zeros(Q)
    lam = 0.0
    for r in rows:
        tag = r[0]
        if tag == "lam":
            lam = float(r[4])
        elif tag == "P":
            P[int(r[1])] = float(r[4])
        elif tag == "J":
            J[int(r[1]), int(r[2])] = complex(float(r[4]), float(r[5]))
        elif tag == "d":
            d[int(r[1]), int(r[2]), int(r[3])] = complex(float(r[4]), float(r[5]))
        elif tag != "dims":
            raise ValueError(f"{path}: unknown section {tag!r}")
    return QcGroupLassoInstance(J=J, d=d, lam=lam, P=P)


def write_trace_csv(trace, path, record_timing: bool = True) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_HEADER)
        for it, obj, rate, pen, active, wall in trace.rows():
            writer.writerow([it, fmt(obj), fmt(rate), fmt(pen), active,
                             fmt(wall) if record_timing else ""])


def read_csv_dicts(path) -> list:
    with open(Path(path), newline="") as fh:
        return list(csv.DictReader(fh))
