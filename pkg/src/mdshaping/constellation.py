"""Labeled multi-dimensional constellations.

A constellation is ``M = 2**m`` points in ``N`` real dimensions, each carrying a
distinct ``m``-bit binary label. Complex dimension ``j`` is the real pair
``(2j, 2j + 1)``; for 4D formats these are the X and Y polarizations.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "LabeledConstellation",
    "FirstOrthantSet",
    "ShapingMetrics",
    "normalize",
    "make_pam",
    "make_qam",
    "make_psk",
    "make_prs64",
    "cartesian_product",
    "expand_orthant",
    "first_orthant",
    "random_first_orthant",
    "make_sp_qam",
    "metrics",
    "min_squared_distance",
    "sign_symmetry",
    "read_constellation",
    "write_constellation",
]

#: Default mean energy per complex dimension.
DEFAULT_POWER_PER_2D = 1.0


def _readonly(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


def _index_bits(n, m):
    """Binary expansion of ``0..n-1`` on ``m`` bits, MSB first."""
    idx = np.arange(n)[:, None]
    return ((idx >> np.arange(m - 1, -1, -1)) & 1).astype(np.uint8)


def _gray(n):
    n = np.asarray(n)
    return n ^ (n >> 1)


@dataclass(frozen=True, eq=False)
class LabeledConstellation:
    """Points and their binary labels.

    Parameters
    ----------
    points : array_like, shape (M, N)
        Real coordinates of the constellation points.
    labels : array_like, shape (M, m)
        Bit labels (0/1); row ``i`` labels ``points[i]``.
    power : float or None
        Declared mean energy ``E[||X||^2]`` when the constellation is
        normalized, else ``None``.
    factors : tuple of LabeledConstellation
        Non-empty when the constellation is a Cartesian product; the label of
        a product point is the concatenation of the factor labels.
    name : str
        Free-form identifier used in reports.
    """

    points: np.ndarray
    labels: np.ndarray
    power: float | None = None
    factors: tuple = field(default=())
    name: str = ""
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        lab = np.asarray(self.labels)
        if lab.ndim == 1:
            lab = lab[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0 or pts.shape[1] == 0:
            raise ValueError("points must be a non-empty (M, N) array")
        M = pts.shape[0]
        if lab.shape[0] != M:
            raise ValueError(f"{lab.shape[0]} labels for {M} points")
        m = lab.shape[1]
        if 2**m != M:
            raise ValueError(f"M={M} is not 2**m with m={m} label bits")
        if not np.all((lab == 0) | (lab == 1)):
            raise ValueError("labels must be binary")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite")
        codes = lab.astype(np.int64) @ (1 << np.arange(m - 1, -1, -1, dtype=np.int64))
        if np.unique(codes).size != M:
            raise ValueError("labels are not distinct")
        if self.power is not None:
            energy = np.mean(np.sum(pts**2, axis=1))
            if abs(energy - self.power) > 1e-12 * self.power:
                raise ValueError(f"mean energy {energy!r} does not match declared power {self.power!r}")
        object.__setattr__(self, "points", _readonly(pts, float))
        object.__setattr__(self, "labels", _readonly(lab, np.uint8))
        object.__setattr__(self, "factors", tuple(self.factors))

    @property
    def M(self):
        return self.points.shape[0]

    @property
    def N(self):
        return self.points.shape[1]

    @property
    def m(self):
        return self.labels.shape[1]

    @property
    def is_product(self):
        return len(self.factors) > 0

    @property
    def energy(self):
        """Mean symbol energy ``E[||X||^2]`` under uniform point probabilities."""
        return float(np.mean(np.sum(self.points**2, axis=1)))

    def label_strings(self):
        return ["".join(str(int(b)) for b in row) for row in self.labels]

    def label_codes(self):
        """Labels as integers, first bit most significant."""
        return self.labels.astype(np.int64) @ (1 << np.arange(self.m - 1, -1, -1, dtype=np.int64))

    def complex_symbols(self):
        """``(M, N/2)`` complex view of the points."""
        if self.N % 2:
            raise ValueError("complex view needs an even number of real dimensions")
        return self.points[:, 0::2] + 1j * self.points[:, 1::2]

    def with_points(self, points, power=None, name=None):
        """Same labels and flags, new coordinates."""
        return LabeledConstellation(
            points, self.labels, power=power, factors=self.factors,
            name=self.name if name is None else name,
        )

    def relabel(self, labels, name=None):
        return LabeledConstellation(
            self.points, labels, power=self.power,
            name=self.name if name is None else name,
        )

    def __eq__(self, other):
        if not isinstance(other, LabeledConstellation):
            return NotImplemented
        return (
            self.points.shape == other.points.shape
            and np.array_equal(self.points, other.points)
            and np.array_equal(self.labels, other.labels)
        )

    __hash__ = None

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"<LabeledConstellation{tag} M={self.M} N={self.N} m={self.m}>"


@dataclass(frozen=True, eq=False)
class FirstOrthantSet:
    """Points with strictly positive coordinates and their partial labels.

    The full orthant-symmetric constellation is obtained with
    :func:`expand_orthant`, which adds ``N`` sign bits to every label.
    """

    points: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ValueError("points must be a non-empty (K, N) array")
        lab = np.asarray(self.labels, dtype=np.uint8)
        if lab.ndim == 1 and lab.size == 0:
            lab = lab.reshape(pts.shape[0], 0)
        if lab.ndim != 2 or lab.shape[0] != pts.shape[0]:
            raise ValueError("label count must equal point count")
        if 2 ** lab.shape[1] != pts.shape[0]:
            raise ValueError("first-orthant labels must enumerate all K = 2**(m-N) points")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite")
        if np.any(pts <= 0):
            raise ValueError("first-orthant coordinates must be strictly positive")
        if lab.shape[1] and np.unique(lab, axis=0).shape[0] != lab.shape[0]:
            raise ValueError("labels are not distinct")
        object.__setattr__(self, "points", _readonly(pts, float))
        object.__setattr__(self, "labels", _readonly(lab, np.uint8))

    @property
    def K(self):
        return self.points.shape[0]

    @property
    def N(self):
        return self.points.shape[1]

    @property
    def dof(self):
        """Number of free real coordinates."""
        return self.points.size


@dataclass(frozen=True)
class ShapingMetrics:
    """Energy-variation statistics of a constellation.

    ``phi2`` holds one kurtosis per complex dimension, ``phi4`` is the
    kurtosis of the full symbol energy and ``psi`` the variance of the symbol
    energy, so that ``psi == energy * (phi4 - 1)``.
    """

    papr: float
    phi2: tuple
    phi4: float
    psi: float
    dmin2: float
    energy: float

    @property
    def phi2_mean(self):
        return float(np.mean(self.phi2))

    def as_dict(self):
        d = {"papr": self.papr, "phi4": self.phi4, "psi": self.psi, "dmin2": self.dmin2}
        for j, v in enumerate(self.phi2):
            d[f"phi2_{j + 1}"] = v
        return d


def normalize(c, power=None):
    """Scale ``c`` so that ``E[||X||^2] == power``.

    ``power`` defaults to ``N/2`` (unit energy per complex dimension).
    """
    if power is None:
        power = DEFAULT_POWER_PER_2D * c.N / 2
    if power <= 0:
        raise ValueError("power must be positive")
    e = c.energy
    if e <= 0:
        raise ValueError("cannot normalize a zero-power constellation")
    scale = np.sqrt(power / e)
    pts = c.points * scale
    # Rescale once more if rounding moved the energy noticeably.
    e2 = np.mean(np.sum(pts**2, axis=1))
    if abs(e2 - power) > 1e-13 * power:
        pts = pts * np.sqrt(power / e2)
    factors = c.factors
    if factors:
        factors = tuple(f.with_points(f.points * scale) for f in factors)
    return LabeledConstellation(pts, c.labels, power=power, factors=factors, name=c.name)


def make_pam(m_1d):
    """Gray-labeled ``2**m_1d``-PAM with levels ``L-1, L-3, ..., -(L-1)``.

    The first label bit is 0 on the positive half-axis.
    """
    L = 2**m_1d
    levels = (L - 1) - 2 * np.arange(L, dtype=float)
    labels = _index_bits(L, m_1d)[_gray(np.arange(L))]
    return levels, labels


def _cross_qam(m_2d):
    # Standard cross construction: a 2^(k+1) x 2^k rectangle whose outer
    # columns are folded onto the top and bottom rows.
    M = 2**m_2d
    if m_2d == 1:
        pts = np.array([[1.0, 0.0], [-1.0, 0.0]])
        return pts, _index_bits(2, 1)
    if m_2d == 3:
        # Rectangular 8QAM (4 x 2 grid), Gray per axis.
        li, lab_i = make_pam(2)
        lq, lab_q = make_pam(1)
        pts = np.array([[a, b] for a in li for b in lq])
        labs = np.array([np.concatenate([x, y]) for x in lab_i for y in lab_q])
        return pts, labs
    side = 3 * 2 ** ((m_2d - 3) // 2)
    levels = (side - 1) - 2 * np.arange(side, dtype=float)
    grid = np.array([[x, y] for y in levels for x in levels])
    # Drop the corners until M points remain.
    corner = side // 6
    lim = side - 1 - 2 * corner
    keep = ~((np.abs(grid[:, 0]) > lim) & (np.abs(grid[:, 1]) > lim))
    pts = grid[keep]
    if pts.shape[0] != M:
        raise ValueError(f"cross construction failed for m_2d={m_2d}")
    # Quasi-Gray: row-major order with Gray indices.
    labs = _index_bits(M, m_2d)[_gray(np.arange(M))]
    return pts, labs


def make_qam(m_2d, power=None):
    """Square (even ``m_2d``) or cross (odd ``m_2d``) QAM, normalized.

    Square sizes are the product of two Gray PAMs, so nearest neighbours differ
    in exactly one bit. The first ``m_2d/2`` bits select the in-phase level.
    """
    if not isinstance(m_2d, (int, np.integer)) or not 1 <= m_2d <= 12:
        raise ValueError(f"unsupported QAM size: m_2d={m_2d!r} (expected 1..12)")
    if m_2d % 2 == 0:
        levels, lab = make_pam(m_2d // 2)
        L = levels.size
        ii, qq = np.meshgrid(np.arange(L), np.arange(L), indexing="ij")
        ii, qq = ii.ravel(), qq.ravel()
        pts = np.column_stack([levels[ii], levels[qq]])
        labs = np.hstack([lab[ii], lab[qq]])
    else:
        pts, labs = _cross_qam(m_2d)
    name = "QPSK" if m_2d == 2 else f"{2**m_2d}QAM"
    return normalize(LabeledConstellation(pts, labs, name=name), power)


def make_psk(m_2d, power=None):
    """Gray-labeled ``2**m_2d``-PSK with the first point at angle ``pi/M``."""
    M = 2**m_2d
    ang = (2 * np.arange(M) + 1) * np.pi / M
    pts = np.column_stack([np.cos(ang), np.sin(ang)])
    labs = _index_bits(M, m_2d)[_gray(np.arange(M))]
    return normalize(LabeledConstellation(pts, labs, name=f"{M}PSK"), power)


def make_prs64(outer_fraction=0.75, power=None):
    """64-point constant-modulus 4D format by polarization ring switching.

    One polarization carries a Gray 8PSK on a ring holding ``outer_fraction``
    of the symbol energy, the other a Gray QPSK on the complementary ring.
    The first label bit selects which polarization is on the outer ring, the
    next three the 8PSK phase and the last two the QPSK phase. Every point
    has the same energy, so ``phi4 == 1``.
    """
    if not 0.5 < outer_fraction < 1:
        raise ValueError("outer_fraction must be in (0.5, 1)")
    p8, l8 = make_psk(3).points, make_psk(3).labels
    p4, l4 = make_psk(2).points, make_psk(2).labels
    ro, ri = np.sqrt(2 * outer_fraction), np.sqrt(2 * (1 - outer_fraction))
    pts, labs = [], []
    for s in (0, 1):
        for i in range(8):
            for k in range(4):
                a, b = ro * p8[i], ri * p4[k]
                pts.append(np.concatenate([a, b] if s == 0 else [b, a]))
                labs.append(np.concatenate([[s], l8[i], l4[k]]))
    name = "PRS64" if outer_fraction == 0.75 else f"PRS64-{outer_fraction:g}"
    return normalize(LabeledConstellation(np.array(pts), np.array(labs), name=name), power)


def cartesian_product(a, b):
    """``a x b`` with concatenated labels (bits of ``a`` first).

    Point ``i * M_b + j`` is ``(a_i, b_j)``. The result keeps ``(a, b)`` as its
    factors so estimators can exploit the product structure.
    """
    if a.power is not None and b.power is not None:
        if abs(a.power / a.N - b.power / b.N) > 1e-12 * max(a.power / a.N, 1e-300):
            raise ValueError("factors must share the same power per dimension")
    ia = np.repeat(np.arange(a.M), b.M)
    ib = np.tile(np.arange(b.M), a.M)
    pts = np.hstack([a.points[ia], b.points[ib]])
    labs = np.hstack([a.labels[ia], b.labels[ib]])
    power = None
    if a.power is not None and b.power is not None:
        power = float(np.mean(np.sum(pts**2, axis=1)))
    name = f"PM-{a.name}" if a.name and a.name == b.name else f"{a.name}x{b.name}"
    return LabeledConstellation(pts, labs, power=power, factors=(a, b), name=name)


def _sign_patterns(N):
    return np.array(list(itertools.product((0, 1), repeat=N)), dtype=np.uint8)


def expand_orthant(s1, power=None, name="OS"):
    """Fold a first-orthant set into all ``2**N`` orthants.

    For sign pattern ``p`` (bit 1 negates that coordinate) the folded point is
    ``s1_i * (-1)**p`` and its label is ``p`` followed by the first-orthant
    label. Points are ordered pattern-major, so the first ``K`` rows are the
    first orthant itself.
    """
    if not isinstance(s1, FirstOrthantSet):
        raise TypeError("expand_orthant expects a FirstOrthantSet")
    pats = _sign_patterns(s1.N)
    signs = 1.0 - 2.0 * pats
    pts = (signs[:, None, :] * s1.points[None, :, :]).reshape(-1, s1.N)
    labs = np.concatenate(
        [np.hstack([np.tile(p, (s1.K, 1)), s1.labels]) for p in pats]
    )
    c = LabeledConstellation(pts, labs, name=name)
    if power is not None:
        c = normalize(c, power)
    return c


def first_orthant(c):
    """Inverse of :func:`expand_orthant` for constellations it produced."""
    K = c.M // 2**c.N
    if K * 2**c.N != c.M or c.m < c.N:
        raise ValueError("constellation is too small to be orthant-symmetric")
    s1 = FirstOrthantSet(c.points[:K], c.labels[:K, c.N:])
    if expand_orthant(s1) != c:
        raise ValueError("constellation is not in expanded orthant-symmetric form")
    return s1


def random_first_orthant(m, N, rng=None, power=None):
    """Random first-orthant set for an ``m``-bit, ``N``-dimensional OS format.

    Coordinates are ``|Normal|`` draws shifted away from the axes; labels are
    the natural binary count.
    """
    if m < N:
        raise ValueError("need m >= N for an orthant-symmetric format")
    rng = np.random.default_rng(rng)
    K = 2 ** (m - N)
    pts = np.abs(rng.standard_normal((K, N))) + 0.05
    if power is None:
        power = DEFAULT_POWER_PER_2D * N / 2
    pts *= np.sqrt(power / np.mean(np.sum(pts**2, axis=1)))
    return FirstOrthantSet(pts, _index_bits(K, m - N))


# Set-partitioning of PM-16QAM. With the Gray PAM above, the parity of the
# level index on each real axis equals the XOR of that axis' two label bits.
# Constraints are over the four axis parities (XI, XQ, YI, YQ); each removes
# one magnitude bit from the label.
_SP16_RULES = {
    7: ([(0, 1, 2, 3)], [7]),
    6: ([(0, 1), (2, 3)], [3, 7]),
    5: ([(0, 1), (2, 3), (0, 2)], [3, 7, 5]),
}


def make_sp_qam(m, power=None):
    """Set-partitioned 4D QAM with ``2**m`` points.

    ``m`` in {5, 6, 7} partitions PM-16QAM along the chain
    ``Z^4 > D4 > RZ^4 > RD4`` (128SP, 64SP, 32SP-QAM); ``m = 9`` keeps the
    even-parity half of PM-32QAM (512SP-QAM).
    """
    if m in _SP16_RULES:
        parent = cartesian_product(make_qam(4), make_qam(4))
        lab = parent.labels.astype(int)
        par = lab[:, 0::2] ^ lab[:, 1::2]
        rules, drop = _SP16_RULES[m]
        keep = np.ones(parent.M, dtype=bool)
        for r in rules:
            keep &= (np.sum(par[:, list(r)], axis=1) % 2) == 0
        cols = [k for k in range(parent.m) if k not in drop]
        pts = parent.points[keep]
        labs = lab[keep][:, cols]
        return normalize(LabeledConstellation(pts, labs, name=f"{2**m}SP-QAM"), power)
    if m == 9:
        q = make_qam(5)
        parent = cartesian_product(q, q)
        step = np.min(np.abs(np.diff(np.unique(q.points[:, 0]))))
        u = np.rint((parent.points - parent.points.min()) / step).astype(int)
        keep = np.sum(u, axis=1) % 2 == 0
        pts = parent.points[keep]
        return normalize(
            LabeledConstellation(pts, _index_bits(pts.shape[0], 9), name="512SP-QAM"), power
        )
    raise ValueError(f"unsupported SP-QAM size m={m!r} (expected 5, 6, 7 or 9)")


def min_squared_distance(points):
    """Minimum squared Euclidean distance between distinct points."""
    p = np.asarray(points, dtype=float)
    best = np.inf
    for start in range(0, p.shape[0], 512):
        blk = p[start:start + 512]
        d = np.sum((blk[:, None, :] - p[None, :, :]) ** 2, axis=2)
        rows = np.arange(blk.shape[0])
        d[rows, rows + start] = np.inf
        best = min(best, float(d.min()))
    return best


def metrics(c):
    """PAPR, kurtoses, energy variance and ``dmin^2`` of ``c``."""
    if c.N % 2:
        raise ValueError("metrics need complex dimensions (even N)")
    e = np.sum(c.points**2, axis=1)
    mean_e = float(np.mean(e))
    if mean_e <= 0:
        raise ValueError("zero-power constellation")
    p2d = np.abs(c.complex_symbols()) ** 2
    # Kurtosis as 1 + variance / mean^2 keeps it >= 1 under rounding.
    mp = np.mean(p2d, axis=0)
    phi2 = tuple(float(v) for v in 1.0 + np.mean((p2d - mp) ** 2, axis=0) / mp**2)
    phi4 = float(1.0 + np.mean((e - mean_e) ** 2) / mean_e**2)
    psi = mean_e * (phi4 - 1.0)
    return ShapingMetrics(
        papr=max(float(np.max(e) / mean_e), 1.0),
        phi2=phi2,
        phi4=phi4,
        psi=psi,
        dmin2=min_squared_distance(c.points),
        energy=mean_e,
    )


def sign_symmetry(c, atol=1e-9):
    """Sign patterns that map the labeled constellation onto itself.

    Returns a list of ``(signs, perm)`` pairs: negating coordinates where
    ``signs`` is -1 sends point ``i`` to point ``perm[i]``, and the labels of
    ``i`` and ``perm[i]`` differ by the same bit mask for every ``i``. The
    identity is always included.
    """
    key = ("sign_symmetry", atol)
    if key not in c._cache:
        c._cache[key] = _sign_symmetry(c, atol)
    return c._cache[key]


def _sign_symmetry(c, atol):
    pts = c.points
    scale = max(float(np.max(np.abs(pts))), 1.0)
    keys = np.round(pts / (atol * scale)).astype(np.int64)
    lookup = {tuple(k): i for i, k in enumerate(keys)}
    out = []
    for pat in _sign_patterns(c.N):
        s = 1.0 - 2.0 * pat
        perm = np.empty(c.M, dtype=np.int64)
        ok = True
        for i, k in enumerate(keys * s.astype(np.int64)):
            j = lookup.get(tuple(k))
            if j is None:
                ok = False
                break
            perm[i] = j
        if not ok:
            continue
        mask = c.labels ^ c.labels[perm]
        if np.all(mask == mask[0]):
            out.append((s, perm))
    return out


def write_constellation(c, path):
    """Write ``c`` in the whitespace-separated exchange format."""
    path = Path(path)
    lines = [
        f"# N={c.N} M={c.M} m={c.m} normalization={'none' if c.power is None else repr(float(c.power))}",
    ]
    if c.name:
        lines.append(f"# name={c.name}")
    for lab, row in zip(c.label_strings(), c.points):
        lines.append(" ".join([lab] + [repr(float(x)) for x in row]))
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n", encoding="utf-8")
    tmp.replace(path)


def read_constellation(path):
    """Parse an exchange-format file written by :func:`write_constellation`."""
    labels, points, power, name = [], [], None, ""
    n_fields = None
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            for tok in line[1:].split():
                if tok.startswith("normalization="):
                    val = tok.split("=", 1)[1]
                    power = None if val == "none" else float(val)
                elif tok.startswith("name="):
                    name = tok.split("=", 1)[1]
            continue
        fields = line.split()
        if n_fields is None:
            n_fields = len(fields)
        if len(fields) != n_fields or len(fields) < 2:
            raise ValueError(f"{path}:{lineno}: expected {n_fields} fields, got {len(fields)}")
        lab = fields[0]
        if set(lab) - {"0", "1"}:
            raise ValueError(f"{path}:{lineno}: label {lab!r} is not a bit string")
        labels.append([int(ch) for ch in lab])
        points.append([float(x) for x in fields[1:]])
    if not points:
        raise ValueError(f"{path}: no constellation points")
    if len({len(lab) for lab in labels}) != 1:
        raise ValueError(f"{path}: labels have different lengths")
    M = len(points)
    if M & (M - 1):
        raise ValueError(f"{path}: M={M} is not a power of two")
    if len(set(map(tuple, labels))) != M:
        raise ValueError(f"{path}: duplicate labels")
    pts = np.array(points)
    if power is not None:
        energy = float(np.mean(np.sum(pts**2, axis=1)))
        if abs(energy - power) > 1e-12 * power:
            power = None
    return LabeledConstellation(pts, np.array(labels), power=power, name=name)
