"""Representational similarity analysis.

Builds stimulus x stimulus representational dissimilarity matrices (RDMs) from
activation matrices, compares them by Spearman correlation of their strictly
lower triangles, and wraps the statistics used downstream: label-permutation
nulls, stimulus-bootstrap difference tests, Mann-Kendall layer trends,
split-half vertex selection, and a disk searchlight over flattened cortical
coordinates.

Dissimilarity is 1 - Pearson by default (scale-invariant, the field's usual
choice); plain Euclidean distance is available via ``metric="euclidean"`` and
the choice always travels with the Rdm. Rows with zero variance have no
defined correlation distance: their entries are stored as NaN and every
comparison reports how many pairs it had to exclude.

All resampling draws per-replicate generators from counter-based seed lists,
so results are reproducible and independent of evaluation order.
"""

import csv
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps
from scipy.spatial import cKDTree

MATRIX_MAGIC = b"ADVMAT01"


# ----------------------------------------------------------------------
# domain types
# ----------------------------------------------------------------------

@dataclass
class ActivationMatrix:
    """K stimuli x U units of activity, with ids and a source tag."""

    stim_ids: list
    unit_ids: list
    values: np.ndarray
    source: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.stim_ids), len(self.unit_ids)):
            raise ValueError(f"activation matrix shape {self.values.shape} does not "
                             f"match {len(self.stim_ids)} stimuli x {len(self.unit_ids)} units")
        if np.isnan(self.values).any():
            raise ValueError(f"activation matrix {self.source!r} contains NaN values")
        if len(set(self.stim_ids)) != len(self.stim_ids):
            raise ValueError("duplicate stimulus ids")

    @property
    def n_stimuli(self):
        return len(self.stim_ids)


@dataclass
class Rdm:
    """Symmetric stimulus dissimilarity matrix; NaN marks undefined entries."""

    stim_ids: list
    values: np.ndarray
    metric: str = "correlation"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        k = len(self.stim_ids)
        if self.values.shape != (k, k):
            raise ValueError(f"RDM shape {self.values.shape} does not match {k} stimuli")
        defined = ~np.isnan(self.values)
        sym = defined & defined.T
        if not np.array_equal(self.values[sym], self.values.T[sym]):
            raise ValueError("RDM is not symmetric")
        if np.any(self.values[defined] < 0):
            raise ValueError("RDM has negative entries")
        if np.any(np.diag(self.values) != 0.0):
            raise ValueError("RDM diagonal must be zero")

    @property
    def n_undefined_rows(self):
        k = len(self.stim_ids)
        off = ~np.eye(k, dtype=bool)
        return int(np.sum(np.isnan(self.values[off]).reshape(k, k - 1).all(axis=1))) if k > 1 else 0


@dataclass
class VertexGeometry:
    """Vertex ids with flattened-surface 2D coordinates in millimetres."""

    vertex_ids: list
    coords: np.ndarray                 # (V, 2)
    hemispheres: list = None           # optional per-vertex tag

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.shape != (len(self.vertex_ids), 2):
            raise ValueError(f"geometry coords shape {self.coords.shape} does not match "
                             f"{len(self.vertex_ids)} vertex ids")
        if not np.isfinite(self.coords).all():
            raise ValueError("geometry coordinates must be finite")
        if len(set(self.vertex_ids)) != len(self.vertex_ids):
            raise ValueError("duplicate vertex ids")
        if self.hemispheres is not None and len(self.hemispheres) != len(self.vertex_ids):
            raise ValueError("hemisphere tags do not match vertex count")

    def __len__(self):
        return len(self.vertex_ids)


# ----------------------------------------------------------------------
# RDM construction and comparison
# ----------------------------------------------------------------------

def compute_rdm(acts, metric="correlation"):
    """Pairwise dissimilarity between stimulus rows.

    ``correlation``: 1 - Pearson r; rows with zero variance get NaN entries
    (their correlation is undefined) which downstream comparisons exclude.
    ``euclidean``: plain L2 distance between rows, always defined.
    """
    x = acts.values
    k, u = x.shape
    if u < 2:
        raise ValueError(f"need at least 2 units to build an RDM, got {u}")
    if metric == "correlation":
        centered = x - x.mean(axis=1, keepdims=True)
        norms = np.sqrt(np.sum(centered * centered, axis=1))
        flat = norms == 0.0
        safe = np.where(flat, 1.0, norms)
        unit = centered / safe[:, None]
        r = np.clip(unit @ unit.T, -1.0, 1.0)
        d = 1.0 - r
        d[flat, :] = np.nan
        d[:, flat] = np.nan
    elif metric == "euclidean":
        sq = np.sum(x * x, axis=1)
        d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
        d = np.sqrt(np.maximum(d2, 0.0))
    else:
        raise ValueError(f"unknown RDM metric {metric!r}")
    np.fill_diagonal(d, 0.0)
    d = np.where(np.eye(k, dtype=bool), 0.0, (d + d.T) / 2.0)  # enforce exact symmetry
    return Rdm(list(acts.stim_ids), d, metric=metric)


def average_ranks(v):
    """Ranks 1..n with ties assigned the average of their positions."""
    v = np.asarray(v)
    order = np.argsort(v, kind="stable")
    sv = v[order]
    boundary = np.empty(len(v), dtype=bool)
    if len(v):
        boundary[0] = True
        boundary[1:] = sv[1:] != sv[:-1]
    group = np.cumsum(boundary) - 1
    counts = np.bincount(group) if len(v) else np.array([], dtype=np.int64)
    ends = np.cumsum(counts)
    starts = ends - counts + 1
    avg = (starts + ends) / 2.0
    ranks = np.empty(len(v))
    ranks[order] = avg[group]
    return ranks


def pearson(x, y):
    """Pearson correlation; NaN when either input has zero variance."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.array_equal(x, y):
        return 1.0 if np.ptp(x) > 0 else float("nan")
    xc = x - x.mean()
    yc = y - y.mean()
    nx = np.sqrt(np.sum(xc * xc))
    ny = np.sqrt(np.sum(yc * yc))
    if nx == 0.0 or ny == 0.0:
        return float("nan")
    return float(np.clip(np.dot(xc, yc) / (nx * ny), -1.0, 1.0))


def spearman(x, y):
    """Spearman rank correlation with average ranks for ties."""
    return pearson(average_ranks(x), average_ranks(y))


def _lower_triangle(values):
    k = values.shape[0]
    i, j = np.tril_indices(k, k=-1)
    return values[i, j]


def _spearman_lower(a_values, b_values, drop_mask=None):
    """Spearman over the strictly-lower triangles, excluding NaN (and masked) pairs.

    Returns (rho, n_used, n_excluded).
    """
    a = _lower_triangle(a_values)
    b = _lower_triangle(b_values)
    keep = ~(np.isnan(a) | np.isnan(b))
    if drop_mask is not None:
        keep &= ~drop_mask
    excluded = int(np.sum(~keep))
    a, b = a[keep], b[keep]
    if a.size < 2:
        return float("nan"), int(a.size), excluded
    return spearman(a, b), int(a.size), excluded


@dataclass
class RdmComparison:
    rho: float
    n_pairs: int
    n_excluded: int


def compare_rdms(a, b):
    """Spearman similarity of two RDMs over their strictly-lower triangles.

    Pairs undefined in either RDM (zero-variance stimuli) are excluded and
    counted in the result.
    """
    if a.stim_ids != b.stim_ids:
        raise ValueError("RDMs cover different stimuli (ids or order differ)")
    rho, used, excluded = _spearman_lower(a.values, b.values)
    return RdmComparison(rho=rho, n_pairs=used, n_excluded=excluded)


@dataclass
class SimilarityPair:
    r_re_an: float
    r_re_ai: float
    metadata: dict = field(default_factory=dict)


def similarity_pair(re, an, ai, metric="correlation"):
    """(R_RE-AN, R_RE-AI) for one layer or ROI."""
    rdm_re = compute_rdm(re, metric=metric)
    rdm_an = compute_rdm(an, metric=metric)
    rdm_ai = compute_rdm(ai, metric=metric)
    cmp_an = compare_rdms(rdm_re, rdm_an)
    cmp_ai = compare_rdms(rdm_re, rdm_ai)
    return SimilarityPair(
        r_re_an=cmp_an.rho, r_re_ai=cmp_ai.rho,
        metadata={"sources": {"re": re.source, "an": an.source, "ai": ai.source},
                  "metric": metric,
                  "excluded_pairs": {"re_an": cmp_an.n_excluded, "re_ai": cmp_ai.n_excluded}})


# ----------------------------------------------------------------------
# resampling statistics
# ----------------------------------------------------------------------

@dataclass
class PermutationTest:
    observed: float
    p_value: float
    null: np.ndarray
    metadata: dict = field(default_factory=dict)


def permutation_null(re, x, n_perm=1000, seed=0, metric="correlation"):
    """Label-permutation null for the similarity between re and x.

    Each replicate shuffles x's stimulus-label assignment (equivalently,
    applies one permutation to the rows and columns of x's RDM) and
    recomputes the similarity. One-sided p with the plus-one estimator:
    p = (1 + #{null >= observed}) / (n_perm + 1); never 0, never above 1.
    """
    if re.stim_ids != x.stim_ids:
        raise ValueError("activation matrices cover different stimuli")
    rdm_re = compute_rdm(re, metric=metric)
    rdm_x = compute_rdm(x, metric=metric)
    observed, _, _ = _spearman_lower(rdm_re.values, rdm_x.values)
    k = len(re.stim_ids)
    null = np.empty(n_perm)
    for i in range(n_perm):
        perm = np.random.default_rng([seed, i]).permutation(k)
        shuffled = rdm_x.values[np.ix_(perm, perm)]
        null[i], _, _ = _spearman_lower(rdm_re.values, shuffled)
    p = (1.0 + float(np.sum(null >= observed))) / (n_perm + 1.0)
    meta = {"n_perm": n_perm, "seed": seed, "metric": metric}
    if n_perm < 100:
        meta["warning"] = f"only {n_perm} permutations; p-value resolution is coarse"
    return PermutationTest(observed=float(observed), p_value=p, null=null, metadata=meta)


@dataclass
class BootstrapDiff:
    delta: float                      # observed R_RE-AI - R_RE-AN
    ci: dict                          # level -> (lo, hi) percentile interval
    p_value: float                    # fraction of bootstrap deltas <= 0
    samples: np.ndarray
    samples_an: np.ndarray = None     # per-replicate R_RE-AN (same resamples)
    samples_ai: np.ndarray = None     # per-replicate R_RE-AI
    metadata: dict = field(default_factory=dict)


def bootstrap_diff(re, an, ai, n_boot=1000, seed=0, levels=(0.68, 0.95),
                   metric="correlation"):
    """Stimulus-bootstrap test of Delta = R_RE-AI - R_RE-AN.

    Each replicate resamples stimulus indices with replacement and applies the
    same index vector to all three RDMs (the index trick: a resampled RDM is
    ``values[np.ix_(idx, idx)]``). Lower-triangle cells that pair a stimulus
    with its own duplicate are excluded -- their dissimilarity is identically
    zero and would otherwise inject spurious tied pairs.
    """
    if not (re.stim_ids == an.stim_ids == ai.stim_ids):
        raise ValueError("activation matrices cover different stimuli")
    rdm_re = compute_rdm(re, metric=metric)
    rdm_an = compute_rdm(an, metric=metric)
    rdm_ai = compute_rdm(ai, metric=metric)
    obs_an, _, _ = _spearman_lower(rdm_re.values, rdm_an.values)
    obs_ai, _, _ = _spearman_lower(rdm_re.values, rdm_ai.values)
    delta = float(obs_ai - obs_an)
    k = len(re.stim_ids)
    tri_i, tri_j = np.tril_indices(k, k=-1)
    samples = np.empty(n_boot)
    samples_an = np.empty(n_boot)
    samples_ai = np.empty(n_boot)
    for b in range(n_boot):
        idx = np.random.default_rng([seed, b]).integers(0, k, size=k)
        self_pair = idx[tri_i] == idx[tri_j]
        sub = np.ix_(idx, idx)
        r_an, _, _ = _spearman_lower(rdm_re.values[sub], rdm_an.values[sub], self_pair)
        r_ai, _, _ = _spearman_lower(rdm_re.values[sub], rdm_ai.values[sub], self_pair)
        samples[b] = r_ai - r_an
        samples_an[b] = r_an
        samples_ai[b] = r_ai
    ci = {}
    for level in levels:
        lo = float(np.percentile(samples, 50.0 * (1.0 - level)))
        hi = float(np.percentile(samples, 50.0 * (1.0 + level)))
        ci[level] = (lo, hi)
    p = float(np.mean(samples <= 0.0))
    return BootstrapDiff(delta=delta, ci=ci, p_value=p, samples=samples,
                         samples_an=samples_an, samples_ai=samples_ai,
                         metadata={"n_boot": n_boot, "seed": seed, "metric": metric,
                                   "levels": list(levels)})


@dataclass
class MannKendall:
    s: int
    var_s: float
    z: float
    p_value: float


def mann_kendall(sequence):
    """Mann-Kendall trend test.

    S sums the signs of all ordered pairs; the variance carries the standard
    tie correction; z applies the +/-1 continuity correction; p is two-sided
    normal. Lives on sequences of length >= 4.
    """
    x = np.asarray(sequence, dtype=np.float64)
    n = x.size
    if n < 4:
        raise ValueError(f"Mann-Kendall needs at least 4 points, got {n}")
    diffs = np.sign(x[None, :] - x[:, None])
    s = int(np.sum(np.triu(diffs, k=1)))
    _, tie_counts = np.unique(x, return_counts=True)
    tie_term = np.sum(tie_counts * (tie_counts - 1) * (2 * tie_counts + 5))
    var_s = (n * (n - 1) * (2 * n + 5) - tie_term) / 18.0
    if var_s == 0.0:
        return MannKendall(s=s, var_s=0.0, z=0.0, p_value=1.0)
    if s > 0:
        z = (s - 1) / np.sqrt(var_s)
    elif s < 0:
        z = (s + 1) / np.sqrt(var_s)
    else:
        z = 0.0
    p = float(2.0 * sps.norm.sf(abs(z)))
    return MannKendall(s=s, var_s=float(var_s), z=float(z), p_value=min(p, 1.0))


def mann_kendall_pooled(sequences):
    """Mann-Kendall trend test pooled over independent replicate sequences.

    Each replicate contributes its own S and tie-corrected variance; under
    independence the pooled statistic is S_total = sum(S_r) with
    Var_total = sum(Var_r), tested with a single continuity correction
    (the seasonal Mann-Kendall combination, with replicates as seasons).
    A persistent weak trend that no single short replicate can certify
    becomes testable once replicates accumulate.
    """
    seqs = list(sequences)
    if not seqs:
        raise ValueError("need at least one replicate sequence")
    parts = [mann_kendall(seq) for seq in seqs]
    s_total = int(sum(p.s for p in parts))
    var_total = float(sum(p.var_s for p in parts))
    if var_total == 0.0:
        return MannKendall(s=s_total, var_s=0.0, z=0.0, p_value=1.0)
    if s_total > 0:
        z = (s_total - 1) / np.sqrt(var_total)
    elif s_total < 0:
        z = (s_total + 1) / np.sqrt(var_total)
    else:
        z = 0.0
    p = float(2.0 * sps.norm.sf(abs(z)))
    return MannKendall(s=s_total, var_s=var_total, z=float(z),
                       p_value=min(p, 1.0))


# ----------------------------------------------------------------------
# vertex selection and searchlight
# ----------------------------------------------------------------------

def disk_neighborhoods(geometry, radius):
    """Per-vertex lists of vertex indices within ``radius`` mm (self included)."""
    tree = cKDTree(geometry.coords)
    hoods = tree.query_ball_point(geometry.coords, r=radius)
    return [sorted(h) for h in hoods]


def disk_neighborhoods_bruteforce(geometry, radius):
    """O(V^2) reference used to cross-check the spatial index."""
    d = np.sqrt(np.sum((geometry.coords[:, None, :] - geometry.coords[None, :, :]) ** 2,
                       axis=-1))
    return [sorted(np.nonzero(d[i] <= radius)[0].tolist()) for i in range(len(geometry))]


def _check_vertex_alignment(acts, geometry):
    if list(acts.unit_ids) != list(geometry.vertex_ids):
        raise ValueError("activation unit ids do not match geometry vertex ids "
                         "(searchlight operations require identical order)")


def select_vertices(trial1, trial2, geometry, radius=3.0, top_n=200):
    """Split-half reliability screen over searchlight disks.

    Scores every vertex by the Spearman agreement between the two trials'
    neighborhood RDMs, then keeps the ``top_n`` best, split evenly per
    hemisphere when the geometry carries hemisphere tags. Ties break toward
    the smaller vertex id. Neighborhoods of fewer than 2 vertices score -inf.
    """
    if trial1.unit_ids != trial2.unit_ids:
        raise ValueError("trial matrices cover different vertices")
    if trial1.stim_ids != trial2.stim_ids:
        raise ValueError("trial matrices cover different stimuli")
    _check_vertex_alignment(trial1, geometry)
    hoods = disk_neighborhoods(geometry, radius)
    scores = np.full(len(geometry), -np.inf)
    for vi, hood in enumerate(hoods):
        if len(hood) < 2:
            continue
        a = ActivationMatrix(trial1.stim_ids, [trial1.unit_ids[j] for j in hood],
                             trial1.values[:, hood], source=f"{trial1.source}:disk")
        b = ActivationMatrix(trial2.stim_ids, [trial2.unit_ids[j] for j in hood],
                             trial2.values[:, hood], source=f"{trial2.source}:disk")
        rho, _, _ = _spearman_lower(compute_rdm(a).values, compute_rdm(b).values)
        if not np.isnan(rho):
            scores[vi] = rho

    def top(indices, n):
        eligible = [i for i in indices if scores[i] != -np.inf]
        ranked = sorted(eligible, key=lambda i: (-scores[i], geometry.vertex_ids[i]))
        return ranked[:n]

    if geometry.hemispheres is None:
        picked = top(range(len(geometry)), top_n)
    else:
        hemis = sorted(set(geometry.hemispheres))
        base, extra = divmod(top_n, len(hemis))
        picked = []
        for hi, h in enumerate(hemis):
            quota = base + (1 if hi < extra else 0)
            members = [i for i in range(len(geometry)) if geometry.hemispheres[i] == h]
            picked.extend(top(members, quota))
    return [geometry.vertex_ids[i] for i in picked]


def searchlight(re, an, ai, geometry, radius=3.0, metric="correlation"):
    """similarity_pair inside every vertex's disk; one record per vertex.

    Vertices whose disk holds fewer than 2 vertices get NaN similarities.
    """
    for acts in (re, an, ai):
        _check_vertex_alignment(acts, geometry)
    if not (re.stim_ids == an.stim_ids == ai.stim_ids):
        raise ValueError("activation matrices cover different stimuli")
    hoods = disk_neighborhoods(geometry, radius)
    records = []
    for vi, hood in enumerate(hoods):
        rec = {"vertex_id": geometry.vertex_ids[vi],
               "x_mm": float(geometry.coords[vi, 0]),
               "y_mm": float(geometry.coords[vi, 1]),
               "hemisphere": None if geometry.hemispheres is None else geometry.hemispheres[vi],
               "n_neighbors": len(hood),
               "r_re_an": float("nan"), "r_re_ai": float("nan")}
        if len(hood) >= 2:
            cols = list(hood)
            ids = [geometry.vertex_ids[j] for j in cols]
            pair = similarity_pair(
                ActivationMatrix(re.stim_ids, ids, re.values[:, cols], source=re.source),
                ActivationMatrix(an.stim_ids, ids, an.values[:, cols], source=an.source),
                ActivationMatrix(ai.stim_ids, ids, ai.values[:, cols], source=ai.source),
                metric=metric)
            rec["r_re_an"] = pair.r_re_an
            rec["r_re_ai"] = pair.r_re_ai
        records.append(rec)
    return records


# ----------------------------------------------------------------------
# file I/O
# ----------------------------------------------------------------------

def write_activation_csv(path, acts, comment=None):
    with open(path, "w", newline="") as fh:
        if comment is not None:
            if "\n" in comment:
                raise ValueError("CSV comment must be a single line")
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh)
        writer.writerow(["stim_id"] + [str(u) for u in acts.unit_ids])
        for sid, row in zip(acts.stim_ids, acts.values):
            writer.writerow([sid] + [repr(float(v)) for v in row])


def read_activation_csv(path, source=""):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh)
                if r and not r[0].lstrip().startswith("#")]
    if not rows or rows[0][:1] != ["stim_id"]:
        raise ValueError(f"{path}: expected a header starting with 'stim_id'")
    unit_ids = rows[0][1:]
    stim_ids = [r[0] for r in rows[1:]]
    values = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return ActivationMatrix(stim_ids, unit_ids, values, source=source)


def write_activation_bin(path, acts, metadata=None):
    header = {"stim_ids": list(acts.stim_ids),
              "unit_ids": [str(u) for u in acts.unit_ids],
              "source": acts.source,
              "shape": list(acts.values.shape)}
    if metadata:
        for key, value in metadata.items():
            if key in header:
                raise ValueError(f"metadata key {key!r} collides with a header field")
            header[key] = str(value)
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MATRIX_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(acts.values, dtype="<f8").tobytes())


def read_activation_bin(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MATRIX_MAGIC:
        raise ValueError(f"{path}: bad magic at byte 0: expected {MATRIX_MAGIC!r}, "
                         f"found {data[:8]!r}")
    (hlen,) = struct.unpack("<I", data[8:12])
    try:
        header = json.loads(data[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"{path}: corrupt JSON header in bytes 12..{12 + hlen}: {exc}")
    shape = tuple(header["shape"])
    need = int(np.prod(shape)) * 8
    payload = data[12 + hlen:]
    if len(payload) != need:
        raise ValueError(f"{path}: payload is {len(payload)} bytes, expected {need} "
                         f"for shape {shape}")
    values = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
    return ActivationMatrix(header["stim_ids"], header["unit_ids"], values,
                            source=header.get("source", ""))


def read_activation_matrix(path):
    """Dispatch on content: ADVMAT01 binary or stim_id-headed CSV."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
    if magic == MATRIX_MAGIC:
        return read_activation_bin(path)
    return read_activation_csv(path, source=os.path.basename(os.fspath(path)))


def write_geometry_csv(path, geometry, comment=None):
    with open(path, "w", newline="") as fh:
        if comment is not None:
            if "\n" in comment:
                raise ValueError("geometry comment must be a single line")
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh)
        writer.writerow(["vertex_id", "x_mm", "y_mm", "hemisphere"])
        for i, vid in enumerate(geometry.vertex_ids):
            hemi = "" if geometry.hemispheres is None else geometry.hemispheres[i]
            writer.writerow([vid, repr(float(geometry.coords[i, 0])),
                             repr(float(geometry.coords[i, 1])), hemi])


def read_geometry_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(ln for ln in fh if not ln.startswith("#")))
    if not rows:
        raise ValueError(f"{path}: empty geometry file")
    ids = [r["vertex_id"] for r in rows]
    coords = np.array([[float(r["x_mm"]), float(r["y_mm"])] for r in rows])
    hemis = [r.get("hemisphere", "") for r in rows]
    if all(h == "" for h in hemis):
        hemis = None
    return VertexGeometry(ids, coords, hemispheres=hemis)
