"""Sparse forward encoding models.

Predicts per-vertex responses as sparse linear combinations of layer units:
y = Xw with the last design column constant and ||w||_0 kept small by a
regularized orthogonal matching pursuit (ROMP) solver. Includes model fitting
per (layer, vertex), scoring by Pearson correlation, a generalization test
over adversarial stimulus kinds, layer-assignment proportions, and a
simulated-voxel generator that serves as the pipeline's ground-truth oracle
in place of measured responses.

Feature columns are z-scored before fitting (correlation-magnitude selection
needs comparable column scales; toggleable), and the scaling parameters ride
along with the design so test-time features go through the identical
transform. The intercept never competes for sparse slots: it is excluded
from selection and always present in the least-squares refit.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .rsa import ActivationMatrix


# ----------------------------------------------------------------------
# design matrices
# ----------------------------------------------------------------------

@dataclass
class DesignMatrix:
    """Stimuli x (kept features + constant column), with reusable scaling."""

    values: np.ndarray                 # (m, k+1); last column all ones
    feature_ids: list                  # original column index per kept column
    dropped: list                      # original indices of zero-variance columns
    means: np.ndarray                  # per kept column (zeros when not standardized)
    stds: np.ndarray                   # per kept column (ones when not standardized)
    standardized: bool = True
    n_original: int = 0

    def __post_init__(self):
        if not np.all(self.values[:, -1] == 1.0):
            raise ValueError("last design column must be exactly 1")

    @property
    def n_features(self):
        return self.values.shape[1] - 1

    def transform(self, raw):
        """Apply the stored column selection and scaling to raw feature rows."""
        raw = np.asarray(raw, dtype=np.float64)
        if raw.shape[1] != self.n_original:
            raise ValueError(f"expected {self.n_original} raw feature columns, "
                             f"got {raw.shape[1]}")
        kept = raw[:, self.feature_ids]
        scaled = (kept - self.means) / self.stds
        return np.concatenate([scaled, np.ones((raw.shape[0], 1))], axis=1)


def build_design(acts, standardize=True):
    """Z-score feature columns, drop zero-variance ones, append the constant.

    The index map from kept columns back to original unit positions is kept so
    sparse supports can be reported in the activation matrix's own terms.
    """
    x = acts.values
    m, n = x.shape
    if m < 2:
        raise ValueError(f"need at least 2 stimuli to build a design, got {m}")
    stds_all = x.std(axis=0)
    keep = np.nonzero(stds_all > 0.0)[0]
    dropped = np.nonzero(stds_all == 0.0)[0].tolist()
    if standardize:
        means = x[:, keep].mean(axis=0)
        stds = stds_all[keep]
    else:
        means = np.zeros(keep.size)
        stds = np.ones(keep.size)
    scaled = (x[:, keep] - means) / stds
    values = np.concatenate([scaled, np.ones((m, 1))], axis=1)
    return DesignMatrix(values=values, feature_ids=keep.tolist(), dropped=dropped,
                        means=means, stds=stds, standardized=standardize,
                        n_original=n)


# ----------------------------------------------------------------------
# ROMP
# ----------------------------------------------------------------------

def _regularized_subset(u_abs, candidates):
    """ROMP's regularization step.

    Among maximal runs of the magnitude-sorted candidates whose members are
    within a factor 2 of each other (max <= 2*min), return the run with the
    largest energy ||u||_2^2.
    """
    order = sorted(candidates, key=lambda j: (-u_abs[j], j))
    mags = np.array([u_abs[j] for j in order])
    best, best_energy = None, -1.0
    start = 0
    n = len(order)
    while start < n:
        end = start
        while end + 1 < n and mags[start] <= 2.0 * mags[end + 1]:
            end += 1
        run = order[start:end + 1]
        energy = float(np.sum(mags[start:end + 1] ** 2))
        if energy > best_energy:
            best, best_energy = run, energy
        start += 1
        # runs starting inside [start, end] are subsets unless they extend
        # past `end`; advancing one at a time keeps every maximal run visible
    return best


@dataclass
class RompResult:
    support: list                      # kept-column indices, sorted
    weights: np.ndarray                # aligned with support
    intercept: float
    residual_norm: float
    trace: list = field(default_factory=list)
    rank_deficient: bool = False


def romp_solve(design, y, s_max=None, tol=1e-6, max_iter=60):
    """Regularized orthogonal matching pursuit on a design matrix.

    Per iteration: correlate features with the residual, take the s_max
    largest magnitudes (ties toward lower index), keep the regularized
    batch (members comparable within a factor 2, maximal energy), union it
    into the support, and re-fit least squares over support + intercept.
    When the union overshoots s_max the support is pruned back to the s_max
    largest-|weight| entries and re-fit, so membership can churn toward a
    better subset across iterations (matching pursuit alone cannot evict a
    bad early pick, which costs it exact recovery in underdetermined
    regimes). Stops when the relative residual drops below tol, the
    residual stagnates, or nothing new can be selected; exact-zero weights
    are pruned at the end.
    """
    y = np.asarray(y, dtype=np.float64)
    m = design.values.shape[0]
    if y.shape != (m,):
        raise ValueError(f"response has shape {y.shape}, expected ({m},)")
    if not np.isfinite(y).all():
        raise ValueError("response vector contains non-finite values")
    if s_max is None:
        s_max = max(1, m // 2)
    features = design.values[:, :-1]
    n = features.shape[1]
    y_norm = float(np.sqrt(np.sum(y * y)))
    support = []
    trace = []
    rank_deficient = False

    def refit(sup):
        cols = np.concatenate([features[:, sup], np.ones((m, 1))], axis=1)
        w, _, rank, _ = np.linalg.lstsq(cols, y, rcond=None)
        deficient = bool(rank < cols.shape[1])
        res = y - cols @ w
        return w, res, deficient

    w, residual, _ = refit(support)
    res_norm = float(np.sqrt(np.sum(residual * residual)))
    for _ in range(max_iter if n > 0 else 0):
        if y_norm > 0.0 and res_norm <= tol * y_norm:
            break
        u = features.T @ residual
        u_abs = np.abs(u)
        in_support = set(support)
        candidates = [j for j in sorted(range(n), key=lambda j: (-u_abs[j], j))
                      if u_abs[j] > 1e-12 and j not in in_support][:s_max]
        if not candidates:
            break
        chosen = _regularized_subset(u_abs, candidates)
        trial = sorted(in_support | set(chosen))
        w_trial, res_trial, deficient = refit(trial)
        if len(trial) > s_max:
            mags = np.abs(w_trial[:-1])
            keep = sorted(range(len(trial)), key=lambda i: (-mags[i], trial[i]))[:s_max]
            trial = sorted(trial[i] for i in keep)
            w_trial, res_trial, deficient2 = refit(trial)
            deficient = deficient or deficient2
        new_norm = float(np.sqrt(np.sum(res_trial * res_trial)))
        trace.append({"selected": [int(j) for j in chosen],
                      "support_size": len(trial),
                      "residual_norm": new_norm,
                      "rank_deficient": deficient})
        if res_norm > 0.0 and (res_norm - new_norm) / res_norm <= 1e-10:
            break
        support, w, residual = trial, w_trial, res_trial
        rank_deficient = rank_deficient or deficient
        res_norm = new_norm
    # drop entries the refit zeroed out (a superset union around a sparser
    # exact solution leaves round-off-level weights on the extras)
    if support:
        w_feat = np.asarray(w[:-1])
        cut = 1e-9 * max(1.0, float(np.max(np.abs(w_feat))))
        kept = [j for j, wj in zip(support, w_feat) if abs(wj) > cut]
        if len(kept) < len(support):
            support = kept
            w, residual, deficient = refit(support)
            rank_deficient = rank_deficient or deficient
            res_norm = float(np.sqrt(np.sum(residual * residual)))
            trace.append({"selected": [], "support_size": len(support),
                          "residual_norm": res_norm,
                          "rank_deficient": deficient, "pruned": True})
    return RompResult(support=list(support),
                      weights=np.asarray(w[:-1][:len(support)])
                      if support else np.array([]),
                      intercept=float(w[-1]),
                      residual_norm=res_norm,
                      trace=trace,
                      rank_deficient=rank_deficient)


# ----------------------------------------------------------------------
# encoding models
# ----------------------------------------------------------------------

@dataclass
class EncodingModel:
    """Sparse linear readout of one vertex from one layer's units."""

    layer_id: str
    vertex_id: str
    support: list                      # original feature indices, sorted
    weights: dict                      # original index -> weight (scaled space)
    intercept: float
    residual_norm: float
    design: DesignMatrix = None
    rank_deficient: bool = False

    def predict(self, raw_features):
        """Predict responses from raw (unscaled) feature rows.

        Folds the stored z-scoring into the sparse weights so only the
        support columns are touched.
        """
        raw_features = np.asarray(raw_features, dtype=np.float64)
        if raw_features.shape[1] != self.design.n_original:
            raise ValueError(f"expected {self.design.n_original} raw feature "
                             f"columns, got {raw_features.shape[1]}")
        kept_pos = {orig: k for k, orig in enumerate(self.design.feature_ids)}
        out = np.full(raw_features.shape[0], self.intercept)
        for orig, weight in self.weights.items():
            k = kept_pos[orig]
            scale = weight / self.design.stds[k]
            out += scale * raw_features[:, orig] - scale * self.design.means[k]
        return out

    def dense_weights(self, original_space=False):
        """Weight vector over all original feature columns.

        With original_space=True the z-scoring is folded back in, so the
        weights apply to raw features: y = raw @ w + intercept.
        """
        w = np.zeros(self.design.n_original)
        b = self.intercept
        kept_pos = {orig: k for k, orig in enumerate(self.design.feature_ids)}
        for orig, weight in self.weights.items():
            if original_space:
                k = kept_pos[orig]
                w[orig] = weight / self.design.stds[k]
                b -= weight * self.design.means[k] / self.design.stds[k]
            else:
                w[orig] = weight
        return (w, b) if original_space else w


def fit_vertex(layer_id, vertex_id, design, y, s_max=None, tol=1e-6):
    result = romp_solve(design, y, s_max=s_max, tol=tol)
    orig = [design.feature_ids[j] for j in result.support]
    weights = {o: float(v) for o, v in zip(orig, result.weights)}
    return EncodingModel(layer_id=layer_id, vertex_id=vertex_id,
                         support=sorted(orig), weights=weights,
                         intercept=result.intercept,
                         residual_norm=result.residual_norm,
                         design=design, rank_deficient=result.rank_deficient)


def fit_models(layer_acts, responses, s_max=None, tol=1e-6):
    """One ROMP fit per (report layer, vertex).

    layer_acts: {layer_id: ActivationMatrix} for the training stimuli.
    responses: ActivationMatrix of measured/simulated vertex responses whose
    rows align with the training stimuli.
    """
    models = {}
    for layer_id in sorted(layer_acts):
        acts = layer_acts[layer_id]
        if acts.stim_ids != responses.stim_ids:
            raise ValueError(f"layer {layer_id} stimuli do not match responses")
        design = build_design(acts)
        for v, vertex_id in enumerate(responses.unit_ids):
            models[layer_id, vertex_id] = fit_vertex(
                layer_id, vertex_id, design, responses.values[:, v],
                s_max=s_max, tol=tol)
    return models


def _pearson_columns(a, b):
    """Per-column Pearson r between two (m, v) matrices; NaN on zero variance."""
    ac = a - a.mean(axis=0)
    bc = b - b.mean(axis=0)
    na = np.sqrt(np.sum(ac * ac, axis=0))
    nb = np.sqrt(np.sum(bc * bc, axis=0))
    denom = na * nb
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(denom > 0.0, np.sum(ac * bc, axis=0) / denom, np.nan)
    return np.clip(r, -1.0, 1.0)


@dataclass
class ScoreReport:
    per_vertex: dict                   # vertex id -> r (NaN when undefined)
    mean_r: float
    n_excluded: int


def _predictions(models, test_acts, vertex_ids):
    """(m, V) matrix of model predictions, one column per vertex."""
    return np.stack([models[v].predict(test_acts.values) for v in vertex_ids],
                    axis=1)


def predict_and_score(models, test_acts, test_responses):
    """Pearson r between predicted and measured responses, per vertex.

    models: {vertex_id: EncodingModel} for a single layer. Vertices whose
    prediction is constant have no defined r; they are excluded from the
    mean and counted.
    """
    vertex_ids = list(test_responses.unit_ids)
    preds = _predictions(models, test_acts, vertex_ids)
    rs = _pearson_columns(preds, test_responses.values)
    per_vertex = dict(zip(vertex_ids, (float(r) for r in rs)))
    defined = rs[~np.isnan(rs)]
    mean_r = float(np.mean(defined)) if defined.size else float("nan")
    return ScoreReport(per_vertex=per_vertex, mean_r=mean_r,
                       n_excluded=int(np.sum(np.isnan(rs))))


def generalization_test(models, layer_acts_by_kind, responses_by_kind,
                        n_perm=1000, n_boot=1000, seed=0, frac=0.8):
    """How well RE-trained models predict AN and AI responses, per layer.

    For each layer and each stimulus kind: mean r over vertices, a
    stimulus-label permutation p-value (responses shuffled across stimuli,
    predictions fixed), and a bootstrap distribution of the mean r over
    random 80% vertex subsamples drawn without replacement. When both "an"
    and "ai" kinds are present, the difference test reports the fraction of
    paired subsample replicates with r_AI <= r_AN.
    """
    layer_ids = sorted({layer for layer, _ in models})
    vertex_ids = sorted({vertex for _, vertex in models})
    rows = []
    for layer_id in layer_ids:
        layer_models = {v: models[layer_id, v] for v in vertex_ids}
        kind_r, kind_perm_p, kind_boot = {}, {}, {}
        for kind in sorted(layer_acts_by_kind):
            acts = layer_acts_by_kind[kind][layer_id]
            resp = responses_by_kind[kind]
            if acts.stim_ids != resp.stim_ids:
                raise ValueError(f"{kind} activations and responses cover "
                                 "different stimuli")
            preds = _predictions(layer_models, acts, vertex_ids)
            resp_vals = resp.values[:, [resp.unit_ids.index(v) for v in vertex_ids]]
            rs = _pearson_columns(preds, resp_vals)
            defined = rs[~np.isnan(rs)]
            mean_r = float(np.mean(defined)) if defined.size else float("nan")
            kind_r[kind] = mean_r

            k = len(resp.stim_ids)
            count = 0
            for i in range(n_perm):
                perm = np.random.default_rng([seed, 17, i]).permutation(k)
                null_rs = _pearson_columns(preds, resp_vals[perm])
                null_mean = float(np.nanmean(null_rs))
                if null_mean >= mean_r:
                    count += 1
            kind_perm_p[kind] = (1.0 + count) / (n_perm + 1.0)

            n_sub = max(1, int(round(frac * len(vertex_ids))))
            boots = np.empty(n_boot)
            for b in range(n_boot):
                idx = np.random.default_rng([seed, 23, b]).permutation(len(vertex_ids))[:n_sub]
                boots[b] = float(np.nanmean(rs[idx]))
            kind_boot[kind] = boots
        row = {"layer": layer_id}
        for kind in kind_r:
            boots = kind_boot[kind]
            row[f"r_{kind}"] = kind_r[kind]
            row[f"p_perm_{kind}"] = kind_perm_p[kind]
            row[f"ci95_lo_{kind}"] = float(np.percentile(boots, 2.5))
            row[f"ci95_hi_{kind}"] = float(np.percentile(boots, 97.5))
        if "an" in kind_boot and "ai" in kind_boot:
            row["p_ai_le_an"] = float(np.mean(kind_boot["ai"] <= kind_boot["an"]))
        rows.append(row)
    return rows


def layer_assignment(per_layer_r, layer_order):
    """Proportion of vertices best explained by each layer.

    per_layer_r: {layer_id: {vertex_id: r}}. Each vertex goes to its argmax-r
    layer, ties resolved toward the earliest layer in layer_order. Vertices
    with no defined r anywhere are left out of the denominator.
    """
    vertex_ids = sorted({v for layer in per_layer_r.values() for v in layer})
    counts = {layer: 0 for layer in layer_order}
    n_assigned = 0
    for v in vertex_ids:
        best_layer, best_r = None, -np.inf
        for layer in layer_order:
            r = per_layer_r.get(layer, {}).get(v, float("nan"))
            if not np.isnan(r) and r > best_r:
                best_layer, best_r = layer, r
        if best_layer is not None:
            counts[best_layer] += 1
            n_assigned += 1
    if n_assigned == 0:
        raise ValueError("no vertex has a defined r in any layer")
    return {layer: counts[layer] / n_assigned for layer in layer_order}


# ----------------------------------------------------------------------
# simulated voxels
# ----------------------------------------------------------------------

@dataclass
class SimulatedVoxelSpec:
    """Ground-truth recipe for one synthetic vertex."""

    source_layer: str
    support: list                      # feature column indices in the layer
    weights: list
    noise_sd: float = 0.0
    seed: int = 0
    intercept: float = 0.0

    def __post_init__(self):
        if len(self.support) < 1:
            raise ValueError("planted support must hold at least one index")
        if len(self.support) != len(self.weights):
            raise ValueError("support and weights differ in length")
        if len(set(self.support)) != len(self.support):
            raise ValueError("planted indices must be unique")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be nonnegative")


def simulate_voxels(layer_acts, specs, vertex_prefix="sim"):
    """Responses = planted sparse readout of layer features + Gaussian noise.

    Each voxel's noise comes from its spec's own counter-based stream, so two
    specs with the same seed draw identical noise.
    """
    stim_ids = None
    columns = []
    vertex_ids = []
    for v, spec in enumerate(specs):
        acts = layer_acts[spec.source_layer]
        if stim_ids is None:
            stim_ids = acts.stim_ids
        elif acts.stim_ids != stim_ids:
            raise ValueError("layers cover different stimuli")
        width = acts.values.shape[1]
        bad = [i for i in spec.support if not 0 <= i < width]
        if bad:
            raise ValueError(f"planted indices {bad} out of range for layer "
                             f"{spec.source_layer} of width {width}")
        signal = acts.values[:, spec.support] @ np.asarray(spec.weights, dtype=np.float64)
        signal = signal + spec.intercept
        if spec.noise_sd > 0:
            noise = np.random.default_rng([spec.seed]).normal(
                0.0, spec.noise_sd, size=signal.shape)
            signal = signal + noise
        columns.append(signal)
        vertex_ids.append(f"{vertex_prefix}{v:03d}")
    return ActivationMatrix(list(stim_ids), vertex_ids,
                            np.stack(columns, axis=1), source="simulated")


def noise_ceiling(signal_sd, noise_sd):
    """Expected Pearson r between a clean prediction and a noisy measurement."""
    if signal_sd <= 0:
        return float("nan")
    return float(1.0 / np.sqrt(1.0 + (noise_sd / signal_sd) ** 2))


# ----------------------------------------------------------------------
# serialization
# ----------------------------------------------------------------------

def models_to_jsonable(models, config_hash="", version=""):
    items = []
    for (layer_id, vertex_id), model in sorted(models.items()):
        items.append({
            "layer": layer_id,
            "vertex": vertex_id,
            "support": [int(i) for i in model.support],
            "weights": [model.weights[i] for i in model.support],
            "intercept": model.intercept,
            "residual_norm": model.residual_norm,
            "rank_deficient": model.rank_deficient,
            "scaling": {
                "feature_ids": [int(i) for i in model.design.feature_ids],
                "dropped": [int(i) for i in model.design.dropped],
                "means": model.design.means.tolist(),
                "stds": model.design.stds.tolist(),
                "standardized": model.design.standardized,
                "n_original": model.design.n_original,
            },
        })
    payload = {"models": items, "config_hash": config_hash}
    if version:
        payload["version"] = version
    return payload


def save_models(path, models, config_hash="", version=""):
    with open(path, "w") as fh:
        json.dump(models_to_jsonable(models, config_hash, version), fh, indent=1,
                  sort_keys=True)
        fh.write("\n")


def load_models(path):
    with open(path) as fh:
        payload = json.load(fh)
    models = {}
    for item in payload["models"]:
        sc = item["scaling"]
        k = len(sc["feature_ids"])
        design = DesignMatrix(values=np.ones((2, k + 1)),  # placeholder rows
                              feature_ids=list(sc["feature_ids"]),
                              dropped=list(sc["dropped"]),
                              means=np.asarray(sc["means"]),
                              stds=np.asarray(sc["stds"]),
                              standardized=sc["standardized"],
                              n_original=sc["n_original"])
        model = EncodingModel(layer_id=item["layer"], vertex_id=item["vertex"],
                              support=list(item["support"]),
                              weights=dict(zip(item["support"], item["weights"])),
                              intercept=item["intercept"],
                              residual_norm=item["residual_norm"],
                              design=design,
                              rank_deficient=item["rank_deficient"])
        models[item["layer"], item["vertex"]] = model
    return models
