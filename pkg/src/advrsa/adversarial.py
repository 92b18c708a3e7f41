"""Adversarial image synthesis against a frozen classifier.

Both synthesis modes maximize the same objective by gradient ascent on pixels,

    f(I) = log P_target(I) - lambda * ||I - anchor||^2 ,

differing only in where they start and what they are anchored to: AN images
start at (and are anchored to) the dataset mean image; AI images start at (and
are anchored to) a regular source image, which is what keeps them looking like
their source. Ascending log P rather than P leaves the maximizer unchanged and
behaves far better where P is tiny.

Steps use a backtracking line search: a candidate step is halved (at most
``max_halvings`` times) until the clamped candidate does not decrease the
objective; accepted steps grow the working step back toward the configured
maximum. The objective trace over accepted iterations is therefore
non-decreasing by construction, which the tests exploit.
"""

import csv
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "SynthesisConfig",
    "SynthesisResult",
    "synth_an",
    "synth_ai",
    "choose_ai_targets",
    "verify_stimulus_set",
    "VerificationReport",
    "write_synthesis_manifest",
]


@dataclass(frozen=True)
class SynthesisConfig:
    lam: float                  # proximity weight on ||I - anchor||^2
    step_size: float = 1.0      # largest (and initial) ascent step
    max_iters: int = 5000
    threshold: float = 0.99
    clamp: tuple = (0.0, 1.0)
    max_halvings: int = 20
    seed: int = 0               # recorded for provenance; the ascent itself is deterministic
    overshoot_cap: float = None  # if set, land within [threshold, threshold + cap]

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if not 0.5 < self.threshold < 1.0:
            raise ValueError(f"threshold must lie in (0.5, 1), got {self.threshold}")
        if self.step_size < 0:
            raise ValueError(f"step size must be >= 0, got {self.step_size}")
        if self.max_iters < 0 or self.max_halvings < 0:
            raise ValueError("max_iters and max_halvings must be >= 0")
        if not self.clamp[0] < self.clamp[1]:
            raise ValueError(f"bad clamp range {self.clamp}")
        if self.overshoot_cap is not None and self.overshoot_cap <= 0:
            raise ValueError(f"overshoot_cap must be positive, got {self.overshoot_cap}")


# Calibrated on the default pipeline: AN needs only to land anywhere confident,
# so it takes big strides; AI must stay visually close to its source, so it
# creeps (small proximity weight + small steps measurably beats a heavy
# proximity weight, which tends to stall the ascent at an equilibrium below
# threshold or, with large steps, to overshoot into large perturbations).
AN_DEFAULTS = dict(lam=0.05, step_size=2.0)
AI_DEFAULTS = dict(lam=0.05, step_size=0.01)


def an_config(**overrides):
    return SynthesisConfig(**{**AN_DEFAULTS, **overrides})


def ai_config(**overrides):
    return SynthesisConfig(**{**AI_DEFAULTS, **overrides})


@dataclass
class SynthesisResult:
    image: np.ndarray           # == anchor + perturbation, elementwise, by construction
    kind: str                   # "AN" or "AI"
    target_class: int
    confidence: float           # fresh predict() on the stored image
    iterations: int
    converged: bool
    objective_trace: list       # objective after each accepted iteration, [0] = start
    perturbation: np.ndarray    # image - anchor (anchor: mean image for AN, source for AI)
    l2: float                   # ||perturbation||_2
    linf: float                 # ||perturbation||_inf
    config: SynthesisConfig
    stim_id: str = ""
    stalled: bool = False       # line search could make no progress

    def meta(self):
        """Flat metadata dict for manifests and stimulus bookkeeping."""
        return {"kind": self.kind, "target": self.target_class,
                "confidence": self.confidence, "iterations": self.iterations,
                "converged": self.converged, "stalled": self.stalled,
                "l2": self.l2, "linf": self.linf,
                "lam": self.config.lam, "step_size": self.config.step_size,
                "threshold": self.config.threshold}


def _ascend(network, start, anchor, target, config, kind, stim_id=""):
    lo, hi = config.clamp
    image = np.clip(np.asarray(start, dtype=np.float64), lo, hi)
    anchor = np.asarray(anchor, dtype=np.float64)

    def objective_only(img):
        probs = network.predict(img)
        p = probs[target]
        logp = float(np.log(p)) if p > 0 else -np.inf
        return logp - config.lam * float(np.sum((img - anchor) ** 2)), probs

    obj, probs = objective_only(image)
    trace = [obj]
    step = config.step_size
    converged = bool(probs[target] >= config.threshold)
    stalled = False
    iterations = 0

    # With an overshoot cap, a candidate that would land more than ``cap``
    # above the threshold is treated like a failed backtrack: the step halves
    # until the landing confidence falls inside [threshold, threshold + cap]
    # (or below threshold, which is ordinary progress). This pins the final
    # confidence to the threshold instead of leaving it wherever the last
    # full stride happened to jump.
    ceiling = None if config.overshoot_cap is None \
        else config.threshold + config.overshoot_cap

    while not converged and iterations < config.max_iters:
        logp, probs, grad_logp = network.logprob_grad(image, target)
        grad = grad_logp - 2.0 * config.lam * (image - anchor)
        accepted = False
        for _ in range(config.max_halvings + 1):
            candidate = np.clip(image + step * grad, lo, hi)
            cand_obj, cand_probs = objective_only(candidate)
            if cand_obj >= obj and (ceiling is None
                                    or cand_probs[target] <= ceiling):
                image, obj, probs = candidate, cand_obj, cand_probs
                accepted = True
                break
            step *= 0.5
        iterations += 1
        if not accepted:
            stalled = True       # flat or clamp-locked: no step helps
            break
        trace.append(obj)
        step = min(step * 2.0, config.step_size)
        converged = bool(probs[target] >= config.threshold)

    # canonicalize so that image == anchor + perturbation holds bitwise; the
    # re-rounding moves pixels by under one ulp (possibly a hair outside the
    # clamp range, which downstream consumers treat as saturated anyway)
    delta = image - anchor
    image = anchor + delta
    final_probs = network.predict(image)
    return SynthesisResult(
        image=image, kind=kind, target_class=int(target),
        confidence=float(final_probs[target]), iterations=iterations,
        converged=bool(final_probs[target] >= config.threshold),
        objective_trace=trace, perturbation=delta,
        l2=float(np.sqrt(np.sum(delta * delta))), linf=float(np.max(np.abs(delta))),
        config=config, stim_id=stim_id, stalled=stalled)


def synth_an(network, target_class, mean_img, config, stim_id=""):
    """Grow an adversarial-noise image for ``target_class`` out of the mean image."""
    return _ascend(network, mean_img, mean_img, target_class, config,
                   kind="AN", stim_id=stim_id)


def synth_ai(network, source_image, target_class, config, stim_id=""):
    """Nudge a regular image until the network calls it ``target_class``.

    Starts at the source image and stays anchored to it, so converged results
    remain visually close to the source. If the source already clears the
    confidence threshold for the target (e.g. target = true class), this
    returns after zero iterations.
    """
    return _ascend(network, source_image, source_image, target_class, config,
                   kind="AI", stim_id=stim_id)


def choose_ai_targets(stimulus_set, seed, network=None):
    """Assign every stimulus a wrong-class target, balanced across classes.

    Without a network: walk stimuli in order, give each the least-used class
    that is not its true class (ties broken by the seeded rng).

    With a network: targets are still balanced (per-class quotas that differ by
    at most one), but within that constraint each stimulus prefers the wrong
    class the network already finds most plausible for its RE image -- such
    targets sit across the nearest decision boundary and need visibly smaller
    perturbations. Greedy over (stimulus, class) pairs in descending plausibility.

    Returns {stim_id: target_class}.
    """
    rng = np.random.default_rng([seed])
    stimuli = stimulus_set.stimuli
    if not stimuli:
        return {}
    num_classes = max(s.true_class for s in stimuli) + 1
    if network is not None:
        num_classes = network.config.num_classes
    k = len(stimuli)
    base, extra = divmod(k, num_classes)
    quota = np.array([base + (1 if c < extra else 0) for c in range(num_classes)])

    if network is None:
        counts = np.zeros(num_classes, dtype=np.int64)
        targets = {}
        for s in stimuli:
            eligible = [c for c in range(num_classes) if c != s.true_class]
            least = min(counts[c] for c in eligible)
            pool = [c for c in eligible if counts[c] == least]
            pick = int(pool[rng.integers(len(pool))])
            targets[s.stim_id] = pick
            counts[pick] += 1
        return targets

    # plausibility scores, tiny seeded jitter as a deterministic tie-break
    scores = np.empty((k, num_classes))
    for i, s in enumerate(stimuli):
        scores[i] = network.predict(s.re_image)
        scores[i, s.true_class] = -np.inf
    scores = scores + rng.uniform(0.0, 1e-12, size=scores.shape)

    order = np.argsort(scores, axis=None)[::-1]     # best (stim, class) pairs first
    counts = np.zeros(num_classes, dtype=np.int64)
    assigned = {}
    for flat in order:
        i, c = divmod(int(flat), num_classes)
        s = stimuli[i]
        if s.stim_id in assigned or c == s.true_class or counts[c] >= quota[c]:
            continue
        assigned[s.stim_id] = c
        counts[c] += 1
        if len(assigned) == k:
            break
    for s in stimuli:                               # quota-starved leftovers, if any
        if s.stim_id not in assigned:
            eligible = [c for c in range(num_classes) if c != s.true_class]
            pick = int(min(eligible, key=lambda c: counts[c]))
            assigned[s.stim_id] = pick
            counts[pick] += 1
    return {s.stim_id: assigned[s.stim_id] for s in stimuli}


@dataclass
class VerificationReport:
    rows: list = field(default_factory=list)   # dicts: stim_id, kind, expected, predicted, confidence, ok

    @property
    def violations(self):
        return [r for r in self.rows if not r["ok"]]

    def summary(self):
        by_kind = {}
        for r in self.rows:
            ok, total = by_kind.get(r["kind"], (0, 0))
            by_kind[r["kind"]] = (ok + int(r["ok"]), total + 1)
        parts = [f"{kind}: {ok}/{total} ok" for kind, (ok, total) in sorted(by_kind.items())]
        return "; ".join(parts) if parts else "empty stimulus set"


def verify_stimulus_set(network, stimulus_set):
    """Re-predict every stored image and check it still does what its label claims.

    RE and AN images must hit their true class, AI images their target class,
    all at the set's confidence threshold. Confidences are recomputed live --
    nothing is trusted from the stored metadata.
    """
    report = VerificationReport()
    thr = stimulus_set.threshold
    for s in stimulus_set.stimuli:
        checks = [("RE", s.re_image, s.true_class)]
        if s.an_image is not None:
            checks.append(("AN", s.an_image, s.true_class))
        if s.ai_image is not None:
            checks.append(("AI", s.ai_image, s.ai_target))
        for kind, image, expected in checks:
            probs = network.predict(image)
            predicted = int(np.argmax(probs))
            conf = float(probs[expected])
            report.rows.append({
                "stim_id": s.stim_id, "kind": kind, "expected": int(expected),
                "predicted": predicted, "confidence": conf,
                "ok": bool(predicted == expected and conf >= thr)})
    return report


def write_synthesis_manifest(path, results, config_hash="", comment=None):
    """Flat CSV of synthesis outcomes: one row per synthesized image."""
    fields = ["stim_id", "kind", "target", "confidence", "iterations",
              "converged", "l2", "linf", "config_hash"]
    with open(path, "w", newline="") as fh:
        if comment is not None:
            if "\n" in comment:
                raise ValueError("manifest comment must be a single line")
            fh.write(f"# {comment}\n")
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for r in results:
            writer.writerow({
                "stim_id": r.stim_id, "kind": r.kind, "target": r.target_class,
                "confidence": repr(float(r.confidence)),
                "iterations": r.iterations, "converged": r.converged,
                "l2": repr(float(r.l2)), "linf": repr(float(r.linf)),
                "config_hash": config_hash})
