"""End-to-end analysis pipeline: stage functions behind the command line.

Each stage reads its upstream artifacts from the run directory, validates
that they were produced under the same configuration (by hash), writes its
own artifacts plus a stamp file, and is bitwise idempotent: re-running any
stage with unchanged inputs rewrites identical bytes. Nothing here depends
on wall-clock time, filesystem iteration order, or worker count.

Run directory layout::

    resolved.cfg             fully-resolved configuration + hash
    stamps/<command>.json    per-stage completion stamp (hash, summary)
    data/                    train/ + val/ splits, mean image
    model/                   network checkpoint + training log
    stimuli/                 re/ + an/ + ai/ images, synthesis + verification
    activations/             per-kind per-layer activation matrices
    rsa/                     RDMs, similarity stats, trend tests
    encoding/                simulated responses, models, scores, assignment
    searchlight/             simulated sheet, selection, similarity maps
    report/                  figure-ready CSV + SVG + aggregate JSON summary
    ingested/                validated external activation matrices
"""

import csv
import json
import os
import struct

import numpy as np

from . import __version__
from . import adversarial
from . import dataset
from . import encoding
from . import figures
from . import network
from . import rsa
from .config import write_resolved


class UpstreamMissing(Exception):
    """A required upstream artifact does not exist (CLI exit code 2)."""

    def __init__(self, message, command):
        super().__init__(message)
        self.command = command


class HashMismatch(Exception):
    """An upstream artifact was built under a different config (exit code 3)."""


# command -> immediate upstream commands whose stamps must exist and match
REQUIRES = {
    "gen-data": (),
    "train": ("gen-data",),
    "select-re": ("gen-data", "train"),
    "synth": ("gen-data", "train", "select-re"),
    "activations": ("train", "select-re", "synth"),
    "rsa": ("activations",),
    "encode": ("activations",),
    "searchlight": ("activations",),
    "report": ("rsa", "encode", "searchlight"),
    "ingest": ("select-re",),
}

COMMAND_ORDER = ("gen-data", "train", "select-re", "synth", "activations",
                 "rsa", "encode", "searchlight", "report")

KIND_SEED_CODES = {"trial1": 0, "trial2": 1, "re": 2, "an": 3, "ai": 4}


# ----------------------------------------------------------------------
# shared plumbing
# ----------------------------------------------------------------------

def _mark(cfg):
    return f"config_hash={cfg.config_hash()} version={__version__}"


def _stamp_path(out_dir, command):
    return os.path.join(out_dir, "stamps", f"{command}.json")


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path, fieldnames, rows, comment):
    with open(path, "w", newline="") as fh:
        fh.write(f"# {comment}\n")
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)


def _read_csv(path):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    header, body = rows[0], rows[1:]
    return [dict(zip(header, r)) for r in body]


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return value


def write_stamp(out_dir, command, cfg, summary):
    os.makedirs(os.path.join(out_dir, "stamps"), exist_ok=True)
    _write_json(_stamp_path(out_dir, command), {
        "command": command,
        "config_hash": cfg.config_hash(),
        "version": __version__,
        "summary": summary,
    })


def check_upstream(cfg, out_dir, command, config_path=None):
    """Raise UpstreamMissing / HashMismatch unless every upstream stamp is
    present and carries the current config hash."""
    want = cfg.config_hash()
    for upstream in REQUIRES[command]:
        path = _stamp_path(out_dir, upstream)
        if not os.path.exists(path):
            fix = f"advrsa {upstream}"
            if config_path:
                fix += f" --config {config_path}"
            fix += f" --out {out_dir}"
            raise UpstreamMissing(
                f"{command}: missing upstream artifact "
                f"{os.path.relpath(path, out_dir)}; produce it with: {fix}",
                command=fix)
        with open(path, encoding="utf-8") as fh:
            stamp = json.load(fh)
        have = stamp.get("config_hash", "")
        if have != want:
            raise HashMismatch(
                f"{command}: upstream '{upstream}' was built under config hash "
                f"{have} but the current config resolves to {want}; re-run "
                f"'advrsa {upstream}' with this config (or restore the one "
                f"that built it)")


def _report_layer_names(cfg):
    return [name for name, _ in network.toy_config(cfg.classes).report_layers]


def _activation_path(out_dir, kind, layer_name):
    return os.path.join(out_dir, "activations", f"{kind}_{layer_name}.adv")


def _load_activations(cfg, out_dir, kinds):
    names = _report_layer_names(cfg)
    # content-dispatched read, so hand-prepared CSV matrices can stand in for
    # the binary files the activations stage writes
    return {kind: {name: rsa.read_activation_matrix(_activation_path(out_dir, kind, name))
                   for name in names}
            for kind in kinds}


# ----------------------------------------------------------------------
# stages
# ----------------------------------------------------------------------

def run_gen_data(cfg, out_dir):
    data_dir = os.path.join(out_dir, "data")
    os.makedirs(data_dir, exist_ok=True)
    train, val = dataset.generate_dataset(
        num_classes=cfg.classes, per_class_train=cfg.train_per_class,
        per_class_val=cfg.val_per_class, seed=cfg.stage_seed("data"))
    mark = _mark(cfg)
    dataset.save_split(os.path.join(data_dir, "train"), train, comment=mark)
    dataset.save_split(os.path.join(data_dir, "val"), val, comment=mark)
    mean = dataset.mean_image(train)
    dataset.write_image(os.path.join(data_dir, "mean_image.ppm"), mean,
                        comment=mark)
    return {"train_images": len(train), "val_images": len(val),
            "classes": cfg.classes}


def run_train(cfg, out_dir):
    model_dir = os.path.join(out_dir, "model")
    os.makedirs(model_dir, exist_ok=True)
    train = dataset.load_split(os.path.join(out_dir, "data", "train"))
    val = dataset.load_split(os.path.join(out_dir, "data", "val"))
    net = network.Network.init(network.toy_config(cfg.classes),
                               seed=cfg.stage_seed("network"))
    history = net.train(train, val, epochs=cfg.epochs,
                        learning_rate=cfg.learning_rate,
                        batch_size=cfg.batch_size,
                        seed=cfg.stage_seed("network"),
                        momentum=cfg.momentum)
    net.metadata["config_hash"] = cfg.config_hash()
    net.metadata["version"] = __version__
    net.save(os.path.join(model_dir, "network.ckpt"))
    _write_csv(os.path.join(model_dir, "train_log.csv"),
               ["epoch", "lr", "train_loss", "train_acc", "val_loss", "val_acc"],
               [{k: _fmt(v) for k, v in row.items()} for row in history],
               _mark(cfg))
    final = history[-1] if history else {}
    return {"epochs": cfg.epochs,
            "final_val_accuracy": final.get("val_acc"),
            "final_train_loss": final.get("train_loss")}


def run_select_re(cfg, out_dir):
    re_dir = os.path.join(out_dir, "stimuli", "re")
    os.makedirs(re_dir, exist_ok=True)
    net = network.Network.load(os.path.join(out_dir, "model", "network.ckpt"))
    val = dataset.load_split(os.path.join(out_dir, "data", "val"))
    picked, confidences = dataset.select_re_stimuli(
        net, val, cfg.re_k, threshold=cfg.re_threshold,
        strategy=cfg.re_strategy, band_upper=cfg.re_band_upper)
    split = dataset.Split(
        images=np.stack([li.image for li in picked]),
        labels=np.asarray([li.label for li in picked], dtype=np.int64),
        seeds=[li.seed for li in picked],
        ids=[li.image_id for li in picked],
        name="re")
    dataset.save_split(re_dir, split, comment=_mark(cfg))
    _write_csv(os.path.join(out_dir, "stimuli", "re_confidences.csv"),
               ["stim_id", "confidence"],
               [{"stim_id": sid, "confidence": repr(float(confidences[sid]))}
                for sid in split.ids],
               _mark(cfg))
    conf_vals = [confidences[sid] for sid in split.ids]
    return {"k": len(picked), "strategy": cfg.re_strategy,
            "confidence_min": min(conf_vals), "confidence_max": max(conf_vals)}


def _synth_an_matched(cfg, net, label, mean_img, re_confidence, stim_id, index):
    """AN synthesis with the pipeline's retry ladder.

    The confidence threshold is matched to the paired regular stimulus (so the
    noise image saturates the classifier exactly as much as its partner does),
    clamped to [an_threshold, an_threshold_cap]. The regularization weight and
    initial step size are dithered per stimulus so same-class trajectories
    take distinct paths. On non-convergence the regularization weight shrinks
    by an_retry_factor and the synthesis retries; the first converged attempt
    wins, else the most confident one, flagged.
    """
    if cfg.an_match_thresholds:
        threshold = min(max(cfg.an_threshold, re_confidence), cfg.an_threshold_cap)
    else:
        threshold = cfg.an_threshold
    rng = np.random.default_rng([cfg.stage_seed("an"), index])
    lam, step = cfg.an_lambda, cfg.an_step
    if cfg.an_dither in ("lambda", "both"):
        lam *= float(np.exp(rng.uniform(np.log(0.6), np.log(1.6))))
    if cfg.an_dither in ("step", "both"):
        step *= float(np.exp(rng.uniform(np.log(0.5), np.log(1.5))))
    cap = cfg.an_overshoot_cap if cfg.an_overshoot_cap > 0 else None
    best = None
    attempts = 0
    for attempt in range(cfg.an_max_retries + 1):
        syn_cfg = adversarial.an_config(
            lam=lam, step_size=step, max_iters=cfg.an_max_iters,
            threshold=threshold, overshoot_cap=cap,
            seed=cfg.stage_seed("an"))
        result = adversarial.synth_an(net, label, mean_img, syn_cfg,
                                      stim_id=stim_id)
        attempts = attempt + 1
        if best is None or result.confidence > best.confidence:
            best = result
        if result.converged:
            return result, attempts
        lam *= cfg.an_retry_factor
    return best, attempts


def run_synth(cfg, out_dir):
    stim_dir = os.path.join(out_dir, "stimuli")
    an_dir = os.path.join(stim_dir, "an")
    ai_dir = os.path.join(stim_dir, "ai")
    os.makedirs(an_dir, exist_ok=True)
    os.makedirs(ai_dir, exist_ok=True)
    net = network.Network.load(os.path.join(out_dir, "model", "network.ckpt"))
    re_split = dataset.load_split(os.path.join(stim_dir, "re"))
    mean_img = dataset.read_image(os.path.join(out_dir, "data", "mean_image.ppm"))
    conf_rows = _read_csv(os.path.join(stim_dir, "re_confidences.csv"))
    re_conf = {r["stim_id"]: float(r["confidence"]) for r in conf_rows}

    # adversarial-noise images: grown from the mean image per target class,
    # one per regular stimulus, paired by stimulus id
    an_results = []
    for i in range(len(re_split)):
        sid = re_split.ids[i]
        result, attempts = _synth_an_matched(
            cfg, net, int(re_split.labels[i]), mean_img, re_conf[sid], sid, i)
        an_results.append(result)

    # adversarial-interference images: the paired regular image nudged into
    # a wrong target class
    stimuli = [dataset.Stimulus(stim_id=re_split.ids[i],
                                true_class=int(re_split.labels[i]),
                                re_image=re_split.images[i])
               for i in range(len(re_split))]
    stim_set = dataset.StimulusSet(stimuli=stimuli, threshold=cfg.re_threshold)
    targets = adversarial.choose_ai_targets(
        stim_set, seed=cfg.stage_seed("targets"),
        network=net if cfg.ai_target_scheme == "confusable" else None)
    ai_results = []
    for i in range(len(re_split)):
        sid = re_split.ids[i]
        syn_cfg = adversarial.ai_config(
            lam=cfg.ai_lambda, step_size=cfg.ai_step,
            max_iters=cfg.ai_max_iters, threshold=cfg.ai_threshold,
            seed=cfg.stage_seed("ai"))
        ai_results.append(adversarial.synth_ai(
            net, re_split.images[i], targets[sid], syn_cfg, stim_id=sid))

    mark = _mark(cfg)
    for directory, results in ((an_dir, an_results), (ai_dir, ai_results)):
        for result in results:
            dataset.write_image(
                os.path.join(directory, f"{result.stim_id}.ppm"),
                result.image, comment=mark)
    for directory, name in ((an_dir, "an"), (ai_dir, "ai")):
        results = an_results if name == "an" else ai_results
        rows = [{"id": r.stim_id, "path": f"{r.stim_id}.ppm",
                 "label": int(re_split.labels[i]), "split": name,
                 "seed": "-".join(str(s) for s in re_split.seeds[i])}
                for i, r in enumerate(results)]
        _write_csv(os.path.join(directory, "manifest.csv"),
                   ["id", "path", "label", "split", "seed"], rows, mark)
    adversarial.write_synthesis_manifest(
        os.path.join(stim_dir, "synthesis.csv"), an_results + ai_results,
        config_hash=cfg.config_hash(), comment=mark)

    # live re-verification of every stored image
    for i, s in enumerate(stimuli):
        s.an_image = an_results[i].image
        s.ai_image = ai_results[i].image
        s.ai_target = ai_results[i].target_class
    report = adversarial.verify_stimulus_set(net, stim_set)
    _write_csv(os.path.join(stim_dir, "verification.csv"),
               ["stim_id", "kind", "expected", "predicted", "confidence", "ok"],
               [{**row, "confidence": repr(float(row["confidence"]))}
                for row in report.rows],
               mark)

    an_conv = sum(r.converged for r in an_results)
    ai_conv = sum(r.converged for r in ai_results)
    return {"an_converged": an_conv, "ai_converged": ai_conv,
            "n_stimuli": len(re_split),
            "ai_mean_linf": float(np.mean([r.linf for r in ai_results])),
            "verification_violations": len(report.violations)}


def run_activations(cfg, out_dir):
    act_dir = os.path.join(out_dir, "activations")
    os.makedirs(act_dir, exist_ok=True)
    net = network.Network.load(os.path.join(out_dir, "model", "network.ckpt"))
    names = [name for name, _ in net.config.report_layers]
    meta = {"config_hash": cfg.config_hash(), "version": __version__}
    shapes = {}
    for kind in ("re", "an", "ai"):
        split = dataset.load_split(os.path.join(out_dir, "stimuli", kind))
        per_layer = {name: [] for name in names}
        for i in range(len(split)):
            snap = net.report_activations(split.images[i])
            for name in names:
                per_layer[name].append(snap[name])
        for name in names:
            values = np.stack(per_layer[name])
            acts = rsa.ActivationMatrix(
                list(split.ids), [f"u{j}" for j in range(values.shape[1])],
                values, source=f"{kind}/{name}")
            rsa.write_activation_bin(_activation_path(out_dir, kind, name),
                                     acts, metadata=meta)
            shapes[f"{kind}_{name}"] = list(values.shape)
    return {"files": len(shapes), "shapes": shapes}


def _write_rdm_csv(path, rdm, comment):
    with open(path, "w", newline="") as fh:
        fh.write(f"# {comment}\n")
        writer = csv.writer(fh)
        writer.writerow(["stim_id"] + list(rdm.stim_ids))
        for sid, row in zip(rdm.stim_ids, rdm.values):
            writer.writerow([sid] + [repr(float(v)) for v in row])


def run_rsa(cfg, out_dir):
    rsa_dir = os.path.join(out_dir, "rsa")
    rdm_dir = os.path.join(rsa_dir, "rdms")
    os.makedirs(rdm_dir, exist_ok=True)
    acts = _load_activations(cfg, out_dir, ("re", "an", "ai"))
    names = _report_layer_names(cfg)
    mark = _mark(cfg)
    stats_seed = cfg.stage_seed("stats")

    rows = []
    layer_stats = {}
    r_an_curve, r_ai_curve = [], []
    for li, name in enumerate(names):
        re_acts, an_acts, ai_acts = (acts[k][name] for k in ("re", "an", "ai"))
        for kind, m in (("re", re_acts), ("an", an_acts), ("ai", ai_acts)):
            _write_rdm_csv(os.path.join(rdm_dir, f"{kind}_{name}.csv"),
                           rsa.compute_rdm(m), mark)
        pair = rsa.similarity_pair(re_acts, an_acts, ai_acts)
        perm_an = rsa.permutation_null(re_acts, an_acts, n_perm=cfg.n_perm,
                                       seed=stats_seed * 100 + li * 2)
        perm_ai = rsa.permutation_null(re_acts, ai_acts, n_perm=cfg.n_perm,
                                       seed=stats_seed * 100 + li * 2 + 1)
        boot = rsa.bootstrap_diff(re_acts, an_acts, ai_acts, n_boot=cfg.n_boot,
                                  seed=stats_seed * 100 + 50 + li)
        stats = {
            "r_re_an": pair.r_re_an, "r_re_ai": pair.r_re_ai,
            "p_perm_an": perm_an.p_value, "p_perm_ai": perm_ai.p_value,
            "delta_ai_minus_an": boot.delta,
            "ci68_lo": boot.ci[0.68][0], "ci68_hi": boot.ci[0.68][1],
            "ci95_lo": boot.ci[0.95][0], "ci95_hi": boot.ci[0.95][1],
            "p_delta_le_0": boot.p_value,
            "p_delta_ge_0": float(np.mean(boot.samples >= 0.0)),
            "an_ci95_lo": float(np.percentile(boot.samples_an, 2.5)),
            "an_ci95_hi": float(np.percentile(boot.samples_an, 97.5)),
            "ai_ci95_lo": float(np.percentile(boot.samples_ai, 2.5)),
            "ai_ci95_hi": float(np.percentile(boot.samples_ai, 97.5)),
        }
        layer_stats[name] = stats
        rows.append({"layer": name, **{k: _fmt(v) for k, v in stats.items()}})
        r_an_curve.append(pair.r_re_an)
        r_ai_curve.append(pair.r_re_ai)

    mk_an = rsa.mann_kendall(r_an_curve)
    mk_ai = rsa.mann_kendall(r_ai_curve)
    trends = {"re_an": {"s": mk_an.s, "var_s": mk_an.var_s, "z": mk_an.z,
                        "p_value": mk_an.p_value},
              "re_ai": {"s": mk_ai.s, "var_s": mk_ai.var_s, "z": mk_ai.z,
                        "p_value": mk_ai.p_value}}

    _write_csv(os.path.join(rsa_dir, "similarity.csv"),
               ["layer"] + list(next(iter(layer_stats.values()))), rows, mark)
    _write_csv(os.path.join(rsa_dir, "trends.csv"),
               ["curve", "s", "var_s", "z", "p_value"],
               [{"curve": curve, **{k: _fmt(v) for k, v in t.items()}}
                for curve, t in trends.items()],
               mark)
    _write_json(os.path.join(rsa_dir, "summary.json"), {
        "config_hash": cfg.config_hash(), "version": __version__,
        "metric": "correlation", "n_perm": cfg.n_perm, "n_boot": cfg.n_boot,
        "layers": names, "per_layer": layer_stats, "trends": trends,
    })
    return {"layers": names,
            "r_re_an": [layer_stats[n]["r_re_an"] for n in names],
            "r_re_ai": [layer_stats[n]["r_re_ai"] for n in names],
            "trend_p_re_an": trends["re_an"]["p_value"],
            "trend_p_re_ai": trends["re_ai"]["p_value"]}


def _voxel_specs(cfg, names, widths, seed_base, kind):
    """Planted sparse readouts; same supports/weights per voxel across kinds,
    independent noise stream per (voxel, kind)."""
    specs = []
    for v in range(cfg.sim_n_voxels):
        if cfg.sim_source_layer == "spread":
            source = names[v % len(names)]
        else:
            source = cfg.sim_source_layer
        rng = np.random.default_rng([seed_base, v])
        width = widths[source]
        s = min(cfg.sim_s, width)
        support = sorted(int(i) for i in rng.choice(width, size=s, replace=False))
        weights = (rng.uniform(0.5, 2.0, size=s)
                   * rng.choice((-1.0, 1.0), size=s)).tolist()
        intercept = float(rng.normal(0.0, 0.5))
        noise_seed = seed_base * 1000003 + v * 8 + KIND_SEED_CODES[kind]
        specs.append(encoding.SimulatedVoxelSpec(
            source_layer=source, support=support, weights=weights,
            noise_sd=cfg.sim_noise_sd, seed=noise_seed, intercept=intercept))
    return specs


def run_encode(cfg, out_dir):
    enc_dir = os.path.join(out_dir, "encoding")
    os.makedirs(enc_dir, exist_ok=True)
    acts = _load_activations(cfg, out_dir, ("re", "an", "ai"))
    names = _report_layer_names(cfg)
    widths = {name: acts["re"][name].values.shape[1] for name in names}
    seed_base = cfg.stage_seed("simulate")
    mark = _mark(cfg)
    meta = {"config_hash": cfg.config_hash(), "version": __version__}

    responses = {}
    for kind in ("re", "an", "ai"):
        specs = _voxel_specs(cfg, names, widths, seed_base, kind)
        responses[kind] = encoding.simulate_voxels(acts[kind], specs)
        rsa.write_activation_bin(os.path.join(enc_dir, f"responses_{kind}.adv"),
                                 responses[kind], metadata=meta)
    specs_re = _voxel_specs(cfg, names, widths, seed_base, "re")
    _write_json(os.path.join(enc_dir, "voxels.json"), {
        "config_hash": cfg.config_hash(), "version": __version__,
        "noise_sd": cfg.sim_noise_sd,
        "voxels": [{"vertex": responses["re"].unit_ids[v],
                    "source_layer": spec.source_layer,
                    "support": spec.support, "weights": spec.weights,
                    "intercept": spec.intercept}
                   for v, spec in enumerate(specs_re)]})

    models = encoding.fit_models(acts["re"], responses["re"],
                                 s_max=cfg.encode_s_max)
    encoding.save_models(os.path.join(enc_dir, "models.json"), models,
                         config_hash=cfg.config_hash(), version=__version__)

    score_rows = []
    per_layer_r = {}
    for name in names:
        layer_models = {v: models[name, v] for v in responses["re"].unit_ids}
        for kind in ("re", "an", "ai"):
            report = encoding.predict_and_score(layer_models, acts[kind][name],
                                                responses[kind])
            if kind == "re":
                per_layer_r[name] = report.per_vertex
            for vertex_id, r in report.per_vertex.items():
                score_rows.append({"layer": name, "kind": kind,
                                   "vertex": vertex_id, "r": _fmt(float(r))})
            score_rows.append({"layer": name, "kind": kind, "vertex": "MEAN",
                               "r": _fmt(report.mean_r)})
    _write_csv(os.path.join(enc_dir, "scores.csv"),
               ["layer", "kind", "vertex", "r"], score_rows, mark)

    gen_rows = encoding.generalization_test(
        models, acts, responses, n_perm=cfg.n_perm, n_boot=cfg.n_boot,
        seed=cfg.stage_seed("stats") + 1)
    gen_fields = sorted({k for row in gen_rows for k in row},
                        key=lambda k: (k != "layer", k))
    _write_csv(os.path.join(enc_dir, "generalization.csv"), gen_fields,
               [{k: _fmt(v) for k, v in row.items()} for row in gen_rows], mark)

    proportions = encoding.layer_assignment(per_layer_r, names)
    _write_csv(os.path.join(enc_dir, "assignment.csv"),
               ["layer", "proportion"],
               [{"layer": n, "proportion": _fmt(float(proportions[n]))}
                for n in names],
               mark)

    _write_json(os.path.join(enc_dir, "summary.json"), {
        "config_hash": cfg.config_hash(), "version": __version__,
        "n_voxels": cfg.sim_n_voxels, "noise_sd": cfg.sim_noise_sd,
        "s_max": cfg.encode_s_max,
        "mean_r": {kind: {name: next(float(row["r"]) for row in score_rows
                                     if row["layer"] == name
                                     and row["kind"] == kind
                                     and row["vertex"] == "MEAN")
                          for name in names}
                   for kind in ("re", "an", "ai")},
        "layer_assignment": {n: float(proportions[n]) for n in names},
        "generalization": gen_rows,
    })
    mean_re = [next(float(r["r"]) for r in score_rows
                    if r["layer"] == n and r["kind"] == "re"
                    and r["vertex"] == "MEAN") for n in names]
    return {"n_models": len(models), "mean_r_re_by_layer": mean_re,
            "layer_assignment": {n: float(proportions[n]) for n in names}}


def _sheet_geometry(cfg):
    ids, coords, hemis = [], [], []
    for ix in range(cfg.sl_grid_nx):
        for iy in range(cfg.sl_grid_ny):
            ids.append(f"v{ix:02d}{iy:02d}")
            coords.append((ix * cfg.sl_spacing, iy * cfg.sl_spacing))
            hemis.append("L" if ix < cfg.sl_grid_nx / 2 else "R")
    return rsa.VertexGeometry(ids, np.asarray(coords, dtype=np.float64),
                              hemispheres=hemis)


def _sheet_specs(cfg, names, widths, seed_base, kind):
    """One planted readout per sheet vertex; the source layer sweeps the
    report hierarchy across the x axis, giving the maps a known gradient."""
    specs = []
    n_vertices = cfg.sl_grid_nx * cfg.sl_grid_ny
    v = 0
    for ix in range(cfg.sl_grid_nx):
        band = ix * len(names) // cfg.sl_grid_nx
        source = names[band]
        for iy in range(cfg.sl_grid_ny):
            rng = np.random.default_rng([seed_base, 7000 + v])
            width = widths[source]
            s = min(cfg.sim_s, width)
            support = sorted(int(i) for i in
                             rng.choice(width, size=s, replace=False))
            weights = (rng.uniform(0.5, 2.0, size=s)
                       * rng.choice((-1.0, 1.0), size=s)).tolist()
            noise_seed = (seed_base * 1000003 + (n_vertices + v) * 8
                          + KIND_SEED_CODES[kind])
            specs.append(encoding.SimulatedVoxelSpec(
                source_layer=source, support=support, weights=weights,
                noise_sd=cfg.sim_noise_sd, seed=noise_seed,
                intercept=float(rng.normal(0.0, 0.5))))
            v += 1
    return specs


def run_searchlight(cfg, out_dir):
    sl_dir = os.path.join(out_dir, "searchlight")
    os.makedirs(sl_dir, exist_ok=True)
    acts = _load_activations(cfg, out_dir, ("re", "an", "ai"))
    names = _report_layer_names(cfg)
    widths = {name: acts["re"][name].values.shape[1] for name in names}
    geometry = _sheet_geometry(cfg)
    seed_base = cfg.stage_seed("geometry")
    mark = _mark(cfg)
    meta = {"config_hash": cfg.config_hash(), "version": __version__}

    def simulate(kind, source_acts):
        specs = _sheet_specs(cfg, names, widths, seed_base, kind)
        resp = encoding.simulate_voxels(source_acts, specs, vertex_prefix="v")
        return rsa.ActivationMatrix(resp.stim_ids, geometry.vertex_ids,
                                    resp.values, source=f"sheet/{kind}")

    trial1 = simulate("trial1", acts["re"])
    trial2 = simulate("trial2", acts["re"])
    resp = {kind: simulate(kind, acts[kind]) for kind in ("re", "an", "ai")}

    rsa.write_geometry_csv(os.path.join(sl_dir, "geometry.csv"), geometry,
                           comment=mark)
    for kind in ("trial1", "trial2"):
        matrix = trial1 if kind == "trial1" else trial2
        rsa.write_activation_bin(os.path.join(sl_dir, f"responses_{kind}.adv"),
                                 matrix, metadata=meta)
    for kind in ("re", "an", "ai"):
        rsa.write_activation_bin(os.path.join(sl_dir, f"responses_{kind}.adv"),
                                 resp[kind], metadata=meta)

    selected = rsa.select_vertices(trial1, trial2, geometry,
                                   radius=cfg.sl_radius, top_n=cfg.sl_top_n)
    hemi_of = dict(zip(geometry.vertex_ids, geometry.hemispheres))
    _write_csv(os.path.join(sl_dir, "selected.csv"),
               ["vertex_id", "hemisphere"],
               [{"vertex_id": vid, "hemisphere": hemi_of[vid]}
                for vid in selected],
               mark)

    records = rsa.searchlight(resp["re"], resp["an"], resp["ai"], geometry,
                              radius=cfg.sl_radius)
    _write_csv(os.path.join(sl_dir, "maps.csv"),
               ["vertex_id", "x_mm", "y_mm", "hemisphere", "n_neighbors",
                "r_re_an", "r_re_ai"],
               [{"vertex_id": r["vertex_id"], "x_mm": _fmt(r["x_mm"]),
                 "y_mm": _fmt(r["y_mm"]), "hemisphere": r["hemisphere"],
                 "n_neighbors": r["n_neighbors"],
                 "r_re_an": _fmt(float(r["r_re_an"])),
                 "r_re_ai": _fmt(float(r["r_re_ai"]))}
                for r in records],
               mark)

    # band means: the planted hierarchy should show up as a left-to-right
    # gradient in the similarity maps
    band_stats = {}
    for bi, name in enumerate(names):
        members = [r for ix in range(cfg.sl_grid_nx)
                   if ix * len(names) // cfg.sl_grid_nx == bi
                   for r in records
                   if r["vertex_id"].startswith(f"v{ix:02d}")]
        an_vals = [r["r_re_an"] for r in members if not np.isnan(r["r_re_an"])]
        ai_vals = [r["r_re_ai"] for r in members if not np.isnan(r["r_re_ai"])]
        band_stats[name] = {
            "n_vertices": len(members),
            "mean_r_re_an": float(np.mean(an_vals)) if an_vals else None,
            "mean_r_re_ai": float(np.mean(ai_vals)) if ai_vals else None,
        }
    _write_json(os.path.join(sl_dir, "summary.json"), {
        "config_hash": cfg.config_hash(), "version": __version__,
        "n_vertices": len(geometry), "radius_mm": cfg.sl_radius,
        "n_selected": len(selected), "band_means": band_stats,
    })
    return {"n_vertices": len(geometry), "n_selected": len(selected),
            "band_means": band_stats}


def run_report(cfg, out_dir):
    rep_dir = os.path.join(out_dir, "report")
    os.makedirs(rep_dir, exist_ok=True)
    mark = _mark(cfg)
    with open(os.path.join(out_dir, "rsa", "summary.json"), encoding="utf-8") as fh:
        rsa_summary = json.load(fh)
    with open(os.path.join(out_dir, "encoding", "summary.json"), encoding="utf-8") as fh:
        enc_summary = json.load(fh)
    with open(os.path.join(out_dir, "searchlight", "summary.json"), encoding="utf-8") as fh:
        sl_summary = json.load(fh)
    names = rsa_summary["layers"]
    per_layer = rsa_summary["per_layer"]

    # per-layer similarity: machine-readable table + grouped bar chart
    _write_csv(os.path.join(rep_dir, "similarity_by_layer.csv"),
               ["layer", "r_re_an", "an_ci95_lo", "an_ci95_hi", "p_perm_an",
                "r_re_ai", "ai_ci95_lo", "ai_ci95_hi", "p_perm_ai",
                "delta_ai_minus_an", "ci95_lo", "ci95_hi",
                "p_delta_le_0", "p_delta_ge_0"],
               [{"layer": n,
                 **{k: _fmt(per_layer[n][k]) for k in
                    ("r_re_an", "an_ci95_lo", "an_ci95_hi", "p_perm_an",
                     "r_re_ai", "ai_ci95_lo", "ai_ci95_hi", "p_perm_ai",
                     "delta_ai_minus_an", "ci95_lo", "ci95_hi",
                     "p_delta_le_0", "p_delta_ge_0")}}
                for n in names],
               mark)
    svg = figures.svg_grouped_bars(
        names,
        {"RE-AN": [per_layer[n]["r_re_an"] for n in names],
         "RE-AI": [per_layer[n]["r_re_ai"] for n in names]},
        errors={"RE-AN": [(per_layer[n]["an_ci95_lo"], per_layer[n]["an_ci95_hi"])
                          for n in names],
                "RE-AI": [(per_layer[n]["ai_ci95_lo"], per_layer[n]["ai_ci95_hi"])
                          for n in names]},
        title="Representational similarity by layer",
        ylabel="Spearman R")
    with open(os.path.join(rep_dir, "similarity_by_layer.svg"), "w",
              encoding="utf-8") as fh:
        fh.write(f"<!-- {mark} -->\n")
        fh.write(svg)

    # layer assignment proportions
    assignment = enc_summary["layer_assignment"]
    _write_csv(os.path.join(rep_dir, "layer_assignment.csv"),
               ["layer", "proportion"],
               [{"layer": n, "proportion": _fmt(float(assignment[n]))}
                for n in names],
               mark)
    svg = figures.svg_grouped_bars(
        names, {"proportion": [assignment[n] for n in names]},
        title="Vertices best explained per layer", ylabel="proportion")
    with open(os.path.join(rep_dir, "layer_assignment.svg"), "w",
              encoding="utf-8") as fh:
        fh.write(f"<!-- {mark} -->\n")
        fh.write(svg)

    # generalization table
    gen_rows = enc_summary["generalization"]
    gen_fields = sorted({k for row in gen_rows for k in row},
                        key=lambda k: (k != "layer", k))
    _write_csv(os.path.join(rep_dir, "generalization.csv"), gen_fields,
               [{k: _fmt(v) for k, v in row.items()} for row in gen_rows],
               mark)

    _write_json(os.path.join(rep_dir, "summary.json"), {
        "config_hash": cfg.config_hash(), "version": __version__,
        "similarity": rsa_summary["per_layer"],
        "trends": rsa_summary["trends"],
        "layer_assignment": assignment,
        "generalization": gen_rows,
        "searchlight_band_means": sl_summary["band_means"],
    })
    files = ["similarity_by_layer.csv", "similarity_by_layer.svg",
             "layer_assignment.csv", "layer_assignment.svg",
             "generalization.csv", "summary.json"]
    return {"files": files}


# ----------------------------------------------------------------------
# ingest
# ----------------------------------------------------------------------

def _read_matrix_lenient(path):
    """Read an activation matrix file without the no-NaN guard, so validation
    can point at the offending cells."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
    if magic == rsa.MATRIX_MAGIC:
        with open(path, "rb") as fh:
            data = fh.read()
        (hlen,) = struct.unpack("<I", data[8:12])
        header = json.loads(data[12:12 + hlen].decode("utf-8"))
        shape = tuple(header["shape"])
        values = np.frombuffer(data[12 + hlen:], dtype="<f8").reshape(shape).copy()
        return header["stim_ids"], header["unit_ids"], values
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh)
                if r and not r[0].lstrip().startswith("#")]
    if not rows or rows[0][:1] != ["stim_id"]:
        raise ValueError(f"{path}: expected a 'stim_id'-headed CSV or an "
                         f"ADVMAT01 binary matrix")
    unit_ids = rows[0][1:]
    stim_ids = [r[0] for r in rows[1:]]
    values = np.array([[float(cell) for cell in r[1:]] for r in rows[1:]])
    return stim_ids, unit_ids, values


def run_ingest(cfg, out_dir, files):
    if not files:
        raise ValueError("ingest: no input files given")
    ing_dir = os.path.join(out_dir, "ingested")
    os.makedirs(ing_dir, exist_ok=True)
    manifest = _read_csv(os.path.join(out_dir, "stimuli", "re", "manifest.csv"))
    canonical = [row["id"] for row in manifest]
    meta_base = {"config_hash": cfg.config_hash(), "version": __version__}
    ingested = []
    for path in files:
        stim_ids, unit_ids, values = _read_matrix_lenient(path)
        nan_cells = np.argwhere(np.isnan(values))
        if nan_cells.size:
            coords = ", ".join(
                f"(row {i} '{stim_ids[i]}', column {j} '{unit_ids[j]}')"
                for i, j in nan_cells[:10])
            more = "" if len(nan_cells) <= 10 else f" and {len(nan_cells) - 10} more"
            raise ValueError(f"{path}: {len(nan_cells)} NaN cell(s) rejected "
                             f"at {coords}{more}")
        if sorted(stim_ids) != sorted(canonical):
            missing = sorted(set(canonical) - set(stim_ids))[:10]
            extra = sorted(set(stim_ids) - set(canonical))[:10]
            raise ValueError(
                f"{path}: stimulus ids do not match the stimulus manifest "
                f"(missing: {missing or 'none'}; unexpected: {extra or 'none'})")
        reordered = stim_ids != canonical
        if reordered:
            order = [stim_ids.index(sid) for sid in canonical]
            values = values[order]
        stem = os.path.splitext(os.path.basename(path))[0]
        acts = rsa.ActivationMatrix(list(canonical), list(unit_ids), values,
                                    source=f"ingested/{stem}")
        out_path = os.path.join(ing_dir, f"{stem}.adv")
        rsa.write_activation_bin(out_path, acts, metadata={
            **meta_base, "reordered": str(bool(reordered)).lower(),
            "source_file": os.path.basename(path)})
        ingested.append({"file": os.path.basename(path),
                         "output": f"{stem}.adv",
                         "reordered": bool(reordered),
                         "n_stimuli": len(canonical),
                         "n_units": len(unit_ids)})
    return {"ingested": ingested}


# ----------------------------------------------------------------------
# orchestration
# ----------------------------------------------------------------------

RUNNERS = {
    "gen-data": run_gen_data,
    "train": run_train,
    "select-re": run_select_re,
    "synth": run_synth,
    "activations": run_activations,
    "rsa": run_rsa,
    "encode": run_encode,
    "searchlight": run_searchlight,
    "report": run_report,
}


def run_command(command, cfg, files=None, config_path=None):
    """Validate upstream artifacts, run one stage, and stamp it. Returns the
    stage summary."""
    out_dir = cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    write_resolved(os.path.join(out_dir, "resolved.cfg"), cfg)
    check_upstream(cfg, out_dir, command, config_path=config_path)
    if command == "ingest":
        summary = run_ingest(cfg, out_dir, files or [])
    else:
        summary = RUNNERS[command](cfg, out_dir)
    write_stamp(out_dir, command, cfg, summary)
    return summary
