"""Evaluation metrics: sensitivity RMSE/Pearson, profile reconstruction
RMSE, Silhouette scores of latent and generated spaces, 2-D PCA
projection, per-cluster centroid/STD statistics, and the fidelity
comparison between true and generated per-cluster profile statistics.

Conventions: Silhouette uses Euclidean distance on the full vectors
(PCA is for plotting only); singleton clusters score 0; cluster STDs are
population STDs.  Latent-space metrics use encoder means, never samples.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass

import numpy as np

from . import gmm
from .data import Dataset
from .exceptions import ContractViolation, UndefinedMetricError
from .model import VadeersModel
from .training import Split


def rmse(y_true, y_pred) -> float:
    a = np.asarray(y_true, dtype=np.float64).ravel()
    b = np.asarray(y_pred, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ContractViolation(f"rmse length mismatch: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.mean((a - b) ** 2)))


def pearson(y_true, y_pred) -> float:
    """Pearson correlation; denominator is sqrt(qa*qb) so identical
    inputs give exactly 1.0."""
    a = np.asarray(y_true, dtype=np.float64).ravel()
    b = np.asarray(y_pred, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ContractViolation(f"pearson length mismatch: {a.shape} vs {b.shape}")
    if a.size < 2:
        raise ContractViolation("pearson needs at least 2 points")
    ac = a - a.mean()
    bc = b - b.mean()
    qa = float(ac @ ac)
    qb = float(bc @ bc)
    if qa == 0.0 or qb == 0.0:
        raise UndefinedMetricError("pearson undefined for constant input")
    return float((ac @ bc) / np.sqrt(qa * qb))


def silhouette(points, labels) -> float:
    """Mean over points of (b - a) / max(a, b) with Euclidean distances;
    members of singleton clusters score 0."""
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    if points.ndim != 2 or labels.shape != (points.shape[0],):
        raise ContractViolation(
            f"need (n, d) points and n labels, got {points.shape} and {labels.shape}"
        )
    uniq = np.unique(labels)
    if uniq.size < 2:
        raise ContractViolation("silhouette needs at least 2 distinct labels")
    sq = np.sum(points**2, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (points @ points.T)
    dist = np.sqrt(np.maximum(d2, 0.0))

    masks = {int_or_str(lab): labels == lab for lab in uniq}
    scores = np.zeros(points.shape[0])
    for i in range(points.shape[0]):
        own = masks[int_or_str(labels[i])]
        n_own = own.sum()
        if n_own <= 1:
            scores[i] = 0.0
            continue
        a = (dist[i, own].sum()) / (n_own - 1)  # excludes the zero self-distance
        b = min(dist[i, m].mean() for lab, m in masks.items()
                if lab != int_or_str(labels[i]))
        scores[i] = 0.0 if max(a, b) == 0.0 else (b - a) / max(a, b)
    return float(scores.mean())


def int_or_str(label):
    """Hashable canonical form for a label value."""
    try:
        return int(label)
    except (TypeError, ValueError):
        return str(label)


def pca2(points) -> tuple[np.ndarray, tuple[float, float]]:
    """Project onto the top-2 principal directions of the centered data.

    Sign convention: within each direction the largest-magnitude loading
    is made positive.  Returns (n, 2) scores and the two explained
    variance fractions."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ContractViolation(f"points must be 2-D, got shape {points.shape}")
    n, d = points.shape
    if n < 3:
        raise ContractViolation(f"pca2 needs at least 3 rows, got {n}")
    if d < 2:
        raise ContractViolation(f"pca2 needs at least 2 columns, got {d}")
    centered = points - points.mean(axis=0)
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:2]
    for j in range(2):
        k = int(np.argmax(np.abs(comps[j])))
        if comps[j, k] < 0:
            comps[j] = -comps[j]
    total = float((s**2).sum())
    if total == 0.0:
        fractions = (0.0, 0.0)
    else:
        fractions = (float(s[0] ** 2 / total), float(s[1] ** 2 / total))
    return centered @ comps.T, fractions


@dataclass
class ClusterStats:
    """Per-cluster feature-wise mean (centroid) and population STD; STD is
    None for singleton clusters."""

    centroids: dict[int, np.ndarray]
    stds: dict[int, np.ndarray | None]
    counts: dict[int, int]


def cluster_stats(rows, labels, expected_labels=None) -> ClusterStats:
    rows = np.asarray(rows, dtype=np.float64)
    labels = np.asarray(labels)
    if rows.ndim != 2 or labels.shape != (rows.shape[0],):
        raise ContractViolation(
            f"need (n, d) rows and n labels, got {rows.shape} and {labels.shape}"
        )
    if expected_labels is not None:
        unknown = set(int_or_str(l) for l in labels) - set(
            int_or_str(l) for l in expected_labels)
        if unknown:
            raise ContractViolation(f"unknown labels: {sorted(unknown)}")
    centroids, stds, counts = {}, {}, {}
    for lab in np.unique(labels):
        member = rows[labels == lab]
        key = int_or_str(lab)
        centroids[key] = member.mean(axis=0)
        stds[key] = member.std(axis=0) if member.shape[0] >= 2 else None
        counts[key] = int(member.shape[0])
    return ClusterStats(centroids=centroids, stds=stds, counts=counts)


@dataclass
class FidelityReport:
    centroid_rmse: float
    centroid_pearson: float
    std_rmse: float | None
    std_pearson: float | None
    per_cluster: dict[int, dict[str, float]]
    matching: dict[int, int]        # component -> true label
    unmatched_components: list[int]
    unmatched_labels: list[int]


def _match_components(true_cent: dict, gen_cent: dict) -> dict[int, int]:
    """Component -> label matching minimizing total centroid distance;
    exhaustive over injective assignments (component counts are small)."""
    comps = sorted(gen_cent)
    labs = sorted(true_cent)
    k = min(len(comps), len(labs))
    best, best_cost = None, np.inf
    for chosen in itertools.permutations(labs, k):
        cost = sum(
            float(np.linalg.norm(gen_cent[c] - true_cent[l]))
            for c, l in zip(comps, chosen)
        )
        if cost < best_cost:
            best_cost = cost
            best = dict(zip(comps, chosen))
    return best or {}


def generation_fidelity(true_rows, true_labels, gen_rows, gen_components,
                        matching: dict[int, int] | None = None) -> FidelityReport:
    """Feature-wise RMSE and Pearson between true and generated per-cluster
    centroid and STD vectors, averaged over matched clusters."""
    true_stats = cluster_stats(true_rows, true_labels)
    gen_stats = cluster_stats(gen_rows, gen_components)
    if matching is None:
        matching = _match_components(true_stats.centroids, gen_stats.centroids)

    per_cluster: dict[int, dict[str, float]] = {}
    cent_r, cent_p, std_r, std_p = [], [], [], []
    for comp, lab in matching.items():
        tc, gc = true_stats.centroids[lab], gen_stats.centroids[comp]
        entry = {
            "label": lab,
            "centroid_rmse": rmse(tc, gc),
            "centroid_pearson": pearson(tc, gc),
        }
        cent_r.append(entry["centroid_rmse"])
        cent_p.append(entry["centroid_pearson"])
        ts, gs = true_stats.stds[lab], gen_stats.stds[comp]
        if ts is not None and gs is not None:
            entry["std_rmse"] = rmse(ts, gs)
            entry["std_pearson"] = pearson(ts, gs)
            entry["gen_std_mean"] = float(np.mean(gs))
            entry["true_std_mean"] = float(np.mean(ts))
            std_r.append(entry["std_rmse"])
            std_p.append(entry["std_pearson"])
        per_cluster[comp] = entry

    unmatched_components = sorted(set(gen_stats.centroids) - set(matching))
    unmatched_labels = sorted(set(true_stats.centroids) - set(matching.values()))
    return FidelityReport(
        centroid_rmse=float(np.mean(cent_r)),
        centroid_pearson=float(np.mean(cent_p)),
        std_rmse=float(np.mean(std_r)) if std_r else None,
        std_pearson=float(np.mean(std_p)) if std_p else None,
        per_cluster=per_cluster,
        matching=matching,
        unmatched_components=unmatched_components,
        unmatched_labels=unmatched_labels,
    )


# ---------------------------------------------------------------------------
# full evaluation
# ---------------------------------------------------------------------------

@dataclass
class MetricReport:
    ic50_rmse: float
    ic50_pearson: float
    ip_rmse: float
    silhouette_latent: float | None
    silhouette_generated: float | None
    centroid_rmse: float | None
    centroid_pearson: float | None
    std_rmse: float | None
    std_pearson: float | None
    gen_std_mean: float | None
    per_cluster: dict
    run_seed: int
    n_test_pairs: int

    def __post_init__(self):
        for name in ("ic50_pearson", "silhouette_latent", "silhouette_generated",
                     "centroid_pearson", "std_pearson"):
            v = getattr(self, name)
            if v is not None and not (-1.0 - 1e-12 <= v <= 1.0 + 1e-12):
                raise ContractViolation(f"{name}={v} outside [-1, 1]")
        for name in ("ic50_rmse", "ip_rmse", "centroid_rmse", "std_rmse"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ContractViolation(f"{name}={v} negative")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        d = json.loads(text)
        d["per_cluster"] = {
            int(k) if k.lstrip("-").isdigit() else k: v
            for k, v in d["per_cluster"].items()
        }
        return cls(**d)


def predict_pairs(model: VadeersModel, dataset_std: Dataset,
                  pairs: list[tuple[str, str]]) -> np.ndarray:
    """Eval-mode sensitivity predictions (standardized scale) for a list
    of (drug_id, cell_id) pairs."""
    didx = dataset_std.drug_index()
    cidx = dataset_std.cell_index()
    mu = model.drug_latent_means(dataset_std.embedding_matrix())
    lat = model.cell_latents(dataset_std.feature_matrix())
    dl = mu[[didx[p[0]] for p in pairs]]
    cl = lat[[cidx[p[1]] for p in pairs]]
    return model.predict_sensitivity(dl, cl)


def evaluate(model: VadeersModel, dataset: Dataset, dataset_std: Dataset,
             split: Split, scaler, *, labels: dict[str, int] | None = None,
             n_gen_per_component: int = 300, seed: int = 0,
             pairs: str = "test") -> MetricReport:
    """Compute the full metric battery.

    ``dataset`` holds natural-scale values, ``dataset_std`` the
    standardized copy the model was trained on.  Sensitivity metrics are
    computed on the chosen held-out pair set on the natural scale;
    profile reconstruction RMSE is a training-data metric on the
    standardized scale; the latent Silhouette uses encoder means of the
    labeled drugs; generated metrics sample each mixture component and
    decode (GMM variants only)."""
    pair_list = {"test": split.test_pairs, "val": split.val_pairs,
                 "train": split.train_pairs}[pairs]
    if not pair_list:
        raise ContractViolation(f"no {pairs} pairs to evaluate on")

    preds_std = predict_pairs(model, dataset_std, pair_list)
    preds = scaler.inverse_ic50(preds_std)
    truth = np.array([dataset.sensitivities.value(*p) for p in pair_list])
    ic50_rmse = rmse(truth, preds)
    ic50_pearson = pearson(truth, preds)

    # profile reconstruction on the training data (all profiled drugs)
    profiled_std = dataset_std.profiled_drugs()
    xs = np.stack([d.smiles_embedding for d in profiled_std])
    mu = model.drug_latent_means(xs)
    _, ip_pred = model.decode_drug(mu)
    ip_true = np.stack([d.inhibition_profile for d in profiled_std])
    ip_rmse = rmse(ip_true, ip_pred.data)

    if labels is None:
        labels = {d.id: d.guiding_label for d in dataset.drugs
                  if d.guiding_label is not None}
    sil_latent = None
    if labels and len(set(labels.values())) >= 2:
        ids = [d.id for d in profiled_std if d.id in labels]
        rows = mu[[i for i, d in enumerate(profiled_std) if d.id in labels]]
        sil_latent = silhouette(rows, np.array([labels[i] for i in ids]))

    sil_gen = None
    fidelity = None
    gen_std_mean = None
    per_cluster: dict = {}
    gmm_params = model.gmm_params()
    if gmm_params is not None:
        rng = np.random.Generator(np.random.PCG64(seed))
        gen_rows, gen_comps = [], []
        for k in range(gmm_params.n_components):
            z = gmm.sample_component(k, gmm_params, n_gen_per_component, rng)
            _, ip_gen = model.decode_drug(z)
            gen_rows.append(ip_gen.data)
            gen_comps.append(np.full(n_gen_per_component, k))
        gen_rows = np.concatenate(gen_rows)
        gen_comps = np.concatenate(gen_comps)
        sil_gen = silhouette(gen_rows, gen_comps)

        labeled_ids = sorted(labels)
        true_rows_nat = np.stack([
            dataset.drugs[dataset.drug_index()[i]].inhibition_profile
            for i in labeled_ids
        ])
        true_labs = np.array([labels[i] for i in labeled_ids])
        fidelity = generation_fidelity(
            true_rows_nat, true_labs, scaler.inverse_ip(gen_rows), gen_comps)
        per_cluster = fidelity.per_cluster
        stds = [e["gen_std_mean"] for e in per_cluster.values()
                if "gen_std_mean" in e]
        gen_std_mean = float(np.mean(stds)) if stds else None

    return MetricReport(
        ic50_rmse=ic50_rmse,
        ic50_pearson=ic50_pearson,
        ip_rmse=ip_rmse,
        silhouette_latent=sil_latent,
        silhouette_generated=sil_gen,
        centroid_rmse=fidelity.centroid_rmse if fidelity else None,
        centroid_pearson=fidelity.centroid_pearson if fidelity else None,
        std_rmse=fidelity.std_rmse if fidelity else None,
        std_pearson=fidelity.std_pearson if fidelity else None,
        gen_std_mean=gen_std_mean,
        per_cluster=per_cluster,
        run_seed=seed,
        n_test_pairs=len(pair_list),
    )
