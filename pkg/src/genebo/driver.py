"""The closed design loop, experiment oracles and the offline ranking protocol."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Protocol

import numpy as np

from . import acquisition as acq
from .errors import NonPositiveRate, NotEnoughDifficultGenes, OracleError
from .genome import (
    CODONS,
    N_FEATURES,
    STANDARD_CODE,
    GeneSequence,
    extract_features,
    feature_matrix,
    synonymous_variants,
    translate,
)
from .surrogate import Dataset, FitConfig, FittedModel, fit

DEFAULT_THRESHOLD = 1.5
DEFAULT_K = 10
Z95 = 1.96


def derive_seed(seed, *keys):
    """A 32-bit seed that depends only on ``seed`` and the integer ``keys``."""
    return int(np.random.default_rng([seed, *keys]).integers(2**31 - 1))


# ----------------------------------------------------------------------------
# oracles
# ----------------------------------------------------------------------------


class ExperimentOracle(Protocol):
    def run(self, seq: GeneSequence) -> tuple[float, float]: ...


def _gc3_direction():
    """+1 for codons ending in G/C, -1 for A/T endings, plus GC-content."""
    u = np.zeros(N_FEATURES)
    for j, c in enumerate(CODONS):
        if len(STANDARD_CODE.synonyms(c)) > 1:
            u[j] = 1.0 if c[2] in "GC" else -1.0
    u[65], u[66] = 2.0, -2.0
    return u


class SyntheticCell:
    """Ground-truth rates with the same linear + squared-exponential shape as the surrogate.

    For each task ``t``::

        g_t(x) = offset_t + a_t <u_t, z> + b_t exp(-0.5 ||(z - c) / ls||^2)

    where ``z = (x - center) / scale``. Observations add Gaussian noise with
    standard deviation ``noise_std[t]`` drawn from a generator seeded once at
    construction, so a fresh cell replays the same noise stream.
    """

    def __init__(self, center, scale, u, a, b, c, lengthscale, offset,
                 noise_std=(0.0, 0.0), seed=0, floor=1e-3):
        self.center = np.asarray(center, dtype=float)
        self.scale = np.asarray(scale, dtype=float)
        self.u = np.asarray(u, dtype=float).reshape(2, -1)
        self.a = np.asarray(a, dtype=float).reshape(2)
        self.b = np.asarray(b, dtype=float).reshape(2)
        self.c = np.asarray(c, dtype=float)
        self.lengthscale = np.broadcast_to(np.asarray(lengthscale, dtype=float), self.c.shape)
        self.offset = np.asarray(offset, dtype=float).reshape(2)
        self.noise_std = np.asarray(noise_std, dtype=float).reshape(2)
        self.seed = seed
        self.floor = floor
        self._rng = np.random.default_rng(seed)
        self.n_calls = 0

    @classmethod
    def from_reference(cls, reference_features, seed=0, noise_std=(0.0, 0.0),
                       offset=(4.5, 4.5), a=(1.0, 0.8), b=(2.0, 2.5)):
        """Build a cell whose rates are driven by GC-rich synonymous codon usage.

        Standardization statistics come from ``reference_features``; the
        linear directions are scaled so that ``<u_t, z>`` has unit standard
        deviation over the reference set, and the bump is centred on the
        reference gene with the largest linear score.
        """
        X = np.asarray(reference_features, dtype=float)
        center = X.mean(axis=0)
        scale = X.std(axis=0)
        scale = np.where(scale > 0, scale, 1.0)
        Z = (X - center) / scale
        rng = np.random.default_rng(derive_seed(seed, 0))
        base = _gc3_direction()
        u = np.empty((2, X.shape[1]))
        for t in range(2):
            d = base + 0.3 * rng.standard_normal(X.shape[1]) * (base != 0)
            proj = Z @ d
            sd = proj.std()
            u[t] = d / (sd if sd > 0 else 1.0)
        g = Z @ u.mean(axis=0)
        top = Z[np.argmax(g)]
        lengthscale = np.sqrt(X.shape[1]) * 1.5
        return cls(center, scale, u, a, b, top, lengthscale, offset,
                   noise_std=noise_std, seed=derive_seed(seed, 1))

    def true_rates(self, x):
        """Noise-free rates for one feature vector or a matrix of them."""
        X = np.atleast_2d(np.asarray(x, dtype=float))
        Z = (X - self.center) / self.scale
        bump = np.exp(-0.5 * np.sum(((Z - self.c) / self.lengthscale) ** 2, axis=1))
        g = self.offset + (Z @ self.u.T) * self.a + bump[:, None] * self.b
        g = np.maximum(g, self.floor)
        return g[0] if np.ndim(x) == 1 else g

    def run(self, seq):
        self.n_calls += 1
        y = self.true_rates(extract_features(seq))
        return tuple(float(v) for v in y + self.noise_std * self._rng.standard_normal(2))


class CubicCell(SyntheticCell):
    """Misspecified ground truth: a random cubic in the GC projection.

    Only meant for robustness checks; the surrogate cannot represent it exactly.
    """

    def __init__(self, base: SyntheticCell, seed=0):
        super().__init__(base.center, base.scale, base.u, base.a, base.b, base.c,
                         base.lengthscale, base.offset, base.noise_std, base.seed, base.floor)
        rng = np.random.default_rng(derive_seed(seed, 2))
        self.coef = rng.normal(0.0, [1.0, 0.3, 0.1], size=(2, 3))

    def true_rates(self, x):
        X = np.atleast_2d(np.asarray(x, dtype=float))
        Z = (X - self.center) / self.scale
        P = Z @ self.u.T
        g = self.offset + sum(self.coef[:, k] * P ** (k + 1) for k in range(3))
        g = np.maximum(g, self.floor)
        return g[0] if np.ndim(x) == 1 else g


class ReplayOracle:
    """Looks up previously measured rates by exact sequence."""

    def __init__(self, table):
        self.table = {k.upper(): (float(a), float(b)) for k, (a, b) in table.items()}

    @classmethod
    def from_data(cls, sequences, data):
        by_id = dict(zip(data.ids, data.rates))
        return cls({s.bases: tuple(by_id[s.id]) for s in sequences if s.id in by_id})

    def run(self, seq):
        try:
            return self.table[seq.bases]
        except KeyError:
            raise KeyError(f"no recorded measurement for sequence {seq.id!r}") from None


# ----------------------------------------------------------------------------
# synthetic gene pools
# ----------------------------------------------------------------------------

_SENSE = tuple(sorted(aa for aa in STANDARD_CODE.amino_to_codons if aa != "*"))


def random_orf(rng, n_codons, gc_bias=0.0, gene_id="orf"):
    """ATG + random sense codons + stop, with codon choice tilted by ``gc_bias``.

    Within each synonym class a codon is drawn with probability proportional
    to ``exp(gc_bias * [third base is G or C])``.
    """
    aas = rng.choice(len(_SENSE), size=n_codons - 2)
    codons = ["ATG"]
    for k in aas:
        cls = STANDARD_CODE.amino_to_codons[_SENSE[k]]
        wts = np.exp(gc_bias * np.array([c[2] in "GC" for c in cls], dtype=float))
        codons.append(cls[rng.choice(len(cls), p=wts / wts.sum())])
    stops = STANDARD_CODE.amino_to_codons["*"]
    codons.append(stops[rng.integers(len(stops))])
    return GeneSequence(gene_id, "".join(codons))


@dataclass
class SyntheticWorld:
    sequences: list
    data: Dataset
    cell: SyntheticCell


def synthetic_world(n_genes, seed=0, noise_std=(0.0, 0.0), length_range=(80, 240),
                    bias_sd=0.0):
    """A pool of random genes measured by a fresh cell.

    Each gene gets a GC codon bias drawn from ``N(0, bias_sd)``. With the
    default of 0 the natural genes use synonymous codons uniformly, the same
    distribution the recoding step samples from.

    The returned cell has already been queried once per gene to produce
    ``data``; its noise stream continues from there.
    """
    rng = np.random.default_rng(derive_seed(seed, 10))
    seqs = [
        random_orf(rng, int(rng.integers(*length_range)), bias_sd * rng.standard_normal(),
                   gene_id=f"gene{i:04d}")
        for i in range(n_genes)
    ]
    X = feature_matrix(seqs)
    cell = SyntheticCell.from_reference(X, seed=derive_seed(seed, 11), noise_std=noise_std)
    Y = np.array([cell.run(s) for s in seqs])
    return SyntheticWorld(seqs, Dataset(X, Y, tuple(s.id for s in seqs)), cell)


@dataclass
class LoopSetup:
    initial: Dataset
    pool: tuple
    seeds: list
    oracle: SyntheticCell
    world: SyntheticWorld


def synthetic_loop_setup(seed=0, n_initial=30, n_pool=200, noise_std=(0.0, 0.0), bias_sd=0.0):
    """Initial data, candidate pool, seed gene and oracle for a synthetic run.

    ``n_initial`` genes drawn at random from the world form the starting
    dataset, the whole world is the proposal pool, and the first initial
    gene is the one being recoded.
    """
    world = synthetic_world(n_pool, seed=seed, noise_std=noise_std, bias_sd=bias_sd)
    rng = np.random.default_rng(derive_seed(seed, 12))
    idx = np.sort(rng.choice(n_pool, size=n_initial, replace=False))
    return LoopSetup(
        initial=world.data.subset(idx),
        pool=(world.data.ids, world.data.features),
        seeds=[world.sequences[idx[0]]],
        oracle=world.cell,
        world=world,
    )


# ----------------------------------------------------------------------------
# difficult genes
# ----------------------------------------------------------------------------


def average_log_rates(data):
    if np.any(data.rates[data.mask] <= 0):
        bad = [data.ids[i] for i in np.flatnonzero(np.any((data.rates <= 0) & data.mask, axis=1))]
        raise NonPositiveRate(f"non-positive rates for {bad[:5]}")
    return np.log(data.rates).mean(axis=1)


def select_difficult(data, threshold=DEFAULT_THRESHOLD, k=DEFAULT_K, seed=0):
    """Sample ``k`` ids uniformly among genes whose mean natural-log rate is below ``threshold``."""
    scores = average_log_rates(data)
    qualifying = np.flatnonzero((scores < threshold) & data.mask.all(axis=1))
    if qualifying.size < k:
        raise NotEnoughDifficultGenes(int(qualifying.size), k)
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(qualifying, size=k, replace=False))
    return [data.ids[i] for i in chosen]


# ----------------------------------------------------------------------------
# the loop
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class LoopConfig:
    iterations: int = 20
    n_variants: int = 1000
    refit_every: int = 1
    seed: int = 0
    xi: float = 0.0
    fit: FitConfig = FitConfig()

    def __post_init__(self):
        if self.iterations < 0 or self.n_variants < 1 or self.refit_every < 1:
            raise ValueError("iterations >= 0, n_variants >= 1 and refit_every >= 1 required")


@dataclass(frozen=True)
class LoopRecord:
    iteration: int
    seed_gene: str
    design_id: str
    acquisition_value: float
    sequence: GeneSequence
    features: np.ndarray = field(compare=False)
    rates: tuple
    averaged_rate: float
    incumbent: float
    score: float
    wall_clock: float = field(default=0.0, compare=False)


@dataclass
class LoopHistory:
    records: list
    data: Dataset
    initial_incumbent: float
    best_id: str
    best_value: float
    best_sequence: GeneSequence = None

    @property
    def incumbents(self):
        return [self.initial_incumbent] + [r.incumbent for r in self.records]

    @property
    def final_incumbent(self):
        return self.incumbents[-1]


def _as_pool(pool):
    if isinstance(pool, tuple) and len(pool) == 2 and isinstance(pool[1], np.ndarray):
        ids, X = pool
        return list(zip(ids, X))
    return list(pool)


def bo_step(model, pool, seed_seq, oracle, config, data, iteration=0):
    """One pass of the design loop body.

    Proposes design rules over ``pool``, recodes ``seed_seq`` into
    ``config.n_variants`` synonymous candidates, keeps the one closest to the
    rules, measures it with ``oracle`` and appends it to ``data``.
    Returns ``(record, augmented_data)``.
    """
    t0 = time.perf_counter()
    best_so_far = acq.incumbent(data)
    rules = acq.propose(model, _as_pool(pool), best_so_far, config.xi)
    weights = acq.evaluation_weights(model)
    variants = synonymous_variants(
        seed_seq, config.n_variants, rng_seed=derive_seed(config.seed, 1, iteration),
        prefix=f"{seed_seq.id}_it{iteration}",
    )
    chosen, score = acq.rank_sequences(variants, rules, weights)[0]
    try:
        y = oracle.run(chosen)
    except Exception as exc:
        raise OracleError(iteration, exc) from exc
    x = extract_features(chosen)
    new_data = data.append(x, y, chosen.id)
    avg = float(np.mean(y))
    record = LoopRecord(
        iteration=iteration, seed_gene=seed_seq.id, design_id=rules.provenance,
        acquisition_value=rules.acquisition_value, sequence=chosen, features=x,
        rates=(float(y[0]), float(y[1])), averaged_rate=avg,
        incumbent=max(best_so_far, avg), score=score,
        wall_clock=time.perf_counter() - t0,
    )
    return record, new_data


def _best_of(data, records):
    avg = data.averaged_rates()
    full = data.mask.all(axis=1)
    i = int(np.argmax(np.where(full, avg, -np.inf)))
    seq = next((r.sequence for r in records if r.sequence.id == data.ids[i]), None)
    return data.ids[i], float(avg[i]), seq


def run_loop(initial, pool, seeds, oracle, config=LoopConfig()):
    """Repeat fit / propose / recode / measure for ``config.iterations`` rounds.

    Seed genes are used round-robin. Between refits the current
    hyperparameters are conditioned on the augmented data.
    """
    data = initial
    pool = _as_pool(pool)
    records = []
    model = None
    for t in range(config.iterations):
        if model is None or t % config.refit_every == 0:
            fit_cfg = replace(config.fit, seed=derive_seed(config.seed, 0, t))
            model = fit(data, fit_cfg)
        else:
            model = FittedModel(model.params, data, model.standardizer)
        seed_seq = seeds[t % len(seeds)]
        record, data = bo_step(model, pool, seed_seq, oracle, config, data, t)
        records.append(record)
    best_id, best_value, best_seq = _best_of(data, records)
    return LoopHistory(records, data, acq.incumbent(initial), best_id, best_value, best_seq)


def random_search(initial, seeds, oracle, iterations, seed=0):
    """Baseline with the same oracle budget: one uniform synonymous recoding per round."""
    data = initial
    records = []
    best_so_far = acq.incumbent(initial)
    for t in range(iterations):
        seed_seq = seeds[t % len(seeds)]
        seq = synonymous_variants(seed_seq, 1, rng_seed=derive_seed(seed, 2, t),
                                  prefix=f"{seed_seq.id}_rs{t}")[0]
        try:
            y = oracle.run(seq)
        except Exception as exc:
            raise OracleError(t, exc) from exc
        x = extract_features(seq)
        data = data.append(x, y, seq.id)
        avg = float(np.mean(y))
        best_so_far = max(best_so_far, avg)
        records.append(LoopRecord(t, seed_seq.id, "", 0.0, seq, x, tuple(map(float, y)),
                                  avg, best_so_far, float("nan")))
    best_id, best_value, best_seq = _best_of(data, records)
    return LoopHistory(records, data, acq.incumbent(initial), best_id, best_value, best_seq)


# ----------------------------------------------------------------------------
# offline protocol
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class ProtocolConfig:
    n_train: int = 1500
    n_variants: int = 1000
    threshold: float = DEFAULT_THRESHOLD
    k: int = DEFAULT_K
    seed: int = 0
    xi: float = 0.0
    fit: FitConfig = FitConfig()


@dataclass(frozen=True)
class ProtocolRow:
    gene_id: str
    original_rates: tuple
    original_average: float
    original_average_log: float
    top_variant_id: str
    top_score: float
    predicted_mean: tuple
    predicted_halfwidth: tuple
    predicted_average: float
    predicted_average_halfwidth: float
    true_recombinant_average: float
    top_sequence: GeneSequence


@dataclass(frozen=True)
class ScatterRow:
    gene_id: str
    split: str
    ei: float
    true_average: float


@dataclass
class ProtocolReport:
    rules: acq.DesignRules
    weights: acq.EvaluationWeights
    model: FittedModel
    incumbent: float
    rows: list
    scatter: list

    def n_improved(self):
        return sum(r.true_recombinant_average > r.original_average for r in self.rows)


def reproduce_protocol(data, sequences, config=ProtocolConfig(), oracle=None):
    """Offline design experiment: split, fit, pick rules by EI, recode difficult genes.

    ``sequences`` must cover every id in ``data``. When ``oracle`` is given,
    the top-ranked recodings are also measured with it.
    """
    by_id = {s.id: s for s in sequences}
    missing = [i for i in data.ids if i not in by_id]
    if missing:
        raise ValueError(f"no sequence for ids {missing[:5]}")

    rng = np.random.default_rng(derive_seed(config.seed, 20))
    n = len(data)
    if config.n_train >= n:
        train_idx = np.arange(n)
    else:
        train_idx = np.sort(rng.choice(n, size=config.n_train, replace=False))
    in_train = np.zeros(n, dtype=bool)
    in_train[train_idx] = True

    model = fit(data.subset(train_idx), replace(config.fit, seed=derive_seed(config.seed, 21)))
    best = acq.incumbent(model.data)
    candidates = list(zip(data.ids, data.features))
    rules = acq.propose(model, candidates, best, config.xi)
    ei = acq.pool_ei(model, data.features, best, config.xi)
    avg = data.averaged_rates()
    scatter = [
        ScatterRow(gid, "train" if in_train[i] else "test", float(ei[i]), float(avg[i]))
        for i, gid in enumerate(data.ids)
    ]

    weights = acq.evaluation_weights(model)
    difficult = select_difficult(data, config.threshold, config.k, derive_seed(config.seed, 22))
    index = {gid: i for i, gid in enumerate(data.ids)}
    logs = average_log_rates(data)
    rows = []
    for j, gid in enumerate(difficult):
        seq = by_id[gid]
        variants = synonymous_variants(seq, config.n_variants,
                                       rng_seed=derive_seed(config.seed, 23, j))
        top, score = acq.rank_sequences(variants, rules, weights)[0]
        assert translate(top) == translate(seq)
        means, covs = model.predict_arrays(extract_features(top)[None, :])
        m_avg, v_avg = acq.averaged_arrays(means, covs)
        true_avg = float(np.mean(oracle.run(top))) if oracle is not None else float("nan")
        i = index[gid]
        rows.append(ProtocolRow(
            gene_id=gid,
            original_rates=tuple(map(float, data.rates[i])),
            original_average=float(avg[i]),
            original_average_log=float(logs[i]),
            top_variant_id=top.id,
            top_score=score,
            predicted_mean=tuple(map(float, means[0])),
            predicted_halfwidth=tuple(Z95 * np.sqrt(np.maximum(np.diag(covs[0]), 0.0))),
            predicted_average=float(m_avg[0]),
            predicted_average_halfwidth=float(Z95 * np.sqrt(max(v_avg[0], 0.0))),
            true_recombinant_average=true_avg,
            top_sequence=top,
        ))
    return ProtocolReport(rules, weights, model, best, rows, scatter)
