"""DNA sequences, the standard genetic code and codon-usage features."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyInput, InvalidBase, LengthNotMultipleOfThree

BASES = "ACGT"

#: All 64 codons in lexicographic order over ``ACGT``. This fixes the
#: column layout of every feature vector and must not change between
#: releases (persisted models record ``FEATURE_LAYOUT_VERSION``).
CODONS = tuple("".join(c) for c in itertools.product(BASES, repeat=3))
CODON_INDEX = {c: i for i, c in enumerate(CODONS)}

#: Unit of the gene-length feature, either ``"bases"`` or ``"codons"``.
LENGTH_UNIT = "bases"

GLOBAL_FEATURES = ("length", "gc_content", "at_content", "gc_ratio", "at_ratio")
FEATURE_NAMES = CODONS + GLOBAL_FEATURES
N_FEATURES = len(FEATURE_NAMES)
FEATURE_LAYOUT_VERSION = f"codon64-lex-acgt+5/{LENGTH_UNIT}/v1"

STOP = "*"

# NCBI translation table 1, codons enumerated in TCAG order.
_NCBI_ORDER = "TCAG"
_NCBI_TABLE1 = "FFLLSSSSYY**CC*WLLLLPPPPHHQQRRRRIIIMTTTTNNKKSSRRVVVVAAAADDEEGGGG"


@dataclass(frozen=True)
class GeneSequence:
    """A validated coding sequence.

    ``bases`` is uppercased on construction. Anything outside ``ACGT``
    raises :class:`InvalidBase`; a length that is zero or not divisible
    by three raises :class:`LengthNotMultipleOfThree`.
    """

    id: str
    bases: str

    def __post_init__(self):
        bases = self.bases.upper()
        for pos, ch in enumerate(bases):
            if ch not in BASES:
                raise InvalidBase(self.id, pos, self.bases[pos])
        if len(bases) < 3 or len(bases) % 3:
            raise LengthNotMultipleOfThree(self.id, len(bases))
        object.__setattr__(self, "bases", bases)

    def __len__(self):
        return len(self.bases)


@dataclass(frozen=True)
class CodonTable:
    codon_to_amino: dict
    amino_to_codons: dict = field(init=False)

    def __post_init__(self):
        if sorted(self.codon_to_amino) != sorted(CODONS):
            raise ValueError("a codon table must define all 64 codons")
        classes = {}
        for codon in CODONS:
            classes.setdefault(self.codon_to_amino[codon], []).append(codon)
        object.__setattr__(
            self, "amino_to_codons", {aa: tuple(cs) for aa, cs in classes.items()}
        )

    @classmethod
    def standard(cls):
        """NCBI translation table 1; stop codons map to ``'*'``."""
        codons = ("".join(c) for c in itertools.product(_NCBI_ORDER, repeat=3))
        return cls(dict(zip(codons, _NCBI_TABLE1)))

    def synonyms(self, codon):
        return self.amino_to_codons[self.codon_to_amino[codon]]


STANDARD_CODE = CodonTable.standard()


def parse_fasta(text):
    """Parse FASTA text into a list of :class:`GeneSequence`.

    The record id is the header up to the first whitespace. Sequence lines
    are concatenated and uppercased. Invalid records raise with the record
    id; positions are 0-based offsets into the concatenated sequence.
    """
    records = []
    header = None
    chunks = []

    def flush():
        if header is not None:
            records.append(GeneSequence(header, "".join(chunks)))

    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith(">"):
            flush()
            parts = line[1:].split()
            header = parts[0] if parts else ""
            chunks = []
        elif header is None:
            raise EmptyInput("sequence data before the first '>' header")
        else:
            chunks.append(line)
    flush()
    if not records:
        raise EmptyInput("no records")
    return records


def format_fasta(seqs, width=60):
    out = []
    for s in seqs:
        out.append(f">{s.id}")
        out.extend(s.bases[i:i + width] for i in range(0, len(s.bases), width))
    return "\n".join(out) + "\n"


def to_codons(seq):
    b = seq.bases
    return [b[i:i + 3] for i in range(0, len(b), 3)]


def translate(seq, table=STANDARD_CODE):
    return "".join(table.codon_to_amino[c] for c in to_codons(seq))


def extract_features(seq):
    """Return the 69-dimensional feature vector of ``seq``.

    Layout: 64 codon frequencies (``CODONS`` order), then gene length,
    GC-content, AT-content, G/C ratio and A/T ratio. A ratio whose
    denominator count is zero is reported as 0.
    """
    codons = to_codons(seq)
    x = np.zeros(N_FEATURES)
    for c in codons:
        x[CODON_INDEX[c]] += 1.0
    x[:64] /= len(codons)

    b = seq.bases
    n = len(b)
    na, nc, ng, nt = (b.count(ch) for ch in "ACGT")
    x[64] = n if LENGTH_UNIT == "bases" else len(codons)
    x[65] = (ng + nc) / n
    x[66] = (na + nt) / n
    x[67] = ng / nc if nc else 0.0
    x[68] = na / nt if nt else 0.0
    return x


def feature_matrix(seqs):
    return np.array([extract_features(s) for s in seqs]).reshape(-1, N_FEATURES)


def synonymous_variants(seq, n, table=STANDARD_CODE, rng_seed=0, prefix=None):
    """Draw ``n`` synonymous recodings of ``seq``.

    Every codon is replaced independently by a codon drawn uniformly from
    its synonym class (stop codons included), so each variant encodes the
    same protein. Variant ids are ``{prefix}_v{k}``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(rng_seed)
    codons = to_codons(seq)
    classes = [table.synonyms(c) for c in codons]
    sizes = np.array([len(cl) for cl in classes])
    # one uniform draw per (variant, position), mapped onto the class size
    picks = np.floor(rng.random((n, len(codons))) * sizes).astype(int)
    prefix = seq.id if prefix is None else prefix
    out = []
    for k in range(n):
        bases = "".join(cl[j] for cl, j in zip(classes, picks[k]))
        out.append(GeneSequence(f"{prefix}_v{k}", bases))
    return out
