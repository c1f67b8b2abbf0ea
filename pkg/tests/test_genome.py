import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from genebo.errors import EmptyInput, InvalidBase, LengthNotMultipleOfThree
from genebo.genome import (
    CODON_INDEX,
    CODONS,
    FEATURE_NAMES,
    N_FEATURES,
    STANDARD_CODE,
    GeneSequence,
    extract_features,
    format_fasta,
    parse_fasta,
    synonymous_variants,
    to_codons,
    translate,
)

from oracles import CODON_TO_AA, NCBI_TABLE1

codon = st.sampled_from(CODONS)
orfs = st.lists(codon, min_size=1, max_size=60).map(lambda cs: GeneSequence("s", "".join(cs)))


# -- parsing -------------------------------------------------------------------


def test_parse_single_record():
    assert parse_fasta(">g1\nATGGCC\n") == [GeneSequence("g1", "ATGGCC")]


def test_parse_normalizes_case_and_lines():
    assert parse_fasta(">g1\natg\ngcc\n") == [GeneSequence("g1", "ATGGCC")]


def test_parse_invalid_base_reports_id_and_position():
    with pytest.raises(InvalidBase) as err:
        parse_fasta(">g1\nATGX\n")
    assert err.value.record_id == "g1"
    assert err.value.position == 3
    assert "g1" in str(err.value)


def test_parse_multiple_records_and_header_whitespace():
    recs = parse_fasta(">a desc text\nATG\n\n>b\nTTTGGG\n")
    assert [r.id for r in recs] == ["a", "b"]
    assert recs[1].bases == "TTTGGG"


@pytest.mark.parametrize("text", ["", "\n\n", "   \n"])
def test_parse_empty(text):
    with pytest.raises(EmptyInput, match="no records"):
        parse_fasta(text)


def test_parse_rejects_bad_length_with_record_id():
    with pytest.raises(LengthNotMultipleOfThree) as err:
        parse_fasta(">ok\nATG\n>bad\nATGGCCA\n")
    assert err.value.record_id == "bad"
    assert err.value.length == 7


def test_ambiguity_codes_rejected():
    with pytest.raises(InvalidBase):
        GeneSequence("x", "ATN")


def test_fasta_round_trip():
    seqs = [GeneSequence("a", "ATG" * 50), GeneSequence("b", "TTTGGG")]
    assert parse_fasta(format_fasta(seqs)) == seqs


# -- codons and translation ------------------------------------------------------


@pytest.mark.parametrize("bases,codons", [
    ("ATGGCC", ["ATG", "GCC"]),
    ("ATG", ["ATG"]),
    ("AAATTTGGG", ["AAA", "TTT", "GGG"]),
])
def test_to_codons(bases, codons):
    assert to_codons(GeneSequence("s", bases)) == codons


@given(orfs)
def test_codon_round_trip(seq):
    assert "".join(to_codons(seq)) == seq.bases
    assert len(to_codons(seq)) == len(seq) // 3


@pytest.mark.parametrize("bases,protein", [("ATGGCC", "MA"), ("TGG", "W"), ("TAA", "*")])
def test_translate(bases, protein):
    assert translate(GeneSequence("s", bases)) == protein


def test_codon_table_matches_ncbi_table1():
    assert STANDARD_CODE.codon_to_amino == CODON_TO_AA
    assert len(STANDARD_CODE.codon_to_amino) == 64
    for aa, codons in NCBI_TABLE1.items():
        assert set(STANDARD_CODE.amino_to_codons[aa]) == set(codons.split())


def test_codon_table_classes_partition_codons():
    classes = list(STANDARD_CODE.amino_to_codons.values())
    flat = [c for cl in classes for c in cl]
    assert sorted(flat) == sorted(CODONS) and len(flat) == 64
    for c in CODONS:
        assert c in STANDARD_CODE.amino_to_codons[STANDARD_CODE.codon_to_amino[c]]
    assert len([aa for aa in STANDARD_CODE.amino_to_codons if aa != "*"]) == 20


# -- features --------------------------------------------------------------------


def test_feature_layout():
    assert N_FEATURES == 69
    assert CODONS[:3] == ("AAA", "AAC", "AAG") and CODONS[-1] == "TTT"
    assert FEATURE_NAMES[64:] == ("length", "gc_content", "at_content", "gc_ratio", "at_ratio")


def test_features_atggcc():
    x = extract_features(GeneSequence("s", "ATGGCC"))
    expected = np.zeros(69)
    expected[CODON_INDEX["ATG"]] = 0.5
    expected[CODON_INDEX["GCC"]] = 0.5
    expected[64:] = [6, 4 / 6, 2 / 6, 1.0, 1.0]
    np.testing.assert_array_equal(x, expected)


def test_features_zero_denominator_ratio():
    x = extract_features(GeneSequence("s", "GGGCCC"))
    np.testing.assert_array_equal(x[65:], [1.0, 0.0, 1.0, 0.0])


def test_features_scale_invariant_under_repetition():
    a = extract_features(GeneSequence("s", "ATGGCC"))
    b = extract_features(GeneSequence("s", "ATGGCCATGGCC"))
    np.testing.assert_array_equal(a[:64], b[:64])
    np.testing.assert_array_equal(a[65:], b[65:])
    assert b[64] == 12


@given(orfs)
def test_feature_normalization(seq):
    x = extract_features(seq)
    assert x.shape == (69,)
    assert abs(x[:64].sum() - 1.0) <= 1e-12
    assert np.all((x[:64] >= 0) & (x[:64] <= 1))
    assert x[64] > 0
    assert abs(x[65] + x[66] - 1.0) <= 1e-12


# -- synonymous variants -----------------------------------------------------------


def test_single_codon_classes_give_singleton():
    seq = GeneSequence("s", "ATGTGG")
    assert [v.bases for v in synonymous_variants(seq, 5, rng_seed=3)] == ["ATGTGG"] * 5


def test_uniform_within_alanine_class():
    variants = synonymous_variants(GeneSequence("s", "GCC"), 10000, rng_seed=11)
    counts = np.array([sum(v.bases == c for v in variants) for c in ("GCA", "GCC", "GCG", "GCT")])
    freqs = counts / counts.sum()
    assert np.all(np.abs(freqs - 0.25) <= 0.02)
    assert stats.chisquare(counts).pvalue > 1e-3


def test_stop_codons_recoded_within_stop_class():
    variants = synonymous_variants(GeneSequence("s", "TAA"), 300, rng_seed=0)
    assert {v.bases for v in variants} == {"TAA", "TAG", "TGA"}


@settings(max_examples=50)
@given(orfs, st.integers(1, 20), st.integers(0, 2**31 - 1))
def test_variants_preserve_protein_and_class(seq, n, seed):
    variants = synonymous_variants(seq, n, rng_seed=seed)
    assert len(variants) == n
    protein = translate(seq)
    for v in variants:
        assert len(v) == len(seq)
        assert translate(v) == protein
        for a, b in zip(to_codons(seq), to_codons(v)):
            assert b in STANDARD_CODE.synonyms(a)


def test_variants_deterministic_given_seed():
    seq = GeneSequence("s", "GCCCTGAGCCGT" * 5)
    a = synonymous_variants(seq, 20, rng_seed=5)
    b = synonymous_variants(seq, 20, rng_seed=5)
    c = synonymous_variants(seq, 20, rng_seed=6)
    assert a == b
    assert [v.bases for v in a] != [v.bases for v in c]


def test_variants_reject_nonpositive_n():
    with pytest.raises(ValueError):
        synonymous_variants(GeneSequence("s", "ATG"), 0)
