import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from toolgrpo.core import (
    AnswerKind,
    Dataset,
    DatasetError,
    DatasetHeader,
    EpisodeRecord,
    Query,
    RunConfig,
    ToolLibrary,
    ToolSelection,
    ToolSpec,
    check_compatible,
    read_dataset,
    validate_dataset,
    write_dataset,
)
from toolgrpo.reward import tool_aware_reward


def q(qid, gold="3.5", kind="numeric", dim=2):
    return Query(qid, "text", np.zeros(dim), gold, AnswerKind(kind))


def test_validate_clean_dataset():
    assert validate_dataset([q("a"), q("b"), q("c", "yes", "categorical")], 2) == []


def test_validate_bad_numeric_gold():
    report = validate_dataset([q("a"), q("bad", gold="abc")], 2)
    assert len(report) == 1
    assert report[0].record == "bad" and report[0].kind == "numeric_gold"


def test_validate_duplicate_ids():
    report = validate_dataset([q("q1"), q("q1")], 2)
    assert [v.kind for v in report] == ["duplicate_id"]


def test_validate_dimension_and_empty_gold():
    report = validate_dataset([q("a", dim=3), q("b", gold="  ", kind="categorical")], 2)
    assert {v.kind for v in report} == {"dimension", "empty_gold"}


def test_numeric_gold_with_percent_is_valid():
    assert validate_dataset([q("a", gold="12.5%"), q("b", gold="1,200")], 2) == []


@given(st.sets(st.integers(0, 11)))
def test_selection_roundtrip(indices):
    sel = ToolSelection.of(indices, 12)
    assert ToolSelection.parse(sel.serialize()) == sel
    assert list(sel.indices) == sorted(indices)
    assert sel.K == len(indices)


def test_selection_rejects_unsorted_and_out_of_range():
    with pytest.raises(ValueError):
        ToolSelection((2, 1))
    with pytest.raises(ValueError):
        ToolSelection((1, 1))
    with pytest.raises(ValueError):
        ToolSelection.of([9], 9)


def test_library_indices_in_order():
    lib = ToolLibrary.from_names([("type1", "A"), ("type2", "B")])
    assert lib.M == 2 and lib[1].name == "B"
    with pytest.raises(ValueError):
        ToolLibrary((ToolSpec(1, "t", "x"),))
    with pytest.raises(ValueError):
        ToolLibrary(())


def test_run_config_defaults():
    cfg = RunConfig()
    assert (cfg.group_size, cfg.batch_size, cfg.learning_rate, cfg.iterations) == (4, 8, 5e-5, 100)
    assert (cfg.clip_epsilon, cfg.kl_beta, cfg.degenerate_std_threshold) == (0.2, 0.04, 1e-8)
    with pytest.raises(ValueError):
        RunConfig(group_size=1)
    assert RunConfig.from_dict(cfg.to_dict()) == cfg


def test_episode_record_output_count_checked():
    with pytest.raises(ValueError):
        EpisodeRecord("q", ToolSelection((1,)), (), "a", "b", 0.0, False, False)


@pytest.mark.parametrize("direct", [False, True])
@pytest.mark.parametrize("augmented", [False, True])
def test_episode_reward_consistent_with_reward_table(direct, augmented):
    rec = EpisodeRecord("q", ToolSelection(), (), "x", "y", tool_aware_reward(direct, augmented), direct, augmented)
    assert rec.reward == tool_aware_reward(rec.correct_direct, rec.correct_augmented)


def test_dataset_file_roundtrip(tmp_path):
    ds = Dataset(DatasetHeader(2, 3), [q("a"), q("b", gold="yes", kind="categorical")])
    write_dataset(tmp_path / "d.jsonl", ds)
    back = read_dataset(tmp_path / "d.jsonl")
    assert back.header == ds.header
    assert [x.to_dict() for x in back] == [x.to_dict() for x in ds]


def test_read_dataset_strict_rejects_violations(tmp_path):
    ds = Dataset(DatasetHeader(2, 3), [q("a", gold="abc")])
    write_dataset(tmp_path / "d.jsonl", ds)
    with pytest.raises(DatasetError):
        read_dataset(tmp_path / "d.jsonl")
    assert len(read_dataset(tmp_path / "d.jsonl", strict=False)) == 1


def test_mixing_headers_is_an_error():
    with pytest.raises(DatasetError):
        check_compatible(DatasetHeader(2, 3), DatasetHeader(4, 3))
    check_compatible(DatasetHeader(2, 3), DatasetHeader(2, 3))
